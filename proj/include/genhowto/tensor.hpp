#ifndef GENHOWTO_TENSOR_HPP
#define GENHOWTO_TENSOR_HPP

#include <Eigen/Dense>
#include <cassert>
#include <cstdint>
#include <numeric>
#include <vector>

#include "genhowto/common.hpp"

namespace genhowto {

// Dense row-major tensor, NCHW layout for images/latents.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> sh, T fill = T(0))
        : shape(std::move(sh)), data(static_cast<size_t>(count(shape)), fill) {}

    static int64_t count(const std::vector<int64_t>& sh) {
        int64_t n = 1;
        for (int64_t d : sh) n *= d;
        return n;
    }

    static TensorT zeros(std::vector<int64_t> sh) { return TensorT(std::move(sh), T(0)); }
    static TensorT full(std::vector<int64_t> sh, T v) { return TensorT(std::move(sh), v); }

    static TensorT randn(std::vector<int64_t> sh, Rng& rng, double std_dev = 1.0, double mean = 0.0) {
        TensorT t(std::move(sh));
        for (auto& v : t.data) v = static_cast<T>(mean + std_dev * rng.normal());
        return t;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i < 0 ? i + ndim() : i)]; }

    T* ptr() { return data.data(); }
    const T* ptr() const { return data.data(); }

    T& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const T& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    T& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    T& at(int64_t n, int64_t c, int64_t h, int64_t w) {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const T& at(int64_t n, int64_t c, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(((n * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }

    TensorT reshaped(std::vector<int64_t> sh) const {
        assert(count(sh) == numel());
        TensorT t;
        t.shape = std::move(sh);
        t.data  = data;
        return t;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> t;
        t.shape = shape;
        t.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) t.data[i] = static_cast<U>(data[i]);
        return t;
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Tensor  = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// ----------------------------------------------------------------------------
// GEMM helpers. Parallelism splits output rows into per-thread chunks, so the
// accumulation order of every output element is independent of thread count —
// reruns with the same configuration are bit-identical.
// ----------------------------------------------------------------------------
template <typename T>
void gemm_nn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    ECMap<T> A(a, m, k), B(b, k, n);
    EMap<T> C(c, m, n);
    int nt = threads();
    if (m < 2 * nt || m * k * n < 65536) {
        if (accumulate)
            C.noalias() += A * B;
        else
            C.noalias() = A * B;
        return;
    }
#pragma omp parallel for schedule(static)
    for (int t = 0; t < nt; ++t) {
        int64_t r0 = m * t / nt, r1 = m * (t + 1) / nt;
        if (r1 > r0) {
            if (accumulate)
                C.middleRows(r0, r1 - r0).noalias() += A.middleRows(r0, r1 - r0) * B;
            else
                C.middleRows(r0, r1 - r0).noalias() = A.middleRows(r0, r1 - r0) * B;
        }
    }
}

// C[m,n] = A[k,m]^T * B[k,n]
template <typename T>
void gemm_tn(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    ECMap<T> A(a, k, m), B(b, k, n);
    EMap<T> C(c, m, n);
    int nt = threads();
    if (m < 2 * nt || m * k * n < 65536) {
        if (accumulate)
            C.noalias() += A.transpose() * B;
        else
            C.noalias() = A.transpose() * B;
        return;
    }
#pragma omp parallel for schedule(static)
    for (int t = 0; t < nt; ++t) {
        int64_t r0 = m * t / nt, r1 = m * (t + 1) / nt;
        if (r1 > r0) {
            if (accumulate)
                C.middleRows(r0, r1 - r0).noalias() += A.middleCols(r0, r1 - r0).transpose() * B;
            else
                C.middleRows(r0, r1 - r0).noalias() = A.middleCols(r0, r1 - r0).transpose() * B;
        }
    }
}

// C[m,n] = A[m,k] * B[n,k]^T
template <typename T>
void gemm_nt(T* c, const T* a, const T* b, int64_t m, int64_t k, int64_t n, bool accumulate = false) {
    ECMap<T> A(a, m, k), B(b, n, k);
    EMap<T> C(c, m, n);
    int nt = threads();
    if (m < 2 * nt || m * k * n < 65536) {
        if (accumulate)
            C.noalias() += A * B.transpose();
        else
            C.noalias() = A * B.transpose();
        return;
    }
#pragma omp parallel for schedule(static)
    for (int t = 0; t < nt; ++t) {
        int64_t r0 = m * t / nt, r1 = m * (t + 1) / nt;
        if (r1 > r0) {
            if (accumulate)
                C.middleRows(r0, r1 - r0).noalias() += A.middleRows(r0, r1 - r0) * B.transpose();
            else
                C.middleRows(r0, r1 - r0).noalias() = A.middleRows(r0, r1 - r0) * B.transpose();
        }
    }
}

}  // namespace genhowto

#endif
