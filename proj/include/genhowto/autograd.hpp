#ifndef GENHOWTO_AUTOGRAD_HPP
#define GENHOWTO_AUTOGRAD_HPP

#include <functional>
#include <memory>
#include <unordered_set>

#include "genhowto/tensor.hpp"

namespace genhowto {

// Reverse-mode autodiff at tensor granularity. Ops build a DAG of shared
// nodes; backward() walks it in reverse topological order. Paths whose
// inputs all have needs_grad=false are pruned, which is what makes frozen
// parameter groups free during finetuning.
template <typename T>
struct NodeT {
    TensorT<T> val;
    TensorT<T> grad;
    bool needs_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void()> backprop;
    const char* op = "leaf";

    void ensure_grad() {
        if (grad.shape != val.shape) grad = TensorT<T>::zeros(val.shape);
    }
};

template <typename T>
using VarT = std::shared_ptr<NodeT<T>>;

template <typename T>
VarT<T> make_leaf(TensorT<T> value, bool needs_grad = false) {
    auto n        = std::make_shared<NodeT<T>>();
    n->val        = std::move(value);
    n->needs_grad = needs_grad;
    return n;
}

template <typename T>
VarT<T> make_node(TensorT<T> value, std::vector<VarT<T>> parents, const char* op) {
    auto n     = std::make_shared<NodeT<T>>();
    n->val     = std::move(value);
    n->parents = std::move(parents);
    n->op      = op;
    for (auto& p : n->parents)
        if (p->needs_grad) n->needs_grad = true;
    return n;
}

template <typename T>
void backward(const VarT<T>& loss) {
    assert(loss->val.numel() == 1);
    // iterative post-order DFS
    std::vector<NodeT<T>*> order;
    std::unordered_set<NodeT<T>*> seen;
    std::vector<std::pair<NodeT<T>*, size_t>> stack;
    stack.push_back({loss.get(), 0});
    seen.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            NodeT<T>* p = node->parents[idx++].get();
            if (p->needs_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss->ensure_grad();
    loss->grad.data[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT<T>* n = *it;
        if (n->backprop && n->needs_grad) n->backprop();
    }
}

// --------------------------------------------------------------------------
// elementwise
// --------------------------------------------------------------------------
template <typename T>
VarT<T> add(VarT<T> a, VarT<T> b) {
    assert(a->val.same_shape(b->val));
    TensorT<T> out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->val[i];
    auto n      = make_node(std::move(out), {a, b}, "add");
    auto* np    = n.get();
    n->backprop = [np, a, b]() {
        if (a->needs_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) a->grad[i] += np->grad[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) b->grad[i] += np->grad[i];
        }
    };
    return n;
}

template <typename T>
VarT<T> sub(VarT<T> a, VarT<T> b) {
    assert(a->val.same_shape(b->val));
    TensorT<T> out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->val[i];
    auto n      = make_node(std::move(out), {a, b}, "sub");
    auto* np    = n.get();
    n->backprop = [np, a, b]() {
        if (a->needs_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) a->grad[i] += np->grad[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) b->grad[i] -= np->grad[i];
        }
    };
    return n;
}

template <typename T>
VarT<T> mul(VarT<T> a, VarT<T> b) {
    assert(a->val.same_shape(b->val));
    TensorT<T> out = a->val;
    for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->val[i];
    auto n      = make_node(std::move(out), {a, b}, "mul");
    auto* np    = n.get();
    n->backprop = [np, a, b]() {
        if (a->needs_grad) {
            a->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) a->grad[i] += np->grad[i] * b->val[i];
        }
        if (b->needs_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) b->grad[i] += np->grad[i] * a->val[i];
        }
    };
    return n;
}

template <typename T>
VarT<T> scale(VarT<T> a, double s) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) v = static_cast<T>(v * s);
    auto n      = make_node(std::move(out), {a}, "scale");
    auto* np    = n.get();
    n->backprop = [np, a, s]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) a->grad[i] += static_cast<T>(np->grad[i] * s);
    };
    return n;
}

template <typename T>
VarT<T> add_scalar(VarT<T> a, double s) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) v = static_cast<T>(v + s);
    auto n      = make_node(std::move(out), {a}, "add_scalar");
    auto* np    = n.get();
    n->backprop = [np, a]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) a->grad[i] += np->grad[i];
    };
    return n;
}

template <typename T>
VarT<T> exp_op(VarT<T> a) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) v = std::exp(v);
    auto n      = make_node(std::move(out), {a}, "exp");
    auto* np    = n.get();
    n->backprop = [np, a]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) a->grad[i] += np->grad[i] * np->val[i];
    };
    return n;
}

template <typename T>
VarT<T> silu(VarT<T> a) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) {
        T s = T(1) / (T(1) + std::exp(-v));
        v   = v * s;
    }
    auto n      = make_node(std::move(out), {a}, "silu");
    auto* np    = n.get();
    n->backprop = [np, a]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) {
            T x = a->val[i];
            T s = T(1) / (T(1) + std::exp(-x));
            a->grad[i] += np->grad[i] * s * (T(1) + x * (T(1) - s));
        }
    };
    return n;
}

template <typename T>
VarT<T> sigmoid_op(VarT<T> a) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    auto n      = make_node(std::move(out), {a}, "sigmoid");
    auto* np    = n.get();
    n->backprop = [np, a]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) {
            T y = np->val[i];
            a->grad[i] += np->grad[i] * y * (T(1) - y);
        }
    };
    return n;
}

template <typename T>
VarT<T> tanh_op(VarT<T> a) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) v = std::tanh(v);
    auto n      = make_node(std::move(out), {a}, "tanh");
    auto* np    = n.get();
    n->backprop = [np, a]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) {
            T y = np->val[i];
            a->grad[i] += np->grad[i] * (T(1) - y * y);
        }
    };
    return n;
}

// hard clamp; gradient passes only inside the range
template <typename T>
VarT<T> clamp_op(VarT<T> a, double lo, double hi) {
    TensorT<T> out = a->val;
    for (auto& v : out.data) v = std::min(static_cast<T>(hi), std::max(static_cast<T>(lo), v));
    auto n      = make_node(std::move(out), {a}, "clamp");
    auto* np    = n.get();
    n->backprop = [np, a, lo, hi]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) {
            T x = a->val[i];
            if (x > static_cast<T>(lo) && x < static_cast<T>(hi)) a->grad[i] += np->grad[i];
        }
    };
    return n;
}

// --------------------------------------------------------------------------
// reductions
// --------------------------------------------------------------------------
template <typename T>
VarT<T> mean_all(VarT<T> a) {
    double acc = 0.0;
    for (const auto& v : a->val.data) acc += static_cast<double>(v);
    TensorT<T> out({1});
    out[0]      = static_cast<T>(acc / static_cast<double>(a->val.numel()));
    auto n      = make_node(std::move(out), {a}, "mean_all");
    auto* np    = n.get();
    n->backprop = [np, a]() {
        if (!a->needs_grad) return;
        a->ensure_grad();
        T g = static_cast<T>(static_cast<double>(np->grad[0]) / static_cast<double>(a->val.numel()));
        for (int64_t i = 0; i < a->grad.numel(); ++i) a->grad[i] += g;
    };
    return n;
}

template <typename T>
VarT<T> mse(VarT<T> a, VarT<T> b) {
    return mean_all(mul(sub(a, b), sub(a, b)));
}

// --------------------------------------------------------------------------
// linear algebra
// --------------------------------------------------------------------------

// x[N,K] * W[O,K]^T + b[O] -> [N,O]
template <typename T>
VarT<T> linear(VarT<T> x, VarT<T> w, VarT<T> b) {
    int64_t N = x->val.shape[0], K = x->val.shape[1], O = w->val.shape[0];
    assert(w->val.shape[1] == K);
    TensorT<T> out({N, O});
    gemm_nt(out.ptr(), x->val.ptr(), w->val.ptr(), N, K, O);
    if (b) {
        assert(b->val.numel() == O);
        for (int64_t i = 0; i < N; ++i)
            for (int64_t j = 0; j < O; ++j) out.at(i, j) += b->val[j];
    }
    std::vector<VarT<T>> parents = {x, w};
    if (b) parents.push_back(b);
    auto n      = make_node(std::move(out), std::move(parents), "linear");
    auto* np    = n.get();
    n->backprop = [np, x, w, b, N, K, O]() {
        if (x->needs_grad) {
            x->ensure_grad();
            gemm_nn(x->grad.ptr(), np->grad.ptr(), w->val.ptr(), N, O, K, true);
        }
        if (w->needs_grad) {
            w->ensure_grad();
            gemm_tn(w->grad.ptr(), np->grad.ptr(), x->val.ptr(), O, N, K, true);
        }
        if (b && b->needs_grad) {
            b->ensure_grad();
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < O; ++j) b->grad[j] += np->grad.at(i, j);
        }
    };
    return n;
}

// batched matmul: a[B,M,K] * b[B,K,N] -> [B,M,N]
template <typename T>
VarT<T> bmm(VarT<T> a, VarT<T> b) {
    int64_t B = a->val.shape[0], M = a->val.shape[1], K = a->val.shape[2], N = b->val.shape[2];
    assert(b->val.shape[0] == B && b->val.shape[1] == K);
    TensorT<T> out({B, M, N});
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < B; ++i) {
        ECMap<T> A(a->val.ptr() + i * M * K, M, K), Bm(b->val.ptr() + i * K * N, K, N);
        EMap<T> C(out.ptr() + i * M * N, M, N);
        C.noalias() = A * Bm;
    }
    auto n      = make_node(std::move(out), {a, b}, "bmm");
    auto* np    = n.get();
    n->backprop = [np, a, b, B, M, K, N]() {
        if (a->needs_grad) a->ensure_grad();
        if (b->needs_grad) b->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < B; ++i) {
            ECMap<T> G(np->grad.ptr() + i * M * N, M, N);
            if (a->needs_grad) {
                ECMap<T> Bm(b->val.ptr() + i * K * N, K, N);
                EMap<T> dA(a->grad.ptr() + i * M * K, M, K);
                dA.noalias() += G * Bm.transpose();
            }
            if (b->needs_grad) {
                ECMap<T> A(a->val.ptr() + i * M * K, M, K);
                EMap<T> dB(b->grad.ptr() + i * K * N, K, N);
                dB.noalias() += A.transpose() * G;
            }
        }
    };
    return n;
}

// batched matmul with transposed rhs: a[B,M,K] * b[B,N,K]^T -> [B,M,N]
template <typename T>
VarT<T> bmm_nt(VarT<T> a, VarT<T> b) {
    int64_t B = a->val.shape[0], M = a->val.shape[1], K = a->val.shape[2], N = b->val.shape[1];
    assert(b->val.shape[0] == B && b->val.shape[2] == K);
    TensorT<T> out({B, M, N});
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < B; ++i) {
        ECMap<T> A(a->val.ptr() + i * M * K, M, K), Bm(b->val.ptr() + i * N * K, N, K);
        EMap<T> C(out.ptr() + i * M * N, M, N);
        C.noalias() = A * Bm.transpose();
    }
    auto n      = make_node(std::move(out), {a, b}, "bmm_nt");
    auto* np    = n.get();
    n->backprop = [np, a, b, B, M, K, N]() {
        if (a->needs_grad) a->ensure_grad();
        if (b->needs_grad) b->ensure_grad();
#pragma omp parallel for schedule(static)
        for (int64_t i = 0; i < B; ++i) {
            ECMap<T> G(np->grad.ptr() + i * M * N, M, N);
            if (a->needs_grad) {
                ECMap<T> Bm(b->val.ptr() + i * N * K, N, K);
                EMap<T> dA(a->grad.ptr() + i * M * K, M, K);
                dA.noalias() += G * Bm;
            }
            if (b->needs_grad) {
                ECMap<T> A(a->val.ptr() + i * M * K, M, K);
                EMap<T> dB(b->grad.ptr() + i * N * K, N, K);
                dB.noalias() += G.transpose() * A;
            }
        }
    };
    return n;
}

// --------------------------------------------------------------------------
// convolution (im2col + GEMM)
// --------------------------------------------------------------------------
template <typename T>
void im2col(const TensorT<T>& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, TensorT<T>& cols) {
    int64_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
    int64_t ckk = C * kh * kw;
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                T* row = cols.ptr() + (((n * Ho + oh) * Wo) + ow) * ckk;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < kh; ++i) {
                        int64_t ih = oh * stride - pad + i;
                        for (int64_t j = 0; j < kw; ++j) {
                            int64_t iw = ow * stride - pad + j;
                            row[(c * kh + i) * kw + j] =
                                (ih >= 0 && ih < H && iw >= 0 && iw < W) ? x.at(n, c, ih, iw) : T(0);
                        }
                    }
            }
    }
}

template <typename T>
void col2im(const TensorT<T>& cols, int64_t kh, int64_t kw, int64_t stride, int64_t pad,
            int64_t Ho, int64_t Wo, TensorT<T>& dx) {
    int64_t N = dx.shape[0], C = dx.shape[1], H = dx.shape[2], W = dx.shape[3];
    int64_t ckk = C * kh * kw;
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                const T* row = cols.ptr() + (((n * Ho + oh) * Wo) + ow) * ckk;
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t i = 0; i < kh; ++i) {
                        int64_t ih = oh * stride - pad + i;
                        if (ih < 0 || ih >= H) continue;
                        for (int64_t j = 0; j < kw; ++j) {
                            int64_t iw = ow * stride - pad + j;
                            if (iw < 0 || iw >= W) continue;
                            dx.at(n, c, ih, iw) += row[(c * kh + i) * kw + j];
                        }
                    }
            }
    }
}

// x[N,C,H,W], w[O,C,kh,kw], b[O] -> [N,O,Ho,Wo]
template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, VarT<T> b, int64_t stride = 1, int64_t pad = -1) {
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    int64_t O = w->val.shape[0], kh = w->val.shape[2], kw = w->val.shape[3];
    assert(w->val.shape[1] == C);
    if (pad < 0) pad = kh / 2;
    int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    int64_t rows = N * Ho * Wo, ckk = C * kh * kw;

    auto cols = std::make_shared<TensorT<T>>(std::vector<int64_t>{rows, ckk});
    im2col(x->val, kh, kw, stride, pad, Ho, Wo, *cols);

    TensorT<T> y2d({rows, O});
    gemm_nt(y2d.ptr(), cols->ptr(), w->val.ptr(), rows, ckk, O);

    // reorder [N*Ho*Wo, O] -> [N, O, Ho, Wo], fusing the bias
    TensorT<T> out({N, O, Ho, Wo});
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t oh = 0; oh < Ho; ++oh)
            for (int64_t ow = 0; ow < Wo; ++ow) {
                const T* row = y2d.ptr() + ((n * Ho + oh) * Wo + ow) * O;
                for (int64_t o = 0; o < O; ++o)
                    out.at(n, o, oh, ow) = row[o] + (b ? b->val[o] : T(0));
            }

    std::vector<VarT<T>> parents = {x, w};
    if (b) parents.push_back(b);
    auto n_     = make_node(std::move(out), std::move(parents), "conv2d");
    auto* np    = n_.get();
    n_->backprop = [np, x, w, b, cols, N, C, H, W, O, kh, kw, stride, pad, Ho, Wo, rows, ckk]() {
        // regroup grad to [rows, O]
        TensorT<T> g2d({rows, O});
#pragma omp parallel for schedule(static)
        for (int64_t n = 0; n < N; ++n)
            for (int64_t oh = 0; oh < Ho; ++oh)
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    T* row = g2d.ptr() + ((n * Ho + oh) * Wo + ow) * O;
                    for (int64_t o = 0; o < O; ++o) row[o] = np->grad.at(n, o, oh, ow);
                }
        if (w->needs_grad) {
            w->ensure_grad();
            gemm_tn(w->grad.ptr(), g2d.ptr(), cols->ptr(), O, rows, ckk, true);
        }
        if (b && b->needs_grad) {
            b->ensure_grad();
            for (int64_t r = 0; r < rows; ++r)
                for (int64_t o = 0; o < O; ++o) b->grad[o] += g2d.at(r, o);
        }
        if (x->needs_grad) {
            x->ensure_grad();
            TensorT<T> dcols({rows, ckk});
            gemm_nn(dcols.ptr(), g2d.ptr(), w->val.ptr(), rows, O, ckk);
            col2im(dcols, kh, kw, stride, pad, Ho, Wo, x->grad);
        }
    };
    return n_;
}

template <typename T>
VarT<T> upsample_nearest2x(VarT<T> x) {
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    TensorT<T> out({N, C, H * 2, W * 2});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t h = 0; h < 2 * H; ++h)
                for (int64_t w = 0; w < 2 * W; ++w) out.at(n, c, h, w) = x->val.at(n, c, h / 2, w / 2);
    auto n_     = make_node(std::move(out), {x}, "upsample2x");
    auto* np    = n_.get();
    n_->backprop = [np, x, N, C, H, W]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t h = 0; h < 2 * H; ++h)
                    for (int64_t w = 0; w < 2 * W; ++w)
                        x->grad.at(n, c, h / 2, w / 2) += np->grad.at(n, c, h, w);
    };
    return n_;
}

// --------------------------------------------------------------------------
// normalization
// --------------------------------------------------------------------------

// GroupNorm over [N,C,H,W]; gamma/beta have C entries. Statistics computed
// per (sample, group) in double for stable, order-independent results.
template <typename T>
VarT<T> group_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, int64_t groups, double eps = 1e-5) {
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    assert(C % groups == 0);
    int64_t cg = C / groups, gsize = cg * H * W;
    TensorT<T> out(x->val.shape);
    auto mean = std::make_shared<std::vector<double>>(N * groups);
    auto rstd = std::make_shared<std::vector<double>>(N * groups);
#pragma omp parallel for schedule(static)
    for (int64_t n = 0; n < N; ++n)
        for (int64_t g = 0; g < groups; ++g) {
            double m = 0, v = 0;
            for (int64_t c = g * cg; c < (g + 1) * cg; ++c)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) m += x->val.at(n, c, h, w);
            m /= gsize;
            for (int64_t c = g * cg; c < (g + 1) * cg; ++c)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w) {
                        double d = x->val.at(n, c, h, w) - m;
                        v += d * d;
                    }
            v /= gsize;
            double rs              = 1.0 / std::sqrt(v + eps);
            (*mean)[n * groups + g] = m;
            (*rstd)[n * groups + g] = rs;
            for (int64_t c = g * cg; c < (g + 1) * cg; ++c)
                for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w)
                        out.at(n, c, h, w) = static_cast<T>(
                            (x->val.at(n, c, h, w) - m) * rs * gamma->val[c] + beta->val[c]);
        }
    auto n_     = make_node(std::move(out), {x, gamma, beta}, "group_norm");
    auto* np    = n_.get();
    n_->backprop = [np, x, gamma, beta, mean, rstd, N, C, H, W, groups, cg, gsize]() {
        if (gamma->needs_grad) gamma->ensure_grad();
        if (beta->needs_grad) beta->ensure_grad();
        if (x->needs_grad) x->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t g = 0; g < groups; ++g) {
                double m = (*mean)[n * groups + g], rs = (*rstd)[n * groups + g];
                // accumulate the two inner products needed for dx
                double sum_dy_xhat = 0, sum_dy = 0;
                for (int64_t c = g * cg; c < (g + 1) * cg; ++c)
                    for (int64_t h = 0; h < H; ++h)
                        for (int64_t w = 0; w < W; ++w) {
                            double xhat = (x->val.at(n, c, h, w) - m) * rs;
                            double dy   = np->grad.at(n, c, h, w);
                            double dxh  = dy * gamma->val[c];
                            sum_dy_xhat += dxh * xhat;
                            sum_dy += dxh;
                            if (gamma->needs_grad) gamma->grad[c] += static_cast<T>(dy * xhat);
                            if (beta->needs_grad) beta->grad[c] += static_cast<T>(dy);
                        }
                if (x->needs_grad)
                    for (int64_t c = g * cg; c < (g + 1) * cg; ++c)
                        for (int64_t h = 0; h < H; ++h)
                            for (int64_t w = 0; w < W; ++w) {
                                double xhat = (x->val.at(n, c, h, w) - m) * rs;
                                double dxh  = static_cast<double>(np->grad.at(n, c, h, w)) * gamma->val[c];
                                x->grad.at(n, c, h, w) += static_cast<T>(
                                    rs * (dxh - (sum_dy + xhat * sum_dy_xhat) / gsize));
                            }
            }
    };
    return n_;
}

// LayerNorm over the last dimension of [N,L,D]
template <typename T>
VarT<T> layer_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, double eps = 1e-5) {
    int64_t D    = x->val.shape.back();
    int64_t rows = x->val.numel() / D;
    TensorT<T> out(x->val.shape);
    auto mean = std::make_shared<std::vector<double>>(rows);
    auto rstd = std::make_shared<std::vector<double>>(rows);
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x->val.ptr() + r * D;
        double m = 0, v = 0;
        for (int64_t d = 0; d < D; ++d) m += px[d];
        m /= D;
        for (int64_t d = 0; d < D; ++d) v += (px[d] - m) * (px[d] - m);
        v /= D;
        double rs  = 1.0 / std::sqrt(v + eps);
        (*mean)[r] = m;
        (*rstd)[r] = rs;
        T* po      = out.ptr() + r * D;
        for (int64_t d = 0; d < D; ++d)
            po[d] = static_cast<T>((px[d] - m) * rs * gamma->val[d] + beta->val[d]);
    }
    auto n_     = make_node(std::move(out), {x, gamma, beta}, "layer_norm");
    auto* np    = n_.get();
    n_->backprop = [np, x, gamma, beta, mean, rstd, rows, D]() {
        if (gamma->needs_grad) gamma->ensure_grad();
        if (beta->needs_grad) beta->ensure_grad();
        if (x->needs_grad) x->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* px = x->val.ptr() + r * D;
            const T* pg = np->grad.ptr() + r * D;
            double m = (*mean)[r], rs = (*rstd)[r];
            double sum_dy_xhat = 0, sum_dy = 0;
            for (int64_t d = 0; d < D; ++d) {
                double xhat = (px[d] - m) * rs;
                double dxh  = static_cast<double>(pg[d]) * gamma->val[d];
                sum_dy_xhat += dxh * xhat;
                sum_dy += dxh;
                if (gamma->needs_grad) gamma->grad[d] += static_cast<T>(pg[d] * xhat);
                if (beta->needs_grad) beta->grad[d] += pg[d];
            }
            if (x->needs_grad) {
                T* pdx = x->grad.ptr() + r * D;
                for (int64_t d = 0; d < D; ++d) {
                    double xhat = (px[d] - m) * rs;
                    double dxh  = static_cast<double>(pg[d]) * gamma->val[d];
                    pdx[d] += static_cast<T>(rs * (dxh - (sum_dy + xhat * sum_dy_xhat) / D));
                }
            }
        }
    };
    return n_;
}

// --------------------------------------------------------------------------
// softmax over last dim
// --------------------------------------------------------------------------
template <typename T>
VarT<T> softmax_last(VarT<T> x) {
    int64_t D    = x->val.shape.back();
    int64_t rows = x->val.numel() / D;
    TensorT<T> out(x->val.shape);
    for (int64_t r = 0; r < rows; ++r) {
        const T* px = x->val.ptr() + r * D;
        T* po       = out.ptr() + r * D;
        T mx        = px[0];
        for (int64_t d = 1; d < D; ++d) mx = std::max(mx, px[d]);
        double sum = 0;
        for (int64_t d = 0; d < D; ++d) {
            double e = std::exp(static_cast<double>(px[d] - mx));
            po[d]    = static_cast<T>(e);
            sum += e;
        }
        for (int64_t d = 0; d < D; ++d) po[d] = static_cast<T>(po[d] / sum);
    }
    auto n_     = make_node(std::move(out), {x}, "softmax");
    auto* np    = n_.get();
    n_->backprop = [np, x, rows, D]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const T* py = np->val.ptr() + r * D;
            const T* pg = np->grad.ptr() + r * D;
            double dot  = 0;
            for (int64_t d = 0; d < D; ++d) dot += static_cast<double>(py[d]) * pg[d];
            T* pdx = x->grad.ptr() + r * D;
            for (int64_t d = 0; d < D; ++d)
                pdx[d] += static_cast<T>(py[d] * (pg[d] - dot));
        }
    };
    return n_;
}

// --------------------------------------------------------------------------
// shape plumbing
// --------------------------------------------------------------------------
template <typename T>
VarT<T> reshape(VarT<T> x, std::vector<int64_t> sh) {
    assert(TensorT<T>::count(sh) == x->val.numel());
    TensorT<T> out = x->val;
    out.shape      = sh;
    auto n_        = make_node(std::move(out), {x}, "reshape");
    auto* np       = n_.get();
    n_->backprop   = [np, x]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t i = 0; i < np->grad.numel(); ++i) x->grad[i] += np->grad[i];
    };
    return n_;
}

// [A,B,C,D] -> [A,C,B,D]
template <typename T>
VarT<T> permute_0213(VarT<T> x) {
    int64_t A = x->val.shape[0], B = x->val.shape[1], C = x->val.shape[2], D = x->val.shape[3];
    TensorT<T> out({A, C, B, D});
    for (int64_t a = 0; a < A; ++a)
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t d = 0; d < D; ++d)
                    out.data[(((a * C + c) * B + b) * D + d)] = x->val.data[(((a * B + b) * C + c) * D + d)];
    auto n_     = make_node(std::move(out), {x}, "permute_0213");
    auto* np    = n_.get();
    n_->backprop = [np, x, A, B, C, D]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t a = 0; a < A; ++a)
            for (int64_t b = 0; b < B; ++b)
                for (int64_t c = 0; c < C; ++c)
                    for (int64_t d = 0; d < D; ++d)
                        x->grad.data[(((a * B + b) * C + c) * D + d)] += np->grad.data[(((a * C + c) * B + b) * D + d)];
    };
    return n_;
}

// [N,C,H,W] -> [N,H*W,C]
template <typename T>
VarT<T> nchw_to_nlc(VarT<T> x) {
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    TensorT<T> out({N, H * W, C});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t l = 0; l < H * W; ++l)
                out.data[(n * H * W + l) * C + c] = x->val.data[(n * C + c) * H * W + l];
    auto n_     = make_node(std::move(out), {x}, "nchw_to_nlc");
    auto* np    = n_.get();
    n_->backprop = [np, x, N, C, H, W]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t l = 0; l < H * W; ++l)
                    x->grad.data[(n * C + c) * H * W + l] += np->grad.data[(n * H * W + l) * C + c];
    };
    return n_;
}

// [N,L,C] -> [N,C,H,W] with L == H*W
template <typename T>
VarT<T> nlc_to_nchw(VarT<T> x, int64_t H, int64_t W) {
    int64_t N = x->val.shape[0], L = x->val.shape[1], C = x->val.shape[2];
    assert(L == H * W);
    TensorT<T> out({N, C, H, W});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t l = 0; l < L; ++l)
                out.data[(n * C + c) * L + l] = x->val.data[(n * L + l) * C + c];
    auto n_     = make_node(std::move(out), {x}, "nlc_to_nchw");
    auto* np    = n_.get();
    n_->backprop = [np, x, N, C, L]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c)
                for (int64_t l = 0; l < L; ++l)
                    x->grad.data[(n * L + l) * C + c] += np->grad.data[(n * C + c) * L + l];
    };
    return n_;
}

// channel concat on dim 1 of [N,C,H,W]
template <typename T>
VarT<T> concat_ch(VarT<T> a, VarT<T> b) {
    int64_t N = a->val.shape[0], Ca = a->val.shape[1], Cb = b->val.shape[1];
    int64_t H = a->val.shape[2], W = a->val.shape[3];
    assert(b->val.shape[0] == N && b->val.shape[2] == H && b->val.shape[3] == W);
    TensorT<T> out({N, Ca + Cb, H, W});
    for (int64_t n = 0; n < N; ++n) {
        std::copy(a->val.ptr() + n * Ca * H * W, a->val.ptr() + (n + 1) * Ca * H * W,
                  out.ptr() + n * (Ca + Cb) * H * W);
        std::copy(b->val.ptr() + n * Cb * H * W, b->val.ptr() + (n + 1) * Cb * H * W,
                  out.ptr() + n * (Ca + Cb) * H * W + Ca * H * W);
    }
    auto n_     = make_node(std::move(out), {a, b}, "concat_ch");
    auto* np    = n_.get();
    n_->backprop = [np, a, b, N, Ca, Cb, H, W]() {
        for (int64_t n = 0; n < N; ++n) {
            if (a->needs_grad) {
                a->ensure_grad();
                const T* g = np->grad.ptr() + n * (Ca + Cb) * H * W;
                T* d       = a->grad.ptr() + n * Ca * H * W;
                for (int64_t i = 0; i < Ca * H * W; ++i) d[i] += g[i];
            }
            if (b->needs_grad) {
                b->ensure_grad();
                const T* g = np->grad.ptr() + n * (Ca + Cb) * H * W + Ca * H * W;
                T* d       = b->grad.ptr() + n * Cb * H * W;
                for (int64_t i = 0; i < Cb * H * W; ++i) d[i] += g[i];
            }
        }
    };
    return n_;
}

template <typename T>
VarT<T> slice_ch(VarT<T> x, int64_t c0, int64_t c1) {
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    assert(0 <= c0 && c0 < c1 && c1 <= C);
    TensorT<T> out({N, c1 - c0, H, W});
    for (int64_t n = 0; n < N; ++n)
        std::copy(x->val.ptr() + (n * C + c0) * H * W, x->val.ptr() + (n * C + c1) * H * W,
                  out.ptr() + n * (c1 - c0) * H * W);
    auto n_     = make_node(std::move(out), {x}, "slice_ch");
    auto* np    = n_.get();
    n_->backprop = [np, x, N, C, H, W, c0, c1]() {
        if (!x->needs_grad) return;
        x->ensure_grad();
        for (int64_t n = 0; n < N; ++n) {
            const T* g = np->grad.ptr() + n * (c1 - c0) * H * W;
            T* d       = x->grad.ptr() + (n * C + c0) * H * W;
            for (int64_t i = 0; i < (c1 - c0) * H * W; ++i) d[i] += g[i];
        }
    };
    return n_;
}

// table[V,D] gathered by ids -> [N,L,D]
template <typename T>
VarT<T> embed(VarT<T> table, const std::vector<std::vector<int>>& ids) {
    int64_t N = static_cast<int64_t>(ids.size());
    int64_t L = static_cast<int64_t>(ids[0].size());
    int64_t D = table->val.shape[1];
    TensorT<T> out({N, L, D});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t l = 0; l < L; ++l)
            std::copy(table->val.ptr() + ids[n][l] * D, table->val.ptr() + (ids[n][l] + 1) * D,
                      out.ptr() + (n * L + l) * D);
    auto ids_copy = std::make_shared<std::vector<std::vector<int>>>(ids);
    auto n_       = make_node(std::move(out), {table}, "embed");
    auto* np      = n_.get();
    n_->backprop  = [np, table, ids_copy, N, L, D]() {
        if (!table->needs_grad) return;
        table->ensure_grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t l = 0; l < L; ++l) {
                const T* g = np->grad.ptr() + (n * L + l) * D;
                T* d       = table->grad.ptr() + (*ids_copy)[n][l] * D;
                for (int64_t i = 0; i < D; ++i) d[i] += g[i];
            }
    };
    return n_;
}

// x[N,C,H,W] + v[N,C] broadcast over spatial dims
template <typename T>
VarT<T> add_bias_nc(VarT<T> x, VarT<T> v) {
    int64_t N = x->val.shape[0], C = x->val.shape[1], H = x->val.shape[2], W = x->val.shape[3];
    assert(v->val.shape[0] == N && v->val.shape[1] == C);
    TensorT<T> out = x->val;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
            T b = v->val.at(n, c);
            T* p = out.ptr() + (n * C + c) * H * W;
            for (int64_t i = 0; i < H * W; ++i) p[i] += b;
        }
    auto n_     = make_node(std::move(out), {x, v}, "add_bias_nc");
    auto* np    = n_.get();
    n_->backprop = [np, x, v, N, C, H, W]() {
        if (x->needs_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) x->grad[i] += np->grad[i];
        }
        if (v->needs_grad) {
            v->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) {
                    const T* g = np->grad.ptr() + (n * C + c) * H * W;
                    double s   = 0;
                    for (int64_t i = 0; i < H * W; ++i) s += g[i];
                    v->grad.at(n, c) += static_cast<T>(s);
                }
        }
    };
    return n_;
}

// x[N,L,D] + p[L,D] broadcast over batch
template <typename T>
VarT<T> add_pos_ld(VarT<T> x, VarT<T> p) {
    int64_t N = x->val.shape[0], L = x->val.shape[1], D = x->val.shape[2];
    assert(p->val.shape[0] == L && p->val.shape[1] == D);
    TensorT<T> out = x->val;
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < L * D; ++i) out.data[n * L * D + i] += p->val.data[i];
    auto n_     = make_node(std::move(out), {x, p}, "add_pos_ld");
    auto* np    = n_.get();
    n_->backprop = [np, x, p, N, L, D]() {
        if (x->needs_grad) {
            x->ensure_grad();
            for (int64_t i = 0; i < np->grad.numel(); ++i) x->grad[i] += np->grad[i];
        }
        if (p->needs_grad) {
            p->ensure_grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t i = 0; i < L * D; ++i) p->grad.data[i] += np->grad.data[n * L * D + i];
        }
    };
    return n_;
}

}  // namespace genhowto

#endif
