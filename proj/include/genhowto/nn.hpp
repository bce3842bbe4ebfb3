#ifndef GENHOWTO_NN_HPP
#define GENHOWTO_NN_HPP

#include <map>
#include <string>
#include <unordered_map>

#include "genhowto/autograd.hpp"

namespace genhowto {

template <typename T>
struct ParamT {
    std::string name;
    std::string group;  // freeze/serialize unit: ae, time, prompt, enc, dec, ctrl, zero
    TensorT<T> value;
    TensorT<T> grad;
    TensorT<T> m, v;  // Adam moments
    bool trainable = true;
};

// Insertion-ordered parameter registry. Iteration order is construction
// order, which keeps Adam updates, serialization, and group fingerprints
// deterministic.
template <typename T>
struct ParamStoreT {
    std::vector<ParamT<T>> items;
    std::unordered_map<std::string, size_t> index;

    ParamT<T>& add(const std::string& name, const std::string& group, TensorT<T> value) {
        assert(!index.count(name));
        ParamT<T> p;
        p.name  = name;
        p.group = group;
        p.grad  = TensorT<T>::zeros(value.shape);
        p.m     = TensorT<T>::zeros(value.shape);
        p.v     = TensorT<T>::zeros(value.shape);
        p.value = std::move(value);
        index[name] = items.size();
        items.push_back(std::move(p));
        return items.back();
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    ParamT<T>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
        return items[it->second];
    }
    const ParamT<T>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw std::runtime_error("unknown parameter: " + name);
        return items[it->second];
    }

    void zero_grads() {
        for (auto& p : items) std::fill(p.grad.data.begin(), p.grad.data.end(), T(0));
    }

    void set_group_trainable(const std::string& group, bool trainable) {
        for (auto& p : items)
            if (p.group == group) p.trainable = trainable;
    }

    std::map<std::string, bool> trainable_mask() const {
        std::map<std::string, bool> m;
        for (const auto& p : items) {
            auto it = m.find(p.group);
            if (it == m.end())
                m[p.group] = p.trainable;
            else
                assert(it->second == p.trainable);
        }
        return m;
    }

    int64_t count_params(const std::string& group = "") const {
        int64_t n = 0;
        for (const auto& p : items)
            if (group.empty() || p.group == group) n += p.value.numel();
        return n;
    }

    int64_t count_trainable() const {
        int64_t n = 0;
        for (const auto& p : items)
            if (p.trainable) n += p.value.numel();
        return n;
    }

    uint64_t group_fingerprint(const std::string& group) const {
        uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& p : items)
            if (p.group == group) {
                h = fnv1a64(p.name.data(), p.name.size(), h);
                h = fnv1a64(p.value.data.data(), p.value.data.size() * sizeof(T), h);
            }
        return h;
    }

    // fixed step count; bias-corrected Adam
    void adam_step(double lr, int64_t step, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
        double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (auto& p : items) {
            if (!p.trainable) continue;
            for (int64_t i = 0; i < p.value.numel(); ++i) {
                double g  = p.grad[i];
                double m  = beta1 * p.m[i] + (1 - beta1) * g;
                double v  = beta2 * p.v[i] + (1 - beta2) * g * g;
                p.m[i]    = static_cast<T>(m);
                p.v[i]    = static_cast<T>(v);
                double mh = m / bc1, vh = v / bc2;
                p.value[i] = static_cast<T>(p.value[i] - lr * mh / (std::sqrt(vh) + eps));
            }
        }
    }

    template <typename U>
    ParamStoreT<U> cast() const {
        ParamStoreT<U> out;
        for (const auto& p : items) {
            auto& q     = out.add(p.name, p.group, p.value.template cast<U>());
            q.trainable = p.trainable;
        }
        return out;
    }
};

using ParamStore = ParamStoreT<float>;

// --------------------------------------------------------------------------
// init helpers
// --------------------------------------------------------------------------
template <typename T>
void register_conv(ParamStoreT<T>& ps, const std::string& prefix, const std::string& group,
                   int64_t cin, int64_t cout, int64_t k, Rng& rng, bool zero_init = false) {
    double std_dev = zero_init ? 0.0 : std::sqrt(2.0 / static_cast<double>(cin * k * k));
    ps.add(prefix + ".w", group, TensorT<T>::randn({cout, cin, k, k}, rng, std_dev));
    ps.add(prefix + ".b", group, TensorT<T>::zeros({cout}));
}

template <typename T>
void register_linear(ParamStoreT<T>& ps, const std::string& prefix, const std::string& group,
                     int64_t in, int64_t out, Rng& rng, bool zero_init = false) {
    double std_dev = zero_init ? 0.0 : std::sqrt(2.0 / static_cast<double>(in));
    ps.add(prefix + ".w", group, TensorT<T>::randn({out, in}, rng, std_dev));
    ps.add(prefix + ".b", group, TensorT<T>::zeros({out}));
}

template <typename T>
void register_norm(ParamStoreT<T>& ps, const std::string& prefix, const std::string& group, int64_t c) {
    ps.add(prefix + ".g", group, TensorT<T>::full({c}, T(1)));
    ps.add(prefix + ".b", group, TensorT<T>::zeros({c}));
}

// --------------------------------------------------------------------------
// Graph binding: turns store parameters into leaf vars (cached per graph) and
// harvests their gradients back after backward().
// --------------------------------------------------------------------------
template <typename T>
struct GraphParamsT {
    ParamStoreT<T>* store;
    bool train = false;  // if false no leaf requires grad
    std::unordered_map<size_t, VarT<T>> cache;

    GraphParamsT(ParamStoreT<T>& s, bool train_) : store(&s), train(train_) {}

    VarT<T> operator[](const std::string& name) {
        size_t idx = store->index.at(name);
        auto it    = cache.find(idx);
        if (it != cache.end()) return it->second;
        auto& p    = store->items[idx];
        auto leaf  = make_leaf(p.value, train && p.trainable);
        cache[idx] = leaf;
        return leaf;
    }

    // add leaf grads into the store
    void harvest() {
        for (auto& [idx, leaf] : cache) {
            if (!leaf->needs_grad || leaf->grad.shape != leaf->val.shape) continue;
            auto& p = store->items[idx];
            for (int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += leaf->grad[i];
        }
    }
};

// --------------------------------------------------------------------------
// layer forwards reading parameters by prefix
// --------------------------------------------------------------------------
template <typename T>
VarT<T> conv2d_p(GraphParamsT<T>& g, VarT<T> x, const std::string& prefix, int64_t stride = 1) {
    return conv2d(x, g[prefix + ".w"], g[prefix + ".b"], stride);
}

template <typename T>
VarT<T> linear_p(GraphParamsT<T>& g, VarT<T> x, const std::string& prefix) {
    return linear(x, g[prefix + ".w"], g[prefix + ".b"]);
}

template <typename T>
VarT<T> group_norm_p(GraphParamsT<T>& g, VarT<T> x, const std::string& prefix, int64_t groups) {
    return group_norm(x, g[prefix + ".g"], g[prefix + ".b"], groups);
}

template <typename T>
VarT<T> layer_norm_p(GraphParamsT<T>& g, VarT<T> x, const std::string& prefix) {
    return layer_norm(x, g[prefix + ".g"], g[prefix + ".b"]);
}

// [N,L,D] self/cross attention core: q from x, k/v from ctx
template <typename T>
VarT<T> attention(GraphParamsT<T>& g, VarT<T> x, VarT<T> ctx, const std::string& prefix, int64_t heads) {
    int64_t N = x->val.shape[0], L = x->val.shape[1], D = x->val.shape[2];
    int64_t Lc = ctx->val.shape[1], Dc = ctx->val.shape[2];
    int64_t dh = D / heads;
    assert(D % heads == 0);

    auto q = linear_p(g, reshape(x, {N * L, D}), prefix + ".q");
    auto k = linear_p(g, reshape(ctx, {N * Lc, Dc}), prefix + ".k");
    auto v = linear_p(g, reshape(ctx, {N * Lc, Dc}), prefix + ".v");

    // [N,L,h,dh] -> [N,h,L,dh] -> [N*h, L, dh]
    auto qh = reshape(permute_0213(reshape(q, {N, L, heads, dh})), {N * heads, L, dh});
    auto kh = reshape(permute_0213(reshape(k, {N, Lc, heads, dh})), {N * heads, Lc, dh});
    auto vh = reshape(permute_0213(reshape(v, {N, Lc, heads, dh})), {N * heads, Lc, dh});

    auto scores = scale(bmm_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn   = softmax_last(scores);
    auto outh   = bmm(attn, vh);  // [N*h, L, dh]
    auto out    = reshape(permute_0213(reshape(outh, {N, heads, L, dh})), {N * L, D});
    return reshape(linear_p(g, out, prefix + ".o"), {N, L, D});
}

template <typename T>
void register_attention(ParamStoreT<T>& ps, const std::string& prefix, const std::string& group,
                        int64_t d_model, int64_t d_ctx, Rng& rng) {
    register_linear(ps, prefix + ".q", group, d_model, d_model, rng);
    register_linear(ps, prefix + ".k", group, d_ctx, d_model, rng);
    register_linear(ps, prefix + ".v", group, d_ctx, d_model, rng);
    register_linear(ps, prefix + ".o", group, d_model, d_model, rng);
}

// --------------------------------------------------------------------------
// sinusoidal timestep embedding; injective over [1, T] for T well below the
// 10000 base period
// --------------------------------------------------------------------------
template <typename T>
TensorT<T> sinusoidal_embedding(const std::vector<int>& ts, int64_t dim) {
    int64_t half = dim / 2;
    TensorT<T> out({static_cast<int64_t>(ts.size()), dim});
    for (size_t n = 0; n < ts.size(); ++n)
        for (int64_t i = 0; i < half; ++i) {
            double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                   static_cast<double>(half > 1 ? half - 1 : 1));
            double a    = static_cast<double>(ts[n]) * freq;
            out.data[n * dim + i]        = static_cast<T>(std::sin(a));
            out.data[n * dim + half + i] = static_cast<T>(std::cos(a));
        }
    return out;
}

}  // namespace genhowto

#endif
