#include <catch2/catch_amalgamated.hpp>

#include "genhowto/nn.hpp"
#include "test_support.hpp"

using namespace genhowto;
using ghtest::gradcheck;

static TensorD rnd(std::vector<int64_t> sh, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    return TensorD::randn(std::move(sh), rng, scale);
}

TEST_CASE("elementwise op gradients") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto x = mul(add(v[0], v[1]), sub(v[0], scale(v[1], 0.5)));
        x      = add(silu(x), tanh_op(scale(x, 0.3)));
        x      = add(x, exp_op(scale(x, -0.2)));
        return mean_all(mul(x, x));
    };
    REQUIRE(gradcheck(f, {rnd({3, 4}, 1), rnd({3, 4}, 2)}) < 1e-6);
}

TEST_CASE("sigmoid / clamp / add_scalar gradients") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto x = sigmoid_op(add_scalar(v[0], 0.1));
        x      = clamp_op(x, 0.2, 0.8);
        return mean_all(mul(x, x));
    };
    REQUIRE(gradcheck(f, {rnd({2, 5}, 3)}) < 1e-6);
}

TEST_CASE("linear gradient") {
    auto f = [](std::vector<VarT<double>>& v) {
        return mean_all(mul(linear(v[0], v[1], v[2]), linear(v[0], v[1], v[2])));
    };
    REQUIRE(gradcheck(f, {rnd({4, 3}, 4), rnd({5, 3}, 5, 0.5), rnd({5}, 6, 0.1)}) < 1e-6);
}

TEST_CASE("bmm and bmm_nt gradients") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = bmm(v[0], v[1]);
        auto s = bmm_nt(y, y);
        return mean_all(mul(s, s));
    };
    REQUIRE(gradcheck(f, {rnd({2, 3, 4}, 7), rnd({2, 4, 3}, 8)}) < 1e-6);
}

TEST_CASE("conv2d gradients, stride 1 and 2") {
    auto f1 = [](std::vector<VarT<double>>& v) {
        auto y = conv2d(v[0], v[1], v[2], 1);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f1, {rnd({2, 3, 5, 5}, 9), rnd({4, 3, 3, 3}, 10, 0.4), rnd({4}, 11, 0.1)}) < 1e-6);
    auto f2 = [](std::vector<VarT<double>>& v) {
        auto y = conv2d(v[0], v[1], v[2], 2);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f2, {rnd({1, 2, 6, 6}, 12), rnd({3, 2, 3, 3}, 13, 0.4), rnd({3}, 14, 0.1)}) < 1e-6);
}

TEST_CASE("1x1 conv gradient") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = conv2d(v[0], v[1], v[2], 1);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f, {rnd({2, 3, 4, 4}, 15), rnd({3, 3, 1, 1}, 16, 0.5), rnd({3}, 17, 0.1)}) < 1e-6);
}

TEST_CASE("upsample gradient") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = upsample_nearest2x(v[0]);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f, {rnd({2, 3, 3, 3}, 18)}) < 1e-6);
}

TEST_CASE("group_norm gradient") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = group_norm(v[0], v[1], v[2], 2);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f, {rnd({2, 4, 3, 3}, 19), rnd({4}, 20, 0.3), rnd({4}, 21, 0.2)}, 1e-5) < 1e-5);
}

TEST_CASE("layer_norm gradient") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = layer_norm(v[0], v[1], v[2]);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f, {rnd({3, 2, 5}, 22), rnd({5}, 23, 0.3), rnd({5}, 24, 0.2)}, 1e-5) < 1e-5);
}

TEST_CASE("softmax gradient") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = softmax_last(v[0]);
        return mean_all(mul(y, sub(y, v[0])));
    };
    REQUIRE(gradcheck(f, {rnd({4, 6}, 25)}) < 1e-6);
}

TEST_CASE("shape plumbing gradients") {
    auto f = [](std::vector<VarT<double>>& v) {
        auto y = permute_0213(reshape(v[0], {2, 3, 2, 2}));
        auto z = nchw_to_nlc(y);
        auto w = nlc_to_nchw(z, 3, 2);
        auto c = concat_ch(w, w);
        auto s = slice_ch(c, 1, 3);
        return mean_all(mul(s, s));
    };
    REQUIRE(gradcheck(f, {rnd({2, 2, 3, 2}, 26)}) < 1e-6);
}

TEST_CASE("embed and broadcast gradients") {
    std::vector<std::vector<int>> ids = {{0, 2, 1}, {2, 2, 0}};
    auto f = [&](std::vector<VarT<double>>& v) {
        auto e = embed(v[0], ids);
        auto p = add_pos_ld(e, v[1]);
        return mean_all(mul(p, p));
    };
    REQUIRE(gradcheck(f, {rnd({3, 4}, 27), rnd({3, 4}, 28)}) < 1e-6);

    auto g = [](std::vector<VarT<double>>& v) {
        auto y = add_bias_nc(v[0], v[1]);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(g, {rnd({2, 3, 2, 2}, 29), rnd({2, 3}, 30)}) < 1e-6);
}

TEST_CASE("attention block gradient") {
    ParamStoreT<double> ps;
    Rng rng(31);
    register_attention(ps, "attn", "g", 4, 6, rng);
    auto f = [&](std::vector<VarT<double>>& v) {
        GraphParamsT<double> g(ps, true);
        auto y = attention(g, v[0], v[1], std::string("attn"), 2);
        return mean_all(mul(y, y));
    };
    REQUIRE(gradcheck(f, {rnd({2, 3, 4}, 32), rnd({2, 5, 6}, 33)}) < 1e-6);
}

TEST_CASE("graph params harvest accumulates into store") {
    ParamStoreT<double> ps;
    Rng rng(34);
    register_linear(ps, "lin", "g", 3, 2, rng);
    GraphParamsT<double> g(ps, true);
    auto x    = make_leaf(rnd({4, 3}, 35), false);
    auto y    = linear_p(g, x, std::string("lin"));
    auto loss = mean_all(mul(y, y));
    backward(loss);
    g.harvest();
    double s = 0;
    for (auto v : ps.at("lin.w").grad.data) s += std::abs(v);
    REQUIRE(s > 0.0);
}

TEST_CASE("frozen params prune backward") {
    ParamStoreT<double> ps;
    Rng rng(36);
    register_linear(ps, "lin", "g", 3, 2, rng);
    ps.set_group_trainable("g", false);
    GraphParamsT<double> g(ps, true);
    auto x    = make_leaf(rnd({4, 3}, 37), false);
    auto y    = linear_p(g, x, std::string("lin"));
    auto loss = mean_all(mul(y, y));
    REQUIRE_FALSE(loss->needs_grad);
}

TEST_CASE("sinusoidal embedding injective over schedule range") {
    auto emb = sinusoidal_embedding<float>([] {
        std::vector<int> ts(256);
        for (int i = 0; i < 256; ++i) ts[i] = i + 1;
        return ts;
    }(), 64);
    double min_dist = 1e30;
    for (int a = 0; a < 256; ++a)
        for (int b = a + 1; b < 256; ++b) {
            double d = 0;
            for (int i = 0; i < 64; ++i) {
                double x = emb.at(a, i) - emb.at(b, i);
                d += x * x;
            }
            min_dist = std::min(min_dist, d);
        }
    REQUIRE(min_dist > 1e-6);
}

TEST_CASE("adam moves only trainable params") {
    ParamStore ps;
    Rng rng(38);
    register_linear(ps, "a", "ga", 2, 2, rng);
    register_linear(ps, "b", "gb", 2, 2, rng);
    ps.set_group_trainable("gb", false);
    auto before_a = ps.at("a.w").value;
    auto before_b = ps.at("b.w").value;
    for (auto& p : ps.items)
        std::fill(p.grad.data.begin(), p.grad.data.end(), 1.0f);
    ps.adam_step(1e-2, 1);
    REQUIRE(ps.at("a.w").value.data != before_a.data);
    REQUIRE(ps.at("b.w").value.data == before_b.data);
}
