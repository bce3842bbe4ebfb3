#include <catch2/catch_amalgamated.hpp>

#include "genhowto/control.hpp"
#include "test_support.hpp"

using namespace genhowto;

namespace {

AEConfig mini_acfg() {
    AEConfig a;
    a.img_size    = 16;
    a.down_factor = 4;
    a.c_lat       = 2;
    a.base_ch     = 4;
    a.norm_groups = 4;
    return a;
}

UNetConfig mini_ucfg() {
    UNetConfig u;
    u.latent_channels  = 2;
    u.latent_hw        = 4;
    u.widths           = {8, 12};
    u.blocks_per_level = 1;
    u.attn_levels      = 1;
    u.heads            = 2;
    u.time_dim         = 8;
    u.txt_dim          = 8;
    u.max_tokens       = 5;
    u.norm_groups      = 4;
    return u;
}

ModelBundle& mini_bundle() {
    static ModelBundle b = make_base_bundle(mini_acfg(), mini_ucfg(), Vocab::build(), 3);
    return b;
}

Tensor random_latent(uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn({2, 4, 4}, rng);
}

ImageSample random_image(uint64_t seed, int S = 16) {
    Rng rng(seed);
    ImageSample img = ImageSample::zeros(S, S);
    for (auto& v : img.pixels.data) v = static_cast<float>(rng.uniform(-1, 1));
    return img;
}

}  // namespace

TEST_CASE("encode_prompt contract") {
    auto& b = mini_bundle();

    SECTION("empty string gives the null embedding") {
        auto e = encode_prompt("", b.params, b.vocab, b.ucfg);
        REQUIRE(e.is_null);
        for (int id : e.token_ids) REQUIRE(id == Vocab::null_id);
    }
    SECTION("identical strings give identical embeddings") {
        auto a1 = encode_prompt("a person cutting a red apple on a wooden board", b.params, b.vocab, b.ucfg);
        auto a2 = encode_prompt("a person cutting a red apple on a wooden board", b.params, b.vocab, b.ucfg);
        REQUIRE(a1.token_vectors.data == a2.token_vectors.data);
        REQUIRE_FALSE(a1.is_null);
    }
    SECTION("one-word difference changes only that token position") {
        auto a = encode_prompt("red apple halves", b.params, b.vocab, b.ucfg);
        auto g = encode_prompt("green apple halves", b.params, b.vocab, b.ucfg);
        int L = b.ucfg.max_tokens, D = b.ucfg.txt_dim;
        for (int l = 0; l < L; ++l) {
            bool differs = false;
            for (int d = 0; d < D; ++d)
                if (a.token_vectors.at(l, d) != g.token_vectors.at(l, d)) differs = true;
            REQUIRE(differs == (l == 0));
        }
    }
    SECTION("unknown words map to UNK, no failure") {
        auto e = encode_prompt("zzz unknownword apple", b.params, b.vocab, b.ucfg);
        REQUIRE(e.token_ids[0] == Vocab::unk_id);
        REQUIRE(e.token_ids[1] == Vocab::unk_id);
        REQUIRE(e.token_ids[2] != Vocab::unk_id);
    }
}

TEST_CASE("base_predict_noise shape and determinism") {
    auto& b  = mini_bundle();
    auto z   = random_latent(5);
    auto ids = b.vocab.encode("a person slicing a loaf of bread", b.ucfg.max_tokens);
    auto o1  = base_predict_noise(b.params, z, 3, ids, b.ucfg);
    auto o2  = base_predict_noise(b.params, z, 3, ids, b.ucfg);
    REQUIRE(o1.shape == z.shape);
    REQUIRE(o1.data == o2.data);
    REQUIRE_THROWS_AS(base_predict_noise(b.params, z, 0, ids, b.ucfg), ConfigError);
}

TEST_CASE("null vs real prompt changes base output") {
    auto& b    = mini_bundle();
    auto z     = random_latent(6);
    auto ids   = b.vocab.encode("a glass full of milk", b.ucfg.max_tokens);
    auto nulls = b.vocab.null_ids(b.ucfg.max_tokens);
    auto oc    = base_predict_noise(b.params, z, 2, ids, b.ucfg);
    auto ou    = base_predict_noise(b.params, z, 2, nulls, b.ucfg);
    double diff = 0;
    for (int64_t i = 0; i < oc.numel(); ++i) diff += std::abs(oc[i] - ou[i]);
    REQUIRE(diff > 0.0);
}

TEST_CASE("assemble_genhowto contract") {
    auto base = mini_bundle();  // copy

    SECTION("untrained/missing base rejected") {
        ModelBundle empty;
        REQUIRE_THROWS_AS(assemble_genhowto(empty, "state"), MissingArtifactError);
        REQUIRE_THROWS_AS(assemble_genhowto(base, "both"), ConfigError);
    }

    auto bundle = assemble_genhowto(base, "state");

    SECTION("control encoder parameters equal base encoder parameters bitwise") {
        for (const auto& p : base.params.items)
            if (p.group == "enc") {
                const auto& q = bundle.params.at("ctrl." + p.name);
                REQUIRE(q.value.data == p.value.data);
            }
    }
    SECTION("zero projections are exactly zero") {
        auto tap_ch = bundle.ucfg.tap_channels();
        REQUIRE(tap_ch.size() == static_cast<size_t>(bundle.ucfg.tap_count()));
        for (size_t i = 0; i < tap_ch.size(); ++i) {
            for (float v : bundle.params.at(strf("zero.%zu.w", i)).value.data) REQUIRE(v == 0.0f);
            for (float v : bundle.params.at(strf("zero.%zu.b", i)).value.data) REQUIRE(v == 0.0f);
        }
    }
    SECTION("trainable mask follows the freeze split") {
        auto mask = bundle.params.trainable_mask();
        REQUIRE(mask.at("enc") == false);
        REQUIRE(mask.at("ae") == false);
        REQUIRE(mask.at("prompt") == false);
        REQUIRE(mask.at("time") == false);
        REQUIRE(mask.at("dec") == true);
        REQUIRE(mask.at("ctrl") == true);
        REQUIRE(mask.at("zero") == true);
    }
    SECTION("task variant recorded") {
        REQUIRE(bundle.task_variant == "state");
        REQUIRE(bundle.has_control());
    }
    SECTION("double assembly rejected") {
        REQUIRE_THROWS_AS(assemble_genhowto(bundle, "state"), ConfigError);
    }
}

TEST_CASE("identity at initialization") {
    auto bundle = assemble_genhowto(mini_bundle(), "state");
    auto base   = mini_bundle();
    for (int it = 0; it < 20; ++it) {
        auto z      = random_latent(100 + it);
        auto img    = random_image(200 + it);
        auto prompt = encode_prompt("a person stacking red blocks", bundle.params, bundle.vocab, bundle.ucfg);
        int t       = 1 + it % bundle.sched_T;
        auto full   = predict_noise(bundle, z, t, prompt, img);
        auto alone  = base_predict_noise(base.params, z, t, prompt.token_ids, base.ucfg);
        for (int64_t i = 0; i < full.numel(); ++i)
            REQUIRE(std::abs(full[i] - alone[i]) <= 1e-6f);
    }
}

TEST_CASE("tap fusion additivity, instrumented") {
    auto bundle = assemble_genhowto(mini_bundle(), "state");
    // perturb control branch + zero projections so the fusion is nontrivial
    Rng rng(9);
    for (auto& p : bundle.params.items)
        if (p.group == "zero" || p.group == "ctrl")
            for (auto& v : p.value.data) v += static_cast<float>(0.05 * rng.normal());

    auto z      = random_latent(7);
    auto img    = random_image(8);
    auto prompt = encode_prompt("a cracked egg with yolk in a bowl", bundle.params, bundle.vocab, bundle.ucfg);
    TapTraceT<float> trace;
    auto out = predict_noise(bundle, z, 3, prompt, img, &trace);
    REQUIRE(trace.base.size() == static_cast<size_t>(bundle.ucfg.tap_count()));
    for (size_t i = 0; i < trace.base.size(); ++i) {
        REQUIRE(trace.fused[i].shape == trace.base[i].shape);
        for (int64_t k = 0; k < trace.base[i].numel(); ++k)
            REQUIRE(trace.fused[i][k] == trace.base[i][k] + trace.projected[i][k]);
    }
    // control branch consumed z_t + encode(image): its input differs from the base path
    double moved = 0;
    for (int64_t k = 0; k < trace.base[0].numel(); ++k)
        moved += std::abs(trace.control[0][k] - trace.base[0][k]);
    REQUIRE(moved > 0.0);
    REQUIRE(out.shape == z.shape);
}

TEST_CASE("re-zeroing zero projections restores base outputs exactly") {
    auto bundle = assemble_genhowto(mini_bundle(), "action");
    Rng rng(11);
    for (auto& p : bundle.params.items)
        if (p.group == "zero" || p.group == "ctrl")
            for (auto& v : p.value.data) v += static_cast<float>(0.1 * rng.normal());

    auto z      = random_latent(12);
    auto img    = random_image(13);
    auto prompt = encode_prompt("a peeled carrot on a gray table", bundle.params, bundle.vocab, bundle.ucfg);
    auto base   = mini_bundle();
    auto before = predict_noise(bundle, z, 4, prompt, img);
    auto alone  = base_predict_noise(base.params, z, 4, prompt.token_ids, base.ucfg);
    double diff = 0;
    for (int64_t i = 0; i < before.numel(); ++i) diff += std::abs(before[i] - alone[i]);
    REQUIRE(diff > 0.0);

    for (auto& p : bundle.params.items)
        if (p.group == "zero") std::fill(p.value.data.begin(), p.value.data.end(), 0.0f);
    auto after = predict_noise(bundle, z, 4, prompt, img);
    REQUIRE(after.data == alone.data);
}

TEST_CASE("distinct conditioning images change the fused output once projections are nonzero") {
    auto bundle = assemble_genhowto(mini_bundle(), "state");
    Rng rng(14);
    for (auto& p : bundle.params.items)
        if (p.group == "zero")
            for (auto& v : p.value.data) v += static_cast<float>(0.1 * rng.normal());
    auto z      = random_latent(15);
    auto prompt = encode_prompt("slices of bread on a marble countertop", bundle.params, bundle.vocab,
                                bundle.ucfg);
    auto o1 = predict_noise(bundle, z, 5, prompt, random_image(16));
    auto o2 = predict_noise(bundle, z, 5, prompt, random_image(17));
    double diff = 0;
    for (int64_t i = 0; i < o1.numel(); ++i) diff += std::abs(o1[i] - o2[i]);
    REQUIRE(diff > 0.0);
}

TEST_CASE("autoencoder shape contracts") {
    auto& b = mini_bundle();

    SECTION("encode shape and determinism") {
        auto img = random_image(20);
        auto z1  = encode(img, b.params, b.acfg);
        auto z2  = encode(img, b.params, b.acfg);
        REQUIRE(z1.shape == std::vector<int64_t>{2, 4, 4});
        REQUIRE(z1.data == z2.data);
    }
    SECTION("decode of encode has the input shape; outputs in range") {
        auto img = random_image(21);
        auto out = decode(encode(img, b.params, b.acfg), b.params, b.acfg);
        REQUIRE(out.pixels.shape == img.pixels.shape);
        for (float v : out.pixels.data) {
            REQUIRE(v >= -1.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    SECTION("decode of the zero latent is a valid in-range image") {
        auto out = decode(Tensor::zeros({2, 4, 4}), b.params, b.acfg);
        for (float v : out.pixels.data) {
            REQUIRE(v >= -1.0f);
            REQUIRE(v <= 1.0f);
        }
    }
    SECTION("shape mismatches rejected") {
        ImageSample wrong = ImageSample::zeros(8, 8);
        REQUIRE_THROWS_AS(encode(wrong, b.params, b.acfg), ConfigError);
        REQUIRE_THROWS_AS(decode(Tensor::zeros({2, 8, 8}), b.params, b.acfg), ConfigError);
    }
}

TEST_CASE("sinusoidal timestep embeddings injective over [1, T]") {
    auto& b = mini_bundle();
    std::vector<int> ts(b.sched_T);
    for (int i = 0; i < b.sched_T; ++i) ts[i] = i + 1;
    auto emb = sinusoidal_embedding<float>(ts, b.ucfg.time_dim);
    for (int a = 0; a < b.sched_T; ++a)
        for (int c = a + 1; c < b.sched_T; ++c) {
            double d = 0;
            for (int i = 0; i < b.ucfg.time_dim; ++i) {
                double x = emb.at(a, i) - emb.at(c, i);
                d += x * x;
            }
            REQUIRE(d > 0.0);
        }
}

TEST_CASE("denoiser output is smooth: JVP matches finite differences") {
    // miniature double-precision configuration, 2 channels, 4x4 latent
    auto dps   = mini_bundle().params.cast<double>();
    auto ucfg  = mini_bundle().ucfg;
    auto ids   = mini_bundle().vocab.encode("an egg", ucfg.max_tokens);
    Rng rng(31);
    TensorD z  = TensorD::randn({1, 2, 4, 4}, rng);
    TensorD dir = TensorD::randn({1, 2, 4, 4}, rng);

    // analytic directional derivative of sum(out) via backward
    GraphParamsT<double> g(dps, false);
    auto z_leaf = make_leaf(z, true);
    auto out    = base_predict_noise_graph(g, z_leaf, {3}, {ids}, ucfg);
    auto loss   = mean_all(out);
    backward(loss);
    double analytic = 0;
    for (int64_t i = 0; i < z.numel(); ++i) analytic += z_leaf->grad[i] * dir[i];

    double h = 1e-5;
    auto eval = [&](double sgn) {
        TensorD zp = z;
        for (int64_t i = 0; i < z.numel(); ++i) zp[i] += sgn * h * dir[i];
        GraphParamsT<double> g2(dps, false);
        auto o = base_predict_noise_graph(g2, make_leaf(zp, false), {3}, {ids}, ucfg);
        double s = 0;
        for (auto v : o->val.data) s += v;
        return s / static_cast<double>(o->val.numel());
    };
    double fd = (eval(1) - eval(-1)) / (2 * h);
    REQUIRE(std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8}) < 1e-3);
}
