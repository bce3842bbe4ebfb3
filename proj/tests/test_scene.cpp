#include <catch2/catch_amalgamated.hpp>

#include "genhowto/corpus.hpp"

using namespace genhowto;

TEST_CASE("scene spec sampling is deterministic per seed") {
    auto a = sample_scene_spec(2, 77);
    auto b = sample_scene_spec(2, 77);
    REQUIRE(a.background_id == b.background_id);
    REQUIRE(a.variant == b.variant);
    REQUIRE(a.cx == b.cx);
    REQUIRE(a.obj_scale == b.obj_scale);
}

TEST_CASE("distinct seeds give distinct specs almost always") {
    int distinct = 0;
    for (uint64_t s = 0; s < 100; ++s) {
        auto a = sample_scene_spec(0, s);
        auto b = sample_scene_spec(0, s + 1000);
        if (a.background_id != b.background_id || a.variant != b.variant || a.cx != b.cx ||
            a.cy != b.cy || a.obj_scale != b.obj_scale)
            ++distinct;
    }
    REQUIRE(distinct >= 99);
}

TEST_CASE("all categories producible and rejected when unknown") {
    for (int c = 0; c < 8; ++c) {
        auto spec = sample_scene_spec(c, 1);
        REQUIRE(spec.category == c);
    }
    REQUIRE_THROWS_AS(sample_scene_spec(8, 1), ConfigError);
    REQUIRE_THROWS_AS(sample_scene_spec(-1, 1), ConfigError);
    REQUIRE_THROWS_AS(sample_scene_spec("no-such-thing", 1), ConfigError);
}

TEST_CASE("noiseless score argmax equals ground truth") {
    for (int c = 0; c < 8; ++c) {
        auto spec  = sample_scene_spec(c, 9 + c);
        auto track = render_sequence(spec, 30, 0.0, 32, false);
        for (int ch = 0; ch < 3; ++ch) {
            int arg = 0;
            for (int i = 1; i < track.n_frames; ++i)
                if (track.scores.at(ch, i) > track.scores.at(ch, arg)) arg = i;
            REQUIRE(arg == track.gt_indices[ch]);
        }
    }
}

TEST_CASE("noisy scores perturb the argmax on some tracks") {
    int moved = 0;
    for (int v = 0; v < 1000; ++v) {
        auto spec  = sample_scene_spec(v % 8, 40000 + v);
        auto track = render_sequence(spec, 24, 0.3, 32, false);
        for (int ch = 0; ch < 3; ++ch) {
            int arg = 0;
            for (int i = 1; i < track.n_frames; ++i)
                if (track.scores.at(ch, i) > track.scores.at(ch, arg)) arg = i;
            if (arg != track.gt_indices[ch]) {
                ++moved;
                break;
            }
        }
    }
    REQUIRE(moved > 0);
}

TEST_CASE("short sequences rejected") {
    auto spec = sample_scene_spec(0, 5);
    REQUIRE_THROWS_AS(render_sequence(spec, 2, 0.0, 32), ConfigError);
}

TEST_CASE("background pixels identical across frames outside mask union") {
    for (int c = 0; c < 8; ++c) {
        auto spec  = sample_scene_spec(c, 31 + c);
        auto track = render_sequence(spec, 12, 0.1, 48, true);
        const auto& ref = track.frames[0];
        for (int f : {3, 6, 11}) {
            auto u = mask_union(track.masks[0], track.masks[f]);
            int h  = ref.height(), w = ref.width();
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    if (u.at(y, x, 0)) continue;
                    for (int ch = 0; ch < 3; ++ch)
                        REQUIRE(ref.at(ch, y, x) == track.frames[f].at(ch, y, x));
                }
        }
    }
}

TEST_CASE("captions") {
    SECTION("template instantiation") {
        SceneSpec s;
        s.category      = 0;
        s.variant       = 0;
        s.background_id = 0;
        REQUIRE(caption(s, Phase::State) == "red apple halves on a wooden board");
        REQUIRE(caption(s, Phase::Action) == "a person cutting a red apple on a wooden board");
    }
    SECTION("action and state differ for every category") {
        for (int c = 0; c < 8; ++c) {
            auto spec = sample_scene_spec(c, 3 + c);
            REQUIRE(caption(spec, Phase::Action) != caption(spec, Phase::State));
        }
    }
    SECTION("deterministic") {
        auto spec = sample_scene_spec(4, 17);
        REQUIRE(caption(spec, Phase::Action) == caption(spec, Phase::Action));
    }
    SECTION("every emitted word is in the vocabulary") {
        auto vocab = vocabulary();
        std::set<std::string> vs(vocab.begin(), vocab.end());
        for (int c = 0; c < 8; ++c)
            for (uint64_t seed = 0; seed < 20; ++seed) {
                auto spec = sample_scene_spec(c, seed);
                for (Phase ph : {Phase::Action, Phase::State})
                    for (const auto& w : tokenize(caption(spec, ph))) REQUIRE(vs.count(w) == 1);
            }
    }
    SECTION("specials head the vocabulary") {
        auto vocab = vocabulary();
        REQUIRE(vocab[0] == "<pad>");
        REQUIRE(vocab[1] == "<unk>");
        REQUIRE(vocab[2] == "<null>");
    }
}

TEST_CASE("png round trip") {
    auto spec = sample_scene_spec(5, 8);
    ImageSample img;
    ByteImage mask;
    render_frame(spec, 20, 24, 48, img, mask);
    auto tmp = std::filesystem::temp_directory_path() / "ght_png_test";
    std::filesystem::create_directories(tmp);
    save_image(tmp / "frame.png", img);
    save_png(tmp / "mask.png", mask);
    auto img2  = load_image(tmp / "frame.png");
    auto mask2 = load_png(tmp / "mask.png");
    REQUIRE(img2.pixels.shape == img.pixels.shape);
    // 8-bit quantization bounds the error by half a step
    for (int64_t i = 0; i < img.pixels.numel(); ++i)
        REQUIRE(std::abs(img2.pixels[i] - img.pixels[i]) <= 1.0f / 255.0f + 1e-6f);
    REQUIRE(mask2.pixels == mask.pixels);
    std::filesystem::remove_all(tmp);
}

TEST_CASE("corpus build: counts, splits, determinism") {
    SynthConfig cfg;
    cfg.img_size  = 32;
    cfg.n_train   = 24;
    cfg.n_heldout = 8;
    cfg.n_test    = 4;
    cfg.n_frames  = 12;
    cfg.seed      = 5;
    auto dir      = std::filesystem::temp_directory_path() / "ght_corpus_test";
    std::filesystem::remove_all(dir);
    auto manifest = build_corpus(cfg, dir);
    auto tuples   = load_manifest(manifest);

    SECTION("counts per split") {
        REQUIRE(filter_split(tuples, "train").size() == 24);
        REQUIRE(filter_split(tuples, "heldout").size() == 8);
        REQUIRE(filter_split(tuples, "test").size() == 4);
    }
    SECTION("no video_id shared between heldout and test; categories partitioned") {
        std::set<int64_t> heldout_ids, test_ids;
        std::set<std::string> train_cats, heldout_cats;
        for (const auto& t : tuples) {
            if (t.split == "heldout") heldout_ids.insert(t.video_id);
            if (t.split == "test") test_ids.insert(t.video_id);
            if (t.split == "train") train_cats.insert(t.category);
            if (t.split != "train") heldout_cats.insert(t.category);
        }
        for (auto id : test_ids) REQUIRE(heldout_ids.count(id) == 0);
        for (const auto& c : heldout_cats) REQUIRE(train_cats.count(c) == 0);
        REQUIRE(heldout_cats.size() == 2);
        REQUIRE(train_cats.size() == 6);
    }
    SECTION("tuple images share the background outside masks") {
        const auto& t = tuples[3];
        auto init     = load_image(dir / t.path_initial);
        auto fin      = load_image(dir / t.path_final);
        auto m        = mask_union(load_png(dir / mask_path(t.path_initial)),
                                   load_png(dir / mask_path(t.path_final)));
        for (int y = 0; y < init.height(); ++y)
            for (int x = 0; x < init.width(); ++x) {
                if (m.at(y, x, 0)) continue;
                for (int c = 0; c < 3; ++c) REQUIRE(init.at(c, y, x) == fin.at(c, y, x));
            }
    }
    SECTION("prompts nonempty") {
        for (const auto& t : tuples) {
            REQUIRE(!t.prompt_action.empty());
            REQUIRE(!t.prompt_state.empty());
        }
    }
    SECTION("rebuild is byte-identical") {
        auto dir2 = std::filesystem::temp_directory_path() / "ght_corpus_test2";
        std::filesystem::remove_all(dir2);
        auto manifest2 = build_corpus(cfg, dir2);
        REQUIRE(read_file(manifest) == read_file(manifest2));
        auto t = tuples[0];
        REQUIRE(read_file(dir / t.path_action) == read_file(dir2 / t.path_action));
        std::filesystem::remove_all(dir2);
    }
    SECTION("H >= K rejected") {
        SynthConfig bad = cfg;
        bad.n_heldout_categories = bad.n_categories;
        REQUIRE_THROWS_AS(build_corpus(bad, dir / "bad"), ConfigError);
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("corrupted prompts ablation hook perturbs words") {
    SynthConfig cfg;
    cfg.img_size        = 32;
    cfg.n_train         = 6;
    cfg.n_heldout       = 2;
    cfg.n_test          = 2;
    cfg.n_frames        = 8;
    cfg.corrupt_prompts = true;
    cfg.corrupt_rate    = 0.7;
    cfg.seed            = 6;
    auto dir            = std::filesystem::temp_directory_path() / "ght_corrupt_test";
    std::filesystem::remove_all(dir);
    auto tuples = load_manifest(build_corpus(cfg, dir));

    SynthConfig clean   = cfg;
    clean.corrupt_prompts = false;
    auto dir2           = std::filesystem::temp_directory_path() / "ght_corrupt_ref";
    std::filesystem::remove_all(dir2);
    auto ref = load_manifest(build_corpus(clean, dir2));

    int changed = 0;
    for (size_t i = 0; i < tuples.size(); ++i)
        if (tuples[i].prompt_state != ref[i].prompt_state) ++changed;
    REQUIRE(changed > 0);
    std::filesystem::remove_all(dir);
    std::filesystem::remove_all(dir2);
}

TEST_CASE("uniform selection mode uses fixed fractions") {
    SynthConfig cfg;
    cfg.img_size          = 32;
    cfg.n_train           = 4;
    cfg.n_heldout         = 2;
    cfg.n_test            = 2;
    cfg.n_frames          = 20;
    cfg.uniform_selection = true;
    cfg.seed              = 7;
    auto dir              = std::filesystem::temp_directory_path() / "ght_uniform_test";
    std::filesystem::remove_all(dir);
    auto tuples = load_manifest(build_corpus(cfg, dir));
    REQUIRE(tuples.size() == 8);
    std::filesystem::remove_all(dir);
}
