#ifndef GENHOWTO_CORPUS_HPP
#define GENHOWTO_CORPUS_HPP

#include <json.hpp>

#include "genhowto/miner.hpp"

namespace genhowto {

// One training record: input image, action image + prompt, final-state image
// + prompt, provenance scores. Paths are relative to the manifest directory;
// masks live alongside, "<image>_mask.png".
struct FiveTuple {
    int64_t video_id = 0;
    std::string category;
    std::string split;  // train | heldout | test
    std::string path_initial, path_action, path_final;
    std::string prompt_action, prompt_state;
    double score_initial = 0, score_action = 0, score_final = 0;
    double confidence  = 0;
    uint64_t miner_seed = 0;
};

inline std::string mask_path(const std::string& image_path) {
    auto dot = image_path.rfind('.');
    return image_path.substr(0, dot) + "_mask.png";
}

inline nlohmann::json tuple_to_json(const FiveTuple& t) {
    return nlohmann::json{{"video_id", t.video_id},
                          {"category", t.category},
                          {"split", t.split},
                          {"path_initial", t.path_initial},
                          {"path_action", t.path_action},
                          {"path_final", t.path_final},
                          {"prompt_action", t.prompt_action},
                          {"prompt_state", t.prompt_state},
                          {"score_initial", t.score_initial},
                          {"score_action", t.score_action},
                          {"score_final", t.score_final},
                          {"confidence", t.confidence},
                          {"miner_seed", t.miner_seed}};
}

inline FiveTuple tuple_from_json(const nlohmann::json& j) {
    FiveTuple t;
    t.video_id      = j.at("video_id").get<int64_t>();
    t.category      = j.at("category").get<std::string>();
    t.split         = j.at("split").get<std::string>();
    t.path_initial  = j.at("path_initial").get<std::string>();
    t.path_action   = j.at("path_action").get<std::string>();
    t.path_final    = j.at("path_final").get<std::string>();
    t.prompt_action = j.at("prompt_action").get<std::string>();
    t.prompt_state  = j.at("prompt_state").get<std::string>();
    t.score_initial = j.at("score_initial").get<double>();
    t.score_action  = j.at("score_action").get<double>();
    t.score_final   = j.at("score_final").get<double>();
    t.confidence    = j.at("confidence").get<double>();
    t.miner_seed    = j.at("miner_seed").get<uint64_t>();
    return t;
}

inline void save_manifest(const std::filesystem::path& path, const std::vector<FiveTuple>& tuples) {
    std::string out;
    for (const auto& t : tuples) out += tuple_to_json(t).dump() + "\n";
    write_file(path, out);
}

inline std::vector<FiveTuple> load_manifest(const std::filesystem::path& path) {
    std::vector<FiveTuple> tuples;
    for (const auto& line : split(read_file(path), '\n')) {
        if (trim(line).empty()) continue;
        tuples.push_back(tuple_from_json(nlohmann::json::parse(line)));
    }
    return tuples;
}

inline std::vector<FiveTuple> filter_split(const std::vector<FiveTuple>& tuples, const std::string& split) {
    std::vector<FiveTuple> out;
    for (const auto& t : tuples)
        if (t.split == split) out.push_back(t);
    return out;
}

// ----------------------------------------------------------------------------
// corpus synthesis
// ----------------------------------------------------------------------------
struct SynthConfig {
    int img_size  = 64;
    int n_train   = 2000;
    int n_heldout = 400;
    int n_test    = 100;
    int n_categories         = 8;
    int n_heldout_categories = 2;
    int n_frames      = 24;
    double score_noise = 0.15;
    bool jitter        = true;
    // ablation hooks
    bool corrupt_prompts   = false;
    double corrupt_rate    = 0.5;
    bool uniform_selection = false;  // uniform-frame baseline instead of mining
    // build-time mining
    int miner_n_seeds     = 1;
    double keep_fraction  = 1.0;
    int dedupe_window     = 2;
    uint64_t seed         = 0;
};

namespace corpusdetail {

inline std::string corrupt_prompt(const std::string& prompt, double rate, Rng& rng,
                                  const std::vector<std::string>& vocab) {
    auto words = tokenize(prompt);
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        std::string w = words[i];
        if (rng.bernoulli(rate))
            w = vocab[static_cast<size_t>(rng.uniform_int(3, static_cast<int64_t>(vocab.size()) - 1))];
        out += (i ? " " : "") + w;
    }
    return out;
}

}  // namespace corpusdetail

// Builds the split corpus: per video, renders the score track, selects one
// triplet (or the uniform baseline), writes the three frames plus masks as
// PNG, and appends the manifest record. Held-out and test tuples come from
// disjoint videos of the held-out categories.
inline std::filesystem::path build_corpus(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
    if (cfg.n_heldout_categories >= cfg.n_categories)
        throw ConfigError("build_corpus: held-out categories must be fewer than categories");
    if (cfg.n_categories > static_cast<int>(category_names().size()))
        throw ConfigError("build_corpus: at most " + std::to_string(category_names().size()) + " categories");
    std::filesystem::create_directories(out_dir / "images");

    int n_train_cats = cfg.n_categories - cfg.n_heldout_categories;
    std::vector<FiveTuple> tuples;
    auto vocab = vocabulary();

    int64_t video_id = 0;
    auto make_split = [&](const std::string& split, int count, bool heldout_cats) {
        std::vector<FiveTuple> split_tuples;
        for (int v = 0; v < count; ++v, ++video_id) {
            int cat = heldout_cats ? n_train_cats + v % cfg.n_heldout_categories : v % n_train_cats;
            uint64_t vid_seed = mix_seed(cfg.seed, 0xc0de, static_cast<uint64_t>(video_id));
            SceneSpec spec    = sample_scene_spec(cat, vid_seed);
            spec.jitter       = cfg.jitter;

            ScoreTrack track = render_sequence(spec, cfg.n_frames, cfg.score_noise, cfg.img_size,
                                               /*with_frames=*/false);
            TripletSelection sel;
            if (cfg.uniform_selection) {
                auto idx       = uniform_baseline(track.n_frames);
                sel.i          = idx[0];
                sel.j          = idx[1];
                sel.k          = idx[2];
                sel.confidence = track.scores.at(0, sel.i) + track.scores.at(1, sel.j) +
                                 track.scores.at(2, sel.k);
            } else {
                sel = select_triplet(track);
            }

            FiveTuple t;
            t.video_id    = video_id;
            t.category    = category_names()[cat];
            t.split       = split;
            t.miner_seed  = 0;
            t.score_initial = track.scores.at(0, sel.i);
            t.score_action  = track.scores.at(1, sel.j);
            t.score_final   = track.scores.at(2, sel.k);
            t.confidence    = sel.confidence;
            t.prompt_action = caption(spec, Phase::Action);
            t.prompt_state  = caption(spec, Phase::State);
            if (cfg.corrupt_prompts) {
                Rng crng(mix_seed(vid_seed, 0xbad));
                t.prompt_action = corpusdetail::corrupt_prompt(t.prompt_action, cfg.corrupt_rate, crng, vocab);
                t.prompt_state  = corpusdetail::corrupt_prompt(t.prompt_state, cfg.corrupt_rate, crng, vocab);
            }

            std::string stem = strf("images/v%06lld", static_cast<long long>(video_id));
            t.path_initial   = stem + "_init.png";
            t.path_action    = stem + "_act.png";
            t.path_final     = stem + "_fin.png";

            const int frames_to_write[3] = {sel.i, sel.j, sel.k};
            const std::string* paths[3]  = {&t.path_initial, &t.path_action, &t.path_final};
            for (int fi = 0; fi < 3; ++fi) {
                ImageSample img;
                ByteImage mask;
                render_frame(spec, frames_to_write[fi], cfg.n_frames, cfg.img_size, img, mask);
                save_image(out_dir / *paths[fi], img);
                save_png(out_dir / mask_path(*paths[fi]), mask);
            }
            split_tuples.push_back(std::move(t));
        }
        if (cfg.keep_fraction < 1.0)
            split_tuples = filter_by_percentile<FiveTuple>(
                split_tuples, cfg.keep_fraction, [](const FiveTuple& t) { return t.confidence; });
        tuples.insert(tuples.end(), split_tuples.begin(), split_tuples.end());
    };

    make_split("train", cfg.n_train, false);
    make_split("heldout", cfg.n_heldout, true);
    make_split("test", cfg.n_test, true);

    auto manifest = out_dir / "manifest.jsonl";
    save_manifest(manifest, tuples);
    return manifest;
}

}  // namespace genhowto

#endif
