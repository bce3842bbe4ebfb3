#ifndef GENHOWTO_TRAINER_HPP
#define GENHOWTO_TRAINER_HPP

#include <json.hpp>

#include "genhowto/control.hpp"
#include "genhowto/corpus.hpp"

namespace genhowto {

struct TrainConfig {
    std::string variant   = "state";  // action | state | joint
    int batch_size        = 32;
    double lr             = 2e-5;
    int steps             = 10000;
    double prompt_dropout = 0.1;
    uint64_t seed         = 0;
    int checkpoint_every  = 0;  // 0: only the final checkpoint
    int log_every         = 100;
};

// ----------------------------------------------------------------------------
// Eq-style training loss: mean over batch and elements of
// (eps - eps_theta(z_t, t, I, P))^2 with z_t = add_noise(encode(I*), eps, t).
// ----------------------------------------------------------------------------
template <typename T>
VarT<T> diffusion_loss_graph(GraphParamsT<T>& g, const UNetConfig& cfg, const TensorT<T>& z0_batch,
                             const TensorT<T>* cond_batch, const std::vector<std::vector<int>>& ids,
                             const std::vector<int>& t_draws, const TensorT<T>& eps_batch,
                             const DiffusionSchedule& sched) {
    int64_t N = z0_batch.shape[0];
    assert(static_cast<int64_t>(t_draws.size()) == N);
    // z_t built per sample outside the graph; z0 and eps are data
    TensorT<T> z_t(z0_batch.shape);
    int64_t stride = z0_batch.numel() / N;
    for (int64_t n = 0; n < N; ++n) {
        double ab = sched.alpha_bars[t_draws[n]];
        double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
        for (int64_t i = 0; i < stride; ++i)
            z_t.data[n * stride + i] = static_cast<T>(a * z0_batch.data[n * stride + i] +
                                                      b * eps_batch.data[n * stride + i]);
    }
    auto z_leaf = make_leaf(z_t, false);
    VarT<T> eps_hat;
    if (cond_batch)
        eps_hat = predict_noise_graph(g, z_leaf, t_draws, ids, make_leaf(*cond_batch, false), cfg);
    else
        eps_hat = base_predict_noise_graph(g, z_leaf, t_draws, ids, cfg);
    return mse(eps_hat, make_leaf(eps_batch, false));
}

// Spec-level operation on raw (I, I*, P) records with explicit draws.
inline double compute_loss(ModelBundle& bundle,
                           const std::vector<std::tuple<ImageSample, ImageSample, std::string>>& batch,
                           const std::vector<int>& t_draws, const std::vector<Tensor>& eps_draws,
                           const std::vector<bool>& null_mask = {}) {
    if (batch.empty()) throw ConfigError("compute_loss: empty batch");
    if (t_draws.size() != batch.size() || eps_draws.size() != batch.size())
        throw ConfigError("compute_loss: draw count mismatch");
    const auto& cfg = bundle.ucfg;
    int64_t N = static_cast<int64_t>(batch.size());
    int hw    = cfg.latent_hw;
    Tensor z0({N, cfg.latent_channels, hw, hw}), eps(z0.shape), cond(z0.shape);
    std::vector<std::vector<int>> ids;
    for (int64_t n = 0; n < N; ++n) {
        const auto& [I, I_star, P] = batch[n];
        Tensor tgt = encode(I_star, bundle.params, bundle.acfg);
        if (!eps_draws[n].same_shape(tgt)) throw ConfigError("compute_loss: eps shape mismatch");
        Tensor cl = encode(I, bundle.params, bundle.acfg);
        int64_t stride = tgt.numel();
        std::copy(tgt.data.begin(), tgt.data.end(), z0.data.begin() + n * stride);
        std::copy(eps_draws[n].data.begin(), eps_draws[n].data.end(), eps.data.begin() + n * stride);
        std::copy(cl.data.begin(), cl.data.end(), cond.data.begin() + n * stride);
        bool drop = !null_mask.empty() && null_mask[n];
        ids.push_back(drop ? bundle.vocab.null_ids(cfg.max_tokens)
                           : bundle.vocab.encode(P, cfg.max_tokens));
    }
    auto sched = bundle.schedule();
    GraphParamsT<float> g(bundle.params, false);
    auto loss = diffusion_loss_graph(g, cfg, z0, bundle.has_control() ? &cond : nullptr, ids, t_draws,
                                     eps, sched);
    return loss->val[0];
}

// ----------------------------------------------------------------------------
// dataset: precomputed latents + token ids (the autoencoder is frozen during
// diffusion training, so encoding once up front is free speedup)
// ----------------------------------------------------------------------------
struct DiffusionDataset {
    std::vector<Tensor> cond, tgt_action, tgt_state;
    std::vector<std::vector<int>> ids_action, ids_state;
    std::vector<std::string> category;
    int latent_ch = 0, latent_hw = 0;

    size_t size() const { return tgt_state.size(); }
};

inline DiffusionDataset build_dataset(ModelBundle& bundle, const std::filesystem::path& corpus_dir,
                                      const std::vector<FiveTuple>& tuples, bool with_cond) {
    DiffusionDataset ds;
    ds.latent_ch = bundle.acfg.c_lat;
    ds.latent_hw = bundle.acfg.latent_hw();
    const int bs = 32;
    int S        = bundle.acfg.img_size;
    auto encode_paths = [&](const std::function<const std::string&(const FiveTuple&)>& path_of,
                            std::vector<Tensor>& out) {
        for (size_t i0 = 0; i0 < tuples.size(); i0 += bs) {
            int n = static_cast<int>(std::min<size_t>(bs, tuples.size() - i0));
            Tensor batch({n, 3, S, S});
            for (int b = 0; b < n; ++b) {
                auto img = load_image(corpus_dir / path_of(tuples[i0 + b]));
                if (img.height() != S) throw ConfigError("dataset: image size mismatch");
                std::copy(img.pixels.data.begin(), img.pixels.data.end(),
                          batch.data.begin() + static_cast<size_t>(b) * 3 * S * S);
            }
            Tensor lat = encode_batch(bundle.params, batch, bundle.acfg);
            int64_t stride = lat.numel() / n;
            for (int b = 0; b < n; ++b) {
                Tensor one({ds.latent_ch, ds.latent_hw, ds.latent_hw});
                std::copy(lat.data.begin() + b * stride, lat.data.begin() + (b + 1) * stride,
                          one.data.begin());
                out.push_back(std::move(one));
            }
        }
    };
    encode_paths([](const FiveTuple& t) -> const std::string& { return t.path_action; }, ds.tgt_action);
    encode_paths([](const FiveTuple& t) -> const std::string& { return t.path_final; }, ds.tgt_state);
    if (with_cond)
        encode_paths([](const FiveTuple& t) -> const std::string& { return t.path_initial; }, ds.cond);
    for (const auto& t : tuples) {
        ds.ids_action.push_back(bundle.vocab.encode(t.prompt_action, bundle.ucfg.max_tokens));
        ds.ids_state.push_back(bundle.vocab.encode(t.prompt_state, bundle.ucfg.max_tokens));
        ds.category.push_back(t.category);
    }
    return ds;
}

// ----------------------------------------------------------------------------
// training loops
// ----------------------------------------------------------------------------
namespace trainerdetail {

struct BatchDraw {
    Tensor z0, eps, cond;
    std::vector<std::vector<int>> ids;
    std::vector<int> ts;
};

// assembles one batch deterministically from the rng stream
inline BatchDraw draw_batch(const DiffusionDataset& ds, const TrainConfig& cfg, int T, bool with_cond,
                            std::vector<size_t>& order, size_t& cursor, Rng& rng) {
    int bs = static_cast<int>(std::min<size_t>(cfg.batch_size, ds.size()));
    BatchDraw d;
    int64_t ch = ds.latent_ch, hw = ds.latent_hw;
    d.z0  = Tensor({bs, ch, hw, hw});
    d.eps = Tensor({bs, ch, hw, hw});
    if (with_cond) d.cond = Tensor({bs, ch, hw, hw});
    int64_t stride = ch * hw * hw;
    for (int b = 0; b < bs; ++b) {
        if (cursor >= order.size()) {
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, i - 1))]);
            cursor = 0;
        }
        size_t idx = order[cursor++];
        bool action;
        if (cfg.variant == "action")
            action = true;
        else if (cfg.variant == "state")
            action = false;
        else
            action = rng.bernoulli(0.5);  // joint consumes both pairs per tuple
        const Tensor& tgt = action ? ds.tgt_action[idx] : ds.tgt_state[idx];
        std::copy(tgt.data.begin(), tgt.data.end(), d.z0.data.begin() + b * stride);
        if (with_cond)
            std::copy(ds.cond[idx].data.begin(), ds.cond[idx].data.end(),
                      d.cond.data.begin() + b * stride);
        for (int64_t i = 0; i < stride; ++i)
            d.eps.data[b * stride + i] = static_cast<float>(rng.normal());
        d.ts.push_back(static_cast<int>(rng.uniform_int(1, T)));
        const auto& ids = action ? ds.ids_action[idx] : ds.ids_state[idx];
        bool drop       = rng.bernoulli(cfg.prompt_dropout);
        d.ids.push_back(drop ? std::vector<int>(ids.size(), Vocab::null_id) : ids);
    }
    return d;
}

}  // namespace trainerdetail

// Base pretraining: the text-conditioned denoiser learns target images with
// prompts, no image conditioning (the stand-in for the pretrained backbone).
inline LossCurve train_diffusion(ModelBundle& bundle, const DiffusionDataset& ds, const TrainConfig& cfg,
                                 const std::function<void(int, double)>& progress = nullptr,
                                 const std::function<void(int)>& checkpoint_hook = nullptr) {
    if (ds.size() == 0) throw ConfigError("train: empty dataset");
    bool with_cond = bundle.has_control();
    if (with_cond && ds.cond.empty()) throw ConfigError("train: dataset lacks conditioning latents");
    auto sched = bundle.schedule();
    Rng rng(mix_seed(cfg.seed, 0x12a1));
    std::vector<size_t> order(ds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();
    LossCurve curve;
    for (int step = 1; step <= cfg.steps; ++step) {
        auto d = trainerdetail::draw_batch(ds, cfg, bundle.sched_T, with_cond, order, cursor, rng);
        GraphParamsT<float> g(bundle.params, true);
        auto loss = diffusion_loss_graph(g, bundle.ucfg, d.z0, with_cond ? &d.cond : nullptr, d.ids,
                                         d.ts, d.eps, sched);
        backward(loss);
        g.harvest();
        bundle.params.adam_step(cfg.lr, step);
        bundle.params.zero_grads();
        curve.log(step, loss->val[0]);
        if (progress && step % cfg.log_every == 0) progress(step, loss->val[0]);
        if (checkpoint_hook && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0)
            checkpoint_hook(step);
    }
    return curve;
}

// ----------------------------------------------------------------------------
// checkpoint container: single file, version header, schedule metadata,
// config snapshot, named parameter groups
// ----------------------------------------------------------------------------
inline nlohmann::json ucfg_to_json(const UNetConfig& c) {
    return {{"latent_channels", c.latent_channels}, {"latent_hw", c.latent_hw}, {"widths", c.widths},
            {"blocks_per_level", c.blocks_per_level}, {"attn_levels", c.attn_levels}, {"heads", c.heads},
            {"time_dim", c.time_dim}, {"txt_dim", c.txt_dim}, {"max_tokens", c.max_tokens},
            {"vocab_size", c.vocab_size}, {"norm_groups", c.norm_groups}};
}

inline UNetConfig ucfg_from_json(const nlohmann::json& j) {
    UNetConfig c;
    c.latent_channels  = j.at("latent_channels");
    c.latent_hw        = j.at("latent_hw");
    c.widths           = j.at("widths").get<std::vector<int>>();
    c.blocks_per_level = j.at("blocks_per_level");
    c.attn_levels      = j.at("attn_levels");
    c.heads            = j.at("heads");
    c.time_dim         = j.at("time_dim");
    c.txt_dim          = j.at("txt_dim");
    c.max_tokens       = j.at("max_tokens");
    c.vocab_size       = j.at("vocab_size");
    c.norm_groups      = j.at("norm_groups");
    return c;
}

inline nlohmann::json acfg_to_json(const AEConfig& c) {
    return {{"img_size", c.img_size}, {"down_factor", c.down_factor}, {"c_lat", c.c_lat},
            {"base_ch", c.base_ch},   {"norm_groups", c.norm_groups}, {"scale", c.scale},
            {"kl_weight", c.kl_weight}};
}

inline AEConfig acfg_from_json(const nlohmann::json& j) {
    AEConfig c;
    c.img_size    = j.at("img_size");
    c.down_factor = j.at("down_factor");
    c.c_lat       = j.at("c_lat");
    c.base_ch     = j.at("base_ch");
    c.norm_groups = j.at("norm_groups");
    c.scale       = j.at("scale");
    c.kl_weight   = j.at("kl_weight");
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const ModelBundle& bundle, int64_t step,
                            const std::map<std::string, std::string>& config_snapshot = {}) {
    nlohmann::json meta;
    meta["format_version"] = 1;
    meta["ucfg"]           = ucfg_to_json(bundle.ucfg);
    meta["acfg"]           = acfg_to_json(bundle.acfg);
    meta["schedule"]       = {{"T", bundle.sched_T}, {"beta_start", bundle.beta_start},
                              {"beta_end", bundle.beta_end}};
    meta["task_variant"]   = bundle.task_variant;
    meta["step"]           = step;
    meta["config"]         = config_snapshot;
    meta["vocab"]          = bundle.vocab.words;
    meta["trainable_mask"] = bundle.params.trainable_mask();
    {
        auto tap_ch = bundle.ucfg.tap_channels();
        meta["taps"] = tap_ch;
    }
    std::string out = "GHWTCKPT";
    uint32_t ver    = 1;
    out.append(reinterpret_cast<const char*>(&ver), 4);
    std::string meta_str = meta.dump();
    uint64_t meta_len    = meta_str.size();
    out.append(reinterpret_cast<const char*>(&meta_len), 8);
    out += meta_str;
    uint64_t n_params = bundle.params.items.size();
    out.append(reinterpret_cast<const char*>(&n_params), 8);
    for (const auto& p : bundle.params.items) {
        uint32_t nl = static_cast<uint32_t>(p.name.size());
        out.append(reinterpret_cast<const char*>(&nl), 4);
        out += p.name;
        uint32_t gl = static_cast<uint32_t>(p.group.size());
        out.append(reinterpret_cast<const char*>(&gl), 4);
        out += p.group;
        out.push_back(p.trainable ? 1 : 0);
        uint32_t nd = static_cast<uint32_t>(p.value.shape.size());
        out.append(reinterpret_cast<const char*>(&nd), 4);
        for (int64_t d : p.value.shape) out.append(reinterpret_cast<const char*>(&d), 8);
        uint64_t numel = static_cast<uint64_t>(p.value.numel());
        out.append(reinterpret_cast<const char*>(&numel), 8);
        out.append(reinterpret_cast<const char*>(p.value.data.data()), numel * sizeof(float));
    }
    write_file(path, out);
    // plain-text token list alongside the checkpoint
    bundle.vocab.save(path.parent_path() / "vocab.txt");
}

inline ModelBundle load_checkpoint(const std::filesystem::path& path) {
    std::string bytes = read_file(path);
    if (bytes.size() < 20 || bytes.compare(0, 8, "GHWTCKPT") != 0)
        throw MissingArtifactError("not a checkpoint: " + path.string());
    size_t off   = 8;
    auto read_u32 = [&]() { uint32_t v; memcpy(&v, bytes.data() + off, 4); off += 4; return v; };
    auto read_u64 = [&]() { uint64_t v; memcpy(&v, bytes.data() + off, 8); off += 8; return v; };
    uint32_t ver = read_u32();
    if (ver != 1) throw MissingArtifactError("unsupported checkpoint version");
    uint64_t meta_len = read_u64();
    auto meta         = nlohmann::json::parse(bytes.substr(off, meta_len));
    off += meta_len;

    ModelBundle b;
    b.ucfg         = ucfg_from_json(meta.at("ucfg"));
    b.acfg         = acfg_from_json(meta.at("acfg"));
    b.sched_T      = meta.at("schedule").at("T");
    b.beta_start   = meta.at("schedule").at("beta_start");
    b.beta_end     = meta.at("schedule").at("beta_end");
    b.task_variant = meta.at("task_variant").get<std::string>();
    b.vocab        = Vocab::from_words(meta.at("vocab").get<std::vector<std::string>>());

    uint64_t n_params = read_u64();
    for (uint64_t i = 0; i < n_params; ++i) {
        uint32_t nl = read_u32();
        std::string name = bytes.substr(off, nl);
        off += nl;
        uint32_t gl = read_u32();
        std::string group = bytes.substr(off, gl);
        off += gl;
        bool trainable = bytes[off++] != 0;
        uint32_t nd    = read_u32();
        std::vector<int64_t> shape(nd);
        for (uint32_t d = 0; d < nd; ++d) shape[d] = static_cast<int64_t>(read_u64());
        uint64_t numel = read_u64();
        Tensor t(shape);
        memcpy(t.data.data(), bytes.data() + off, numel * sizeof(float));
        off += numel * sizeof(float);
        auto& p     = b.params.add(name, group, std::move(t));
        p.trainable = trainable;
    }
    return b;
}

// Bitwise per-group fingerprints, used for freeze-integrity verification.
inline std::map<std::string, std::string> group_fingerprints(const ParamStore& ps) {
    std::map<std::string, std::string> out;
    std::set<std::string> groups;
    for (const auto& p : ps.items) groups.insert(p.group);
    for (const auto& g : groups) out[g] = hex64(ps.group_fingerprint(g));
    return out;
}

}  // namespace genhowto

#endif
