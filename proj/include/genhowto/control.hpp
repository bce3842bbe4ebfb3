#ifndef GENHOWTO_CONTROL_HPP
#define GENHOWTO_CONTROL_HPP

#include "genhowto/autoencoder.hpp"
#include "genhowto/schedule.hpp"

namespace genhowto {

// Autoencoder + base U-Net (+ optional control branch) with the freeze split.
// Parameter groups: ae, time, prompt, enc, dec, ctrl, zero.
struct ModelBundle {
    UNetConfig ucfg;
    AEConfig acfg;
    int sched_T       = 256;
    double beta_start = 1e-4;
    double beta_end   = 0.026;
    std::string task_variant;  // action | state | joint; empty for a base model
    ParamStore params;
    Vocab vocab;

    bool has_control() const { return params.has("ctrl.enc.stem.w"); }

    DiffusionSchedule schedule() const { return make_schedule(sched_T, beta_start, beta_end); }
};

// Duplicates the base encoder into the control branch and adds one
// zero-initialized 1x1 projection per tap. Base encoder, autoencoder, prompt
// encoder, and timestep embedding are frozen; base decoder and control branch
// train.
template <typename T>
void assemble_control(ParamStoreT<T>& ps, const UNetConfig& cfg) {
    if (!ps.has("enc.stem.w")) throw MissingArtifactError("assemble: base encoder parameters missing");
    if (ps.has("ctrl.enc.stem.w")) throw ConfigError("assemble: control branch already present");
    // value copy of every encoder parameter
    std::vector<std::pair<std::string, TensorT<T>>> copies;
    for (const auto& p : ps.items)
        if (p.group == "enc") copies.push_back({"ctrl." + p.name, p.value});
    for (auto& [name, value] : copies) ps.add(name, "ctrl", std::move(value));
    auto tap_ch = cfg.tap_channels();
    for (size_t i = 0; i < tap_ch.size(); ++i) {
        ps.add(strf("zero.%zu.w", i), "zero", TensorT<T>::zeros({tap_ch[i], tap_ch[i], 1, 1}));
        ps.add(strf("zero.%zu.b", i), "zero", TensorT<T>::zeros({tap_ch[i]}));
    }
    ps.set_group_trainable("ae", false);
    ps.set_group_trainable("time", false);
    ps.set_group_trainable("prompt", false);
    ps.set_group_trainable("enc", false);
    ps.set_group_trainable("dec", true);
    ps.set_group_trainable("ctrl", true);
    ps.set_group_trainable("zero", true);
}

inline ModelBundle assemble_genhowto(const ModelBundle& base, const std::string& task_variant) {
    if (!base.params.has("enc.stem.w"))
        throw MissingArtifactError("assemble_genhowto: base model not trained/loaded");
    if (task_variant != "action" && task_variant != "state" && task_variant != "joint")
        throw ConfigError("assemble_genhowto: variant must be action|state|joint");
    ModelBundle out = base;
    out.task_variant = task_variant;
    assemble_control(out.params, out.ucfg);
    return out;
}

// Fresh bundle with autoencoder + base U-Net parameters (no control branch).
inline ModelBundle make_base_bundle(const AEConfig& acfg, UNetConfig ucfg, const Vocab& vocab,
                                    uint64_t seed) {
    if (acfg.latent_hw() != ucfg.latent_hw || acfg.c_lat != ucfg.latent_channels)
        throw ConfigError("make_base_bundle: latent geometry mismatch");
    ModelBundle b;
    b.acfg          = acfg;
    b.ucfg          = ucfg;
    b.ucfg.vocab_size = vocab.size();
    b.vocab         = vocab;
    Rng rng(mix_seed(seed, 0xb0d1e));
    register_autoencoder(b.params, b.acfg, rng);
    register_unet(b.params, b.ucfg, rng);
    return b;
}

// Optional instrumentation of the tap fusion, for additivity checks.
template <typename T>
struct TapTraceT {
    std::vector<TensorT<T>> base, control, projected, fused;
};

// Full image- and text-conditioned noise prediction: the control encoder
// consumes z_t summed with the clean conditioning latent; each tap is passed
// through its zero projection and added to the base tap before the decoder.
template <typename T>
VarT<T> predict_noise_graph(GraphParamsT<T>& g, VarT<T> z_t, const std::vector<int>& ts,
                            const std::vector<std::vector<int>>& prompt_ids, VarT<T> cond_latent,
                            const UNetConfig& cfg, TapTraceT<T>* trace = nullptr) {
    auto temb      = time_embedding(g, ts, cfg);
    auto ctx       = prompt_context(g, prompt_ids, cfg);
    auto taps_base = unet_encoder(g, z_t, temb, ctx, std::string("enc"), cfg);
    auto control_in = add(z_t, cond_latent);
    auto taps_ctrl  = unet_encoder(g, control_in, temb, ctx, std::string("ctrl.enc"), cfg);
    std::vector<VarT<T>> fused(taps_base.size());
    for (size_t i = 0; i < taps_base.size(); ++i) {
        auto projected = conv2d_p(g, taps_ctrl[i], strf("zero.%zu", i));
        fused[i]       = add(taps_base[i], projected);
        if (trace) {
            trace->base.push_back(taps_base[i]->val);
            trace->control.push_back(taps_ctrl[i]->val);
            trace->projected.push_back(projected->val);
            trace->fused.push_back(fused[i]->val);
        }
    }
    return unet_decoder(g, fused, temb, ctx, cfg);
}

// Single-sample operation: eps_theta(z_t, t, I, P).
inline Tensor predict_noise(ModelBundle& bundle, const Tensor& z_t, int t,
                            const PromptEmbedding& prompt, const ImageSample& cond_image,
                            TapTraceT<float>* trace = nullptr) {
    if (!bundle.has_control()) throw MissingArtifactError("predict_noise: bundle has no control branch");
    const auto& cfg = bundle.ucfg;
    if (t < 1 || t > bundle.sched_T) throw ConfigError("predict_noise: timestep out of range");
    if (z_t.shape != std::vector<int64_t>{cfg.latent_channels, cfg.latent_hw, cfg.latent_hw})
        throw ConfigError("predict_noise: latent shape mismatch");
    Tensor z   = z_t;
    z.shape    = {1, cfg.latent_channels, cfg.latent_hw, cfg.latent_hw};
    Tensor lat = encode(cond_image, bundle.params, bundle.acfg);
    lat.shape  = z.shape;
    GraphParamsT<float> g(bundle.params, false);
    auto out = predict_noise_graph(g, make_leaf(z, false), {t}, {prompt.token_ids},
                                   make_leaf(lat, false), cfg, trace);
    Tensor r = out->val;
    r.shape  = z_t.shape;
    return r;
}

}  // namespace genhowto

#endif
