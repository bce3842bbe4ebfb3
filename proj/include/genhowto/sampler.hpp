#ifndef GENHOWTO_SAMPLER_HPP
#define GENHOWTO_SAMPLER_HPP

#include "genhowto/trainer.hpp"

namespace genhowto {

struct SampleParams {
    int n_steps   = 50;
    int skip      = 2;
    double w      = 7.5;  // classifier-free guidance scale
    uint64_t seed = 0;
};

// ----------------------------------------------------------------------------
// Batched DDIM generation with classifier-free guidance, initialized from the
// noise-perturbed latent of each input image rather than pure Gaussian noise.
// Per-image noise comes from per-image seeds, so results are independent of
// how calls are batched across a run.
// ----------------------------------------------------------------------------
inline std::vector<ImageSample> generate_batch(ModelBundle& bundle,
                                               const std::vector<ImageSample>& inputs,
                                               const std::vector<std::string>& prompts,
                                               const SampleParams& params,
                                               const std::vector<uint64_t>& seeds,
                                               const std::vector<int>* timesteps_override = nullptr) {
    if (!bundle.has_control()) throw MissingArtifactError("generate: checkpoint has no control branch");
    if (inputs.empty() || inputs.size() != prompts.size() || inputs.size() != seeds.size())
        throw ConfigError("generate: inputs/prompts/seeds size mismatch");
    const auto& cfg = bundle.ucfg;
    auto sched      = bundle.schedule();
    std::vector<int> ts = timesteps_override ? *timesteps_override
                                             : sampling_timesteps(sched, params.n_steps, params.skip);

    int64_t N = static_cast<int64_t>(inputs.size());
    int S     = bundle.acfg.img_size;
    int hw    = cfg.latent_hw;
    Tensor imgs({N, 3, S, S});
    for (int64_t n = 0; n < N; ++n)
        std::copy(inputs[n].pixels.data.begin(), inputs[n].pixels.data.end(),
                  imgs.data.begin() + n * 3 * S * S);
    Tensor cond = encode_batch(bundle.params, imgs, bundle.acfg);

    // ids: conditional + unconditional rows
    std::vector<std::vector<int>> ids_cond, ids_null;
    for (int64_t n = 0; n < N; ++n) {
        ids_cond.push_back(trim(prompts[n]).empty() ? bundle.vocab.null_ids(cfg.max_tokens)
                                                    : bundle.vocab.encode(prompts[n], cfg.max_tokens));
        ids_null.push_back(bundle.vocab.null_ids(cfg.max_tokens));
    }

    Tensor z = cond;
    if (!ts.empty()) {
        int t_head = ts.front();
        Tensor eps(z.shape);
        int64_t stride = z.numel() / N;
        for (int64_t n = 0; n < N; ++n) {
            Rng rng(mix_seed(seeds[n], 0x9a17));
            for (int64_t i = 0; i < stride; ++i)
                eps.data[n * stride + i] = static_cast<float>(rng.normal());
        }
        z = add_noise(z, eps, t_head, sched);
        for (size_t step = 0; step < ts.size(); ++step) {
            int t      = ts[step];
            int t_prev = step + 1 < ts.size() ? ts[step + 1] : 0;
            std::vector<int> t_batch(N, t);
            GraphParamsT<float> g(bundle.params, false);
            auto z_leaf   = make_leaf(z, false);
            auto cond_leaf = make_leaf(cond, false);
            Tensor eps_c = predict_noise_graph(g, z_leaf, t_batch, ids_cond, cond_leaf, cfg)->val;
            Tensor eps_hat;
            if (params.w == 1.0) {
                eps_hat = eps_c;
            } else {
                GraphParamsT<float> g2(bundle.params, false);
                Tensor eps_u = predict_noise_graph(g2, make_leaf(z, false), t_batch, ids_null,
                                                   make_leaf(cond, false), cfg)->val;
                eps_hat = cfg_combine(eps_c, eps_u, params.w);
            }
            z = ddim_step(z, eps_hat, t, t_prev, sched);
        }
    }
    Tensor out = decode_batch(bundle.params, z, bundle.acfg);
    std::vector<ImageSample> results(N);
    for (int64_t n = 0; n < N; ++n) {
        results[n].pixels = Tensor({3, S, S});
        std::copy(out.data.begin() + n * 3 * S * S, out.data.begin() + (n + 1) * 3 * S * S,
                  results[n].pixels.data.begin());
    }
    return results;
}

// Single-image generation; deterministic per (inputs, seed, checkpoint).
inline ImageSample generate(ModelBundle& bundle, const ImageSample& input, const std::string& prompt,
                            const SampleParams& params) {
    return generate_batch(bundle, {input}, {prompt}, params, {params.seed})[0];
}

// Recurrent chained generation: output[k] = generate(output[k-1], prompts[k]).
inline std::vector<ImageSample> generate_chain(ModelBundle& bundle, const ImageSample& input,
                                               const std::vector<std::string>& prompts,
                                               const SampleParams& params) {
    if (prompts.empty()) throw ConfigError("generate_chain: empty prompt list");
    std::vector<ImageSample> outputs;
    ImageSample cur = input;
    for (size_t k = 0; k < prompts.size(); ++k) {
        SampleParams p = params;
        p.seed         = mix_seed(params.seed, 0xc4a1, k);
        cur            = generate(bundle, cur, prompts[k], p);
        outputs.push_back(cur);
    }
    return outputs;
}

// Start-noise sweep: for each fraction f the sampling is initialized at the
// schedule timestep nearest round(f*T) (ties toward larger t), restricted to
// the standard descending timestep grid.
struct SweepPoint {
    double fraction = 0;
    ImageSample image;
    double background_mse = 0;
};

inline std::vector<SweepPoint> noise_sweep(ModelBundle& bundle, const ImageSample& input,
                                           const std::string& prompt, const std::vector<double>& fractions,
                                           const SampleParams& params, const ByteImage* bg_mask = nullptr) {
    auto sched   = bundle.schedule();
    auto ts_full = sampling_timesteps(sched, params.n_steps, 0);
    std::vector<SweepPoint> out;
    for (double f : fractions) {
        if (!(f > 0.0) || f > 1.0) throw ConfigError("noise_sweep: fractions must lie in (0, 1]");
        int t_target = static_cast<int>(std::llround(f * sched.T));
        // nearest grid timestep, ties toward larger t
        std::vector<int> ts;
        int best = -1;
        for (int t : ts_full) {
            if (best < 0 || std::abs(t - t_target) < std::abs(best - t_target) ||
                (std::abs(t - t_target) == std::abs(best - t_target) && t > best))
                best = t;
        }
        for (int t : ts_full)
            if (t <= best) ts.push_back(t);
        if (t_target == 0) ts.clear();
        SweepPoint pt;
        pt.fraction = f;
        pt.image = generate_batch(bundle, {input}, {prompt}, params, {params.seed}, &ts)[0];
        if (bg_mask)
            pt.background_mse = background_mse(pt.image, input, *bg_mask);
        else
            pt.background_mse = image_mse(pt.image, input);
        out.push_back(std::move(pt));
    }
    return out;
}

// JSON sidecar recording the full sampling provenance for one generation.
inline nlohmann::json generation_sidecar(const std::string& prompt, const SampleParams& params,
                                         const std::string& checkpoint_name, uint64_t seed) {
    return nlohmann::json{{"prompt", prompt},
                          {"n_steps", params.n_steps},
                          {"skip", params.skip},
                          {"w", params.w},
                          {"seed", seed},
                          {"checkpoint", checkpoint_name},
                          {"version", kVersion}};
}

}  // namespace genhowto

#endif
