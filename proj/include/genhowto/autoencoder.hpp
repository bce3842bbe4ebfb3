#ifndef GENHOWTO_AUTOENCODER_HPP
#define GENHOWTO_AUTOENCODER_HPP

#include "genhowto/denoiser.hpp"
#include "genhowto/image.hpp"

namespace genhowto {

// Small convolutional autoencoder providing the latent space. Encoder outputs
// posterior mean + logvar; encode() returns the mean scaled by the corpus
// calibration constant, decode() inverts the scale and squashes to [-1, 1].
struct AEConfig {
    int img_size    = 64;
    int down_factor = 8;  // power of two
    int c_lat       = 4;
    int base_ch     = 32;
    int norm_groups = 8;
    double scale    = 1.0;  // calibration constant, set after training
    double kl_weight = 1e-6;

    int n_downs() const {
        int f = down_factor, n = 0;
        while (f > 1) {
            f >>= 1;
            ++n;
        }
        return n;
    }
    int ch_at(int depth) const { return base_ch << std::min(depth, 2); }
    int latent_hw() const { return img_size / down_factor; }
};

template <typename T>
void register_autoencoder(ParamStoreT<T>& ps, const AEConfig& cfg, Rng& rng) {
    int nd = cfg.n_downs();
    register_conv(ps, "ae.enc.stem", "ae", 3, cfg.ch_at(0), 3, rng);
    for (int d = 0; d < nd; ++d) {
        register_conv(ps, strf("ae.enc.down%d", d), "ae", cfg.ch_at(d), cfg.ch_at(d + 1), 3, rng);
        register_norm(ps, strf("ae.enc.n%d", d), "ae", cfg.ch_at(d + 1));
        register_conv(ps, strf("ae.enc.c%d", d), "ae", cfg.ch_at(d + 1), cfg.ch_at(d + 1), 3, rng);
    }
    register_conv(ps, "ae.enc.head", "ae", cfg.ch_at(nd), 2 * cfg.c_lat, 3, rng);

    register_conv(ps, "ae.dec.stem", "ae", cfg.c_lat, cfg.ch_at(nd), 3, rng);
    for (int d = nd - 1; d >= 0; --d) {
        register_conv(ps, strf("ae.dec.up%d", d), "ae", cfg.ch_at(d + 1), cfg.ch_at(d), 3, rng);
        register_norm(ps, strf("ae.dec.n%d", d), "ae", cfg.ch_at(d));
        register_conv(ps, strf("ae.dec.c%d", d), "ae", cfg.ch_at(d), cfg.ch_at(d), 3, rng);
    }
    register_norm(ps, "ae.dec.headn", "ae", cfg.ch_at(0));
    register_conv(ps, "ae.dec.head", "ae", cfg.ch_at(0), 3, 3, rng);
}

// returns {mu, logvar}, each [N, c_lat, hw, hw]
template <typename T>
std::pair<VarT<T>, VarT<T>> ae_encode_graph(GraphParamsT<T>& g, VarT<T> x, const AEConfig& cfg) {
    int nd = cfg.n_downs();
    auto h = conv2d_p(g, x, std::string("ae.enc.stem"));
    for (int d = 0; d < nd; ++d) {
        h = conv2d_p(g, h, strf("ae.enc.down%d", d), 2);
        h = silu(group_norm_p(g, h, strf("ae.enc.n%d", d), norm_groups_for(cfg.ch_at(d + 1), cfg.norm_groups)));
        h = add(h, conv2d_p(g, h, strf("ae.enc.c%d", d)));
    }
    auto out    = conv2d_p(g, h, std::string("ae.enc.head"));
    auto mu     = slice_ch(out, 0, cfg.c_lat);
    auto logvar = clamp_op(slice_ch(out, cfg.c_lat, 2 * cfg.c_lat), -10.0, 6.0);
    return {mu, logvar};
}

template <typename T>
VarT<T> ae_decode_graph(GraphParamsT<T>& g, VarT<T> z, const AEConfig& cfg) {
    int nd = cfg.n_downs();
    auto h = conv2d_p(g, z, std::string("ae.dec.stem"));
    for (int d = nd - 1; d >= 0; --d) {
        h = conv2d_p(g, upsample_nearest2x(h), strf("ae.dec.up%d", d));
        h = silu(group_norm_p(g, h, strf("ae.dec.n%d", d), norm_groups_for(cfg.ch_at(d), cfg.norm_groups)));
        h = add(h, conv2d_p(g, h, strf("ae.dec.c%d", d)));
    }
    h = silu(group_norm_p(g, h, std::string("ae.dec.headn"), norm_groups_for(cfg.ch_at(0), cfg.norm_groups)));
    return tanh_op(conv2d_p(g, h, std::string("ae.dec.head")));
}

// batched inference: images [N,3,S,S] -> calibrated latents [N,c,hw,hw]
template <typename T>
TensorT<T> encode_batch(ParamStoreT<T>& ps, const TensorT<T>& images, const AEConfig& cfg) {
    if (images.ndim() != 4 || images.shape[1] != 3 || images.shape[2] != cfg.img_size ||
        images.shape[3] != cfg.img_size)
        throw ConfigError("encode: image shape mismatch");
    GraphParamsT<T> g(ps, false);
    auto [mu, logvar] = ae_encode_graph(g, make_leaf(images, false), cfg);
    TensorT<T> out    = mu->val;
    for (auto& v : out.data) v = static_cast<T>(v * cfg.scale);
    return out;
}

template <typename T>
TensorT<T> decode_batch(ParamStoreT<T>& ps, const TensorT<T>& latents, const AEConfig& cfg) {
    if (latents.ndim() != 4 || latents.shape[1] != cfg.c_lat || latents.shape[2] != cfg.latent_hw() ||
        latents.shape[3] != cfg.latent_hw())
        throw ConfigError("decode: latent shape mismatch");
    TensorT<T> z = latents;
    for (auto& v : z.data) v = static_cast<T>(v / cfg.scale);
    GraphParamsT<T> g(ps, false);
    return ae_decode_graph(g, make_leaf(z, false), cfg)->val;
}

// spec-level single-image operations
inline Tensor encode(const ImageSample& image, ParamStore& ps, const AEConfig& cfg) {
    if (image.pixels.ndim() != 3 || image.pixels.shape[0] != 3)
        throw ConfigError("encode: expected a (3, H, W) image");
    Tensor batch = image.pixels;
    batch.shape  = {1, 3, image.height(), image.width()};
    Tensor out   = encode_batch(ps, batch, cfg);
    out.shape    = {cfg.c_lat, cfg.latent_hw(), cfg.latent_hw()};
    return out;
}

inline ImageSample decode(const Tensor& latent, ParamStore& ps, const AEConfig& cfg) {
    if (latent.shape != std::vector<int64_t>{cfg.c_lat, cfg.latent_hw(), cfg.latent_hw()})
        throw ConfigError("decode: latent shape mismatch");
    Tensor batch = latent;
    batch.shape  = {1, cfg.c_lat, cfg.latent_hw(), cfg.latent_hw()};
    ImageSample img;
    img.pixels       = decode_batch(ps, batch, cfg);
    img.pixels.shape = {3, cfg.img_size, cfg.img_size};
    return img;
}

// ----------------------------------------------------------------------------
// training
// ----------------------------------------------------------------------------
struct AETrainConfig {
    int steps      = 3000;
    int batch_size = 16;
    double lr      = 1e-3;
    uint64_t seed  = 0;
    int log_every  = 200;
};

struct LossCurve {
    std::vector<std::pair<int64_t, double>> points;

    void log(int64_t step, double loss) { points.push_back({step, loss}); }

    void save_csv(const std::filesystem::path& path) const {
        std::string out = "step,loss\n";
        for (auto [s, l] : points) out += strf("%lld,%.8f\n", static_cast<long long>(s), l);
        write_file(path, out);
    }

    double smoothed_at(int64_t step, double alpha = 0.05) const {
        double ema = points.empty() ? 0.0 : points.front().second;
        double at  = ema;
        for (auto [s, l] : points) {
            ema = (1 - alpha) * ema + alpha * l;
            if (s <= step) at = ema;
        }
        return at;
    }
};

// Reconstruction MSE plus a tiny KL regularizer keeping the latent
// well-conditioned. Deterministic given the seed.
inline LossCurve train_autoencoder(ParamStore& ps, AEConfig& cfg, const std::vector<ImageSample>& corpus,
                                   const AETrainConfig& tcfg,
                                   const std::function<void(int, double)>& progress = nullptr) {
    if (corpus.empty()) throw ConfigError("train_autoencoder: empty corpus");
    Rng rng(mix_seed(tcfg.seed, 0xae));
    LossCurve curve;
    std::vector<size_t> order(corpus.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // trigger shuffle on first step

    int S = cfg.img_size;
    for (int step = 1; step <= tcfg.steps; ++step) {
        int bs = static_cast<int>(std::min<size_t>(tcfg.batch_size, corpus.size()));
        Tensor batch({bs, 3, S, S});
        for (int b = 0; b < bs; ++b) {
            if (cursor >= order.size()) {
                // deterministic Fisher-Yates reshuffle per epoch
                for (size_t i = order.size(); i > 1; --i)
                    std::swap(order[i - 1], order[static_cast<size_t>(rng.uniform_int(0, i - 1))]);
                cursor = 0;
            }
            const auto& img = corpus[order[cursor++]];
            std::copy(img.pixels.data.begin(), img.pixels.data.end(),
                      batch.data.begin() + static_cast<size_t>(b) * 3 * S * S);
        }
        GraphParamsT<float> g(ps, true);
        auto x            = make_leaf(batch, false);
        auto [mu, logvar] = ae_encode_graph(g, x, cfg);
        // z = mu + exp(0.5*logvar) * eps
        Tensor eps_t = Tensor::randn(mu->val.shape, rng);
        auto z       = add(mu, mul(exp_op(scale(logvar, 0.5)), make_leaf(eps_t, false)));
        auto recon   = ae_decode_graph(g, z, cfg);
        auto rec_l   = mse(recon, x);
        // KL(q || N(0,1)) = -0.5 * mean(1 + logvar - mu^2 - exp(logvar))
        auto kl = scale(mean_all(add_scalar(sub(add(mul(mu, mu), exp_op(logvar)), logvar), -1.0)), 0.5);
        auto loss = add(rec_l, scale(kl, cfg.kl_weight));
        backward(loss);
        g.harvest();
        ps.adam_step(tcfg.lr, step);
        ps.zero_grads();
        curve.log(step, loss->val[0]);
        if (progress && step % tcfg.log_every == 0) progress(step, loss->val[0]);
    }
    return curve;
}

// scale = 1 / std of raw encoder means over the corpus; also reports the
// per-channel stds after calibration
inline std::vector<double> calibrate_latent_scale(ParamStore& ps, AEConfig& cfg,
                                                  const std::vector<ImageSample>& corpus) {
    if (corpus.empty()) throw ConfigError("calibrate: empty corpus");
    int S = cfg.img_size, C = cfg.c_lat, hw = cfg.latent_hw();
    std::vector<double> sum(C, 0.0), sum2(C, 0.0);
    int64_t count = 0;
    const int bs  = 32;
    for (size_t i0 = 0; i0 < corpus.size(); i0 += bs) {
        int n = static_cast<int>(std::min<size_t>(bs, corpus.size() - i0));
        Tensor batch({n, 3, S, S});
        for (int b = 0; b < n; ++b)
            std::copy(corpus[i0 + b].pixels.data.begin(), corpus[i0 + b].pixels.data.end(),
                      batch.data.begin() + static_cast<size_t>(b) * 3 * S * S);
        GraphParamsT<float> g(ps, false);
        auto [mu, logvar] = ae_encode_graph(g, make_leaf(batch, false), cfg);
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < C; ++c)
                for (int i = 0; i < hw * hw; ++i) {
                    double v = mu->val.data[((static_cast<size_t>(b) * C + c) * hw * hw) + i];
                    sum[c] += v;
                    sum2[c] += v * v;
                }
        count += static_cast<int64_t>(n) * hw * hw;
    }
    double total_var = 0;
    std::vector<double> ch_std(C);
    for (int c = 0; c < C; ++c) {
        double m  = sum[c] / count;
        double v  = sum2[c] / count - m * m;
        ch_std[c] = std::sqrt(std::max(v, 1e-12));
        total_var += v;
    }
    cfg.scale = 1.0 / std::sqrt(std::max(total_var / C, 1e-12));
    for (auto& s : ch_std) s *= cfg.scale;
    return ch_std;
}

}  // namespace genhowto

#endif
