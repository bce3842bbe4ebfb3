#ifndef GENHOWTO_DENOISER_HPP
#define GENHOWTO_DENOISER_HPP

#include "genhowto/nn.hpp"
#include "genhowto/scene.hpp"

namespace genhowto {

// ----------------------------------------------------------------------------
// vocabulary + tokenization
// ----------------------------------------------------------------------------
struct Vocab {
    std::vector<std::string> words;
    std::unordered_map<std::string, int> index;

    static constexpr int pad_id  = 0;
    static constexpr int unk_id  = 1;
    static constexpr int null_id = 2;

    static Vocab build() {
        Vocab v;
        v.words = vocabulary();
        for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
        return v;
    }

    static Vocab from_words(std::vector<std::string> words) {
        Vocab v;
        v.words = std::move(words);
        for (size_t i = 0; i < v.words.size(); ++i) v.index[v.words[i]] = static_cast<int>(i);
        return v;
    }

    int size() const { return static_cast<int>(words.size()); }

    // unknown words map to <unk>; truncates/pads to max_tokens
    std::vector<int> encode(const std::string& text, int max_tokens) const {
        std::vector<int> ids;
        for (const auto& w : tokenize(text)) {
            auto it = index.find(w);
            ids.push_back(it == index.end() ? unk_id : it->second);
            if (static_cast<int>(ids.size()) == max_tokens) break;
        }
        while (static_cast<int>(ids.size()) < max_tokens) ids.push_back(pad_id);
        return ids;
    }

    std::vector<int> null_ids(int max_tokens) const { return std::vector<int>(max_tokens, null_id); }

    void save(const std::filesystem::path& path) const {
        std::string out;
        for (const auto& w : words) out += w + "\n";
        write_file(path, out);
    }

    static Vocab load(const std::filesystem::path& path) {
        std::vector<std::string> words;
        for (const auto& line : split(read_file(path), '\n'))
            if (!trim(line).empty()) words.push_back(trim(line));
        return from_words(std::move(words));
    }
};

// Raw (pre-contextualization) embedding sequence; the denoiser applies its
// single prompt self-attention layer on top of this before cross-attention.
struct PromptEmbedding {
    Tensor token_vectors;  // (L_max, D_txt)
    bool is_null = false;
    std::vector<int> token_ids;
};

// ----------------------------------------------------------------------------
// U-Net configuration
// ----------------------------------------------------------------------------
struct UNetConfig {
    int latent_channels = 4;
    int latent_hw       = 8;
    std::vector<int> widths = {64, 128, 256};
    int blocks_per_level = 2;
    int attn_levels      = 2;  // attention at this many lowest resolutions + middle
    int heads            = 4;
    int time_dim         = 128;
    int txt_dim          = 128;
    int max_tokens       = 16;
    int vocab_size       = 0;
    int norm_groups      = 8;

    int levels() const { return static_cast<int>(widths.size()); }
    bool attn_at(int level) const { return level >= levels() - attn_levels; }
    int tap_count() const { return levels() * blocks_per_level + 1; }

    std::vector<int> tap_channels() const {
        std::vector<int> ch;
        for (int l = 0; l < levels(); ++l)
            for (int b = 0; b < blocks_per_level; ++b) ch.push_back(widths[l]);
        ch.push_back(widths.back());  // middle block
        return ch;
    }
};

// ----------------------------------------------------------------------------
// parameter registration (order here defines serialization order)
// ----------------------------------------------------------------------------
template <typename T>
void register_res_block(ParamStoreT<T>& ps, const std::string& pfx, const std::string& group,
                        int cin, int cout, const UNetConfig& cfg, Rng& rng) {
    register_norm(ps, pfx + ".n1", group, cin);
    register_conv(ps, pfx + ".c1", group, cin, cout, 3, rng);
    register_linear(ps, pfx + ".t", group, cfg.time_dim, cout, rng);
    register_norm(ps, pfx + ".n2", group, cout);
    register_conv(ps, pfx + ".c2", group, cout, cout, 3, rng);
    if (cin != cout) register_conv(ps, pfx + ".s", group, cin, cout, 1, rng);
}

template <typename T>
void register_attn_unit(ParamStoreT<T>& ps, const std::string& pfx, const std::string& group,
                        int channels, const UNetConfig& cfg, Rng& rng) {
    register_norm(ps, pfx + ".ln1", group, channels);
    register_attention(ps, pfx + ".sa", group, channels, channels, rng);
    register_norm(ps, pfx + ".ln2", group, channels);
    register_attention(ps, pfx + ".ca", group, channels, cfg.txt_dim, rng);
}

template <typename T>
void register_unet_encoder(ParamStoreT<T>& ps, const std::string& pfx, const std::string& group,
                           const UNetConfig& cfg, Rng& rng) {
    register_conv(ps, pfx + ".stem", group, cfg.latent_channels, cfg.widths[0], 3, rng);
    for (int l = 0; l < cfg.levels(); ++l) {
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            // the stem and each downsample conv already produce widths[l]
            std::string bp = pfx + strf(".l%d.b%d", l, b);
            register_res_block(ps, bp, group, cfg.widths[l], cfg.widths[l], cfg, rng);
            if (cfg.attn_at(l)) register_attn_unit(ps, bp + ".attn", group, cfg.widths[l], cfg, rng);
        }
        if (l + 1 < cfg.levels())
            register_conv(ps, pfx + strf(".down%d", l), group, cfg.widths[l], cfg.widths[l + 1], 3, rng);
    }
    int wl = cfg.widths.back();
    register_res_block(ps, pfx + ".mid.r1", group, wl, wl, cfg, rng);
    register_attn_unit(ps, pfx + ".mid.attn", group, wl, cfg, rng);
    register_res_block(ps, pfx + ".mid.r2", group, wl, wl, cfg, rng);
}

template <typename T>
void register_unet(ParamStoreT<T>& ps, const UNetConfig& cfg, Rng& rng) {
    // timestep embedding MLP
    register_linear(ps, "time.l1", "time", cfg.time_dim, cfg.time_dim, rng);
    register_linear(ps, "time.l2", "time", cfg.time_dim, cfg.time_dim, rng);
    // prompt encoder: token + positional embeddings, one self-attention layer
    ps.add("prompt.tok", "prompt", TensorT<T>::randn({cfg.vocab_size, cfg.txt_dim}, rng, 0.02));
    ps.add("prompt.pos", "prompt", TensorT<T>::randn({cfg.max_tokens, cfg.txt_dim}, rng, 0.02));
    register_norm(ps, "prompt.ln1", "prompt", cfg.txt_dim);
    register_attention(ps, "prompt.attn", "prompt", cfg.txt_dim, cfg.txt_dim, rng);
    register_norm(ps, "prompt.ln2", "prompt", cfg.txt_dim);
    // encoder (down path + middle)
    register_unet_encoder(ps, "enc", "enc", cfg, rng);
    // decoder (up path + output head)
    for (int l = cfg.levels() - 1; l >= 0; --l) {
        for (int b = cfg.blocks_per_level - 1; b >= 0; --b) {
            std::string bp = strf("dec.l%d.b%d", l, b);
            register_res_block(ps, bp, "dec", 2 * cfg.widths[l], cfg.widths[l], cfg, rng);
            if (cfg.attn_at(l)) register_attn_unit(ps, bp + ".attn", "dec", cfg.widths[l], cfg, rng);
        }
        if (l > 0)
            register_conv(ps, strf("dec.up%d", l), "dec", cfg.widths[l], cfg.widths[l - 1], 3, rng);
    }
    register_norm(ps, "dec.head.n", "dec", cfg.widths[0]);
    register_conv(ps, "dec.head.c", "dec", cfg.widths[0], cfg.latent_channels, 3, rng, /*zero_init=*/true);
}

// ----------------------------------------------------------------------------
// forward passes
// ----------------------------------------------------------------------------

// encode_prompt: deterministic table lookup, truncates/pads to L_max.
template <typename T>
PromptEmbedding encode_prompt_t(const std::string& text, const ParamStoreT<T>& ps, const Vocab& vocab,
                                const UNetConfig& cfg) {
    PromptEmbedding out;
    out.is_null   = trim(text).empty();
    out.token_ids = out.is_null ? vocab.null_ids(cfg.max_tokens) : vocab.encode(text, cfg.max_tokens);
    const auto& table = ps.at("prompt.tok").value;
    out.token_vectors = Tensor::zeros({cfg.max_tokens, cfg.txt_dim});
    for (int l = 0; l < cfg.max_tokens; ++l)
        for (int d = 0; d < cfg.txt_dim; ++d)
            out.token_vectors.at(l, d) = static_cast<float>(table.at(out.token_ids[l], d));
    return out;
}

inline PromptEmbedding encode_prompt(const std::string& text, const ParamStore& ps, const Vocab& vocab,
                                     const UNetConfig& cfg) {
    return encode_prompt_t(text, ps, vocab, cfg);
}

// contextualized prompt states [N, L, D_txt]
template <typename T>
VarT<T> prompt_context(GraphParamsT<T>& g, const std::vector<std::vector<int>>& ids, const UNetConfig& cfg) {
    auto e  = embed(g["prompt.tok"], ids);
    e       = add_pos_ld(e, g["prompt.pos"]);
    auto n1 = layer_norm_p(g, e, std::string("prompt.ln1"));
    auto h  = add(e, attention(g, n1, n1, std::string("prompt.attn"), cfg.heads));
    return layer_norm_p(g, h, std::string("prompt.ln2"));
}

// [N, time_dim] embedding of integer timesteps
template <typename T>
VarT<T> time_embedding(GraphParamsT<T>& g, const std::vector<int>& ts, const UNetConfig& cfg) {
    auto sinus = make_leaf(sinusoidal_embedding<T>(ts, cfg.time_dim), false);
    auto h     = silu(linear_p(g, sinus, std::string("time.l1")));
    return linear_p(g, h, std::string("time.l2"));
}

// largest divisor of c not exceeding the preferred group count
inline int64_t norm_groups_for(int64_t c, int64_t preferred) {
    for (int64_t g = std::min(c, preferred); g > 1; --g)
        if (c % g == 0) return g;
    return 1;
}

template <typename T>
VarT<T> res_block(GraphParamsT<T>& g, VarT<T> x, VarT<T> temb, const std::string& pfx,
                  const UNetConfig& cfg) {
    int64_t cin  = x->val.shape[1];
    int64_t cout = g.store->at(pfx + ".c1.w").value.shape[0];
    auto h = conv2d_p(g, silu(group_norm_p(g, x, pfx + ".n1", norm_groups_for(cin, cfg.norm_groups))),
                      pfx + ".c1");
    h      = add_bias_nc(h, linear_p(g, silu(temb), pfx + ".t"));
    h      = conv2d_p(g, silu(group_norm_p(g, h, pfx + ".n2", norm_groups_for(cout, cfg.norm_groups))),
                      pfx + ".c2");
    auto skip = cin == cout ? x : conv2d_p(g, x, pfx + ".s");
    return add(skip, h);
}

template <typename T>
VarT<T> attn_unit(GraphParamsT<T>& g, VarT<T> x, VarT<T> ctx, const std::string& pfx,
                  const UNetConfig& cfg) {
    int64_t H = x->val.shape[2], W = x->val.shape[3];
    auto xs = nchw_to_nlc(x);
    auto n1 = layer_norm_p(g, xs, pfx + ".ln1");
    auto h  = add(xs, attention(g, n1, n1, pfx + ".sa", cfg.heads));
    h       = add(h, attention(g, layer_norm_p(g, h, pfx + ".ln2"), ctx, pfx + ".ca", cfg.heads));
    return nlc_to_nchw(h, H, W);
}

// Down path + middle. Emits one tap per residual unit plus the middle block;
// this tap list is the fusion contract the control branch attaches to.
template <typename T>
std::vector<VarT<T>> unet_encoder(GraphParamsT<T>& g, VarT<T> z, VarT<T> temb, VarT<T> ctx,
                                  const std::string& pfx, const UNetConfig& cfg) {
    std::vector<VarT<T>> taps;
    auto h = conv2d_p(g, z, pfx + ".stem");
    for (int l = 0; l < cfg.levels(); ++l) {
        for (int b = 0; b < cfg.blocks_per_level; ++b) {
            std::string bp = pfx + strf(".l%d.b%d", l, b);
            h              = res_block(g, h, temb, bp, cfg);
            if (cfg.attn_at(l)) h = attn_unit(g, h, ctx, bp + ".attn", cfg);
            taps.push_back(h);
        }
        if (l + 1 < cfg.levels()) h = conv2d_p(g, h, pfx + strf(".down%d", l), 2);
    }
    h = res_block(g, h, temb, pfx + ".mid.r1", cfg);
    h = attn_unit(g, h, ctx, pfx + ".mid.attn", cfg);
    h = res_block(g, h, temb, pfx + ".mid.r2", cfg);
    taps.push_back(h);
    return taps;
}

// Up path + output head, consuming the (possibly fused) taps.
template <typename T>
VarT<T> unet_decoder(GraphParamsT<T>& g, const std::vector<VarT<T>>& taps, VarT<T> temb, VarT<T> ctx,
                     const UNetConfig& cfg) {
    assert(static_cast<int>(taps.size()) == cfg.tap_count());
    auto h = taps.back();  // middle
    for (int l = cfg.levels() - 1; l >= 0; --l) {
        for (int b = cfg.blocks_per_level - 1; b >= 0; --b) {
            std::string bp = strf("dec.l%d.b%d", l, b);
            h              = concat_ch(h, taps[l * cfg.blocks_per_level + b]);
            h              = res_block(g, h, temb, bp, cfg);
            if (cfg.attn_at(l)) h = attn_unit(g, h, ctx, bp + ".attn", cfg);
        }
        if (l > 0) h = conv2d_p(g, upsample_nearest2x(h), strf("dec.up%d", l));
    }
    h = silu(group_norm_p(g, h, std::string("dec.head.n"), cfg.norm_groups));
    return conv2d_p(g, h, std::string("dec.head.c"));
}

// Base text- and time-conditioned noise prediction (no image conditioning).
template <typename T>
VarT<T> base_predict_noise_graph(GraphParamsT<T>& g, VarT<T> z_t, const std::vector<int>& ts,
                                 const std::vector<std::vector<int>>& prompt_ids, const UNetConfig& cfg) {
    for (int t : ts)
        if (t < 1) throw ConfigError("base_predict_noise: timestep out of range");
    auto temb = time_embedding(g, ts, cfg);
    auto ctx  = prompt_context(g, prompt_ids, cfg);
    auto taps = unet_encoder(g, z_t, temb, ctx, std::string("enc"), cfg);
    return unet_decoder(g, taps, temb, ctx, cfg);
}

// single-sample convenience wrapper
template <typename T>
TensorT<T> base_predict_noise(ParamStoreT<T>& ps, const TensorT<T>& z_t, int t,
                              const std::vector<int>& prompt_ids, const UNetConfig& cfg) {
    if (t < 1) throw ConfigError("base_predict_noise: timestep out of range");
    TensorT<T> z = z_t;
    z.shape      = {1, cfg.latent_channels, cfg.latent_hw, cfg.latent_hw};
    GraphParamsT<T> g(ps, false);
    auto out = base_predict_noise_graph(g, make_leaf(z, false), {t}, {prompt_ids}, cfg);
    TensorT<T> r = out->val;
    r.shape      = z_t.shape;
    return r;
}

}  // namespace genhowto

#endif
