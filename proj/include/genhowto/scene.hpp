#ifndef GENHOWTO_SCENE_HPP
#define GENHOWTO_SCENE_HPP

#include <set>

#include "genhowto/image.hpp"

namespace genhowto {

// ----------------------------------------------------------------------------
// Interaction categories. Each one defines an initial object, a transformation
// rule toward the final state, a tool/hand sprite shown during the action, and
// the caption templates for both phases.
// ----------------------------------------------------------------------------
inline const std::vector<std::string>& category_names() {
    static const std::vector<std::string> names = {
        "cut-fruit",    "fill-glass",  "peel-carrot", "paint-plank",
        "slice-bread",  "crack-egg",   "stack-blocks", "squeeze-lemon"};
    return names;
}

inline int category_index(const std::string& name) {
    const auto& names = category_names();
    for (size_t i = 0; i < names.size(); ++i)
        if (names[i] == name) return static_cast<int>(i);
    throw ConfigError("unknown category: " + name);
}

struct SceneSpec {
    int category      = 0;
    int background_id = 0;   // 0 wooden board, 1 marble countertop, 2 gray table
    int variant       = 0;   // object/color variant within the category
    double cx = 0.5, cy = 0.55;  // object anchor, relative coordinates
    double obj_scale = 1.0;
    double bg_shade  = 0.0;  // per-video static brightness offset
    bool jitter      = true; // <=2 px per-frame scene-content jitter
    uint64_t seed    = 0;
};

inline SceneSpec sample_scene_spec(int category, uint64_t rng_seed) {
    if (category < 0 || category >= static_cast<int>(category_names().size()))
        throw ConfigError("sample_scene_spec: unknown category");
    Rng rng(mix_seed(rng_seed, 0x5ce2e));
    SceneSpec s;
    s.category      = category;
    s.seed          = rng_seed;
    s.background_id = static_cast<int>(rng.uniform_int(0, 2));
    s.variant       = static_cast<int>(rng.uniform_int(0, 1));
    s.cx            = 0.5 + rng.uniform(-0.06, 0.06);
    s.cy            = 0.55 + rng.uniform(-0.05, 0.05);
    s.obj_scale     = rng.uniform(0.85, 1.15);
    s.bg_shade      = rng.uniform(-0.04, 0.04);
    return s;
}

inline SceneSpec sample_scene_spec(const std::string& category, uint64_t rng_seed) {
    return sample_scene_spec(category_index(category), rng_seed);
}

// ----------------------------------------------------------------------------
// captions
// ----------------------------------------------------------------------------
namespace scenedetail {

inline const char* bg_word(int id) {
    switch (id) {
        case 0: return "wooden board";
        case 1: return "marble countertop";
        default: return "gray table";
    }
}

struct Palette {
    float r, g, b;
};
inline Palette rgb(int r, int g, int b) {
    return {r / 127.5f - 1.0f, g / 127.5f - 1.0f, b / 127.5f - 1.0f};
}

inline std::string obj_word(int category, int variant) {
    switch (category) {
        case 0: return variant == 0 ? "red apple" : "green apple";
        case 1: return variant == 0 ? "orange juice" : "milk";
        case 2: return "carrot";
        case 3: return variant == 0 ? "blue" : "green";
        case 4: return "bread";
        case 5: return "egg";
        case 6: return variant == 0 ? "red" : "yellow";
        case 7: return "lemon";
        default: return "object";
    }
}

}  // namespace scenedetail

enum class Phase { Action, State };

inline std::string caption(const SceneSpec& spec, Phase phase) {
    using namespace scenedetail;
    std::string obj = obj_word(spec.category, spec.variant);
    std::string bg  = bg_word(spec.background_id);
    bool action     = phase == Phase::Action;
    switch (spec.category) {
        case 0:
            return action ? "a person cutting a " + obj + " on a " + bg
                          : obj + " halves on a " + bg;
        case 1:
            return action ? "a person pouring " + obj + " into a glass on a " + bg
                          : "a glass full of " + obj + " on a " + bg;
        case 2:
            return action ? "a person peeling a carrot with a peeler on a " + bg
                          : "a peeled carrot on a " + bg;
        case 3:
            return action ? "a person painting a plank " + obj + " on a " + bg
                          : "a plank painted " + obj + " on a " + bg;
        case 4:
            return action ? "a person slicing a loaf of bread on a " + bg
                          : "slices of bread on a " + bg;
        case 5:
            return action ? "a person cracking an egg into a bowl on a " + bg
                          : "a cracked egg with yolk in a bowl on a " + bg;
        case 6:
            return action ? "a person stacking " + obj + " blocks on a " + bg
                          : "a tower of " + obj + " blocks on a " + bg;
        case 7:
            return action ? "a person squeezing a lemon into a bowl on a " + bg
                          : "a squeezed lemon and a bowl of juice on a " + bg;
        default:
            throw ConfigError("caption: unknown category");
    }
}

inline std::vector<std::string> tokenize(const std::string& text) {
    std::string clean;
    for (char c : lower(text))
        clean += (isalnum(static_cast<unsigned char>(c)) ? c : ' ');
    std::vector<std::string> out;
    for (const auto& w : split(clean, ' '))
        if (!w.empty()) out.push_back(w);
    return out;
}

// Every word producible by the caption grammar, plus the special tokens.
// Index 0/1/2 are <pad>/<unk>/<null> by construction.
inline std::vector<std::string> vocabulary() {
    std::set<std::string> words;
    for (int cat = 0; cat < static_cast<int>(category_names().size()); ++cat)
        for (int variant = 0; variant < 2; ++variant)
            for (int bg = 0; bg < 3; ++bg) {
                SceneSpec s;
                s.category      = cat;
                s.variant       = variant;
                s.background_id = bg;
                for (Phase ph : {Phase::Action, Phase::State})
                    for (const auto& w : tokenize(caption(s, ph))) words.insert(w);
            }
    std::vector<std::string> vocab = {"<pad>", "<unk>", "<null>"};
    vocab.insert(vocab.end(), words.begin(), words.end());
    return vocab;
}

// ----------------------------------------------------------------------------
// rendering
// ----------------------------------------------------------------------------
namespace scenedetail {

inline void draw_background(ImageSample& img, const SceneSpec& spec) {
    int S = img.height();
    Painter p{&img, nullptr};
    float sh = static_cast<float>(spec.bg_shade);
    auto add = [sh](Palette c, float d = 0.0f) {
        return Palette{c.r + sh + d, c.g + sh + d, c.b + sh + d};
    };
    if (spec.background_id == 0) {
        Palette base = rgb(139, 94, 60);
        for (int y = 0; y < S; ++y) {
            float grad = 0.03f * (static_cast<float>(y) / S - 0.5f);
            Palette c  = add(base, grad);
            for (int x = 0; x < S; ++x) p.pixel(x, y, c.r, c.g, c.b);
        }
        Palette dark = add(rgb(110, 72, 44));
        for (int k = 1; k <= 3; ++k) {
            int y = S * k / 4;
            p.rect(0, y, S, y + std::max(1, S / 64), dark.r, dark.g, dark.b);
        }
    } else if (spec.background_id == 1) {
        Palette base = rgb(210, 212, 218);
        for (int y = 0; y < S; ++y) {
            Palette c = add(base, 0.02f * (static_cast<float>(y) / S - 0.5f));
            for (int x = 0; x < S; ++x) p.pixel(x, y, c.r, c.g, c.b);
        }
        Palette vein = add(rgb(185, 188, 198));
        p.line(0.1 * S, 0.0, 0.45 * S, S, 0.02 * S + 1, vein.r, vein.g, vein.b);
        p.line(0.7 * S, 0.0, 0.95 * S, S, 0.015 * S + 1, vein.r, vein.g, vein.b);
    } else {
        Palette base = rgb(122, 124, 130);
        for (int y = 0; y < S; ++y) {
            Palette c = add(base, 0.05f * (static_cast<float>(y) / S - 0.5f));
            for (int x = 0; x < S; ++x) p.pixel(x, y, c.r, c.g, c.b);
        }
    }
}

// Draw scene content at object progress v in [0,1]; tool/hand sprites appear
// only when with_tool is set. jx/jy is the per-frame content jitter in pixels.
inline void draw_content(ImageSample& img, ByteImage& mask, const SceneSpec& spec, double v,
                         bool with_tool, double jx, double jy) {
    int S = img.height();
    Painter p{&img, &mask};
    double cx = spec.cx * S + jx, cy = spec.cy * S + jy;
    double sc = spec.obj_scale * S;
    Palette hand  = rgb(225, 180, 140);
    Palette steel = rgb(170, 175, 185);
    Palette dark  = rgb(60, 60, 66);

    switch (spec.category) {
        case 0: {  // whole fruit -> halves
            Palette skin  = spec.variant == 0 ? rgb(200, 40, 40) : rgb(95, 170, 50);
            Palette flesh = rgb(245, 235, 190);
            Palette stem  = rgb(90, 60, 30);
            double r      = 0.16 * sc;
            double gap    = 0.10 * sc * v;
            if (v < 0.999) {
                p.circle(cx, cy, r, skin.r, skin.g, skin.b);
                p.rect(cx - 0.02 * sc, cy - r - 0.05 * sc, cx + 0.02 * sc, cy - r + 0.01 * sc,
                       stem.r, stem.g, stem.b);
                if (v > 0.0)
                    p.rect(cx - gap * 0.5, cy - r, cx + gap * 0.5, cy + r, flesh.r, flesh.g, flesh.b);
            } else {
                p.ellipse(cx - r * 0.7 - gap, cy, r * 0.62, r * 0.95, skin.r, skin.g, skin.b);
                p.ellipse(cx + r * 0.7 + gap, cy, r * 0.62, r * 0.95, skin.r, skin.g, skin.b);
                p.ellipse(cx - r * 0.55 - gap, cy, r * 0.4, r * 0.75, flesh.r, flesh.g, flesh.b);
                p.ellipse(cx + r * 0.55 + gap, cy, r * 0.4, r * 0.75, flesh.r, flesh.g, flesh.b);
            }
            if (with_tool) {
                p.rect(cx - 0.03 * sc, cy - 0.52 * sc, cx + 0.03 * sc, cy - 0.18 * sc,
                       steel.r, steel.g, steel.b);
                p.rect(cx - 0.05 * sc, cy - 0.64 * sc, cx + 0.05 * sc, cy - 0.52 * sc,
                       dark.r, dark.g, dark.b);
            }
            break;
        }
        case 1: {  // empty glass -> full glass
            Palette body   = rgb(200, 205, 212);
            Palette wall   = rgb(168, 182, 192);
            Palette liquid = spec.variant == 0 ? rgb(240, 160, 30) : rgb(246, 246, 240);
            double w = 0.14 * sc, h = 0.24 * sc;
            p.rect(cx - w, cy - h, cx + w, cy + h, body.r, body.g, body.b);
            double level = 0.78 * v;
            if (level > 0.0)
                p.rect(cx - w, cy + h - 2 * h * level, cx + w, cy + h, liquid.r, liquid.g, liquid.b);
            p.rect(cx - w, cy - h, cx - w + 0.025 * sc, cy + h, wall.r, wall.g, wall.b);
            p.rect(cx + w - 0.025 * sc, cy - h, cx + w, cy + h, wall.r, wall.g, wall.b);
            p.rect(cx - w, cy + h - 0.025 * sc, cx + w, cy + h, wall.r, wall.g, wall.b);
            if (with_tool) {
                p.rect(cx - 0.05 * sc, cy - 0.62 * sc, cx + 0.08 * sc, cy - 0.47 * sc,
                       dark.r, dark.g, dark.b);
                p.line(cx, cy - 0.47 * sc, cx, cy - h, 0.03 * sc, liquid.r, liquid.g, liquid.b);
            }
            break;
        }
        case 2: {  // carrot peel
            Palette peel = rgb(190, 90, 20);
            Palette core = rgb(245, 150, 40);
            Palette leaf = rgb(60, 140, 50);
            double w = 0.30 * sc, h = 0.07 * sc;
            p.ellipse(cx, cy, w, h, peel.r, peel.g, peel.b);
            if (v > 0.0)
                p.ellipse(cx - w * (1.0 - v) * 0.5, cy, w * (0.2 + 0.8 * v) - w * (1.0 - v) * 0.0,
                          h * 0.8, core.r, core.g, core.b);
            p.ellipse(cx + w * 1.05, cy, 0.05 * sc, 0.035 * sc, leaf.r, leaf.g, leaf.b);
            if (v >= 0.999) {
                p.line(cx - w * 0.6, cy + 0.16 * sc, cx + w * 0.2, cy + 0.19 * sc, 0.025 * sc,
                       peel.r, peel.g, peel.b);
                p.line(cx - w * 0.3, cy + 0.24 * sc, cx + w * 0.5, cy + 0.22 * sc, 0.025 * sc,
                       peel.r, peel.g, peel.b);
            }
            if (with_tool) {
                p.rect(cx - 0.06 * sc, cy - 0.36 * sc, cx + 0.06 * sc, cy - 0.12 * sc,
                       steel.r, steel.g, steel.b);
                p.rect(cx - 0.03 * sc, cy - 0.30 * sc, cx + 0.03 * sc, cy - 0.22 * sc,
                       dark.r, dark.g, dark.b);
            }
            break;
        }
        case 3: {  // plank painting
            Palette wood  = rgb(205, 175, 125);
            Palette grain = rgb(175, 145, 100);
            Palette paint = spec.variant == 0 ? rgb(50, 90, 220) : rgb(40, 170, 80);
            double w = 0.34 * sc, h = 0.10 * sc;
            p.rect(cx - w, cy - h, cx + w, cy + h, wood.r, wood.g, wood.b);
            p.rect(cx - w, cy - 0.015 * sc, cx + w, cy + 0.015 * sc, grain.r, grain.g, grain.b);
            if (v > 0.0)
                p.rect(cx - w, cy - h, cx - w + 2 * w * v, cy + h, paint.r, paint.g, paint.b);
            if (with_tool) {
                double bx = cx - w + 2 * w * v;
                p.rect(bx - 0.03 * sc, cy - 0.42 * sc, bx + 0.03 * sc, cy - 0.22 * sc,
                       dark.r, dark.g, dark.b);
                p.rect(bx - 0.045 * sc, cy - 0.22 * sc, bx + 0.045 * sc, cy - 0.10 * sc,
                       paint.r, paint.g, paint.b);
            }
            break;
        }
        case 4: {  // bread loaf -> slices
            Palette crust = rgb(185, 125, 55);
            Palette crumb = rgb(235, 205, 150);
            double w = 0.26 * sc, h = 0.11 * sc;
            if (v < 0.999) {
                p.rect(cx - w, cy - h, cx + w, cy + h, crust.r, crust.g, crust.b);
                p.ellipse(cx - w, cy, 0.06 * sc, h, crust.r, crust.g, crust.b);
                int cuts = static_cast<int>(v * 3.0 + 1e-9);
                for (int i = 0; i < cuts; ++i)
                    p.rect(cx + w - (i + 1) * 0.09 * sc, cy - h, cx + w - (i + 1) * 0.09 * sc + 0.015 * sc,
                           cy + h, crumb.r, crumb.g, crumb.b);
            } else {
                for (int i = 0; i < 4; ++i) {
                    double x = cx - w + i * 0.16 * sc;
                    double yo = (i % 2 == 0 ? 0.0 : 0.03) * sc;
                    p.rect(x, cy - h + yo, x + 0.11 * sc, cy + h + yo, crumb.r, crumb.g, crumb.b);
                    p.rect(x, cy - h + yo, x + 0.11 * sc, cy - h + yo + 0.02 * sc,
                           crust.r, crust.g, crust.b);
                }
            }
            if (with_tool) {
                p.rect(cx + 0.05 * sc, cy - 0.50 * sc, cx + 0.11 * sc, cy - 0.16 * sc,
                       steel.r, steel.g, steel.b);
                p.rect(cx + 0.03 * sc, cy - 0.62 * sc, cx + 0.13 * sc, cy - 0.50 * sc,
                       dark.r, dark.g, dark.b);
            }
            break;
        }
        case 5: {  // egg cracked into bowl
            Palette shell = rgb(240, 235, 218);
            Palette yolk  = rgb(250, 200, 40);
            Palette bowl  = rgb(75, 95, 115);
            double bw = 0.24 * sc;
            p.ellipse(cx, cy + 0.12 * sc, bw, 0.12 * sc, bowl.r, bowl.g, bowl.b);
            p.ellipse(cx, cy + 0.07 * sc, bw * 0.8, 0.07 * sc, rgb(95, 120, 140).r,
                      rgb(95, 120, 140).g, rgb(95, 120, 140).b);
            if (v < 0.999) {
                double ey = cy - 0.18 * sc - 0.10 * sc * (1.0 - v);
                p.ellipse(cx, ey, 0.085 * sc, 0.11 * sc, shell.r, shell.g, shell.b);
                if (v > 0.0)
                    p.line(cx - 0.06 * sc, ey + 0.02 * sc, cx + 0.06 * sc, ey - 0.02 * sc,
                           0.015 * sc + 1, dark.r, dark.g, dark.b);
            } else {
                p.ellipse(cx, cy + 0.05 * sc, 0.07 * sc, 0.05 * sc, yolk.r, yolk.g, yolk.b);
                p.ellipse(cx - bw - 0.06 * sc, cy + 0.12 * sc, 0.06 * sc, 0.08 * sc,
                          shell.r, shell.g, shell.b);
                p.ellipse(cx + bw + 0.06 * sc, cy + 0.12 * sc, 0.06 * sc, 0.08 * sc,
                          shell.r, shell.g, shell.b);
            }
            if (with_tool)
                p.circle(cx + 0.16 * sc, cy - 0.32 * sc, 0.07 * sc, hand.r, hand.g, hand.b);
            break;
        }
        case 6: {  // scattered blocks -> tower
            Palette block = spec.variant == 0 ? rgb(210, 60, 50) : rgb(230, 200, 40);
            Palette edge  = spec.variant == 0 ? rgb(160, 40, 35) : rgb(180, 155, 30);
            double b      = 0.11 * sc;
            auto draw_block = [&](double x, double y) {
                p.rect(x - b, y - b, x + b, y + b, block.r, block.g, block.b);
                p.rect(x - b, y - b, x + b, y - b + 0.02 * sc, edge.r, edge.g, edge.b);
            };
            double base_y = cy + 0.18 * sc;
            draw_block(cx - 0.26 * sc * (1.0 - v) - 0.0 * v, base_y);  // slides to center
            double bx2 = cx + 0.26 * sc * (1.0 - v);
            double by2 = base_y - (2 * b) * v;
            draw_block(bx2, by2);
            double bx3 = cx + 0.05 * sc * (1.0 - v);
            double by3 = (cy + 0.34 * sc) * (1.0 - v) + (base_y - 4 * b) * v;
            draw_block(bx3, by3);
            if (with_tool) {
                p.circle(bx3, by3 - 0.12 * sc, 0.07 * sc, hand.r, hand.g, hand.b);
                p.rect(bx3 - 0.035 * sc, by3 - 0.30 * sc, bx3 + 0.035 * sc, by3 - 0.12 * sc,
                       hand.r, hand.g, hand.b);
            }
            break;
        }
        case 7: {  // lemon squeezed into bowl
            Palette lemon = rgb(235, 215, 60);
            Palette juice = rgb(246, 222, 80);
            Palette bowl  = rgb(85, 100, 125);
            double bw = 0.20 * sc;
            p.ellipse(cx + 0.14 * sc, cy + 0.14 * sc, bw, 0.11 * sc, bowl.r, bowl.g, bowl.b);
            if (v > 0.0)
                p.ellipse(cx + 0.14 * sc, cy + 0.12 * sc, bw * 0.7, 0.05 * sc,
                          juice.r, juice.g, juice.b);
            if (v < 0.999) {
                double squash = 1.0 - 0.45 * v;
                double ly     = cy - 0.16 * sc - 0.08 * sc * (1.0 - v);
                p.ellipse(cx - 0.10 * sc, ly, 0.11 * sc, 0.085 * sc * squash,
                          lemon.r, lemon.g, lemon.b);
                if (v > 0.0)
                    p.line(cx - 0.02 * sc, ly + 0.06 * sc, cx + 0.10 * sc, cy + 0.05 * sc,
                           0.02 * sc, juice.r, juice.g, juice.b);
            } else {
                p.ellipse(cx - 0.24 * sc, cy + 0.16 * sc, 0.09 * sc, 0.045 * sc,
                          lemon.r, lemon.g, lemon.b);
                p.ellipse(cx - 0.24 * sc, cy + 0.06 * sc, 0.09 * sc, 0.045 * sc,
                          lemon.r, lemon.g, lemon.b);
            }
            if (with_tool && v < 0.999)
                p.circle(cx - 0.10 * sc, cy - 0.34 * sc, 0.07 * sc, hand.r, hand.g, hand.b);
            break;
        }
        default:
            throw ConfigError("draw_content: unknown category");
    }
}

}  // namespace scenedetail

// One frame of a synthetic video. Jitter is derived from (spec.seed, frame)
// so any frame can be rendered in isolation.
inline void render_frame(const SceneSpec& spec, int frame, int n_frames, int img_size,
                         ImageSample& out_img, ByteImage& out_mask) {
    out_img  = ImageSample::zeros(img_size, img_size);
    out_mask = ByteImage(img_size, img_size, 1);
    scenedetail::draw_background(out_img, spec);
    double u = n_frames <= 1 ? 0.0 : static_cast<double>(frame) / (n_frames - 1);
    double v;
    bool tool;
    if (u < 0.3) {
        v    = 0.0;
        tool = false;
    } else if (u < 0.7) {
        v    = (u - 0.3) / 0.4;
        tool = true;
    } else {
        v    = 1.0;
        tool = false;
    }
    int amp   = spec.jitter ? std::max(1, img_size / 32) : 0;
    double jx = 0.0, jy = 0.0;
    if (amp > 0) {
        Rng jrng(mix_seed(spec.seed, 0x7177e6, static_cast<uint64_t>(frame)));
        jx = static_cast<double>(jrng.uniform_int(-amp, amp));
        jy = static_cast<double>(jrng.uniform_int(-amp, amp));
    }
    scenedetail::draw_content(out_img, out_mask, spec, v, tool, jx, jy);
    out_img.clamp_range();
}

// Per-frame score triples for one synthetic video: smoothed bumps centered on
// the ground-truth indices plus uniform noise, simulating the external
// frame-state scorer the corpus stands in for.
struct ScoreTrack {
    int n_frames = 0;
    Tensor scores;  // (3, n_frames) in [0,1]: initial / action / final channels
    std::array<int, 3> gt_indices = {0, 0, 0};
    std::vector<ImageSample> frames;
    std::vector<ByteImage> masks;
};

inline void rescore_track(ScoreTrack& track, double noise_level, uint64_t noise_seed) {
    int n = track.n_frames;
    track.scores = Tensor::zeros({3, n});
    double sigma = std::max(1.0, n / 10.0);
    Rng rng(mix_seed(noise_seed, 0x5c07e));
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < n; ++i) {
            double d    = (i - track.gt_indices[c]) / sigma;
            double bump = std::exp(-0.5 * d * d);
            double s    = bump + rng.uniform(-noise_level, noise_level);
            track.scores.at(c, i) = static_cast<float>(std::min(1.0, std::max(0.0, s)));
        }
}

inline ScoreTrack render_sequence(const SceneSpec& spec, int n_frames, double noise_level,
                                  int img_size = 64, bool with_frames = true) {
    if (n_frames < 3) throw ConfigError("render_sequence: need n_frames >= 3");
    ScoreTrack track;
    track.n_frames = n_frames;
    track.gt_indices = {static_cast<int>(std::lround(0.15 * (n_frames - 1))),
                        static_cast<int>(std::lround(0.5 * (n_frames - 1))),
                        static_cast<int>(std::lround(0.85 * (n_frames - 1)))};
    if (with_frames) {
        track.frames.resize(n_frames);
        track.masks.resize(n_frames);
        for (int i = 0; i < n_frames; ++i)
            render_frame(spec, i, n_frames, img_size, track.frames[i], track.masks[i]);
    }
    rescore_track(track, noise_level, mix_seed(spec.seed, 1));
    return track;
}

}  // namespace genhowto

#endif
