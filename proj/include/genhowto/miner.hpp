#ifndef GENHOWTO_MINER_HPP
#define GENHOWTO_MINER_HPP

#include <algorithm>
#include <functional>

#include "genhowto/scene.hpp"

namespace genhowto {

struct MinerConfig {
    double keep_fraction = 0.9;  // 0.9 curated-style, 0.3 uncurated-style
    int n_seeds          = 9;
    int dedupe_window    = 2;
};

struct TripletSelection {
    int i = 0, j = 0, k = 0;
    double confidence = 0.0;
};

// Ordering-constrained joint maximizer: argmax over i<j<k of
// s_init[i] + s_act[j] + s_fin[k], via prefix-max dynamic programming.
// Ties break toward the lexicographically smallest (i, j, k).
inline TripletSelection select_triplet(const ScoreTrack& track) {
    int n = track.n_frames;
    if (n < 3) throw ConfigError("select_triplet: need at least 3 frames");
    const Tensor& s = track.scores;

    // best_i[j]: max s_init over [0, j), earliest index on ties
    std::vector<double> best_i_val(n);
    std::vector<int> best_i_idx(n);
    double cur = -1e300;
    int cur_i  = 0;
    for (int j = 1; j < n; ++j) {
        double v = s.at(0, j - 1);
        if (v > cur) {
            cur   = v;
            cur_i = j - 1;
        }
        best_i_val[j] = cur;
        best_i_idx[j] = cur_i;
    }
    // best pair (i, j) over j in [1, k); earliest (i, j) on ties
    double pair_val = -1e300;
    int pair_i = 0, pair_j = 0;
    TripletSelection best;
    double best_val = -1e300;
    for (int k = 2; k < n; ++k) {
        int j        = k - 1;
        double pv    = best_i_val[j] + s.at(1, j);
        if (pv > pair_val) {
            pair_val = pv;
            pair_i   = best_i_idx[j];
            pair_j   = j;
        }
        double total = pair_val + s.at(2, k);
        if (total > best_val) {
            best_val        = total;
            best.i          = pair_i;
            best.j          = pair_j;
            best.k          = k;
            best.confidence = total;
        }
    }
    return best;
}

// Keeps exactly floor(keep_fraction * N) highest-confidence entries, original
// relative order preserved among the kept; boundary ties resolve toward
// earlier entries.
template <typename Rec>
std::vector<Rec> filter_by_percentile(const std::vector<Rec>& tuples, double keep_fraction,
                                      const std::function<double(const Rec&)>& confidence) {
    if (!(keep_fraction > 0.0) || keep_fraction > 1.0)
        throw ConfigError("filter_by_percentile: need 0 < keep_fraction <= 1");
    size_t keep = static_cast<size_t>(std::floor(keep_fraction * static_cast<double>(tuples.size())));
    std::vector<size_t> order(tuples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return confidence(tuples[a]) > confidence(tuples[b]);
    });
    order.resize(keep);
    std::sort(order.begin(), order.end());
    std::vector<Rec> out;
    out.reserve(keep);
    for (size_t idx : order) out.push_back(tuples[idx]);
    return out;
}

// Reruns selection on n_seeds noisy re-scorings of the same video and drops
// selections whose indices all agree with an already-kept one within the
// dedupe window. Always yields between 1 and n_seeds triplets.
inline std::vector<std::pair<TripletSelection, uint64_t>> mine_with_seeds(
    const std::function<ScoreTrack(uint64_t)>& track_generator, int n_seeds, int dedupe_window) {
    if (n_seeds < 1) throw ConfigError("mine_with_seeds: need n_seeds >= 1");
    std::vector<std::pair<TripletSelection, uint64_t>> kept;
    for (int s = 0; s < n_seeds; ++s) {
        ScoreTrack track = track_generator(static_cast<uint64_t>(s));
        auto sel         = select_triplet(track);
        bool dup         = false;
        for (const auto& [other, seed] : kept)
            if (std::abs(sel.i - other.i) <= dedupe_window && std::abs(sel.j - other.j) <= dedupe_window &&
                std::abs(sel.k - other.k) <= dedupe_window) {
                dup = true;
                break;
            }
        if (!dup) kept.push_back({sel, static_cast<uint64_t>(s)});
    }
    return kept;
}

// Ablation baseline: frames at 10% / 50% / 90% of the sequence.
inline std::array<int, 3> uniform_baseline(int n_frames) {
    if (n_frames < 3) throw ConfigError("uniform_baseline: need at least 3 frames");
    int i = static_cast<int>(std::floor(0.1 * n_frames));
    int j = static_cast<int>(std::floor(0.5 * n_frames));
    int k = std::min(static_cast<int>(std::floor(0.9 * n_frames)), n_frames - 1);
    if (j <= i) j = i + 1;
    if (k <= j) k = j + 1;
    assert(k < n_frames);
    return {i, j, k};
}

}  // namespace genhowto

#endif
