#ifndef GENHOWTO_EVALUATOR_HPP
#define GENHOWTO_EVALUATOR_HPP

#include <Eigen/Eigenvalues>

#include "genhowto/sampler.hpp"

namespace genhowto {

// ----------------------------------------------------------------------------
// feature extraction: calibrated latent, mean-pooled 2x spatially, flattened
// ----------------------------------------------------------------------------
inline Tensor features_of_images(ModelBundle& bundle, const std::vector<ImageSample>& images) {
    if (images.empty()) return Tensor({0, 0});
    int S = bundle.acfg.img_size, C = bundle.acfg.c_lat, hw = bundle.acfg.latent_hw();
    int ph = hw / 2, D = C * ph * ph;
    Tensor out({static_cast<int64_t>(images.size()), D});
    const int bs = 32;
    for (size_t i0 = 0; i0 < images.size(); i0 += bs) {
        int n = static_cast<int>(std::min<size_t>(bs, images.size() - i0));
        Tensor batch({n, 3, S, S});
        for (int b = 0; b < n; ++b)
            std::copy(images[i0 + b].pixels.data.begin(), images[i0 + b].pixels.data.end(),
                      batch.data.begin() + static_cast<size_t>(b) * 3 * S * S);
        Tensor lat = encode_batch(bundle.params, batch, bundle.acfg);
        for (int b = 0; b < n; ++b)
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < ph; ++y)
                    for (int x = 0; x < ph; ++x) {
                        double s = 0;
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                s += lat.at(b, c, 2 * y + dy, 2 * x + dx);
                        out.at(static_cast<int64_t>(i0) + b, (c * ph + y) * ph + x) =
                            static_cast<float>(s / 4.0);
                    }
    }
    return out;
}

// ----------------------------------------------------------------------------
// multinomial logistic regression, L2-regularized, full-batch Adam
// ----------------------------------------------------------------------------
struct LinearClassifier {
    Tensor W;  // [K, D]
    Tensor b;  // [K]
    int n_classes = 0, dim = 0;

    std::vector<double> logits(const float* x) const {
        std::vector<double> out(n_classes);
        for (int k = 0; k < n_classes; ++k) {
            double s = b[k];
            for (int d = 0; d < dim; ++d) s += static_cast<double>(W.at(k, d)) * x[d];
            out[k] = s;
        }
        return out;
    }

    int predict(const float* x) const {
        auto l    = logits(x);
        int best  = 0;
        for (int k = 1; k < n_classes; ++k)
            if (l[k] > l[best]) best = k;
        return best;
    }
};

inline LinearClassifier train_linear_classifier(const Tensor& features, const std::vector<int>& labels,
                                                uint64_t seed, double l2 = 1e-3, int iters = 400,
                                                double lr = 0.1) {
    int64_t N = features.shape[0], D = features.shape[1];
    if (N == 0 || static_cast<int64_t>(labels.size()) != N)
        throw ConfigError("classifier: labels/features mismatch");
    int K = *std::max_element(labels.begin(), labels.end()) + 1;
    std::vector<int64_t> counts(K, 0);
    for (int l : labels) ++counts[l];
    if (K < 2) throw ConfigError("classifier: need at least 2 classes");
    for (int k = 0; k < K; ++k)
        if (counts[k] == 0) throw ConfigError("classifier: class without samples");

    LinearClassifier cls;
    cls.n_classes = K;
    cls.dim       = static_cast<int>(D);
    Rng rng(mix_seed(seed, 0xc1a55));
    cls.W = Tensor::randn({K, D}, rng, 1e-3);
    cls.b = Tensor::zeros({K});

    Tensor mW = Tensor::zeros({K, D}), vW = Tensor::zeros({K, D});
    Tensor mb = Tensor::zeros({K}), vb = Tensor::zeros({K});
    std::vector<double> probs(K);
    Tensor gW({K, D});
    Tensor gb({K});
    for (int it = 1; it <= iters; ++it) {
        std::fill(gW.data.begin(), gW.data.end(), 0.0f);
        std::fill(gb.data.begin(), gb.data.end(), 0.0f);
        for (int64_t n = 0; n < N; ++n) {
            auto l     = cls.logits(features.ptr() + n * D);
            double mx  = *std::max_element(l.begin(), l.end());
            double sum = 0;
            for (int k = 0; k < K; ++k) {
                probs[k] = std::exp(l[k] - mx);
                sum += probs[k];
            }
            for (int k = 0; k < K; ++k) {
                double g = probs[k] / sum - (labels[n] == k ? 1.0 : 0.0);
                gb[k] += static_cast<float>(g / N);
                const float* x = features.ptr() + n * D;
                for (int64_t d = 0; d < D; ++d) gW.at(k, d) += static_cast<float>(g / N * x[d]);
            }
        }
        for (int64_t i = 0; i < K * D; ++i) gW[i] += static_cast<float>(2.0 * l2 * cls.W[i]);
        double bc1 = 1.0 - std::pow(0.9, it), bc2 = 1.0 - std::pow(0.999, it);
        auto adam = [&](Tensor& p, Tensor& m, Tensor& v, const Tensor& g) {
            for (int64_t i = 0; i < p.numel(); ++i) {
                m[i] = static_cast<float>(0.9 * m[i] + 0.1 * g[i]);
                v[i] = static_cast<float>(0.999 * v[i] + 0.001 * g[i] * g[i]);
                p[i] = static_cast<float>(p[i] - lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8));
            }
        };
        adam(cls.W, mW, vW, gW);
        adam(cls.b, mb, vb, gb);
    }
    return cls;
}

inline double classifier_accuracy(const LinearClassifier& cls, const Tensor& features,
                                  const std::vector<int>& labels) {
    int64_t N = features.shape[0];
    int hits  = 0;
    for (int64_t n = 0; n < N; ++n)
        if (cls.predict(features.ptr() + n * features.shape[1]) == labels[n]) ++hits;
    return N > 0 ? static_cast<double>(hits) / static_cast<double>(N) : 0.0;
}

// ----------------------------------------------------------------------------
// Frechet distance between Gaussian fits:
// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2)).
// Matrix square roots via eigendecomposition of the symmetrized product with
// eigenvalue clamping at 0; covariance regularized by 1e-6 I.
// ----------------------------------------------------------------------------
inline double fid(const Tensor& feats_a, const Tensor& feats_b) {
    if (feats_a.shape[1] != feats_b.shape[1]) throw ConfigError("fid: dimension mismatch");
    int64_t D = feats_a.shape[1];
    auto fit = [D](const Tensor& f) {
        int64_t N = f.shape[0];
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t d = 0; d < D; ++d) mu[d] += f.at(n, d);
        mu /= static_cast<double>(N);
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(D, D);
        for (int64_t n = 0; n < N; ++n) {
            Eigen::VectorXd x(D);
            for (int64_t d = 0; d < D; ++d) x[d] = f.at(n, d) - mu[d];
            cov += x * x.transpose();
        }
        cov /= std::max<double>(1.0, static_cast<double>(N - 1));
        cov += 1e-6 * Eigen::MatrixXd::Identity(D, D);
        return std::make_pair(mu, cov);
    };
    auto [mu_a, cov_a] = fit(feats_a);
    auto [mu_b, cov_b] = fit(feats_b);

    auto sqrtm = [](const Eigen::MatrixXd& m) {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
        Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        return Eigen::MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };
    Eigen::MatrixXd a_half = sqrtm(cov_a);
    Eigen::MatrixXd cross  = sqrtm(a_half * cov_b * a_half);
    double tr = cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    return (mu_a - mu_b).squaredNorm() + tr;
}

// ----------------------------------------------------------------------------
// classification protocol
// ----------------------------------------------------------------------------

// (initial image, prompt) -> image; any method, enabling baseline comparisons
struct Generator {
    virtual ~Generator()            = default;
    virtual std::string name() const = 0;
    virtual std::vector<ImageSample> generate_for(const std::vector<FiveTuple>& tuples,
                                                  const std::filesystem::path& corpus_dir,
                                                  const std::string& variant, uint64_t seed) = 0;
};

struct SamplerGenerator : Generator {
    ModelBundle* bundle;
    SampleParams params;
    int batch = 16;

    SamplerGenerator(ModelBundle& b, SampleParams p) : bundle(&b), params(p) {}
    std::string name() const override { return "checkpoint"; }

    std::vector<ImageSample> generate_for(const std::vector<FiveTuple>& tuples,
                                          const std::filesystem::path& corpus_dir,
                                          const std::string& variant, uint64_t seed) override {
        std::vector<ImageSample> out;
        for (size_t i0 = 0; i0 < tuples.size(); i0 += batch) {
            size_t n = std::min<size_t>(batch, tuples.size() - i0);
            std::vector<ImageSample> inputs;
            std::vector<std::string> prompts;
            std::vector<uint64_t> seeds;
            for (size_t b = 0; b < n; ++b) {
                const auto& t = tuples[i0 + b];
                inputs.push_back(load_image(corpus_dir / t.path_initial));
                prompts.push_back(variant == "action" ? t.prompt_action : t.prompt_state);
                seeds.push_back(mix_seed(seed, 0x9e4, static_cast<uint64_t>(t.video_id)));
            }
            auto gen = generate_batch(*bundle, inputs, prompts, params, seeds);
            out.insert(out.end(), gen.begin(), gen.end());
        }
        return out;
    }
};

struct CopyInputGenerator : Generator {
    std::string name() const override { return "copy-input"; }
    std::vector<ImageSample> generate_for(const std::vector<FiveTuple>& tuples,
                                          const std::filesystem::path& corpus_dir, const std::string&,
                                          uint64_t) override {
        std::vector<ImageSample> out;
        for (const auto& t : tuples) out.push_back(load_image(corpus_dir / t.path_initial));
        return out;
    }
};

// oracle: returns the real target image
struct RealTargetGenerator : Generator {
    std::string name() const override { return "real-target"; }
    std::vector<ImageSample> generate_for(const std::vector<FiveTuple>& tuples,
                                          const std::filesystem::path& corpus_dir,
                                          const std::string& variant, uint64_t) override {
        std::vector<ImageSample> out;
        for (const auto& t : tuples)
            out.push_back(load_image(corpus_dir / (variant == "action" ? t.path_action : t.path_final)));
        return out;
    }
};

struct ProtocolResult {
    double accuracy = 0;
    std::map<std::string, double> per_class;
    int n_classes = 0;
};

// Builds 2H classes (held-out categories x {initial, target}); trains the
// classifier on real initial images plus generated target images from the
// held-out split, evaluates on the fixed real test split.
inline ProtocolResult classification_protocol(ModelBundle& feature_bundle,
                                              const std::filesystem::path& corpus_dir,
                                              const std::vector<FiveTuple>& heldout,
                                              const std::vector<FiveTuple>& test, Generator& generator,
                                              const std::string& variant, uint64_t seed) {
    if (variant != "action" && variant != "state")
        throw ConfigError("classification_protocol: variant must be action|state");
    std::set<std::string> cats_h, cats_t;
    for (const auto& t : heldout) cats_h.insert(t.category);
    for (const auto& t : test) cats_t.insert(t.category);
    if (cats_h != cats_t)
        throw ConfigError("classification_protocol: category mismatch between manifests");
    std::vector<std::string> cats(cats_h.begin(), cats_h.end());
    auto class_of = [&](const std::string& cat, bool target) {
        int ci = static_cast<int>(std::find(cats.begin(), cats.end(), cat) - cats.begin());
        return ci * 2 + (target ? 1 : 0);
    };

    // training set: real initial + generated target counterparts
    std::vector<ImageSample> train_images;
    std::vector<int> train_labels;
    for (const auto& t : heldout) {
        train_images.push_back(load_image(corpus_dir / t.path_initial));
        train_labels.push_back(class_of(t.category, false));
    }
    auto generated = generator.generate_for(heldout, corpus_dir, variant, seed);
    for (size_t i = 0; i < heldout.size(); ++i) {
        train_images.push_back(generated[i]);
        train_labels.push_back(class_of(heldout[i].category, true));
    }
    Tensor train_feats = features_of_images(feature_bundle, train_images);
    auto cls           = train_linear_classifier(train_feats, train_labels, seed);

    // fixed real test set: initial and target images
    std::vector<ImageSample> test_images;
    std::vector<int> test_labels;
    for (const auto& t : test) {
        test_images.push_back(load_image(corpus_dir / t.path_initial));
        test_labels.push_back(class_of(t.category, false));
        test_images.push_back(
            load_image(corpus_dir / (variant == "action" ? t.path_action : t.path_final)));
        test_labels.push_back(class_of(t.category, true));
    }
    Tensor test_feats = features_of_images(feature_bundle, test_images);

    ProtocolResult res;
    res.n_classes = static_cast<int>(cats.size()) * 2;
    std::map<int, std::pair<int, int>> per_class;  // label -> (hits, total)
    int hits = 0;
    for (int64_t n = 0; n < test_feats.shape[0]; ++n) {
        int pred = cls.predict(test_feats.ptr() + n * test_feats.shape[1]);
        per_class[test_labels[n]].second++;
        if (pred == test_labels[n]) {
            ++hits;
            per_class[test_labels[n]].first++;
        }
    }
    res.accuracy = static_cast<double>(hits) / static_cast<double>(test_feats.shape[0]);
    for (auto& [label, ht] : per_class) {
        std::string name = cats[label / 2] + (label % 2 ? "/target" : "/initial");
        res.per_class[name] = static_cast<double>(ht.first) / static_cast<double>(ht.second);
    }
    return res;
}

}  // namespace genhowto

#endif
