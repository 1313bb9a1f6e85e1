#pragma once
// Feature stacking and the two-step one-class classifier.
//
// Step 1 fits a two-component GMM: positive-class parameters from the
// labelled set, negative-class parameters from the unlabelled set, followed
// by exactly one EM update with labelled positives clamped. Samples whose
// posterior favours the negative component become reliable negatives (RN).
// Step 2 trains a five-member MLP ensemble on P plus RN and classifies by
// thresholded majority vote. An iterative linear-SVM second step is included
// as the comparison baseline.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "hetcd/cae.hpp"
#include "hetcd/nnkit.hpp"
#include "hetcd/raster.hpp"
#include "hetcd/rng.hpp"

namespace hetcd {

enum class FeatureVariant { full, no_differences, no_originals };

inline const char* to_string(FeatureVariant v) {
    switch (v) {
        case FeatureVariant::full: return "full";
        case FeatureVariant::no_differences: return "no-diff";
        case FeatureVariant::no_originals: return "no-orig";
    }
    return "full";
}

inline FeatureVariant variant_from_string(const std::string& s) {
    if (s == "full") return FeatureVariant::full;
    if (s == "no-diff" || s == "no_differences") return FeatureVariant::no_differences;
    if (s == "no-orig" || s == "no_originals") return FeatureVariant::no_originals;
    throw std::invalid_argument("unknown feature variant: " + s);
}

// Per-pixel feature vectors, sample-major. Component order for the full
// variant is exactly [u, d_x, v, d_y].
struct FeatureStack {
    int height = 0;
    int width = 0;
    int dim = 0;
    FeatureVariant variant = FeatureVariant::full;
    nn::dvec x;

    std::int64_t count() const { return static_cast<std::int64_t>(height) * width; }
    const double* sample(std::int64_t i) const { return x.data() + i * dim; }
};

inline FeatureStack stack_features(const Raster& x, const Raster& y, const TranslationResult& tr,
                                   FeatureVariant variant) {
    const auto shape_ok = [&](const Raster& r, int channels) {
        return r.height == x.height && r.width == x.width && r.channels == channels;
    };
    if (x.height != y.height || x.width != y.width)
        throw std::invalid_argument("stack_features: rasters must share height and width");
    if (!shape_ok(tr.d_x, x.channels) || !shape_ok(tr.x_hat, x.channels) ||
        !shape_ok(tr.d_y, y.channels) || !shape_ok(tr.y_hat, y.channels))
        throw std::invalid_argument("stack_features: translation shapes do not match rasters");

    const int c1 = x.channels, c2 = y.channels;
    FeatureStack f;
    f.height = x.height;
    f.width = x.width;
    f.variant = variant;
    switch (variant) {
        case FeatureVariant::full: f.dim = 2 * c1 + 2 * c2; break;
        case FeatureVariant::no_differences: f.dim = c1 + c2; break;
        case FeatureVariant::no_originals: f.dim = c1 + c2; break;
    }
    const std::int64_t n = f.count();
    f.x.resize(n * f.dim);

    for (std::int64_t i = 0; i < n; ++i) {
        double* dst = f.x.data() + i * f.dim;
        int k = 0;
        if (variant != FeatureVariant::no_originals)
            for (int c = 0; c < c1; ++c) dst[k++] = x.data[static_cast<std::int64_t>(c) * n + i];
        if (variant != FeatureVariant::no_differences)
            for (int c = 0; c < c1; ++c) dst[k++] = tr.d_x.data[static_cast<std::int64_t>(c) * n + i];
        if (variant != FeatureVariant::no_originals)
            for (int c = 0; c < c2; ++c) dst[k++] = y.data[static_cast<std::int64_t>(c) * n + i];
        if (variant != FeatureVariant::no_differences)
            for (int c = 0; c < c2; ++c) dst[k++] = tr.d_y.data[static_cast<std::int64_t>(c) * n + i];
    }
    return f;
}

// ---------------------------------------------------------------------------
// Step 1: GMM with one EM update
// ---------------------------------------------------------------------------

struct GmmModel {
    int dim = 0;
    double prior_neg = 0.5;  // P(L=0)
    double prior_pos = 0.5;  // P(L=1)
    Eigen::VectorXd mu0, mu1;
    Eigen::MatrixXd sigma0, sigma1;
    double ridge = 0.0;  // largest ridge applied to keep covariances PD
};

struct EmState {
    std::vector<double> gamma0, gamma1;  // responsibilities fed into the update
    double n0 = 0.0, n1 = 0.0;           // effective counts
};

struct Step1Result {
    GmmModel gmm;
    EmState em;
    std::vector<std::int64_t> reliable_negatives;  // subset of U
    std::vector<std::uint8_t> is_positive;         // labelled-positive flags
};

namespace detail {

// Adds ridge*I (base 1e-6*trace/dim), escalating x10 until the Cholesky
// factorization succeeds; covariance of near-duplicate samples is singular
// whenever |P| < dim.
inline Eigen::LLT<Eigen::MatrixXd> regularize_llt(Eigen::MatrixXd& sigma, double* ridge_used) {
    const int d = static_cast<int>(sigma.rows());
    const double tr = sigma.trace();
    double ridge = 1e-6 * (tr > 0 ? tr / d : 1.0);
    for (int attempt = 0; attempt < 40; ++attempt) {
        Eigen::MatrixXd reg = sigma + ridge * Eigen::MatrixXd::Identity(d, d);
        Eigen::LLT<Eigen::MatrixXd> llt(reg);
        if (llt.info() == Eigen::Success) {
            sigma = reg;
            if (ridge_used) *ridge_used = std::max(*ridge_used, ridge);
            return llt;
        }
        ridge *= 10.0;
    }
    throw std::runtime_error("fit_step1: covariance unrecoverable after ridge escalation");
}

struct GaussianEval {
    Eigen::LLT<Eigen::MatrixXd> llt;
    Eigen::VectorXd mu;
    double log_norm = 0.0;  // -0.5*(d*log(2pi) + logdet)

    double logpdf(const Eigen::Ref<const Eigen::VectorXd>& x) const {
        Eigen::VectorXd c = x - mu;
        llt.matrixL().solveInPlace(c);
        return log_norm - 0.5 * c.squaredNorm();
    }
};

inline GaussianEval make_gaussian(const Eigen::VectorXd& mu, Eigen::MatrixXd& sigma_inout,
                                  double* ridge_used) {
    GaussianEval g;
    g.mu = mu;
    g.llt = regularize_llt(sigma_inout, ridge_used);
    const int d = static_cast<int>(mu.size());
    double logdet = 0.0;
    for (int i = 0; i < d; ++i) logdet += std::log(g.llt.matrixL()(i, i));
    logdet *= 2.0;
    g.log_norm = -0.5 * (d * std::log(2.0 * 3.14159265358979323846) + logdet);
    return g;
}

}  // namespace detail

inline Step1Result fit_step1(const FeatureStack& f, const LabeledSet& p) {
    const std::int64_t n = f.count();
    const int d = f.dim;
    if (p.universe_size != 0 && p.universe_size != n)
        throw std::invalid_argument("fit_step1: labelled set universe does not match features");
    if (static_cast<std::int64_t>(p.positive_indices.size()) < 2)
        throw std::invalid_argument("fit_step1: need at least 2 labelled positives");

    std::vector<std::uint8_t> is_pos(n, 0);
    for (auto idx : p.positive_indices) {
        if (idx < 0 || idx >= n) throw std::invalid_argument("fit_step1: positive index out of range");
        if (is_pos[idx]) throw std::invalid_argument("fit_step1: duplicate positive index");
        is_pos[idx] = 1;
    }
    const std::int64_t n_pos = static_cast<std::int64_t>(p.positive_indices.size());
    const std::int64_t n_unl = n - n_pos;
    if (n_unl < 2) throw std::invalid_argument("fit_step1: unlabelled set too small");

    Eigen::Map<const nn::RowMat> X(f.x.data(), n, d);

    // Initial estimates: standard sample mean/covariance, positives from P
    // and negatives from U.
    Eigen::VectorXd mu_pos = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd mu_neg = Eigen::VectorXd::Zero(d);
    for (std::int64_t j = 0; j < n; ++j) {
        if (is_pos[j])
            mu_pos += X.row(j).transpose();
        else
            mu_neg += X.row(j).transpose();
    }
    mu_pos /= static_cast<double>(n_pos);
    mu_neg /= static_cast<double>(n_unl);

    Eigen::MatrixXd cov_pos = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd cov_neg = Eigen::MatrixXd::Zero(d, d);
    for (std::int64_t j = 0; j < n; ++j) {
        if (is_pos[j])
            cov_pos.selfadjointView<Eigen::Lower>().rankUpdate(X.row(j).transpose() - mu_pos);
        else
            cov_neg.selfadjointView<Eigen::Lower>().rankUpdate(X.row(j).transpose() - mu_neg);
    }
    cov_pos = cov_pos.selfadjointView<Eigen::Lower>();
    cov_neg = cov_neg.selfadjointView<Eigen::Lower>();
    cov_pos /= static_cast<double>(n_pos - 1);
    cov_neg /= static_cast<double>(n_unl - 1);

    Step1Result res;
    res.gmm.dim = d;
    res.is_positive = is_pos;
    double ridge = 0.0;

    const auto g_pos = detail::make_gaussian(mu_pos, cov_pos, &ridge);
    const auto g_neg = detail::make_gaussian(mu_neg, cov_neg, &ridge);

    // Responsibilities in log space with uninformative priors and clamped
    // labelled positives.
    const double log_half = std::log(0.5);
    res.em.gamma0.resize(n);
    res.em.gamma1.resize(n);
    for (std::int64_t j = 0; j < n; ++j) {
        if (is_pos[j]) {
            res.em.gamma1[j] = 1.0;
            res.em.gamma0[j] = 0.0;
        } else {
            const double lp0 = log_half + g_neg.logpdf(X.row(j).transpose());
            const double lp1 = log_half + g_pos.logpdf(X.row(j).transpose());
            const double m = std::max(lp0, lp1);
            const double e0 = std::exp(lp0 - m), e1 = std::exp(lp1 - m);
            res.em.gamma0[j] = e0 / (e0 + e1);
            res.em.gamma1[j] = e1 / (e0 + e1);
        }
        res.em.n0 += res.em.gamma0[j];
        res.em.n1 += res.em.gamma1[j];
    }
    if (!(res.em.n0 > 0.0) || !(res.em.n1 > 0.0))
        throw std::runtime_error("fit_step1: degenerate responsibilities");

    // One EM update: responsibility-weighted mean, then covariance about the
    // updated mean, each normalized by the effective count.
    Eigen::VectorXd mu0_new = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd mu1_new = Eigen::VectorXd::Zero(d);
    for (std::int64_t j = 0; j < n; ++j) {
        mu0_new += res.em.gamma0[j] * X.row(j).transpose();
        mu1_new += res.em.gamma1[j] * X.row(j).transpose();
    }
    mu0_new /= res.em.n0;
    mu1_new /= res.em.n1;

    Eigen::MatrixXd s0 = Eigen::MatrixXd::Zero(d, d);
    Eigen::MatrixXd s1 = Eigen::MatrixXd::Zero(d, d);
    for (std::int64_t j = 0; j < n; ++j) {
        if (res.em.gamma0[j] > 0.0)
            s0.selfadjointView<Eigen::Lower>().rankUpdate(X.row(j).transpose() - mu0_new,
                                                          res.em.gamma0[j]);
        if (res.em.gamma1[j] > 0.0)
            s1.selfadjointView<Eigen::Lower>().rankUpdate(X.row(j).transpose() - mu1_new,
                                                          res.em.gamma1[j]);
    }
    s0 = s0.selfadjointView<Eigen::Lower>();
    s1 = s1.selfadjointView<Eigen::Lower>();
    s0 /= res.em.n0;
    s1 /= res.em.n1;

    res.gmm.mu0 = mu0_new;
    res.gmm.mu1 = mu1_new;
    const auto g0 = detail::make_gaussian(mu0_new, s0, &ridge);
    const auto g1 = detail::make_gaussian(mu1_new, s1, &ridge);
    // Keep the regularized covariances the decision rule actually uses.
    res.gmm.sigma0 = s0;
    res.gmm.sigma1 = s1;
    res.gmm.ridge = ridge;

    // Final priors: proportion of samples softly assigned to each class.
    res.gmm.prior_neg = res.em.n0 / static_cast<double>(n);
    res.gmm.prior_pos = res.em.n1 / static_cast<double>(n);

    // Reliable negatives: unlabelled samples where the negative posterior
    // strictly dominates, evaluated in log space (no underflow for dim <= 64).
    const double lpri0 = std::log(res.gmm.prior_neg);
    const double lpri1 = std::log(res.gmm.prior_pos);
    for (std::int64_t j = 0; j < n; ++j) {
        if (is_pos[j]) continue;
        const double lp0 = lpri0 + g0.logpdf(X.row(j).transpose());
        const double lp1 = lpri1 + g1.logpdf(X.row(j).transpose());
        if (lp0 > lp1) res.reliable_negatives.push_back(j);
    }
    return res;
}

// Binary map from step 1 alone: labelled positives stay positive; everything
// not selected as a reliable negative is predicted positive.
inline Mask step1_change_map(const Step1Result& s1) {
    Mask out(s1.is_positive.size(), 1);
    for (auto idx : s1.reliable_negatives) out[idx] = 0;
    return out;
}

// Posterior classification with a saved GMM (no labelled-set clamping):
// positive unless the negative posterior strictly dominates.
inline Mask gmm_predict(const GmmModel& gmm, const FeatureStack& f) {
    if (f.dim != gmm.dim) throw std::invalid_argument("gmm_predict: feature dim mismatch");
    double ridge = 0.0;
    Eigen::MatrixXd s0 = gmm.sigma0, s1 = gmm.sigma1;
    const auto g0 = detail::make_gaussian(gmm.mu0, s0, &ridge);
    const auto g1 = detail::make_gaussian(gmm.mu1, s1, &ridge);
    const double lp0 = std::log(gmm.prior_neg), lp1 = std::log(gmm.prior_pos);
    const std::int64_t n = f.count();
    Mask out(n);
    for (std::int64_t j = 0; j < n; ++j) {
        Eigen::Map<const Eigen::VectorXd> x(f.sample(j), f.dim);
        out[j] = (lp0 + g0.logpdf(x) > lp1 + g1.logpdf(x)) ? 0 : 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Step 2: five-MLP ensemble
// ---------------------------------------------------------------------------

// Frozen training hyperparameters (library defaults of the reference
// implementation): relu hidden, logistic output, Adam, L2 penalty, minibatch
// min(200, n), early stop on stalled training loss. jobs > 1 trains ensemble
// members concurrently; member seeds are independent, so results do not
// depend on the schedule.
struct MlpTrainConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double l2_penalty = 1e-4;
    double tol = 1e-4;
    int batch_size = 200;
    int max_epochs = 200;
    int no_change_epochs = 10;
    int jobs = 1;
};

struct MlpEnsemble {
    std::vector<nn::Network> members;
    std::vector<int> epochs_run;
    std::uint64_t seed = 0;
    MlpTrainConfig config;
    int input_dim = 0;
};

inline const std::vector<std::vector<int>>& mlp_ensemble_layouts() {
    static const std::vector<std::vector<int>> layouts = {
        {1000}, {100, 100}, {200, 200}, {100, 100, 100}, {200, 200, 200}};
    return layouts;
}

namespace detail {

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

struct MlpTrainResult {
    nn::Network net;
    int epochs = 0;
};

inline MlpTrainResult train_mlp(const FeatureStack& f, const std::vector<std::int64_t>& samples,
                                const std::vector<double>& labels, const std::vector<int>& hidden,
                                const MlpTrainConfig& cfg, std::uint64_t seed) {
    const int d = f.dim;
    std::vector<nn::LayerSpec> specs;
    int in = d;
    for (int h : hidden) {
        specs.push_back(nn::dense(in, h, nn::Act::relu));
        in = h;
    }
    specs.push_back(nn::dense(in, 1, nn::Act::logistic));

    MlpTrainResult out;
    out.net = nn::make_network(specs, seed);
    nn::AdamState opt;
    opt.lr = cfg.learning_rate;
    opt.beta1 = cfg.beta1;
    opt.beta2 = cfg.beta2;
    opt.eps = cfg.eps;

    const std::int64_t ns = static_cast<std::int64_t>(samples.size());
    const int batch = static_cast<int>(std::min<std::int64_t>(cfg.batch_size, ns));
    Rng rng(mix_seed(seed, 0x6d6c70ull));  // 'mlp'
    std::vector<std::int64_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

    double best_loss = std::numeric_limits<double>::infinity();
    int no_improve = 0;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        for (std::int64_t i = 0; i + 1 < ns; ++i) {
            const std::int64_t j = i + static_cast<std::int64_t>(rng.below(ns - i));
            std::swap(order[i], order[j]);
        }
        double epoch_loss = 0.0;
        for (std::int64_t start = 0; start < ns; start += batch) {
            const int b = static_cast<int>(std::min<std::int64_t>(batch, ns - start));
            nn::Tensor xb({b, d});
            std::vector<double> yb(b);
            for (int r = 0; r < b; ++r) {
                const std::int64_t s = samples[order[start + r]];
                std::memcpy(xb.v.data() + static_cast<std::int64_t>(r) * d, f.sample(s),
                            static_cast<std::size_t>(d) * 8);
                yb[r] = labels[order[start + r]];
            }
            auto acts = nn::forward(out.net, xb);
            const auto& logits = acts.pre.back();
            const auto& prob = acts.post.back();
            double loss = 0.0;
            nn::Tensor dz({b, 1});
            for (int r = 0; r < b; ++r) {
                loss += softplus(logits.v[r]) - yb[r] * logits.v[r];
                dz.v[r] = (prob.v[r] - yb[r]) / b;
            }
            loss /= b;
            double w_sq = 0.0;
            for (const auto& w : out.net.weights) {
                for (double v : w.v) w_sq += v * v;
            }
            loss += 0.5 * cfg.l2_penalty * w_sq / b;

            auto grads = nn::backward(out.net, acts, dz, /*grad_wrt_preactivation=*/true);
            for (std::size_t li = 0; li < grads.dw.size(); ++li) {
                for (std::int64_t k = 0; k < grads.dw[li].size(); ++k)
                    grads.dw[li].v[k] += cfg.l2_penalty * out.net.weights[li].v[k] / b;
            }
            nn::adam_step(out.net, grads, opt);
            epoch_loss += loss * b;
        }
        epoch_loss /= static_cast<double>(ns);
        out.epochs = epoch + 1;
        if (epoch_loss > best_loss - cfg.tol)
            no_improve += 1;
        else
            no_improve = 0;
        best_loss = std::min(best_loss, epoch_loss);
        if (no_improve >= cfg.no_change_epochs) break;
    }
    return out;
}

}  // namespace detail

inline MlpEnsemble fit_step2(const FeatureStack& f, const LabeledSet& p,
                             const std::vector<std::int64_t>& reliable_negatives,
                             std::uint64_t seed, const MlpTrainConfig& cfg = {}) {
    if (p.positive_indices.empty()) throw std::invalid_argument("fit_step2: empty positive set");
    if (reliable_negatives.empty()) throw std::invalid_argument("fit_step2: empty RN set");

    std::vector<std::int64_t> samples;
    std::vector<double> labels;
    samples.reserve(p.positive_indices.size() + reliable_negatives.size());
    for (auto idx : p.positive_indices) {
        samples.push_back(idx);
        labels.push_back(1.0);
    }
    for (auto idx : reliable_negatives) {
        samples.push_back(idx);
        labels.push_back(0.0);
    }

    MlpEnsemble ens;
    ens.seed = seed;
    ens.config = cfg;
    ens.input_dim = f.dim;
    const auto& layouts = mlp_ensemble_layouts();
    std::vector<detail::MlpTrainResult> results(layouts.size());
    auto train_one = [&](std::size_t m) {
        results[m] = detail::train_mlp(f, samples, labels, layouts[m], cfg, mix_seed(seed, m + 1));
    };
    if (cfg.jobs > 1) {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> workers;
        const int n_workers = std::min<int>(cfg.jobs, static_cast<int>(layouts.size()));
        std::vector<std::exception_ptr> errors(n_workers);
        for (int w = 0; w < n_workers; ++w) {
            workers.emplace_back([&, w] {
                try {
                    for (;;) {
                        const std::size_t m = next.fetch_add(1);
                        if (m >= layouts.size()) break;
                        train_one(m);
                    }
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
        for (auto& t : workers) t.join();
        for (auto& e : errors)
            if (e) std::rethrow_exception(e);
    } else {
        for (std::size_t m = 0; m < layouts.size(); ++m) train_one(m);
    }
    for (auto& r : results) {
        ens.members.push_back(std::move(r.net));
        ens.epochs_run.push_back(r.epochs);
    }
    return ens;
}

// Thresholded majority vote: votes is the fraction of members whose output
// exceeds 0.5; a pixel is positive when votes > t. t=0.5 is 3-of-5,
// t=0.3 is 2-of-5.
struct ChangeMap {
    std::vector<double> votes;
    Mask binary;
    double threshold = 0.5;
};

inline Mask apply_vote_threshold(const std::vector<double>& votes, double t) {
    Mask out(votes.size());
    for (std::size_t i = 0; i < votes.size(); ++i) out[i] = votes[i] > t ? 1 : 0;
    return out;
}

inline ChangeMap predict(const MlpEnsemble& ens, const FeatureStack& f, double t = 0.5) {
    if (f.dim != ens.input_dim) throw std::invalid_argument("predict: feature dim mismatch");
    if (ens.members.size() != 5) throw std::invalid_argument("predict: ensemble must have 5 members");
    const std::int64_t n = f.count();
    ChangeMap map;
    map.threshold = t;
    map.votes.assign(n, 0.0);

    const std::int64_t chunk = 8192;
    for (std::int64_t start = 0; start < n; start += chunk) {
        const int b = static_cast<int>(std::min(chunk, n - start));
        nn::Tensor xb({b, f.dim});
        std::memcpy(xb.v.data(), f.x.data() + start * f.dim,
                    static_cast<std::size_t>(b) * f.dim * 8);
        for (const auto& net : ens.members) {
            const nn::Tensor out = nn::forward_output(net, xb);
            for (int r = 0; r < b; ++r)
                if (out.v[r] > 0.5) map.votes[start + r] += 1.0;
        }
    }
    for (auto& v : map.votes) v /= static_cast<double>(ens.members.size());
    map.binary = apply_vote_threshold(map.votes, t);
    return map;
}

// ---------------------------------------------------------------------------
// Iterative linear SVM baseline (second-step alternative)
// ---------------------------------------------------------------------------

struct IsvmModel {
    Eigen::VectorXd w;
    double b = 0.0;
    double lambda = 1.0;
    int iterations = 0;            // accepted training rounds
    bool stopped_by_fnr = false;   // hit the 5% FNR stop rule
    std::vector<std::int64_t> rn_final;
    std::vector<std::size_t> rn_sizes;  // per-iteration RN set size
};

namespace detail {

struct LinearSvm {
    Eigen::VectorXd w;
    double b = 0.0;
};

// Pegasos-style subgradient descent on the hinge objective
// lambda/2 |w|^2 + mean hinge. The bias rides along as an augmented constant
// feature (regularized and projected with w), which keeps the large early
// steps of the 1/(lambda*t) schedule from running the intercept away on
// imbalanced data.
inline LinearSvm train_linear_svm(const FeatureStack& f, const std::vector<std::int64_t>& samples,
                                  const std::vector<double>& y /* +/-1 */, double lambda,
                                  std::uint64_t seed) {
    const int d = f.dim;
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);  // last entry: bias
    const std::int64_t ns = static_cast<std::int64_t>(samples.size());
    const int batch = static_cast<int>(std::min<std::int64_t>(128, ns));
    // Pegasos suboptimality decays like 1/(lambda * steps); small penalties
    // need proportionally more passes.
    const int epochs = static_cast<int>(std::clamp(0.6 / lambda, 60.0, 600.0));
    Rng rng(mix_seed(seed, 0x73766dull));  // 'svm'
    std::vector<std::int64_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);

    // Average the iterates of the final third of training; the raw Pegasos
    // endpoint is noisy for small lambda.
    Eigen::VectorXd w_avg = Eigen::VectorXd::Zero(d + 1);
    std::int64_t avg_count = 0;
    const int avg_from = 2 * epochs / 3;

    std::int64_t t = 0;
    Eigen::VectorXd gsum(d + 1);
    const double radius = 1.0 / std::sqrt(lambda);
    for (int epoch = 0; epoch < epochs; ++epoch) {
        for (std::int64_t i = 0; i + 1 < ns; ++i) {
            const std::int64_t j = i + static_cast<std::int64_t>(rng.below(ns - i));
            std::swap(order[i], order[j]);
        }
        for (std::int64_t start = 0; start < ns; start += batch) {
            const int bsz = static_cast<int>(std::min<std::int64_t>(batch, ns - start));
            t += 1;
            const double eta = 1.0 / (lambda * static_cast<double>(t));
            gsum.setZero();
            for (int r = 0; r < bsz; ++r) {
                const std::int64_t s = samples[order[start + r]];
                const double yr = y[order[start + r]];
                Eigen::Map<const Eigen::VectorXd> xr(f.sample(s), d);
                if (yr * (w.head(d).dot(xr) + w[d]) < 1.0) {
                    gsum.head(d) += yr * xr;
                    gsum[d] += yr;
                }
            }
            w = (1.0 - eta * lambda) * w + (eta / bsz) * gsum;
            const double wnorm = w.norm();
            if (wnorm > radius) w *= radius / wnorm;
            if (epoch >= avg_from) {
                w_avg += w;
                avg_count += 1;
            }
        }
    }
    w_avg /= static_cast<double>(avg_count);
    LinearSvm svm;
    svm.w = w_avg.head(d);
    svm.b = w_avg[d];
    return svm;
}

inline double svm_fnr(const LinearSvm& svm, const FeatureStack& f,
                      const std::vector<std::int64_t>& positives) {
    if (positives.empty()) return 0.0;
    std::int64_t miss = 0;
    for (auto idx : positives) {
        Eigen::Map<const Eigen::VectorXd> x(f.sample(idx), f.dim);
        if (svm.w.dot(x) + svm.b <= 0.0) ++miss;
    }
    return static_cast<double>(miss) / static_cast<double>(positives.size());
}

}  // namespace detail

// Penalty grid search on a held-out fifth of P (by FNR), then the iterative
// RN-growing loop with the 5% FNR stop rule. fixed_lambda skips the search.
inline IsvmModel fit_isvm(const FeatureStack& f, const LabeledSet& p,
                          const std::vector<std::int64_t>& reliable_negatives,
                          std::uint64_t seed, double fixed_lambda = 0.0) {
    if (p.positive_indices.empty()) throw std::invalid_argument("fit_isvm: empty positive set");
    if (reliable_negatives.empty()) throw std::invalid_argument("fit_isvm: empty RN set");
    const std::int64_t n = f.count();

    // Hold out 20% of P for the penalty search.
    std::vector<std::int64_t> perm = p.positive_indices;
    Rng rng(mix_seed(seed, 0x6973766dull));  // 'isvm'
    for (std::size_t i = 0; i + 1 < perm.size(); ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(perm.size() - i));
        std::swap(perm[i], perm[j]);
    }
    const std::size_t n_hold = std::max<std::size_t>(1, perm.size() / 5);
    std::vector<std::int64_t> hold(perm.begin(), perm.begin() + n_hold);
    std::vector<std::int64_t> train_pos(perm.begin() + n_hold, perm.end());
    if (train_pos.empty()) train_pos = hold;

    auto build = [&](const std::vector<std::int64_t>& pos, const std::vector<std::int64_t>& neg,
                     std::vector<std::int64_t>& samples, std::vector<double>& y) {
        samples.clear();
        y.clear();
        for (auto idx : pos) {
            samples.push_back(idx);
            y.push_back(1.0);
        }
        for (auto idx : neg) {
            samples.push_back(idx);
            y.push_back(-1.0);
        }
    };

    std::vector<std::int64_t> samples;
    std::vector<double> y;
    double best_lambda = fixed_lambda;
    if (fixed_lambda <= 0.0) {
        double best_fnr = std::numeric_limits<double>::infinity();
        for (int k = -5; k <= 5; ++k) {
            const double lambda = std::pow(4.0, k);
            build(train_pos, reliable_negatives, samples, y);
            const auto svm = detail::train_linear_svm(f, samples, y, lambda, mix_seed(seed, 100 + k));
            const double fnr = detail::svm_fnr(svm, f, hold);
            if (fnr < best_fnr) {
                best_fnr = fnr;
                best_lambda = lambda;
            }
        }
    }

    // Iterative loop over the growing RN set.
    std::vector<std::uint8_t> in_rn(n, 0), is_pos(n, 0);
    for (auto idx : reliable_negatives) in_rn[idx] = 1;
    for (auto idx : p.positive_indices) is_pos[idx] = 1;
    std::vector<std::int64_t> rn_cur = reliable_negatives;

    IsvmModel model;
    model.lambda = best_lambda;
    bool have_model = false;
    for (int it = 1; it <= 20; ++it) {
        build(p.positive_indices, rn_cur, samples, y);
        const auto svm = detail::train_linear_svm(f, samples, y, best_lambda, mix_seed(seed, 200 + it));
        const double fnr = detail::svm_fnr(svm, f, p.positive_indices);
        model.rn_sizes.push_back(rn_cur.size());
        if (fnr > 0.05) {
            model.stopped_by_fnr = true;
            if (!have_model) {  // no model ever met the FNR bound; keep this one
                model.w = svm.w;
                model.b = svm.b;
                model.iterations = it;
                model.rn_final = rn_cur;
            }
            break;
        }
        model.w = svm.w;
        model.b = svm.b;
        model.iterations = it;
        model.rn_final = rn_cur;
        have_model = true;

        std::int64_t added = 0;
        for (std::int64_t j = 0; j < n; ++j) {
            if (is_pos[j] || in_rn[j]) continue;
            Eigen::Map<const Eigen::VectorXd> x(f.sample(j), f.dim);
            if (svm.w.dot(x) + svm.b <= 0.0) {
                in_rn[j] = 1;
                rn_cur.push_back(j);
                ++added;
            }
        }
        if (added == 0) break;
    }
    return model;
}

inline Mask isvm_predict(const IsvmModel& model, const FeatureStack& f) {
    if (model.w.size() != f.dim) throw std::invalid_argument("isvm_predict: feature dim mismatch");
    const std::int64_t n = f.count();
    Mask out(n);
    for (std::int64_t j = 0; j < n; ++j) {
        Eigen::Map<const Eigen::VectorXd> x(f.sample(j), f.dim);
        out[j] = (model.w.dot(x) + model.b > 0.0) ? 1 : 0;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Trained-model bundle: GMM parameters, five checkpoints, manifest
// ---------------------------------------------------------------------------

inline void save_occ_model(const std::filesystem::path& dir, const Step1Result& s1,
                           const MlpEnsemble* ens, const IsvmModel* isvm, FeatureVariant variant,
                           double threshold, const std::string& method) {
    std::filesystem::create_directories(dir);
    {
        nlohmann::ordered_json g;
        g["dim"] = s1.gmm.dim;
        g["prior_neg"] = s1.gmm.prior_neg;
        g["prior_pos"] = s1.gmm.prior_pos;
        g["ridge"] = s1.gmm.ridge;
        g["payload"] = "gmm.bin";
        g["payload_order"] = {"mu0", "mu1", "sigma0", "sigma1"};
        std::ofstream out(dir / "gmm.json", std::ios::trunc);
        out << g.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "gmm.bin", std::ios::binary | std::ios::trunc);
        auto dump = [&](const double* ptr, std::int64_t count) {
            out.write(reinterpret_cast<const char*>(ptr), count * 8);
        };
        const int d = s1.gmm.dim;
        dump(s1.gmm.mu0.data(), d);
        dump(s1.gmm.mu1.data(), d);
        dump(s1.gmm.sigma0.data(), static_cast<std::int64_t>(d) * d);
        dump(s1.gmm.sigma1.data(), static_cast<std::int64_t>(d) * d);
    }
    nlohmann::ordered_json manifest;
    manifest["method"] = method;
    manifest["variant"] = to_string(variant);
    manifest["dim"] = s1.gmm.dim;
    manifest["threshold"] = threshold;
    manifest["gmm"] = "gmm.json";
    if (ens) {
        manifest["seed"] = ens->seed;
        auto members = nlohmann::ordered_json::array();
        for (std::size_t m = 0; m < ens->members.size(); ++m) {
            const std::string file = "member" + std::to_string(m) + ".nnkt";
            nlohmann::ordered_json meta;
            meta["epochs"] = ens->epochs_run.size() > m ? ens->epochs_run[m] : 0;
            nn::save_network(dir / file, ens->members[m], meta);
            members.push_back(file);
        }
        manifest["members"] = members;
    }
    if (isvm) {
        nlohmann::ordered_json sv;
        sv["lambda"] = isvm->lambda;
        sv["bias"] = isvm->b;
        sv["iterations"] = isvm->iterations;
        sv["payload"] = "isvm.bin";
        std::ofstream out(dir / "isvm.json", std::ios::trunc);
        out << sv.dump(2) << "\n";
        std::ofstream bin(dir / "isvm.bin", std::ios::binary | std::ios::trunc);
        bin.write(reinterpret_cast<const char*>(isvm->w.data()), isvm->w.size() * 8);
        manifest["isvm"] = "isvm.json";
    }
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    out << manifest.dump(2) << "\n";
}

struct OccModelBundle {
    std::string method = "two-step";
    GmmModel gmm;
    MlpEnsemble ensemble;  // populated for two-step models
    IsvmModel isvm;        // populated for isvm models
    FeatureVariant variant = FeatureVariant::full;
    double threshold = 0.5;
};

inline OccModelBundle load_occ_model(const std::filesystem::path& dir) {
    OccModelBundle bundle;
    std::ifstream min(dir / "manifest.json");
    if (!min) throw std::runtime_error("missing occ model manifest in " + dir.string());
    nlohmann::json manifest;
    min >> manifest;
    bundle.method = manifest.value("method", "two-step");
    bundle.variant = variant_from_string(manifest.at("variant").get<std::string>());
    bundle.threshold = manifest.at("threshold").get<double>();
    bundle.ensemble.input_dim = manifest.at("dim").get<int>();
    if (manifest.contains("members")) {
        bundle.ensemble.seed = manifest.value("seed", 0ull);
        for (const auto& file : manifest.at("members")) {
            nlohmann::json meta;
            bundle.ensemble.members.push_back(nn::load_network(dir / file.get<std::string>(), &meta));
            bundle.ensemble.epochs_run.push_back(meta.value("epochs", 0));
        }
    }
    if (manifest.contains("isvm")) {
        std::ifstream sin(dir / "isvm.json");
        nlohmann::json sv;
        sin >> sv;
        bundle.isvm.lambda = sv.at("lambda").get<double>();
        bundle.isvm.b = sv.at("bias").get<double>();
        bundle.isvm.iterations = sv.at("iterations").get<int>();
        bundle.isvm.w.resize(manifest.at("dim").get<int>());
        std::ifstream bin(dir / "isvm.bin", std::ios::binary);
        bin.read(reinterpret_cast<char*>(bundle.isvm.w.data()), bundle.isvm.w.size() * 8);
        if (!bin) throw std::runtime_error("truncated isvm.bin in " + dir.string());
    }

    std::ifstream gin(dir / "gmm.json");
    if (!gin) throw std::runtime_error("missing gmm.json in " + dir.string());
    nlohmann::json g;
    gin >> g;
    const int d = g.at("dim").get<int>();
    bundle.gmm.dim = d;
    bundle.gmm.prior_neg = g.at("prior_neg").get<double>();
    bundle.gmm.prior_pos = g.at("prior_pos").get<double>();
    bundle.gmm.ridge = g.at("ridge").get<double>();
    std::ifstream bin(dir / "gmm.bin", std::ios::binary);
    if (!bin) throw std::runtime_error("missing gmm.bin in " + dir.string());
    bundle.gmm.mu0.resize(d);
    bundle.gmm.mu1.resize(d);
    bundle.gmm.sigma0.resize(d, d);
    bundle.gmm.sigma1.resize(d, d);
    bin.read(reinterpret_cast<char*>(bundle.gmm.mu0.data()), d * 8);
    bin.read(reinterpret_cast<char*>(bundle.gmm.mu1.data()), d * 8);
    bin.read(reinterpret_cast<char*>(bundle.gmm.sigma0.data()), static_cast<std::int64_t>(d) * d * 8);
    bin.read(reinterpret_cast<char*>(bundle.gmm.sigma1.data()), static_cast<std::int64_t>(d) * d * 8);
    if (!bin) throw std::runtime_error("truncated gmm.bin in " + dir.string());
    return bundle;
}

}  // namespace hetcd
