#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>

#include "hetcd/occ.hpp"
#include "hetcd/synth.hpp"

using namespace hetcd;

namespace {

FeatureStack stack_from_samples(const std::vector<std::vector<double>>& rows) {
    FeatureStack f;
    f.height = static_cast<int>(rows.size());
    f.width = 1;
    f.dim = static_cast<int>(rows[0].size());
    f.x.reserve(rows.size() * rows[0].size());
    for (const auto& r : rows)
        for (double v : r) f.x.push_back(v);
    return f;
}

LabeledSet labeled(std::vector<std::int64_t> idx, std::int64_t n) {
    LabeledSet p;
    p.positive_indices = std::move(idx);
    p.universe_size = n;
    return p;
}

// Two-cluster 2-D fixture; first n_pos samples are the positive cluster.
std::vector<std::vector<double>> two_clusters(int n_pos, int n_neg, double sep, double sd,
                                              std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> rows;
    rows.reserve(n_pos + n_neg);
    for (int i = 0; i < n_pos; ++i)
        rows.push_back({sep + sd * rng.normal(), sep + sd * rng.normal()});
    for (int i = 0; i < n_neg; ++i)
        rows.push_back({-sep + sd * rng.normal(), -sep + sd * rng.normal()});
    return rows;
}

}  // namespace

TEST(StackFeatures, DimsPerVariant) {
    const int c1 = 7, c2 = 10, h = 3, w = 4;
    auto make = [&](int c, std::uint64_t seed) {
        Raster r;
        r.height = h;
        r.width = w;
        r.channels = c;
        for (int i = 0; i < c; ++i) r.names.push_back("b" + std::to_string(i));
        Rng rng(seed);
        r.data.resize(r.size());
        for (auto& v : r.data) v = rng.uniform(-1, 1);
        return r;
    };
    Raster x = make(c1, 1), y = make(c2, 2);
    TranslationResult tr;
    tr.x_hat = make(c1, 3);
    tr.y_hat = make(c2, 4);
    tr.d_x = make(c1, 5);
    tr.d_y = make(c2, 6);

    EXPECT_EQ(stack_features(x, y, tr, FeatureVariant::full).dim, 34);
    EXPECT_EQ(stack_features(x, y, tr, FeatureVariant::no_differences).dim, 17);
    EXPECT_EQ(stack_features(x, y, tr, FeatureVariant::no_originals).dim, 17);

    // Slices of the full stack recover the input planes exactly, in the
    // order u, d_x, v, d_y.
    auto f = stack_features(x, y, tr, FeatureVariant::full);
    const std::int64_t n = f.count();
    for (std::int64_t i = 0; i < n; ++i) {
        const double* s = f.sample(i);
        for (int c = 0; c < c1; ++c) {
            ASSERT_EQ(s[c], x.data[c * n + i]);
            ASSERT_EQ(s[c1 + c], tr.d_x.data[c * n + i]);
        }
        for (int c = 0; c < c2; ++c) {
            ASSERT_EQ(s[2 * c1 + c], y.data[c * n + i]);
            ASSERT_EQ(s[2 * c1 + c2 + c], tr.d_y.data[c * n + i]);
        }
    }
}

TEST(StackFeatures, PerfectTranslationZeroDifferences) {
    SynthConfig cfg;
    cfg.height = 32;
    cfg.width = 32;
    auto b = generate_synthetic_pair(cfg);
    auto x = normalize_raster(b.t1);
    auto y = normalize_raster(b.t2);
    TranslationResult tr;
    tr.x_hat = x;
    tr.y_hat = y;
    tr.d_x = x;
    std::fill(tr.d_x.data.begin(), tr.d_x.data.end(), 0.0);
    tr.d_y = y;
    std::fill(tr.d_y.data.begin(), tr.d_y.data.end(), 0.0);
    auto f = stack_features(x, y, tr, FeatureVariant::full);
    const std::int64_t n = f.count();
    for (std::int64_t i = 0; i < n; ++i) {
        const double* s = f.sample(i);
        for (int c = 0; c < x.channels; ++c) ASSERT_EQ(s[x.channels + c], 0.0);
        for (int c = 0; c < y.channels; ++c) ASSERT_EQ(s[2 * x.channels + y.channels + c], 0.0);
    }
}

// Independent brute-force evaluation of the one-EM-update equations on a
// 50-sample 2-D fixture, in linear probability space.
TEST(FitStep1, MatchesBruteForceOracle) {
    auto rows = two_clusters(10, 40, 2.0, 0.6, 314);
    auto f = stack_from_samples(rows);
    const std::int64_t n = 50;
    LabeledSet p = labeled({0, 1, 2, 3, 4}, n);

    auto s1 = fit_step1(f, p);

    // ---- oracle ----
    using Eigen::MatrixXd;
    using Eigen::Vector2d;
    using Eigen::Matrix2d;
    std::vector<std::uint8_t> is_pos(n, 0);
    for (auto i : p.positive_indices) is_pos[i] = 1;

    auto mean_of = [&](bool pos) {
        Vector2d m = Vector2d::Zero();
        int c = 0;
        for (std::int64_t j = 0; j < n; ++j)
            if (is_pos[j] == pos) {
                m += Vector2d(rows[j][0], rows[j][1]);
                ++c;
            }
        return Vector2d(m / c);
    };
    auto cov_of = [&](bool pos, const Vector2d& mu) {
        Matrix2d s = Matrix2d::Zero();
        int c = 0;
        for (std::int64_t j = 0; j < n; ++j)
            if (is_pos[j] == pos) {
                Vector2d d = Vector2d(rows[j][0], rows[j][1]) - mu;
                s += d * d.transpose();
                ++c;
            }
        return Matrix2d(s / (c - 1));
    };
    auto ridge_base = [](const Matrix2d& s) { return 1e-6 * s.trace() / 2.0; };
    auto density = [](const Vector2d& x, const Vector2d& mu, const Matrix2d& s) {
        const Matrix2d inv = s.inverse();
        const Vector2d d = x - mu;
        return std::exp(-0.5 * d.dot(inv * d)) / (2.0 * M_PI * std::sqrt(s.determinant()));
    };

    Vector2d mu1 = mean_of(true), mu0 = mean_of(false);
    Matrix2d c1 = cov_of(true, mu1), c0 = cov_of(false, mu0);
    c1 += ridge_base(c1) * Matrix2d::Identity();
    c0 += ridge_base(c0) * Matrix2d::Identity();

    std::vector<double> g1(n), g0(n);
    double n1 = 0, n0 = 0;
    for (std::int64_t j = 0; j < n; ++j) {
        if (is_pos[j]) {
            g1[j] = 1.0;
            g0[j] = 0.0;
        } else {
            const Vector2d x(rows[j][0], rows[j][1]);
            const double f1v = 0.5 * density(x, mu1, c1);
            const double f0v = 0.5 * density(x, mu0, c0);
            g1[j] = f1v / (f0v + f1v);
            g0[j] = f0v / (f0v + f1v);
        }
        n1 += g1[j];
        n0 += g0[j];
    }
    Vector2d mu1n = Vector2d::Zero(), mu0n = Vector2d::Zero();
    for (std::int64_t j = 0; j < n; ++j) {
        const Vector2d x(rows[j][0], rows[j][1]);
        mu1n += g1[j] * x;
        mu0n += g0[j] * x;
    }
    mu1n /= n1;
    mu0n /= n0;
    Matrix2d s1n = Matrix2d::Zero(), s0n = Matrix2d::Zero();
    for (std::int64_t j = 0; j < n; ++j) {
        const Vector2d x(rows[j][0], rows[j][1]);
        s1n += g1[j] * (x - mu1n) * (x - mu1n).transpose();
        s0n += g0[j] * (x - mu0n) * (x - mu0n).transpose();
    }
    s1n /= n1;
    s0n /= n0;
    s1n += ridge_base(s1n) * Matrix2d::Identity();
    s0n += ridge_base(s0n) * Matrix2d::Identity();
    // ---- end oracle ----

    for (int i = 0; i < 2; ++i) {
        ASSERT_NEAR(s1.gmm.mu1(i), mu1n(i), 1e-10);
        ASSERT_NEAR(s1.gmm.mu0(i), mu0n(i), 1e-10);
        for (int j = 0; j < 2; ++j) {
            ASSERT_NEAR(s1.gmm.sigma1(i, j), s1n(i, j), 1e-10);
            ASSERT_NEAR(s1.gmm.sigma0(i, j), s0n(i, j), 1e-10);
        }
    }
    EXPECT_NEAR(s1.gmm.prior_pos, n1 / n, 1e-12);
    EXPECT_NEAR(s1.gmm.prior_neg, n0 / n, 1e-12);
    for (std::int64_t j = 0; j < n; ++j) {
        ASSERT_NEAR(s1.em.gamma0[j] + s1.em.gamma1[j], 1.0, 1e-12);
        ASSERT_NEAR(s1.em.gamma1[j], g1[j], 1e-10);
    }

    // RN decision via the oracle's linear-space rule.
    for (std::int64_t j = 0; j < n; ++j) {
        if (is_pos[j]) continue;
        const Vector2d x(rows[j][0], rows[j][1]);
        const bool rn = (n0 / n) * density(x, mu0n, s0n) > (n1 / n) * density(x, mu1n, s1n);
        const bool got = std::find(s1.reliable_negatives.begin(), s1.reliable_negatives.end(), j) !=
                         s1.reliable_negatives.end();
        ASSERT_EQ(got, rn);
    }
}

TEST(FitStep1, LabeledPositivesClampedRegardlessOfLikelihood) {
    auto rows = two_clusters(10, 40, 2.5, 0.4, 99);
    // Sample 45 sits deep in the negative cluster but is labelled positive.
    LabeledSet p = labeled({0, 1, 2, 45}, 50);
    auto f = stack_from_samples(rows);
    auto s1 = fit_step1(f, p);
    EXPECT_DOUBLE_EQ(s1.em.gamma1[45], 1.0);
    EXPECT_DOUBLE_EQ(s1.em.gamma0[45], 0.0);
    // And it can never be selected as a reliable negative.
    for (auto idx : s1.reliable_negatives) EXPECT_NE(idx, 45);
}

TEST(FitStep1, ReliableNegativePrecisionOnSeparatedClusters) {
    const int n_pos = 2000, n_neg = 2000;
    auto rows = two_clusters(n_pos, n_neg, 2.5, 0.5, 7);
    auto f = stack_from_samples(rows);
    // 5% of positives labelled.
    std::vector<std::int64_t> lab;
    for (int i = 0; i < n_pos / 20; ++i) lab.push_back(i);
    auto s1 = fit_step1(f, labeled(std::move(lab), n_pos + n_neg));
    ASSERT_FALSE(s1.reliable_negatives.empty());
    std::int64_t true_neg = 0;
    for (auto idx : s1.reliable_negatives)
        if (idx >= n_pos) ++true_neg;
    const double precision =
        static_cast<double>(true_neg) / static_cast<double>(s1.reliable_negatives.size());
    EXPECT_GE(precision, 0.99);
}

TEST(FitStep1, LogSpaceSurvivesHighDimension) {
    // dim 40: linear-space Gaussian densities underflow to 0, so the
    // posterior decision must be evaluated in log space.
    const int d = 40, n_pos = 300, n_neg = 300;
    Rng rng(13);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < n_pos; ++i) {
        std::vector<double> r(d);
        for (auto& v : r) v = 3.0 + rng.normal();
        rows.push_back(std::move(r));
    }
    for (int i = 0; i < n_neg; ++i) {
        std::vector<double> r(d);
        for (auto& v : r) v = rng.normal();
        rows.push_back(std::move(r));
    }
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> lab;
    for (int i = 0; i < 250; ++i) lab.push_back(i);
    auto s1 = fit_step1(f, labeled(std::move(lab), n_pos + n_neg));
    ASSERT_FALSE(s1.reliable_negatives.empty());
    std::int64_t true_neg = 0;
    for (auto idx : s1.reliable_negatives)
        if (idx >= n_pos) ++true_neg;
    EXPECT_GE(static_cast<double>(true_neg) / s1.reliable_negatives.size(), 0.95);
    EXPECT_TRUE(std::isfinite(s1.gmm.prior_neg));

    // The linear-space positive-class density of a far negative sample sits
    // dozens of orders of magnitude below the negative one, yet the log-space
    // rule stays finite and the sample is correctly chosen as RN.
    double ridge = 0.0;
    Eigen::MatrixXd sig1 = s1.gmm.sigma1;
    auto g1 = detail::make_gaussian(s1.gmm.mu1, sig1, &ridge);
    Eigen::Map<const Eigen::VectorXd> far(f.sample(n_pos + 5), d);
    const double logf1 = g1.logpdf(far);
    EXPECT_TRUE(std::isfinite(logf1));
    EXPECT_LT(std::exp(logf1), 1e-80);
    EXPECT_NE(std::find(s1.reliable_negatives.begin(), s1.reliable_negatives.end(),
                        static_cast<std::int64_t>(n_pos + 5)),
              s1.reliable_negatives.end());
}

TEST(FitStep1, SavedModelPredictionMatchesTrainingDecision) {
    // For unlabelled samples, classifying with the fitted GMM alone must
    // reproduce the training-time decision; labelled positives are the only
    // pixels where clamping can differ from the posterior rule.
    auto rows = two_clusters(80, 200, 2.0, 0.5, 61);
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> pos;
    for (int i = 0; i < 30; ++i) pos.push_back(i);
    auto s1 = fit_step1(f, labeled(pos, 280));
    const Mask training = step1_change_map(s1);
    const Mask posterior = gmm_predict(s1.gmm, f);
    for (std::int64_t j = 0; j < f.count(); ++j) {
        if (s1.is_positive[j]) continue;
        ASSERT_EQ(training[j], posterior[j]) << j;
    }
    FeatureStack wrong = stack_from_samples({{0.0}});
    EXPECT_THROW(gmm_predict(s1.gmm, wrong), std::invalid_argument);
}

TEST(FitStep1, RidgeHandlesFewerPositivesThanDims) {
    // |P| = 3 < dim = 6: the positive sample covariance is singular and the
    // ridge escalation must recover it.
    Rng rng(5);
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> r(6);
        for (auto& v : r) v = rng.normal() + (i < 30 ? 2.0 : -1.0);
        rows.push_back(std::move(r));
    }
    auto f = stack_from_samples(rows);
    auto s1 = fit_step1(f, labeled({0, 1, 2}, 200));
    EXPECT_GT(s1.gmm.ridge, 0.0);
    EXPECT_FALSE(s1.reliable_negatives.empty());
}

TEST(FitStep1, Errors) {
    auto rows = two_clusters(5, 5, 1.0, 0.3, 1);
    auto f = stack_from_samples(rows);
    EXPECT_THROW(fit_step1(f, labeled({0}, 10)), std::invalid_argument);
    EXPECT_THROW(fit_step1(f, labeled({0, 0}, 10)), std::invalid_argument);
    EXPECT_THROW(fit_step1(f, labeled({0, 99}, 10)), std::invalid_argument);
}

TEST(FitStep2, FiveFixedLayoutsAndSeparableFixturePerfectF1) {
    auto rows = two_clusters(60, 200, 2.0, 0.4, 21);
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> pos, neg;
    for (int i = 0; i < 60; ++i) pos.push_back(i);
    for (int i = 60; i < 260; ++i) neg.push_back(i);
    auto ens = fit_step2(f, labeled(pos, 260), neg, 900);

    ASSERT_EQ(ens.members.size(), 5u);
    const auto& layouts = mlp_ensemble_layouts();
    for (std::size_t m = 0; m < 5; ++m) {
        ASSERT_EQ(ens.members[m].layers.size(), layouts[m].size() + 1);
        for (std::size_t l = 0; l < layouts[m].size(); ++l) {
            EXPECT_EQ(ens.members[m].layers[l].fan_out, layouts[m][l]);
            EXPECT_EQ(ens.members[m].layers[l].act, nn::Act::relu);
        }
        EXPECT_EQ(ens.members[m].layers.back().fan_out, 1);
        EXPECT_EQ(ens.members[m].layers.back().act, nn::Act::logistic);

        // Member-wise training F1 on the margin-separated fixture is 1.0.
        std::int64_t tp = 0, fp = 0, fn = 0;
        const std::int64_t n = f.count();
        nn::Tensor xb({static_cast<int>(n), f.dim});
        std::memcpy(xb.v.data(), f.x.data(), f.x.size() * 8);
        auto out = nn::forward_output(ens.members[m], xb);
        for (std::int64_t i = 0; i < n; ++i) {
            const bool pred = out.v[i] > 0.5;
            const bool truth = i < 60;
            tp += pred && truth;
            fp += pred && !truth;
            fn += !pred && truth;
        }
        EXPECT_EQ(fp, 0) << "member " << m;
        EXPECT_EQ(fn, 0) << "member " << m;
        EXPECT_EQ(tp, 60) << "member " << m;
    }
}

TEST(FitStep2, DeterministicPerSeed) {
    auto rows = two_clusters(30, 80, 1.5, 0.5, 33);
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> pos, neg;
    for (int i = 0; i < 30; ++i) pos.push_back(i);
    for (int i = 30; i < 110; ++i) neg.push_back(i);
    MlpTrainConfig fast;
    fast.max_epochs = 12;
    auto a = fit_step2(f, labeled(pos, 110), neg, 7, fast);
    auto b = fit_step2(f, labeled(pos, 110), neg, 7, fast);
    for (std::size_t m = 0; m < 5; ++m)
        for (std::size_t li = 0; li < a.members[m].weights.size(); ++li)
            ASSERT_EQ(a.members[m].weights[li].v, b.members[m].weights[li].v);
    EXPECT_EQ(a.epochs_run, b.epochs_run);
}

TEST(FitStep2, Errors) {
    auto rows = two_clusters(5, 5, 1.0, 0.3, 2);
    auto f = stack_from_samples(rows);
    EXPECT_THROW(fit_step2(f, labeled({}, 10), {5, 6}, 1), std::invalid_argument);
    EXPECT_THROW(fit_step2(f, labeled({0, 1}, 10), {}, 1), std::invalid_argument);
}

TEST(Predict, VoteFractionsAndThresholds) {
    // Hand-built members: two always vote positive, three always negative.
    MlpEnsemble ens;
    ens.input_dim = 1;
    for (int m = 0; m < 5; ++m) {
        nn::Network net = nn::make_network({nn::dense(1, 1, nn::Act::logistic)}, m);
        net.weights[0].v[0] = 0.0;
        net.biases[0].v[0] = (m < 2) ? 5.0 : -5.0;
        ens.members.push_back(std::move(net));
        ens.epochs_run.push_back(1);
    }
    FeatureStack f = stack_from_samples({{0.1}, {0.9}, {-0.4}});
    auto at05 = predict(ens, f, 0.5);
    auto at03 = predict(ens, f, 0.3);
    for (std::int64_t i = 0; i < f.count(); ++i) {
        EXPECT_DOUBLE_EQ(at05.votes[i], 0.4);
        EXPECT_EQ(at05.binary[i], 0);  // 2-of-5 fails majority
        EXPECT_EQ(at03.binary[i], 1);  // 2-of-5 passes at t=0.3
    }

    // All five positive -> positive for every t < 1.
    for (auto& net : ens.members) net.biases[0].v[0] = 5.0;
    for (double t : {0.0, 0.3, 0.5, 0.8, 0.99}) {
        auto m = predict(ens, f, t);
        for (auto v : m.binary) EXPECT_EQ(v, 1);
    }

    FeatureStack wrong = stack_from_samples({{0.1, 0.2}});
    EXPECT_THROW(predict(ens, wrong, 0.5), std::invalid_argument);
}

TEST(Predict, ThresholdMonotonicity) {
    Rng rng(17);
    std::vector<double> votes(500);
    for (auto& v : votes) v = static_cast<double>(rng.below(6)) / 5.0;
    auto at05 = apply_vote_threshold(votes, 0.5);
    auto at03 = apply_vote_threshold(votes, 0.3);
    std::int64_t n05 = 0, n03 = 0;
    for (std::size_t i = 0; i < votes.size(); ++i) {
        if (at05[i]) ASSERT_EQ(at03[i], 1);  // positives at 0.5 contained in 0.3
        n05 += at05[i];
        n03 += at03[i];
    }
    EXPECT_GE(n03, n05);
}

TEST(Isvm, SeparableFixtureConverges) {
    auto rows = two_clusters(50, 300, 2.0, 0.4, 44);
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> pos, rn;
    for (int i = 0; i < 50; ++i) pos.push_back(i);
    for (int i = 50; i < 200; ++i) rn.push_back(i);  // part of the negatives as RN
    auto model = fit_isvm(f, labeled(pos, 350), rn, 5);
    EXPECT_FALSE(model.stopped_by_fnr);
    EXPECT_LE(model.iterations, 3);
    // Zero training FNR.
    auto pred = isvm_predict(model, f);
    for (int i = 0; i < 50; ++i) EXPECT_EQ(pred[i], 1);
    // RN set sizes never decrease.
    for (std::size_t i = 1; i < model.rn_sizes.size(); ++i)
        EXPECT_GE(model.rn_sizes[i], model.rn_sizes[i - 1]);
}

TEST(Isvm, FnrStopRuleReturnsLastAcceptedModel) {
    // Iteration 1 sacrifices exactly 5% of P (the small group overlapped by
    // initial RNs) and classifies the big unlabelled cloud negative. After
    // the cloud joins the RN set the hinge optimum collapses to all-negative
    // under the 4000:60 imbalance, FNR exceeds 5%, and the iteration-1 model
    // must come back.
    Rng rng(3);
    std::vector<std::vector<double>> rows;
    auto put = [&](int count, double cx) {
        for (int i = 0; i < count; ++i)
            rows.push_back({cx + 0.01 * rng.normal(), 0.01 * rng.normal()});
    };
    put(57, 1.0);    // P bulk
    put(3, 0.5);     // P group traded away at iteration 1 (exactly 5%)
    put(40, -1.0);   // RN
    put(60, 0.15);   // RN pushing the boundary right of the cloud
    put(4000, 0.2);  // unlabeled cloud picked up after iteration 1
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> pos, rn;
    for (int i = 0; i < 60; ++i) pos.push_back(i);
    for (int i = 60; i < 160; ++i) rn.push_back(i);
    auto model = fit_isvm(f, labeled(pos, static_cast<std::int64_t>(rows.size())), rn, 11,
                          /*fixed_lambda=*/0.0625);

    EXPECT_TRUE(model.stopped_by_fnr);
    EXPECT_EQ(model.iterations, 1);
    ASSERT_EQ(model.rn_sizes.size(), 2u);
    EXPECT_EQ(model.rn_sizes[0], 100u);   // iteration 1
    EXPECT_EQ(model.rn_sizes[1], 4100u);  // iteration 2 saw the grown set
    // The returned (iteration-1) model still meets the 5% FNR bound on P and
    // keeps the bulk of P positive.
    auto pred = isvm_predict(model, f);
    int miss = 0;
    for (int i = 0; i < 60; ++i) miss += pred[i] ? 0 : 1;
    EXPECT_LE(miss, 3);
    for (int i = 0; i < 57; ++i) EXPECT_EQ(pred[i], 1);
}

TEST(OccModelIo, RoundTrip) {
    auto rows = two_clusters(40, 120, 1.8, 0.5, 77);
    auto f = stack_from_samples(rows);
    std::vector<std::int64_t> pos;
    for (int i = 0; i < 40; ++i) pos.push_back(i);
    auto s1 = fit_step1(f, labeled(pos, 160));
    MlpTrainConfig fast;
    fast.max_epochs = 8;
    auto ens = fit_step2(f, labeled(pos, 160), s1.reliable_negatives, 3, fast);

    auto dir = std::filesystem::temp_directory_path() / "hetcd_occ_io";
    std::filesystem::remove_all(dir);
    save_occ_model(dir, s1, &ens, nullptr, FeatureVariant::no_differences, 0.3, "two-step");
    auto loaded = load_occ_model(dir);
    EXPECT_EQ(loaded.method, "two-step");
    EXPECT_EQ(loaded.variant, FeatureVariant::no_differences);
    EXPECT_DOUBLE_EQ(loaded.threshold, 0.3);
    EXPECT_EQ(loaded.ensemble.members.size(), 5u);
    EXPECT_EQ(loaded.gmm.dim, s1.gmm.dim);
    EXPECT_NEAR((loaded.gmm.mu1 - s1.gmm.mu1).norm(), 0.0, 0.0);
    EXPECT_NEAR((loaded.gmm.sigma0 - s1.gmm.sigma0).norm(), 0.0, 0.0);

    // Loaded ensemble votes identically.
    auto a = predict(ens, f, 0.5);
    auto b = predict(loaded.ensemble, f, 0.5);
    EXPECT_EQ(a.votes, b.votes);
    std::filesystem::remove_all(dir);
}
