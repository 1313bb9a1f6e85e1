#include <gtest/gtest.h>

#include <cmath>

#include "hetcd/cae.hpp"
#include "hetcd/synth.hpp"

using namespace hetcd;

namespace {

// Single conv3x3 layer passing its input through unchanged.
nn::Network identity_conv_net() {
    nn::Network net = nn::make_network({nn::conv3x3(1, 1, nn::Act::identity)}, 1);
    std::fill(net.weights[0].v.begin(), net.weights[0].v.end(), 0.0);
    net.weights[0].v[4] = 1.0;
    net.biases[0].v[0] = 0.0;
    return net;
}

CaeModel identity_model() {
    CaeModel m;
    m.encoder_x = identity_conv_net();
    m.decoder_x = identity_conv_net();
    m.encoder_y = identity_conv_net();
    m.decoder_y = identity_conv_net();
    m.config.code_channels = 1;
    return m;
}

// Naive affinity prior on a small patch, recomputed with plain loops.
std::vector<double> naive_alpha(const std::vector<double>& px, int c1,
                                const std::vector<double>& py, int c2) {
    const std::int64_t n = static_cast<std::int64_t>(px.size()) / c1;
    auto dist = [&](const std::vector<double>& p, int c, std::int64_t i, std::int64_t j) {
        double s = 0.0;
        for (int ch = 0; ch < c; ++ch) {
            const double d = p[ch * n + i] - p[ch * n + j];
            s += d * d;
        }
        return std::sqrt(s);
    };
    auto affinity = [&](const std::vector<double>& p, int c) {
        double mean = 0.0;
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                if (i != j) mean += dist(p, c, i, j);
        mean /= static_cast<double>(n) * (n - 1);
        const double h = std::max(mean, 1e-9);
        std::vector<double> a(n * n);
        for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t j = 0; j < n; ++j) {
                const double d = dist(p, c, i, j);
                a[i * n + j] = std::exp(-d * d / (h * h));
            }
        return a;
    };
    auto ax = affinity(px, c1);
    auto ay = affinity(py, c2);
    std::vector<double> alpha(n, 0.0);
    for (std::int64_t i = 0; i < n; ++i) {
        for (std::int64_t j = 0; j < n; ++j) alpha[i] += std::abs(ax[i * n + j] - ay[i * n + j]);
        alpha[i] /= n;
    }
    double lo = alpha[0], hi = alpha[0];
    for (double a : alpha) {
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    if (hi - lo > 1e-15)
        for (auto& a : alpha) a = (a - lo) / (hi - lo);
    else
        std::fill(alpha.begin(), alpha.end(), 0.0);
    return alpha;
}

}  // namespace

TEST(AffinityPrior, IdenticalStructureGivesZeroAlpha) {
    Rng rng(4);
    std::vector<double> px(2 * 9);
    for (auto& v : px) v = rng.uniform(-1, 1);
    auto prior = affinity_prior(px, 2, px, 2);
    for (double a : prior.alpha) EXPECT_DOUBLE_EQ(a, 0.0);
    for (double p : prior.pi) EXPECT_DOUBLE_EQ(p, 1.0);
}

TEST(AffinityPrior, ConstantPatchesGiveZeroAlpha) {
    std::vector<double> px(3 * 16, 0.7), py(2 * 16, -0.2);
    auto prior = affinity_prior(px, 3, py, 2);
    for (double a : prior.alpha) EXPECT_DOUBLE_EQ(a, 0.0);
}

TEST(AffinityPrior, DisplacedPixelAttainsMaxAlpha) {
    // 3x3 patch; pixel 4 is strongly displaced in modality y only.
    Rng rng(9);
    std::vector<double> px(1 * 9), py(1 * 9);
    for (int i = 0; i < 9; ++i) px[i] = py[i] = rng.uniform(-0.3, 0.3);
    py[4] += 1.0;
    auto prior = affinity_prior(px, 1, py, 1);
    auto expect = naive_alpha(px, 1, py, 1);
    for (int i = 0; i < 9; ++i) ASSERT_NEAR(prior.alpha[i], expect[i], 1e-12);
    int argmax = 0;
    for (int i = 1; i < 9; ++i)
        if (prior.alpha[i] > prior.alpha[argmax]) argmax = i;
    EXPECT_EQ(argmax, 4);
    EXPECT_DOUBLE_EQ(prior.alpha[4], 1.0);
}

TEST(AffinityPrior, BoundsAndErrors) {
    Rng rng(2);
    std::vector<double> px(2 * 25), py(3 * 25);
    for (auto& v : px) v = rng.uniform(-1, 1);
    for (auto& v : py) v = rng.uniform(-1, 1);
    auto prior = affinity_prior(px, 2, py, 3);
    for (std::size_t i = 0; i < prior.alpha.size(); ++i) {
        EXPECT_GE(prior.alpha[i], 0.0);
        EXPECT_LE(prior.alpha[i], 1.0);
        EXPECT_GE(prior.pi[i], 0.0);
        EXPECT_LE(prior.pi[i], 1.0);
    }
    std::vector<double> bad(3 * 24);
    EXPECT_THROW(affinity_prior(px, 2, bad, 3), std::invalid_argument);
}

TEST(CaeLosses, IdentityModelZeroLosses) {
    CaeModel m = identity_model();
    Rng rng(5);
    nn::Tensor x({2, 1, 4, 4});
    for (auto& v : x.v) v = rng.uniform(-0.9, 0.9);
    const std::vector<double> pi0(32, 0.5), pi(32, 0.5);
    auto l = cae_losses(m, x, x, pi0, pi);
    EXPECT_DOUBLE_EQ(l.l_rec, 0.0);
    EXPECT_DOUBLE_EQ(l.l_cyc, 0.0);
    EXPECT_DOUBLE_EQ(l.l_code, 0.0);  // z_x == z_y
    EXPECT_DOUBLE_EQ(l.l_tr, 0.0);    // x_hat == x when y == x
}

TEST(CaeLosses, ZeroPiKillsTranslationLoss) {
    CaeModel m = identity_model();
    Rng rng(6);
    nn::Tensor x({1, 1, 4, 4}), y({1, 1, 4, 4});
    for (auto& v : x.v) v = rng.uniform(-0.9, 0.9);
    for (auto& v : y.v) v = rng.uniform(-0.9, 0.9);
    const std::vector<double> pi0(16, 1.0), pi(16, 0.0);
    auto l = cae_losses(m, x, y, pi0, pi);
    EXPECT_DOUBLE_EQ(l.l_tr, 0.0);
    EXPECT_GT(l.l_code, 0.0);
}

TEST(CaeLosses, NonNegativeAndWeighted) {
    SynthConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    auto b = generate_synthetic_pair(scfg);
    auto x = normalize_raster(b.t1);
    auto y = normalize_raster(b.t2);

    CaeConfig cfg;
    cfg.code_channels = 3;
    cfg.hidden_channels = 4;
    cfg.seed = 11;
    CaeModel m;
    m.config = cfg;
    m.encoder_x = make_cae_encoder(4, 4, 3, 1);
    m.decoder_x = make_cae_decoder(3, 4, 4, 2);
    m.encoder_y = make_cae_encoder(3, 4, 3, 3);
    m.decoder_y = make_cae_decoder(3, 4, 3, 4);

    nn::Tensor xb({1, 4, 8, 8}), yb({1, 3, 8, 8});
    detail::copy_patch(x, 0, 0, 8, 8, xb.v.data());
    detail::copy_patch(y, 0, 0, 8, 8, yb.v.data());
    std::vector<double> pi0(64, 0.8), pi(64, 0.6);
    auto l = cae_losses(m, xb, yb, pi0, pi);
    EXPECT_GE(l.l_rec, 0.0);
    EXPECT_GE(l.l_code, 0.0);
    EXPECT_GE(l.l_cyc, 0.0);
    EXPECT_GE(l.l_tr, 0.0);
    EXPECT_NEAR(l.total, l.l_rec + l.l_code + l.l_cyc + l.l_tr, 1e-12);  // unit weights

    m.config.w_rec = 2.0;
    m.config.w_tr = 0.5;
    auto lw = cae_losses(m, xb, yb, pi0, pi);
    EXPECT_NEAR(lw.total, 2.0 * lw.l_rec + lw.l_code + lw.l_cyc + 0.5 * lw.l_tr, 1e-12);
}

TEST(CaeLosses, CodeLossIgnoresDecoders) {
    SynthConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    auto b = generate_synthetic_pair(scfg);
    auto x = normalize_raster(b.t1);
    auto y = normalize_raster(b.t2);
    CaeModel m;
    m.config.code_channels = 2;
    m.encoder_x = make_cae_encoder(4, 3, 2, 1);
    m.decoder_x = make_cae_decoder(2, 3, 4, 2);
    m.encoder_y = make_cae_encoder(3, 3, 2, 3);
    m.decoder_y = make_cae_decoder(2, 3, 3, 4);
    nn::Tensor xb({1, 4, 6, 6}), yb({1, 3, 6, 6});
    detail::copy_patch(x, 2, 2, 6, 6, xb.v.data());
    detail::copy_patch(y, 2, 2, 6, 6, yb.v.data());
    std::vector<double> pi0(36, 1.0), pi(36, 1.0);
    auto before = cae_losses(m, xb, yb, pi0, pi);
    for (auto& w : m.decoder_x.weights)
        for (auto& v : w.v) v += 0.05;
    for (auto& w : m.decoder_y.weights)
        for (auto& v : w.v) v -= 0.03;
    auto after = cae_losses(m, xb, yb, pi0, pi);
    EXPECT_DOUBLE_EQ(before.l_code, after.l_code);
    EXPECT_NE(before.l_rec, after.l_rec);
}

// Full-model gradient oracle: central finite differences on the weighted
// total loss across all four networks.
TEST(CaeGradients, MatchFiniteDifferences) {
    Rng rng(31);
    CaeModel m;
    m.config.code_channels = 2;
    m.config.w_rec = 1.3;
    m.config.w_code = 0.7;
    m.config.w_cyc = 1.1;
    m.config.w_tr = 0.9;
    m.encoder_x = make_cae_encoder(2, 3, 2, 51);
    m.decoder_x = make_cae_decoder(2, 3, 2, 52);
    m.encoder_y = make_cae_encoder(1, 3, 2, 53);
    m.decoder_y = make_cae_decoder(2, 3, 1, 54);

    nn::Tensor x({2, 2, 4, 4}), y({2, 1, 4, 4});
    for (auto& v : x.v) v = rng.uniform(-0.8, 0.8);
    for (auto& v : y.v) v = rng.uniform(-0.8, 0.8);
    std::vector<double> pi0(32), pi(32);
    for (auto& v : pi0) v = rng.uniform(0.1, 1.0);
    for (auto& v : pi) v = rng.uniform(0.0, 1.0);

    detail::CaeGrads grads;
    detail::cae_losses_impl(m, x, y, pi0, pi, &grads);

    const double h = 1e-6;
    double max_rel = 0.0;
    auto check_net = [&](nn::Network& net, const nn::Gradients& g) {
        for (std::size_t li = 0; li < net.weights.size(); ++li) {
            for (std::int64_t i = 0; i < net.weights[li].size(); ++i) {
                double& p = net.weights[li].v[i];
                const double saved = p;
                p = saved + h;
                const double up = cae_losses(m, x, y, pi0, pi).total;
                p = saved - h;
                const double dn = cae_losses(m, x, y, pi0, pi).total;
                p = saved;
                const double numeric = (up - dn) / (2 * h);
                const double analytic = g.dw[li].v[i];
                max_rel = std::max(max_rel, std::abs(numeric - analytic) /
                                                std::max({std::abs(numeric), std::abs(analytic), 1e-8}));
            }
        }
    };
    check_net(m.encoder_x, grads.enc_x);
    check_net(m.decoder_x, grads.dec_x);
    check_net(m.encoder_y, grads.enc_y);
    check_net(m.decoder_y, grads.dec_y);
    EXPECT_LT(max_rel, 1e-4);
}

TEST(TrainCae, DefaultScheduleBatchCounts) {
    // batches_per_epoch=600 and patches_per_batch=20 on 20x20 patches are the
    // adapted training constants; one epoch must record exactly 600 updates.
    SynthConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    scfg.seed = 21;
    auto b = generate_synthetic_pair(scfg);
    CaeConfig cfg;  // keep default patch/batch structure
    cfg.epochs = 1;
    cfg.hidden_channels = 2;
    cfg.code_channels = 2;
    cfg.seed = 77;
    EXPECT_EQ(cfg.batches_per_epoch, 600);
    EXPECT_EQ(cfg.patches_per_batch, 20);
    EXPECT_EQ(cfg.patch_size, 20);
    auto model = train_cae(normalize_raster(b.t1), normalize_raster(b.t2), cfg);
    EXPECT_EQ(model.batch_updates, 600);
    ASSERT_EQ(model.history.size(), 1u);
    EXPECT_EQ(model.history[0].batches, 600);
}

TEST(TrainCae, DeterministicAndFinite) {
    SynthConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    scfg.seed = 3;
    auto b = generate_synthetic_pair(scfg);
    auto x = normalize_raster(b.t1);
    auto y = normalize_raster(b.t2);
    CaeConfig cfg;
    cfg.patch_size = 8;
    cfg.patches_per_batch = 4;
    cfg.batches_per_epoch = 10;
    cfg.epochs = 2;
    cfg.hidden_channels = 4;
    cfg.code_channels = 2;
    cfg.seed = 123;
    auto m1 = train_cae(x, y, cfg);
    auto m2 = train_cae(x, y, cfg);
    ASSERT_EQ(m1.history.size(), m2.history.size());
    for (std::size_t i = 0; i < m1.history.size(); ++i) {
        EXPECT_DOUBLE_EQ(m1.history[i].total, m2.history[i].total);
        EXPECT_TRUE(std::isfinite(m1.history[i].total));
        EXPECT_GE(m1.history[i].l_rec, 0.0);
        EXPECT_GE(m1.history[i].l_code, 0.0);
        EXPECT_GE(m1.history[i].l_cyc, 0.0);
        EXPECT_GE(m1.history[i].l_tr, 0.0);
    }
    for (std::size_t li = 0; li < m1.encoder_x.weights.size(); ++li)
        EXPECT_EQ(m1.encoder_x.weights[li].v, m2.encoder_x.weights[li].v);
    EXPECT_EQ(m1.decoder_y.weights[0].v, m2.decoder_y.weights[0].v);
}

TEST(TrainCae, LossDecreases) {
    SynthConfig scfg;
    scfg.height = 48;
    scfg.width = 48;
    scfg.seed = 8;
    auto b = generate_synthetic_pair(scfg);
    CaeConfig cfg;
    cfg.patch_size = 12;
    cfg.patches_per_batch = 8;
    cfg.batches_per_epoch = 40;
    cfg.epochs = 3;
    cfg.hidden_channels = 8;
    cfg.code_channels = 4;
    cfg.learning_rate = 2e-3;
    cfg.seed = 42;
    auto model = train_cae(normalize_raster(b.t1), normalize_raster(b.t2), cfg);
    ASSERT_EQ(model.history.size(), 3u);
    EXPECT_LT(model.history.back().total, model.history.front().total);
}

TEST(TrainCae, RejectsTooSmallRaster) {
    SynthConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    auto b = generate_synthetic_pair(scfg);
    CaeConfig cfg;
    cfg.patch_size = 64;
    EXPECT_THROW(train_cae(normalize_raster(b.t1), normalize_raster(b.t2), cfg),
                 std::invalid_argument);
}

TEST(Translate, ShapesAndExactDifferences) {
    SynthConfig scfg;
    scfg.height = 40;
    scfg.width = 56;  // forces ragged tiles with tile=32
    scfg.seed = 13;
    auto b = generate_synthetic_pair(scfg);
    auto x = normalize_raster(b.t1);
    auto y = normalize_raster(b.t2);
    CaeConfig cfg;
    cfg.patch_size = 8;
    cfg.patches_per_batch = 4;
    cfg.batches_per_epoch = 5;
    cfg.epochs = 1;
    cfg.hidden_channels = 4;
    cfg.code_channels = 2;
    cfg.seed = 5;
    auto model = train_cae(x, y, cfg);
    auto t = translate(model, x, y, 32);
    EXPECT_EQ(t.x_hat.channels, x.channels);
    EXPECT_EQ(t.y_hat.channels, y.channels);
    EXPECT_EQ(t.x_hat.height, x.height);
    EXPECT_EQ(t.y_hat.width, y.width);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        ASSERT_DOUBLE_EQ(t.d_x.data[i], t.x_hat.data[i] - x.data[i]);
        ASSERT_GE(t.x_hat.data[i], -1.0);
        ASSERT_LE(t.x_hat.data[i], 1.0);
    }
    for (std::int64_t i = 0; i < y.size(); ++i)
        ASSERT_DOUBLE_EQ(t.d_y.data[i], y.data[i] - t.y_hat.data[i]);

    // Tile partition must not depend on tile size boundaries inside a tile:
    // recomputing with the same tile size is bit-identical.
    auto t2 = translate(model, x, y, 32);
    EXPECT_EQ(t.x_hat.data, t2.x_hat.data);

    Raster wrong = y;
    wrong.channels = 2;
    wrong.names = {"a", "b"};
    wrong.data.resize(wrong.size());
    EXPECT_THROW(translate(model, x, wrong), std::invalid_argument);
}

TEST(Translate, IdentityModelZeroDifference) {
    CaeModel m = identity_model();
    Raster x;
    x.height = 6;
    x.width = 6;
    x.channels = 1;
    x.names = {"a"};
    x.data.assign(36, 0.0);
    Rng rng(3);
    for (auto& v : x.data) v = rng.uniform(-0.9, 0.9);
    auto t = translate(m, x, x);
    for (double v : t.d_x.data) EXPECT_DOUBLE_EQ(v, 0.0);
    for (double v : t.d_y.data) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(ChangeMap, AllZeroDifferencesMeanNoChange) {
    TranslationResult t;
    t.d_x.height = t.d_y.height = 4;
    t.d_x.width = t.d_y.width = 4;
    t.d_x.channels = 2;
    t.d_y.channels = 1;
    t.d_x.names = {"a", "b"};
    t.d_y.names = {"c"};
    t.d_x.data.assign(32, 0.0);
    t.d_y.data.assign(16, 0.0);
    auto map = cae_change_map(t);
    for (auto v : map.binary) EXPECT_EQ(v, 0);
}

TEST(ChangeMap, BimodalScoresSplitBetweenModes) {
    // Two well separated difference populations; threshold must land between
    // them and classify each mode consistently (>= 99%).
    Rng rng(17);
    const int n = 4000;
    TranslationResult t;
    t.d_x.height = 80;
    t.d_x.width = 50;
    t.d_x.channels = 1;
    t.d_x.names = {"a"};
    t.d_x.data.resize(n);
    t.d_y = t.d_x;
    t.d_y.names = {"b"};
    std::vector<int> mode(n);
    for (int i = 0; i < n; ++i) {
        mode[i] = (i % 4 == 0) ? 1 : 0;
        const double centre = mode[i] ? 6.0 : 0.0;
        t.d_x.data[i] = centre + 0.25 * rng.normal();
        t.d_y.data[i] = centre + 0.25 * rng.normal();
    }
    auto map = cae_change_map(t);
    int agree = 0;
    for (int i = 0; i < n; ++i) agree += (map.binary[i] == mode[i]) ? 1 : 0;
    EXPECT_GE(agree, static_cast<int>(0.99 * n));
}

TEST(Otsu, MatchesExhaustiveSearch) {
    // Naive oracle: recompute the between-class variance per boundary from
    // scratch and take the first maximizer.
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        Rng rng(seed);
        std::vector<double> vals(1000);
        for (auto& v : vals) v = (rng.uniform() < 0.3) ? rng.normal() * 0.5 + 4.0 : rng.normal();
        const int bins = 256;
        double lo = vals[0], hi = vals[0];
        for (double v : vals) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        std::vector<std::int64_t> hist(bins, 0);
        for (double v : vals)
            hist[std::min(static_cast<int>((v - lo) / (hi - lo) * bins), bins - 1)] += 1;
        double best_var = -1.0;
        int best_t = 0;
        for (int t = 0; t + 1 < bins; ++t) {
            double w0 = 0, w1 = 0, s0 = 0, s1 = 0;
            for (int b = 0; b <= t; ++b) {
                w0 += hist[b];
                s0 += static_cast<double>(b) * hist[b];
            }
            for (int b = t + 1; b < bins; ++b) {
                w1 += hist[b];
                s1 += static_cast<double>(b) * hist[b];
            }
            if (w0 == 0 || w1 == 0) continue;
            const double var = w0 * w1 * (s0 / w0 - s1 / w1) * (s0 / w0 - s1 / w1);
            if (var > best_var) {
                best_var = var;
                best_t = t;
            }
        }
        const double expect = lo + (best_t + 1) * (hi - lo) / bins;
        EXPECT_NEAR(otsu_threshold(vals, bins), expect, 1e-12);
    }
}

TEST(CaeModelIo, RoundTrip) {
    SynthConfig scfg;
    scfg.height = 32;
    scfg.width = 32;
    auto b = generate_synthetic_pair(scfg);
    CaeConfig cfg;
    cfg.patch_size = 8;
    cfg.patches_per_batch = 2;
    cfg.batches_per_epoch = 3;
    cfg.epochs = 1;
    cfg.hidden_channels = 3;
    cfg.code_channels = 2;
    cfg.seed = 55;
    auto model = train_cae(normalize_raster(b.t1), normalize_raster(b.t2), cfg);
    auto dir = std::filesystem::temp_directory_path() / "hetcd_cae_io";
    std::filesystem::remove_all(dir);
    save_cae_model(dir, model);
    auto loaded = load_cae_model(dir);
    EXPECT_EQ(loaded.batch_updates, model.batch_updates);
    ASSERT_EQ(loaded.history.size(), model.history.size());
    EXPECT_DOUBLE_EQ(loaded.history[0].total, model.history[0].total);
    for (std::size_t li = 0; li < model.encoder_x.weights.size(); ++li)
        EXPECT_EQ(loaded.encoder_x.weights[li].v, model.encoder_x.weights[li].v);
    EXPECT_EQ(loaded.config.seed, model.config.seed);
    std::filesystem::remove_all(dir);
}
