#pragma once
// Code-aligned autoencoders: one encoder/decoder pair per image domain with
// aligned code spaces, trained on co-located patches with four loss terms
// (reconstruction, code alignment, cycle consistency, weighted translation).
// Translation of each image into the other domain yields the difference
// images that feed the classifier, and an Otsu-thresholded magnitude map
// serves as the unsupervised baseline.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "hetcd/nnkit.hpp"
#include "hetcd/raster.hpp"
#include "hetcd/rng.hpp"

namespace hetcd {

struct CaeConfig {
    int patch_size = 20;
    int patches_per_batch = 20;
    int batches_per_epoch = 600;
    int epochs = 10;
    int code_channels = 8;
    int hidden_channels = 32;
    double w_rec = 1.0;
    double w_code = 1.0;
    double w_cyc = 1.0;
    double w_tr = 1.0;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double l_rec = 0, l_code = 0, l_cyc = 0, l_tr = 0, total = 0;
    int batches = 0;
};

struct CaeModel {
    nn::Network encoder_x, decoder_x, encoder_y, decoder_y;
    CaeConfig config;
    std::vector<EpochRecord> history;
    std::int64_t batch_updates = 0;

    int channels_x() const { return encoder_x.layers.front().fan_in; }
    int channels_y() const { return encoder_y.layers.front().fan_in; }
};

// Per-pixel unsupervised change prior over one patch: alpha in [0,1] high
// where the cross-modal affinity structure disagrees, pi = 1 - alpha.
struct AffinityPrior {
    std::vector<double> alpha;
    std::vector<double> pi;
};

struct TranslationResult {
    Raster x_hat;  // Y translated into the domain of X
    Raster y_hat;  // X translated into the domain of Y
    Raster d_x;    // x_hat - x
    Raster d_y;    // y - y_hat
};

struct CaeLosses {
    double l_rec = 0, l_code = 0, l_cyc = 0, l_tr = 0, total = 0;
};

inline nn::Network make_cae_encoder(int in_channels, int hidden, int code, std::uint64_t seed) {
    return nn::make_network({nn::conv3x3(in_channels, hidden, nn::Act::leaky_relu),
                             nn::conv3x3(hidden, hidden, nn::Act::leaky_relu),
                             nn::conv3x3(hidden, code, nn::Act::identity)},
                            seed);
}

inline nn::Network make_cae_decoder(int code, int hidden, int out_channels, std::uint64_t seed) {
    return nn::make_network({nn::conv3x3(code, hidden, nn::Act::leaky_relu),
                             nn::conv3x3(hidden, hidden, nn::Act::leaky_relu),
                             nn::conv3x3(hidden, out_channels, nn::Act::tanh)},
                            seed);
}

// ---------------------------------------------------------------------------
// Affinity prior
// ---------------------------------------------------------------------------

namespace detail {

// Gaussian affinity matrix from within-modality pairwise pixel distances.
// Kernel width is the mean pairwise distance, floored to stay finite on
// constant patches.
inline Eigen::MatrixXd affinity_matrix(const Eigen::MatrixXd& pix /* n x c */) {
    const auto n = pix.rows();
    Eigen::VectorXd sq = pix.rowwise().squaredNorm();
    Eigen::MatrixXd d2 = (-2.0 * pix * pix.transpose()).eval();
    d2.colwise() += sq;
    d2.rowwise() += sq.transpose();
    d2 = d2.cwiseMax(0.0);
    double mean_dist = 0.0;
    if (n > 1) {
        mean_dist = (d2.array().sqrt().sum()) / (static_cast<double>(n) * (n - 1));
    }
    const double h = std::max(mean_dist, 1e-9);
    return (-d2.array() / (h * h)).exp().matrix();
}

// Pixel-major view of one patch tensor {C, n} -> n x C matrix.
inline Eigen::MatrixXd pixels_of(const double* planes, int channels, std::int64_t n) {
    Eigen::MatrixXd pix(n, channels);
    for (int c = 0; c < channels; ++c)
        pix.col(c) = Eigen::Map<const Eigen::VectorXd>(planes + static_cast<std::int64_t>(c) * n, n);
    return pix;
}

}  // namespace detail

// patch_x/patch_y hold co-located patches as {c1, n} and {c2, n} planar data
// over the same n pixels.
inline AffinityPrior affinity_prior(const std::vector<double>& patch_x, int c1,
                                    const std::vector<double>& patch_y, int c2) {
    if (c1 <= 0 || c2 <= 0) throw std::invalid_argument("affinity_prior: channel counts must be positive");
    if (patch_x.size() % c1 != 0 || patch_y.size() % c2 != 0)
        throw std::invalid_argument("affinity_prior: data size not divisible by channels");
    const std::int64_t n = static_cast<std::int64_t>(patch_x.size()) / c1;
    if (static_cast<std::int64_t>(patch_y.size()) / c2 != n)
        throw std::invalid_argument("affinity_prior: patch pixel counts differ");

    const Eigen::MatrixXd ax = detail::affinity_matrix(detail::pixels_of(patch_x.data(), c1, n));
    const Eigen::MatrixXd ay = detail::affinity_matrix(detail::pixels_of(patch_y.data(), c2, n));

    AffinityPrior prior;
    prior.alpha.resize(n);
    for (std::int64_t i = 0; i < n; ++i)
        prior.alpha[i] = (ax.row(i) - ay.row(i)).cwiseAbs().sum() / static_cast<double>(n);

    double lo = prior.alpha[0], hi = prior.alpha[0];
    for (double a : prior.alpha) {
        lo = std::min(lo, a);
        hi = std::max(hi, a);
    }
    if (hi - lo > 1e-15) {
        for (auto& a : prior.alpha) a = (a - lo) / (hi - lo);
    } else {
        std::fill(prior.alpha.begin(), prior.alpha.end(), 0.0);
    }
    prior.pi.resize(n);
    for (std::int64_t i = 0; i < n; ++i) prior.pi[i] = 1.0 - prior.alpha[i];
    return prior;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kLossEps = 1e-12;

inline void add_grads(nn::Gradients& acc, const nn::Gradients& g) {
    if (acc.dw.empty()) {
        acc.dw = g.dw;
        acc.db = g.db;
        return;
    }
    for (std::size_t i = 0; i < g.dw.size(); ++i) {
        for (std::int64_t j = 0; j < g.dw[i].size(); ++j) acc.dw[i].v[j] += g.dw[i].v[j];
        for (std::int64_t j = 0; j < g.db[i].size(); ++j) acc.db[i].v[j] += g.db[i].v[j];
    }
}

struct CaeGrads {
    nn::Gradients enc_x, dec_x, enc_y, dec_y;
};

// Forward all ten network applications, compute the four loss terms, and
// (optionally) accumulate parameter gradients for the four networks.
//
// pi0 is the input-data prior used by the code loss; it is never updated.
// pi is the current translation weight. Both are per-pixel over the batch.
inline CaeLosses cae_losses_impl(const CaeModel& model, const nn::Tensor& x, const nn::Tensor& y,
                                 const std::vector<double>& pi0, const std::vector<double>& pi,
                                 CaeGrads* grads) {
    using nn::Tensor;
    const auto& cfg = model.config;
    if (x.shape.size() != 4 || y.shape.size() != 4 || x.shape[0] != y.shape[0] ||
        x.shape[2] != y.shape[2] || x.shape[3] != y.shape[3])
        throw std::runtime_error("cae_losses: batch shape mismatch");
    const int B = x.shape[0], c1 = x.shape[1], c2 = y.shape[1];
    const std::int64_t n = static_cast<std::int64_t>(x.shape[2]) * x.shape[3];
    const std::int64_t npix = static_cast<std::int64_t>(B) * n;
    if (static_cast<std::int64_t>(pi0.size()) != npix || static_cast<std::int64_t>(pi.size()) != npix)
        throw std::runtime_error("cae_losses: prior size mismatch");
    const int K = cfg.code_channels;

    auto a_ex = nn::forward(model.encoder_x, x);
    auto a_ey = nn::forward(model.encoder_y, y);
    const Tensor& z_x = a_ex.output();
    const Tensor& z_y = a_ey.output();
    auto a_dx_rec = nn::forward(model.decoder_x, z_x);
    auto a_dy_rec = nn::forward(model.decoder_y, z_y);
    auto a_dx_tr = nn::forward(model.decoder_x, z_y);
    auto a_dy_tr = nn::forward(model.decoder_y, z_x);
    const Tensor& x_hat = a_dx_tr.output();
    const Tensor& y_hat = a_dy_tr.output();
    auto a_ey_cyc = nn::forward(model.encoder_y, y_hat);
    auto a_dx_cyc = nn::forward(model.decoder_x, a_ey_cyc.output());
    auto a_ex_cyc = nn::forward(model.encoder_x, x_hat);
    auto a_dy_cyc = nn::forward(model.decoder_y, a_ex_cyc.output());

    CaeLosses out;

    // Reconstruction and cycle terms are plain MSEs over all elements.
    auto mse_and_grad = [](const Tensor& got, const Tensor& want, double weight, Tensor* g) {
        double s = 0.0;
        const double scale = 1.0 / static_cast<double>(got.size());
        if (g) *g = Tensor(got.shape);
        for (std::int64_t i = 0; i < got.size(); ++i) {
            const double d = got.v[i] - want.v[i];
            s += d * d * scale;
            if (g) g->v[i] = weight * 2.0 * d * scale;
        }
        return s;
    };

    Tensor d_xrec, d_yrec, d_xcyc, d_ycyc;
    out.l_rec = mse_and_grad(a_dx_rec.output(), x, cfg.w_rec, grads ? &d_xrec : nullptr) +
                mse_and_grad(a_dy_rec.output(), y, cfg.w_rec, grads ? &d_yrec : nullptr);
    out.l_cyc = mse_and_grad(a_dx_cyc.output(), x, cfg.w_cyc, grads ? &d_xcyc : nullptr) +
                mse_and_grad(a_dy_cyc.output(), y, cfg.w_cyc, grads ? &d_ycyc : nullptr);

    // Code alignment, weighted by the fixed input-data prior. Encoders only.
    double sum_pi0 = 0.0;
    for (double p : pi0) sum_pi0 += p;
    const double code_norm = 1.0 / (static_cast<double>(K) * sum_pi0 + kLossEps);
    Tensor dz_x, dz_y;
    if (grads) {
        dz_x = Tensor(z_x.shape);
        dz_y = Tensor(z_y.shape);
    }
    for (int b = 0; b < B; ++b) {
        for (int c = 0; c < K; ++c) {
            const std::int64_t base = (static_cast<std::int64_t>(b) * K + c) * n;
            for (std::int64_t i = 0; i < n; ++i) {
                const double dz = z_x.v[base + i] - z_y.v[base + i];
                const double w = pi0[static_cast<std::int64_t>(b) * n + i];
                out.l_code += w * dz * dz * code_norm;
                if (grads) {
                    const double g = cfg.w_code * 2.0 * w * dz * code_norm;
                    dz_x.v[base + i] = g;
                    dz_y.v[base + i] = -g;
                }
            }
        }
    }

    // Weighted translation loss: changed pixels (low pi) are suppressed.
    double sum_pi = 0.0;
    for (double p : pi) sum_pi += p;
    const double tr_norm = 1.0 / (sum_pi + kLossEps);
    Tensor d_xhat, d_yhat;
    if (grads) {
        d_xhat = Tensor(x_hat.shape);
        d_yhat = Tensor(y_hat.shape);
    }
    auto tr_term = [&](const Tensor& hat, const Tensor& orig, int channels, Tensor* g) {
        double s = 0.0;
        for (int b = 0; b < B; ++b) {
            for (int c = 0; c < channels; ++c) {
                const std::int64_t base = (static_cast<std::int64_t>(b) * channels + c) * n;
                for (std::int64_t i = 0; i < n; ++i) {
                    const double w = pi[static_cast<std::int64_t>(b) * n + i];
                    const double d = hat.v[base + i] - orig.v[base + i];
                    s += w * d * d / channels * tr_norm;
                    if (g) g->v[base + i] = cfg.w_tr * 2.0 * w * d / channels * tr_norm;
                }
            }
        }
        return s;
    };
    out.l_tr = tr_term(x_hat, x, c1, grads ? &d_xhat : nullptr) +
               tr_term(y_hat, y, c2, grads ? &d_yhat : nullptr);

    out.total = cfg.w_rec * out.l_rec + cfg.w_code * out.l_code + cfg.w_cyc * out.l_cyc +
                cfg.w_tr * out.l_tr;

    if (!grads) return out;

    // Reverse pass; each network accumulates over all of its applications.
    auto g_dx_cyc = nn::backward(model.decoder_x, a_dx_cyc, d_xcyc);
    add_grads(grads->dec_x, g_dx_cyc);
    auto g_ey_cyc = nn::backward(model.encoder_y, a_ey_cyc, g_dx_cyc.dinput);
    add_grads(grads->enc_y, g_ey_cyc);
    auto g_dy_cyc = nn::backward(model.decoder_y, a_dy_cyc, d_ycyc);
    add_grads(grads->dec_y, g_dy_cyc);
    auto g_ex_cyc = nn::backward(model.encoder_x, a_ex_cyc, g_dy_cyc.dinput);
    add_grads(grads->enc_x, g_ex_cyc);

    Tensor d_yhat_total = d_yhat;  // translation loss + cycle continuation
    for (std::int64_t i = 0; i < d_yhat_total.size(); ++i)
        d_yhat_total.v[i] += g_ey_cyc.dinput.v[i];
    auto g_dy_tr = nn::backward(model.decoder_y, a_dy_tr, d_yhat_total);
    add_grads(grads->dec_y, g_dy_tr);

    Tensor d_xhat_total = d_xhat;
    for (std::int64_t i = 0; i < d_xhat_total.size(); ++i)
        d_xhat_total.v[i] += g_ex_cyc.dinput.v[i];
    auto g_dx_tr = nn::backward(model.decoder_x, a_dx_tr, d_xhat_total);
    add_grads(grads->dec_x, g_dx_tr);

    auto g_dx_rec = nn::backward(model.decoder_x, a_dx_rec, d_xrec);
    add_grads(grads->dec_x, g_dx_rec);
    auto g_dy_rec = nn::backward(model.decoder_y, a_dy_rec, d_yrec);
    add_grads(grads->dec_y, g_dy_rec);

    Tensor dz_x_total = dz_x;  // code loss reaches the encoders only
    for (std::int64_t i = 0; i < dz_x_total.size(); ++i)
        dz_x_total.v[i] += g_dy_tr.dinput.v[i] + g_dx_rec.dinput.v[i];
    add_grads(grads->enc_x, nn::backward(model.encoder_x, a_ex, dz_x_total));

    Tensor dz_y_total = dz_y;
    for (std::int64_t i = 0; i < dz_y_total.size(); ++i)
        dz_y_total.v[i] += g_dx_tr.dinput.v[i] + g_dy_rec.dinput.v[i];
    add_grads(grads->enc_y, nn::backward(model.encoder_y, a_ey, dz_y_total));

    return out;
}

}  // namespace detail

inline CaeLosses cae_losses(const CaeModel& model, const nn::Tensor& x_batch,
                            const nn::Tensor& y_batch, const std::vector<double>& pi0,
                            const std::vector<double>& pi) {
    return detail::cae_losses_impl(model, x_batch, y_batch, pi0, pi, nullptr);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

inline void copy_patch(const Raster& r, int ty, int tx, int ph, int pw, double* dst) {
    const std::int64_t hw = r.pixels();
    for (int c = 0; c < r.channels; ++c) {
        const double* plane = r.data.data() + static_cast<std::int64_t>(c) * hw;
        for (int y = 0; y < ph; ++y) {
            std::memcpy(dst + (static_cast<std::int64_t>(c) * ph + y) * pw,
                        plane + static_cast<std::int64_t>(ty + y) * r.width + tx,
                        static_cast<std::size_t>(pw) * 8);
        }
    }
}

}  // namespace detail

inline TranslationResult translate(const CaeModel& model, const Raster& x, const Raster& y,
                                   int tile = 64);

inline CaeModel train_cae(const Raster& x, const Raster& y, const CaeConfig& cfg) {
    if (x.height != y.height || x.width != y.width)
        throw std::invalid_argument("train_cae: rasters must share height and width");
    if (cfg.patch_size < 4) throw std::invalid_argument("train_cae: patch_size must be >= 4");
    if (x.height < cfg.patch_size || x.width < cfg.patch_size)
        throw std::invalid_argument("train_cae: raster smaller than patch_size");
    if (cfg.w_rec < 0 || cfg.w_code < 0 || cfg.w_cyc < 0 || cfg.w_tr < 0)
        throw std::invalid_argument("train_cae: loss weights must be >= 0");

    CaeModel model;
    model.config = cfg;
    model.encoder_x = make_cae_encoder(x.channels, cfg.hidden_channels, cfg.code_channels,
                                       mix_seed(cfg.seed, 1));
    model.decoder_x = make_cae_decoder(cfg.code_channels, cfg.hidden_channels, x.channels,
                                       mix_seed(cfg.seed, 2));
    model.encoder_y = make_cae_encoder(y.channels, cfg.hidden_channels, cfg.code_channels,
                                       mix_seed(cfg.seed, 3));
    model.decoder_y = make_cae_decoder(cfg.code_channels, cfg.hidden_channels, y.channels,
                                       mix_seed(cfg.seed, 4));

    nn::AdamState opt_ex, opt_dx, opt_ey, opt_dy;
    opt_ex.lr = opt_dx.lr = opt_ey.lr = opt_dy.lr = cfg.learning_rate;

    const int p = cfg.patch_size;
    const int B = cfg.patches_per_batch;
    const std::int64_t n = static_cast<std::int64_t>(p) * p;
    const int ty_range = x.height - p + 1;
    const int tx_range = x.width - p + 1;

    Rng rng(mix_seed(cfg.seed, 0x636165ull));  // 'cae'
    std::unordered_map<std::int64_t, AffinityPrior> prior_cache;  // keyed by patch corner
    std::vector<double> pi_map;  // whole-image translation weight, from epoch 2 on

    nn::Tensor xb({B, x.channels, p, p}), yb({B, y.channels, p, p});
    std::vector<double> pi0_b(static_cast<std::size_t>(B) * n), pi_b(static_cast<std::size_t>(B) * n);

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        for (int batch = 0; batch < cfg.batches_per_epoch; ++batch) {
            for (int s = 0; s < B; ++s) {
                const int ty = static_cast<int>(rng.below(ty_range));
                const int tx = static_cast<int>(rng.below(tx_range));
                detail::copy_patch(x, ty, tx, p, p, xb.v.data() + static_cast<std::int64_t>(s) * x.channels * n);
                detail::copy_patch(y, ty, tx, p, p, yb.v.data() + static_cast<std::int64_t>(s) * y.channels * n);

                const std::int64_t key = static_cast<std::int64_t>(ty) * x.width + tx;
                auto it = prior_cache.find(key);
                if (it == prior_cache.end()) {
                    std::vector<double> px(xb.v.begin() + static_cast<std::int64_t>(s) * x.channels * n,
                                           xb.v.begin() + static_cast<std::int64_t>(s + 1) * x.channels * n);
                    std::vector<double> py(yb.v.begin() + static_cast<std::int64_t>(s) * y.channels * n,
                                           yb.v.begin() + static_cast<std::int64_t>(s + 1) * y.channels * n);
                    it = prior_cache.emplace(key, affinity_prior(px, x.channels, py, y.channels)).first;
                }
                std::copy(it->second.pi.begin(), it->second.pi.end(),
                          pi0_b.begin() + static_cast<std::int64_t>(s) * n);
                if (epoch == 1) {
                    std::copy(it->second.pi.begin(), it->second.pi.end(),
                              pi_b.begin() + static_cast<std::int64_t>(s) * n);
                } else {
                    for (int y_off = 0; y_off < p; ++y_off) {
                        const std::int64_t row = static_cast<std::int64_t>(ty + y_off) * x.width + tx;
                        std::copy(pi_map.begin() + row, pi_map.begin() + row + p,
                                  pi_b.begin() + static_cast<std::int64_t>(s) * n +
                                      static_cast<std::int64_t>(y_off) * p);
                    }
                }
            }

            detail::CaeGrads grads;
            const CaeLosses l = detail::cae_losses_impl(model, xb, yb, pi0_b, pi_b, &grads);
            if (!std::isfinite(l.total)) throw std::runtime_error("train_cae: non-finite loss");
            nn::adam_step(model.encoder_x, grads.enc_x, opt_ex);
            nn::adam_step(model.decoder_x, grads.dec_x, opt_dx);
            nn::adam_step(model.encoder_y, grads.enc_y, opt_ey);
            nn::adam_step(model.decoder_y, grads.dec_y, opt_dy);
            model.batch_updates += 1;

            rec.l_rec += l.l_rec;
            rec.l_code += l.l_code;
            rec.l_cyc += l.l_cyc;
            rec.l_tr += l.l_tr;
            rec.total += l.total;
            rec.batches += 1;
        }
        const double inv = 1.0 / std::max(1, rec.batches);
        rec.l_rec *= inv;
        rec.l_code *= inv;
        rec.l_cyc *= inv;
        rec.l_tr *= inv;
        rec.total *= inv;
        model.history.push_back(rec);

        // Refresh the translation weight from the current translations of the
        // original images; consumed by every epoch after the first.
        if (epoch < cfg.epochs) {
            const TranslationResult t = translate(model, x, y);
            const std::int64_t hw = x.pixels();
            pi_map.assign(hw, 0.0);
            for (int c = 0; c < x.channels; ++c) {
                const double* d = t.d_x.plane(c);
                for (std::int64_t i = 0; i < hw; ++i) pi_map[i] += d[i] * d[i] / x.channels;
            }
            for (int c = 0; c < y.channels; ++c) {
                const double* d = t.d_y.plane(c);
                for (std::int64_t i = 0; i < hw; ++i) pi_map[i] += d[i] * d[i] / y.channels;
            }
            double lo = pi_map[0], hi = pi_map[0];
            for (double v : pi_map) {
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            const double span = hi - lo;
            if (span > 1e-15) {
                for (auto& v : pi_map) v = 1.0 - (v - lo) / span;
            } else {
                std::fill(pi_map.begin(), pi_map.end(), 1.0);
            }
        }
    }
    return model;
}

// Whole-image translation over an overlap-free tile partition; results do
// not depend on the processing order of tiles.
inline TranslationResult translate(const CaeModel& model, const Raster& x, const Raster& y,
                                   int tile) {
    if (x.channels != model.channels_x() || y.channels != model.channels_y())
        throw std::invalid_argument("translate: raster channels do not match trained model");
    if (x.height != y.height || x.width != y.width)
        throw std::invalid_argument("translate: rasters must share height and width");

    TranslationResult out;
    auto init_like = [](const Raster& src) {
        Raster r;
        r.height = src.height;
        r.width = src.width;
        r.channels = src.channels;
        r.names = src.names;
        r.data.assign(static_cast<std::size_t>(src.size()), 0.0);
        return r;
    };
    out.x_hat = init_like(x);
    out.y_hat = init_like(y);

    for (int ty = 0; ty < x.height; ty += tile) {
        const int th = std::min(tile, x.height - ty);
        for (int tx = 0; tx < x.width; tx += tile) {
            const int tw = std::min(tile, x.width - tx);
            nn::Tensor xt({1, x.channels, th, tw}), yt({1, y.channels, th, tw});
            detail::copy_patch(x, ty, tx, th, tw, xt.v.data());
            detail::copy_patch(y, ty, tx, th, tw, yt.v.data());
            const nn::Tensor xh = nn::forward_output(model.decoder_x,
                                                     nn::forward_output(model.encoder_y, yt));
            const nn::Tensor yh = nn::forward_output(model.decoder_y,
                                                     nn::forward_output(model.encoder_x, xt));
            for (int c = 0; c < x.channels; ++c) {
                for (int yy = 0; yy < th; ++yy) {
                    std::memcpy(out.x_hat.plane(c) + static_cast<std::int64_t>(ty + yy) * x.width + tx,
                                xh.v.data() + (static_cast<std::int64_t>(c) * th + yy) * tw,
                                static_cast<std::size_t>(tw) * 8);
                }
            }
            for (int c = 0; c < y.channels; ++c) {
                for (int yy = 0; yy < th; ++yy) {
                    std::memcpy(out.y_hat.plane(c) + static_cast<std::int64_t>(ty + yy) * y.width + tx,
                                yh.v.data() + (static_cast<std::int64_t>(c) * th + yy) * tw,
                                static_cast<std::size_t>(tw) * 8);
                }
            }
        }
    }

    out.d_x = init_like(x);
    out.d_y = init_like(y);
    for (std::int64_t i = 0; i < x.size(); ++i) out.d_x.data[i] = out.x_hat.data[i] - x.data[i];
    for (std::int64_t i = 0; i < y.size(); ++i) out.d_y.data[i] = y.data[i] - out.y_hat.data[i];
    return out;
}

// ---------------------------------------------------------------------------
// Unsupervised change map (Otsu on the standardized difference magnitude)
// ---------------------------------------------------------------------------

struct CaeChangeMap {
    std::vector<double> score;  // per-pixel mean squared standardized difference
    Mask binary;
    double threshold = 0.0;
};

// Otsu's method on a fixed-bin histogram: exhaustive search over all bin
// boundaries for the split maximizing the between-class variance. Returns
// the upper edge of the last low-class bin.
inline double otsu_threshold(const std::vector<double>& values, int bins = 256) {
    double lo = values[0], hi = values[0];
    for (double v : values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) return hi;
    std::vector<std::int64_t> hist(bins, 0);
    const double scale = bins / (hi - lo);
    for (double v : values) {
        int b = static_cast<int>((v - lo) * scale);
        hist[std::min(b, bins - 1)] += 1;
    }
    const double total = static_cast<double>(values.size());
    double sum_all = 0.0;
    for (int b = 0; b < bins; ++b) sum_all += static_cast<double>(b) * hist[b];
    double w0 = 0.0, sum0 = 0.0, best_var = -1.0;
    int best_t = 0;
    for (int t = 0; t + 1 < bins; ++t) {
        w0 += hist[t];
        sum0 += static_cast<double>(t) * hist[t];
        const double w1 = total - w0;
        if (w0 == 0.0 || w1 == 0.0) continue;
        const double mu0 = sum0 / w0;
        const double mu1 = (sum_all - sum0) / w1;
        const double var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if (var > best_var) {
            best_var = var;
            best_t = t;
        }
    }
    return lo + (best_t + 1) / scale;
}

inline CaeChangeMap cae_change_map(const TranslationResult& result) {
    const Raster& dx = result.d_x;
    const Raster& dy = result.d_y;
    const std::int64_t n = dx.pixels();
    CaeChangeMap map;
    map.score.assign(n, 0.0);
    const int total_channels = dx.channels + dy.channels;

    auto accumulate = [&](const Raster& d) {
        for (int c = 0; c < d.channels; ++c) {
            const double* plane = d.plane(c);
            double mean = 0.0;
            for (std::int64_t i = 0; i < n; ++i) mean += plane[i];
            mean /= n;
            double var = 0.0;
            for (std::int64_t i = 0; i < n; ++i) var += (plane[i] - mean) * (plane[i] - mean);
            var /= n;
            if (var <= 0.0) continue;  // constant channel: standardized to zero
            const double inv_sd = 1.0 / std::sqrt(var);
            for (std::int64_t i = 0; i < n; ++i) {
                const double z = (plane[i] - mean) * inv_sd;
                map.score[i] += z * z / total_channels;
            }
        }
    };
    accumulate(dx);
    accumulate(dy);

    map.threshold = otsu_threshold(map.score);
    map.binary.assign(n, 0);
    double lo = map.score[0], hi = map.score[0];
    for (double v : map.score) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi > lo) {
        for (std::int64_t i = 0; i < n; ++i) map.binary[i] = map.score[i] > map.threshold ? 1 : 0;
    }
    return map;
}

// ---------------------------------------------------------------------------
// Translation persistence: bundle-format binaries plus a JSON sidecar.
// ---------------------------------------------------------------------------

inline void save_translation(const std::filesystem::path& dir, const TranslationResult& t) {
    std::filesystem::create_directories(dir);
    auto dump = [&](const Raster& r, const std::string& file) {
        const auto bytes = detail::raster_to_f32(r);
        detail::write_file_bytes(dir / file, bytes.data(), bytes.size());
        nlohmann::ordered_json spec;
        spec["file"] = file;
        spec["height"] = r.height;
        spec["width"] = r.width;
        spec["channels"] = r.channels;
        spec["dtype"] = "f32le";
        spec["layout"] = "band-sequential";
        spec["names"] = r.names;
        return spec;
    };
    nlohmann::ordered_json j;
    j["x_hat"] = dump(t.x_hat, "x_hat.bin");
    j["y_hat"] = dump(t.y_hat, "y_hat.bin");
    j["d_x"] = dump(t.d_x, "d_x.bin");
    j["d_y"] = dump(t.d_y, "d_y.bin");
    std::ofstream out(dir / "translation.json", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write translation.json in " + dir.string());
    out << j.dump(2) << "\n";
}

inline TranslationResult load_translation(const std::filesystem::path& dir) {
    std::ifstream in(dir / "translation.json");
    if (!in) throw std::runtime_error("missing translation.json in " + dir.string());
    nlohmann::json j;
    in >> j;
    TranslationResult t;
    t.x_hat = detail::read_band_raster(j.at("x_hat"), dir, "x_hat");
    t.y_hat = detail::read_band_raster(j.at("y_hat"), dir, "y_hat");
    t.d_x = detail::read_band_raster(j.at("d_x"), dir, "d_x");
    t.d_y = detail::read_band_raster(j.at("d_y"), dir, "d_y");
    return t;
}

// ---------------------------------------------------------------------------
// Model persistence: one nnkit checkpoint per network plus a JSON sidecar.
// ---------------------------------------------------------------------------

inline void write_history_csv(const std::filesystem::path& path, const CaeModel& model) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write history csv: " + path.string());
    out << "epoch,l_rec,l_code,l_cyc,l_tr,total\n";
    char line[256];
    for (const auto& r : model.history) {
        std::snprintf(line, sizeof line, "%d,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.l_rec,
                      r.l_code, r.l_cyc, r.l_tr, r.total);
        out << line;
    }
}

inline void save_cae_model(const std::filesystem::path& dir, const CaeModel& model) {
    std::filesystem::create_directories(dir);
    nn::save_network(dir / "encoder_x.nnkt", model.encoder_x);
    nn::save_network(dir / "decoder_x.nnkt", model.decoder_x);
    nn::save_network(dir / "encoder_y.nnkt", model.encoder_y);
    nn::save_network(dir / "decoder_y.nnkt", model.decoder_y);

    nlohmann::ordered_json j;
    j["config"] = {{"patch_size", model.config.patch_size},
                   {"patches_per_batch", model.config.patches_per_batch},
                   {"batches_per_epoch", model.config.batches_per_epoch},
                   {"epochs", model.config.epochs},
                   {"code_channels", model.config.code_channels},
                   {"hidden_channels", model.config.hidden_channels},
                   {"w_rec", model.config.w_rec},
                   {"w_code", model.config.w_code},
                   {"w_cyc", model.config.w_cyc},
                   {"w_tr", model.config.w_tr},
                   {"learning_rate", model.config.learning_rate},
                   {"seed", model.config.seed}};
    j["batch_updates"] = model.batch_updates;
    auto hist = nlohmann::ordered_json::array();
    for (const auto& r : model.history) {
        hist.push_back({{"epoch", r.epoch},
                        {"l_rec", r.l_rec},
                        {"l_code", r.l_code},
                        {"l_cyc", r.l_cyc},
                        {"l_tr", r.l_tr},
                        {"total", r.total},
                        {"batches", r.batches}});
    }
    j["history"] = hist;
    std::ofstream out(dir / "cae.json", std::ios::trunc);
    out << j.dump(2) << "\n";
    write_history_csv(dir / "history.csv", model);
}

inline CaeModel load_cae_model(const std::filesystem::path& dir) {
    CaeModel model;
    model.encoder_x = nn::load_network(dir / "encoder_x.nnkt");
    model.decoder_x = nn::load_network(dir / "decoder_x.nnkt");
    model.encoder_y = nn::load_network(dir / "encoder_y.nnkt");
    model.decoder_y = nn::load_network(dir / "decoder_y.nnkt");
    std::ifstream in(dir / "cae.json");
    if (!in) throw std::runtime_error("missing cae.json in " + dir.string());
    nlohmann::json j;
    in >> j;
    const auto& c = j.at("config");
    model.config.patch_size = c.at("patch_size").get<int>();
    model.config.patches_per_batch = c.at("patches_per_batch").get<int>();
    model.config.batches_per_epoch = c.at("batches_per_epoch").get<int>();
    model.config.epochs = c.at("epochs").get<int>();
    model.config.code_channels = c.at("code_channels").get<int>();
    model.config.hidden_channels = c.at("hidden_channels").get<int>();
    model.config.w_rec = c.at("w_rec").get<double>();
    model.config.w_code = c.at("w_code").get<double>();
    model.config.w_cyc = c.at("w_cyc").get<double>();
    model.config.w_tr = c.at("w_tr").get<double>();
    model.config.learning_rate = c.at("learning_rate").get<double>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.batch_updates = j.value("batch_updates", 0);
    for (const auto& r : j.value("history", nlohmann::json::array())) {
        EpochRecord rec;
        rec.epoch = r.at("epoch").get<int>();
        rec.l_rec = r.at("l_rec").get<double>();
        rec.l_code = r.at("l_code").get<double>();
        rec.l_cyc = r.at("l_cyc").get<double>();
        rec.l_tr = r.at("l_tr").get<double>();
        rec.total = r.at("total").get<double>();
        rec.batches = r.at("batches").get<int>();
        model.history.push_back(rec);
    }
    return model;
}

}  // namespace hetcd
