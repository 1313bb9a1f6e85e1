#pragma once
// Synthetic heterogeneous pair generator.
//
// Renders one latent scene through two dissimilar sensor maps and injects two
// kinds of change between the acquisitions: small-shift "target" blobs (the
// class of interest, marked in ground truth) and large-shift "confounder"
// blobs (strong nuisance changes, marked as a region mask). This is the
// desk-scale oracle for the weak-signature-among-strong-confounders setting.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "hetcd/raster.hpp"
#include "hetcd/rng.hpp"

namespace hetcd {

struct SynthConfig {
    int height = 128;
    int width = 128;
    int latent_classes = 5;
    double target_change_fraction = 0.05;
    double confounder_change_fraction = 0.10;
    double sensor_noise_sd = 0.02;
    std::uint64_t seed = 1234;
};

namespace detail {

// Smooth scalar field: coarse Gaussian lattice, bilinearly upsampled.
inline std::vector<double> smooth_field(int h, int w, int cell, Rng& rng) {
    const int gh = h / cell + 2;
    const int gw = w / cell + 2;
    std::vector<double> grid(static_cast<std::size_t>(gh) * gw);
    for (auto& g : grid) g = rng.normal();
    std::vector<double> out(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y) {
        const double fy = static_cast<double>(y) / cell;
        const int iy = static_cast<int>(fy);
        const double ty = fy - iy;
        for (int x = 0; x < w; ++x) {
            const double fx = static_cast<double>(x) / cell;
            const int ix = static_cast<int>(fx);
            const double tx = fx - ix;
            const double a = grid[static_cast<std::size_t>(iy) * gw + ix];
            const double b = grid[static_cast<std::size_t>(iy) * gw + ix + 1];
            const double c = grid[static_cast<std::size_t>(iy + 1) * gw + ix];
            const double d = grid[static_cast<std::size_t>(iy + 1) * gw + ix + 1];
            out[static_cast<std::size_t>(y) * w + x] =
                (1 - ty) * ((1 - tx) * a + tx * b) + ty * ((1 - tx) * c + tx * d);
        }
    }
    return out;
}

// Stamps random disks onto state (code) until want pixels are covered,
// counting only pixels that are still unchanged. Radii shrink as the budget
// runs out so the final coverage stays close to the request.
inline void stamp_blobs(std::vector<std::uint8_t>& state, int h, int w, std::int64_t want,
                        std::uint8_t code, double rmin, double rmax, Rng& rng) {
    std::int64_t placed = 0;
    int attempts = 0;
    while (placed < want) {
        if (++attempts > 200000)
            throw std::runtime_error("generate_synthetic_pair: change fractions infeasible for the given dimensions");
        const double cap = std::sqrt(static_cast<double>(want - placed) / 3.14159265358979) + 1.5;
        const double r = std::max(1.2, std::min(rng.uniform(rmin, rmax), cap));
        const int cy = static_cast<int>(rng.below(static_cast<std::uint64_t>(h)));
        const int cx = static_cast<int>(rng.below(static_cast<std::uint64_t>(w)));
        const int ri = static_cast<int>(std::ceil(r));
        for (int y = std::max(0, cy - ri); y <= std::min(h - 1, cy + ri); ++y) {
            for (int x = std::max(0, cx - ri); x <= std::min(w - 1, cx + ri); ++x) {
                const double dy = y - cy, dx = x - cx;
                if (dy * dy + dx * dx > r * r) continue;
                auto& s = state[static_cast<std::size_t>(y) * w + x];
                if (s == 0) {
                    s = code;
                    ++placed;
                }
            }
        }
    }
}

}  // namespace detail

inline DatasetBundle generate_synthetic_pair(const SynthConfig& cfg) {
    if (cfg.height < 32 || cfg.width < 32)
        throw std::invalid_argument("generate_synthetic_pair: dimensions must be >= 32");
    if (cfg.latent_classes < 2)
        throw std::invalid_argument("generate_synthetic_pair: need at least 2 latent classes");
    if (cfg.target_change_fraction < 0 || cfg.confounder_change_fraction < 0 ||
        cfg.target_change_fraction + cfg.confounder_change_fraction > 1.0)
        throw std::invalid_argument("generate_synthetic_pair: change fractions must be >= 0 and sum to <= 1");
    if (!(cfg.sensor_noise_sd >= 0))
        throw std::invalid_argument("generate_synthetic_pair: sensor_noise_sd must be >= 0");

    const int h = cfg.height, w = cfg.width, K = cfg.latent_classes;
    const std::int64_t n = static_cast<std::int64_t>(h) * w;
    const int c1 = 4, c2 = 3;
    Rng rng(mix_seed(cfg.seed, 0x73796e7468ull));  // 'synth'

    // Latent scene: blobby class map (argmax over smooth fields) plus a
    // continuous intensity field shared by both sensors.
    std::vector<std::vector<double>> fields;
    fields.reserve(K);
    for (int k = 0; k < K; ++k) fields.push_back(detail::smooth_field(h, w, 16, rng));
    std::vector<std::uint8_t> klass(n);
    for (std::int64_t i = 0; i < n; ++i) {
        int best = 0;
        for (int k = 1; k < K; ++k)
            if (fields[k][i] > fields[best][i]) best = k;
        klass[i] = static_cast<std::uint8_t>(best);
    }
    std::vector<double> z = detail::smooth_field(h, w, 12, rng);
    {
        double lo = z[0], hi = z[0];
        for (double v : z) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const double span = (hi > lo) ? hi - lo : 1.0;
        for (auto& v : z) v = (v - lo) / span;
    }

    // Change state: 0 unchanged, 1 target (small shift), 2 confounder (large).
    std::vector<std::uint8_t> state(n, 0);
    const auto want_target = static_cast<std::int64_t>(std::llround(cfg.target_change_fraction * n));
    const auto want_conf = static_cast<std::int64_t>(std::llround(cfg.confounder_change_fraction * n));
    if (want_target > 0) detail::stamp_blobs(state, h, w, want_target, 1, 3.0, 8.0, rng);
    if (want_conf > 0) detail::stamp_blobs(state, h, w, want_conf, 2, 4.0, 11.0, rng);

    // Sensor map A: linear in the latent intensity, distinct per-class means.
    std::vector<std::vector<double>> base1(K, std::vector<double>(c1));
    std::vector<double> slope1(c1);
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < c1; ++c) base1[k][c] = rng.uniform(0.15, 0.85);
    for (int c = 0; c < c1; ++c) slope1[c] = rng.uniform(0.10, 0.30);

    // Sensor map B: per-class gains over squared/log/sqrt responses, so no
    // single affine transform aligns the two domains.
    std::vector<std::vector<double>> base2(K, std::vector<double>(c2));
    std::vector<std::vector<double>> gain2(K, std::vector<double>(c2));
    for (int k = 0; k < K; ++k) {
        for (int c = 0; c < c2; ++c) {
            base2[k][c] = rng.uniform(0.10, 0.70);
            gain2[k][c] = rng.uniform(0.20, 0.50);
        }
    }
    // Weak target signature: small post-event shift with a consistent sign
    // per channel (the change class has one physical direction), magnitude
    // varying mildly by class.
    std::vector<double> delta_sign(c2);
    for (int c = 0; c < c2; ++c) delta_sign[c] = (rng.uniform() < 0.5) ? -1.0 : 1.0;
    std::vector<std::vector<double>> delta(K, std::vector<double>(c2));
    for (int k = 0; k < K; ++k)
        for (int c = 0; c < c2; ++c) delta[k][c] = delta_sign[c] * rng.uniform(0.09, 0.15);

    auto response2 = [](int c, double v) {
        switch (c) {
            case 0: return v * v;
            case 1: return std::log1p(2.0 * v) / std::log(3.0);
            default: return std::sqrt(v);
        }
    };

    DatasetBundle b;
    b.name = "synthetic";
    b.pixel_spacing = 10.0;
    b.t1.height = b.t2.height = h;
    b.t1.width = b.t2.width = w;
    b.t1.channels = c1;
    b.t2.channels = c2;
    b.t1.names = {"blue", "green", "red", "nir"};
    b.t2.names = {"hh", "hv", "vv"};
    b.t1.data.resize(n * c1);
    b.t2.data.resize(n * c2);

    for (std::int64_t i = 0; i < n; ++i) {
        const int k1 = klass[i];
        // Confounders switch latent class between acquisitions; targets keep
        // the class but pick up the weak post-event shift.
        const int k2 = (state[i] == 2) ? (k1 + 1) % K : k1;
        for (int c = 0; c < c1; ++c)
            b.t1.data[static_cast<std::int64_t>(c) * n + i] =
                base1[k1][c] + slope1[c] * z[i] + cfg.sensor_noise_sd * rng.normal();
        for (int c = 0; c < c2; ++c) {
            double v = base2[k2][c] + gain2[k2][c] * response2(c, z[i]);
            if (state[i] == 1) v += delta[k1][c];
            b.t2.data[static_cast<std::int64_t>(c) * n + i] = v + cfg.sensor_noise_sd * rng.normal();
        }
    }

    // Quantize through f32 so written bundles reload bit-identically.
    for (auto& v : b.t1.data) v = static_cast<double>(static_cast<float>(v));
    for (auto& v : b.t2.data) v = static_cast<double>(static_cast<float>(v));

    b.ground_truth.resize(n);
    Mask confounder(n), unchanged(n);
    for (std::int64_t i = 0; i < n; ++i) {
        b.ground_truth[i] = state[i] == 1 ? 1 : 0;
        confounder[i] = state[i] == 2 ? 1 : 0;
        unchanged[i] = state[i] == 0 ? 1 : 0;
    }
    b.region_masks["confounder"] = std::move(confounder);
    b.region_masks["unchanged"] = std::move(unchanged);
    return b;
}

}  // namespace hetcd
