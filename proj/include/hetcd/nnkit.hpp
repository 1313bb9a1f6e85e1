#pragma once
// Minimal dense/conv3x3 network engine with reverse-mode gradients and Adam.
//
// Two tensor layouts are used: {N, D} for dense stacks and {N, C, H, W} for
// conv stacks. conv3x3 is fixed to stride 1 and zero padding, preserving the
// spatial size. Everything runs in double precision and is deterministic for
// a fixed seed; matrix products go through Eigen.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hetcd/rng.hpp"

namespace hetcd::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// 64-byte aligned storage for every buffer Eigen maps. SIMD kernels peel
// unaligned heads, so reduction order (and hence rounding) would otherwise
// depend on where the heap happened to place a buffer; fixed alignment keeps
// results bit-identical across repeated calls.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::size_t alignment = 64;

    AlignedAllocator() = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) {}

    T* allocate(std::size_t n) {
        return static_cast<T*>(::operator new(n * sizeof(T), std::align_val_t(alignment)));
    }
    void deallocate(T* p, std::size_t) noexcept {
        ::operator delete(p, std::align_val_t(alignment));
    }
    template <class U>
    bool operator==(const AlignedAllocator<U>&) const {
        return true;
    }
};

using dvec = std::vector<double, AlignedAllocator<double>>;

struct Tensor {
    std::vector<int> shape;
    dvec v;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        v.assign(static_cast<std::size_t>(count(shape)), 0.0);
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }
    std::int64_t size() const { return static_cast<std::int64_t>(v.size()); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

enum class Act { identity, relu, leaky_relu, tanh, logistic };
enum class LayerKind { dense, conv3x3, activation };

inline constexpr double kLeakySlope = 0.3;

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    int fan_in = 0;
    int fan_out = 0;
    Act act = Act::identity;
};

inline LayerSpec dense(int fan_in, int fan_out, Act act) {
    return {LayerKind::dense, fan_in, fan_out, act};
}
inline LayerSpec conv3x3(int fan_in, int fan_out, Act act) {
    return {LayerKind::conv3x3, fan_in, fan_out, act};
}
inline LayerSpec activation(int width, Act act) {
    return {LayerKind::activation, width, width, act};
}

struct Network {
    std::vector<LayerSpec> layers;
    std::vector<Tensor> weights;  // empty tensor for activation layers
    std::vector<Tensor> biases;
    std::uint64_t init_seed = 0;

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& w : weights) n += w.size();
        for (const auto& b : biases) n += b.size();
        return n;
    }
};

// Uniform Glorot init in +/- sqrt(6 / (fan_in_eff + fan_out_eff)).
inline Network make_network(std::vector<LayerSpec> specs, std::uint64_t seed) {
    Network net;
    net.layers = std::move(specs);
    net.init_seed = seed;
    Rng rng(mix_seed(seed, 0x6e6eull));
    for (const auto& l : net.layers) {
        if (l.kind == LayerKind::activation) {
            net.weights.emplace_back();
            net.biases.emplace_back();
            continue;
        }
        if (l.fan_in <= 0 || l.fan_out <= 0)
            throw std::invalid_argument("make_network: fan_in/fan_out must be positive");
        const int taps = (l.kind == LayerKind::conv3x3) ? 9 : 1;
        const double limit = std::sqrt(6.0 / (static_cast<double>(taps) * l.fan_in +
                                              static_cast<double>(taps) * l.fan_out));
        Tensor w = (l.kind == LayerKind::conv3x3)
                       ? Tensor({l.fan_out, l.fan_in, 3, 3})
                       : Tensor({l.fan_out, l.fan_in});
        for (auto& x : w.v) x = rng.uniform(-limit, limit);
        net.weights.push_back(std::move(w));
        net.biases.emplace_back(Tensor({l.fan_out}));
    }
    return net;
}

namespace detail {

inline void apply_act(Act act, const double* pre, double* post, std::int64_t n) {
    switch (act) {
        case Act::identity:
            if (post != pre) std::memcpy(post, pre, static_cast<std::size_t>(n) * 8);
            break;
        case Act::relu:
            for (std::int64_t i = 0; i < n; ++i) post[i] = pre[i] > 0 ? pre[i] : 0.0;
            break;
        case Act::leaky_relu:
            for (std::int64_t i = 0; i < n; ++i) post[i] = pre[i] > 0 ? pre[i] : kLeakySlope * pre[i];
            break;
        case Act::tanh:
            for (std::int64_t i = 0; i < n; ++i) post[i] = std::tanh(pre[i]);
            break;
        case Act::logistic:
            for (std::int64_t i = 0; i < n; ++i) post[i] = 1.0 / (1.0 + std::exp(-pre[i]));
            break;
    }
}

// d(post)/d(pre) given both arrays.
inline double act_deriv(Act act, double pre, double post) {
    switch (act) {
        case Act::identity: return 1.0;
        case Act::relu: return pre > 0 ? 1.0 : 0.0;
        case Act::leaky_relu: return pre > 0 ? 1.0 : kLeakySlope;
        case Act::tanh: return 1.0 - post * post;
        case Act::logistic: return post * (1.0 - post);
    }
    return 1.0;
}

// Fills colT (HW x 9C, column-major) with the 3x3 neighbourhoods of one
// sample's planes; rows are pixels, column c*9+ky*3+kx is the shifted plane.
inline void im2col(const double* planes, int C, int H, int W, Eigen::MatrixXd& colT) {
    const std::int64_t hw = static_cast<std::int64_t>(H) * W;
    colT.resize(hw, 9 * C);
    for (int c = 0; c < C; ++c) {
        const double* plane = planes + static_cast<std::int64_t>(c) * hw;
        for (int ky = 0; ky < 3; ++ky) {
            const int dy = ky - 1;
            for (int kx = 0; kx < 3; ++kx) {
                const int dx = kx - 1;
                double* col = colT.col(c * 9 + ky * 3 + kx).data();
                const int x0 = std::max(0, -dx);
                const int x1 = std::min(W, W - dx);
                for (int y = 0; y < H; ++y) {
                    double* dst = col + static_cast<std::int64_t>(y) * W;
                    const int sy = y + dy;
                    if (sy < 0 || sy >= H) {
                        std::memset(dst, 0, static_cast<std::size_t>(W) * 8);
                        continue;
                    }
                    const double* src = plane + static_cast<std::int64_t>(sy) * W;
                    if (x0 > 0) dst[0] = 0.0;
                    if (x1 < W) dst[W - 1] = 0.0;
                    if (x1 > x0)
                        std::memcpy(dst + x0, src + x0 + dx, static_cast<std::size_t>(x1 - x0) * 8);
                }
            }
        }
    }
}

inline void check(bool ok, const char* msg) {
    if (!ok) throw std::runtime_error(std::string("nnkit: ") + msg);
}

}  // namespace detail

struct Activations {
    Tensor input;
    std::vector<Tensor> pre;   // linear output per layer (input copy for activation layers)
    std::vector<Tensor> post;  // after the nonlinearity

    const Tensor& output() const { return post.back(); }
};

inline Activations forward(const Network& net, const Tensor& input) {
    detail::check(!net.layers.empty(), "forward: empty network");
    Activations acts;
    acts.input = input;
    const Tensor* cur = &acts.input;
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        const LayerSpec& l = net.layers[li];
        Tensor pre;
        if (l.kind == LayerKind::dense) {
            detail::check(cur->shape.size() == 2, "dense layer expects {N,D} input");
            const int n = cur->shape[0], d = cur->shape[1];
            detail::check(d == l.fan_in, "dense layer fan_in mismatch");
            pre = Tensor({n, l.fan_out});
            Eigen::Map<const RowMat> x(cur->v.data(), n, d);
            Eigen::Map<const RowMat> w(net.weights[li].v.data(), l.fan_out, l.fan_in);
            Eigen::Map<RowMat> y(pre.v.data(), n, l.fan_out);
            y.noalias() = x * w.transpose();
            Eigen::Map<const Eigen::RowVectorXd> b(net.biases[li].v.data(), l.fan_out);
            y.rowwise() += b;
        } else if (l.kind == LayerKind::conv3x3) {
            detail::check(cur->shape.size() == 4, "conv3x3 layer expects {N,C,H,W} input");
            const int n = cur->shape[0], c = cur->shape[1], h = cur->shape[2], w = cur->shape[3];
            detail::check(c == l.fan_in, "conv3x3 layer fan_in mismatch");
            pre = Tensor({n, l.fan_out, h, w});
            const std::int64_t hw = static_cast<std::int64_t>(h) * w;
            Eigen::MatrixXd colT, outT;
            Eigen::Map<const RowMat> wm(net.weights[li].v.data(), l.fan_out, 9 * l.fan_in);
            for (int s = 0; s < n; ++s) {
                detail::im2col(cur->v.data() + static_cast<std::int64_t>(s) * c * hw, c, h, w, colT);
                outT.noalias() = colT * wm.transpose();
                for (int oc = 0; oc < l.fan_out; ++oc) {
                    double* dst = pre.v.data() + (static_cast<std::int64_t>(s) * l.fan_out + oc) * hw;
                    Eigen::Map<Eigen::VectorXd>(dst, hw) =
                        outT.col(oc).array() + net.biases[li].v[oc];
                }
            }
        } else {
            pre = *cur;  // activation layer: linear part is the identity
        }
        Tensor post = pre;
        detail::apply_act(l.act, pre.v.data(), post.v.data(), pre.size());
        acts.pre.push_back(std::move(pre));
        acts.post.push_back(std::move(post));
        cur = &acts.post.back();
    }
    return acts;
}

inline Tensor forward_output(const Network& net, const Tensor& input) {
    return forward(net, input).output();
}

struct Gradients {
    std::vector<Tensor> dw;
    std::vector<Tensor> db;
    Tensor dinput;
};

// Reverse pass. loss_grad is dL/d(output) by default; with
// grad_wrt_preactivation it is dL/d(pre) of the last layer, which lets
// callers fold a numerically stable loss into the final logistic layer.
inline Gradients backward(const Network& net, const Activations& acts, const Tensor& loss_grad,
                          bool grad_wrt_preactivation = false) {
    detail::check(acts.pre.size() == net.layers.size(), "backward: activations/layer mismatch");
    detail::check(loss_grad.same_shape(acts.post.back()), "backward: loss gradient shape mismatch");

    Gradients g;
    g.dw.resize(net.layers.size());
    g.db.resize(net.layers.size());

    Tensor delta = loss_grad;  // dL/d(pre) of current layer once act' applied
    Eigen::MatrixXd colT;
    for (int li = static_cast<int>(net.layers.size()) - 1; li >= 0; --li) {
        const LayerSpec& l = net.layers[li];
        const Tensor& pre = acts.pre[li];
        const Tensor& post = acts.post[li];
        if (!(li == static_cast<int>(net.layers.size()) - 1 && grad_wrt_preactivation)) {
            for (std::int64_t i = 0; i < delta.size(); ++i)
                delta.v[i] *= detail::act_deriv(l.act, pre.v[i], post.v[i]);
        }
        const Tensor& layer_in = (li == 0) ? acts.input : acts.post[li - 1];
        if (l.kind == LayerKind::dense) {
            const int n = layer_in.shape[0];
            g.dw[li] = Tensor({l.fan_out, l.fan_in});
            g.db[li] = Tensor({l.fan_out});
            Eigen::Map<const RowMat> x(layer_in.v.data(), n, l.fan_in);
            Eigen::Map<const RowMat> dy(delta.v.data(), n, l.fan_out);
            Eigen::Map<RowMat> dw(g.dw[li].v.data(), l.fan_out, l.fan_in);
            dw.noalias() = dy.transpose() * x;
            Eigen::Map<Eigen::RowVectorXd>(g.db[li].v.data(), l.fan_out) = dy.colwise().sum();
            Tensor dx({n, l.fan_in});
            Eigen::Map<const RowMat> w(net.weights[li].v.data(), l.fan_out, l.fan_in);
            Eigen::Map<RowMat>(dx.v.data(), n, l.fan_in).noalias() = dy * w;
            delta = std::move(dx);
        } else if (l.kind == LayerKind::conv3x3) {
            const int n = layer_in.shape[0], c = layer_in.shape[1];
            const int h = layer_in.shape[2], w = layer_in.shape[3];
            const std::int64_t hw = static_cast<std::int64_t>(h) * w;
            g.dw[li] = Tensor({l.fan_out, l.fan_in, 3, 3});
            g.db[li] = Tensor({l.fan_out});
            Tensor dx({n, c, h, w});
            Eigen::Map<const RowMat> wm(net.weights[li].v.data(), l.fan_out, 9 * c);
            Eigen::Map<RowMat> dwm(g.dw[li].v.data(), l.fan_out, 9 * c);
            Eigen::MatrixXd dOutT(hw, l.fan_out), dColT;
            for (int s = 0; s < n; ++s) {
                for (int oc = 0; oc < l.fan_out; ++oc) {
                    const double* src = delta.v.data() + (static_cast<std::int64_t>(s) * l.fan_out + oc) * hw;
                    dOutT.col(oc) = Eigen::Map<const Eigen::VectorXd>(src, hw);
                    g.db[li].v[oc] += dOutT.col(oc).sum();
                }
                detail::im2col(layer_in.v.data() + static_cast<std::int64_t>(s) * c * hw, c, h, w, colT);
                dwm.noalias() += dOutT.transpose() * colT;
                dColT.noalias() = dOutT * wm;
                for (int ic = 0; ic < c; ++ic) {
                    double* plane = dx.v.data() + (static_cast<std::int64_t>(s) * c + ic) * hw;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int dy_off = ky - 1;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int dx_off = kx - 1;
                            const double* col = dColT.col(ic * 9 + ky * 3 + kx).data();
                            const int x0 = std::max(0, -dx_off);
                            const int x1 = std::min(w, w - dx_off);
                            for (int y = 0; y < h; ++y) {
                                const int sy = y + dy_off;
                                if (sy < 0 || sy >= h) continue;
                                double* dst = plane + static_cast<std::int64_t>(sy) * w + dx_off;
                                const double* src = col + static_cast<std::int64_t>(y) * w;
                                for (int x = x0; x < x1; ++x) dst[x] += src[x];
                            }
                        }
                    }
                }
            }
            delta = std::move(dx);
        }
        // activation layers: delta already multiplied by act'; passes through
    }
    g.dinput = std::move(delta);
    return g;
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Tensor> m_w, v_w, m_b, v_b;

    bool initialized() const { return !m_w.empty(); }
};

inline void adam_step(Network& net, const Gradients& g, AdamState& s) {
    if (!s.initialized()) {
        s.m_w.resize(net.weights.size());
        s.v_w.resize(net.weights.size());
        s.m_b.resize(net.biases.size());
        s.v_b.resize(net.biases.size());
        for (std::size_t i = 0; i < net.weights.size(); ++i) {
            s.m_w[i] = Tensor(net.weights[i].shape);
            s.v_w[i] = Tensor(net.weights[i].shape);
            s.m_b[i] = Tensor(net.biases[i].shape);
            s.v_b[i] = Tensor(net.biases[i].shape);
        }
    }
    detail::check(g.dw.size() == net.weights.size(), "adam_step: gradient/parameter mismatch");
    s.step += 1;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    auto update = [&](Tensor& p, const Tensor& grad, Tensor& m, Tensor& v) {
        detail::check(grad.size() == p.size(), "adam_step: gradient shape mismatch");
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const double gi = grad.v[i];
            if (!std::isfinite(gi)) throw std::runtime_error("adam_step: non-finite gradient");
            m.v[i] = s.beta1 * m.v[i] + (1.0 - s.beta1) * gi;
            v.v[i] = s.beta2 * v.v[i] + (1.0 - s.beta2) * gi * gi;
            const double mhat = m.v[i] / c1;
            const double vhat = v.v[i] / c2;
            p.v[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
        }
    };
    for (std::size_t li = 0; li < net.weights.size(); ++li) {
        if (net.weights[li].size() == 0) continue;
        update(net.weights[li], g.dw[li], s.m_w[li], s.v_w[li]);
        update(net.biases[li], g.db[li], s.m_b[li], s.v_b[li]);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

// Scalar loss over the network output; fills *dldout when non-null.
using LossFn = std::function<double(const Tensor& out, Tensor* dldout)>;

inline LossFn make_squared_loss(Tensor target) {
    return [target = std::move(target)](const Tensor& out, Tensor* dldout) {
        detail::check(out.same_shape(target), "squared loss: shape mismatch");
        double loss = 0.0;
        if (dldout) *dldout = Tensor(out.shape);
        for (std::int64_t i = 0; i < out.size(); ++i) {
            const double d = out.v[i] - target.v[i];
            loss += d * d;
            if (dldout) dldout->v[i] = 2.0 * d;
        }
        return loss;
    };
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
    int excluded = 0;       // parameters skipped because a kink was too close
    bool kink = false;      // any relu/leaky pre-activation at or near zero
};

// Central finite differences over every parameter. Parameters whose
// perturbation lands a relu/leaky pre-activation within the kink margin are
// excluded from the comparison and flagged.
inline GradCheckResult gradcheck(const Network& net, const Tensor& input, const LossFn& loss,
                                 double step = 1e-5) {
    const double kink_margin = 10.0 * step;
    auto min_abs_kink_pre = [&](const Activations& acts) {
        double m = std::numeric_limits<double>::infinity();
        for (std::size_t li = 0; li < net.layers.size(); ++li) {
            const Act a = net.layers[li].act;
            if (a != Act::relu && a != Act::leaky_relu) continue;
            for (double p : acts.pre[li].v) m = std::min(m, std::abs(p));
        }
        return m;
    };

    Activations base = forward(net, input);
    Tensor dldout;
    loss(base.output(), &dldout);
    Gradients analytic = backward(net, base, dldout);
    const bool base_kink = min_abs_kink_pre(base) < kink_margin;

    GradCheckResult res;
    res.kink = base_kink;
    Network probe = net;
    auto probe_param = [&](double& x, double analytic_grad) {
        const double saved = x;
        x = saved + step;
        Activations up = forward(probe, input);
        const double lu = loss(up.output(), nullptr);
        const bool kup = min_abs_kink_pre(up) < kink_margin;
        x = saved - step;
        Activations dn = forward(probe, input);
        const double ld = loss(dn.output(), nullptr);
        const bool kdn = min_abs_kink_pre(dn) < kink_margin;
        x = saved;
        if (base_kink || kup || kdn) {
            res.excluded += 1;
            res.kink = true;
            return;
        }
        const double numeric = (lu - ld) / (2.0 * step);
        const double rel = std::abs(analytic_grad - numeric) /
                           std::max({std::abs(analytic_grad), std::abs(numeric), 1e-8});
        res.max_rel_error = std::max(res.max_rel_error, rel);
        res.checked += 1;
    };
    for (std::size_t li = 0; li < net.weights.size(); ++li) {
        for (std::int64_t i = 0; i < net.weights[li].size(); ++i)
            probe_param(probe.weights[li].v[i], analytic.dw[li].v[i]);
        for (std::int64_t i = 0; i < net.biases[li].size(); ++i)
            probe_param(probe.biases[li].v[i], analytic.db[li].v[i]);
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON header + raw f64le parameter payload
// ---------------------------------------------------------------------------

namespace detail {

inline const char* act_name(Act a) {
    switch (a) {
        case Act::identity: return "identity";
        case Act::relu: return "relu";
        case Act::leaky_relu: return "leaky_relu";
        case Act::tanh: return "tanh";
        case Act::logistic: return "logistic";
    }
    return "identity";
}
inline Act act_from(const std::string& s) {
    if (s == "identity") return Act::identity;
    if (s == "relu") return Act::relu;
    if (s == "leaky_relu") return Act::leaky_relu;
    if (s == "tanh") return Act::tanh;
    if (s == "logistic") return Act::logistic;
    throw std::runtime_error("checkpoint: unknown activation '" + s + "'");
}
inline const char* kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv3x3: return "conv3x3";
        case LayerKind::activation: return "activation";
    }
    return "dense";
}
inline LayerKind kind_from(const std::string& s) {
    if (s == "dense") return LayerKind::dense;
    if (s == "conv3x3") return LayerKind::conv3x3;
    if (s == "activation") return LayerKind::activation;
    throw std::runtime_error("checkpoint: unknown layer kind '" + s + "'");
}

}  // namespace detail

inline void save_network(const std::filesystem::path& path, const Network& net,
                         const nlohmann::ordered_json& meta = {}) {
    nlohmann::ordered_json header;
    header["format"] = "nnkt-1";
    header["seed"] = net.init_seed;
    auto layers = nlohmann::ordered_json::array();
    for (const auto& l : net.layers) {
        layers.push_back({{"kind", detail::kind_name(l.kind)},
                          {"fan_in", l.fan_in},
                          {"fan_out", l.fan_out},
                          {"act", detail::act_name(l.act)}});
    }
    header["layers"] = layers;
    if (!meta.is_null() && !meta.empty()) header["meta"] = meta;
    const std::string htext = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path.string());
    out.write("NNKT", 4);
    const std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    out.write(reinterpret_cast<const char*>(&hlen), 4);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    auto dump = [&](const Tensor& t) {
        out.write(reinterpret_cast<const char*>(t.v.data()),
                  static_cast<std::streamsize>(t.v.size() * 8));
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        dump(net.weights[li]);
        dump(net.biases[li]);
    }
    if (!out) throw std::runtime_error("short write: " + path.string());
}

inline Network load_network(const std::filesystem::path& path,
                            nlohmann::json* meta_out = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "NNKT", 4) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path.string());
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 4);
    std::string htext(hlen, '\0');
    in.read(htext.data(), hlen);
    auto header = nlohmann::json::parse(htext);

    std::vector<LayerSpec> specs;
    for (const auto& l : header.at("layers")) {
        specs.push_back({detail::kind_from(l.at("kind").get<std::string>()),
                         l.at("fan_in").get<int>(), l.at("fan_out").get<int>(),
                         detail::act_from(l.at("act").get<std::string>())});
    }
    Network net = make_network(specs, header.value("seed", 0ull));
    auto slurp = [&](Tensor& t) {
        in.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.v.size() * 8));
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        slurp(net.weights[li]);
        slurp(net.biases[li]);
    }
    if (!in) throw std::runtime_error("truncated checkpoint payload: " + path.string());
    if (meta_out && header.contains("meta")) *meta_out = header.at("meta");
    return net;
}

}  // namespace hetcd::nn
