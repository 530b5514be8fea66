#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "wgsr/errors.hpp"
#include "wgsr/io.hpp"
#include "wgsr/physics.hpp"
#include "wgsr/rng.hpp"
#include "wgsr/serialize.hpp"

namespace wgsr {

/// Output probabilities are clamped to [lo, hi]; the clamp takes part in the
/// backward pass (zero gradient where it is active).
inline constexpr double kProbClampLo = 1e-7;
inline constexpr double kProbClampHi = 1.0 - 1e-7;

/// Architecture: flatten complex input to 2*N_r*N_f reals -> dense to
/// channels*N_x*N_y (no activation) -> reshape to `channels` image planes ->
/// conv_layers x {3x3 same-pad conv C->C, ReLU} -> conv C->1 -> sigmoid.
struct NetworkConfig {
    int n_receivers = 0;
    int n_freq = 0;
    int n_x = 0;
    int n_y = 0;
    int channels = 8;
    int conv_layers = 3;
    int kernel = 3;

    int input_size() const { return 2 * n_receivers * n_freq; }
    int n_pixels() const { return n_x * n_y; }
    int hidden_size() const { return channels * n_pixels(); }

    void validate() const {
        if (n_receivers < 1 || n_freq < 1 || n_x < 1 || n_y < 1)
            throw ConfigError("NetworkConfig: input/output dimensions must be >= 1");
        if (channels < 1) throw ConfigError("NetworkConfig: channels must be >= 1");
        if (conv_layers < 1) throw ConfigError("NetworkConfig: conv_layers must be >= 1");
        if (kernel < 1 || kernel % 2 == 0)
            throw ConfigError("NetworkConfig: kernel must be odd and >= 1");
    }

    bool operator==(const NetworkConfig&) const = default;
};

inline void to_json(json& j, const NetworkConfig& c) {
    j = json{{"n_receivers", c.n_receivers}, {"n_freq", c.n_freq},
             {"n_x", c.n_x},                 {"n_y", c.n_y},
             {"channels", c.channels},       {"conv_layers", c.conv_layers},
             {"kernel", c.kernel}};
}
inline void from_json(const json& j, NetworkConfig& c) {
    j.at("n_receivers").get_to(c.n_receivers);
    j.at("n_freq").get_to(c.n_freq);
    j.at("n_x").get_to(c.n_x);
    j.at("n_y").get_to(c.n_y);
    j.at("channels").get_to(c.channels);
    j.at("conv_layers").get_to(c.conv_layers);
    j.at("kernel").get_to(c.kernel);
}

/// One conv layer, same zero padding. Weights are [oc][ic][du][dv] row-major.
struct ConvKernel {
    int in_c = 0, out_c = 0, k = 0;
    std::vector<double> w;
    std::vector<double> b;

    ConvKernel() = default;
    ConvKernel(int ic, int oc, int kk)
        : in_c(ic), out_c(oc), k(kk),
          w(static_cast<std::size_t>(oc) * static_cast<std::size_t>(ic) *
            static_cast<std::size_t>(kk) * static_cast<std::size_t>(kk), 0.0),
          b(static_cast<std::size_t>(oc), 0.0) {}

    double& wat(int oc, int ic, int du, int dv) {
        return w[((static_cast<std::size_t>(oc) * static_cast<std::size_t>(in_c) +
                   static_cast<std::size_t>(ic)) * static_cast<std::size_t>(k) +
                  static_cast<std::size_t>(du)) * static_cast<std::size_t>(k) +
                 static_cast<std::size_t>(dv)];
    }
    double wat(int oc, int ic, int du, int dv) const {
        return w[((static_cast<std::size_t>(oc) * static_cast<std::size_t>(in_c) +
                   static_cast<std::size_t>(ic)) * static_cast<std::size_t>(k) +
                  static_cast<std::size_t>(du)) * static_cast<std::size_t>(k) +
                 static_cast<std::size_t>(dv)];
    }
};

/// All trainable tensors. Declaration order fixes the parameter ordering used
/// by the optimizer state, checkpoints and finite-difference probes:
/// dense_w, dense_b, then each conv layer's w and b.
struct NetworkParams {
    NetworkConfig cfg;
    std::vector<double> dense_w; // [input][hidden] row-major
    std::vector<double> dense_b; // [hidden]
    std::vector<ConvKernel> convs; // conv_layers of C->C, then one C->1

    NetworkParams() = default;

    explicit NetworkParams(const NetworkConfig& c) : cfg(c) {
        cfg.validate();
        dense_w.assign(static_cast<std::size_t>(cfg.input_size()) *
                           static_cast<std::size_t>(cfg.hidden_size()),
                       0.0);
        dense_b.assign(static_cast<std::size_t>(cfg.hidden_size()), 0.0);
        for (int l = 0; l < cfg.conv_layers; ++l)
            convs.emplace_back(cfg.channels, cfg.channels, cfg.kernel);
        convs.emplace_back(cfg.channels, 1, cfg.kernel);
    }

    std::size_t total_parameters() const {
        std::size_t n = dense_w.size() + dense_b.size();
        for (const ConvKernel& c : convs) n += c.w.size() + c.b.size();
        return n;
    }
};

struct ParamView {
    std::string name;
    double* data = nullptr;
    std::size_t size = 0;
};

/// Mutable views over all tensors in canonical order.
inline std::vector<ParamView> param_views(NetworkParams& p) {
    std::vector<ParamView> v;
    v.push_back({"dense_w", p.dense_w.data(), p.dense_w.size()});
    v.push_back({"dense_b", p.dense_b.data(), p.dense_b.size()});
    for (std::size_t l = 0; l < p.convs.size(); ++l) {
        v.push_back({"conv" + std::to_string(l) + "_w", p.convs[l].w.data(), p.convs[l].w.size()});
        v.push_back({"conv" + std::to_string(l) + "_b", p.convs[l].b.data(), p.convs[l].b.size()});
    }
    return v;
}

/// Uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per tensor, drawn in
/// canonical parameter order from one stream.
inline NetworkParams init_params(const NetworkConfig& cfg, std::uint64_t seed) {
    NetworkParams p(cfg);
    Rng rng(derive_seed(seed, "init"));
    const double dense_bound = 1.0 / std::sqrt(static_cast<double>(cfg.input_size()));
    for (double& w : p.dense_w) w = rng.uniform(-dense_bound, dense_bound);
    for (double& b : p.dense_b) b = rng.uniform(-dense_bound, dense_bound);
    for (ConvKernel& c : p.convs) {
        const double bound =
            1.0 / std::sqrt(static_cast<double>(c.in_c) * static_cast<double>(c.k) *
                            static_cast<double>(c.k));
        for (double& w : c.w) w = rng.uniform(-bound, bound);
        for (double& b : c.b) b = rng.uniform(-bound, bound);
    }
    return p;
}

/// Forward pass state for a batch. Feature maps are stored per sample as
/// [c][ix][iy] row-major slabs of size channels*n_pixels; batch tensors are
/// sample-major. Input flattening interleaves re/im per entry in the
/// response's receiver-major storage order.
struct BatchCache {
    NetworkConfig cfg;
    int nb = 0;
    std::vector<double> x;     // nb * input_size
    std::vector<double> h;     // nb * hidden_size (dense output, no activation)
    std::vector<std::vector<double>> z; // conv_layers x (nb * hidden_size), pre-ReLU
    std::vector<std::vector<double>> a; // conv_layers x (nb * hidden_size), post-ReLU
    std::vector<double> z_out; // nb * n_pixels (final conv, pre-sigmoid)
    std::vector<double> p_raw; // nb * n_pixels (sigmoid, unclamped)
    std::vector<double> p;     // nb * n_pixels (clamped probabilities)

    const double* probs(int q) const {
        return p.data() + static_cast<std::size_t>(q) * static_cast<std::size_t>(cfg.n_pixels());
    }
};

namespace detail {

/// Batched dense layer: H[q] = b + X[q] * W. The input-major loop accumulates
/// each output element in the same order regardless of batch size, so a batch
/// row is bitwise identical to a single-sample pass, and each weight row is
/// streamed from memory once per batch.
inline void dense_forward(const NetworkParams& params, const double* x, int nb, double* h) {
    const int in = params.cfg.input_size();
    const std::size_t nh = static_cast<std::size_t>(params.cfg.hidden_size());
    for (int q = 0; q < nb; ++q)
        std::memcpy(h + static_cast<std::size_t>(q) * nh, params.dense_b.data(),
                    nh * sizeof(double));
    for (int i = 0; i < in; ++i) {
        const double* w_row = params.dense_w.data() + static_cast<std::size_t>(i) * nh;
        for (int q = 0; q < nb; ++q) {
            const double xi = x[static_cast<std::size_t>(q) * static_cast<std::size_t>(in) +
                                static_cast<std::size_t>(i)];
            double* h_row = h + static_cast<std::size_t>(q) * nh;
            for (std::size_t j = 0; j < nh; ++j) h_row[j] += xi * w_row[j];
        }
    }
}

/// Same-padded conv of one sample: in has `kernel.in_c` planes, out gets
/// `kernel.out_c` planes; accumulation order (ic, du, dv) is fixed.
inline void conv_forward(const ConvKernel& kc, const double* in, int n_x, int n_y, double* out) {
    const int h = kc.k / 2;
    const std::size_t plane = static_cast<std::size_t>(n_x) * static_cast<std::size_t>(n_y);
    for (int oc = 0; oc < kc.out_c; ++oc) {
        double* op = out + static_cast<std::size_t>(oc) * plane;
        const double bias = kc.b[static_cast<std::size_t>(oc)];
        for (int ix = 0; ix < n_x; ++ix) {
            for (int iy = 0; iy < n_y; ++iy) {
                double acc = bias;
                for (int ic = 0; ic < kc.in_c; ++ic) {
                    const double* ip = in + static_cast<std::size_t>(ic) * plane;
                    for (int du = 0; du < kc.k; ++du) {
                        const int sx = ix + du - h;
                        if (sx < 0 || sx >= n_x) continue;
                        for (int dv = 0; dv < kc.k; ++dv) {
                            const int sy = iy + dv - h;
                            if (sy < 0 || sy >= n_y) continue;
                            acc += kc.wat(oc, ic, du, dv) *
                                   ip[static_cast<std::size_t>(sx) * static_cast<std::size_t>(n_y) +
                                      static_cast<std::size_t>(sy)];
                        }
                    }
                }
                op[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                   static_cast<std::size_t>(iy)] = acc;
            }
        }
    }
}

/// Gradient of conv_forward: accumulates weight/bias grads and input grads.
inline void conv_backward(const ConvKernel& kc, const double* in, int n_x, int n_y,
                          const double* g_out, ConvKernel& g_kc, double* g_in) {
    const int h = kc.k / 2;
    const std::size_t plane = static_cast<std::size_t>(n_x) * static_cast<std::size_t>(n_y);
    for (int oc = 0; oc < kc.out_c; ++oc) {
        const double* gop = g_out + static_cast<std::size_t>(oc) * plane;
        for (int ix = 0; ix < n_x; ++ix) {
            for (int iy = 0; iy < n_y; ++iy) {
                const double go = gop[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                                      static_cast<std::size_t>(iy)];
                g_kc.b[static_cast<std::size_t>(oc)] += go;
                for (int ic = 0; ic < kc.in_c; ++ic) {
                    const double* ip = in + static_cast<std::size_t>(ic) * plane;
                    double* gip = g_in ? g_in + static_cast<std::size_t>(ic) * plane : nullptr;
                    for (int du = 0; du < kc.k; ++du) {
                        const int sx = ix + du - h;
                        if (sx < 0 || sx >= n_x) continue;
                        for (int dv = 0; dv < kc.k; ++dv) {
                            const int sy = iy + dv - h;
                            if (sy < 0 || sy >= n_y) continue;
                            const std::size_t si =
                                static_cast<std::size_t>(sx) * static_cast<std::size_t>(n_y) +
                                static_cast<std::size_t>(sy);
                            g_kc.wat(oc, ic, du, dv) += go * ip[si];
                            if (gip) gip[si] += go * kc.wat(oc, ic, du, dv);
                        }
                    }
                }
            }
        }
    }
}

} // namespace detail

/// Flatten a response into `out` (size input_size): re/im interleaved in
/// storage order.
inline void flatten_response(const ResponseTensor& d, double* out) {
    std::memcpy(out, d.data.data(), d.data.size() * 2 * sizeof(double));
}

/// Batched forward pass. A batch of one is the canonical single-sample
/// forward; per-sample results are bitwise independent of batch composition.
inline BatchCache forward_batch(const NetworkParams& params,
                                const std::vector<const ResponseTensor*>& batch) {
    const NetworkConfig& cfg = params.cfg;
    cfg.validate();
    if (batch.empty()) throw ConfigError("forward_batch: empty batch");
    for (const ResponseTensor* d : batch)
        if (d->n_receivers != cfg.n_receivers || d->n_freq != cfg.n_freq)
            throw ConfigError("forward_batch: response shape does not match the network input");

    const int nb = static_cast<int>(batch.size());
    const std::size_t in = static_cast<std::size_t>(cfg.input_size());
    const std::size_t nh = static_cast<std::size_t>(cfg.hidden_size());
    const std::size_t np = static_cast<std::size_t>(cfg.n_pixels());

    BatchCache c;
    c.cfg = cfg;
    c.nb = nb;
    c.x.resize(static_cast<std::size_t>(nb) * in);
    for (int q = 0; q < nb; ++q)
        flatten_response(*batch[static_cast<std::size_t>(q)],
                         c.x.data() + static_cast<std::size_t>(q) * in);

    c.h.resize(static_cast<std::size_t>(nb) * nh);
    detail::dense_forward(params, c.x.data(), nb, c.h.data());

    c.z.assign(static_cast<std::size_t>(cfg.conv_layers),
               std::vector<double>(static_cast<std::size_t>(nb) * nh));
    c.a.assign(static_cast<std::size_t>(cfg.conv_layers),
               std::vector<double>(static_cast<std::size_t>(nb) * nh));
    c.z_out.resize(static_cast<std::size_t>(nb) * np);
    c.p_raw.resize(static_cast<std::size_t>(nb) * np);
    c.p.resize(static_cast<std::size_t>(nb) * np);

    for (int q = 0; q < nb; ++q) {
        const double* cur = c.h.data() + static_cast<std::size_t>(q) * nh;
        for (int l = 0; l < cfg.conv_layers; ++l) {
            double* zq = c.z[static_cast<std::size_t>(l)].data() +
                         static_cast<std::size_t>(q) * nh;
            double* aq = c.a[static_cast<std::size_t>(l)].data() +
                         static_cast<std::size_t>(q) * nh;
            detail::conv_forward(params.convs[static_cast<std::size_t>(l)], cur, cfg.n_x, cfg.n_y,
                                 zq);
            for (std::size_t i = 0; i < nh; ++i) aq[i] = zq[i] > 0.0 ? zq[i] : 0.0;
            cur = aq;
        }
        double* zo = c.z_out.data() + static_cast<std::size_t>(q) * np;
        detail::conv_forward(params.convs.back(), cur, cfg.n_x, cfg.n_y, zo);
        for (std::size_t i = 0; i < np; ++i) {
            const double z = zo[i];
            if (!std::isfinite(z))
                throw NumericError("forward_batch: non-finite activation (sample " +
                                   std::to_string(q) + ")");
            const double pr = 1.0 / (1.0 + std::exp(-z));
            c.p_raw[static_cast<std::size_t>(q) * np + i] = pr;
            c.p[static_cast<std::size_t>(q) * np + i] =
                pr < kProbClampLo ? kProbClampLo : (pr > kProbClampHi ? kProbClampHi : pr);
        }
    }
    return c;
}

inline BatchCache forward(const NetworkParams& params, const ResponseTensor& d) {
    return forward_batch(params, {&d});
}

/// Batched backward pass: `g_p` holds d(loss)/d(p) sample-major (nb*n_pixels).
/// Gradients accumulate over samples in batch order. Dense tensors receive
/// exactly one contribution per sample per element, so they match a
/// sequential sum of single-sample backwards bitwise; conv tensors
/// accumulate many terms per element and match up to rounding.
inline NetworkParams backward_batch(const NetworkParams& params, const BatchCache& c,
                                    const std::vector<double>& g_p) {
    const NetworkConfig& cfg = params.cfg;
    const int nb = c.nb;
    const std::size_t in = static_cast<std::size_t>(cfg.input_size());
    const std::size_t nh = static_cast<std::size_t>(cfg.hidden_size());
    const std::size_t np = static_cast<std::size_t>(cfg.n_pixels());
    if (g_p.size() != static_cast<std::size_t>(nb) * np)
        throw ConfigError("backward_batch: gradient size mismatch");

    NetworkParams grads(cfg);
    std::vector<double> g_h(static_cast<std::size_t>(nb) * nh, 0.0);

    std::vector<double> g_z_out(np);
    std::vector<double> g_cur(nh), g_prev(nh);
    for (int q = 0; q < nb; ++q) {
        // sigmoid + clamp
        for (std::size_t i = 0; i < np; ++i) {
            const double pr = c.p_raw[static_cast<std::size_t>(q) * np + i];
            const bool open = pr >= kProbClampLo && pr <= kProbClampHi;
            g_z_out[i] = open ? g_p[static_cast<std::size_t>(q) * np + i] * pr * (1.0 - pr) : 0.0;
        }
        // final conv (C -> 1)
        const double* a_last = c.a.back().data() + static_cast<std::size_t>(q) * nh;
        std::fill(g_cur.begin(), g_cur.end(), 0.0);
        detail::conv_backward(params.convs.back(), a_last, cfg.n_x, cfg.n_y, g_z_out.data(),
                              grads.convs.back(), g_cur.data());
        // hidden conv blocks, last to first
        for (int l = cfg.conv_layers - 1; l >= 0; --l) {
            const double* zq = c.z[static_cast<std::size_t>(l)].data() +
                               static_cast<std::size_t>(q) * nh;
            for (std::size_t i = 0; i < nh; ++i)
                if (zq[i] <= 0.0) g_cur[i] = 0.0; // ReLU'(0) = 0 by convention
            const double* src = l > 0 ? c.a[static_cast<std::size_t>(l - 1)].data() +
                                            static_cast<std::size_t>(q) * nh
                                      : c.h.data() + static_cast<std::size_t>(q) * nh;
            std::fill(g_prev.begin(), g_prev.end(), 0.0);
            detail::conv_backward(params.convs[static_cast<std::size_t>(l)], src, cfg.n_x,
                                  cfg.n_y, g_cur.data(), grads.convs[static_cast<std::size_t>(l)],
                                  g_prev.data());
            std::swap(g_cur, g_prev);
        }
        std::memcpy(g_h.data() + static_cast<std::size_t>(q) * nh, g_cur.data(),
                    nh * sizeof(double));
    }

    // dense: bias grad in sample order, weight grad input-major with the
    // batch as the inner loop (same elementwise order as sequential samples)
    for (int q = 0; q < nb; ++q) {
        const double* gh = g_h.data() + static_cast<std::size_t>(q) * nh;
        for (std::size_t j = 0; j < nh; ++j) grads.dense_b[j] += gh[j];
    }
    for (std::size_t i = 0; i < in; ++i) {
        double* gw_row = grads.dense_w.data() + i * nh;
        for (int q = 0; q < nb; ++q) {
            const double xi = c.x[static_cast<std::size_t>(q) * in + i];
            const double* gh = g_h.data() + static_cast<std::size_t>(q) * nh;
            for (std::size_t j = 0; j < nh; ++j) gw_row[j] += xi * gh[j];
        }
    }
    return grads;
}

/// ADAM with bias correction; moment vectors follow the canonical parameter
/// order and are sized on first use.
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t t = 0;
    std::vector<double> m, v;

    void validate() const {
        if (!(lr > 0.0)) throw ConfigError("AdamState: lr must be > 0");
        if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
            throw ConfigError("AdamState: betas must lie in [0, 1)");
        if (!(eps > 0.0)) throw ConfigError("AdamState: eps must be > 0");
    }
};

inline void adam_step(NetworkParams& params, const NetworkParams& grads, AdamState& st) {
    st.validate();
    if (params.cfg != grads.cfg) throw ConfigError("adam_step: parameter/gradient shape mismatch");
    auto pv = param_views(params);
    auto gv = param_views(const_cast<NetworkParams&>(grads));
    std::size_t total = 0;
    for (const auto& v : pv) total += v.size;
    if (st.m.empty()) {
        st.m.assign(total, 0.0);
        st.v.assign(total, 0.0);
    } else if (st.m.size() != total) {
        throw ConfigError("adam_step: optimizer state size mismatch");
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    std::size_t off = 0;
    for (std::size_t k = 0; k < pv.size(); ++k) {
        double* p = pv[k].data;
        const double* g = gv[k].data;
        for (std::size_t i = 0; i < pv[k].size; ++i) {
            double& m = st.m[off + i];
            double& v = st.v[off + i];
            m = st.beta1 * m + (1.0 - st.beta1) * g[i];
            v = st.beta2 * v + (1.0 - st.beta2) * g[i] * g[i];
            const double m_hat = m / bc1;
            const double v_hat = v / bc2;
            p[i] -= st.lr * m_hat / (std::sqrt(v_hat) + st.eps);
        }
        off += pv[k].size;
    }
}

inline constexpr char kCheckpointMagic[] = "WGNN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Checkpoint: WGNN magic, JSON header {config, meta}, tensors in canonical
/// order as raw f64 (bit-exact round trip).
inline void save_checkpoint(const std::string& path, const NetworkParams& params,
                            const json& meta = json::object()) {
    BinaryWriter w(path);
    w.write_magic(kCheckpointMagic, kCheckpointVersion);
    json header;
    header["config"] = params.cfg;
    header["meta"] = meta;
    w.write_json(header);
    auto views = param_views(const_cast<NetworkParams&>(params));
    for (const auto& v : views) w.write_f64_array(v.data, v.size);
    w.commit();
}

inline std::pair<NetworkParams, json> load_checkpoint(const std::string& path) {
    BinaryReader r(path);
    r.read_magic(kCheckpointMagic, kCheckpointVersion);
    const json header = r.read_json();
    NetworkConfig cfg = header.at("config").get<NetworkConfig>();
    NetworkParams params(cfg);
    auto views = param_views(params);
    for (auto& v : views) r.read_f64_array(v.data, v.size);
    return {std::move(params), header.value("meta", json::object())};
}

} // namespace wgsr
