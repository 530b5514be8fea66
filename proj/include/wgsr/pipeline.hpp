#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "wgsr/dataset.hpp"
#include "wgsr/errors.hpp"
#include "wgsr/loss.hpp"
#include "wgsr/nn.hpp"
#include "wgsr/rng.hpp"

namespace wgsr {

enum class LossMode { nll_only, nll_plus_pi };

inline std::string to_string(LossMode m) {
    return m == LossMode::nll_only ? "nll_only" : "nll_plus_pi";
}
inline LossMode loss_mode_from_string(const std::string& s) {
    if (s == "nll_only" || s == "nll") return LossMode::nll_only;
    if (s == "nll_plus_pi" || s == "pi") return LossMode::nll_plus_pi;
    throw ConfigError("unknown loss mode: " + s);
}

/// Training protocol. In nll_only mode the objective is plain nll (weights
/// forced to (1, 0)); in nll_plus_pi mode it is w_nll*nll + w_pi*pi.
/// patience = 0 disables early stopping; otherwise training halts once the
/// validation loss has gone `patience` consecutive epochs without improving.
struct TrainConfig {
    int epochs = 50;
    int batch_size = 8;
    LossMode mode = LossMode::nll_plus_pi;
    double w_nll = 0.5;
    double w_pi = 0.5;
    int patience = 5;
    std::uint64_t seed = 0;
    double lr = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    bool two_sided_ce = true;

    void validate() const {
        if (epochs < 1) throw ConfigError("TrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (patience < 0) throw ConfigError("TrainConfig: patience must be >= 0");
        if (w_nll < 0.0 || w_pi < 0.0) throw ConfigError("TrainConfig: weights must be >= 0");
        if (!(lr > 0.0)) throw ConfigError("TrainConfig: lr must be > 0");
        if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
            throw ConfigError("TrainConfig: adam betas must lie in [0, 1)");
        if (!(adam_eps > 0.0)) throw ConfigError("TrainConfig: adam_eps must be > 0");
    }
};

struct EpochRecord {
    int epoch = 0; // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0; // the mode's own objective on the validation split
    double val_nll = 0.0;  // supervised component alone, comparable across modes
};

struct TrainResult {
    NetworkParams best_params;
    int best_epoch = 0; // 1-based
    double best_val_loss = 0.0;
    std::vector<EpochRecord> curve;
    LossMode mode = LossMode::nll_only;
};

namespace detail {

struct ValScore {
    double nll = 0.0, pi = 0.0, combined = 0.0;
};

/// Whole-split loss under single-batch semantics (the PI term's sqrt spans
/// the split), evaluated in memory-bounded chunks.
inline ValScore validation_loss(const NetworkParams& params, const Dataset& ds,
                                const FieldOperator* op, double w_nll, double w_pi,
                                bool two_sided, int chunk) {
    const int n_val = ds.meta.n_val;
    const std::size_t np = static_cast<std::size_t>(params.cfg.n_pixels());
    double ce_sum = 0.0, r2_sum = 0.0;
    for (int start = 0; start < n_val; start += chunk) {
        const int nb = std::min(chunk, n_val - start);
        std::vector<const ResponseTensor*> batch;
        for (int i = 0; i < nb; ++i) batch.push_back(&ds.val(start + i).response);
        const BatchCache cache = forward_batch(params, batch);
        for (int i = 0; i < nb; ++i) {
            const LabelImage& label = ds.val(start + i).label;
            ce_sum += cross_entropy(cache.probs(i), np, label, two_sided);
            if (op != nullptr && w_pi > 0.0)
                r2_sum += residual_norm_sq(*op, cache.probs(i), label, nullptr);
        }
    }
    ValScore s;
    s.nll = ce_sum / static_cast<double>(n_val);
    if (op != nullptr && w_pi > 0.0)
        s.pi = std::sqrt(r2_sum) /
               (static_cast<double>(n_val) * static_cast<double>(np));
    s.combined = w_nll * s.nll + w_pi * s.pi;
    return s;
}

} // namespace detail

/// ADAM training over shuffled mini-batches with validation-based early
/// stopping; returns the best-validation checkpoint and both loss curves.
/// Fully deterministic given the config seed.
inline TrainResult train(const Dataset& ds, const NetworkConfig& net_cfg,
                         const TrainConfig& tc, const FieldOperator* op = nullptr) {
    tc.validate();
    net_cfg.validate();
    if (ds.meta.n_train < 1 || ds.meta.n_val < 1)
        throw ConfigError("train: dataset needs nonempty train and validation splits");
    if (net_cfg.n_receivers != ds.meta.array.n_receivers() || net_cfg.n_freq != ds.meta.freq.n_freq ||
        net_cfg.n_x != ds.meta.grid.n_x || net_cfg.n_y != ds.meta.grid.n_y)
        throw ConfigError("train: network shape does not match the dataset");
    const bool use_pi = tc.mode == LossMode::nll_plus_pi;
    if (use_pi && op == nullptr)
        throw ConfigError("train: nll_plus_pi mode requires a field operator");
    const double w_nll = use_pi ? tc.w_nll : 1.0;
    const double w_pi = use_pi ? tc.w_pi : 0.0;
    const FieldOperator* op_eff = use_pi ? op : nullptr;
    if (op_eff && (op_eff->n_x != net_cfg.n_x || op_eff->n_y != net_cfg.n_y))
        throw ConfigError("train: operator grid does not match the network output");

    NetworkParams params = init_params(net_cfg, tc.seed);
    AdamState adam;
    adam.lr = tc.lr;
    adam.beta1 = tc.adam_beta1;
    adam.beta2 = tc.adam_beta2;
    adam.eps = tc.adam_eps;

    Rng shuffle_rng(derive_seed(tc.seed, "shuffle"));
    std::vector<int> order(static_cast<std::size_t>(ds.meta.n_train));
    for (int i = 0; i < ds.meta.n_train; ++i) order[static_cast<std::size_t>(i)] = i;

    const std::size_t np = static_cast<std::size_t>(net_cfg.n_pixels());
    TrainResult result;
    result.mode = tc.mode;
    result.best_val_loss = std::numeric_limits<double>::infinity();
    int stall = 0;

    for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = shuffle_rng.uniform_index(i);
            std::swap(order[i - 1], order[j]);
        }
        double train_loss_sum = 0.0;
        for (int start = 0; start < ds.meta.n_train; start += tc.batch_size) {
            const int nb = std::min(tc.batch_size, ds.meta.n_train - start);
            std::vector<const ResponseTensor*> batch;
            std::vector<const double*> preds;
            std::vector<const LabelImage*> labels;
            for (int i = 0; i < nb; ++i) {
                const Sample& s = ds.train(order[static_cast<std::size_t>(start + i)]);
                batch.push_back(&s.response);
                labels.push_back(&s.label);
            }
            const BatchCache cache = forward_batch(params, batch);
            for (int i = 0; i < nb; ++i) preds.push_back(cache.probs(i));
            const LossReport rep =
                combined_loss(op_eff, preds, labels, np, w_nll, w_pi, tc.two_sided_ce);
            if (!std::isfinite(rep.combined))
                throw NumericError("train: divergence (non-finite loss) at epoch " +
                                   std::to_string(epoch) + ", batch " +
                                   std::to_string(start / tc.batch_size));
            train_loss_sum += rep.combined * static_cast<double>(nb);
            const std::vector<double> g =
                combined_output_grad(op_eff, preds, labels, np, w_nll, w_pi, tc.two_sided_ce);
            const NetworkParams grads = backward_batch(params, cache, g);
            adam_step(params, grads, adam);
        }
        const double train_loss = train_loss_sum / static_cast<double>(ds.meta.n_train);

        const detail::ValScore val = detail::validation_loss(params, ds, op_eff, w_nll, w_pi,
                                                             tc.two_sided_ce, tc.batch_size);
        if (!std::isfinite(val.combined))
            throw NumericError("train: divergence (non-finite validation loss) at epoch " +
                               std::to_string(epoch));
        result.curve.push_back({epoch, train_loss, val.combined, val.nll});

        if (val.combined < result.best_val_loss) {
            result.best_val_loss = val.combined;
            result.best_epoch = epoch;
            result.best_params = params;
            stall = 0;
        } else {
            ++stall;
            if (tc.patience > 0 && stall >= tc.patience) break;
        }
    }
    return result;
}

/// Box filter (1/N_p^2) * P_{N_p}, zero-padded. N_p must be odd: an even
/// kernel has no center pixel.
inline std::vector<double> mean_filter(const double* img, int n_x, int n_y,
                                       const PlateauSpec& plateau) {
    plateau.validate();
    if (plateau.n_p % 2 == 0) throw ConfigError("mean_filter: N_p must be odd");
    const int h = plateau.n_p / 2;
    // divide (not multiply by a reciprocal) so a full window of ones gives
    // exactly 1.0 — peak extraction thresholds right at that value
    const double np2 = static_cast<double>(plateau.n_p) * static_cast<double>(plateau.n_p);
    std::vector<double> out(static_cast<std::size_t>(n_x) * static_cast<std::size_t>(n_y));
    for (int ix = 0; ix < n_x; ++ix) {
        for (int iy = 0; iy < n_y; ++iy) {
            double acc = 0.0;
            for (int u = std::max(0, ix - h); u <= std::min(n_x - 1, ix + h); ++u)
                for (int v = std::max(0, iy - h); v <= std::min(n_y - 1, iy + h); ++v)
                    acc += img[static_cast<std::size_t>(u) * static_cast<std::size_t>(n_y) +
                               static_cast<std::size_t>(v)];
            out[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                static_cast<std::size_t>(iy)] = acc / np2;
        }
    }
    return out;
}

namespace detail {

/// 4-connected components of a boolean mask; returns component id per pixel
/// (-1 outside), ids assigned in row-major discovery order.
inline std::vector<int> label_components(const std::vector<bool>& mask, int n_x, int n_y) {
    std::vector<int> comp(mask.size(), -1);
    std::vector<int> stack;
    int next = 0;
    for (std::size_t s = 0; s < mask.size(); ++s) {
        if (!mask[s] || comp[s] >= 0) continue;
        comp[s] = next;
        stack.push_back(static_cast<int>(s));
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            const int ix = cur / n_y, iy = cur % n_y;
            const int nbrs[4][2] = {{ix - 1, iy}, {ix + 1, iy}, {ix, iy - 1}, {ix, iy + 1}};
            for (const auto& nb : nbrs) {
                if (nb[0] < 0 || nb[0] >= n_x || nb[1] < 0 || nb[1] >= n_y) continue;
                const std::size_t idx = static_cast<std::size_t>(nb[0]) *
                                            static_cast<std::size_t>(n_y) +
                                        static_cast<std::size_t>(nb[1]);
                if (mask[idx] && comp[idx] < 0) {
                    comp[idx] = next;
                    stack.push_back(static_cast<int>(idx));
                }
            }
        }
        ++next;
    }
    return comp;
}

} // namespace detail

/// Peak extraction: mean-filter, threshold at tau, and reduce each maximal
/// 4-connected superlevel component to its maximum pixel (ties: lowest
/// row-major index). Returns sorted pixel indices.
inline std::vector<int> extract_sources(const double* img, int n_x, int n_y,
                                        const PlateauSpec& plateau, double tau) {
    if (!(tau > 0.0) || !(tau < 1.0)) throw ConfigError("extract_sources: tau must be in (0, 1)");
    const std::vector<double> smooth = mean_filter(img, n_x, n_y, plateau);
    std::vector<bool> mask(smooth.size());
    for (std::size_t i = 0; i < smooth.size(); ++i) mask[i] = smooth[i] >= tau;
    const std::vector<int> comp = detail::label_components(mask, n_x, n_y);
    int n_comp = 0;
    for (int c : comp) n_comp = std::max(n_comp, c + 1);
    std::vector<int> peak(static_cast<std::size_t>(n_comp), -1);
    for (std::size_t i = 0; i < comp.size(); ++i) {
        const int c = comp[i];
        if (c < 0) continue;
        int& p = peak[static_cast<std::size_t>(c)];
        if (p < 0 || smooth[i] > smooth[static_cast<std::size_t>(p)]) p = static_cast<int>(i);
    }
    std::sort(peak.begin(), peak.end());
    return peak;
}

/// Per-sample and aggregate recovery bookkeeping.
struct SampleEval {
    int id = 0;
    int n_sources = 0;
    std::optional<double> min_dist;
    int recovered = 0;
    int spurious = 0;
};

struct EvalReport {
    int total_sources = 0;
    int recovered = 0;
    int spurious = 0;
    std::vector<SampleEval> samples;

    double rate() const {
        return total_sources > 0 ? static_cast<double>(recovered) /
                                       static_cast<double>(total_sources)
                                 : 0.0;
    }
};

/// Exact-pixel recovery: a true source counts iff its pixel appears in the
/// predicted set; spurious predictions are tallied but do not lower the rate.
inline EvalReport recovery_rate(const std::vector<std::vector<int>>& preds,
                                const std::vector<std::vector<int>>& truths) {
    if (preds.size() != truths.size())
        throw ConfigError("recovery_rate: misaligned prediction/truth lists");
    EvalReport rep;
    for (std::size_t q = 0; q < preds.size(); ++q) {
        SampleEval se;
        se.id = static_cast<int>(q);
        se.n_sources = static_cast<int>(truths[q].size());
        for (int t : truths[q])
            if (std::find(preds[q].begin(), preds[q].end(), t) != preds[q].end()) ++se.recovered;
        for (int p : preds[q])
            if (std::find(truths[q].begin(), truths[q].end(), p) == truths[q].end()) ++se.spurious;
        rep.total_sources += se.n_sources;
        rep.recovered += se.recovered;
        rep.spurious += se.spurious;
        rep.samples.push_back(se);
    }
    return rep;
}

/// Forward + peak extraction for one response.
inline std::vector<int> predict_peaks(const NetworkParams& params, const ResponseTensor& d,
                                      const PlateauSpec& plateau, double tau) {
    const BatchCache cache = forward(params, d);
    return extract_sources(cache.probs(0), params.cfg.n_x, params.cfg.n_y, plateau, tau);
}

/// Clean-test evaluation over the test split (optionally with noise injected
/// per sample through `noise`, seeded per sample id). Forwards run in chunks
/// for memory efficiency; per-sample outputs are batch-size independent.
inline EvalReport evaluate_test(const NetworkParams& params, const Dataset& ds,
                                const PlateauSpec& plateau, double tau,
                                const NoiseSpec* noise = nullptr) {
    std::vector<std::vector<int>> preds, truths;
    std::vector<std::optional<double>> dists;
    const int chunk = 8;
    for (int start = 0; start < ds.meta.n_test; start += chunk) {
        const int nb = std::min(chunk, ds.meta.n_test - start);
        std::vector<ResponseTensor> noisy(static_cast<std::size_t>(nb));
        std::vector<const ResponseTensor*> batch;
        for (int i = 0; i < nb; ++i) {
            const Sample& s = ds.test(start + i);
            if (noise != nullptr && noise->kind != NoiseKind::none) {
                NoiseSpec per = *noise;
                per.seed = derive_seed(noise->seed, static_cast<std::uint64_t>(s.id));
                noisy[static_cast<std::size_t>(i)] = apply_noise(s.response, per);
                batch.push_back(&noisy[static_cast<std::size_t>(i)]);
            } else {
                batch.push_back(&s.response);
            }
        }
        const BatchCache cache = forward_batch(params, batch);
        for (int i = 0; i < nb; ++i) {
            const Sample& s = ds.test(start + i);
            preds.push_back(extract_sources(cache.probs(i), params.cfg.n_x, params.cfg.n_y,
                                            plateau, tau));
            truths.push_back(source_pixels(s.sources, ds.meta.grid));
            dists.push_back(min_pairwise_distance(s.sources));
        }
    }
    EvalReport rep = recovery_rate(preds, truths);
    for (int i = 0; i < ds.meta.n_test; ++i) {
        rep.samples[static_cast<std::size_t>(i)].id = ds.test(i).id;
        rep.samples[static_cast<std::size_t>(i)].min_dist = dists[static_cast<std::size_t>(i)];
    }
    return rep;
}

/// Rayleigh reference: half the central wavelength.
inline double rayleigh_half(const WaveguideModel& model, const FrequencyGrid& freq) {
    return 0.5 * model.c0 / freq.f_center;
}

struct DistanceBin {
    double lo = 0.0, hi = 0.0;
    int total = 0;
    int recovered = 0;

    double rate() const {
        return total > 0 ? static_cast<double>(recovered) / static_cast<double>(total) : 0.0;
    }
};

struct MinDistSweep {
    std::vector<DistanceBin> bins; // only nonempty bins are kept
    double rayleigh_half = 0.0;
};

/// Per-min-distance-bin recovery over the multi-source test samples.
/// Bins are [lo + i*width, lo + (i+1)*width), the top edge closing the last
/// bin; a sample outside the binned range violates the coverage precondition.
inline MinDistSweep min_distance_sweep(const NetworkParams& params, const Dataset& ds,
                                       const PlateauSpec& plateau, double tau, double bin_lo,
                                       double bin_hi, double bin_width, double rayleigh) {
    if (!(bin_width > 0.0) || !(bin_hi > bin_lo))
        throw ConfigError("min_distance_sweep: need bin_hi > bin_lo and bin_width > 0");
    const int n_bins = static_cast<int>(std::ceil((bin_hi - bin_lo) / bin_width));
    std::vector<DistanceBin> bins(static_cast<std::size_t>(n_bins));
    for (int b = 0; b < n_bins; ++b) {
        bins[static_cast<std::size_t>(b)].lo = bin_lo + bin_width * static_cast<double>(b);
        bins[static_cast<std::size_t>(b)].hi =
            std::min(bin_hi, bin_lo + bin_width * static_cast<double>(b + 1));
    }
    const EvalReport rep = evaluate_test(params, ds, plateau, tau);
    for (int i = 0; i < ds.meta.n_test; ++i) {
        const SampleEval& se = rep.samples[static_cast<std::size_t>(i)];
        if (!se.min_dist.has_value()) continue; // single-source samples excluded
        const double d = *se.min_dist;
        if (d < bin_lo || d > bin_hi)
            throw ConfigError("min_distance_sweep: sample min distance " + std::to_string(d) +
                              " outside the binned range");
        int b = static_cast<int>((d - bin_lo) / bin_width);
        if (b >= n_bins) b = n_bins - 1; // top edge
        bins[static_cast<std::size_t>(b)].total += se.n_sources;
        bins[static_cast<std::size_t>(b)].recovered += se.recovered;
    }
    MinDistSweep sweep;
    sweep.rayleigh_half = rayleigh;
    for (const DistanceBin& b : bins)
        if (b.total > 0) sweep.bins.push_back(b); // empty bins absent, not zero
    return sweep;
}

struct NoiseEntry {
    double epsilon = 0.0;
    std::optional<double> snr;
    double rate = 0.0;
    int recovered = 0;
    int total = 0;
};

/// Recovery vs noise level on the clean-trained model. Per-(epsilon, sample)
/// noise streams are derived from base_seed and the epsilon index, so each
/// row is reproducible in isolation.
inline std::vector<NoiseEntry> noise_sweep(const NetworkParams& params, const Dataset& ds,
                                           NoiseKind kind, const std::vector<double>& eps_list,
                                           std::uint64_t base_seed, const PlateauSpec& plateau,
                                           double tau) {
    std::vector<NoiseEntry> out;
    for (std::size_t e = 0; e < eps_list.size(); ++e) {
        NoiseSpec spec;
        spec.kind = kind;
        spec.epsilon = eps_list[e];
        spec.seed = derive_seed(derive_seed(base_seed, "noise"), static_cast<std::uint64_t>(e));
        const EvalReport rep = evaluate_test(params, ds, plateau, tau, &spec);
        NoiseEntry entry;
        entry.epsilon = eps_list[e];
        if (eps_list[e] > 0.0) entry.snr = snr_db(eps_list[e]);
        entry.rate = rep.rate();
        entry.recovered = rep.recovered;
        entry.total = rep.total_sources;
        out.push_back(entry);
    }
    return out;
}

// ---- figure-data emitters (CSV / PGM) ----

namespace detail {

inline std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline std::string loss_curves_csv(const TrainResult& r) {
    std::string s = "epoch,train_loss,val_loss,mode\n";
    for (const EpochRecord& e : r.curve)
        s += std::to_string(e.epoch) + "," + detail::fmt_g17(e.train_loss) + "," +
             detail::fmt_g17(e.val_loss) + "," + to_string(r.mode) + "\n";
    return s;
}

inline std::string recovery_csv(const EvalReport& rep) {
    std::string s = "sample_id,n_sources,min_dist,recovered,spurious\n";
    for (const SampleEval& se : rep.samples)
        s += std::to_string(se.id) + "," + std::to_string(se.n_sources) + "," +
             (se.min_dist.has_value() ? detail::fmt_g17(*se.min_dist) : std::string()) + "," +
             std::to_string(se.recovered) + "," + std::to_string(se.spurious) + "\n";
    return s;
}

inline std::string min_dist_csv(const MinDistSweep& sweep) {
    std::string s = "bin_lo,bin_hi,total_sources,recovered,rate,rayleigh_half\n";
    for (const DistanceBin& b : sweep.bins)
        s += detail::fmt_g17(b.lo) + "," + detail::fmt_g17(b.hi) + "," + std::to_string(b.total) +
             "," + std::to_string(b.recovered) + "," + detail::fmt_g17(b.rate()) + "," +
             detail::fmt_g17(sweep.rayleigh_half) + "\n";
    return s;
}

inline std::string noise_csv(NoiseKind kind, const std::vector<NoiseEntry>& entries) {
    std::string s = "kind,epsilon,snr_db,rate,recovered,total_sources\n";
    for (const NoiseEntry& e : entries)
        s += to_string(kind) + "," + detail::fmt_g17(e.epsilon) + "," +
             (e.snr.has_value() ? detail::fmt_g17(*e.snr) : std::string("inf")) + "," +
             detail::fmt_g17(e.rate) + "," + std::to_string(e.recovered) + "," +
             std::to_string(e.total) + "\n";
    return s;
}

/// Image as CSV (one row per y line, x across columns).
inline std::string image_csv(const double* img, int n_x, int n_y) {
    std::string s;
    for (int iy = 0; iy < n_y; ++iy) {
        for (int ix = 0; ix < n_x; ++ix) {
            if (ix) s += ",";
            s += detail::fmt_g17(img[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                                     static_cast<std::size_t>(iy)]);
        }
        s += "\n";
    }
    return s;
}

/// 8-bit binary PGM, min-max normalized (constant images map to black).
inline std::string image_pgm(const double* img, int n_x, int n_y) {
    double lo = img[0], hi = img[0];
    const std::size_t n = static_cast<std::size_t>(n_x) * static_cast<std::size_t>(n_y);
    for (std::size_t i = 0; i < n; ++i) {
        lo = std::min(lo, img[i]);
        hi = std::max(hi, img[i]);
    }
    const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
    std::string s = "P5\n" + std::to_string(n_x) + " " + std::to_string(n_y) + "\n255\n";
    for (int iy = 0; iy < n_y; ++iy)
        for (int ix = 0; ix < n_x; ++ix) {
            const double v = img[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                                 static_cast<std::size_t>(iy)];
            s += static_cast<char>(static_cast<int>((v - lo) * scale + 0.5));
        }
    return s;
}

} // namespace wgsr
