#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wgsr/dataset.hpp"
#include "wgsr/errors.hpp"
#include "wgsr/imaging.hpp"
#include "wgsr/io.hpp"
#include "wgsr/physics.hpp"
#include "wgsr/serialize.hpp"

namespace wgsr {

/// Binary cross-entropy, mean over pixels. `two_sided` (the default) keeps
/// both the I log p and (1-I) log(1-p) terms; the one-sided variant drops the
/// second term and is kept only for fidelity experiments (it is minimized by
/// the all-ones image).
inline double cross_entropy(const double* pred, std::size_t n, const LabelImage& label,
                            bool two_sided = true) {
    if (n != label.pixels.size() || n == 0)
        throw ConfigError("cross_entropy: prediction/label shape mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double p = pred[i];
        if (!(p > 0.0) || !(p < 1.0))
            throw NumericError("cross_entropy: prediction outside (0, 1)");
        const double t = label.pixels[i] ? 1.0 : 0.0;
        acc += t * std::log(p);
        if (two_sided) acc += (1.0 - t) * std::log(1.0 - p);
    }
    return -acc / static_cast<double>(n);
}

/// Adds scale * d(cross_entropy)/d(pred) into g (size n).
inline void add_ce_output_grad(const double* pred, std::size_t n, const LabelImage& label,
                               bool two_sided, double scale, double* g) {
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double p = pred[i];
        const double t = label.pixels[i] ? 1.0 : 0.0;
        double d = t / p;
        if (two_sided) d -= (1.0 - t) / (1.0 - p);
        g[i] += scale * (-inv_n) * d;
    }
}

/// Mean cross-entropy over a batch.
inline double nll_loss(const std::vector<const double*>& preds,
                       const std::vector<const LabelImage*>& labels, std::size_t n,
                       bool two_sided = true) {
    if (preds.empty() || preds.size() != labels.size())
        throw ConfigError("nll_loss: empty batch or length mismatch");
    double acc = 0.0;
    for (std::size_t q = 0; q < preds.size(); ++q)
        acc += cross_entropy(preds[q], n, *labels[q], two_sided);
    return acc / static_cast<double>(preds.size());
}

/// Precomputed Green's matrix A[m, j] = G(x_m, y_j; omega) between evaluation
/// points x_m (every eval_stride-th grid node on both axes, row-major) and
/// all pixel centers y_j (row-major). Pairs with zero horizontal offset —
/// the diagonal and all same-column pairs, where the modal series is singular
/// or non-convergent — are evaluated at the regularization offset
/// `self_offset` (default half a pixel, h_x/2).
struct FieldOperator {
    double omega = 0.0;
    int eval_stride = 1;
    double self_offset = 0.0;
    int n_modes = 0;
    int n_x = 0, n_y = 0;
    std::vector<int> eval_pixels; // row-major pixel index of each evaluation point
    std::vector<cplx> a;          // n_eval x n_pixels, row-major

    int n_eval() const { return static_cast<int>(eval_pixels.size()); }
    int n_pixels() const { return n_x * n_y; }

    const cplx& at(int m, int j) const {
        return a[static_cast<std::size_t>(m) * static_cast<std::size_t>(n_pixels()) +
                 static_cast<std::size_t>(j)];
    }
};

inline FieldOperator build_field_operator(const WaveguideModel& model, const ModalBasis& basis,
                                          const SearchGrid& grid, double omega, int eval_stride,
                                          double self_offset = 0.0) {
    grid.validate();
    model.validate();
    if (eval_stride < 1) throw ConfigError("build_field_operator: eval_stride must be >= 1");
    const double k = model.wavenumber(omega);
    if (std::abs(basis.k - k) > 1e-9 * std::max(1.0, k))
        throw ConfigError("build_field_operator: basis wavenumber does not match omega");
    if (self_offset <= 0.0) {
        if (grid.h_x() > 0.0)
            self_offset = 0.5 * grid.h_x();
        else
            throw ConfigError("build_field_operator: grid has no x extent; "
                              "pass an explicit self_offset");
    }
    if (self_offset < kMinHorizontalOffset)
        throw ConfigError("build_field_operator: self_offset below the singular guard");

    FieldOperator op;
    op.omega = omega;
    op.eval_stride = eval_stride;
    op.self_offset = self_offset;
    op.n_modes = basis.n_modes();
    op.n_x = grid.n_x;
    op.n_y = grid.n_y;
    for (int ix = 0; ix < grid.n_x; ix += eval_stride)
        for (int iy = 0; iy < grid.n_y; iy += eval_stride)
            op.eval_pixels.push_back(grid.index(ix, iy));

    // Separable mode tables: G(dxi, ym, yj) = sum_n E[n][dxi] Sy[n][ym] Sy[n][yj]
    const int n_modes = basis.n_modes();
    const double pref = std::sqrt(2.0 / model.depth);
    std::vector<cplx> e(static_cast<std::size_t>(n_modes) * static_cast<std::size_t>(grid.n_x));
    for (int n = 0; n < n_modes; ++n) {
        const cplx beta = basis.beta[static_cast<std::size_t>(n)];
        for (int dxi = 0; dxi < grid.n_x; ++dxi) {
            const double dx = dxi == 0 ? self_offset : static_cast<double>(dxi) * grid.h_x();
            e[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_x) +
              static_cast<std::size_t>(dxi)] = pref * std::exp(cplx(0.0, 1.0) * beta * dx) / beta;
        }
    }
    std::vector<double> sy(static_cast<std::size_t>(n_modes) * static_cast<std::size_t>(grid.n_y));
    for (int n = 0; n < n_modes; ++n) {
        const double root_mu = std::sqrt(basis.mu[static_cast<std::size_t>(n)]);
        for (int iy = 0; iy < grid.n_y; ++iy)
            sy[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_y) +
               static_cast<std::size_t>(iy)] = std::sin(root_mu * grid.y_at(iy));
    }
    const std::size_t ny = static_cast<std::size_t>(grid.n_y);
    std::vector<cplx> b(static_cast<std::size_t>(grid.n_x) * ny * ny);
    for (int dxi = 0; dxi < grid.n_x; ++dxi) {
        for (std::size_t ym = 0; ym < ny; ++ym) {
            for (std::size_t yj = 0; yj < ny; ++yj) {
                cplx acc(0.0, 0.0);
                for (int n = 0; n < n_modes; ++n) {
                    acc += e[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_x) +
                             static_cast<std::size_t>(dxi)] *
                           (sy[static_cast<std::size_t>(n) * ny + ym] *
                            sy[static_cast<std::size_t>(n) * ny + yj]);
                }
                b[(static_cast<std::size_t>(dxi) * ny + ym) * ny + yj] = acc;
            }
        }
    }

    const std::size_t np = static_cast<std::size_t>(grid.n_pixels());
    op.a.resize(static_cast<std::size_t>(op.n_eval()) * np);
    for (int m = 0; m < op.n_eval(); ++m) {
        const auto [ixm, iym] = grid.coords(op.eval_pixels[static_cast<std::size_t>(m)]);
        for (int j = 0; j < grid.n_pixels(); ++j) {
            const auto [ixj, iyj] = grid.coords(j);
            const int dxi = ixm >= ixj ? ixm - ixj : ixj - ixm;
            op.a[static_cast<std::size_t>(m) * np + static_cast<std::size_t>(j)] =
                b[(static_cast<std::size_t>(dxi) * ny + static_cast<std::size_t>(iym)) * ny +
                  static_cast<std::size_t>(iyj)];
        }
    }
    for (const cplx& v : op.a)
        if (!std::isfinite(v.real()) || !std::isfinite(v.imag()))
            throw NumericError("build_field_operator: non-finite operator entry");
    return op;
}

namespace detail {

/// r = A (label - pred); returns ||r||^2 and optionally keeps r.
inline double residual_norm_sq(const FieldOperator& op, const double* pred,
                               const LabelImage& label, std::vector<cplx>* r_out) {
    const std::size_t np = static_cast<std::size_t>(op.n_pixels());
    std::vector<double> delta(np);
    for (std::size_t j = 0; j < np; ++j)
        delta[j] = (label.pixels[j] ? 1.0 : 0.0) - pred[j];
    double s = 0.0;
    if (r_out) r_out->assign(static_cast<std::size_t>(op.n_eval()), cplx(0.0, 0.0));
    for (int m = 0; m < op.n_eval(); ++m) {
        const cplx* row = op.a.data() + static_cast<std::size_t>(m) * np;
        cplx acc(0.0, 0.0);
        for (std::size_t j = 0; j < np; ++j) acc += row[j] * delta[j];
        s += std::norm(acc);
        if (r_out) (*r_out)[static_cast<std::size_t>(m)] = acc;
    }
    return s;
}

inline void check_pi_shapes(const FieldOperator& op, const std::vector<const double*>& preds,
                            const std::vector<const LabelImage*>& labels) {
    if (preds.empty() || preds.size() != labels.size())
        throw ConfigError("pi_loss: empty batch or length mismatch");
    for (const LabelImage* l : labels)
        if (l->n_x != op.n_x || l->n_y != op.n_y)
            throw ConfigError("pi_loss: label shape does not match the operator grid");
}

} // namespace detail

/// Physics-informed loss: with r_q = A (vec I_q - vec Itilde_q),
///   pi = sqrt(sum_q ||r_q||^2) / (N_batch * N_x * N_y).
inline double pi_loss(const FieldOperator& op, const std::vector<const double*>& preds,
                      const std::vector<const LabelImage*>& labels) {
    detail::check_pi_shapes(op, preds, labels);
    double s = 0.0;
    for (std::size_t q = 0; q < preds.size(); ++q)
        s += detail::residual_norm_sq(op, preds[q], *labels[q], nullptr);
    return std::sqrt(s) / (static_cast<double>(preds.size()) *
                           static_cast<double>(op.n_pixels()));
}

/// Analytic gradient of pi_loss w.r.t. each prediction image:
///   d pi / d pred_q = -Re(A^H r_q) / (N_batch * N_x*N_y * sqrt(S)),
/// zero by convention where the loss vanishes (the root is non-smooth there).
inline std::vector<std::vector<double>> pi_loss_output_grad(
    const FieldOperator& op, const std::vector<const double*>& preds,
    const std::vector<const LabelImage*>& labels) {
    detail::check_pi_shapes(op, preds, labels);
    const std::size_t np = static_cast<std::size_t>(op.n_pixels());
    const std::size_t nb = preds.size();
    std::vector<std::vector<cplx>> r(nb);
    double s = 0.0;
    for (std::size_t q = 0; q < nb; ++q)
        s += detail::residual_norm_sq(op, preds[q], *labels[q], &r[q]);
    std::vector<std::vector<double>> g(nb, std::vector<double>(np, 0.0));
    if (s == 0.0) return g;
    const double scale = -1.0 / (static_cast<double>(nb) * static_cast<double>(np) * std::sqrt(s));
    for (std::size_t q = 0; q < nb; ++q) {
        for (int m = 0; m < op.n_eval(); ++m) {
            const cplx* row = op.a.data() + static_cast<std::size_t>(m) * np;
            const cplx rm = r[q][static_cast<std::size_t>(m)];
            for (std::size_t j = 0; j < np; ++j)
                g[q][j] += std::real(std::conj(row[j]) * rm);
        }
        for (std::size_t j = 0; j < np; ++j) g[q][j] *= scale;
    }
    return g;
}

struct LossReport {
    double nll = 0.0;
    double pi = 0.0;
    double combined = 0.0;
    std::vector<double> per_sample_ce;
    std::vector<double> per_sample_residual_sq;
};

/// combined = w_nll * nll + w_pi * pi. Pass op = nullptr (or w_pi = 0) for
/// pure NLL mode; the PI term then reports 0.
inline LossReport combined_loss(const FieldOperator* op, const std::vector<const double*>& preds,
                                const std::vector<const LabelImage*>& labels, std::size_t n_pixels,
                                double w_nll = 0.5, double w_pi = 0.5, bool two_sided = true) {
    if (w_nll < 0.0 || w_pi < 0.0) throw ConfigError("combined_loss: weights must be >= 0");
    if (preds.empty() || preds.size() != labels.size())
        throw ConfigError("combined_loss: empty batch or length mismatch");
    LossReport rep;
    rep.per_sample_ce.resize(preds.size());
    double acc = 0.0;
    for (std::size_t q = 0; q < preds.size(); ++q) {
        rep.per_sample_ce[q] = cross_entropy(preds[q], n_pixels, *labels[q], two_sided);
        acc += rep.per_sample_ce[q];
    }
    rep.nll = acc / static_cast<double>(preds.size());
    if (op != nullptr && w_pi > 0.0) {
        detail::check_pi_shapes(*op, preds, labels);
        rep.per_sample_residual_sq.resize(preds.size());
        double s = 0.0;
        for (std::size_t q = 0; q < preds.size(); ++q) {
            rep.per_sample_residual_sq[q] =
                detail::residual_norm_sq(*op, preds[q], *labels[q], nullptr);
            s += rep.per_sample_residual_sq[q];
        }
        rep.pi = std::sqrt(s) / (static_cast<double>(preds.size()) *
                                 static_cast<double>(op->n_pixels()));
    }
    rep.combined = w_nll * rep.nll + w_pi * rep.pi;
    return rep;
}

/// Flat (batch-major) gradient of combined_loss w.r.t. the predictions,
/// shaped for nn backward_batch.
inline std::vector<double> combined_output_grad(const FieldOperator* op,
                                                const std::vector<const double*>& preds,
                                                const std::vector<const LabelImage*>& labels,
                                                std::size_t n_pixels, double w_nll = 0.5,
                                                double w_pi = 0.5, bool two_sided = true) {
    if (preds.empty() || preds.size() != labels.size())
        throw ConfigError("combined_output_grad: empty batch or length mismatch");
    const std::size_t nb = preds.size();
    std::vector<double> g(nb * n_pixels, 0.0);
    const double ce_scale = w_nll / static_cast<double>(nb);
    for (std::size_t q = 0; q < nb; ++q)
        add_ce_output_grad(preds[q], n_pixels, *labels[q], two_sided, ce_scale,
                           g.data() + q * n_pixels);
    if (op != nullptr && w_pi > 0.0) {
        const auto gp = pi_loss_output_grad(*op, preds, labels);
        for (std::size_t q = 0; q < nb; ++q)
            for (std::size_t j = 0; j < n_pixels; ++j) g[q * n_pixels + j] += w_pi * gp[q][j];
    }
    return g;
}

inline constexpr char kOperatorMagic[] = "WGOP";
inline constexpr std::uint32_t kOperatorVersion = 1;

inline void save_field_operator(const std::string& path, const FieldOperator& op,
                                const json& physics) {
    BinaryWriter w(path);
    w.write_magic(kOperatorMagic, kOperatorVersion);
    json header;
    header["physics"] = physics;
    header["omega"] = op.omega;
    header["eval_stride"] = op.eval_stride;
    header["self_offset"] = op.self_offset;
    header["n_modes"] = op.n_modes;
    header["n_x"] = op.n_x;
    header["n_y"] = op.n_y;
    header["n_eval"] = op.eval_pixels.size();
    w.write_json(header);
    w.write_f64_array(reinterpret_cast<const double*>(op.a.data()), op.a.size() * 2);
    w.commit();
}

inline FieldOperator load_field_operator(const std::string& path, json* physics_out = nullptr) {
    BinaryReader r(path);
    r.read_magic(kOperatorMagic, kOperatorVersion);
    const json header = r.read_json();
    FieldOperator op;
    header.at("omega").get_to(op.omega);
    header.at("eval_stride").get_to(op.eval_stride);
    header.at("self_offset").get_to(op.self_offset);
    header.at("n_modes").get_to(op.n_modes);
    header.at("n_x").get_to(op.n_x);
    header.at("n_y").get_to(op.n_y);
    const auto n_eval = header.at("n_eval").get<std::uint64_t>();
    // evaluation points are regenerated from the stride rather than stored
    for (int ix = 0; ix < op.n_x; ix += op.eval_stride)
        for (int iy = 0; iy < op.n_y; iy += op.eval_stride)
            op.eval_pixels.push_back(ix * op.n_y + iy);
    if (op.eval_pixels.size() != n_eval)
        throw IoError("load_field_operator: inconsistent evaluation-point count");
    op.a.resize(n_eval * static_cast<std::uint64_t>(op.n_x) * static_cast<std::uint64_t>(op.n_y));
    r.read_f64_array(reinterpret_cast<double*>(op.a.data()), op.a.size() * 2);
    if (physics_out) *physics_out = header.at("physics");
    return op;
}

/// Canonical hash key for the operator cache.
inline std::string field_operator_key(const WaveguideModel& model, const SearchGrid& grid,
                                      double omega, int eval_stride, double self_offset,
                                      int n_modes) {
    json j;
    j["model"] = model;
    j["grid"] = grid;
    j["omega"] = omega;
    j["eval_stride"] = eval_stride;
    j["self_offset"] = self_offset;
    j["n_modes"] = n_modes;
    return hash_hex(fnv1a64(j.dump()));
}

/// Disk-cached operator build: cache_dir/wgop_<hash>.bin. The stored physics
/// header is compared on load as a collision guard.
inline FieldOperator load_or_build_field_operator(const std::filesystem::path& cache_dir,
                                                  const WaveguideModel& model,
                                                  const ModalBasis& basis, const SearchGrid& grid,
                                                  double omega, int eval_stride,
                                                  double self_offset = 0.0) {
    double so = self_offset;
    if (so <= 0.0) {
        if (grid.h_x() > 0.0)
            so = 0.5 * grid.h_x();
        else
            throw ConfigError("load_or_build_field_operator: grid has no x extent; "
                              "pass an explicit self_offset");
    }
    json physics;
    physics["model"] = model;
    physics["grid"] = grid;
    physics["omega"] = omega;
    physics["eval_stride"] = eval_stride;
    physics["self_offset"] = so;
    physics["n_modes"] = basis.n_modes();
    const std::string key =
        field_operator_key(model, grid, omega, eval_stride, so, basis.n_modes());
    const std::filesystem::path path = cache_dir / ("wgop_" + key + ".bin");
    if (file_exists(path)) {
        json stored;
        FieldOperator op = load_field_operator(path.string(), &stored);
        if (stored != physics)
            throw IoError("operator cache collision: " + path.string());
        return op;
    }
    std::filesystem::create_directories(cache_dir);
    FieldOperator op = build_field_operator(model, basis, grid, omega, eval_stride, so);
    save_field_operator(path.string(), op, physics);
    return op;
}

} // namespace wgsr
