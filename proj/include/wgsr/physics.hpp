#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "wgsr/errors.hpp"

namespace wgsr {

using cplx = std::complex<double>;

struct Point {
    double x = 0.0; ///< range coordinate (m)
    double y = 0.0; ///< depth coordinate (m)
};

/// Homogeneous 2D waveguide of depth D with sound-soft (Dirichlet) top and
/// bottom boundaries and constant wave speed c0. Wave propagation is handled
/// entirely through the analytic modal Green's function below; there is no
/// PDE solver in this toolkit.
struct WaveguideModel {
    double c0 = 1500.0; ///< wave speed (m/s)
    double depth = 200.0; ///< D (m)

    void validate() const {
        if (!(c0 > 0.0)) throw ConfigError("WaveguideModel: c0 must be > 0");
        if (!(depth > 0.0)) throw ConfigError("WaveguideModel: depth must be > 0");
    }

    double wavenumber(double omega) const { return omega / c0; }
};

/// N_f frequencies uniform on [f_c - B/2, f_c + B/2]; N_f = 1 collapses to f_c.
struct FrequencyGrid {
    double f_center = 0.0;  ///< f_c (Hz)
    double bandwidth = 0.0; ///< B (Hz)
    int n_freq = 1;

    double frequency(int j) const {
        if (n_freq == 1) return f_center;
        return f_center - 0.5 * bandwidth +
               bandwidth * static_cast<double>(j) / static_cast<double>(n_freq - 1);
    }
    double omega(int j) const { return 2.0 * M_PI * frequency(j); }

    std::vector<double> frequencies() const {
        std::vector<double> out(static_cast<std::size_t>(n_freq));
        for (int j = 0; j < n_freq; ++j) out[static_cast<std::size_t>(j)] = frequency(j);
        return out;
    }

    void validate() const {
        if (n_freq < 1) throw ConfigError("FrequencyGrid: n_freq must be >= 1");
        if (!(f_center > 0.0)) throw ConfigError("FrequencyGrid: f_center must be > 0");
        if (bandwidth < 0.0) throw ConfigError("FrequencyGrid: bandwidth must be >= 0");
        if (n_freq > 1 && !(bandwidth > 0.0))
            throw ConfigError("FrequencyGrid: n_freq > 1 requires bandwidth > 0 "
                              "(frequencies must be strictly increasing)");
        if (f_center - 0.5 * bandwidth <= 0.0)
            throw ConfigError("FrequencyGrid: band extends to non-positive frequency");
    }
};

/// Vertical Dirichlet eigenvalues mu_n = n^2 pi^2 / D^2 for n = 1..n_modes.
inline std::vector<double> vertical_modes(double depth, int n_modes) {
    if (!(depth > 0.0)) throw ConfigError("vertical_modes: depth must be > 0");
    if (n_modes < 1) throw ConfigError("vertical_modes: n_modes must be >= 1");
    std::vector<double> mu(static_cast<std::size_t>(n_modes));
    const double base = M_PI / depth;
    for (int n = 1; n <= n_modes; ++n) {
        const double s = static_cast<double>(n) * base;
        mu[static_cast<std::size_t>(n - 1)] = s * s;
    }
    return mu;
}

/// Tolerance below which |k^2 - mu_n| counts as a cut-on degeneracy. A mode
/// exactly at cut-on has beta_n = 0 and the modal sum divides by it.
inline constexpr double kCutOnTolerance = 1e-12;

/// Horizontal wavenumbers: beta_n = sqrt(k^2 - mu_n) for the M propagating
/// modes (mu_n < k^2), and i*sqrt(mu_n - k^2) for the evanescent rest.
/// Returns the betas and M.
inline std::pair<std::vector<cplx>, int> horizontal_wavenumbers(
    const std::vector<double>& mu, double k) {
    if (!(k > 0.0)) throw ConfigError("horizontal_wavenumbers: k must be > 0");
    const double k2 = k * k;
    std::vector<cplx> beta(mu.size());
    int n_prop = 0;
    for (std::size_t i = 0; i < mu.size(); ++i) {
        const double d = k2 - mu[i];
        if (std::abs(d) < kCutOnTolerance)
            throw NumericError("cut-on degeneracy: |k^2 - mu_" + std::to_string(i + 1) +
                               "| < tolerance");
        if (d > 0.0) {
            beta[i] = cplx(std::sqrt(d), 0.0);
            n_prop = static_cast<int>(i) + 1;
        } else {
            beta[i] = cplx(0.0, std::sqrt(-d));
        }
    }
    return {std::move(beta), n_prop};
}

/// Number of propagating modes at wavenumber k (depth D).
inline int count_propagating_modes(double depth, double k) {
    const double mu1 = (M_PI / depth) * (M_PI / depth);
    const double r = k * k / mu1;
    if (r <= 1.0) return 0;
    return static_cast<int>(std::floor(std::sqrt(r) - 1e-15));
}

/// Default truncation: M propagating modes plus enough evanescent ones that
/// the first truncated term carries a factor below e^-40 at the smallest
/// horizontal offset dx_min the basis will be evaluated at.
inline int default_num_modes(double depth, double k, double dx_min, double decay_target = 40.0) {
    if (!(dx_min > 0.0)) throw ConfigError("default_num_modes: dx_min must be > 0");
    const int m = count_propagating_modes(depth, k);
    const double mu1 = (M_PI / depth) * (M_PI / depth);
    const double mu_next = static_cast<double>(m + 1) * static_cast<double>(m + 1) * mu1;
    const double im_beta = std::sqrt(mu_next - k * k);
    if (!(im_beta > 0.0))
        throw NumericError("default_num_modes: first evanescent mode is at cut-on");
    return m + static_cast<int>(std::ceil(decay_target / (im_beta * dx_min)));
}

/// Modal basis at one wavenumber: eigenvalues mu_n, horizontal wavenumbers
/// beta_n, and the propagating count M. The Dirichlet eigenfunctions
/// sqrt(2/D) sin(sqrt(mu_n) y) are implicit in greens_function.
struct ModalBasis {
    double depth = 0.0;
    double k = 0.0;
    std::vector<double> mu;
    std::vector<cplx> beta;
    int n_propagating = 0;

    ModalBasis() = default;

    ModalBasis(double depth_, double k_, int n_modes) : depth(depth_), k(k_) {
        mu = vertical_modes(depth_, n_modes);
        auto [b, m] = horizontal_wavenumbers(mu, k_);
        beta = std::move(b);
        n_propagating = m;
        if (n_propagating < 1)
            throw NumericError("ModalBasis: no propagating mode at k=" + std::to_string(k_));
        if (static_cast<int>(mu.size()) < n_propagating)
            throw ConfigError("ModalBasis: truncation below propagating count");
    }

    /// Basis with the default truncation for evaluations at offsets >= dx_min.
    static ModalBasis with_default_truncation(double depth_, double k_, double dx_min) {
        return ModalBasis(depth_, k_, default_num_modes(depth_, k_, dx_min));
    }

    int n_modes() const { return static_cast<int>(mu.size()); }
};

/// Evaluations closer than this horizontal offset are rejected: the modal
/// series diverges logarithmically at the source point.
inline constexpr double kMinHorizontalOffset = 1e-9;

/// Modal Green's function of the Dirichlet waveguide,
///   G(x, x_s) = sqrt(2/D) sum_n (1/beta_n) e^{i beta_n |x - x_s|}
///               sin(sqrt(mu_n) y) sin(sqrt(mu_n) y_s),
/// truncated at the basis length.
inline cplx greens_function(const WaveguideModel& model, const ModalBasis& basis,
                            Point x, Point x_s) {
    const double dx = std::abs(x.x - x_s.x);
    if (dx < kMinHorizontalOffset)
        throw NumericError("singular evaluation: horizontal offset " + std::to_string(dx) +
                           " below minimum " + std::to_string(kMinHorizontalOffset));
    const double d = model.depth;
    const std::size_t n_modes = basis.mu.size();
    cplx acc(0.0, 0.0);
    for (std::size_t i = 0; i < n_modes; ++i) {
        const double root_mu = std::sqrt(basis.mu[i]);
        const cplx phase = std::exp(cplx(0.0, 1.0) * basis.beta[i] * dx);
        acc += phase / basis.beta[i] * (std::sin(root_mu * x.y) * std::sin(root_mu * x_s.y));
    }
    return std::sqrt(2.0 / d) * acc;
}

/// Vertical receiver line at range x_position; receiver_y holds the N_r
/// depths (uniform spacing).
struct ArrayGeometry {
    double x_position = 0.0;
    std::vector<double> receiver_y;

    static ArrayGeometry uniform(double x_position, int n_receivers, double spacing,
                                 double y0 = 0.0) {
        if (n_receivers < 1) throw ConfigError("ArrayGeometry: n_receivers must be >= 1");
        ArrayGeometry a;
        a.x_position = x_position;
        a.receiver_y.resize(static_cast<std::size_t>(n_receivers));
        for (int r = 0; r < n_receivers; ++r)
            a.receiver_y[static_cast<std::size_t>(r)] = y0 + spacing * static_cast<double>(r);
        return a;
    }

    int n_receivers() const { return static_cast<int>(receiver_y.size()); }

    void validate(double depth) const {
        if (receiver_y.empty()) throw ConfigError("ArrayGeometry: needs at least one receiver");
        for (double y : receiver_y)
            if (y < 0.0 || y > depth)
                throw ConfigError("ArrayGeometry: receiver depth outside [0, D]");
    }
};

/// N_s point source positions for one scenario.
struct SourceConfig {
    std::vector<Point> sources;

    int n_sources() const { return static_cast<int>(sources.size()); }

    void validate(double depth) const {
        if (sources.empty()) throw ConfigError("SourceConfig: needs at least one source");
        for (const Point& s : sources)
            if (!(s.y > 0.0) || !(s.y < depth))
                throw ConfigError("SourceConfig: source depth must lie strictly inside (0, D)");
    }
};

/// Complex receiver x frequency measurements for one source configuration;
/// entry (r, j) is receiver r at frequency j, stored receiver-major.
struct ResponseTensor {
    int n_receivers = 0;
    int n_freq = 0;
    std::vector<cplx> data;

    ResponseTensor() = default;
    ResponseTensor(int n_r, int n_f)
        : n_receivers(n_r), n_freq(n_f),
          data(static_cast<std::size_t>(n_r) * static_cast<std::size_t>(n_f)) {}

    cplx& at(int r, int j) {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(n_freq) +
                    static_cast<std::size_t>(j)];
    }
    const cplx& at(int r, int j) const {
        return data[static_cast<std::size_t>(r) * static_cast<std::size_t>(n_freq) +
                    static_cast<std::size_t>(j)];
    }
};

/// Array response: entry (r, j) = sum_i G(x_r, x_i; omega_j). The modal basis
/// is rebuilt per frequency with the default truncation at the smallest
/// source-array offset; pass n_modes_override to pin the truncation.
inline ResponseTensor synthesize_response(const WaveguideModel& model,
                                          const FrequencyGrid& grid,
                                          const ArrayGeometry& array,
                                          const SourceConfig& cfg,
                                          int n_modes_override = 0) {
    grid.validate();
    array.validate(model.depth);
    ResponseTensor out(array.n_receivers(), grid.n_freq);
    if (cfg.sources.empty()) return out;
    cfg.validate(model.depth);

    double dx_min = std::numeric_limits<double>::infinity();
    for (const Point& s : cfg.sources) dx_min = std::min(dx_min, std::abs(s.x - array.x_position));
    if (dx_min < kMinHorizontalOffset)
        throw NumericError("synthesize_response: source at singular offset from the array");

    for (int j = 0; j < grid.n_freq; ++j) {
        const double k = model.wavenumber(grid.omega(j));
        const ModalBasis basis =
            n_modes_override > 0 ? ModalBasis(model.depth, k, n_modes_override)
                                 : ModalBasis::with_default_truncation(model.depth, k, dx_min);
        for (int r = 0; r < array.n_receivers(); ++r) {
            const Point recv{array.x_position, array.receiver_y[static_cast<std::size_t>(r)]};
            cplx acc(0.0, 0.0);
            for (std::size_t i = 0; i < cfg.sources.size(); ++i) {
                try {
                    acc += greens_function(model, basis, recv, cfg.sources[i]);
                } catch (const NumericError& e) {
                    throw NumericError("synthesize_response: source " + std::to_string(i) +
                                       ": " + e.what());
                }
            }
            out.at(r, j) = acc;
        }
    }
    return out;
}

} // namespace wgsr
