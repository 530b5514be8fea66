#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <vector>

#include "wgsr/errors.hpp"
#include "wgsr/physics.hpp"

namespace wgsr {

/// Rectangular search domain S = [x_min,x_max] x [y_min,y_max] discretized
/// into N_x x N_y pixel centers (nodes, endpoints included). Images over the
/// grid are stored row-major with x as the major index: idx = ix*n_y + iy.
struct SearchGrid {
    double x_min = 0.0, x_max = 0.0;
    double y_min = 0.0, y_max = 0.0;
    int n_x = 1, n_y = 1;

    double h_x() const { return n_x > 1 ? (x_max - x_min) / static_cast<double>(n_x - 1) : 0.0; }
    double h_y() const { return n_y > 1 ? (y_max - y_min) / static_cast<double>(n_y - 1) : 0.0; }

    double x_at(int ix) const { return x_min + h_x() * static_cast<double>(ix); }
    double y_at(int iy) const { return y_min + h_y() * static_cast<double>(iy); }

    int n_pixels() const { return n_x * n_y; }
    int index(int ix, int iy) const { return ix * n_y + iy; }
    std::pair<int, int> coords(int idx) const { return {idx / n_y, idx % n_y}; }
    Point point_at(int idx) const {
        auto [ix, iy] = coords(idx);
        return {x_at(ix), y_at(iy)};
    }

    void validate() const {
        if (n_x < 1 || n_y < 1) throw ConfigError("SearchGrid: pixel counts must be >= 1");
        if (n_x > 1 && !(x_max > x_min)) throw ConfigError("SearchGrid: x_max must exceed x_min");
        if (n_y > 1 && !(y_max > y_min)) throw ConfigError("SearchGrid: y_max must exceed y_min");
        if (y_min < 0.0) throw ConfigError("SearchGrid: y_min below the waveguide surface");
    }

    /// Nearest grid node; returns (ix, iy).
    std::pair<int, int> nearest_node(Point p) const {
        const double fx = h_x() > 0.0 ? (p.x - x_min) / h_x() : 0.0;
        const double fy = h_y() > 0.0 ? (p.y - y_min) / h_y() : 0.0;
        int ix = static_cast<int>(std::lround(fx));
        int iy = static_cast<int>(std::lround(fy));
        ix = std::clamp(ix, 0, n_x - 1);
        iy = std::clamp(iy, 0, n_y - 1);
        return {ix, iy};
    }
};

/// Complex Kirchhoff migration image; modulus is taken only at export time so
/// the image stays linear in the response.
struct KMImage {
    SearchGrid grid;
    std::vector<cplx> values; // row-major, ix*n_y + iy

    std::vector<double> modulus() const {
        std::vector<double> out(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out[i] = std::abs(values[i]);
        return out;
    }
};

/// Kirchhoff migration: I(y^s) = sum_omega sum_r conj(Pi(x_r; omega)) G(x_r, y^s; omega).
///
/// The double sum is evaluated per pixel in fixed (frequency, mode) order via
/// per-frequency mode tables; results match the literal pixel-by-pixel double
/// loop to working precision and are independent of any evaluation order.
inline KMImage km_image(const ResponseTensor& response, const WaveguideModel& model,
                        const FrequencyGrid& grid_f, const ArrayGeometry& array,
                        const SearchGrid& grid, int n_modes_override = 0) {
    grid.validate();
    if (response.n_receivers != array.n_receivers() || response.n_freq != grid_f.n_freq)
        throw ConfigError("km_image: response dimensions do not match array/frequency grid");
    if (grid.y_max > model.depth)
        throw ConfigError("km_image: search grid extends below the waveguide bottom");

    double dx_min = std::numeric_limits<double>::infinity();
    for (int ix = 0; ix < grid.n_x; ++ix)
        dx_min = std::min(dx_min, std::abs(grid.x_at(ix) - array.x_position));
    if (dx_min < kMinHorizontalOffset)
        throw NumericError("km_image: search grid touches the array range");

    KMImage img;
    img.grid = grid;
    img.values.assign(static_cast<std::size_t>(grid.n_pixels()), cplx(0.0, 0.0));

    const int n_r = array.n_receivers();
    for (int j = 0; j < grid_f.n_freq; ++j) {
        const double k = model.wavenumber(grid_f.omega(j));
        const ModalBasis basis =
            n_modes_override > 0 ? ModalBasis(model.depth, k, n_modes_override)
                                 : ModalBasis::with_default_truncation(model.depth, k, dx_min);
        const int n_modes = basis.n_modes();
        const double pref = std::sqrt(2.0 / model.depth);

        // T[n] = sum_r conj(Pi(r, j)) sin(sqrt(mu_n) y_r)
        std::vector<cplx> t(static_cast<std::size_t>(n_modes));
        for (int n = 0; n < n_modes; ++n) {
            const double root_mu = std::sqrt(basis.mu[static_cast<std::size_t>(n)]);
            cplx acc(0.0, 0.0);
            for (int r = 0; r < n_r; ++r)
                acc += std::conj(response.at(r, j)) *
                       std::sin(root_mu * array.receiver_y[static_cast<std::size_t>(r)]);
            t[static_cast<std::size_t>(n)] = acc;
        }

        // E[n][ix] = pref * e^{i beta_n |x_ix - x_a|} / beta_n
        std::vector<cplx> e(static_cast<std::size_t>(n_modes) * static_cast<std::size_t>(grid.n_x));
        for (int n = 0; n < n_modes; ++n) {
            const cplx beta = basis.beta[static_cast<std::size_t>(n)];
            for (int ix = 0; ix < grid.n_x; ++ix) {
                const double dx = std::abs(grid.x_at(ix) - array.x_position);
                e[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_x) +
                  static_cast<std::size_t>(ix)] = pref * std::exp(cplx(0.0, 1.0) * beta * dx) / beta;
            }
        }

        std::vector<double> sin_y(static_cast<std::size_t>(n_modes) * static_cast<std::size_t>(grid.n_y));
        for (int n = 0; n < n_modes; ++n) {
            const double root_mu = std::sqrt(basis.mu[static_cast<std::size_t>(n)]);
            for (int iy = 0; iy < grid.n_y; ++iy)
                sin_y[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_y) +
                      static_cast<std::size_t>(iy)] = std::sin(root_mu * grid.y_at(iy));
        }

        for (int ix = 0; ix < grid.n_x; ++ix) {
            for (int iy = 0; iy < grid.n_y; ++iy) {
                cplx acc(0.0, 0.0);
                for (int n = 0; n < n_modes; ++n) {
                    acc += e[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_x) +
                             static_cast<std::size_t>(ix)] *
                           sin_y[static_cast<std::size_t>(n) * static_cast<std::size_t>(grid.n_y) +
                                 static_cast<std::size_t>(iy)] *
                           t[static_cast<std::size_t>(n)];
                }
                img.values[static_cast<std::size_t>(grid.index(ix, iy))] += acc;
            }
        }
    }
    return img;
}

/// Index of the pixel with maximal |value|; ties go to the lowest row-major index.
inline int argmax_pixel(const KMImage& img) {
    if (img.values.empty()) throw ConfigError("argmax_pixel: empty image");
    int best = 0;
    double best_mag = std::abs(img.values[0]);
    for (std::size_t i = 1; i < img.values.size(); ++i) {
        const double m = std::abs(img.values[i]);
        if (m > best_mag) {
            best_mag = m;
            best = static_cast<int>(i);
        }
    }
    return best;
}

} // namespace wgsr
