// Imaging module tests: search-grid geometry and Kirchhoff migration against
// a literal double-loop oracle.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "wgsr/imaging.hpp"
#include "wgsr/rng.hpp"

using namespace wgsr;

namespace {
const WaveguideModel kModel{1500.0, 200.0};
const double kFc = 32.0625;

/// Literal per-pixel double loop over frequencies and receivers. Quadratic
/// cost; only usable on tiny grids.
KMImage km_oracle(const ResponseTensor& response, const WaveguideModel& model,
                  const FrequencyGrid& grid_f, const ArrayGeometry& array,
                  const SearchGrid& grid, int n_modes) {
    KMImage img;
    img.grid = grid;
    img.values.assign(static_cast<std::size_t>(grid.n_pixels()), cplx(0.0, 0.0));
    for (int j = 0; j < grid_f.n_freq; ++j) {
        const double k = model.wavenumber(grid_f.omega(j));
        const ModalBasis basis(model.depth, k, n_modes);
        for (int idx = 0; idx < grid.n_pixels(); ++idx) {
            const Point px = grid.point_at(idx);
            cplx acc(0.0, 0.0);
            for (int r = 0; r < array.n_receivers(); ++r) {
                const Point recv{array.x_position, array.receiver_y[static_cast<std::size_t>(r)]};
                acc += std::conj(response.at(r, j)) * greens_function(model, basis, recv, px);
            }
            img.values[static_cast<std::size_t>(idx)] += acc;
        }
    }
    return img;
}
} // namespace

TEST_CASE("search grid geometry") {
    SearchGrid g{490.0, 570.0, 0.0, 200.0, 71, 51};
    CHECK_NOTHROW(g.validate());
    CHECK(g.h_x() == Catch::Approx(80.0 / 70.0).epsilon(1e-15));
    CHECK(g.h_y() == Catch::Approx(4.0).epsilon(1e-15));
    CHECK(g.n_pixels() == 71 * 51);
    CHECK(g.x_at(0) == 490.0);
    CHECK(g.x_at(70) == Catch::Approx(570.0).epsilon(1e-13));
    CHECK(g.y_at(50) == Catch::Approx(200.0).epsilon(1e-13));

    CHECK(g.index(0, 0) == 0);
    CHECK(g.index(1, 0) == 51);
    CHECK(g.index(2, 3) == 2 * 51 + 3);
    for (int idx : {0, 1, 50, 51, 1033, 71 * 51 - 1}) {
        const auto [ix, iy] = g.coords(idx);
        CHECK(g.index(ix, iy) == idx);
    }

    // nearest_node recovers every node from its own coordinates
    for (int ix = 0; ix < g.n_x; ix += 7) {
        for (int iy = 0; iy < g.n_y; iy += 5) {
            const Point p{g.x_at(ix), g.y_at(iy)};
            const auto [jx, jy] = g.nearest_node(p);
            CHECK(jx == ix);
            CHECK(jy == iy);
        }
    }
    // off-grid points clamp
    CHECK(g.nearest_node(Point{0.0, -50.0}) == std::pair<int, int>{0, 0});
    CHECK(g.nearest_node(Point{1e5, 1e5}) == std::pair<int, int>{70, 50});
}

TEST_CASE("search grid validation") {
    CHECK_THROWS_AS((SearchGrid{490.0, 570.0, 0.0, 200.0, 0, 51}.validate()), ConfigError);
    CHECK_THROWS_AS((SearchGrid{570.0, 490.0, 0.0, 200.0, 71, 51}.validate()), ConfigError);
    CHECK_THROWS_AS((SearchGrid{490.0, 570.0, 200.0, 0.0, 71, 51}.validate()), ConfigError);
    CHECK_THROWS_AS((SearchGrid{490.0, 570.0, -5.0, 200.0, 71, 51}.validate()), ConfigError);
    CHECK_NOTHROW((SearchGrid{490.0, 490.0, 0.0, 200.0, 1, 51}.validate()));
}

TEST_CASE("km_image matches the literal double loop") {
    const FrequencyGrid grid_f{kFc, 0.4 * kFc, 4};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 6, 36.0, 5.0);
    const SearchGrid grid{500.0, 530.0, 40.0, 160.0, 7, 6};
    const SourceConfig cfg{{Point{505.0, 60.0}, Point{525.0, 130.0}}};
    const int n_modes = 12;

    const ResponseTensor resp = synthesize_response(kModel, grid_f, array, cfg, n_modes);
    const KMImage fast = km_image(resp, kModel, grid_f, array, grid, n_modes);
    const KMImage slow = km_oracle(resp, kModel, grid_f, array, grid, n_modes);

    REQUIRE(fast.values.size() == slow.values.size());
    double max_ref = 0.0;
    for (const cplx& v : slow.values) max_ref = std::max(max_ref, std::abs(v));
    REQUIRE(max_ref > 0.0);
    for (std::size_t i = 0; i < fast.values.size(); ++i)
        CHECK(std::abs(fast.values[i] - slow.values[i]) <= 1e-12 * max_ref);
}

TEST_CASE("km_image input validation") {
    const FrequencyGrid grid_f{kFc, 0.4 * kFc, 3};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 4, 50.0, 10.0);
    const SearchGrid grid{500.0, 530.0, 40.0, 160.0, 5, 4};
    ResponseTensor wrong(3, 3);
    CHECK_THROWS_AS(km_image(wrong, kModel, grid_f, array, grid), ConfigError);
    ResponseTensor ok(4, 3);
    SearchGrid too_deep{500.0, 530.0, 40.0, 260.0, 5, 4};
    CHECK_THROWS_AS(km_image(ok, kModel, grid_f, array, too_deep), ConfigError);
    SearchGrid touching{0.0, 30.0, 40.0, 160.0, 5, 4};
    CHECK_THROWS_AS(km_image(ok, kModel, grid_f, array, touching), NumericError);
}

TEST_CASE("km_image of zero response is zero") {
    const FrequencyGrid grid_f{kFc, 0.4 * kFc, 3};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 4, 50.0, 10.0);
    const SearchGrid grid{500.0, 530.0, 40.0, 160.0, 5, 4};
    const ResponseTensor zero(4, 3);
    const KMImage img = km_image(zero, kModel, grid_f, array, grid);
    for (const cplx& v : img.values) CHECK(v == cplx(0.0, 0.0));
}

TEST_CASE("argmax_pixel and tie-breaking") {
    KMImage img;
    img.grid = SearchGrid{0.0, 1.0, 0.0, 1.0, 2, 3};
    img.values = {cplx(1.0, 0.0), cplx(0.0, -2.0), cplx(2.0, 0.0),
                  cplx(0.0, 2.0), cplx(-1.0, 0.0), cplx(1.0, 1.0)};
    // |values| = 1, 2, 2, 2, 1, sqrt(2): first maximal is index 1
    CHECK(argmax_pixel(img) == 1);
    KMImage empty;
    CHECK_THROWS_AS(argmax_pixel(empty), ConfigError);
}

TEST_CASE("single on-grid source peaks at the true pixel") {
    // Full default configuration: 81 receivers, 33 frequencies, 71x51 grid.
    const FrequencyGrid grid_f{kFc, 0.4 * kFc, 33};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 81, 2.5, 0.0);
    const SearchGrid grid{490.0, 570.0, 0.0, 200.0, 71, 51};
    const int ix = 26, iy = 24;
    const Point src{grid.x_at(ix), grid.y_at(iy)};
    const ResponseTensor resp =
        synthesize_response(kModel, grid_f, array, SourceConfig{{src}});
    const KMImage img = km_image(resp, kModel, grid_f, array, grid);
    const auto [px, py] = grid.coords(argmax_pixel(img));
    CHECK(px == ix);
    CHECK(py == iy);
}
