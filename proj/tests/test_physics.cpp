// Physics module tests. Numeric oracle values were frozen from an
// independent high-precision computation of the modal formulas.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "wgsr/physics.hpp"
#include "wgsr/rng.hpp"

using namespace wgsr;

namespace {
const WaveguideModel kModel{1500.0, 200.0};
const double kFc = 32.0625;                       // center frequency (Hz)
const double kKc = 0.13430308594096366;           // 2 pi f_c / c0, frozen
const double kMu1 = 2.4674011002723397e-4;        // pi^2 / D^2, frozen
const double kBeta1 = 0.13338132846556386;        // sqrt(k_c^2 - mu_1), frozen
const double kImBeta9 = 0.044143289625265564;     // first evanescent decay, frozen

double kc() { return kModel.wavenumber(2.0 * M_PI * kFc); }
} // namespace

TEST_CASE("model validation") {
    CHECK_NOTHROW(kModel.validate());
    CHECK_THROWS_AS((WaveguideModel{0.0, 200.0}.validate()), ConfigError);
    CHECK_THROWS_AS((WaveguideModel{1500.0, -1.0}.validate()), ConfigError);
    CHECK(kc() == Catch::Approx(kKc).epsilon(1e-15));
}

TEST_CASE("frequency grid endpoints, center, validation") {
    FrequencyGrid g{kFc, 0.4 * kFc, 33};
    CHECK_NOTHROW(g.validate());
    CHECK(g.frequency(0) == Catch::Approx(25.65).epsilon(1e-14));
    CHECK(g.frequency(32) == Catch::Approx(38.475).epsilon(1e-14));
    CHECK(g.frequency(16) == Catch::Approx(kFc).epsilon(1e-14));
    const auto fs = g.frequencies();
    REQUIRE(fs.size() == 33);
    for (std::size_t j = 1; j < fs.size(); ++j) CHECK(fs[j] > fs[j - 1]);
    CHECK(g.omega(16) == Catch::Approx(2.0 * M_PI * g.frequency(16)));

    FrequencyGrid single{kFc, 0.0, 1};
    CHECK_NOTHROW(single.validate());
    CHECK(single.frequency(0) == kFc);

    CHECK_THROWS_AS((FrequencyGrid{kFc, 0.0, 2}.validate()), ConfigError);
    CHECK_THROWS_AS((FrequencyGrid{kFc, -1.0, 5}.validate()), ConfigError);
    CHECK_THROWS_AS((FrequencyGrid{kFc, 3.0 * kFc, 5}.validate()), ConfigError);
    CHECK_THROWS_AS((FrequencyGrid{0.0, 0.0, 1}.validate()), ConfigError);
}

TEST_CASE("vertical eigenvalues") {
    const auto mu = vertical_modes(200.0, 10);
    REQUIRE(mu.size() == 10);
    CHECK(mu[0] == Catch::Approx(kMu1).epsilon(1e-15));
    for (int n = 1; n <= 10; ++n)
        CHECK(mu[static_cast<std::size_t>(n - 1)] ==
              Catch::Approx(static_cast<double>(n) * static_cast<double>(n) * kMu1)
                  .epsilon(1e-13));
    CHECK_THROWS_AS(vertical_modes(-1.0, 3), ConfigError);
    CHECK_THROWS_AS(vertical_modes(200.0, 0), ConfigError);
}

TEST_CASE("horizontal wavenumbers: propagating count and values") {
    const auto mu = vertical_modes(200.0, 20);
    const auto [beta, m] = horizontal_wavenumbers(mu, kc());
    CHECK(m == 8); // frozen: 8 modes propagate at f_c in the default model
    CHECK(beta[0].real() == Catch::Approx(kBeta1).epsilon(1e-15));
    CHECK(beta[0].imag() == 0.0);
    for (int i = 0; i < 8; ++i) {
        CHECK(beta[static_cast<std::size_t>(i)].imag() == 0.0);
        CHECK(beta[static_cast<std::size_t>(i)].real() > 0.0);
    }
    for (int i = 8; i < 20; ++i) {
        CHECK(beta[static_cast<std::size_t>(i)].real() == 0.0);
        CHECK(beta[static_cast<std::size_t>(i)].imag() > 0.0);
    }
    CHECK(beta[8].imag() == Catch::Approx(kImBeta9).epsilon(1e-15));
    // betas decrease (propagating) / decays increase (evanescent) with n
    for (int i = 1; i < 8; ++i)
        CHECK(beta[static_cast<std::size_t>(i)].real() < beta[static_cast<std::size_t>(i - 1)].real());
    for (int i = 9; i < 20; ++i)
        CHECK(beta[static_cast<std::size_t>(i)].imag() > beta[static_cast<std::size_t>(i - 1)].imag());

    CHECK(count_propagating_modes(200.0, kc()) == 8);

    // cut-on degeneracy: k exactly at the 5th eigenvalue
    const double k_deg = std::sqrt(mu[4]);
    CHECK_THROWS_AS(horizontal_wavenumbers(mu, k_deg), NumericError);
    CHECK_THROWS_AS(horizontal_wavenumbers(mu, -1.0), ConfigError);
}

TEST_CASE("count_propagating_modes agrees with explicit betas") {
    const auto mu = vertical_modes(200.0, 64);
    Rng rng(404);
    for (int trial = 0; trial < 50; ++trial) {
        const double k = rng.uniform(0.01, 0.9);
        try {
            const auto [beta, m] = horizontal_wavenumbers(mu, k);
            CHECK(count_propagating_modes(200.0, k) == m);
        } catch (const NumericError&) {
            // random k landed on a cut-on; skip
        }
    }
    CHECK(count_propagating_modes(200.0, 1e-6) == 0);
}

TEST_CASE("default truncation depth") {
    // At the default offsets: dx >= 490 m needs M + 2 modes, dx >= 10 m needs M + 91.
    CHECK(default_num_modes(200.0, kc(), 490.0) == 10);
    CHECK(default_num_modes(200.0, kc(), 10.0) == 99);
    // monotone: closer evaluations need more modes
    int prev = 0;
    for (double dx : {490.0, 100.0, 50.0, 10.0, 2.0}) {
        const int n = default_num_modes(200.0, kc(), dx);
        CHECK(n >= prev);
        prev = n;
    }
    CHECK_THROWS_AS(default_num_modes(200.0, kc(), 0.0), ConfigError);

    const ModalBasis basis = ModalBasis::with_default_truncation(200.0, kc(), 490.0);
    CHECK(basis.n_modes() == 10);
    CHECK(basis.n_propagating == 8);
}

TEST_CASE("ModalBasis rejects configurations without propagating modes") {
    // k below the first cut-on: no propagating mode
    CHECK_THROWS_AS(ModalBasis(200.0, 1e-4, 5), NumericError);
}

TEST_CASE("greens_function: known single-mode value") {
    // Frozen from independent evaluation of the n=1 term:
    // D=200, k=k_c, dx=100, y=50, y_s=120.
    const ModalBasis basis(200.0, kc(), 1);
    const cplx g = greens_function(kModel, basis, Point{100.0, 50.0}, Point{0.0, 120.0});
    CHECK(g.real() == Catch::Approx(0.36134601785041909).epsilon(1e-14));
    CHECK(g.imag() == Catch::Approx(0.35162341313163953).epsilon(1e-14));
}

TEST_CASE("greens_function: Dirichlet boundary values vanish") {
    const ModalBasis basis = ModalBasis::with_default_truncation(200.0, kc(), 10.0);
    double worst = 0.0;
    for (double dx : {10.0, 57.0, 313.0}) {
        for (double ys : {23.0, 100.0, 171.5}) {
            for (double y : {0.0, 200.0}) {
                const cplx g = greens_function(kModel, basis, Point{dx, y}, Point{0.0, ys});
                worst = std::max(worst, std::abs(g));
                // and with source on the boundary instead
                const cplx g2 = greens_function(kModel, basis, Point{dx, ys}, Point{0.0, y});
                worst = std::max(worst, std::abs(g2));
            }
        }
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("greens_function: reciprocity") {
    const ModalBasis basis = ModalBasis::with_default_truncation(200.0, kc(), 10.0);
    Rng rng(7);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const Point a{rng.uniform(0.0, 600.0), rng.uniform(0.0, 200.0)};
        Point b{rng.uniform(0.0, 600.0), rng.uniform(0.0, 200.0)};
        if (std::abs(a.x - b.x) < 10.0) b.x = a.x + 10.0 + (b.x - a.x);
        const cplx gab = greens_function(kModel, basis, a, b);
        const cplx gba = greens_function(kModel, basis, b, a);
        worst = std::max(worst, std::abs(gab - gba));
        // every term is symmetric in (a, b), so the sums match bitwise
        CHECK(gab == gba);
    }
    CHECK(worst == 0.0);
}

TEST_CASE("greens_function: truncation is converged at default depth") {
    Rng rng(99);
    for (double dx : {10.0, 50.0, 490.0}) {
        const int n_default = default_num_modes(200.0, kc(), dx);
        const ModalBasis b1(200.0, kc(), n_default);
        const ModalBasis b2(200.0, kc(), 2 * n_default);
        for (int trial = 0; trial < 5; ++trial) {
            const Point src{0.0, rng.uniform(1.0, 199.0)};
            const Point obs{dx, rng.uniform(1.0, 199.0)};
            const cplx g1 = greens_function(kModel, b1, obs, src);
            const cplx g2 = greens_function(kModel, b2, obs, src);
            if (std::abs(g1) > 1e-14)
                CHECK(std::abs(g1 - g2) / std::abs(g1) < 1e-6);
        }
    }
}

TEST_CASE("greens_function: singular evaluation rejected") {
    const ModalBasis basis(200.0, kc(), 10);
    CHECK_THROWS_AS(greens_function(kModel, basis, Point{5.0, 50.0}, Point{5.0, 80.0}),
                    NumericError);
    CHECK_THROWS_AS(
        greens_function(kModel, basis, Point{5.0, 50.0}, Point{5.0 + 1e-10, 80.0}),
        NumericError);
    CHECK_NOTHROW(greens_function(kModel, basis, Point{5.0, 50.0}, Point{5.0 + 1e-8, 80.0}));
}

TEST_CASE("array geometry") {
    const ArrayGeometry a = ArrayGeometry::uniform(0.0, 81, 2.5, 0.0);
    CHECK(a.n_receivers() == 81);
    CHECK(a.receiver_y.front() == 0.0);
    CHECK(a.receiver_y.back() == Catch::Approx(200.0).epsilon(1e-14));
    CHECK(a.receiver_y[1] - a.receiver_y[0] == Catch::Approx(2.5));
    CHECK_NOTHROW(a.validate(200.0));
    CHECK_THROWS_AS(a.validate(150.0), ConfigError);
    CHECK_THROWS_AS(ArrayGeometry::uniform(0.0, 0, 2.5), ConfigError);
    CHECK_THROWS_AS((ArrayGeometry{}.validate(200.0)), ConfigError);
}

TEST_CASE("source config validation") {
    SourceConfig ok{{Point{500.0, 50.0}}};
    CHECK_NOTHROW(ok.validate(200.0));
    SourceConfig at_surface{{Point{500.0, 0.0}}};
    CHECK_THROWS_AS(at_surface.validate(200.0), ConfigError);
    SourceConfig at_bottom{{Point{500.0, 200.0}}};
    CHECK_THROWS_AS(at_bottom.validate(200.0), ConfigError);
    CHECK_THROWS_AS((SourceConfig{}.validate(200.0)), ConfigError);
}

TEST_CASE("synthesize_response: shape and direct-sum agreement") {
    const FrequencyGrid grid{kFc, 0.4 * kFc, 5};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 7, 30.0, 5.0);
    const SourceConfig cfg{{Point{500.0, 60.0}, Point{530.0, 140.0}}};
    const ResponseTensor resp = synthesize_response(kModel, grid, array, cfg);
    REQUIRE(resp.n_receivers == 7);
    REQUIRE(resp.n_freq == 5);

    // check one entry against a direct modal evaluation
    const int j = 3, r = 2;
    const double k = kModel.wavenumber(grid.omega(j));
    const ModalBasis basis = ModalBasis::with_default_truncation(200.0, k, 500.0);
    const Point recv{0.0, array.receiver_y[2]};
    cplx expect = greens_function(kModel, basis, recv, cfg.sources[0]) +
                  greens_function(kModel, basis, recv, cfg.sources[1]);
    CHECK(std::abs(resp.at(r, j) - expect) < 1e-12 * std::abs(expect));
}

TEST_CASE("synthesize_response: superposition over sources") {
    const FrequencyGrid grid{kFc, 0.4 * kFc, 3};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 5, 40.0, 10.0);
    const SourceConfig all{{Point{495.0, 30.0}, Point{520.0, 110.0}, Point{560.0, 170.0}}};
    const int n_modes = 12; // pinned so every synthesis uses the same basis

    const ResponseTensor whole = synthesize_response(kModel, grid, array, all, n_modes);
    ResponseTensor folded(array.n_receivers(), grid.n_freq);
    for (const Point& s : all.sources) {
        const ResponseTensor part =
            synthesize_response(kModel, grid, array, SourceConfig{{s}}, n_modes);
        for (std::size_t i = 0; i < folded.data.size(); ++i) folded.data[i] += part.data[i];
    }
    // same addition order as the joint synthesis -> bitwise identical
    for (std::size_t i = 0; i < whole.data.size(); ++i) CHECK(whole.data[i] == folded.data[i]);
}

TEST_CASE("synthesize_response: two identical sources double the field exactly") {
    const FrequencyGrid grid{kFc, 0.4 * kFc, 3};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 4, 50.0, 20.0);
    const Point s{510.0, 77.0};
    const ResponseTensor one = synthesize_response(kModel, grid, array, SourceConfig{{s}});
    const ResponseTensor two = synthesize_response(kModel, grid, array, SourceConfig{{s, s}});
    for (std::size_t i = 0; i < one.data.size(); ++i)
        CHECK(two.data[i] == 2.0 * one.data[i]);
}

TEST_CASE("synthesize_response: empty and invalid configs") {
    const FrequencyGrid grid{kFc, 0.4 * kFc, 3};
    const ArrayGeometry array = ArrayGeometry::uniform(0.0, 4, 50.0, 20.0);
    const ResponseTensor zero = synthesize_response(kModel, grid, array, SourceConfig{});
    for (const cplx& v : zero.data) CHECK(v == cplx(0.0, 0.0));

    // source in the array plane -> singular offset, reported with source context
    SourceConfig singular{{Point{400.0, 50.0}, Point{0.0, 80.0}}};
    try {
        synthesize_response(kModel, grid, array, singular);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("singular") != std::string::npos);
    }

    SourceConfig boundary{{Point{500.0, 0.0}}};
    CHECK_THROWS_AS(synthesize_response(kModel, grid, array, boundary), ConfigError);
}
