// Dataset module tests: plateau labels, source sampling, noise models, and
// the binary dataset container.
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>
#include <unistd.h>

#include "wgsr/dataset.hpp"

namespace fs = std::filesystem;
using namespace wgsr;

namespace {
const WaveguideModel kModel{1500.0, 200.0};

SearchGrid small_grid() { return SearchGrid{500.0, 560.0, 0.0, 200.0, 7, 6}; }

DatasetMeta small_meta(std::uint64_t seed = 77) {
    DatasetMeta m;
    m.model = kModel;
    m.freq = FrequencyGrid{32.0625, 0.4 * 32.0625, 3};
    m.array = ArrayGeometry::uniform(0.0, 4, 50.0, 10.0);
    m.grid = small_grid();
    m.plateau = PlateauSpec{3};
    m.n_train = 3;
    m.n_val = 2;
    m.n_test = 2;
    m.n_src_min = 1;
    m.n_src_max = 3;
    m.seed = seed;
    return m;
}

fs::path temp_dir() {
    static int counter = 0;
    fs::path p = fs::temp_directory_path() /
                 ("wgsr_ds_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(p);
    return p;
}

bool same_response(const ResponseTensor& a, const ResponseTensor& b) {
    return a.n_receivers == b.n_receivers && a.n_freq == b.n_freq && a.data == b.data;
}
} // namespace

TEST_CASE("make_label: single interior source") {
    const SearchGrid g = small_grid();
    const Point s{g.x_at(3), g.y_at(2)};
    const LabelImage img = make_label(SourceConfig{{s}}, g, PlateauSpec{3});
    CHECK(img.ones() == 9);
    for (int u = 2; u <= 4; ++u)
        for (int v = 1; v <= 3; ++v) CHECK(img.at(u, v) == 1);
    CHECK(img.at(3, 2) == 1);
    CHECK(img.at(0, 0) == 0);
}

TEST_CASE("make_label: clipping at edges and corners") {
    const SearchGrid g = small_grid();
    const LabelImage corner =
        make_label(SourceConfig{{Point{g.x_at(0), g.y_at(0)}}}, g, PlateauSpec{3});
    CHECK(corner.ones() == 4); // 2x2 window survives the clip
    CHECK(corner.at(0, 0) == 1);
    CHECK(corner.at(1, 1) == 1);

    const LabelImage edge =
        make_label(SourceConfig{{Point{g.x_at(0), g.y_at(2)}}}, g, PlateauSpec{3});
    CHECK(edge.ones() == 6); // 2x3 window
}

TEST_CASE("make_label: overlapping plateaus merge") {
    const SearchGrid g = small_grid();
    const SourceConfig cfg{{Point{g.x_at(2), g.y_at(2)}, Point{g.x_at(3), g.y_at(2)}}};
    const LabelImage img = make_label(cfg, g, PlateauSpec{3});
    CHECK(img.ones() == 12); // union of two 3x3 windows one pixel apart
}

TEST_CASE("make_label: N_p = 1 marks only source pixels") {
    const SearchGrid g = small_grid();
    const SourceConfig cfg{{Point{g.x_at(5), g.y_at(4)}}};
    const LabelImage img = make_label(cfg, g, PlateauSpec{1});
    CHECK(img.ones() == 1);
    CHECK(img.at(5, 4) == 1);
}

TEST_CASE("source_node rejects off-node positions") {
    const SearchGrid g = small_grid();
    CHECK(source_node(g, Point{g.x_at(2), g.y_at(3)}) == std::pair<int, int>{2, 3});
    CHECK_THROWS_AS(source_node(g, Point{g.x_at(2) + 0.5, g.y_at(3)}), ConfigError);
    CHECK_THROWS_AS(
        make_label(SourceConfig{{Point{501.0, 3.0}}}, g, PlateauSpec{3}), ConfigError);
}

TEST_CASE("source_pixels maps to row-major indices") {
    const SearchGrid g = small_grid();
    const SourceConfig cfg{{Point{g.x_at(2), g.y_at(3)}, Point{g.x_at(0), g.y_at(0)}}};
    const auto px = source_pixels(cfg, g);
    REQUIRE(px.size() == 2);
    CHECK(px[0] == g.index(2, 3));
    CHECK(px[1] == 0);
}

TEST_CASE("sample_sources: counts, interiority, distinctness") {
    const SearchGrid g = small_grid();
    Rng rng(2024);
    bool saw_min = false, saw_max = false;
    for (int trial = 0; trial < 300; ++trial) {
        const SourceConfig cfg = sample_sources(rng, g, kModel.depth, 1, 3);
        REQUIRE(cfg.n_sources() >= 1);
        REQUIRE(cfg.n_sources() <= 3);
        saw_min = saw_min || cfg.n_sources() == 1;
        saw_max = saw_max || cfg.n_sources() == 3;
        std::set<std::pair<int, int>> nodes;
        for (const Point& s : cfg.sources) {
            REQUIRE(s.y > 0.0);
            REQUIRE(s.y < kModel.depth);
            const auto node = source_node(g, s); // throws if off-node
            CHECK(nodes.insert(node).second);    // distinct
        }
        CHECK_NOTHROW(cfg.validate(kModel.depth));
    }
    CHECK(saw_min);
    CHECK(saw_max);
}

TEST_CASE("sample_sources: deterministic given the stream state") {
    const SearchGrid g = small_grid();
    Rng a(5), b(5);
    for (int i = 0; i < 10; ++i) {
        const SourceConfig ca = sample_sources(a, g, kModel.depth, 1, 4);
        const SourceConfig cb = sample_sources(b, g, kModel.depth, 1, 4);
        REQUIRE(ca.n_sources() == cb.n_sources());
        for (int s = 0; s < ca.n_sources(); ++s) {
            CHECK(ca.sources[static_cast<std::size_t>(s)].x ==
                  cb.sources[static_cast<std::size_t>(s)].x);
            CHECK(ca.sources[static_cast<std::size_t>(s)].y ==
                  cb.sources[static_cast<std::size_t>(s)].y);
        }
    }
}

TEST_CASE("sample_sources: validation") {
    const SearchGrid g = small_grid(); // 7 columns x 4 interior rows = 28 nodes
    Rng rng(1);
    CHECK_THROWS_AS(sample_sources(rng, g, kModel.depth, 0, 2), ConfigError);
    CHECK_THROWS_AS(sample_sources(rng, g, kModel.depth, 3, 2), ConfigError);
    CHECK_THROWS_AS(sample_sources(rng, g, kModel.depth, 1, 29), ConfigError);
    CHECK_NOTHROW(sample_sources(rng, g, kModel.depth, 28, 28));
}

TEST_CASE("min_pairwise_distance") {
    CHECK(!min_pairwise_distance(SourceConfig{{Point{1.0, 2.0}}}).has_value());
    const SourceConfig cfg{{Point{0.0, 0.0}, Point{3.0, 4.0}, Point{0.0, 8.0}}};
    const auto d = min_pairwise_distance(cfg);
    REQUIRE(d.has_value());
    CHECK(*d == Catch::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("snr_db") {
    CHECK(snr_db(0.1) == Catch::Approx(10.0));
    CHECK(snr_db(1.0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(snr_db(10.0) == Catch::Approx(-10.0));
    CHECK_THROWS_AS(snr_db(0.0), ConfigError);
    CHECK_THROWS_AS(snr_db(-0.5), ConfigError);
}

TEST_CASE("uniform noise: exact copy at eps = 0, bounded multipliers otherwise") {
    ResponseTensor d(5, 3);
    Rng fill(11);
    for (cplx& v : d.data) v = cplx(fill.uniform(-2.0, 2.0), fill.uniform(-2.0, 2.0));

    Rng r0(42);
    const ResponseTensor same = add_uniform_noise(d, 0.0, r0);
    CHECK(same_response(same, d));
    CHECK(r0.next_u64() == Rng(42).next_u64()); // no draws consumed

    Rng r1(42);
    const double eps = 0.5;
    const ResponseTensor noisy = add_uniform_noise(d, eps, r1);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
        const double re = d.data[i].real(), im = d.data[i].imag();
        CHECK(std::abs(noisy.data[i].real() / re - 1.0) <= eps / 2.0 + 1e-12);
        CHECK(std::abs(noisy.data[i].imag() / im - 1.0) <= eps / 2.0 + 1e-12);
    }
}

TEST_CASE("uniform noise: multiplier moments") {
    ResponseTensor d(100, 100);
    for (cplx& v : d.data) v = cplx(1.0, 1.0);
    Rng rng(7);
    const double eps = 0.3;
    const ResponseTensor noisy = add_uniform_noise(d, eps, rng);
    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.data.size(); ++i) {
        for (double w : {noisy.data[i].real() - 1.0, noisy.data[i].imag() - 1.0}) {
            sum += w;
            sum2 += w * w;
            ++n;
        }
    }
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    CHECK(std::abs(mean) < 0.005);
    CHECK(var == Catch::Approx(eps * eps / 12.0).epsilon(0.05));
}

TEST_CASE("gaussian noise: per-column power scaling") {
    const int n_r = 4000;
    ResponseTensor d(n_r, 2);
    for (int r = 0; r < n_r; ++r) {
        d.at(r, 0) = cplx(1.0, 1.0); // p_avg = 2
        d.at(r, 1) = cplx(3.0, 0.0); // p_avg = 9
    }
    Rng r0(9);
    CHECK(same_response(add_gaussian_noise(d, 0.0, r0), d));

    Rng rng(9);
    const double eps = 0.04;
    const ResponseTensor noisy = add_gaussian_noise(d, eps, rng);
    for (int j = 0; j < 2; ++j) {
        const double p_avg = (j == 0) ? 2.0 : 9.0;
        double sum = 0.0, sum2 = 0.0;
        for (int r = 0; r < n_r; ++r) {
            const cplx delta = noisy.at(r, j) - d.at(r, j);
            for (double c : {delta.real(), delta.imag()}) {
                sum += c;
                sum2 += c * c;
            }
        }
        const double n = 2.0 * n_r;
        const double mean = sum / n;
        const double var = sum2 / n - mean * mean;
        CHECK(std::abs(mean) < 3.0 * std::sqrt(eps * p_avg / 2.0 / n) * 3.0);
        CHECK(var == Catch::Approx(eps * p_avg / 2.0).epsilon(0.10));
    }
}

TEST_CASE("apply_noise: dispatch and determinism") {
    ResponseTensor d(6, 4);
    Rng fill(3);
    for (cplx& v : d.data) v = cplx(fill.normal(), fill.normal());

    const NoiseSpec none{NoiseKind::none, 0.5, 1};
    CHECK(same_response(apply_noise(d, none), d));

    const NoiseSpec u{NoiseKind::uniform, 0.25, 99};
    const ResponseTensor a = apply_noise(d, u);
    const ResponseTensor b = apply_noise(d, u);
    CHECK(same_response(a, b));
    CHECK(!same_response(a, d));

    NoiseSpec u2 = u;
    u2.seed = 100;
    CHECK(!same_response(apply_noise(d, u2), a));

    const NoiseSpec g{NoiseKind::gaussian, 0.25, 99};
    const ResponseTensor ga = apply_noise(d, g);
    CHECK(same_response(ga, apply_noise(d, g)));
    CHECK(!same_response(ga, a));

    CHECK_THROWS_AS(apply_noise(d, NoiseSpec{NoiseKind::uniform, -1.0, 0}), ConfigError);
}

TEST_CASE("noise kind string round trip") {
    for (NoiseKind k : {NoiseKind::none, NoiseKind::uniform, NoiseKind::gaussian})
        CHECK(noise_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(noise_kind_from_string("pink"), ConfigError);
}

TEST_CASE("build_dataset: deterministic, self-consistent") {
    const DatasetMeta meta = small_meta();
    const Dataset a = build_dataset(meta);
    const Dataset b = build_dataset(meta);
    REQUIRE(a.samples.size() == 7);
    for (std::size_t q = 0; q < a.samples.size(); ++q) {
        CHECK(a.samples[q].id == static_cast<int>(q));
        CHECK(same_response(a.samples[q].response, b.samples[q].response));
        CHECK(a.samples[q].label.pixels == b.samples[q].label.pixels);
        // label consistent with sources
        const LabelImage expect = make_label(a.samples[q].sources, meta.grid, meta.plateau);
        CHECK(a.samples[q].label.pixels == expect.pixels);
        // response consistent with sources
        const ResponseTensor r =
            synthesize_response(meta.model, meta.freq, meta.array, a.samples[q].sources);
        CHECK(same_response(a.samples[q].response, r));
    }
    // a different seed changes the draw
    const Dataset c = build_dataset(small_meta(78));
    bool any_diff = false;
    for (std::size_t q = 0; q < a.samples.size(); ++q)
        any_diff = any_diff || !(a.samples[q].label.pixels == c.samples[q].label.pixels);
    CHECK(any_diff);
}

TEST_CASE("dataset split accessors") {
    const Dataset ds = build_dataset(small_meta());
    CHECK(ds.train(0).id == 0);
    CHECK(ds.val(0).id == 3);
    CHECK(ds.test(0).id == 5);
    CHECK(ds.test(1).id == 6);
}

TEST_CASE("dataset meta json round trip") {
    const DatasetMeta m = small_meta();
    json j = m;
    DatasetMeta back = j.get<DatasetMeta>();
    CHECK(back.model.depth == m.model.depth);
    CHECK(back.freq.n_freq == m.freq.n_freq);
    CHECK(back.array.receiver_y == m.array.receiver_y);
    CHECK(back.grid.n_x == m.grid.n_x);
    CHECK(back.plateau.n_p == m.plateau.n_p);
    CHECK(back.n_train == m.n_train);
    CHECK(back.seed == m.seed);
}

TEST_CASE("dataset container round trip is bitwise") {
    const fs::path dir = temp_dir();
    const fs::path file = dir / "ds.bin";
    const Dataset ds = build_dataset(small_meta());
    save_dataset(file.string(), ds);
    const Dataset back = load_dataset(file.string());
    REQUIRE(back.samples.size() == ds.samples.size());
    for (std::size_t q = 0; q < ds.samples.size(); ++q) {
        CHECK(same_response(back.samples[q].response, ds.samples[q].response));
        CHECK(back.samples[q].label.pixels == ds.samples[q].label.pixels);
        REQUIRE(back.samples[q].sources.n_sources() == ds.samples[q].sources.n_sources());
        for (int i = 0; i < ds.samples[q].sources.n_sources(); ++i) {
            CHECK(back.samples[q].sources.sources[static_cast<std::size_t>(i)].x ==
                  ds.samples[q].sources.sources[static_cast<std::size_t>(i)].x);
            CHECK(back.samples[q].sources.sources[static_cast<std::size_t>(i)].y ==
                  ds.samples[q].sources.sources[static_cast<std::size_t>(i)].y);
        }
    }
    SECTION("overwrite guard") {
        CHECK_THROWS_AS(save_dataset(file.string(), ds), IoError);
        CHECK_NOTHROW(save_dataset(file.string(), ds, true));
    }
    fs::remove_all(dir);
}

TEST_CASE("dataset container detects label corruption") {
    const fs::path dir = temp_dir();
    const fs::path file = dir / "bad.bin";
    Dataset ds = build_dataset(small_meta());
    ds.samples[0].label.pixels[5] ^= 1; // now inconsistent with its sources
    save_dataset(file.string(), ds);
    CHECK_THROWS_AS(load_dataset(file.string()), IoError);
    CHECK_NOTHROW(load_dataset(file.string(), false));
    fs::remove_all(dir);
}

TEST_CASE("load_dataset rejects wrong container") {
    const fs::path dir = temp_dir();
    const fs::path file = dir / "other.bin";
    {
        BinaryWriter w(file);
        w.write_magic("WGNN", 1);
        w.commit();
    }
    CHECK_THROWS_AS(load_dataset(file.string()), IoError);
    fs::remove_all(dir);
}
