#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "wgsr/errors.hpp"
#include "wgsr/imaging.hpp"
#include "wgsr/io.hpp"
#include "wgsr/physics.hpp"
#include "wgsr/rng.hpp"
#include "wgsr/serialize.hpp"

namespace wgsr {

/// Plateau side length N_p (pixels) used for labels and the matched mean filter.
struct PlateauSpec {
    int n_p = 3;

    void validate() const {
        if (n_p < 1) throw ConfigError("PlateauSpec: n_p must be >= 1");
    }
};

/// Binary label image on the search grid, row-major (ix*n_y + iy), values 0/1.
struct LabelImage {
    int n_x = 0, n_y = 0;
    std::vector<std::uint8_t> pixels;

    LabelImage() = default;
    LabelImage(int nx, int ny)
        : n_x(nx), n_y(ny),
          pixels(static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny), 0) {}

    std::uint8_t& at(int ix, int iy) {
        return pixels[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                      static_cast<std::size_t>(iy)];
    }
    std::uint8_t at(int ix, int iy) const {
        return pixels[static_cast<std::size_t>(ix) * static_cast<std::size_t>(n_y) +
                      static_cast<std::size_t>(iy)];
    }
    int ones() const {
        int c = 0;
        for (auto v : pixels) c += v ? 1 : 0;
        return c;
    }
};

/// Map a source position to its grid node; the position must coincide with a
/// node (the dataset generator only emits node positions).
inline std::pair<int, int> source_node(const SearchGrid& grid, Point s) {
    auto [ix, iy] = grid.nearest_node(s);
    const double tol_x = 1e-9 * (1.0 + std::abs(s.x));
    const double tol_y = 1e-9 * (1.0 + std::abs(s.y));
    if (std::abs(grid.x_at(ix) - s.x) > tol_x || std::abs(grid.y_at(iy) - s.y) > tol_y)
        throw ConfigError("source_node: source does not lie on a grid node");
    return {ix, iy};
}

/// Plateau label: the union of N_p x N_p windows centered on each source
/// pixel, clipped at the grid edges. Overlaps merge (logical OR).
inline LabelImage make_label(const SourceConfig& cfg, const SearchGrid& grid,
                             const PlateauSpec& plateau) {
    grid.validate();
    plateau.validate();
    LabelImage img(grid.n_x, grid.n_y);
    const int lo_off = -(plateau.n_p - 1) / 2;
    const int hi_off = plateau.n_p / 2;
    for (const Point& s : cfg.sources) {
        auto [ix, iy] = source_node(grid, s);
        const int x0 = std::max(0, ix + lo_off), x1 = std::min(grid.n_x - 1, ix + hi_off);
        const int y0 = std::max(0, iy + lo_off), y1 = std::min(grid.n_y - 1, iy + hi_off);
        for (int u = x0; u <= x1; ++u)
            for (int v = y0; v <= y1; ++v) img.at(u, v) = 1;
    }
    return img;
}

/// Pixel indices of the nodes a configuration's sources sit on.
inline std::vector<int> source_pixels(const SourceConfig& cfg, const SearchGrid& grid) {
    std::vector<int> out;
    out.reserve(cfg.sources.size());
    for (const Point& s : cfg.sources) {
        auto [ix, iy] = source_node(grid, s);
        out.push_back(grid.index(ix, iy));
    }
    return out;
}

/// Draw N_s ~ U{n_min..n_max} distinct source nodes uniformly from the grid
/// nodes with depth strictly inside (0, depth). Sources keep draw order.
inline SourceConfig sample_sources(Rng& rng, const SearchGrid& grid, double depth,
                                   int n_min, int n_max) {
    grid.validate();
    if (n_min < 1 || n_max < n_min)
        throw ConfigError("sample_sources: need 1 <= n_min <= n_max");

    std::vector<int> eligible_rows;
    for (int iy = 0; iy < grid.n_y; ++iy) {
        const double y = grid.y_at(iy);
        if (y > 0.0 && y < depth) eligible_rows.push_back(iy);
    }
    const std::size_t n_eligible = eligible_rows.size() * static_cast<std::size_t>(grid.n_x);
    if (static_cast<std::size_t>(n_max) > n_eligible)
        throw ConfigError("sample_sources: n_max exceeds the eligible node count");

    const int n_s = rng.uniform_int(n_min, n_max);
    SourceConfig cfg;
    std::unordered_set<std::uint64_t> taken;
    while (static_cast<int>(cfg.sources.size()) < n_s) {
        const std::uint64_t pick = rng.uniform_index(n_eligible);
        if (!taken.insert(pick).second) continue;
        const int ix = static_cast<int>(pick / eligible_rows.size());
        const int iy = eligible_rows[static_cast<std::size_t>(pick % eligible_rows.size())];
        cfg.sources.push_back({grid.x_at(ix), grid.y_at(iy)});
    }
    return cfg;
}

/// Smallest pairwise Euclidean distance; empty for fewer than two sources.
inline std::optional<double> min_pairwise_distance(const SourceConfig& cfg) {
    if (cfg.n_sources() < 2) return std::nullopt;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < cfg.sources.size(); ++i)
        for (std::size_t j = i + 1; j < cfg.sources.size(); ++j) {
            const double dx = cfg.sources[i].x - cfg.sources[j].x;
            const double dy = cfg.sources[i].y - cfg.sources[j].y;
            best = std::min(best, std::hypot(dx, dy));
        }
    return best;
}

enum class NoiseKind { none, uniform, gaussian };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::none: return "none";
        case NoiseKind::uniform: return "uniform";
        case NoiseKind::gaussian: return "gaussian";
    }
    throw ConfigError("unknown noise kind");
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "none") return NoiseKind::none;
    if (s == "uniform") return NoiseKind::uniform;
    if (s == "gaussian") return NoiseKind::gaussian;
    throw ConfigError("unknown noise kind: " + s);
}

struct NoiseSpec {
    NoiseKind kind = NoiseKind::none;
    double epsilon = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (epsilon < 0.0) throw ConfigError("NoiseSpec: epsilon must be >= 0");
    }
};

/// SNR in dB for noise strength epsilon: -10 log10(eps).
inline double snr_db(double epsilon) {
    if (!(epsilon > 0.0)) throw ConfigError("snr_db: epsilon must be > 0");
    return -10.0 * std::log10(epsilon);
}

/// Multiplicative uniform noise: each entry's real and imaginary parts are
/// scaled by independent (1 + w), w ~ eps * U([-1/2, 1/2]). Entries are
/// processed in storage (receiver-major) order; eps = 0 is an exact copy and
/// consumes no draws.
inline ResponseTensor add_uniform_noise(const ResponseTensor& d, double eps, Rng& rng) {
    if (eps < 0.0) throw ConfigError("add_uniform_noise: epsilon must be >= 0");
    ResponseTensor out = d;
    if (eps == 0.0) return out;
    for (cplx& v : out.data) {
        const double w1 = eps * (rng.uniform01() - 0.5);
        const double w2 = eps * (rng.uniform01() - 0.5);
        v = cplx(v.real() * (1.0 + w1), v.imag() * (1.0 + w2));
    }
    return out;
}

/// Additive circular complex Gaussian noise, scaled per frequency column to
/// the column's average receiver power: entry variance eps * p_avg(j), split
/// evenly between real and imaginary parts. Columns ascending, receivers
/// ascending within a column; eps = 0 is an exact copy and consumes no draws.
inline ResponseTensor add_gaussian_noise(const ResponseTensor& d, double eps, Rng& rng) {
    if (eps < 0.0) throw ConfigError("add_gaussian_noise: epsilon must be >= 0");
    ResponseTensor out = d;
    if (eps == 0.0) return out;
    for (int j = 0; j < d.n_freq; ++j) {
        double p = 0.0;
        for (int r = 0; r < d.n_receivers; ++r) p += std::norm(d.at(r, j));
        const double p_avg = p / static_cast<double>(d.n_receivers);
        const double sd = std::sqrt(eps * p_avg / 2.0);
        for (int r = 0; r < d.n_receivers; ++r) {
            const cplx v = out.at(r, j);
            out.at(r, j) = cplx(v.real() + sd * rng.normal(), v.imag() + sd * rng.normal());
        }
    }
    return out;
}

/// Noise dispatch on a fresh stream seeded from the spec.
inline ResponseTensor apply_noise(const ResponseTensor& d, const NoiseSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    switch (spec.kind) {
        case NoiseKind::none: return d;
        case NoiseKind::uniform: return add_uniform_noise(d, spec.epsilon, rng);
        case NoiseKind::gaussian: return add_gaussian_noise(d, spec.epsilon, rng);
    }
    throw ConfigError("apply_noise: unknown noise kind");
}

/// One training/evaluation scenario: id, true sources, clean response, label.
struct Sample {
    int id = 0;
    SourceConfig sources;
    ResponseTensor response;
    LabelImage label;
};

/// Everything needed to regenerate or interpret a dataset.
struct DatasetMeta {
    WaveguideModel model;
    FrequencyGrid freq;
    ArrayGeometry array;
    SearchGrid grid;
    PlateauSpec plateau;
    int n_train = 0, n_val = 0, n_test = 0;
    int n_src_min = 1, n_src_max = 1;
    std::uint64_t seed = 0;

    int total() const { return n_train + n_val + n_test; }

    void validate() const {
        model.validate();
        freq.validate();
        array.validate(model.depth);
        grid.validate();
        plateau.validate();
        if (grid.y_max > model.depth)
            throw ConfigError("DatasetMeta: search grid extends below the waveguide bottom");
        if (n_train < 0 || n_val < 0 || n_test < 0 || total() < 1)
            throw ConfigError("DatasetMeta: split sizes must be non-negative with a positive total");
        if (n_src_min < 1 || n_src_max < n_src_min)
            throw ConfigError("DatasetMeta: need 1 <= n_src_min <= n_src_max");
    }
};

inline void to_json(json& j, const DatasetMeta& m) {
    j = json{{"model", m.model},         {"freq", m.freq},
             {"array", m.array},         {"grid", m.grid},
             {"n_p", m.plateau.n_p},     {"n_train", m.n_train},
             {"n_val", m.n_val},         {"n_test", m.n_test},
             {"n_src_min", m.n_src_min}, {"n_src_max", m.n_src_max},
             {"seed", m.seed}};
}
inline void from_json(const json& j, DatasetMeta& m) {
    j.at("model").get_to(m.model);
    j.at("freq").get_to(m.freq);
    j.at("array").get_to(m.array);
    j.at("grid").get_to(m.grid);
    j.at("n_p").get_to(m.plateau.n_p);
    j.at("n_train").get_to(m.n_train);
    j.at("n_val").get_to(m.n_val);
    j.at("n_test").get_to(m.n_test);
    j.at("n_src_min").get_to(m.n_src_min);
    j.at("n_src_max").get_to(m.n_src_max);
    j.at("seed").get_to(m.seed);
}

/// Ordered sample store: [0, n_train) train, then val, then test.
struct Dataset {
    DatasetMeta meta;
    std::vector<Sample> samples;

    const Sample& train(int i) const { return samples[static_cast<std::size_t>(i)]; }
    const Sample& val(int i) const {
        return samples[static_cast<std::size_t>(meta.n_train + i)];
    }
    const Sample& test(int i) const {
        return samples[static_cast<std::size_t>(meta.n_train + meta.n_val + i)];
    }
};

/// Deterministic dataset synthesis: one RNG stream seeded by meta.seed drives
/// source sampling across all samples in order.
inline Dataset build_dataset(const DatasetMeta& meta) {
    meta.validate();
    Dataset ds;
    ds.meta = meta;
    ds.samples.reserve(static_cast<std::size_t>(meta.total()));
    Rng rng(derive_seed(meta.seed, "dataset"));
    for (int q = 0; q < meta.total(); ++q) {
        Sample s;
        s.id = q;
        s.sources = sample_sources(rng, meta.grid, meta.model.depth, meta.n_src_min,
                                   meta.n_src_max);
        s.response = synthesize_response(meta.model, meta.freq, meta.array, s.sources);
        s.label = make_label(s.sources, meta.grid, meta.plateau);
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

inline constexpr char kDatasetMagic[] = "WGSR";
inline constexpr std::uint32_t kDatasetVersion = 1;

inline void save_dataset(const std::string& path, const Dataset& ds, bool overwrite = false) {
    if (!overwrite && file_exists(path))
        throw IoError("save_dataset: output exists (pass overwrite to replace): " + path);
    BinaryWriter w(path);
    w.write_magic(kDatasetMagic, kDatasetVersion);
    json header;
    header["meta"] = ds.meta;
    header["n_samples"] = ds.samples.size();
    w.write_json(header);
    for (const Sample& s : ds.samples) {
        w.write_u32(static_cast<std::uint32_t>(s.sources.sources.size()));
        for (const Point& p : s.sources.sources) {
            w.write_f64(p.x);
            w.write_f64(p.y);
        }
        w.write_f64_array(reinterpret_cast<const double*>(s.response.data.data()),
                          s.response.data.size() * 2);
        w.write_bytes(s.label.pixels.data(), s.label.pixels.size());
    }
    w.commit();
}

inline Dataset load_dataset(const std::string& path, bool verify = true) {
    BinaryReader r(path);
    r.read_magic(kDatasetMagic, kDatasetVersion);
    const json header = r.read_json();
    Dataset ds;
    header.at("meta").get_to(ds.meta);
    ds.meta.validate();
    const auto n_samples = header.at("n_samples").get<std::uint64_t>();
    if (static_cast<std::uint64_t>(ds.meta.total()) != n_samples)
        throw IoError("load_dataset: sample count does not match the split sizes");
    const std::size_t n_resp = static_cast<std::size_t>(ds.meta.array.n_receivers()) *
                               static_cast<std::size_t>(ds.meta.freq.n_freq);
    const std::size_t n_px = static_cast<std::size_t>(ds.meta.grid.n_pixels());
    ds.samples.reserve(n_samples);
    for (std::uint64_t q = 0; q < n_samples; ++q) {
        Sample s;
        s.id = static_cast<int>(q);
        const std::uint32_t n_s = r.read_u32();
        s.sources.sources.resize(n_s);
        for (std::uint32_t i = 0; i < n_s; ++i) {
            s.sources.sources[i].x = r.read_f64();
            s.sources.sources[i].y = r.read_f64();
        }
        s.response = ResponseTensor(ds.meta.array.n_receivers(), ds.meta.freq.n_freq);
        r.read_f64_array(reinterpret_cast<double*>(s.response.data.data()), n_resp * 2);
        s.label.n_x = ds.meta.grid.n_x;
        s.label.n_y = ds.meta.grid.n_y;
        s.label.pixels.resize(n_px);
        r.read_bytes(s.label.pixels.data(), n_px);
        if (verify) {
            const LabelImage expect = make_label(s.sources, ds.meta.grid, ds.meta.plateau);
            if (expect.pixels != s.label.pixels)
                throw IoError("load_dataset: label integrity check failed at sample " +
                              std::to_string(q));
        }
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

} // namespace wgsr
