#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "wgsr/dataset.hpp"
#include "wgsr/errors.hpp"
#include "wgsr/pipeline.hpp"
#include "wgsr/serialize.hpp"

namespace wgsr {

namespace detail {

inline void check_keys(const json& j, const std::string& path,
                       std::initializer_list<const char*> allowed) {
    if (!j.is_object()) throw ConfigError("config: " + path + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError("config: unknown key " + path + "." + it.key());
    }
}

template <typename T>
void get_opt(const json& j, const std::string& path, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        j.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw ConfigError("config: bad value at " + path + "." + key + ": " + e.what());
    }
}

} // namespace detail

/// Complete run configuration. Defaults reproduce the full-scale setup:
/// c0 = 1500 m/s, D = 200 m, f_c = 32.0625 Hz, B = 0.4 f_c, N_f = 33,
/// 81 receivers spaced 2.5 m at x = 0, search domain [490, 570] x [0, 200]
/// on a 71 x 51 grid, N_p = 3 plateaus, 4050/450/500 samples with 1-6
/// sources, ADAM at 1e-3 for 50 epochs with batches of 8.
struct RunConfig {
    WaveguideModel model{1500.0, 200.0};
    FrequencyGrid freq{32.0625, 0.4 * 32.0625, 33};

    struct Array {
        double x_position = 0.0;
        int n_receivers = 81;
        double spacing = 2.5;
        double y0 = 0.0;
    } array;

    SearchGrid grid{490.0, 570.0, 0.0, 200.0, 71, 51};
    PlateauSpec plateau{3};

    struct DatasetCfg {
        int n_train = 4050;
        int n_val = 450;
        int n_test = 500;
        int n_src_min = 1;
        int n_src_max = 6;
        std::uint64_t seed = 20240101;
    } dataset;

    struct NetworkCfg {
        int channels = 8;
        int conv_layers = 3;
        int kernel = 3;
    } network;

    TrainConfig training;

    struct OperatorCfg {
        int eval_stride = 1;
        double self_offset = 0.0; // <= 0: default h_x/2
        int n_modes = 0;          // 0: default truncation at the self offset
    } pi_operator;

    struct EvalCfg {
        double tau = 0.9;
        double bin_lo = 4.0;
        double bin_hi = 60.0;
        double bin_width = 4.0;
        std::vector<double> uniform_eps{0.0, 0.1, 0.25, 0.5};
        std::vector<double> gaussian_eps{1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0};
        std::uint64_t noise_seed = 915;
    } eval;

    ArrayGeometry array_geometry() const {
        return ArrayGeometry::uniform(array.x_position, array.n_receivers, array.spacing,
                                      array.y0);
    }

    DatasetMeta dataset_meta() const {
        DatasetMeta m;
        m.model = model;
        m.freq = freq;
        m.array = array_geometry();
        m.grid = grid;
        m.plateau = plateau;
        m.n_train = dataset.n_train;
        m.n_val = dataset.n_val;
        m.n_test = dataset.n_test;
        m.n_src_min = dataset.n_src_min;
        m.n_src_max = dataset.n_src_max;
        m.seed = dataset.seed;
        return m;
    }

    NetworkConfig network_config() const {
        NetworkConfig c;
        c.n_receivers = array.n_receivers;
        c.n_freq = freq.n_freq;
        c.n_x = grid.n_x;
        c.n_y = grid.n_y;
        c.channels = network.channels;
        c.conv_layers = network.conv_layers;
        c.kernel = network.kernel;
        return c;
    }

    /// Central angular frequency (the PI operator's default frequency).
    double omega_center() const { return 2.0 * M_PI * freq.f_center; }

    double operator_self_offset() const {
        if (pi_operator.self_offset > 0.0) return pi_operator.self_offset;
        if (grid.h_x() > 0.0) return 0.5 * grid.h_x();
        throw ConfigError("config: grid has no x extent; set pi_operator.self_offset");
    }

    ModalBasis operator_basis() const {
        const double k = model.wavenumber(omega_center());
        if (pi_operator.n_modes > 0) return ModalBasis(model.depth, k, pi_operator.n_modes);
        return ModalBasis::with_default_truncation(model.depth, k, operator_self_offset());
    }

    void validate() const {
        model.validate();
        freq.validate();
        grid.validate();
        plateau.validate();
        array_geometry().validate(model.depth);
        dataset_meta().validate();
        network_config().validate();
        training.validate();
        if (pi_operator.eval_stride < 1)
            throw ConfigError("config: pi_operator.eval_stride must be >= 1");
        if (!(eval.tau > 0.0) || !(eval.tau < 1.0))
            throw ConfigError("config: eval.tau must be in (0, 1)");
        if (!(eval.bin_width > 0.0) || !(eval.bin_hi > eval.bin_lo))
            throw ConfigError("config: eval bins need bin_hi > bin_lo and bin_width > 0");
        for (double e : eval.uniform_eps)
            if (e < 0.0) throw ConfigError("config: eval.uniform_eps must be >= 0");
        for (double e : eval.gaussian_eps)
            if (e < 0.0) throw ConfigError("config: eval.gaussian_eps must be >= 0");
    }
};

inline void to_json(json& j, const RunConfig& c) {
    j = json::object();
    j["waveguide"] = c.model;
    j["frequency"] = c.freq;
    j["array"] = json{{"x_position", c.array.x_position},
                      {"n_receivers", c.array.n_receivers},
                      {"spacing", c.array.spacing},
                      {"y0", c.array.y0}};
    j["search_grid"] = c.grid;
    j["plateau"] = json{{"n_p", c.plateau.n_p}};
    j["dataset"] = json{{"n_train", c.dataset.n_train},   {"n_val", c.dataset.n_val},
                        {"n_test", c.dataset.n_test},     {"n_src_min", c.dataset.n_src_min},
                        {"n_src_max", c.dataset.n_src_max}, {"seed", c.dataset.seed}};
    j["network"] = json{{"channels", c.network.channels},
                        {"conv_layers", c.network.conv_layers},
                        {"kernel", c.network.kernel}};
    j["training"] = json{{"epochs", c.training.epochs},
                         {"batch_size", c.training.batch_size},
                         {"mode", to_string(c.training.mode)},
                         {"w_nll", c.training.w_nll},
                         {"w_pi", c.training.w_pi},
                         {"patience", c.training.patience},
                         {"seed", c.training.seed},
                         {"lr", c.training.lr},
                         {"adam_beta1", c.training.adam_beta1},
                         {"adam_beta2", c.training.adam_beta2},
                         {"adam_eps", c.training.adam_eps},
                         {"two_sided_ce", c.training.two_sided_ce}};
    j["pi_operator"] = json{{"eval_stride", c.pi_operator.eval_stride},
                            {"self_offset", c.pi_operator.self_offset},
                            {"n_modes", c.pi_operator.n_modes}};
    j["eval"] = json{{"tau", c.eval.tau},
                     {"bin_lo", c.eval.bin_lo},
                     {"bin_hi", c.eval.bin_hi},
                     {"bin_width", c.eval.bin_width},
                     {"uniform_eps", c.eval.uniform_eps},
                     {"gaussian_eps", c.eval.gaussian_eps},
                     {"noise_seed", c.eval.noise_seed}};
}

inline void from_json(const json& j, RunConfig& c) {
    using detail::check_keys;
    using detail::get_opt;
    check_keys(j, "<root>",
               {"waveguide", "frequency", "array", "search_grid", "plateau", "dataset", "network",
                "training", "pi_operator", "eval"});
    if (j.contains("waveguide")) {
        const json& s = j.at("waveguide");
        check_keys(s, "waveguide", {"c0", "depth"});
        get_opt(s, "waveguide", "c0", c.model.c0);
        get_opt(s, "waveguide", "depth", c.model.depth);
    }
    if (j.contains("frequency")) {
        const json& s = j.at("frequency");
        check_keys(s, "frequency", {"f_center", "bandwidth", "n_freq"});
        get_opt(s, "frequency", "f_center", c.freq.f_center);
        get_opt(s, "frequency", "bandwidth", c.freq.bandwidth);
        get_opt(s, "frequency", "n_freq", c.freq.n_freq);
    }
    if (j.contains("array")) {
        const json& s = j.at("array");
        check_keys(s, "array", {"x_position", "n_receivers", "spacing", "y0"});
        get_opt(s, "array", "x_position", c.array.x_position);
        get_opt(s, "array", "n_receivers", c.array.n_receivers);
        get_opt(s, "array", "spacing", c.array.spacing);
        get_opt(s, "array", "y0", c.array.y0);
    }
    if (j.contains("search_grid")) {
        const json& s = j.at("search_grid");
        check_keys(s, "search_grid", {"x_min", "x_max", "y_min", "y_max", "n_x", "n_y"});
        get_opt(s, "search_grid", "x_min", c.grid.x_min);
        get_opt(s, "search_grid", "x_max", c.grid.x_max);
        get_opt(s, "search_grid", "y_min", c.grid.y_min);
        get_opt(s, "search_grid", "y_max", c.grid.y_max);
        get_opt(s, "search_grid", "n_x", c.grid.n_x);
        get_opt(s, "search_grid", "n_y", c.grid.n_y);
    }
    if (j.contains("plateau")) {
        const json& s = j.at("plateau");
        check_keys(s, "plateau", {"n_p"});
        get_opt(s, "plateau", "n_p", c.plateau.n_p);
    }
    if (j.contains("dataset")) {
        const json& s = j.at("dataset");
        check_keys(s, "dataset",
                   {"n_train", "n_val", "n_test", "n_src_min", "n_src_max", "seed"});
        get_opt(s, "dataset", "n_train", c.dataset.n_train);
        get_opt(s, "dataset", "n_val", c.dataset.n_val);
        get_opt(s, "dataset", "n_test", c.dataset.n_test);
        get_opt(s, "dataset", "n_src_min", c.dataset.n_src_min);
        get_opt(s, "dataset", "n_src_max", c.dataset.n_src_max);
        get_opt(s, "dataset", "seed", c.dataset.seed);
    }
    if (j.contains("network")) {
        const json& s = j.at("network");
        check_keys(s, "network", {"channels", "conv_layers", "kernel"});
        get_opt(s, "network", "channels", c.network.channels);
        get_opt(s, "network", "conv_layers", c.network.conv_layers);
        get_opt(s, "network", "kernel", c.network.kernel);
    }
    if (j.contains("training")) {
        const json& s = j.at("training");
        check_keys(s, "training",
                   {"epochs", "batch_size", "mode", "w_nll", "w_pi", "patience", "seed", "lr",
                    "adam_beta1", "adam_beta2", "adam_eps", "two_sided_ce"});
        get_opt(s, "training", "epochs", c.training.epochs);
        get_opt(s, "training", "batch_size", c.training.batch_size);
        if (s.contains("mode"))
            c.training.mode = loss_mode_from_string(s.at("mode").get<std::string>());
        get_opt(s, "training", "w_nll", c.training.w_nll);
        get_opt(s, "training", "w_pi", c.training.w_pi);
        get_opt(s, "training", "patience", c.training.patience);
        get_opt(s, "training", "seed", c.training.seed);
        get_opt(s, "training", "lr", c.training.lr);
        get_opt(s, "training", "adam_beta1", c.training.adam_beta1);
        get_opt(s, "training", "adam_beta2", c.training.adam_beta2);
        get_opt(s, "training", "adam_eps", c.training.adam_eps);
        get_opt(s, "training", "two_sided_ce", c.training.two_sided_ce);
    }
    if (j.contains("pi_operator")) {
        const json& s = j.at("pi_operator");
        check_keys(s, "pi_operator", {"eval_stride", "self_offset", "n_modes"});
        get_opt(s, "pi_operator", "eval_stride", c.pi_operator.eval_stride);
        get_opt(s, "pi_operator", "self_offset", c.pi_operator.self_offset);
        get_opt(s, "pi_operator", "n_modes", c.pi_operator.n_modes);
    }
    if (j.contains("eval")) {
        const json& s = j.at("eval");
        check_keys(s, "eval",
                   {"tau", "bin_lo", "bin_hi", "bin_width", "uniform_eps", "gaussian_eps",
                    "noise_seed"});
        get_opt(s, "eval", "tau", c.eval.tau);
        get_opt(s, "eval", "bin_lo", c.eval.bin_lo);
        get_opt(s, "eval", "bin_hi", c.eval.bin_hi);
        get_opt(s, "eval", "bin_width", c.eval.bin_width);
        get_opt(s, "eval", "uniform_eps", c.eval.uniform_eps);
        get_opt(s, "eval", "gaussian_eps", c.eval.gaussian_eps);
        get_opt(s, "eval", "noise_seed", c.eval.noise_seed);
    }
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    RunConfig c = j.get<RunConfig>();
    c.validate();
    return c;
}

inline std::string config_hash(const RunConfig& c) {
    return hash_hex(fnv1a64(json(c).dump()));
}

/// Derived quantities for `--describe`: wavelengths, mode counts, grid
/// spacings, network sizes.
inline json describe_config(const RunConfig& c) {
    c.validate();
    const double k_c = c.model.wavenumber(c.omega_center());
    const double lambda_c = c.model.c0 / c.freq.f_center;
    json d;
    d["config_hash"] = config_hash(c);
    d["k_center"] = k_c;
    d["lambda_center"] = lambda_c;
    d["rayleigh_half"] = rayleigh_half(c.model, c.freq);
    d["propagating_modes_at_fc"] = count_propagating_modes(c.model.depth, k_c);
    d["grid_h_x"] = c.grid.h_x();
    d["grid_h_y"] = c.grid.h_y();
    d["n_pixels"] = c.grid.n_pixels();
    d["frequencies"] = c.freq.frequencies();
    const NetworkConfig nc = c.network_config();
    d["network_input_size"] = nc.input_size();
    d["network_hidden_size"] = nc.hidden_size();
    d["network_total_parameters"] = NetworkParams(nc).total_parameters();
    d["operator_self_offset"] = c.operator_self_offset();
    d["operator_n_modes"] = c.operator_basis().n_modes();
    int n_eval = 0;
    for (int ix = 0; ix < c.grid.n_x; ix += c.pi_operator.eval_stride)
        for (int iy = 0; iy < c.grid.n_y; iy += c.pi_operator.eval_stride) ++n_eval;
    d["operator_n_eval"] = n_eval;
    int eligible_rows = 0;
    for (int iy = 0; iy < c.grid.n_y; ++iy) {
        const double y = c.grid.y_at(iy);
        if (y > 0.0 && y < c.model.depth) ++eligible_rows;
    }
    d["eligible_source_nodes"] = eligible_rows * c.grid.n_x;
    return d;
}

} // namespace wgsr
