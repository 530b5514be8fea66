// wgsr: waveguide source-localization toolkit.
// Subcommands: synth (dataset synthesis), km (Kirchhoff migration export),
// train (network training), eval (recovery evaluation + sweeps).
// Exit codes: 0 ok, 2 config error, 3 numeric failure, 4 I/O error.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "wgsr/config.hpp"
#include "wgsr/dataset.hpp"
#include "wgsr/imaging.hpp"
#include "wgsr/loss.hpp"
#include "wgsr/nn.hpp"
#include "wgsr/pipeline.hpp"

namespace fs = std::filesystem;
using namespace wgsr;

namespace {

struct GlobalOpts {
    std::string config_path;
    std::string out = ".";
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool describe = false;
};

RunConfig resolve_config(const GlobalOpts& g) {
    RunConfig c;
    if (!g.config_path.empty()) c = load_config(g.config_path);
    if (g.seed_set) {
        c.dataset.seed = g.seed;
        c.training.seed = g.seed;
        c.eval.noise_seed = g.seed;
    }
    c.validate();
    return c;
}

std::string timestamp_utc() {
    const std::time_t t = std::time(nullptr);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

class Stopwatch {
public:
    Stopwatch() : t0_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
    }

private:
    std::chrono::steady_clock::time_point t0_;
};

void write_manifest(const fs::path& out_dir, const std::string& name, json manifest,
                    double wall_s) {
    manifest["wall_seconds"] = wall_s;
    manifest["timestamp"] = timestamp_utc();
    write_text_atomic(out_dir / name, manifest.dump(2) + "\n");
}

FieldOperator make_operator(const RunConfig& cfg, const DatasetMeta& meta,
                            const fs::path& out_dir) {
    const double omega_c = 2.0 * M_PI * meta.freq.f_center;
    const double k = meta.model.wavenumber(omega_c);
    double self_off = cfg.pi_operator.self_offset;
    if (self_off <= 0.0) {
        if (meta.grid.h_x() <= 0.0)
            throw ConfigError("pi operator: grid has no x extent; set pi_operator.self_offset");
        self_off = 0.5 * meta.grid.h_x();
    }
    const ModalBasis basis = cfg.pi_operator.n_modes > 0
                                 ? ModalBasis(meta.model.depth, k, cfg.pi_operator.n_modes)
                                 : ModalBasis::with_default_truncation(meta.model.depth, k,
                                                                       self_off);
    return load_or_build_field_operator(out_dir / "cache", meta.model, basis, meta.grid, omega_c,
                                        cfg.pi_operator.eval_stride, self_off);
}

int cmd_synth(const RunConfig& base, const fs::path& out_dir, const std::string& output,
              const std::string& counts, bool overwrite) {
    RunConfig cfg = base;
    if (!counts.empty()) {
        int a = 0, b = 0, c = 0;
        char sep1 = 0, sep2 = 0;
        std::istringstream in(counts);
        if (!(in >> a >> sep1 >> b >> sep2 >> c) || sep1 != ',' || sep2 != ',' || !in.eof())
            throw ConfigError("--counts expects train,val,test (e.g. 80,10,10)");
        cfg.dataset.n_train = a;
        cfg.dataset.n_val = b;
        cfg.dataset.n_test = c;
        cfg.validate();
    }
    Stopwatch sw;
    const Dataset ds = build_dataset(cfg.dataset_meta());
    const fs::path path = output.empty() ? out_dir / "dataset.bin" : fs::path(output);
    fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    save_dataset(path.string(), ds, overwrite);
    json manifest;
    manifest["command"] = "synth";
    manifest["config_hash"] = config_hash(cfg);
    manifest["config"] = cfg;
    manifest["artifacts"] = json{{"dataset", path.string()}};
    manifest["n_samples"] = ds.samples.size();
    manifest["format_versions"] = json{{"WGSR", kDatasetVersion}};
    write_manifest(out_dir, "manifest_synth.json", manifest, sw.seconds());
    std::cout << "wrote " << path.string() << " (" << ds.samples.size() << " samples)\n";
    return 0;
}

int cmd_km(const RunConfig& cfg, const fs::path& out_dir, const std::string& dataset_path,
           int sample_id) {
    Stopwatch sw;
    const Dataset ds = load_dataset(dataset_path);
    if (sample_id < 0 || sample_id >= ds.meta.total())
        throw ConfigError("km: sample id " + std::to_string(sample_id) + " out of range [0, " +
                          std::to_string(ds.meta.total()) + ")");
    const Sample& s = ds.samples[static_cast<std::size_t>(sample_id)];
    const KMImage img = km_image(s.response, ds.meta.model, ds.meta.freq, ds.meta.array,
                                 ds.meta.grid);
    const std::vector<double> mod = img.modulus();
    const std::string tag = std::to_string(sample_id);
    fs::create_directories(out_dir);
    write_text_atomic(out_dir / ("km_" + tag + ".csv"),
                      image_csv(mod.data(), img.grid.n_x, img.grid.n_y));
    write_text_atomic(out_dir / ("km_" + tag + ".pgm"),
                      image_pgm(mod.data(), img.grid.n_x, img.grid.n_y));
    std::string truth = "x,y,ix,iy,pixel_index\n";
    for (const Point& p : s.sources.sources) {
        const auto [ix, iy] = source_node(ds.meta.grid, p);
        truth += std::to_string(p.x) + "," + std::to_string(p.y) + "," + std::to_string(ix) +
                 "," + std::to_string(iy) + "," + std::to_string(ds.meta.grid.index(ix, iy)) +
                 "\n";
    }
    write_text_atomic(out_dir / ("km_" + tag + "_truth.csv"), truth);

    const int peak = argmax_pixel(img);
    const auto [px, py] = img.grid.coords(peak);
    json manifest;
    manifest["command"] = "km";
    manifest["config_hash"] = config_hash(cfg);
    manifest["sample_id"] = sample_id;
    manifest["argmax_pixel"] = json{{"ix", px}, {"iy", py}, {"index", peak}};
    manifest["artifacts"] = json{{"image_csv", (out_dir / ("km_" + tag + ".csv")).string()},
                                 {"image_pgm", (out_dir / ("km_" + tag + ".pgm")).string()},
                                 {"truth_csv", (out_dir / ("km_" + tag + "_truth.csv")).string()}};
    write_manifest(out_dir, "manifest_km.json", manifest, sw.seconds());
    std::cout << "km image for sample " << sample_id << ": argmax at (" << img.grid.x_at(px)
              << ", " << img.grid.y_at(py) << ")\n";
    return 0;
}

int cmd_train(const RunConfig& base, const fs::path& out_dir, const std::string& dataset_path,
              const std::string& mode_str, const std::string& checkpoint_name) {
    RunConfig cfg = base;
    if (!mode_str.empty()) cfg.training.mode = loss_mode_from_string(mode_str);
    Stopwatch sw;
    const Dataset ds = load_dataset(dataset_path);

    NetworkConfig nc;
    nc.n_receivers = ds.meta.array.n_receivers();
    nc.n_freq = ds.meta.freq.n_freq;
    nc.n_x = ds.meta.grid.n_x;
    nc.n_y = ds.meta.grid.n_y;
    nc.channels = cfg.network.channels;
    nc.conv_layers = cfg.network.conv_layers;
    nc.kernel = cfg.network.kernel;

    FieldOperator op;
    const bool use_pi = cfg.training.mode == LossMode::nll_plus_pi;
    if (use_pi) op = make_operator(cfg, ds.meta, out_dir);

    const TrainResult result = train(ds, nc, cfg.training, use_pi ? &op : nullptr);

    fs::create_directories(out_dir);
    const fs::path ckpt = checkpoint_name.empty()
                              ? out_dir / ("checkpoint_" + to_string(cfg.training.mode) + ".bin")
                              : fs::path(checkpoint_name);
    json meta;
    meta["mode"] = to_string(cfg.training.mode);
    meta["best_epoch"] = result.best_epoch;
    meta["best_val_loss"] = result.best_val_loss;
    meta["epochs_run"] = result.curve.size();
    meta["config_hash"] = config_hash(cfg);
    save_checkpoint(ckpt.string(), result.best_params, meta);
    write_text_atomic(out_dir / "loss_curves.csv", loss_curves_csv(result));

    json manifest;
    manifest["command"] = "train";
    manifest["config_hash"] = config_hash(cfg);
    manifest["config"] = cfg;
    manifest["mode"] = to_string(cfg.training.mode);
    manifest["best_epoch"] = result.best_epoch;
    manifest["best_val_loss"] = result.best_val_loss;
    manifest["epochs_run"] = result.curve.size();
    manifest["artifacts"] = json{{"checkpoint", ckpt.string()},
                                 {"loss_curves", (out_dir / "loss_curves.csv").string()}};
    manifest["format_versions"] = json{{"WGNN", kCheckpointVersion}};
    write_manifest(out_dir, "manifest_train.json", manifest, sw.seconds());
    std::cout << "trained " << to_string(cfg.training.mode) << ": best val loss "
              << result.best_val_loss << " at epoch " << result.best_epoch << " ("
              << result.curve.size() << " epochs run)\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const fs::path& out_dir, const std::string& dataset_path,
             const std::string& checkpoint_path, double tau_override, bool no_distance,
             bool no_noise, int triptych_id, bool perfect_labels) {
    Stopwatch sw;
    const Dataset ds = load_dataset(dataset_path);
    if (ds.meta.n_test < 1) throw ConfigError("eval: dataset has no test split");
    auto [params, ckpt_meta] = load_checkpoint(checkpoint_path);
    if (params.cfg.n_receivers != ds.meta.array.n_receivers() ||
        params.cfg.n_freq != ds.meta.freq.n_freq || params.cfg.n_x != ds.meta.grid.n_x ||
        params.cfg.n_y != ds.meta.grid.n_y)
        throw ConfigError("eval: checkpoint network shape does not match the dataset");
    const double tau = tau_override > 0.0 ? tau_override : cfg.eval.tau;
    const PlateauSpec plateau = ds.meta.plateau;
    fs::create_directories(out_dir);
    json manifest;
    manifest["command"] = "eval";
    manifest["config_hash"] = config_hash(cfg);
    manifest["checkpoint"] = checkpoint_path;
    manifest["checkpoint_meta"] = ckpt_meta;
    manifest["tau"] = tau;
    json artifacts;

    EvalReport rep;
    if (perfect_labels) {
        // debug passthrough: extract peaks from the true labels
        std::vector<std::vector<int>> preds, truths;
        for (int i = 0; i < ds.meta.n_test; ++i) {
            const Sample& s = ds.test(i);
            std::vector<double> img(s.label.pixels.size());
            for (std::size_t k = 0; k < img.size(); ++k)
                img[k] = s.label.pixels[k] ? 1.0 : 0.0;
            preds.push_back(
                extract_sources(img.data(), ds.meta.grid.n_x, ds.meta.grid.n_y, plateau, tau));
            truths.push_back(source_pixels(s.sources, ds.meta.grid));
        }
        rep = recovery_rate(preds, truths);
        for (int i = 0; i < ds.meta.n_test; ++i) {
            rep.samples[static_cast<std::size_t>(i)].id = ds.test(i).id;
            rep.samples[static_cast<std::size_t>(i)].min_dist =
                min_pairwise_distance(ds.test(i).sources);
        }
    } else {
        rep = evaluate_test(params, ds, plateau, tau);
    }
    write_text_atomic(out_dir / "recovery.csv", recovery_csv(rep));
    artifacts["recovery"] = (out_dir / "recovery.csv").string();
    manifest["clean_rate"] = rep.rate();

    if (!no_distance && !perfect_labels) {
        const MinDistSweep sweep =
            min_distance_sweep(params, ds, plateau, tau, cfg.eval.bin_lo, cfg.eval.bin_hi,
                               cfg.eval.bin_width, rayleigh_half(ds.meta.model, ds.meta.freq));
        write_text_atomic(out_dir / "min_dist_sweep.csv", min_dist_csv(sweep));
        artifacts["min_dist_sweep"] = (out_dir / "min_dist_sweep.csv").string();
    }

    if (!no_noise && !perfect_labels) {
        const auto uniform = noise_sweep(params, ds, NoiseKind::uniform, cfg.eval.uniform_eps,
                                         cfg.eval.noise_seed, plateau, tau);
        const auto gaussian = noise_sweep(params, ds, NoiseKind::gaussian, cfg.eval.gaussian_eps,
                                          cfg.eval.noise_seed, plateau, tau);
        std::string csv = noise_csv(NoiseKind::uniform, uniform);
        const std::string g = noise_csv(NoiseKind::gaussian, gaussian);
        csv += g.substr(g.find('\n') + 1); // drop the duplicated header
        write_text_atomic(out_dir / "noise_sweep.csv", csv);
        artifacts["noise_sweep"] = (out_dir / "noise_sweep.csv").string();
    }

    if (triptych_id >= 0) {
        if (triptych_id >= ds.meta.n_test)
            throw ConfigError("eval: --triptych index out of range");
        const Sample& s = ds.test(triptych_id);
        const BatchCache cache = forward(params, s.response);
        const double* raw = cache.probs(0);
        const std::vector<double> filtered =
            mean_filter(raw, ds.meta.grid.n_x, ds.meta.grid.n_y, plateau);
        const std::vector<int> peaks =
            extract_sources(raw, ds.meta.grid.n_x, ds.meta.grid.n_y, plateau, tau);
        std::vector<double> peaks_img(static_cast<std::size_t>(ds.meta.grid.n_pixels()), 0.0);
        for (int p : peaks) peaks_img[static_cast<std::size_t>(p)] = 1.0;
        const std::string tag = std::to_string(triptych_id);
        write_text_atomic(out_dir / ("eval_raw_" + tag + ".pgm"),
                          image_pgm(raw, ds.meta.grid.n_x, ds.meta.grid.n_y));
        write_text_atomic(out_dir / ("eval_filtered_" + tag + ".pgm"),
                          image_pgm(filtered.data(), ds.meta.grid.n_x, ds.meta.grid.n_y));
        write_text_atomic(out_dir / ("eval_peaks_" + tag + ".pgm"),
                          image_pgm(peaks_img.data(), ds.meta.grid.n_x, ds.meta.grid.n_y));
        artifacts["triptych"] = json::array({(out_dir / ("eval_raw_" + tag + ".pgm")).string(),
                                             (out_dir / ("eval_filtered_" + tag + ".pgm")).string(),
                                             (out_dir / ("eval_peaks_" + tag + ".pgm")).string()});
    }

    manifest["artifacts"] = artifacts;
    write_manifest(out_dir, "manifest_eval.json", manifest, sw.seconds());
    std::cout << "recovery rate " << rep.rate() << " (" << rep.recovered << "/"
              << rep.total_sources << ", " << rep.spurious << " spurious)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    GlobalOpts g;
    CLI::App app{"waveguide source localization: synthesis, migration, training, evaluation"};
    app.require_subcommand(0, 1);
    app.add_option("--config", g.config_path, "JSON run configuration (defaults: full scale)");
    app.add_option("--seed", g.seed, "override dataset/training/noise seeds")
        ->each([&g](const std::string&) { g.seed_set = true; });
    app.add_option("--out", g.out, "output directory (default .)");
    app.add_flag("--describe", g.describe, "print derived configuration quantities and exit");

    std::string synth_output, synth_counts;
    bool synth_overwrite = false;
    CLI::App* synth = app.add_subcommand("synth", "synthesize a dataset container");
    synth->add_option("--output", synth_output, "dataset path (default <out>/dataset.bin)");
    synth->add_option("--counts", synth_counts, "override splits as train,val,test");
    synth->add_flag("--overwrite", synth_overwrite, "replace an existing dataset file");

    std::string km_dataset;
    int km_sample = 0;
    CLI::App* km = app.add_subcommand("km", "export a Kirchhoff migration image");
    km->add_option("--dataset", km_dataset, "dataset container")->required();
    km->add_option("--sample", km_sample, "sample id (default 0)");

    std::string train_dataset, train_mode, train_ckpt;
    CLI::App* tr = app.add_subcommand("train", "train the network");
    tr->add_option("--dataset", train_dataset, "dataset container")->required();
    tr->add_option("--mode", train_mode, "loss mode: nll | pi (default from config)");
    tr->add_option("--checkpoint", train_ckpt, "checkpoint path (default <out>/checkpoint_<mode>.bin)");

    std::string eval_dataset, eval_ckpt;
    double eval_tau = 0.0;
    bool eval_no_distance = false, eval_no_noise = false, eval_perfect = false;
    int eval_triptych = -1;
    CLI::App* ev = app.add_subcommand("eval", "evaluate recovery and run sweeps");
    ev->add_option("--dataset", eval_dataset, "dataset container")->required();
    ev->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
    ev->add_option("--tau", eval_tau, "peak threshold override (default from config)");
    ev->add_flag("--no-distance", eval_no_distance, "skip the min-distance sweep");
    ev->add_flag("--no-noise", eval_no_noise, "skip the noise sweeps");
    ev->add_option("--triptych", eval_triptych, "export raw/filtered/peaks PGMs for a test id");
    ev->add_flag("--perfect-labels", eval_perfect, "debug: score label passthrough");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const RunConfig cfg = resolve_config(g);
        const fs::path out_dir(g.out);
        fs::create_directories(out_dir);
        if (g.describe) {
            std::cout << describe_config(cfg).dump(2) << "\n";
            return 0;
        }
        if (synth->parsed())
            return cmd_synth(cfg, out_dir, synth_output, synth_counts, synth_overwrite);
        if (km->parsed()) return cmd_km(cfg, out_dir, km_dataset, km_sample);
        if (tr->parsed()) return cmd_train(cfg, out_dir, train_dataset, train_mode, train_ckpt);
        if (ev->parsed())
            return cmd_eval(cfg, out_dir, eval_dataset, eval_ckpt, eval_tau, eval_no_distance,
                            eval_no_noise, eval_triptych, eval_perfect);
        std::cout << app.help();
        return 0;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
