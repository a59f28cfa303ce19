// spheretrain: batch experiment driver for hypersphere-constrained training,
// checkpoint averaging, embedding clustering, and rotary-axis dumps.

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "json.hpp"

#include "spheretrain/cli.hpp"

namespace st = spheretrain;
using nlohmann::json;

namespace {

// Flat JSON config; command-line flags override file values.
void load_config_file(const std::string& path, st::ExperimentConfig& cfg) {
    std::ifstream in(path);
    if (!in) throw st::IoError("cannot open config file " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw st::ConfigError("bad config JSON: " + std::string(e.what()));
    }
    if (j.contains("task")) cfg.task = st::task_kind_from_string(j["task"].get<std::string>());
    if (j.contains("width")) cfg.width = j["width"].get<int>();
    if (j.contains("depth")) cfg.depth = j["depth"].get<int>();
    if (j.contains("steps")) cfg.steps = j["steps"].get<long>();
    if (j.contains("batch")) cfg.batch = j["batch"].get<int>();
    if (j.contains("base_lr")) cfg.base_lr = j["base_lr"].get<double>();
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("output_dir")) cfg.output_dir = j["output_dir"].get<std::string>();
    if (j.contains("grid_t")) cfg.grid_t = j["grid_t"].get<int>();
    if (j.contains("grid_h")) cfg.grid_h = j["grid_h"].get<int>();
    if (j.contains("grid_w")) cfg.grid_w = j["grid_w"].get<int>();
    if (j.contains("warmup_steps")) cfg.warmup_steps = j["warmup_steps"].get<long>();
    if (j.contains("cooldown_start_fraction")) {
        cfg.cooldown_start_fraction = j["cooldown_start_fraction"].get<double>();
    }
    if (j.contains("beta1")) cfg.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) cfg.beta2 = j["beta2"].get<double>();
    if (j.contains("adam_eps")) cfg.adam_eps = j["adam_eps"].get<double>();
    if (j.contains("record_every")) cfg.record_every = j["record_every"].get<int>();
    if (j.contains("eval_items")) cfg.eval_items = j["eval_items"].get<int>();
}

struct ExperimentFlags {
    std::string config_path;
    std::string task_name;

    void add(CLI::App* cmd, st::ExperimentConfig& cfg) {
        cmd->add_option("--config", config_path, "flat JSON config; flags override");
        cmd->add_option("--task", task_name, "synthetic-denoise | synthetic-regression");
        cmd->add_option("--width", cfg.width, "model width d");
        cmd->add_option("--depth", cfg.depth, "number of blocks L");
        cmd->add_option("--steps", cfg.steps, "optimizer steps");
        cmd->add_option("--batch", cfg.batch, "items per step");
        cmd->add_option("--base-lr", cfg.base_lr, "base learning rate");
        cmd->add_option("--seed", cfg.seed, "master seed");
        cmd->add_option("--grid-t", cfg.grid_t, "token grid: temporal");
        cmd->add_option("--grid-h", cfg.grid_h, "token grid: height");
        cmd->add_option("--grid-w", cfg.grid_w, "token grid: width");
        cmd->add_option("--warmup-steps", cfg.warmup_steps, "warmup length (-1: steps/10)");
        cmd->add_option("--cooldown-start-fraction", cfg.cooldown_start_fraction,
                        "cooldown start as fraction of total");
        cmd->add_option("--record-every", cfg.record_every, "dynamics recording stride");
        cmd->add_option("--eval-items", cfg.eval_items, "validation set size");
    }

    // Flags were parsed into cfg already; fold in the config file underneath
    // by re-parsing file values for unset flags.
    void resolve(CLI::App* cmd, st::ExperimentConfig& cfg) const {
        if (!config_path.empty()) {
            st::ExperimentConfig from_file;
            load_config_file(config_path, from_file);
            st::ExperimentConfig merged = from_file;
            if (cmd->count("--task")) merged.task = cfg.task;
            if (cmd->count("--width")) merged.width = cfg.width;
            if (cmd->count("--depth")) merged.depth = cfg.depth;
            if (cmd->count("--steps")) merged.steps = cfg.steps;
            if (cmd->count("--batch")) merged.batch = cfg.batch;
            if (cmd->count("--base-lr")) merged.base_lr = cfg.base_lr;
            if (cmd->count("--seed")) merged.seed = cfg.seed;
            if (cmd->count("--grid-t")) merged.grid_t = cfg.grid_t;
            if (cmd->count("--grid-h")) merged.grid_h = cfg.grid_h;
            if (cmd->count("--grid-w")) merged.grid_w = cfg.grid_w;
            if (cmd->count("--warmup-steps")) merged.warmup_steps = cfg.warmup_steps;
            if (cmd->count("--cooldown-start-fraction")) {
                merged.cooldown_start_fraction = cfg.cooldown_start_fraction;
            }
            if (cmd->count("--record-every")) merged.record_every = cfg.record_every;
            if (cmd->count("--eval-items")) merged.eval_items = cfg.eval_items;
            if (!cmd->count("--output-dir") && !merged.output_dir.empty()) {
                cfg.output_dir = merged.output_dir;
            }
            merged.output_dir = cfg.output_dir;
            cfg = merged;
        }
        if (!task_name.empty()) cfg.task = st::task_kind_from_string(task_name);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale lab for hypersphere-constrained transformer training"};
    app.require_subcommand(1);

    st::ExperimentConfig train_cfg;
    ExperimentFlags train_flags;
    auto* train_cmd = app.add_subcommand("train", "train the toy block stack");
    train_flags.add(train_cmd, train_cfg);
    train_cmd->add_option("--output-dir", train_cfg.output_dir, "artifact directory");

    st::SweepOptions sweep;
    ExperimentFlags sweep_flags;
    auto* sweep_cmd = app.add_subcommand("sweep", "learning-rate sweep over widths");
    sweep_flags.add(sweep_cmd, sweep.proto);
    sweep_cmd->add_option("--lr-grid", sweep.lr_grid, "base_lr grid points")->expected(-1);
    sweep_cmd->add_option("--widths", sweep.widths, "widths to sweep")->expected(-1);
    sweep_cmd->add_option("--repeats", sweep.repeats, "seeds averaged per point");
    sweep_cmd->add_option("--threads", sweep.threads, "parallel runs (0: auto)");
    sweep_cmd->add_option("--output-dir", sweep.output_dir, "artifact directory");

    std::string trace_path;
    auto* report_cmd = app.add_subcommand("report", "muP-band report from a dynamics trace");
    report_cmd->add_option("trace", trace_path, "trace.csv path (run.json must sit beside it)")
        ->required();

    st::EmaCombineOptions ema;
    std::string ema_manifest;
    auto* ema_cmd = app.add_subcommand("ema-combine", "post-hoc checkpoint averaging");
    ema_cmd->add_option("--manifest", ema_manifest,
                        "JSON manifest: {\"alpha\":..., \"checkpoints\":[...], \"output\":...}");
    ema_cmd->add_option("--checkpoints", ema.checkpoint_dirs, "checkpoint directories")
        ->expected(-1);
    ema_cmd->add_option("--alpha", ema.alpha, "power-schedule exponent");
    ema_cmd->add_option("--output-dir", ema.output_dir, "combined checkpoint directory");

    st::ClusterOptions cluster;
    auto* cluster_cmd = app.add_subcommand("cluster", "mini-batch k-means on embeddings");
    cluster_cmd->add_option("input", cluster.input_dmat, "embeddings in DMAT format")->required();
    cluster_cmd->add_option("--k", cluster.k, "number of clusters");
    cluster_cmd->add_option("--batch-size", cluster.batch_size, "mini-batch size");
    cluster_cmd->add_option("--seed", cluster.seed, "rng seed");
    cluster_cmd->add_option("--iters", cluster.epochs, "passes over the data");
    cluster_cmd->add_option("--threads", cluster.threads, "assignment threads (0: auto)");
    cluster_cmd->add_option("--output-dir", cluster.output_dir, "artifact directory");

    st::RopeDumpOptions rope;
    auto* rope_cmd = app.add_subcommand("rope-dump", "rotary axes as CSV for plotting");
    rope_cmd->add_option("--bands", rope.bands, "frequency bands");
    rope_cmd->add_option("--seed", rope.seed, "layer seed");
    rope_cmd->add_option("--out", rope.output_csv, "output CSV path")->required();

    st::CoordCheckOptions coord;
    ExperimentFlags coord_flags;
    auto* coord_cmd = app.add_subcommand("coordcheck", "activation RMS across widths");
    coord_flags.add(coord_cmd, coord.proto);
    coord_cmd->add_option("--widths", coord.widths, "widths to check")->expected(-1);
    coord_cmd->add_option("--check-steps", coord.steps, "training steps per width");
    coord_cmd->add_option("--out", coord.output_csv, "output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return st::kExitUsage;
    }

    try {
        if (train_cmd->parsed()) {
            train_flags.resolve(train_cmd, train_cfg);
            return st::cmd_train(train_cfg);
        }
        if (sweep_cmd->parsed()) {
            sweep_flags.resolve(sweep_cmd, sweep.proto);
            return st::cmd_sweep(sweep);
        }
        if (report_cmd->parsed()) {
            return st::cmd_report(trace_path);
        }
        if (ema_cmd->parsed()) {
            if (!ema_manifest.empty()) {
                std::ifstream in(ema_manifest);
                if (!in) throw st::IoError("cannot open " + ema_manifest);
                json j;
                try {
                    in >> j;
                } catch (const json::exception& e) {
                    throw st::ConfigError("bad manifest JSON: " + std::string(e.what()));
                }
                if (j.contains("alpha") && !ema_cmd->count("--alpha")) {
                    ema.alpha = j["alpha"].get<double>();
                }
                if (j.contains("checkpoints") && ema.checkpoint_dirs.empty()) {
                    ema.checkpoint_dirs = j["checkpoints"].get<std::vector<std::string>>();
                }
                if (j.contains("output") && ema.output_dir.empty()) {
                    ema.output_dir = j["output"].get<std::string>();
                }
            }
            return st::cmd_ema_combine(ema);
        }
        if (cluster_cmd->parsed()) {
            return st::cmd_cluster(cluster);
        }
        if (rope_cmd->parsed()) {
            return st::cmd_rope_dump(rope);
        }
        if (coord_cmd->parsed()) {
            coord_flags.resolve(coord_cmd, coord.proto);
            if (coord.widths.empty()) coord.widths = {32, 64};
            return st::cmd_coordcheck(coord);
        }
    } catch (const st::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return st::kExitUsage;
    } catch (const st::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return st::kExitIo;
    } catch (const st::RetractionFailure& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return st::kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return st::kExitNumerical;
    }
    return st::kExitUsage;
}
