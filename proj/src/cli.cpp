#include "spheretrain/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

#include "spheretrain/dedup.hpp"
#include "spheretrain/ema.hpp"
#include "spheretrain/rope3d.hpp"

namespace spheretrain {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

json config_json(const ExperimentConfig& cfg) {
    return json{{"task", to_string(cfg.task)},
                {"width", cfg.width},
                {"depth", cfg.depth},
                {"steps", cfg.steps},
                {"batch", cfg.batch},
                {"base_lr", cfg.base_lr},
                {"seed", cfg.seed},
                {"grid_t", cfg.grid_t},
                {"grid_h", cfg.grid_h},
                {"grid_w", cfg.grid_w},
                {"warmup_steps", cfg.warmup_steps},
                {"cooldown_start_fraction", cfg.cooldown_start_fraction},
                {"beta1", cfg.beta1},
                {"beta2", cfg.beta2},
                {"adam_eps", cfg.adam_eps},
                {"record_every", cfg.record_every},
                {"eval_items", cfg.eval_items}};
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
    if (cfg.output_dir.empty()) throw ConfigError("train: output_dir is required");
    ensure_dir(cfg.output_dir);

    const TrainResult res = train(cfg);

    write_trace_csv(cfg.output_dir + "/trace.csv", res.trace);
    save_checkpoint(cfg.output_dir + "/checkpoint", res.final_checkpoint);

    json manifest;
    manifest["config"] = config_json(cfg);
    manifest["schedule"] = {{"total_steps", res.schedule.total_steps},
                            {"warmup_steps", res.schedule.warmup_steps},
                            {"cooldown_start_fraction", res.schedule.cooldown_start_fraction},
                            {"base_lr", res.schedule.base_lr}};
    json params = json::array();
    for (const ParamTensor& p : res.final_checkpoint.params) {
        params.push_back({{"name", p.name},
                          {"kind", to_string(p.kind)},
                          {"rows", p.value.rows},
                          {"cols", p.value.cols},
                          {"lr_multiplier", p.lr_multiplier},
                          {"zero_init", p.zero_init}});
    }
    manifest["params"] = params;
    manifest["initial_loss"] = res.initial_loss;
    manifest["final_train_loss"] = res.final_train_loss;
    manifest["val_loss"] = res.diverged ? json() : json(res.val_loss);
    manifest["diverged"] = res.diverged;
    manifest["steps_run"] = res.steps_run;
    manifest["rejected_steps"] = res.rejected_steps;
    write_text(cfg.output_dir + "/run.json", manifest.dump(2) + "\n");

    if (res.diverged) {
        std::cerr << "train: loss became non-finite at step " << res.steps_run << "\n";
        return kExitNumerical;
    }
    std::cout << "train: steps=" << res.steps_run << " initial_loss=" << res.initial_loss
              << " val_loss=" << res.val_loss << "\n";
    return kExitOk;
}

int cmd_sweep(const SweepOptions& opt) {
    if (opt.output_dir.empty()) throw ConfigError("sweep: output_dir is required");
    if (opt.lr_grid.empty()) throw ConfigError("sweep: lr grid is empty");
    if (opt.widths.empty()) throw ConfigError("sweep: widths list is empty");
    ensure_dir(opt.output_dir);

    const SweepResult res = run_sweep(opt.proto, opt.lr_grid, opt.widths, opt.repeats,
                                      opt.threads);

    std::string csv = "width,base_lr,batch,steps,repeats,failures,mean_val_loss\n";
    for (const SweepRow& row : res.rows) {
        csv += std::to_string(row.width) + ',' + format_double(row.base_lr) + ',' +
               std::to_string(row.batch) + ',' + std::to_string(row.steps) + ',' +
               std::to_string(row.repeats) + ',' + std::to_string(row.failures) + ',' +
               format_double(row.mean_val_loss) + '\n';
    }
    write_text(opt.output_dir + "/sweep.csv", csv);

    json argmin;
    for (const auto& [width, index] : res.argmin_index_by_width) {
        argmin[std::to_string(width)] = {{"lr_index", index},
                                         {"base_lr", res.argmin_lr_by_width.at(width)}};
        std::cout << "width " << width << ": best base_lr " << res.argmin_lr_by_width.at(width)
                  << " (grid index " << index << ")\n";
    }
    write_text(opt.output_dir + "/argmin.json", argmin.dump(2) + "\n");
    return kExitOk;
}

int cmd_report(const std::string& trace_path) {
    const std::vector<DynamicsRecord> trace = read_trace_csv(trace_path);

    const fs::path run_json = fs::path(trace_path).parent_path() / "run.json";
    std::ifstream in(run_json);
    if (!in) throw IoError("report: cannot open " + run_json.string());
    json manifest;
    try {
        in >> manifest;
    } catch (const json::exception& e) {
        throw IoError("report: bad run.json: " + std::string(e.what()));
    }

    BandSpec band;
    for (const json& p : manifest.at("params")) {
        band.reference[p.at("name").get<std::string>()] = p.at("lr_multiplier").get<double>();
    }
    ScheduleConfig sched;
    sched.total_steps = manifest.at("schedule").at("total_steps").get<long>();
    sched.warmup_steps = manifest.at("schedule").at("warmup_steps").get<long>();
    sched.cooldown_start_fraction =
        manifest.at("schedule").at("cooldown_start_fraction").get<double>();
    sched.base_lr = manifest.at("schedule").at("base_lr").get<double>();
    band.schedule = sched;

    const auto report = band_report(trace, band);
    const std::string out_path =
        (fs::path(trace_path).parent_path() / "band.json").string();
    write_text(out_path, band_report_json(report) + "\n");

    int escaped = 0;
    for (const auto& [name, result] : report) {
        switch (result.status) {
            case BandStatus::InBand:
                std::cout << name << ": in band\n";
                break;
            case BandStatus::Exempt:
                std::cout << name << ": exempt\n";
                break;
            case BandStatus::Escaped:
                std::cout << name << ": ESCAPED at step " << result.escape_step << "\n";
                ++escaped;
                break;
        }
    }
    std::cout << (escaped == 0 ? "all monitored parameters in band\n"
                               : std::to_string(escaped) + " parameter(s) escaped\n");
    return kExitOk;
}

int cmd_ema_combine(const EmaCombineOptions& opt) {
    if (opt.checkpoint_dirs.empty()) throw ConfigError("ema-combine: no checkpoints given");
    if (opt.output_dir.empty()) throw ConfigError("ema-combine: output_dir is required");

    std::vector<Checkpoint> checkpoints;
    for (const std::string& dir : opt.checkpoint_dirs) {
        checkpoints.push_back(load_checkpoint(dir));
    }
    const EmaResult res = ema_combine(checkpoints, opt.alpha);
    ensure_dir(opt.output_dir);
    save_checkpoint(opt.output_dir, res.combined, /*with_moments=*/false);

    json table;
    table["alpha"] = opt.alpha;
    json entries = json::array();
    for (std::size_t i = 0; i < res.weights.size(); ++i) {
        entries.push_back({{"dir", opt.checkpoint_dirs[i]},
                           {"step", res.weights[i].step},
                           {"beta", res.weights[i].beta},
                           {"weight", res.weights[i].weight}});
    }
    table["entries"] = entries;
    write_text(opt.output_dir + "/ema_weights.json", table.dump(2) + "\n");

    std::cout << "ema-combine: " << checkpoints.size() << " checkpoints -> " << opt.output_dir
              << "\n";
    return kExitOk;
}

int cmd_cluster(const ClusterOptions& opt) {
    if (opt.input_dmat.empty()) throw ConfigError("cluster: input DMAT path is required");
    if (opt.output_dir.empty()) throw ConfigError("cluster: output_dir is required");
    if (opt.k < 1) throw ConfigError("cluster: k must be >= 1");
    ensure_dir(opt.output_dir);

    const DenseMatrix x = dmat_read(opt.input_dmat);
    KmeansConfig cfg;
    cfg.k = opt.k;
    cfg.batch_size = opt.batch_size;
    cfg.epochs = opt.epochs;
    cfg.threads = thread_budget(opt.threads);
    RngStream rng(opt.seed);
    const FitResult res = fit(x, cfg, rng);

    std::string csv = "row_index,cluster\n";
    for (std::size_t i = 0; i < res.assignments.size(); ++i) {
        csv += std::to_string(i) + ',' + std::to_string(res.assignments[i]) + '\n';
    }
    write_text(opt.output_dir + "/assignments.csv", csv);
    dmat_write(opt.output_dir + "/centroids.dmat", res.state.centroids);

    json stats;
    stats["inertia"] = res.inertia;
    stats["k"] = opt.k;
    stats["rows"] = x.rows;
    stats["dim"] = x.cols;
    stats["iterations"] = res.state.iteration;
    json events = json::array();
    for (const MaintenanceEvent& ev : res.events) {
        events.push_back(
            {{"iteration", ev.iteration},
             {"type", ev.type == MaintenanceEvent::Type::Reseed ? "reseed" : "split"},
             {"cluster", ev.cluster},
             {"source_cluster", ev.source_cluster}});
    }
    stats["events"] = events;
    write_text(opt.output_dir + "/stats.json", stats.dump(2) + "\n");

    std::cout << "cluster: " << x.rows << " points, k=" << opt.k << ", inertia=" << res.inertia
              << ", events=" << res.events.size() << "\n";
    return kExitOk;
}

int cmd_rope_dump(const RopeDumpOptions& opt) {
    if (opt.output_csv.empty()) throw ConfigError("rope-dump: output path is required");
    const RopeLayerSpec spec = build_layer_spec(opt.bands, opt.seed);
    std::string csv = "band,x,y,z,omega,masked\n";
    for (int i = 0; i < spec.n_bands(); ++i) {
        csv += std::to_string(i) + ',' + format_double(spec.axes[i][0]) + ',' +
               format_double(spec.axes[i][1]) + ',' + format_double(spec.axes[i][2]) + ',' +
               format_double(spec.freqs[i]) + ',' + (spec.zero_mask[i] ? "1" : "0") + '\n';
    }
    write_text(opt.output_csv, csv);
    std::cout << "rope-dump: " << spec.n_bands() << " bands -> " << opt.output_csv << "\n";
    return kExitOk;
}

int cmd_coordcheck(const CoordCheckOptions& opt) {
    if (opt.output_csv.empty()) throw ConfigError("coordcheck: output path is required");
    if (opt.widths.size() < 1) throw ConfigError("coordcheck: need at least one width");

    const CoordCheckResult res =
        coordinate_check(opt.widths, opt.steps, opt.proto, opt.proto.seed);
    std::string csv = "width,step,activation_rms\n";
    for (const CoordRow& row : res.rows) {
        csv += std::to_string(row.width) + ',' + std::to_string(row.step) + ',' +
               format_double(row.activation_rms) + '\n';
    }
    write_text(opt.output_csv, csv);
    for (const auto& [width, diverged] : res.diverged) {
        if (diverged) std::cout << "coordcheck: width " << width << " diverged\n";
    }
    std::cout << "coordcheck: wrote " << res.rows.size() << " rows -> " << opt.output_csv << "\n";
    return kExitOk;
}

}  // namespace spheretrain
