#pragma once

#include <string>
#include <vector>

#include "spheretrain/trainer.hpp"

namespace spheretrain {

// Exit code contract, stable across releases.
enum ExitCode {
    kExitOk = 0,
    kExitUsage = 1,
    kExitNumerical = 2,
    kExitIo = 3,
};

// Trains on the synthetic task and writes trace.csv, run.json, and a
// checkpoint/ directory under cfg.output_dir. Byte-identical artifacts for
// identical config and seed. Returns kExitNumerical on divergence.
int cmd_train(const ExperimentConfig& cfg);

struct SweepOptions {
    ExperimentConfig proto;
    std::vector<double> lr_grid;
    std::vector<int> widths;
    int repeats = 1;
    int threads = 1;
    std::string output_dir;
};

// Runs the width x lr grid, writes sweep.csv and argmin.json.
int cmd_sweep(const SweepOptions& opt);

// Reads a dynamics trace (plus the run.json beside it for references and the
// schedule), writes band.json, and prints one line per parameter.
int cmd_report(const std::string& trace_path);

struct EmaCombineOptions {
    std::vector<std::string> checkpoint_dirs;
    double alpha = 6.22;
    std::string output_dir;
};

int cmd_ema_combine(const EmaCombineOptions& opt);

struct ClusterOptions {
    std::string input_dmat;
    int k = 8;
    int batch_size = 1024;
    std::uint64_t seed = 0;
    int epochs = 3;
    int threads = 1;
    std::string output_dir;
};

// Clusters embedding rows; writes assignments.csv, centroids.dmat, stats.json.
int cmd_cluster(const ClusterOptions& opt);

struct RopeDumpOptions {
    int bands = 32;
    std::uint64_t seed = 0;
    std::string output_csv;
};

// Emits band,x,y,z,omega,masked rows for sphere-coverage plots.
int cmd_rope_dump(const RopeDumpOptions& opt);

struct CoordCheckOptions {
    ExperimentConfig proto;
    std::vector<int> widths;
    long steps = 50;
    std::string output_csv;
};

int cmd_coordcheck(const CoordCheckOptions& opt);

}  // namespace spheretrain
