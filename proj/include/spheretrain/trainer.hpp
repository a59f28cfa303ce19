#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "spheretrain/block.hpp"
#include "spheretrain/mup.hpp"
#include "spheretrain/optim.hpp"

namespace spheretrain {

// Batch experiment driver for the toy tasks: a depth-L stack of parallel
// blocks trained with the constrained optimizer under the muP rules.

enum class TaskKind {
    SyntheticDenoise,     // input = clean + t * noise, target = clean * T^t
    SyntheticRegression,  // input = clean, target = clean * T^t, t fixed at 0
};

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

struct ExperimentConfig {
    TaskKind task = TaskKind::SyntheticDenoise;
    int width = 32;
    int depth = 2;
    long steps = 100;
    int batch = 8;
    double base_lr = 0.01;
    std::uint64_t seed = 0;
    std::string output_dir;

    // Token grid for the synthetic tasks (tokens = t * h * w).
    int grid_t = 2;
    int grid_h = 2;
    int grid_w = 4;

    long warmup_steps = -1;  // -1: steps / 10
    double cooldown_start_fraction = 0.98;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double adam_eps = 1e-8;
    GateOffsetMode offset_mode = GateOffsetMode::InverseSqrtDepth;
    int record_every = 1;
    int eval_items = 32;
};

void validate(const ExperimentConfig& cfg);

// One draw of the synthetic task: token matrix, timestep, regression target.
struct TaskSample {
    DenseMatrix input;
    double t = 0.0;
    DenseMatrix target;
};

struct SyntheticTask {
    TaskKind kind = TaskKind::SyntheticDenoise;
    int tokens = 0;
    int dim = 0;
    DenseMatrix target_map;  // fixed random linear map, not trained
    std::vector<Position3> positions;

    TaskSample sample(RngStream& rng) const;
};

SyntheticTask make_task(const ExperimentConfig& cfg, RngStream task_rng);

struct TrainResult {
    double initial_loss = 0.0;
    double final_train_loss = 0.0;
    double val_loss = 0.0;
    bool diverged = false;
    long steps_run = 0;
    long rejected_steps = 0;
    std::vector<DynamicsRecord> trace;
    // Mean block-output RMS per step; index 0 is at init, before any update.
    std::vector<double> activation_rms_by_step;
    std::map<std::string, double> lr_multipliers;
    ScheduleConfig schedule;
    Checkpoint final_checkpoint;
};

TrainResult train(const ExperimentConfig& cfg);

// Coordinate check: hidden-activation RMS by (width, step); step 0 is the
// init-time forward. Divergence is reported per width, not fatal.
struct CoordRow {
    int width = 0;
    long step = 0;
    double activation_rms = 0.0;
};

struct CoordCheckResult {
    std::vector<CoordRow> rows;
    std::map<int, bool> diverged;
};

CoordCheckResult coordinate_check(const std::vector<int>& widths, long steps,
                                  const ExperimentConfig& proto, std::uint64_t seed);

// Learning-rate sweep over a width x lr grid, repeats averaged by seed.
struct SweepRow {
    int width = 0;
    double base_lr = 0.0;
    int batch = 0;
    long steps = 0;
    int repeats = 0;
    int failures = 0;          // diverged or rejected-to-death runs
    double mean_val_loss = 0;  // +inf when any repeat failed
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::map<int, std::size_t> argmin_index_by_width;  // into the lr grid
    std::map<int, double> argmin_lr_by_width;
};

SweepResult run_sweep(const ExperimentConfig& proto, const std::vector<double>& lr_grid,
                      const std::vector<int>& widths, int repeats, int threads);

}  // namespace spheretrain
