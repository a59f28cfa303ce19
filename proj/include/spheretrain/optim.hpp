#pragma once

#include <string>
#include <vector>

#include "spheretrain/manifold.hpp"
#include "spheretrain/numcore.hpp"

namespace spheretrain {

enum class ParamKind {
    NormPreserving,  // 2D linear weight, rows constrained to the unit sphere
    Standard,        // everything else: plain AdamW without projection/retraction
};

std::string to_string(ParamKind kind);
ParamKind param_kind_from_string(const std::string& s);

// Named parameter plus its optimizer state. Moments share the value's shape;
// for norm-preserving parameters they are built from tangent-projected
// gradients only.
struct ParamTensor {
    std::string name;
    DenseMatrix value;
    ParamKind kind = ParamKind::Standard;
    double lr_multiplier = 0.0;
    bool zero_init = false;  // set by the rule system; consumed at model init
    DenseMatrix m;
    DenseMatrix v;

    ParamTensor() = default;
    ParamTensor(std::string name_, DenseMatrix value_, ParamKind kind_);
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    long step = 0;  // completed steps; bias correction uses step+1
};

struct ScheduleConfig {
    long total_steps = 0;
    long warmup_steps = 0;
    double cooldown_start_fraction = 0.98;
    double base_lr = 0.01;
};

// NormPreserving iff the parameter is a 2D weight owned by a linear layer and
// its name does not mark it as one of the unconstrained exceptions
// (final_proj, modulation.2, dconv.weight), which keep free scale.
ParamKind classify_param(const std::string& name, int n_dims, bool owner_is_linear);

struct StepResult {
    bool applied = true;
    std::string diagnostic;  // set when the step was rejected
};

// One AdamW step at learning rate lr. NormPreserving rows are tangent-projected
// (moments see only the projected gradient), stepped, and retracted; Standard
// parameters take the plain update. Non-finite gradients reject the step and
// leave all state untouched. No weight decay anywhere: the sphere constraint
// replaces it.
StepResult adam_step(ParamTensor& p, const DenseMatrix& grad, double lr, AdamConfig& cfg);

// Same update on unbundled storage; the trainer steps weights in place.
StepResult adam_step_raw(DenseMatrix& value, DenseMatrix& m, DenseMatrix& v, ParamKind kind,
                         const DenseMatrix& grad, double lr, AdamConfig& cfg,
                         const std::string& name = "");

// Warmup/constant/cooldown schedule value at a step. Linear ramp 0 -> base
// over warmup_steps, flat base, then linear decay to 0 starting at
// cooldown_start_fraction * total_steps.
double lr_at(long step, const ScheduleConfig& sched);

// A saved parameter set: step number plus named tensors.
struct Checkpoint {
    long step = 0;
    std::vector<ParamTensor> params;
};

// Directory checkpoint: manifest.json (names, kinds, shapes, step) plus one
// DMAT file each for value/m/v. with_moments=false writes values only
// (combined/averaged checkpoints have no meaningful moments).
void save_checkpoint(const std::string& dir, const Checkpoint& ckpt, bool with_moments = true);
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace spheretrain
