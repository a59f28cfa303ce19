#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "spheretrain/optim.hpp"

namespace spheretrain {

// Per-parameter learning-rate formulas. Width means fan-in of the matrix.
enum class LrFormula {
    MatrixFull,     // base_lr / fan_in        (input/output weight matrices)
    MatrixReduced,  // 0.1 * base_lr / fan_in  (intermediate block matrices)
    Fixed,          // 0.01 * base_lr          (biases, scalars, pos embeddings)
};

struct MupRule {
    std::string pattern;  // glob over the canonical parameter path, first match wins
    LrFormula formula = LrFormula::Fixed;
    bool zero_init = false;
};

struct MupRuleSet {
    double base_lr = 0.01;
    int width = 0;
    std::vector<MupRule> rules;
};

// The rule table for the parallel-block toy model. Unified input projections
// take the full matrix rate; everything else inside a block is intermediate.
// Modulation outputs, block output projections, and positional embeddings are
// flagged zero-init. Ends in a catch-all so every name matches.
std::vector<MupRule> default_mup_rules();

// Glob match with '*' (any run) and '?' (any one char).
bool glob_match(const std::string& pattern, const std::string& name);

// Sets lr_multiplier and zero_init on every parameter from the first matching
// rule. Throws ConfigError if some parameter matches no rule.
MupRuleSet assign_rules(std::vector<ParamTensor>& params, int width, double base_lr,
                        const std::vector<MupRule>& rules = default_mup_rules());

// Multiplier/zero-init decision for a single parameter; fan_in is the matrix
// fan-in (ignored by the Fixed formula).
struct RuleDecision {
    double lr_multiplier = 0.0;
    bool zero_init = false;
    int rule_index = -1;
};
RuleDecision decide_rule(const std::string& name, int fan_in, double base_lr,
                         const std::vector<MupRule>& rules);

// Empirical transfer law: lr * sqrt(batch/batch_ref) * sqrt(steps_ref/steps).
double scale_lr(double base_lr, long batch, long batch_ref, long steps, long steps_ref);

// Per-parameter statistics captured at one training step.
struct ParamDynamics {
    double grad_norm = 0.0;
    double weight_norm = 0.0;
    double update_rms = 0.0;
    double activation_rms = 0.0;
};

struct DynamicsRecord {
    long step = 0;
    std::map<std::string, ParamDynamics> per_param;
};

enum class BandStatus { InBand, Escaped, Exempt };

struct BandResult {
    BandStatus status = BandStatus::InBand;
    long escape_step = -1;
};

// The muP band: update_rms of a healthy parameter should stay within
// [lower*ref, upper*ref] where ref is its predicted update magnitude,
// lr_multiplier scaled by the schedule when one is attached.
struct BandSpec {
    double lower_factor = 0.2;
    double upper_factor = 5.0;
    std::map<std::string, double> reference;  // per-param predicted update_rms at full lr
    std::optional<ScheduleConfig> schedule;   // scales reference by lr_at(step)/base_lr
};

// Walks the trace in step order; a parameter escapes at the first step its
// update_rms leaves the band. Modulation and lambda parameters are expected
// exceptions and always come back Exempt.
std::map<std::string, BandResult> band_report(const std::vector<DynamicsRecord>& trace,
                                              const BandSpec& band);

bool band_exempt_name(const std::string& name);

// Trace CSV: header then one row per (step, param):
// step,param,grad_norm,weight_norm,update_rms,activation_rms
void write_trace_csv(const std::string& path, const std::vector<DynamicsRecord>& trace);
std::vector<DynamicsRecord> read_trace_csv(const std::string& path);

// Band report JSON: array of {param, status, escape_step?}.
std::string band_report_json(const std::map<std::string, BandResult>& report);

// Shortest round-trip decimal form; locale-independent. Used for every double
// we serialize so artifacts are byte-stable.
std::string format_double(double v);

}  // namespace spheretrain
