#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spheretrain/optim.hpp"

namespace spheretrain {

// Post-hoc checkpoint averaging under the power-law schedule: the weight of
// the checkpoint saved at step t is beta(t) = (1 - 1/(t+1))^(1+alpha),
// normalized over the list so the result is a convex combination.

double ema_beta(long t, double alpha);

struct EmaWeight {
    long step = 0;
    double beta = 0.0;
    double weight = 0.0;  // normalized
};

struct EmaResult {
    Checkpoint combined;
    std::vector<EmaWeight> weights;  // in input order
};

// Averages parameter values across checkpoints. Norm-preserving parameters
// are averaged in ambient space and re-retracted row-wise (a convex
// combination leaves the sphere). Moments are not averaged.
EmaResult ema_combine(const std::vector<Checkpoint>& checkpoints, double alpha);

struct AlphaSweepEntry {
    double alpha = 0.0;
    double loss = 0.0;
    bool failed = false;
    std::string error;
};

struct AlphaSweepResult {
    double best_alpha = 0.0;
    std::vector<AlphaSweepEntry> table;
};

// Combines at each alpha and evaluates; returns the argmin by validation
// loss. Eval failures are recorded and that alpha excluded.
AlphaSweepResult sweep_alpha(const std::vector<Checkpoint>& checkpoints,
                             const std::vector<double>& alphas,
                             const std::function<double(const Checkpoint&)>& eval);

}  // namespace spheretrain
