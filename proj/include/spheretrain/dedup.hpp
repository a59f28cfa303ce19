#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spheretrain/numcore.hpp"

namespace spheretrain {

// Mini-batch k-means with Bradley-Fayyad initialization and dead/oversized
// cluster maintenance, used for embedding deduplication. All distance work
// runs through one batched kernel; the assignment phase parallelizes over
// points and updates reduce in point order, so results are independent of
// thread count.

struct ClusterState {
    DenseMatrix centroids;       // K x dim
    std::vector<double> counts;  // historical points seen per cluster
    long iteration = 0;
};

struct KmeansConfig {
    int k = 8;
    int subsamples = 8;               // J
    double subsample_fraction = 0.01;
    int sample_iters = 20;
    int batch_size = 1024;
    int maintenance_period = 10;
    double dead_threshold_factor = 0.01;
    double split_factor = 12.0;
    int epochs = 3;  // mini-batch passes over the data
    int threads = 1;
};

struct MaintenanceEvent {
    enum class Type { Reseed, Split };
    long iteration = 0;
    Type type = Type::Reseed;
    int cluster = 0;          // slot that received a new centroid
    int source_cluster = -1;  // donor (splits only)
};

// Squared distances ||a_i - b_j||^2 via the ||a||^2 + ||b||^2 - 2 a.b
// expansion, clamped at 0. One matmul carries the whole computation.
DenseMatrix pairwise_sqdist(const DenseMatrix& a, const DenseMatrix& b, int threads = 1);

// Index of the nearest centroid per point; ties break to the lowest index.
std::vector<int> assign_nearest(const DenseMatrix& x, const DenseMatrix& centroids,
                                int threads = 1);

// Sum of squared distances to the nearest centroid.
double inertia(const DenseMatrix& x, const DenseMatrix& centroids, int threads = 1);

// K-means++ seeding. Fails if X holds fewer than k distinct points.
DenseMatrix kmeanspp_init(const DenseMatrix& x, int k, RngStream& rng, int threads = 1);

// Full-batch Lloyd iterations from the given centroids; empty clusters keep
// their centroid.
DenseMatrix lloyd(const DenseMatrix& x, DenseMatrix centroids, int iters, int threads = 1);

// Bradley-Fayyad refinement: k-means++ seed, J warm-started subsample
// clusterings, pool the J*K candidates, keep the best of J restarts on the
// pool by pooled inertia.
DenseMatrix bf_init(const DenseMatrix& x, const KmeansConfig& cfg, RngStream& rng);

// One mini-batch update: assign, then move each touched centroid toward its
// batch mean with the adaptive rate eta = n_batch / (n_k + n_batch).
void minibatch_step(ClusterState& state, const DenseMatrix& batch, int threads = 1);

// Dead-cluster reseed (to the batch point furthest from all centroids, by
// maximin distance) and oversized-cluster split (new centroid at a random
// batch member of the donor; the donor's count is halved between the two).
// K stays fixed: splits reuse slots reseeded in this pass, else the
// lowest-count slot.
std::vector<MaintenanceEvent> maintain(ClusterState& state, const DenseMatrix& batch,
                                       const KmeansConfig& cfg, RngStream& rng);

struct FitResult {
    ClusterState state;
    std::vector<int> assignments;
    double inertia = 0.0;
    std::vector<MaintenanceEvent> events;
};

// bf_init, then cfg.epochs passes of shuffled mini-batches with maintenance
// every maintenance_period iterations. Deterministic given (x, cfg, seed).
FitResult fit(const DenseMatrix& x, const KmeansConfig& cfg, RngStream& rng);

// Mini-batch phase only, from explicit starting centroids (exposed for the
// adversarial-init and maintenance tests).
FitResult fit_from(const DenseMatrix& x, DenseMatrix centroids, const KmeansConfig& cfg,
                   RngStream& rng);

}  // namespace spheretrain
