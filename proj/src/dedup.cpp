#include "spheretrain/dedup.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spheretrain {

namespace {

std::vector<double> row_sqnorms(const DenseMatrix& m) {
    std::vector<double> out(m.rows);
    for (int i = 0; i < m.rows; ++i) out[i] = dot(m.row(i), m.row(i), m.cols);
    return out;
}

// Partial Fisher-Yates: n_take distinct indices from [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t n_take,
                                                    RngStream& rng) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < n_take; ++i) {
        const std::size_t j = i + rng.index(n - i);
        std::swap(idx[i], idx[j]);
    }
    idx.resize(n_take);
    return idx;
}

DenseMatrix gather_rows(const DenseMatrix& x, const std::vector<std::size_t>& idx) {
    DenseMatrix out(static_cast<int>(idx.size()), x.cols);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy(x.row(static_cast<int>(idx[i])), x.row(static_cast<int>(idx[i])) + x.cols,
                  out.row(static_cast<int>(i)));
    }
    return out;
}

}  // namespace

DenseMatrix pairwise_sqdist(const DenseMatrix& a, const DenseMatrix& b, int threads) {
    require(a.cols == b.cols, "pairwise_sqdist: dimension mismatch");
    const std::vector<double> na = row_sqnorms(a);
    const std::vector<double> nb = row_sqnorms(b);
    DenseMatrix d2(a.rows, b.rows);
    parallel_for(static_cast<std::size_t>(a.rows), threads,
                 [&](std::size_t begin, std::size_t end) {
                     for (std::size_t i = begin; i < end; ++i) {
                         const double* arow = a.row(static_cast<int>(i));
                         double* drow = d2.row(static_cast<int>(i));
                         for (int j = 0; j < b.rows; ++j) {
                             const double g = dot(arow, b.row(j), a.cols);
                             drow[j] = std::max(0.0, na[i] + nb[j] - 2.0 * g);
                         }
                     }
                 });
    return d2;
}

std::vector<int> assign_nearest(const DenseMatrix& x, const DenseMatrix& centroids,
                                int threads) {
    require(x.cols == centroids.cols, "assign_nearest: dimension mismatch");
    require(centroids.rows >= 1, "assign_nearest: no centroids");
    const std::vector<double> nc = row_sqnorms(centroids);
    std::vector<int> out(x.rows);
    parallel_for(static_cast<std::size_t>(x.rows), threads,
                 [&](std::size_t begin, std::size_t end) {
                     for (std::size_t i = begin; i < end; ++i) {
                         const double* xr = x.row(static_cast<int>(i));
                         int best = 0;
                         double best_d = std::numeric_limits<double>::infinity();
                         for (int k = 0; k < centroids.rows; ++k) {
                             const double d = nc[k] - 2.0 * dot(xr, centroids.row(k), x.cols);
                             if (d < best_d) {
                                 best_d = d;
                                 best = k;
                             }
                         }
                         out[i] = best;
                     }
                 });
    return out;
}

double inertia(const DenseMatrix& x, const DenseMatrix& centroids, int threads) {
    require(x.cols == centroids.cols, "inertia: dimension mismatch");
    const std::vector<double> nx = row_sqnorms(x);
    const std::vector<double> nc = row_sqnorms(centroids);
    std::vector<double> per_point(x.rows);
    parallel_for(static_cast<std::size_t>(x.rows), threads,
                 [&](std::size_t begin, std::size_t end) {
                     for (std::size_t i = begin; i < end; ++i) {
                         const double* xr = x.row(static_cast<int>(i));
                         double best = std::numeric_limits<double>::infinity();
                         for (int k = 0; k < centroids.rows; ++k) {
                             const double d =
                                 nx[i] + nc[k] - 2.0 * dot(xr, centroids.row(k), x.cols);
                             best = std::min(best, d);
                         }
                         per_point[i] = std::max(0.0, best);
                     }
                 });
    // Point-order reduction keeps the value independent of thread count.
    double total = 0.0;
    for (double d : per_point) total += d;
    return total;
}

DenseMatrix kmeanspp_init(const DenseMatrix& x, int k, RngStream& rng, int threads) {
    require(k >= 1, "kmeanspp_init: k must be >= 1");
    require(x.rows >= k, "kmeanspp_init: fewer points than clusters");

    DenseMatrix centroids(k, x.cols);
    const std::size_t first = rng.index(static_cast<std::size_t>(x.rows));
    std::copy(x.row(static_cast<int>(first)), x.row(static_cast<int>(first)) + x.cols,
              centroids.row(0));

    std::vector<double> d2(x.rows);
    auto refresh = [&](int new_centroid) {
        const double* c = centroids.row(new_centroid);
        parallel_for(static_cast<std::size_t>(x.rows), threads,
                     [&](std::size_t begin, std::size_t end) {
                         for (std::size_t i = begin; i < end; ++i) {
                             const double* xr = x.row(static_cast<int>(i));
                             double acc = 0.0;
                             for (int j = 0; j < x.cols; ++j) {
                                 const double diff = xr[j] - c[j];
                                 acc += diff * diff;
                             }
                             if (new_centroid == 0 || acc < d2[i]) d2[i] = acc;
                         }
                     });
    };
    refresh(0);

    for (int c = 1; c < k; ++c) {
        double total = 0.0;
        for (double d : d2) total += d;
        if (!(total > 0.0)) {
            throw ConfigError("kmeanspp_init: fewer than k distinct points");
        }
        const double u = rng.uniform01() * total;
        double acc = 0.0;
        std::size_t pick = static_cast<std::size_t>(x.rows) - 1;
        for (std::size_t i = 0; i < d2.size(); ++i) {
            acc += d2[i];
            if (u < acc) {
                pick = i;
                break;
            }
        }
        std::copy(x.row(static_cast<int>(pick)), x.row(static_cast<int>(pick)) + x.cols,
                  centroids.row(c));
        refresh(c);
    }
    return centroids;
}

DenseMatrix lloyd(const DenseMatrix& x, DenseMatrix centroids, int iters, int threads) {
    require(x.cols == centroids.cols, "lloyd: dimension mismatch");
    const int k = centroids.rows;
    std::vector<int> prev;
    for (int it = 0; it < iters; ++it) {
        std::vector<int> assign = assign_nearest(x, centroids, threads);
        if (assign == prev) break;  // fixed point
        DenseMatrix sums(k, x.cols);
        std::vector<double> cnt(k, 0.0);
        for (int i = 0; i < x.rows; ++i) {
            double* srow = sums.row(assign[i]);
            const double* xr = x.row(i);
            for (int j = 0; j < x.cols; ++j) srow[j] += xr[j];
            cnt[assign[i]] += 1.0;
        }
        for (int c = 0; c < k; ++c) {
            if (cnt[c] == 0.0) continue;  // empty cluster keeps its centroid
            double* crow = centroids.row(c);
            const double inv = 1.0 / cnt[c];
            for (int j = 0; j < x.cols; ++j) crow[j] = sums(c, j) * inv;
        }
        prev = std::move(assign);
    }
    return centroids;
}

DenseMatrix bf_init(const DenseMatrix& x, const KmeansConfig& cfg, RngStream& rng) {
    require(cfg.k >= 1 && cfg.subsamples >= 1, "bf_init: k and subsamples must be >= 1");
    require(cfg.subsample_fraction > 0.0 && cfg.subsample_fraction <= 1.0,
            "bf_init: subsample_fraction in (0, 1]");
    require(x.rows >= cfg.k, "bf_init: fewer points than clusters");

    const DenseMatrix seed = kmeanspp_init(x, cfg.k, rng, cfg.threads);

    const std::size_t n = static_cast<std::size_t>(x.rows);
    const std::size_t sample_size = std::min(
        n, std::max(static_cast<std::size_t>(cfg.k),
                    static_cast<std::size_t>(
                        std::ceil(cfg.subsample_fraction * static_cast<double>(n)))));

    DenseMatrix pool(cfg.subsamples * cfg.k, x.cols);
    for (int j = 0; j < cfg.subsamples; ++j) {
        const auto idx = sample_without_replacement(n, sample_size, rng);
        const DenseMatrix sample = gather_rows(x, idx);
        const DenseMatrix cj = lloyd(sample, seed, cfg.sample_iters, cfg.threads);
        std::copy(cj.data.begin(), cj.data.end(), pool.row(j * cfg.k));
    }

    // Best of J random restarts on the pooled candidates.
    DenseMatrix best;
    double best_inertia = std::numeric_limits<double>::infinity();
    for (int r = 0; r < cfg.subsamples; ++r) {
        const auto idx =
            sample_without_replacement(static_cast<std::size_t>(pool.rows), cfg.k, rng);
        DenseMatrix restart = lloyd(pool, gather_rows(pool, idx), 100, cfg.threads);
        const double in = inertia(pool, restart, cfg.threads);
        if (in < best_inertia) {
            best_inertia = in;
            best = std::move(restart);
        }
    }
    return best;
}

void minibatch_step(ClusterState& state, const DenseMatrix& batch, int threads) {
    require(batch.rows >= 1, "minibatch_step: empty batch");
    require(batch.cols == state.centroids.cols, "minibatch_step: dimension mismatch");
    const int k = state.centroids.rows;
    require(static_cast<int>(state.counts.size()) == k, "minibatch_step: counts size mismatch");

    const std::vector<int> assign = assign_nearest(batch, state.centroids, threads);
    DenseMatrix sums(k, batch.cols);
    std::vector<double> nb(k, 0.0);
    for (int i = 0; i < batch.rows; ++i) {
        double* srow = sums.row(assign[i]);
        const double* xr = batch.row(i);
        for (int j = 0; j < batch.cols; ++j) srow[j] += xr[j];
        nb[assign[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c) {
        if (nb[c] == 0.0) continue;
        const double eta = nb[c] / (state.counts[c] + nb[c]);
        double* crow = state.centroids.row(c);
        const double inv = 1.0 / nb[c];
        for (int j = 0; j < batch.cols; ++j) {
            const double xbar = sums(c, j) * inv;
            crow[j] += eta * (xbar - crow[j]);
        }
        state.counts[c] += nb[c];
    }
    state.iteration += 1;
}

std::vector<MaintenanceEvent> maintain(ClusterState& state, const DenseMatrix& batch,
                                       const KmeansConfig& cfg, RngStream& rng) {
    require(batch.rows >= 1, "maintain: empty batch");
    const int k = state.centroids.rows;
    std::vector<MaintenanceEvent> events;

    // Thresholds come from the counts as they stand when maintenance runs.
    const std::vector<double> entering = state.counts;
    const double max_n = *std::max_element(entering.begin(), entering.end());
    const double mean_n =
        std::accumulate(entering.begin(), entering.end(), 0.0) / static_cast<double>(k);

    std::vector<int> reseeded;
    for (int c = 0; c < k; ++c) {
        if (!(entering[c] < cfg.dead_threshold_factor * max_n)) continue;
        // Furthest-from-all = maximin distance over the batch, recomputed so
        // each reseed sees the centroids placed before it.
        const DenseMatrix d2 = pairwise_sqdist(batch, state.centroids, cfg.threads);
        int far_point = 0;
        double far_dist = -1.0;
        for (int i = 0; i < batch.rows; ++i) {
            double nearest = std::numeric_limits<double>::infinity();
            for (int j = 0; j < k; ++j) nearest = std::min(nearest, d2(i, j));
            if (nearest > far_dist) {
                far_dist = nearest;
                far_point = i;
            }
        }
        std::copy(batch.row(far_point), batch.row(far_point) + batch.cols,
                  state.centroids.row(c));
        reseeded.push_back(c);
        events.push_back({state.iteration, MaintenanceEvent::Type::Reseed, c, -1});
    }

    // Split oversized clusters. Member lookup uses one assignment snapshot
    // against the post-reseed centroids.
    std::vector<int> split_candidates;
    for (int c = 0; c < k; ++c) {
        if (entering[c] > cfg.split_factor * mean_n) split_candidates.push_back(c);
    }
    if (!split_candidates.empty()) {
        const std::vector<int> assign = assign_nearest(batch, state.centroids, cfg.threads);
        for (int donor : split_candidates) {
            std::vector<int> members;
            for (int i = 0; i < batch.rows; ++i) {
                if (assign[i] == donor) members.push_back(i);
            }
            if (members.empty()) continue;
            int slot = -1;
            while (!reseeded.empty()) {
                const int cand = reseeded.back();
                reseeded.pop_back();
                if (cand != donor) {
                    slot = cand;
                    break;
                }
            }
            if (slot < 0) {
                double lowest = std::numeric_limits<double>::infinity();
                for (int c = 0; c < k; ++c) {
                    if (c == donor) continue;
                    if (state.counts[c] < lowest) {
                        lowest = state.counts[c];
                        slot = c;
                    }
                }
            }
            if (slot < 0) continue;  // k == 1: nowhere to put the split
            const int pick = members[rng.index(members.size())];
            std::copy(batch.row(pick), batch.row(pick) + batch.cols, state.centroids.row(slot));
            const double half = state.counts[donor] / 2.0;
            state.counts[donor] = half;
            state.counts[slot] = half;
            events.push_back({state.iteration, MaintenanceEvent::Type::Split, slot, donor});
        }
    }
    return events;
}

FitResult fit_from(const DenseMatrix& x, DenseMatrix centroids, const KmeansConfig& cfg,
                   RngStream& rng) {
    require(x.rows >= 1, "fit: empty data");
    FitResult res;
    res.state.centroids = std::move(centroids);
    res.state.counts.assign(res.state.centroids.rows, 0.0);
    res.state.iteration = 0;

    std::vector<std::size_t> order(x.rows);
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.index(i)]);
        }
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            const DenseMatrix batch = gather_rows(
                x, std::vector<std::size_t>(order.begin() + start, order.begin() + end));
            minibatch_step(res.state, batch, cfg.threads);
            if (res.state.iteration % cfg.maintenance_period == 0) {
                auto ev = maintain(res.state, batch, cfg, rng);
                res.events.insert(res.events.end(), ev.begin(), ev.end());
            }
        }
    }

    res.assignments = assign_nearest(x, res.state.centroids, cfg.threads);
    res.inertia = inertia(x, res.state.centroids, cfg.threads);
    return res;
}

FitResult fit(const DenseMatrix& x, const KmeansConfig& cfg, RngStream& rng) {
    return fit_from(x, bf_init(x, cfg, rng), cfg, rng);
}

}  // namespace spheretrain
