#pragma once

#include <cstdint>
#include <vector>

#include "spheretrain/numcore.hpp"
#include "spheretrain/rope3d.hpp"

namespace spheretrain {

// Parallel attention-MLP transformer block. A single unified projection
// produces [Q, K, V, H1, H2] (3d attention + 4d MLP halves); attention and
// the gated MLP run side by side and re-enter through one output projection,
// gated by timestep modulation plus a depth-aware constant offset.

enum class GateOffsetMode {
    InverseSqrtDepth,  // 1/sqrt(L): seeds gradient flow with O(1) depth scaling
    ConstantEighth,    // fixed 1/8 at initialization
    Disabled,          // no offset; zero-init blocks are untrainable (for tests)
};

// The depth-aware offset value, 1/sqrt(L).
double gate_offset(int layer_count);
double gate_offset_for(GateOffsetMode mode, int layer_count);

struct BlockParams {
    int dim = 0;          // d; head dimension equals d (single attention head)
    int layer_count = 1;  // L of the stack this block belongs to
    double gate_offset_value = 0.0;

    DenseMatrix w_unified;  // 7d x d: rows [0,3d) -> QKV, [3d,7d) -> H1,H2
    DenseMatrix w_mlp2;     // d x 2d: gated-MLP output
    DenseMatrix w_proj;     // d x 2d: block output projection (zero at init)
    DenseMatrix w_mod1;     // d x d: modulation MLP input layer
    DenseMatrix b_mod1;     // 1 x d
    DenseMatrix w_mod2;     // 3d x d: modulation output -> [s, b, g] (zero at init)
    DenseMatrix b_mod2;     // 1 x 3d
    double lambda1 = 0.5;   // value-residual mix of the first layer's values
    double lambda2 = 0.5;
};

// Unit-row init for the constrained matrices, zeros for the output projection
// and the modulation output layer; lambdas at 0.5. With those zeros the block
// is an exact identity map.
BlockParams block_init(int dim, int layer_count, GateOffsetMode mode, RngStream& rng);

// Forward intermediates retained for the analytic backward pass.
struct BlockCache {
    DenseMatrix x;          // input
    std::vector<double> inv_rms;  // per token 1/sqrt(mean sq + eps)
    DenseMatrix normed;     // RMS-normalized input
    DenseMatrix xt;         // modulated input
    DenseVector t_emb;
    DenseVector mod_pre;    // modulation hidden pre-activation
    DenseVector mod_h;      // modulation hidden
    DenseVector mod_s, mod_b, mod_g;
    DenseMatrix q, k, v;    // pre-RoPE Q, K and current V
    DenseMatrix qr, kr;     // RoPE-rotated
    bool self_residual = true;  // first layer: V_prev is this block's own V
    DenseMatrix v_prev;     // populated only when self_residual is false
    DenseMatrix v_out;
    DenseMatrix attn;       // softmax weights
    DenseMatrix attn_out;
    DenseMatrix h1, h2, gelu_h2, gated;  // MLP path
    DenseMatrix mlp_out;
    DenseMatrix cat;        // [attn_out, mlp_out]
    DenseMatrix proj_out;   // pre-gate projection
};

// y = x + Linear_proj([A, M]) * (g_t + offset). positions holds one normalized
// 3D position per token; v_prev points at the first layer's V (null for the
// first layer itself, which mixes its own V both ways).
DenseMatrix block_forward(const DenseMatrix& x, const DenseVector& t_emb, const BlockParams& p,
                          const RopeLayerSpec& rope, const std::vector<Position3>& positions,
                          BlockCache& cache, const DenseMatrix* v_prev = nullptr);

struct BlockGrads {
    DenseMatrix w_unified, w_mlp2, w_proj, w_mod1, b_mod1, w_mod2, b_mod2;
    double lambda1 = 0.0, lambda2 = 0.0;
    DenseMatrix x;       // gradient w.r.t. the block input
    DenseMatrix v_prev;  // gradient w.r.t. the value-residual input (empty if self)
};

// Analytic gradients from a matching forward cache. extra_dv injects gradient
// arriving at this block's V from later layers' value residuals (used for the
// first layer of a stack).
BlockGrads block_backward(const BlockParams& p, const RopeLayerSpec& rope,
                          const std::vector<Position3>& positions, const BlockCache& cache,
                          const DenseMatrix& dy, const DenseMatrix* extra_dv = nullptr);

// l1 * V_prev + l2 * V_cur.
DenseMatrix value_residual(const DenseMatrix& v_prev, const DenseMatrix& v_cur, double l1,
                           double l2);

struct PatchGrid {
    int n_t = 0, n_h = 0, n_w = 0;
    long total = 0;
};

// Patch counts per axis for temporal patch p_t and spatial patch p_s;
// dimensions must divide evenly.
PatchGrid patch_grid(int frames, int height, int width, int p_t, int p_s);

// Sinusoidal features of a scalar timestep, feeding the modulation MLP.
DenseVector timestep_embedding(double t, int dim);

// A depth-L stack sharing one value-residual stream: every layer past the
// first mixes the first layer's V into its own.
struct BlockStack {
    int dim = 0;
    std::vector<BlockParams> blocks;
    std::vector<RopeLayerSpec> rope;  // one spec (seed) per layer
};

BlockStack stack_init(int dim, int depth, GateOffsetMode mode, std::uint64_t seed);

DenseMatrix stack_forward(const BlockStack& stack, const DenseMatrix& x,
                          const DenseVector& t_emb, const std::vector<Position3>& positions,
                          std::vector<BlockCache>& caches);

struct StackGrads {
    std::vector<BlockGrads> blocks;
    DenseMatrix x;
};

StackGrads stack_backward(const BlockStack& stack, const std::vector<Position3>& positions,
                          const std::vector<BlockCache>& caches, const DenseMatrix& dy);

// Exact Gaussian-CDF GELU and its derivative.
double gelu(double x);
double gelu_grad(double x);

}  // namespace spheretrain
