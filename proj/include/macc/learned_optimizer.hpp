#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "macc/vec.hpp"

namespace macc {

// GRU cell with one bias per gate:
//   r = sigmoid(Wr x + Ur h + br)
//   z = sigmoid(Wz x + Uz h + bz)
//   n = tanh(Wn x + Un (r*h) + bn)
//   h' = (1 - z)*n + z*h
// Parameter count: 3 * (input_dim + hidden + 1) * hidden.
struct GruWeights {
    std::uint32_t input_dim = 0;
    std::uint32_t hidden = 0;
    Mat64 wr, ur;
    Vec64 br;
    Mat64 wz, uz;
    Vec64 bz;
    Mat64 wn, un;
    Vec64 bn;

    static GruWeights zeros(std::uint32_t input_dim, std::uint32_t hidden);
    std::size_t size() const { return 3u * (input_dim + hidden + 1u) * hidden; }
};

// Activations saved by a forward application, enough to backprop.
struct GruCache {
    Vec64 x, h_in, r, z, n;
};

Vec64 gru_forward(const GruWeights& w, const Vec64& x, const Vec64& h, GruCache* cache);

// Accumulates weight gradients into `grads` and input adjoints into dx / dh_in
// (dx may be null when the input is a constant).
void gru_backward(const GruWeights& w, const GruCache& cache, const Vec64& dh_out,
                  GruWeights& grads, Vec64* dx, Vec64& dh_in);

// Meta-parameters of the hierarchical optimizer: a per-parameter GRU fed
// gradient features, a per-tensor GRU fed the mean per-parameter state, a
// linear readout and a global log step scale.
struct OptimizerParams {
    std::uint32_t hidden = 0;
    GruWeights param_gru;   // input_dim 2
    GruWeights tensor_gru;  // input_dim hidden
    Vec64 out_w;            // hidden
    double out_b = 0.0;
    double log_step = 0.0;

    std::size_t flat_size() const;
};

// Closed-form flattened length for a given hidden width.
std::size_t optimizer_flat_size(std::uint32_t hidden);

// Recurrent state carried while training one task. Reset to zeros at the
// start of every task's training.
struct OptimizerState {
    Mat64 h_param;   // dims x hidden
    Vec64 h_tensor;  // hidden
    Vec64 rms;       // dims, second-moment accumulator, decay 0.95

    static OptimizerState zeros(std::uint32_t dims, std::uint32_t hidden);
};

inline constexpr double kRmsDecay = 0.95;
inline constexpr double kPreprocessEps = 1e-8;
inline constexpr double kFeatureClamp = 10.0;

// Everything recorded at one unroll step. Gradient inputs are constants for
// the meta-backward pass (first-order stop-gradient).
struct UnrollStep {
    Vec64 grad_in;                       // g_t
    Mat64 features;                      // dims x 2
    Mat64 h_param_in;                    // dims x hidden
    Vec64 h_tensor_in;                   // hidden
    Vec64 tensor_mean;                   // mean over coordinates of h_param_in
    GruCache tensor_cache;
    std::vector<GruCache> param_caches;  // one per coordinate
    Mat64 h_param_out;
    Vec64 h_tensor_out;
    Vec64 proj;                          // out_proj(h_param_out row), per coordinate
    Vec64 delta;
    double task_loss = 0.0;
};

struct UnrollTape {
    std::uint32_t dims = 0;
    std::uint32_t hidden = 0;
    std::vector<UnrollStep> steps;
};

// GRU weights uniform[-0.1, 0.1], zero readout, log_step = ln(0.01).
OptimizerParams init_params(std::uint64_t seed, std::uint32_t hidden);

// Per coordinate: feature1 = g/sqrt(rms+eps), feature2 = log(rms+eps)/10,
// both clamped to [-10, 10].
Mat64 preprocess_gradient(const Vec64& g, const Vec64& rms, double eps = kPreprocessEps);

// One update: refresh rms, featurize g, advance the tensor then per-parameter
// GRU levels, emit delta = -exp(log_step) * out_proj(h_param'). The caller
// applies theta' = theta + delta. Records the step on `tape_entry` when given.
Vec64 optimizer_step(const OptimizerParams& w, OptimizerState& state, const Vec64& g,
                     UnrollStep* tape_entry = nullptr);

// Gradient of the accumulated task loss w.r.t. the flattened meta-parameters,
// backpropagated through every recorded unroll step with the gradient inputs
// treated as constants.
Vec64 meta_backward(const OptimizerParams& w, const UnrollTape& tape);

Vec64 flatten(const OptimizerParams& w);
OptimizerParams unflatten(const Vec64& flat, std::uint32_t hidden);

// Checkpoint file: 16-byte header (magic "MACC", version u32, count u64),
// then the flattened parameters as little-endian 64-bit floats.
void save_checkpoint(const std::string& path, const OptimizerParams& w);
OptimizerParams load_checkpoint(const std::string& path);

}  // namespace macc
