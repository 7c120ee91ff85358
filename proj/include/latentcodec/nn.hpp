#pragma once

#include <array>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "latentcodec/core.hpp"

// Minimal reverse-mode autodiff over channels-by-length tensors, the layer
// set for the distribution compressor (grouped 1D convolutions, transposed
// variant, ReLU, channel shuffle, per-channel softmax), the rate losses,
// and the Adam training loop. Everything runs in f64; stored weights are
// f32 and get canonicalized through f32 before being used for coding.

namespace lc::nn {

struct Tensor {
  uint32_t ch = 0;
  uint32_t len = 0;
  std::vector<double> v;  // row-major [c][i]

  static Tensor zeros(uint32_t c, uint32_t l) {
    return Tensor{c, l, std::vector<double>(size_t(c) * l, 0.0)};
  }
  double& at(uint32_t c, uint32_t i) { return v[size_t(c) * len + i]; }
  double at(uint32_t c, uint32_t i) const { return v[size_t(c) * len + i]; }
  size_t size() const { return v.size(); }
};

// One vertex of the backward DAG. `backward_fn` scatters this node's grad
// into its parents' grads; `backward()` below invokes these in reverse
// topological order, so each node's grad is complete before it is consumed.
struct Node {
  Tensor value;
  Tensor grad;  // same shape as value, zero-initialized
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void()> backward_fn;
};

using NodePtr = std::shared_ptr<Node>;

NodePtr leaf(Tensor value, bool requires_grad = false);

// Seeds root (a 1x1 scalar) with grad 1 and propagates through the DAG.
// Leaf grads accumulate, so persistent parameters must be zeroed between
// backward passes (Adam::zero_grad does this).
void backward(const NodePtr& root);

// --- raw forward kernels (shared by graph ops and inference) ---------------

// Grouped 1D cross-correlation, zero padding (kernel-1)/2, output length
// L/stride. Weights are [C_out][C_in/G][K] flattened as a C_out-by-(C_in/G*K)
// tensor; bias is C_out-by-1.
Tensor conv1d_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      uint32_t stride, uint32_t groups);

// Exact adjoint of conv1d_forward: maps C_in-by-L to C_out-by-(L*stride).
// Weights are [C_in][C_out/G][K] flattened as a C_in-by-(C_out/G*K) tensor.
Tensor conv1d_transposed_forward(const Tensor& x, const Tensor& w,
                                 const Tensor& b, uint32_t stride,
                                 uint32_t groups);

Tensor relu_forward(const Tensor& x);

// ShuffleNet permutation: source channel c lands at (c mod G)*(C/G) + c/G.
Tensor channel_shuffle_forward(const Tensor& x, uint32_t groups);

// Softmax across the length dimension, independently per channel.
Tensor softmax_bins_forward(const Tensor& x);

// --- graph ops --------------------------------------------------------------

NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b,
               uint32_t stride, uint32_t groups);
NodePtr conv1d_transposed(const NodePtr& x, const NodePtr& w, const NodePtr& b,
                          uint32_t stride, uint32_t groups);
NodePtr relu(const NodePtr& x);
NodePtr channel_shuffle(const NodePtr& x, uint32_t groups);
NodePtr softmax_bins(const NodePtr& x);
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double k);

// Training surrogate for rounding: value x + U(-0.5, 0.5) drawn per element,
// identity backward (the noise is a constant of the graph).
NodePtr add_uniform_noise(const NodePtr& x, std::mt19937_64& rng);

// Straight-through per-channel histogram: forward equals the hard histogram
// of each channel (C-by-N input, C-by-B output), backward routes through the
// triangular-kernel soft histogram gradient.
NodePtr ste_histogram(const NodePtr& y, const HistogramSpec& spec);

// R_y = scale * sum_{c,i} -p[c][i] * log2(p_hat[c][i]), in bits, where
// scale is the per-channel element count N = H*W/s^2. Gradients flow into
// both p and p_hat. Zero-mass p entries contribute nothing.
NodePtr rate_loss_bits(const NodePtr& p, const NodePtr& p_hat, double scale);

// R_q = sum -log2 p_c(q̃) in bits, with p_c the softmax of the c-th logits
// row over the fixed integer support, evaluated at q̃ by piecewise-linear
// interpolation between neighboring support points. Outside the support the
// edge probability is charged plus kQOutOfSupportSlope bits per unit of
// overshoot, so out-of-support points keep a gradient pulling them back in
// (rounding at inference clamps them, which the rate must not reward).
NodePtr q_rate_loss_bits(const NodePtr& q_tilde, const NodePtr& logits);

// Element-wise clamp into the q support: identity gradient strictly inside
// [kQSupportMin, kQSupportMax], zero outside and at the edges. Applied to the
// synthesis input during training so the surrogate sees the same saturation
// the rounded inference path does.
NodePtr clamp_support(const NodePtr& x);

// --- reference derivative of the standard factorized bottleneck ------------
//
// For p(y) = c(y + 1/2) - c(y - 1/2) with cdf c and density f = c', the rate
// R = -ln p(y) has dR/dy = -[p(y)]^-1 * (f(y + 1/2) - f(y - 1/2)), in nats.
double bottleneck_rate_grad(double y,
                            const std::function<double(double)>& cdf,
                            const std::function<double(double)>& pdf);

// --- distribution-compressor network ----------------------------------------

// Fixed integer support of the q entropy model.
inline constexpr int32_t kQSupportMin = -32;
inline constexpr int32_t kQSupportMax = 31;
inline constexpr uint32_t kQSupportSize = 64;

// Rate penalty, in bits per unit distance, charged by q_rate_loss_bits for
// evaluation points outside the support.
inline constexpr double kQOutOfSupportSlope = 1.0;

// Total downscale of the analysis transform (two stride-2 layers).
inline constexpr uint32_t kQDownscale = 4;

// Five grouped 1D conv layers per transform, kernel 15, groups 8, channel
// plan [C -> N_q -> N_q -> N_q -> N_q -> M_q] for analysis and its mirror
// for synthesis, strides/upsamples at layers 2 and 4, ReLU + shuffle after
// layers 1-4.
struct TransformConfig {
  uint32_t channels = 0;  // C: histogram channels in (analysis) / out (synthesis)
  uint32_t n_q = 32;
  uint32_t m_q = 16;
  uint32_t kernel = 15;
  uint32_t groups = 8;
  uint32_t bins = 0;  // B: signal length fed to the analysis transform

  void validate() const;
};

struct ConvSpec {
  uint32_t c_in = 0;
  uint32_t c_out = 0;
  uint32_t stride = 1;
  bool transposed = false;
};

std::array<ConvSpec, 5> analysis_layers(const TransformConfig& cfg);
std::array<ConvSpec, 5> synthesis_layers(const TransformConfig& cfg);

// weights + biases of one grouped conv: c_out*(c_in/groups)*k + c_out.
uint64_t conv_param_count(uint32_t c_in, uint32_t c_out, uint32_t kernel,
                          uint32_t groups);
uint64_t count_params_analysis(const TransformConfig& cfg);
uint64_t count_params_synthesis(const TransformConfig& cfg);
// Both transforms together (the q entropy model's logits excluded).
uint64_t count_params(const TransformConfig& cfg);

struct DistNet {
  TransformConfig cfg;
  std::vector<NodePtr> a_w, a_b;  // analysis conv weights/biases, 5 each
  std::vector<NodePtr> s_w, s_b;  // synthesis conv weights/biases
  NodePtr q_logits;               // m_q-by-64

  static DistNet init(const TransformConfig& cfg, uint64_t seed);

  std::vector<NodePtr> params() const;

  // Graph-building forwards (training).
  NodePtr analysis(const NodePtr& x) const;
  NodePtr synthesis(const NodePtr& q) const;

  // Plain forwards (inference); identical arithmetic to the graph path.
  Tensor analysis_infer(const Tensor& x) const;
  Tensor synthesis_infer(const Tensor& q) const;

  // Softmax rows of q_logits: per-channel pmf over the fixed support.
  std::vector<std::vector<double>> q_pmfs() const;

  // Rounds every weight through f32. Called at the end of training so the
  // in-memory model and its stored form produce identical bytes.
  void canonicalize_weights();
};

// Analysis-transform input: -log2(p + eps) clipped to [0, 10], one row per
// channel. Compresses mass values spanning orders of magnitude into a
// bounded dynamic range.
Tensor preprocess_bank(const PmfBank& bank);

// Inference quantizer for q: round half away from zero, clamped into the
// fixed support.
Tensor round_clamp_q(const Tensor& q);

// lambda_q = (trained_h * trained_w) / (target_h * target_w).
double lambda_q(uint32_t trained_h, uint32_t trained_w, uint32_t target_h,
                uint32_t target_w);

// --- training ----------------------------------------------------------------

struct LossParts {
  NodePtr total;   // rate_y + lambda * rate_q, bits
  NodePtr rate_y;  // bits
  NodePtr rate_q;  // bits
};

// Builds the full training graph for one image: preprocess is applied by
// the caller (p_true is the raw bank as a C-by-B tensor; the analysis input
// is derived internally), noise must be an m_q-by-(B/4) tensor. The rate
// term sees the unclamped q̃ = q + noise; the synthesis input is clamped
// into the q support, mirroring the rounded inference path.
LossParts loss_graph(const DistNet& net, const Tensor& p_true,
                     const Tensor& noise, double pixels_per_channel,
                     double lambda);

// Deterministic inference-mode loss in bits: q̂ = round(q), p̂ floored and
// renormalized as the coder would use it. Used for validation/plateau.
struct EvalLoss {
  double total = 0;
  double rate_y = 0;
  double rate_q = 0;
};
EvalLoss eval_loss_bits(const DistNet& net, const PmfBank& bank,
                        double pixels_per_channel, double lambda);

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(std::vector<NodePtr> params, AdamConfig cfg = {});
  void zero_grad();
  void step();
  double lr() const { return cfg_.lr; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  std::vector<NodePtr> params_;
  AdamConfig cfg_;
  uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

struct TrainConfig {
  double lr = 1e-4;
  uint32_t batch_size = 16;
  uint64_t seed = 1;
  double lambda = 1.0;  // weight on R_q
  uint32_t max_steps = 3000;
  uint32_t eval_every = 25;          // validation cadence, in steps
  uint32_t plateau_patience = 10;    // evals without improvement before decay
  double plateau_rel = 1e-4;         // relative improvement threshold
  uint32_t max_decays = 2;           // stop after this many lr decays
  double decay = 0.1;
};

struct TrainLogRow {
  uint32_t step = 0;
  double lr = 0;
  double loss = 0;  // batch training loss, bits
  double rate_y = 0;
  double rate_q = 0;
  double val_loss = 0;  // mean validation loss at this eval point
};

struct TrainResult {
  std::vector<TrainLogRow> log;  // one row per eval point
  uint32_t steps = 0;
  uint32_t decays = 0;
  double best_val = 0;
};

// Single-threaded deterministic training on per-image banks. Throws
// Diverged on non-finite loss. On completion the weights from the eval point
// with the lowest validation loss are restored and canonicalized through f32.
TrainResult train(DistNet& net, std::span<const PmfBank> train_banks,
                  std::span<const PmfBank> val_banks,
                  double pixels_per_channel, const TrainConfig& cfg);

}  // namespace lc::nn
