#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "malvis/rng.hpp"
#include "malvis/tensor.hpp"

// Forward and backward passes for every layer and loss the model zoo needs.
// Conventions:
//  - Spatial tensors are (N,C,H,W); a rank-3 (C,H,W) argument is treated as a
//    single sample and the result keeps the unbatched rank.
//  - Convolution is cross-correlation (no kernel flip) with zero padding.
//  - ReLU and the L1 hinge use subgradient 0 at their kinks.
//  - All ops are deterministic; parallel loops never change summation order.
namespace malvis::nn {

// ---- convolution -----------------------------------------------------------

// input (N,C,H,W), kernel (K,C,kh,kw), bias (K) -> (N,K,H',W') with
// H' = floor((H + 2*padding - kh)/stride) + 1, likewise W'.
Tensor conv2d_forward(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                      std::size_t stride = 1, std::size_t padding = 0);

struct ConvGrads {
  Tensor input;
  Tensor kernel;
  Tensor bias;
};
ConvGrads conv2d_backward(const Tensor& input, const Tensor& kernel, const Tensor& grad_out,
                          std::size_t stride = 1, std::size_t padding = 0);

// ---- pooling ---------------------------------------------------------------

struct PoolResult {
  Tensor output;
  std::vector<std::size_t> argmax;  // flat input index per output element
};
// No padding; output extent = floor((H - window)/stride) + 1. Ties take the
// first element in row-major window scan order.
PoolResult maxpool2d_forward(const Tensor& input, std::size_t window, std::size_t stride);
Tensor maxpool2d_backward(const std::vector<std::size_t>& argmax,
                          const std::vector<std::size_t>& input_shape, const Tensor& grad_out);

// (N,C,H,W) -> (N,C): mean over the spatial plane.
Tensor global_avg_pool_forward(const Tensor& input);
Tensor global_avg_pool_backward(const std::vector<std::size_t>& input_shape,
                                const Tensor& grad_out);

// ---- dense / elementwise ----------------------------------------------------

// input (N,n), weights (m,n), bias (m) -> (N,m): y = x W^T + b.
Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor relu_forward(const Tensor& input);
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

// Concatenates (N,Ci,H,W) inputs along the channel axis.
Tensor concat_channels(const std::vector<const Tensor*>& inputs);
std::vector<Tensor> concat_channels_backward(const std::vector<std::vector<std::size_t>>& shapes,
                                             const Tensor& grad_out);

Tensor add(const Tensor& a, const Tensor& b);
// The gradient of a sum flows unchanged to both addends.
std::pair<Tensor, Tensor> add_backward(const Tensor& grad_out);

// ---- GRU cell ---------------------------------------------------------------

// Gate weights: W* (hidden,input) applied to x, U* (hidden,hidden) applied to
// the previous hidden state, b* (hidden).
struct GruParams {
  Tensor wz, uz, bz;  // update gate
  Tensor wr, ur, br;  // reset gate
  Tensor wh, uh, bh;  // candidate state

  static GruParams zeros(std::size_t input_dim, std::size_t hidden_dim);
  std::size_t input_dim() const { return wz.dim(1); }
  std::size_t hidden_dim() const { return wz.dim(0); }
};

// One step of
//   z  = sigmoid(Wz x + Uz h + bz)
//   r  = sigmoid(Wr x + Ur h + br)
//   hc = tanh(Wh x + Uh (r*h) + bh)
//   h' = z*h + (1-z)*hc
// x is (N,d) or (d); h is (N,hidden) or (hidden).
Tensor gru_step(const Tensor& x, const Tensor& h, const GruParams& params);

struct GruStepCache {
  Tensor x, h_prev, z, r, h_cand, rh;
};
struct GruStepResult {
  Tensor h_next;
  GruStepCache cache;
};
GruStepResult gru_step_forward(const Tensor& x, const Tensor& h, const GruParams& params);

struct GruStepGrads {
  Tensor x, h_prev;
  GruParams params;
};
GruStepGrads gru_step_backward(const GruStepCache& cache, const GruParams& params,
                               const Tensor& grad_h_next);

// ---- losses ------------------------------------------------------------------

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

// loss = -log softmax(scores)[label], max-subtracted for stability;
// grad = softmax - one_hot(label). Batched form takes (N,F) scores and
// returns the mean loss with the gradient scaled by 1/N.
LossResult softmax_cross_entropy(const Tensor& scores, std::size_t label);
LossResult softmax_cross_entropy(const Tensor& scores, std::span<const std::size_t> labels);

enum class HingeVariant { l1, l2 };

// One-vs-rest hinge with targets +1 for the true class and -1 otherwise:
//   L1: sum_j max(0, 1 - t_j s_j)      L2: sum_j max(0, 1 - t_j s_j)^2
// Batched form averages like softmax_cross_entropy.
LossResult multiclass_hinge(const Tensor& scores, std::size_t label, HingeVariant variant);
LossResult multiclass_hinge(const Tensor& scores, std::span<const std::size_t> labels,
                            HingeVariant variant);

// ---- optimizer -----------------------------------------------------------------

// v <- momentum*v + g;  p <- p - lr*v  (element-wise).
void sgd_momentum_update(Tensor& param, const Tensor& grad, Tensor& velocity,
                         double learning_rate, double momentum);

// ---- verification ---------------------------------------------------------------

struct ParamGrad {
  Tensor* value;         // parameter to perturb
  const Tensor* grad;    // analytic gradient, already computed
};

// Central finite differences per coordinate against the analytic gradient:
// rel_err = |a - n| / max(1e-8, |a| + |n|); returns the max over coordinates.
// loss_fn must recompute the loss from the parameters' current values.
// Suspicious coordinates are re-measured at smaller steps (kink crossings)
// and larger steps (cancellation noise on near-zero gradients); a wrong
// gradient fails at every step size.
double grad_check(const std::function<double()>& loss_fn, std::span<const ParamGrad> params,
                  double eps = 1e-5);

// Xavier-uniform init in +/- sqrt(6/(fan_in+fan_out)).
void init_xavier_uniform(Tensor& weights, std::size_t fan_in, std::size_t fan_out,
                         SplitMix64& rng);

}  // namespace malvis::nn
