#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "malvis/nn.hpp"
#include "malvis/rng.hpp"
#include "malvis/tensor.hpp"

namespace malvis {

enum class Architecture {
  tiny_vgg,
  tiny_inception,
  tiny_resnet,
  cnn_svm,
  gru_svm,
  mlp_svm,
};

enum class Head { softmax, hinge_l1, hinge_l2 };

Architecture architecture_from_name(const std::string& name);
const char* architecture_name(Architecture arch);
Head head_from_name(const std::string& name);
const char* head_name(Head head);

// Declarative model description. build_model forces the head of the hybrid
// SVM architectures (cnn_svm, gru_svm, mlp_svm) to a hinge variant; a softmax
// request on those becomes hinge_l2.
struct ModelSpec {
  Architecture architecture = Architecture::tiny_vgg;
  std::size_t input_channels = 1;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t num_classes = 25;
  double width_multiplier = 1.0;
  Head head = Head::softmax;
  std::uint64_t seed = 42;

  bool operator==(const ModelSpec&) const = default;
};

// "model.*" key-value block, the serialized form embedded in snapshots.
std::string spec_to_config(const ModelSpec& spec);
ModelSpec spec_from_config(const std::string& text);

struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};

// One node of the layer graph. forward caches whatever backward needs, so a
// Model is single-owner during training.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& input) = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

class Sequential : public Layer {
 public:
  void append(std::string name, LayerPtr layer);
  Tensor forward(const Tensor& input) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  bool empty() const { return layers_.empty(); }

 private:
  std::vector<std::pair<std::string, LayerPtr>> layers_;
};

// Building blocks, exposed so the pieces can be composed and tested directly.
LayerPtr make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride, std::size_t padding, SplitMix64& rng);
LayerPtr make_relu();
LayerPtr make_maxpool(std::size_t window, std::size_t stride);
LayerPtr make_global_avg_pool();
LayerPtr make_flatten();
LayerPtr make_dense(std::size_t in_dim, std::size_t out_dim, SplitMix64& rng);

struct InceptionWidths {
  std::size_t b1;         // 1x1 branch
  std::size_t b2_reduce;  // 1x1 into the 3x3 branch
  std::size_t b2;
  std::size_t b3_reduce;  // 1x1 into the double-3x3 branch
  std::size_t b3;
  std::size_t pool_proj;  // 1x1 after the 3x3 maxpool branch
  std::size_t total() const { return b1 + b2 + b3 + pool_proj; }
};
// Output channels = b1 + b2 + b3 + pool_proj, spatial size preserved.
LayerPtr make_inception_block(std::size_t in_channels, const InceptionWidths& widths,
                              SplitMix64& rng);

// main path conv3x3(stride)-relu-conv3x3 plus a shortcut; the shortcut is a
// 1x1 projection when stride or channel count changes, identity otherwise.
// Zeroing the main-path parameters makes the block compute its shortcut.
LayerPtr make_residual_block(std::size_t in_channels, std::size_t out_channels,
                             std::size_t stride, SplitMix64& rng);

// Consumes (N,C,H,W) as H timesteps of C*W features through one GRU; outputs
// the final hidden state (N,hidden).
LayerPtr make_gru_sequence(std::size_t channels, std::size_t width, std::size_t hidden,
                           SplitMix64& rng);

// Instantiated architecture: an owned layer graph plus its parameters.
class Model {
 public:
  Model(ModelSpec spec, LayerPtr trunk, LayerPtr aux_head, LayerPtr post);

  const ModelSpec& spec() const { return spec_; }

  // (N,C,H,W) -> (N,F) scores; a rank-3 (C,H,W) input is one sample and
  // yields (F). Throws errc::shape_mismatch when the input does not match
  // spec. On tiny_inception the auxiliary scores are available afterwards
  // via aux_scores().
  Tensor forward(const Tensor& batch);
  bool has_aux() const { return aux_head_ != nullptr; }
  const Tensor& aux_scores() const { return aux_scores_; }

  void backward(const Tensor& grad_scores);
  // With the auxiliary gradient already scaled by its loss weight.
  void backward(const Tensor& grad_scores, const Tensor& grad_aux);

  void zero_grads();
  std::vector<ParamRef> params();
  std::size_t param_count() const;

 private:
  ModelSpec spec_;
  LayerPtr trunk_;      // stem up to (and including) the aux attachment point
  LayerPtr aux_head_;   // nullptr for everything but tiny_inception
  LayerPtr post_;       // rest of the network; null when aux is absent
  Tensor aux_scores_;
};

// Deterministic construction from the spec; parameters come from
// SplitMix64(spec.seed) in layer order.
// Throws errc::unknown_architecture and errc::incompatible_shape (input too
// small for the pooling pyramid).
Model build_model(const ModelSpec& spec);

}  // namespace malvis
