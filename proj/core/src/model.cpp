#include "malvis/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "malvis/config.hpp"
#include "malvis/error.hpp"
#include "malvis/parallel.hpp"

namespace malvis {

Architecture architecture_from_name(const std::string& name) {
  if (name == "tiny_vgg") return Architecture::tiny_vgg;
  if (name == "tiny_inception") return Architecture::tiny_inception;
  if (name == "tiny_resnet") return Architecture::tiny_resnet;
  if (name == "cnn_svm") return Architecture::cnn_svm;
  if (name == "gru_svm") return Architecture::gru_svm;
  if (name == "mlp_svm") return Architecture::mlp_svm;
  raise(errc::unknown_architecture, "'" + name + "'");
}

const char* architecture_name(Architecture arch) {
  switch (arch) {
    case Architecture::tiny_vgg: return "tiny_vgg";
    case Architecture::tiny_inception: return "tiny_inception";
    case Architecture::tiny_resnet: return "tiny_resnet";
    case Architecture::cnn_svm: return "cnn_svm";
    case Architecture::gru_svm: return "gru_svm";
    case Architecture::mlp_svm: return "mlp_svm";
  }
  return "?";
}

Head head_from_name(const std::string& name) {
  if (name == "softmax") return Head::softmax;
  if (name == "hinge_l1") return Head::hinge_l1;
  if (name == "hinge_l2") return Head::hinge_l2;
  raise(errc::config_error, "unknown head '" + name + "'");
}

const char* head_name(Head head) {
  switch (head) {
    case Head::softmax: return "softmax";
    case Head::hinge_l1: return "hinge_l1";
    case Head::hinge_l2: return "hinge_l2";
  }
  return "?";
}

namespace {

std::string double_repr(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

void accumulate(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

// ---- leaf layers -------------------------------------------------------------

class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
              std::size_t padding, SplitMix64& rng)
      : kernel_({out_ch, in_ch, kernel, kernel}),
        bias_({out_ch}),
        grad_kernel_({out_ch, in_ch, kernel, kernel}),
        grad_bias_({out_ch}),
        stride_(stride),
        padding_(padding) {
    nn::init_xavier_uniform(kernel_, in_ch * kernel * kernel, out_ch * kernel * kernel, rng);
  }

  Tensor forward(const Tensor& input) override {
    input_ = input;
    return nn::conv2d_forward(input, kernel_, bias_, stride_, padding_);
  }

  Tensor backward(const Tensor& grad_out) override {
    nn::ConvGrads grads = nn::conv2d_backward(input_, kernel_, grad_out, stride_, padding_);
    accumulate(grad_kernel_, grads.kernel);
    accumulate(grad_bias_, grads.bias);
    return std::move(grads.input);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "kernel", &kernel_, &grad_kernel_});
    out.push_back({prefix + "bias", &bias_, &grad_bias_});
  }

 private:
  Tensor kernel_, bias_, grad_kernel_, grad_bias_;
  std::size_t stride_, padding_;
  Tensor input_;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in_dim, std::size_t out_dim, SplitMix64& rng)
      : weights_({out_dim, in_dim}),
        bias_({out_dim}),
        grad_weights_({out_dim, in_dim}),
        grad_bias_({out_dim}) {
    nn::init_xavier_uniform(weights_, in_dim, out_dim, rng);
  }

  Tensor forward(const Tensor& input) override {
    input_ = input;
    return nn::dense_forward(input, weights_, bias_);
  }

  Tensor backward(const Tensor& grad_out) override {
    nn::DenseGrads grads = nn::dense_backward(input_, weights_, grad_out);
    accumulate(grad_weights_, grads.weights);
    accumulate(grad_bias_, grads.bias);
    return std::move(grads.input);
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "weight", &weights_, &grad_weights_});
    out.push_back({prefix + "bias", &bias_, &grad_bias_});
  }

 private:
  Tensor weights_, bias_, grad_weights_, grad_bias_;
  Tensor input_;
};

class ReluLayer final : public Layer {
 public:
  Tensor forward(const Tensor& input) override {
    input_ = input;
    return nn::relu_forward(input);
  }
  Tensor backward(const Tensor& grad_out) override {
    return nn::relu_backward(input_, grad_out);
  }
  void collect_params(const std::string&, std::vector<ParamRef>&) override {}

 private:
  Tensor input_;
};

class MaxPoolLayer final : public Layer {
 public:
  MaxPoolLayer(std::size_t window, std::size_t stride) : window_(window), stride_(stride) {}

  Tensor forward(const Tensor& input) override {
    input_shape_ = input.shape();
    nn::PoolResult result = nn::maxpool2d_forward(input, window_, stride_);
    argmax_ = std::move(result.argmax);
    return std::move(result.output);
  }
  Tensor backward(const Tensor& grad_out) override {
    return nn::maxpool2d_backward(argmax_, input_shape_, grad_out);
  }
  void collect_params(const std::string&, std::vector<ParamRef>&) override {}

 private:
  std::size_t window_, stride_;
  std::vector<std::size_t> input_shape_;
  std::vector<std::size_t> argmax_;
};

// 3x3/stride-1 max pool that preserves the spatial size (window clamped at
// the borders). Used by the inception pool branch.
class SameMaxPoolLayer final : public Layer {
 public:
  Tensor forward(const Tensor& input) override {
    input_shape_ = input.shape();
    const bool batched = input.rank() == 4;
    const std::size_t n = batched ? input.dim(0) : 1;
    const std::size_t c = input.dim(batched ? 1 : 0);
    const std::size_t h = input.dim(batched ? 2 : 1);
    const std::size_t w = input.dim(batched ? 3 : 2);
    Tensor out(input.shape());
    argmax_.resize(input.numel());
    const double* x = input.data();
    double* y = out.data();
    std::size_t* am = argmax_.data();
    detail::parallel_for(n * c, [&](std::size_t nc) {
      const double* plane = x + nc * h * w;
      const std::size_t base = nc * h * w;
      for (std::size_t r = 0; r < h; ++r) {
        const std::size_t r0 = r > 0 ? r - 1 : 0;
        const std::size_t r1 = std::min(r + 1, h - 1);
        for (std::size_t col = 0; col < w; ++col) {
          const std::size_t c0 = col > 0 ? col - 1 : 0;
          const std::size_t c1 = std::min(col + 1, w - 1);
          double best = -std::numeric_limits<double>::infinity();
          std::size_t best_idx = 0;
          for (std::size_t rr = r0; rr <= r1; ++rr)
            for (std::size_t cc = c0; cc <= c1; ++cc) {
              const double v = plane[rr * w + cc];
              if (v > best) {
                best = v;
                best_idx = rr * w + cc;
              }
            }
          y[base + r * w + col] = best;
          am[base + r * w + col] = base + best_idx;
        }
      }
    });
    return out;
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor grad_in(input_shape_);
    double* dst = grad_in.data();
    const double* g = grad_out.data();
    for (std::size_t i = 0; i < grad_out.numel(); ++i) dst[argmax_[i]] += g[i];
    return grad_in;
  }
  void collect_params(const std::string&, std::vector<ParamRef>&) override {}

 private:
  std::vector<std::size_t> input_shape_;
  std::vector<std::size_t> argmax_;
};

class GlobalAvgPoolLayer final : public Layer {
 public:
  Tensor forward(const Tensor& input) override {
    input_shape_ = input.shape();
    return nn::global_avg_pool_forward(input);
  }
  Tensor backward(const Tensor& grad_out) override {
    return nn::global_avg_pool_backward(input_shape_, grad_out);
  }
  void collect_params(const std::string&, std::vector<ParamRef>&) override {}

 private:
  std::vector<std::size_t> input_shape_;
};

class FlattenLayer final : public Layer {
 public:
  Tensor forward(const Tensor& input) override {
    input_shape_ = input.shape();
    if (input.rank() == 4)
      return input.reshaped({input.dim(0), input.numel() / input.dim(0)});
    return input.reshaped({input.numel()});
  }
  Tensor backward(const Tensor& grad_out) override { return grad_out.reshaped(input_shape_); }
  void collect_params(const std::string&, std::vector<ParamRef>&) override {}

 private:
  std::vector<std::size_t> input_shape_;
};

// ---- composite layers ----------------------------------------------------------

class InceptionBlockLayer final : public Layer {
 public:
  InceptionBlockLayer(std::size_t in_ch, const InceptionWidths& w, SplitMix64& rng) {
    b1_.append("conv", make_conv(in_ch, w.b1, 1, 1, 0, rng));
    b1_.append("relu", make_relu());
    b2_.append("reduce", make_conv(in_ch, w.b2_reduce, 1, 1, 0, rng));
    b2_.append("relu1", make_relu());
    b2_.append("conv", make_conv(w.b2_reduce, w.b2, 3, 1, 1, rng));
    b2_.append("relu2", make_relu());
    b3_.append("reduce", make_conv(in_ch, w.b3_reduce, 1, 1, 0, rng));
    b3_.append("relu1", make_relu());
    b3_.append("conv1", make_conv(w.b3_reduce, w.b3, 3, 1, 1, rng));
    b3_.append("relu2", make_relu());
    b3_.append("conv2", make_conv(w.b3, w.b3, 3, 1, 1, rng));
    b3_.append("relu3", make_relu());
    bp_.append("pool", LayerPtr(new SameMaxPoolLayer()));
    bp_.append("proj", make_conv(in_ch, w.pool_proj, 1, 1, 0, rng));
    bp_.append("relu", make_relu());
  }

  Tensor forward(const Tensor& input) override {
    Tensor o1 = b1_.forward(input);
    Tensor o2 = b2_.forward(input);
    Tensor o3 = b3_.forward(input);
    Tensor o4 = bp_.forward(input);
    shapes_ = {o1.shape(), o2.shape(), o3.shape(), o4.shape()};
    return nn::concat_channels({&o1, &o2, &o3, &o4});
  }

  Tensor backward(const Tensor& grad_out) override {
    std::vector<Tensor> split = nn::concat_channels_backward(shapes_, grad_out);
    Tensor grad_in = b1_.backward(split[0]);
    accumulate(grad_in, b2_.backward(split[1]));
    accumulate(grad_in, b3_.backward(split[2]));
    accumulate(grad_in, bp_.backward(split[3]));
    return grad_in;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    b1_.collect_params(prefix + "b1.", out);
    b2_.collect_params(prefix + "b2.", out);
    b3_.collect_params(prefix + "b3.", out);
    bp_.collect_params(prefix + "pool.", out);
  }

 private:
  Sequential b1_, b2_, b3_, bp_;
  std::vector<std::vector<std::size_t>> shapes_;
};

class ResidualBlockLayer final : public Layer {
 public:
  ResidualBlockLayer(std::size_t in_ch, std::size_t out_ch, std::size_t stride, SplitMix64& rng) {
    main_.append("conv1", make_conv(in_ch, out_ch, 3, stride, 1, rng));
    main_.append("relu", make_relu());
    main_.append("conv2", make_conv(out_ch, out_ch, 3, 1, 1, rng));
    if (stride != 1 || in_ch != out_ch)
      projection_ = make_conv(in_ch, out_ch, 1, stride, 0, rng);
  }

  Tensor forward(const Tensor& input) override {
    Tensor main = main_.forward(input);
    Tensor shortcut = projection_ ? projection_->forward(input) : input;
    return nn::add(main, shortcut);
  }

  Tensor backward(const Tensor& grad_out) override {
    Tensor grad_in = main_.backward(grad_out);
    if (projection_) {
      accumulate(grad_in, projection_->backward(grad_out));
    } else {
      accumulate(grad_in, grad_out);
    }
    return grad_in;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    main_.collect_params(prefix + "main.", out);
    if (projection_) projection_->collect_params(prefix + "proj.", out);
  }

 private:
  Sequential main_;
  LayerPtr projection_;
};

class GruSequenceLayer final : public Layer {
 public:
  GruSequenceLayer(std::size_t channels, std::size_t width, std::size_t hidden, SplitMix64& rng)
      : params_(nn::GruParams::zeros(channels * width, hidden)),
        grads_(nn::GruParams::zeros(channels * width, hidden)),
        channels_(channels),
        width_(width),
        hidden_(hidden) {
    const std::size_t d = channels * width;
    nn::init_xavier_uniform(params_.wz, d, hidden, rng);
    nn::init_xavier_uniform(params_.uz, hidden, hidden, rng);
    nn::init_xavier_uniform(params_.wr, d, hidden, rng);
    nn::init_xavier_uniform(params_.ur, hidden, hidden, rng);
    nn::init_xavier_uniform(params_.wh, d, hidden, rng);
    nn::init_xavier_uniform(params_.uh, hidden, hidden, rng);
  }

  Tensor forward(const Tensor& input) override {
    const bool batched = input.rank() == 4;
    if (!batched && input.rank() != 3)
      raise(errc::shape_mismatch, "gru input must be (C,H,W) or (N,C,H,W)");
    const std::size_t n = batched ? input.dim(0) : 1;
    const std::size_t c = input.dim(batched ? 1 : 0);
    const std::size_t h = input.dim(batched ? 2 : 1);
    const std::size_t w = input.dim(batched ? 3 : 2);
    if (c != channels_ || w != width_)
      raise(errc::shape_mismatch, "gru input geometry does not match layer");

    input_shape_ = input.shape();
    batched_ = batched;
    const std::size_t d = channels_ * width_;
    Tensor hidden({n, hidden_});
    caches_.clear();
    caches_.reserve(h);
    for (std::size_t t = 0; t < h; ++t) {
      // timestep t = row t of every channel, features laid out (c, w)
      Tensor x({n, d});
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* src = input.data() + ((i * c + ch) * h + t) * w;
          std::copy(src, src + w, x.data() + i * d + ch * w);
        }
      nn::GruStepResult step = nn::gru_step_forward(x, hidden, params_);
      caches_.push_back(std::move(step.cache));
      hidden = std::move(step.h_next);
    }
    return batched ? hidden : hidden.reshaped({hidden_});
  }

  Tensor backward(const Tensor& grad_out) override {
    const std::size_t n = batched_ ? input_shape_[0] : 1;
    const std::size_t c = channels_;
    const std::size_t h = input_shape_[batched_ ? 2 : 1];
    const std::size_t w = width_;
    Tensor dh = grad_out.numel() == n * hidden_ && grad_out.rank() == 1
                    ? grad_out.reshaped({n, hidden_})
                    : grad_out;
    Tensor grad_in(input_shape_);
    const std::size_t d = channels_ * width_;
    for (std::size_t t = h; t-- > 0;) {
      nn::GruStepGrads step = nn::gru_step_backward(caches_[t], params_, dh);
      const std::pair<Tensor*, const Tensor*> pairs[] = {
          {&grads_.wz, &step.params.wz}, {&grads_.uz, &step.params.uz},
          {&grads_.bz, &step.params.bz}, {&grads_.wr, &step.params.wr},
          {&grads_.ur, &step.params.ur}, {&grads_.br, &step.params.br},
          {&grads_.wh, &step.params.wh}, {&grads_.uh, &step.params.uh},
          {&grads_.bh, &step.params.bh}};
      for (auto [dst, src] : pairs) accumulate(*dst, *src);
      dh = std::move(step.h_prev);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* src = step.x.data() + i * d + ch * w;
          std::copy(src, src + w, grad_in.data() + ((i * c + ch) * h + t) * w);
        }
    }
    return grad_in;
  }

  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override {
    out.push_back({prefix + "wz", &params_.wz, &grads_.wz});
    out.push_back({prefix + "uz", &params_.uz, &grads_.uz});
    out.push_back({prefix + "bz", &params_.bz, &grads_.bz});
    out.push_back({prefix + "wr", &params_.wr, &grads_.wr});
    out.push_back({prefix + "ur", &params_.ur, &grads_.ur});
    out.push_back({prefix + "br", &params_.br, &grads_.br});
    out.push_back({prefix + "wh", &params_.wh, &grads_.wh});
    out.push_back({prefix + "uh", &params_.uh, &grads_.uh});
    out.push_back({prefix + "bh", &params_.bh, &grads_.bh});
  }

 private:
  nn::GruParams params_, grads_;
  std::size_t channels_, width_, hidden_;
  std::vector<nn::GruStepCache> caches_;
  std::vector<std::size_t> input_shape_;
  bool batched_ = true;
};

}  // namespace

// ---- Sequential ----------------------------------------------------------------

void Sequential::append(std::string name, LayerPtr layer) {
  layers_.emplace_back(std::move(name), std::move(layer));
}

Tensor Sequential::forward(const Tensor& input) {
  Tensor value = input;
  for (auto& [name, layer] : layers_) value = layer->forward(value);
  return value;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor grad = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) grad = it->second->backward(grad);
  return grad;
}

void Sequential::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (auto& [name, layer] : layers_) layer->collect_params(prefix + name + ".", out);
}

// ---- factories -------------------------------------------------------------------

LayerPtr make_conv(std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
                   std::size_t stride, std::size_t padding, SplitMix64& rng) {
  return LayerPtr(new Conv2dLayer(in_channels, out_channels, kernel, stride, padding, rng));
}
LayerPtr make_relu() { return LayerPtr(new ReluLayer()); }
LayerPtr make_maxpool(std::size_t window, std::size_t stride) {
  return LayerPtr(new MaxPoolLayer(window, stride));
}
LayerPtr make_global_avg_pool() { return LayerPtr(new GlobalAvgPoolLayer()); }
LayerPtr make_flatten() { return LayerPtr(new FlattenLayer()); }
LayerPtr make_dense(std::size_t in_dim, std::size_t out_dim, SplitMix64& rng) {
  return LayerPtr(new DenseLayer(in_dim, out_dim, rng));
}
LayerPtr make_inception_block(std::size_t in_channels, const InceptionWidths& widths,
                              SplitMix64& rng) {
  return LayerPtr(new InceptionBlockLayer(in_channels, widths, rng));
}
LayerPtr make_residual_block(std::size_t in_channels, std::size_t out_channels,
                             std::size_t stride, SplitMix64& rng) {
  return LayerPtr(new ResidualBlockLayer(in_channels, out_channels, stride, rng));
}
LayerPtr make_gru_sequence(std::size_t channels, std::size_t width, std::size_t hidden,
                           SplitMix64& rng) {
  return LayerPtr(new GruSequenceLayer(channels, width, hidden, rng));
}

// ---- Model ------------------------------------------------------------------------

Model::Model(ModelSpec spec, LayerPtr trunk, LayerPtr aux_head, LayerPtr post)
    : spec_(spec), trunk_(std::move(trunk)), aux_head_(std::move(aux_head)),
      post_(std::move(post)) {}

Tensor Model::forward(const Tensor& batch) {
  const bool batched = batch.rank() == 4;
  if (!batched && batch.rank() != 3)
    raise(errc::shape_mismatch, "model input must be (C,H,W) or (N,C,H,W)");
  const std::size_t c = batch.dim(batched ? 1 : 0);
  const std::size_t h = batch.dim(batched ? 2 : 1);
  const std::size_t w = batch.dim(batched ? 3 : 2);
  if (c != spec_.input_channels || h != spec_.input_height || w != spec_.input_width)
    raise(errc::shape_mismatch,
          "input is (" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) +
              "), model wants (" + std::to_string(spec_.input_channels) + "," +
              std::to_string(spec_.input_height) + "," + std::to_string(spec_.input_width) + ")");

  Tensor mid = trunk_->forward(batch);
  if (aux_head_) {
    aux_scores_ = aux_head_->forward(mid);
    return post_->forward(mid);
  }
  if (post_) return post_->forward(mid);
  return mid;
}

void Model::backward(const Tensor& grad_scores) {
  if (post_) {
    trunk_->backward(post_->backward(grad_scores));
  } else {
    trunk_->backward(grad_scores);
  }
}

void Model::backward(const Tensor& grad_scores, const Tensor& grad_aux) {
  if (!aux_head_) raise(errc::shape_mismatch, "model has no auxiliary head");
  Tensor grad_mid = post_->backward(grad_scores);
  accumulate(grad_mid, aux_head_->backward(grad_aux));
  trunk_->backward(grad_mid);
}

void Model::zero_grads() {
  for (ParamRef& p : params()) p.grad->fill(0.0);
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  trunk_->collect_params("", out);
  if (aux_head_) aux_head_->collect_params("aux.", out);
  if (post_) post_->collect_params("", out);
  return out;
}

std::size_t Model::param_count() const {
  std::size_t count = 0;
  for (const ParamRef& p : const_cast<Model*>(this)->params()) count += p.value->numel();
  return count;
}

// ---- build_model ---------------------------------------------------------------------

namespace {

std::size_t scaled(std::size_t base, double multiplier) {
  const long v = std::lround(static_cast<double>(base) * multiplier);
  return v < 1 ? 1 : static_cast<std::size_t>(v);
}

struct ShapeTracker {
  std::size_t c, h, w;

  void conv(std::size_t out_ch, std::size_t kernel, std::size_t stride, std::size_t padding) {
    if (kernel > h + 2 * padding || kernel > w + 2 * padding)
      raise(errc::incompatible_shape, "input too small for a " + std::to_string(kernel) +
                                          "x" + std::to_string(kernel) + " convolution");
    c = out_ch;
    h = (h + 2 * padding - kernel) / stride + 1;
    w = (w + 2 * padding - kernel) / stride + 1;
  }
  void pool(std::size_t window, std::size_t stride) {
    if (window > h || window > w)
      raise(errc::incompatible_shape, "input too small for the pooling pyramid");
    h = (h - window) / stride + 1;
    w = (w - window) / stride + 1;
  }
};

void validate_spec(const ModelSpec& spec) {
  if (spec.num_classes < 2) raise(errc::config_error, "num_classes must be >= 2");
  if (spec.input_channels != 1 && spec.input_channels != 3)
    raise(errc::config_error, "input channels must be 1 or 3");
  if (spec.input_height < 1 || spec.input_width < 1)
    raise(errc::incompatible_shape, "input extent must be >= 1");
  if (!(spec.width_multiplier > 0.0))
    raise(errc::config_error, "width_multiplier must be > 0");
}

}  // namespace

Model build_model(const ModelSpec& requested) {
  validate_spec(requested);
  ModelSpec spec = requested;
  const bool svm_arch = spec.architecture == Architecture::cnn_svm ||
                        spec.architecture == Architecture::gru_svm ||
                        spec.architecture == Architecture::mlp_svm;
  if (svm_arch && spec.head == Head::softmax) spec.head = Head::hinge_l2;

  SplitMix64 rng(spec.seed);
  const double mult = spec.width_multiplier;
  const std::size_t f = spec.num_classes;
  ShapeTracker dims{spec.input_channels, spec.input_height, spec.input_width};
  auto trunk = std::make_unique<Sequential>();
  LayerPtr aux;
  LayerPtr post;

  switch (spec.architecture) {
    case Architecture::tiny_vgg: {
      const std::size_t widths[3] = {scaled(16, mult), scaled(32, mult), scaled(64, mult)};
      std::size_t in_ch = spec.input_channels;
      for (int stage = 0; stage < 3; ++stage) {
        const std::string tag = std::to_string(stage + 1);
        trunk->append("conv" + tag + "a", make_conv(in_ch, widths[stage], 3, 1, 1, rng));
        trunk->append("relu" + tag + "a", make_relu());
        dims.conv(widths[stage], 3, 1, 1);
        trunk->append("conv" + tag + "b", make_conv(widths[stage], widths[stage], 3, 1, 1, rng));
        trunk->append("relu" + tag + "b", make_relu());
        dims.conv(widths[stage], 3, 1, 1);
        trunk->append("pool" + tag, make_maxpool(2, 2));
        dims.pool(2, 2);
        in_ch = widths[stage];
      }
      trunk->append("flatten", make_flatten());
      const std::size_t hidden = scaled(128, mult);
      trunk->append("fc1", make_dense(dims.c * dims.h * dims.w, hidden, rng));
      trunk->append("fc1_relu", make_relu());
      trunk->append("fc2", make_dense(hidden, f, rng));
      break;
    }

    case Architecture::tiny_inception: {
      const std::size_t stem = scaled(16, mult);
      trunk->append("stem", make_conv(spec.input_channels, stem, 3, 1, 1, rng));
      trunk->append("stem_relu", make_relu());
      dims.conv(stem, 3, 1, 1);

      const InceptionWidths w1{scaled(8, mult),  scaled(8, mult),  scaled(16, mult),
                               scaled(4, mult),  scaled(8, mult),  scaled(8, mult)};
      trunk->append("block1", make_inception_block(stem, w1, rng));
      dims.c = w1.total();
      trunk->append("pool1", make_maxpool(2, 2));
      dims.pool(2, 2);

      // auxiliary classifier hangs off the first block's pooled output
      auto aux_seq = std::make_unique<Sequential>();
      aux_seq->append("gap", make_global_avg_pool());
      const std::size_t aux_hidden = scaled(32, mult);
      aux_seq->append("fc1", make_dense(dims.c, aux_hidden, rng));
      aux_seq->append("relu", make_relu());
      aux_seq->append("fc2", make_dense(aux_hidden, f, rng));
      aux = std::move(aux_seq);

      auto post_seq = std::make_unique<Sequential>();
      const InceptionWidths w2{scaled(16, mult), scaled(16, mult), scaled(32, mult),
                               scaled(8, mult),  scaled(16, mult), scaled(16, mult)};
      post_seq->append("block2", make_inception_block(dims.c, w2, rng));
      dims.c = w2.total();
      post_seq->append("pool2", make_maxpool(2, 2));
      dims.pool(2, 2);
      post_seq->append("gap", make_global_avg_pool());
      post_seq->append("fc", make_dense(dims.c, f, rng));
      post = std::move(post_seq);
      break;
    }

    case Architecture::tiny_resnet: {
      const std::size_t w16 = scaled(16, mult), w32 = scaled(32, mult), w64 = scaled(64, mult);
      trunk->append("stem", make_conv(spec.input_channels, w16, 3, 1, 1, rng));
      trunk->append("stem_relu", make_relu());
      dims.conv(w16, 3, 1, 1);
      trunk->append("block1", make_residual_block(w16, w16, 1, rng));
      trunk->append("block2", make_residual_block(w16, w32, 2, rng));
      dims.conv(w32, 3, 2, 1);
      trunk->append("block3", make_residual_block(w32, w64, 2, rng));
      dims.conv(w64, 3, 2, 1);
      trunk->append("gap", make_global_avg_pool());
      trunk->append("fc", make_dense(w64, f, rng));
      break;
    }

    case Architecture::cnn_svm: {
      const std::size_t w32 = scaled(32, mult), w64 = scaled(64, mult);
      trunk->append("conv1", make_conv(spec.input_channels, w32, 5, 1, 2, rng));
      trunk->append("relu1", make_relu());
      dims.conv(w32, 5, 1, 2);
      trunk->append("pool1", make_maxpool(2, 2));
      dims.pool(2, 2);
      trunk->append("conv2", make_conv(w32, w64, 5, 1, 2, rng));
      trunk->append("relu2", make_relu());
      dims.conv(w64, 5, 1, 2);
      trunk->append("pool2", make_maxpool(2, 2));
      dims.pool(2, 2);
      trunk->append("flatten", make_flatten());
      const std::size_t hidden = scaled(1024, mult);
      trunk->append("fc1", make_dense(dims.c * dims.h * dims.w, hidden, rng));
      trunk->append("fc1_relu", make_relu());
      trunk->append("fc2", make_dense(hidden, f, rng));
      break;
    }

    case Architecture::gru_svm: {
      const std::size_t hidden = scaled(128, mult);
      trunk->append("gru", make_gru_sequence(spec.input_channels, spec.input_width, hidden, rng));
      trunk->append("fc", make_dense(hidden, f, rng));
      break;
    }

    case Architecture::mlp_svm: {
      const std::size_t h1 = scaled(512, mult), h2 = scaled(256, mult);
      trunk->append("flatten", make_flatten());
      trunk->append("fc1", make_dense(spec.input_channels * spec.input_height * spec.input_width,
                                      h1, rng));
      trunk->append("relu1", make_relu());
      trunk->append("fc2", make_dense(h1, h2, rng));
      trunk->append("relu2", make_relu());
      trunk->append("fc3", make_dense(h2, f, rng));
      break;
    }
  }

  return Model(spec, std::move(trunk), std::move(aux), std::move(post));
}

// ---- spec <-> config text -----------------------------------------------------------

std::string spec_to_config(const ModelSpec& spec) {
  std::ostringstream out;
  out << "model.architecture = " << architecture_name(spec.architecture) << "\n"
      << "model.input_channels = " << spec.input_channels << "\n"
      << "model.input_height = " << spec.input_height << "\n"
      << "model.input_width = " << spec.input_width << "\n"
      << "model.num_classes = " << spec.num_classes << "\n"
      << "model.width_multiplier = " << double_repr(spec.width_multiplier) << "\n"
      << "model.head = " << head_name(spec.head) << "\n"
      << "model.seed = " << spec.seed << "\n";
  return out.str();
}

ModelSpec spec_from_config(const std::string& text) {
  KeyValueConfig kv = KeyValueConfig::parse_text(text);
  ModelSpec spec;
  spec.architecture = architecture_from_name(kv.take_string("model.architecture", "tiny_vgg"));
  spec.input_channels = kv.take_size("model.input_channels", 1);
  spec.input_height = kv.take_size("model.input_height", 64);
  spec.input_width = kv.take_size("model.input_width", 64);
  spec.num_classes = kv.take_size("model.num_classes", 25);
  spec.width_multiplier = kv.take_double("model.width_multiplier", 1.0);
  spec.head = head_from_name(kv.take_string("model.head", "softmax"));
  spec.seed = kv.take_u64("model.seed", 42);
  for (const std::string& key : kv.remaining_keys())
    raise(errc::config_error, "unknown model spec key '" + key + "'");
  return spec;
}

}  // namespace malvis
