#include <doctest.h>

#include <cmath>
#include <vector>

#include "malvis/error.hpp"
#include "malvis/nn.hpp"
#include "malvis/rng.hpp"
#include "support/fd.hpp"
#include "support/naive_hinge.hpp"

using namespace malvis;
using namespace malvis::nn;
using testsupport::max_rel_err;
using testsupport::numeric_gradient;

namespace {

Tensor random_tensor(SplitMix64& rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_range(lo, hi);
  return t;
}

// Scalar loss over an op output: fixed random projection sum(w * out).
Tensor projection_like(SplitMix64& rng, const Tensor& out) {
  return random_tensor(rng, out.shape());
}

double project(const Tensor& w, const Tensor& out) {
  double sum = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) sum += w[i] * out[i];
  return sum;
}

}  // namespace

// ---- convolution ------------------------------------------------------------

TEST_CASE("conv2d all-ones 3x3 sums to 9") {
  Tensor input({1, 3, 3});
  input.fill(1.0);
  Tensor kernel({1, 1, 3, 3});
  kernel.fill(1.0);
  Tensor bias({1});
  const Tensor out = conv2d_forward(input, kernel, bias, 1, 0);
  REQUIRE(out.shape() == std::vector<std::size_t>({1, 1, 1}));
  CHECK(out[0] == doctest::Approx(9.0));
}

TEST_CASE("conv2d 1x1 identity kernel is the identity map") {
  SplitMix64 rng(31);
  const Tensor input = random_tensor(rng, {2, 4, 5});
  Tensor kernel({2, 2, 1, 1});
  kernel.at(0, 0, 0, 0) = 1.0;
  kernel.at(1, 1, 0, 0) = 1.0;
  Tensor bias({2});
  const Tensor out = conv2d_forward(input, kernel, bias, 1, 0);
  REQUIRE(out.shape() == input.shape());
  for (std::size_t i = 0; i < input.numel(); ++i) REQUIRE(out[i] == input[i]);
}

TEST_CASE("conv2d output geometry and shape errors") {
  Tensor input({1, 5, 5});
  Tensor kernel({2, 1, 3, 3});
  Tensor bias({2});
  CHECK(conv2d_forward(input, kernel, bias, 2, 1).shape() ==
        std::vector<std::size_t>({2, 3, 3}));
  Tensor wrong_c({3, 2, 3, 3});
  CHECK_THROWS_AS(conv2d_forward(input, wrong_c, bias, 1, 0), Error);
  Tensor huge({2, 1, 9, 9});
  CHECK_THROWS_AS(conv2d_forward(input, huge, bias, 1, 0), Error);
}

TEST_CASE("conv2d backward matches finite differences") {
  SplitMix64 rng(37);
  for (const auto& [stride, padding] : std::vector<std::pair<std::size_t, std::size_t>>{
           {1, 0}, {1, 1}, {2, 1}}) {
    Tensor input = random_tensor(rng, {2, 5, 5});
    Tensor kernel = random_tensor(rng, {3, 2, 3, 3});
    Tensor bias = random_tensor(rng, {3});
    const Tensor w = projection_like(rng, conv2d_forward(input, kernel, bias, stride, padding));
    const auto loss = [&] { return project(w, conv2d_forward(input, kernel, bias, stride, padding)); };

    const nn::ConvGrads grads = conv2d_backward(input, kernel, w, stride, padding);
    CHECK(max_rel_err(grads.input, numeric_gradient(loss, input)) < 1e-6);
    CHECK(max_rel_err(grads.kernel, numeric_gradient(loss, kernel)) < 1e-6);
    CHECK(max_rel_err(grads.bias, numeric_gradient(loss, bias)) < 1e-6);
  }
}

TEST_CASE("conv2d batched equals per-sample") {
  SplitMix64 rng(41);
  const Tensor a = random_tensor(rng, {2, 6, 6});
  const Tensor b = random_tensor(rng, {2, 6, 6});
  Tensor batch({2, 2, 6, 6});
  std::copy(a.data(), a.data() + a.numel(), batch.data());
  std::copy(b.data(), b.data() + b.numel(), batch.data() + a.numel());
  const Tensor kernel = random_tensor(rng, {4, 2, 3, 3});
  const Tensor bias = random_tensor(rng, {4});
  const Tensor out = conv2d_forward(batch, kernel, bias, 1, 1);
  const Tensor oa = conv2d_forward(a, kernel, bias, 1, 1);
  const Tensor ob = conv2d_forward(b, kernel, bias, 1, 1);
  for (std::size_t i = 0; i < oa.numel(); ++i) {
    REQUIRE(out[i] == oa[i]);
    REQUIRE(out[oa.numel() + i] == ob[i]);
  }
}

// ---- pooling ----------------------------------------------------------------

TEST_CASE("maxpool picks window maxima") {
  Tensor input({1, 2, 2}, {1, 2, 3, 4});
  const nn::PoolResult result = maxpool2d_forward(input, 2, 2);
  REQUIRE(result.output.shape() == std::vector<std::size_t>({1, 1, 1}));
  CHECK(result.output[0] == 4.0);
  CHECK(result.argmax[0] == 3);
}

TEST_CASE("maxpool ties route to the first element in scan order") {
  Tensor input({1, 4, 4});
  input.fill(2.5);
  const nn::PoolResult result = maxpool2d_forward(input, 2, 2);
  Tensor grad_out(result.output.shape());
  grad_out.fill(1.0);
  const Tensor grad_in = maxpool2d_backward(result.argmax, input.shape(), grad_out);
  // gradient lands on the top-left cell of each 2x2 window only
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      REQUIRE(grad_in.at(0, r, c) == ((r % 2 == 0 && c % 2 == 0) ? 1.0 : 0.0));
}

TEST_CASE("maxpool backward matches finite differences") {
  SplitMix64 rng(43);
  Tensor input = random_tensor(rng, {2, 6, 6});
  const nn::PoolResult result = maxpool2d_forward(input, 2, 2);
  const Tensor w = projection_like(rng, result.output);
  const auto loss = [&] { return project(w, maxpool2d_forward(input, 2, 2).output); };
  const Tensor grad_in = maxpool2d_backward(result.argmax, input.shape(), w);
  CHECK(max_rel_err(grad_in, numeric_gradient(loss, input)) < 1e-6);
}

TEST_CASE("maxpool rejects oversized windows") {
  Tensor input({1, 2, 2});
  CHECK_THROWS_AS(maxpool2d_forward(input, 3, 1), Error);
}

TEST_CASE("global_avg_pool averages planes") {
  Tensor ones({3, 4, 4});
  ones.fill(1.0);
  const Tensor out = global_avg_pool_forward(ones);
  REQUIRE(out.shape() == std::vector<std::size_t>({3}));
  for (std::size_t c = 0; c < 3; ++c) CHECK(out[c] == doctest::Approx(1.0));

  Tensor single({1, 1, 1}, {7.25});
  CHECK(global_avg_pool_forward(single)[0] == 7.25);
}

TEST_CASE("global_avg_pool backward matches finite differences") {
  SplitMix64 rng(47);
  Tensor input = random_tensor(rng, {2, 3, 5});
  const Tensor w = projection_like(rng, global_avg_pool_forward(input));
  const auto loss = [&] { return project(w, global_avg_pool_forward(input)); };
  const Tensor grad_in = global_avg_pool_backward(input.shape(), w);
  CHECK(max_rel_err(grad_in, numeric_gradient(loss, input)) < 1e-6);
}

// ---- dense / elementwise -------------------------------------------------------

TEST_CASE("dense with identity weights passes input through") {
  Tensor weights({2, 2}, {1, 0, 0, 1});
  Tensor bias({2});
  Tensor input({2}, {5, 7});
  const Tensor out = dense_forward(input, weights, bias);
  CHECK(out[0] == 5.0);
  CHECK(out[1] == 7.0);
}

TEST_CASE("dense backward matches finite differences") {
  SplitMix64 rng(53);
  Tensor input = random_tensor(rng, {3, 4});
  Tensor weights = random_tensor(rng, {5, 4});
  Tensor bias = random_tensor(rng, {5});
  const Tensor w = projection_like(rng, dense_forward(input, weights, bias));
  const auto loss = [&] { return project(w, dense_forward(input, weights, bias)); };
  const nn::DenseGrads grads = dense_backward(input, weights, w);
  CHECK(max_rel_err(grads.input, numeric_gradient(loss, input)) < 1e-6);
  CHECK(max_rel_err(grads.weights, numeric_gradient(loss, weights)) < 1e-6);
  CHECK(max_rel_err(grads.bias, numeric_gradient(loss, bias)) < 1e-6);
}

TEST_CASE("relu clamps negatives and uses subgradient 0 at 0") {
  Tensor input({3}, {-1, 0, 2});
  const Tensor out = relu_forward(input);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 2.0);
  Tensor grad_out({3}, {10, 10, 10});
  const Tensor grad_in = relu_backward(input, grad_out);
  CHECK(grad_in[0] == 0.0);
  CHECK(grad_in[1] == 0.0);  // kink convention
  CHECK(grad_in[2] == 10.0);
}

TEST_CASE("relu backward matches finite differences away from the kink") {
  SplitMix64 rng(59);
  Tensor input = random_tensor(rng, {40});
  for (std::size_t i = 0; i < input.numel(); ++i)
    if (std::abs(input[i]) < 1e-3) input[i] = 0.1;  // nudge off the kink
  const Tensor w = projection_like(rng, input);
  const auto loss = [&] { return project(w, relu_forward(input)); };
  const Tensor grad_in = relu_backward(input, w);
  CHECK(max_rel_err(grad_in, numeric_gradient(loss, input)) < 1e-6);
}

TEST_CASE("concat_channels stacks and splits exactly") {
  SplitMix64 rng(61);
  const Tensor a = random_tensor(rng, {2, 3, 4});
  const Tensor b = random_tensor(rng, {3, 3, 4});
  const Tensor out = concat_channels({&a, &b});
  REQUIRE(out.shape() == std::vector<std::size_t>({5, 3, 4}));

  const Tensor grad_out = random_tensor(rng, {5, 3, 4});
  const std::vector<Tensor> split =
      concat_channels_backward({a.shape(), b.shape()}, grad_out);
  REQUIRE(split.size() == 2);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(split[0][i] == grad_out[i]);
  for (std::size_t i = 0; i < b.numel(); ++i) REQUIRE(split[1][i] == grad_out[a.numel() + i]);
}

TEST_CASE("add is elementwise and zero is its identity") {
  SplitMix64 rng(67);
  const Tensor a = random_tensor(rng, {2, 3});
  Tensor zero({2, 3});
  const Tensor out = add(a, zero);
  for (std::size_t i = 0; i < a.numel(); ++i) REQUIRE(out[i] == a[i]);
  const auto [ga, gb] = add_backward(a);
  CHECK(ga == a);
  CHECK(gb == a);
  CHECK_THROWS_AS(add(a, Tensor({3, 2})), Error);
}

// ---- GRU ------------------------------------------------------------------------

TEST_CASE("gru_step with zero parameters blends h by one half") {
  nn::GruParams params = nn::GruParams::zeros(3, 2);
  Tensor x({3}, {0.4, -0.2, 0.9});
  Tensor h({2}, {1, 1});
  const Tensor next = gru_step(x, h, params);
  // z = sigmoid(0) = 0.5, candidate = tanh(0) = 0 -> h' = 0.5*h
  CHECK(next[0] == doctest::Approx(0.5));
  CHECK(next[1] == doctest::Approx(0.5));

  Tensor h0({2});
  const Tensor still_zero = gru_step(x, h0, params);
  CHECK(still_zero[0] == 0.0);
  CHECK(still_zero[1] == 0.0);
}

TEST_CASE("gru_step backward matches finite differences on x, h and all nine parameters") {
  SplitMix64 rng(71);
  nn::GruParams params = nn::GruParams::zeros(4, 3);
  for (Tensor* t : {&params.wz, &params.uz, &params.bz, &params.wr, &params.ur, &params.br,
                    &params.wh, &params.uh, &params.bh})
    for (std::size_t i = 0; i < t->numel(); ++i) (*t)[i] = rng.next_range(-0.8, 0.8);

  Tensor x = random_tensor(rng, {2, 4});
  Tensor h = random_tensor(rng, {2, 3});
  const Tensor w = projection_like(rng, gru_step(x, h, params));
  const auto loss = [&] { return project(w, gru_step(x, h, params)); };

  const nn::GruStepResult fwd = gru_step_forward(x, h, params);
  const nn::GruStepGrads grads = gru_step_backward(fwd.cache, params, w);

  CHECK(max_rel_err(grads.x, numeric_gradient(loss, x)) < 1e-6);
  CHECK(max_rel_err(grads.h_prev, numeric_gradient(loss, h)) < 1e-6);
  const std::pair<const Tensor*, Tensor*> param_pairs[] = {
      {&grads.params.wz, &params.wz}, {&grads.params.uz, &params.uz},
      {&grads.params.bz, &params.bz}, {&grads.params.wr, &params.wr},
      {&grads.params.ur, &params.ur}, {&grads.params.br, &params.br},
      {&grads.params.wh, &params.wh}, {&grads.params.uh, &params.uh},
      {&grads.params.bh, &params.bh}};
  for (const auto& [analytic, value] : param_pairs)
    CHECK(max_rel_err(*analytic, numeric_gradient(loss, *value)) < 1e-6);
}

// ---- losses ------------------------------------------------------------------------

TEST_CASE("softmax_cross_entropy two-class symmetric case") {
  Tensor scores({2}, {0, 0});
  const nn::LossResult r = softmax_cross_entropy(scores, 0);
  CHECK(r.loss == doctest::Approx(std::log(2.0)));
  CHECK(r.grad[0] == doctest::Approx(-0.5));
  CHECK(r.grad[1] == doctest::Approx(0.5));
}

TEST_CASE("softmax_cross_entropy is stable under huge scores") {
  Tensor scores({2}, {1000, 0});
  const nn::LossResult r = softmax_cross_entropy(scores, 0);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss == doctest::Approx(0.0));
}

TEST_CASE("softmax_cross_entropy gradient sums to zero and matches finite differences") {
  SplitMix64 rng(73);
  for (int round = 0; round < 20; ++round) {
    Tensor scores = random_tensor(rng, {7}, -3.0, 3.0);
    const std::size_t label = rng.next_below(7);
    const nn::LossResult r = softmax_cross_entropy(scores, label);
    double sum = 0.0;
    for (std::size_t i = 0; i < 7; ++i) sum += r.grad[i];
    CHECK(std::abs(sum) < 1e-12);
    const auto loss = [&] { return softmax_cross_entropy(scores, label).loss; };
    CHECK(max_rel_err(r.grad, numeric_gradient(loss, scores)) < 1e-6);
  }
}

TEST_CASE("softmax_cross_entropy rejects bad labels") {
  Tensor scores({3});
  try {
    softmax_cross_entropy(scores, 3);
    FAIL("expected LabelOutOfRange");
  } catch (const Error& e) {
    CHECK(e.code() == errc::label_out_of_range);
  }
}

TEST_CASE("multiclass_hinge satisfied margins give zero loss") {
  Tensor scores({2}, {2, -2});
  for (const auto variant : {nn::HingeVariant::l1, nn::HingeVariant::l2}) {
    const nn::LossResult r = multiclass_hinge(scores, 0, variant);
    CHECK(r.loss == 0.0);
    CHECK(r.grad[0] == 0.0);
    CHECK(r.grad[1] == 0.0);
  }
}

TEST_CASE("multiclass_hinge L2 at the origin") {
  Tensor scores({2}, {0, 0});
  const nn::LossResult r = multiclass_hinge(scores, 0, nn::HingeVariant::l2);
  CHECK(r.loss == doctest::Approx(2.0));
  CHECK(r.grad[0] == doctest::Approx(-2.0));
  CHECK(r.grad[1] == doctest::Approx(2.0));
}

TEST_CASE("multiclass_hinge matches the naive oracle within 1e-12") {
  SplitMix64 rng(79);
  for (int round = 0; round < 100; ++round) {
    const std::size_t f = 2 + rng.next_below(24);
    std::vector<double> raw(f);
    for (auto& s : raw) s = rng.next_range(-3.0, 3.0);
    Tensor scores({f}, std::vector<double>(raw));
    const std::size_t label = rng.next_below(f);

    for (const bool squared : {false, true}) {
      const auto variant = squared ? nn::HingeVariant::l2 : nn::HingeVariant::l1;
      const nn::LossResult r = multiclass_hinge(scores, label, variant);
      const testsupport::NaiveHinge expected = testsupport::naive_hinge(raw, label, squared);
      REQUIRE(std::abs(r.loss - expected.loss) < 1e-12);
      for (std::size_t j = 0; j < f; ++j)
        REQUIRE(std::abs(r.grad[j] - expected.grad[j]) < 1e-12);
      REQUIRE(r.loss >= 0.0);
      // zero loss exactly when every margin is satisfied
      bool all_satisfied = true;
      for (std::size_t j = 0; j < f; ++j) {
        const double t = j == label ? 1.0 : -1.0;
        if (1.0 - t * raw[j] > 0.0) all_satisfied = false;
      }
      REQUIRE((r.loss == 0.0) == all_satisfied);
    }
  }
}

TEST_CASE("multiclass_hinge L2 gradient matches finite differences") {
  SplitMix64 rng(83);
  Tensor scores = random_tensor(rng, {9}, -2.0, 2.0);
  for (std::size_t i = 0; i < scores.numel(); ++i)  // keep margins away from the hinge point
    if (std::abs(1.0 - scores[i]) < 1e-3 || std::abs(1.0 + scores[i]) < 1e-3) scores[i] += 0.01;
  const nn::LossResult r = multiclass_hinge(scores, 4, nn::HingeVariant::l2);
  const auto loss = [&] { return multiclass_hinge(scores, 4, nn::HingeVariant::l2).loss; };
  CHECK(max_rel_err(r.grad, numeric_gradient(loss, scores)) < 1e-6);
}

// ---- optimizer ------------------------------------------------------------------------

TEST_CASE("sgd with zero momentum is plain gradient descent") {
  Tensor p({2}, {1.0, -2.0});
  Tensor g({2}, {0.5, 0.25});
  Tensor v({2});
  sgd_momentum_update(p, g, v, 0.1, 0.0);
  CHECK(p[0] == doctest::Approx(0.95));
  CHECK(p[1] == doctest::Approx(-2.025));
}

TEST_CASE("sgd leaves parameters alone when gradient and velocity are zero") {
  Tensor p({3}, {1, 2, 3});
  Tensor g({3});
  Tensor v({3});
  sgd_momentum_update(p, g, v, 0.1, 0.9);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == 2.0);
  CHECK(p[2] == 3.0);
}

TEST_CASE("sgd momentum two hand-computed steps") {
  // p=1, g=0.5 constant, lr=0.1, momentum=0.9:
  //   v1=0.5,  p1=1-0.05=0.95
  //   v2=0.95, p2=0.95-0.095=0.855
  Tensor p({1}, {1.0});
  Tensor g({1}, {0.5});
  Tensor v({1});
  sgd_momentum_update(p, g, v, 0.1, 0.9);
  CHECK(p[0] == doctest::Approx(0.95));
  sgd_momentum_update(p, g, v, 0.1, 0.9);
  CHECK(p[0] == doctest::Approx(0.855));
}

TEST_CASE("sgd validates hyperparameters") {
  Tensor p({1}), g({1}), v({1});
  CHECK_THROWS_AS(sgd_momentum_update(p, g, v, 0.0, 0.9), Error);
  CHECK_THROWS_AS(sgd_momentum_update(p, g, v, 0.1, 1.0), Error);
}

// ---- grad_check -----------------------------------------------------------------------

TEST_CASE("grad_check is near-exact for a linear function") {
  SplitMix64 rng(89);
  Tensor x = random_tensor(rng, {6});
  const Tensor w = random_tensor(rng, {6});
  Tensor analytic = w;
  const nn::ParamGrad pg{&x, &analytic};
  const double err = grad_check([&] { return project(w, x); }, std::span(&pg, 1));
  CHECK(err < 1e-10);
}

TEST_CASE("grad_check confirms a zero gradient for a constant function") {
  Tensor x({4}, {1, 2, 3, 4});
  Tensor zero({4});
  const nn::ParamGrad pg{&x, &zero};
  const double err = grad_check([] { return 3.5; }, std::span(&pg, 1));
  CHECK(err == 0.0);
}

TEST_CASE("grad_check flags a wrong analytic gradient") {
  SplitMix64 rng(97);
  Tensor x = random_tensor(rng, {5});
  const Tensor w = random_tensor(rng, {5});
  Tensor wrong = w;
  wrong[2] += 0.5;  // corrupt one coordinate
  const nn::ParamGrad pg{&x, &wrong};
  const double err = grad_check([&] { return project(w, x); }, std::span(&pg, 1));
  CHECK(err > 1e-2);
}
