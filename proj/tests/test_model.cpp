#include <doctest.h>

#include <cmath>
#include <fstream>
#include <iterator>

#include "malvis/error.hpp"
#include "malvis/model.hpp"
#include "malvis/nn.hpp"
#include "malvis/rng.hpp"
#include "malvis/snapshot.hpp"
#include "support/tmpdir.hpp"

using namespace malvis;

namespace {

Tensor random_input(std::uint64_t seed, std::vector<std::size_t> shape) {
  SplitMix64 rng(seed);
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.next_unit();
  return t;
}

Tensor* param_by_name(Model& model, const std::string& name) {
  for (ParamRef& p : model.params())
    if (p.name == name) return p.value;
  return nullptr;
}

ModelSpec tiny_spec(Architecture arch, std::size_t classes = 25) {
  ModelSpec spec;
  spec.architecture = arch;
  spec.input_channels = 1;
  spec.input_height = 64;
  spec.input_width = 64;
  spec.num_classes = classes;
  spec.seed = 42;
  return spec;
}

}  // namespace

TEST_CASE("tiny_vgg forward yields one score per class") {
  Model model = build_model(tiny_spec(Architecture::tiny_vgg));
  const Tensor scores = model.forward(random_input(1, {1, 64, 64}));
  REQUIRE(scores.shape() == std::vector<std::size_t>({25}));
  const Tensor batched = model.forward(random_input(1, {2, 1, 64, 64}));
  REQUIRE(batched.shape() == std::vector<std::size_t>({2, 25}));
}

TEST_CASE("every architecture builds and produces num_classes scores") {
  for (const Architecture arch :
       {Architecture::tiny_vgg, Architecture::tiny_inception, Architecture::tiny_resnet,
        Architecture::cnn_svm, Architecture::gru_svm, Architecture::mlp_svm}) {
    ModelSpec spec = tiny_spec(arch, 7);
    spec.input_height = 32;
    spec.input_width = 32;
    spec.width_multiplier = 0.5;
    Model model = build_model(spec);
    const Tensor scores = model.forward(random_input(2, {3, 1, 32, 32}));
    REQUIRE(scores.shape() == std::vector<std::size_t>({3, 7}));
    REQUIRE(scores.all_finite());
  }
}

TEST_CASE("batch of one equals the unbatched forward") {
  for (const Architecture arch : {Architecture::tiny_vgg, Architecture::gru_svm}) {
    ModelSpec spec = tiny_spec(arch, 5);
    spec.input_height = 16;
    spec.input_width = 16;
    spec.width_multiplier = 0.5;
    Model model = build_model(spec);
    const Tensor single = random_input(3, {1, 16, 16});
    Tensor batch({1, 1, 16, 16});
    std::copy(single.data(), single.data() + single.numel(), batch.data());
    const Tensor s1 = model.forward(single);
    const Tensor s2 = model.forward(batch);
    REQUIRE(s2.rank() == 2);
    for (std::size_t j = 0; j < 5; ++j) REQUIRE(s1[j] == s2[j]);
  }
}

TEST_CASE("model rejects inputs that do not match its spec") {
  ModelSpec spec = tiny_spec(Architecture::mlp_svm, 4);
  spec.input_height = 16;
  spec.input_width = 16;
  Model model = build_model(spec);
  try {
    model.forward(random_input(4, {3, 16, 16}));
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == errc::shape_mismatch);
  }
}

TEST_CASE("channel-replicated input feeds a 3-channel build") {
  ModelSpec spec = tiny_spec(Architecture::tiny_vgg, 4);
  spec.input_channels = 3;
  spec.input_height = 16;
  spec.input_width = 16;
  spec.width_multiplier = 0.5;
  Model model = build_model(spec);
  const Tensor scores = model.forward(random_input(5, {3, 16, 16}));
  CHECK(scores.shape() == std::vector<std::size_t>({4}));
}

TEST_CASE("unknown architecture and too-small inputs are rejected") {
  CHECK_THROWS_AS(architecture_from_name("vgg19"), Error);
  ModelSpec spec = tiny_spec(Architecture::tiny_vgg, 3);
  spec.input_height = 4;  // 4 -> 2 -> 1 -> cannot pool a third time
  spec.input_width = 4;
  try {
    build_model(spec);
    FAIL("expected IncompatibleShape");
  } catch (const Error& e) {
    CHECK(e.code() == errc::incompatible_shape);
  }
}

TEST_CASE("zeroing the residual branches leaves the shortcut path") {
  ModelSpec spec = tiny_spec(Architecture::tiny_resnet, 6);
  spec.input_height = 16;
  spec.input_width = 16;
  Model model = build_model(spec);
  for (ParamRef& p : model.params())
    if (p.name.find(".main.") != std::string::npos) p.value->fill(0.0);

  const Tensor input = random_input(6, {1, 16, 16});
  const Tensor scores = model.forward(input);

  // shortcut-only path recomputed from the surviving parameters:
  // stem+relu -> (block1 = identity) -> proj2 -> proj3 -> gap -> fc
  const Tensor stem = nn::relu_forward(nn::conv2d_forward(
      input, *param_by_name(model, "stem.kernel"), *param_by_name(model, "stem.bias"), 1, 1));
  const Tensor p2 = nn::conv2d_forward(stem, *param_by_name(model, "block2.proj.kernel"),
                                       *param_by_name(model, "block2.proj.bias"), 2, 0);
  const Tensor p3 = nn::conv2d_forward(p2, *param_by_name(model, "block3.proj.kernel"),
                                       *param_by_name(model, "block3.proj.bias"), 2, 0);
  const Tensor pooled = nn::global_avg_pool_forward(p3);
  const Tensor expected = nn::dense_forward(pooled, *param_by_name(model, "fc.weight"),
                                            *param_by_name(model, "fc.bias"));
  REQUIRE(scores.shape() == expected.shape());
  for (std::size_t i = 0; i < scores.numel(); ++i)
    REQUIRE(scores[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("inception block output channels are the branch sum") {
  SplitMix64 rng(77);
  const InceptionWidths widths{4, 2, 4, 2, 4, 4};  // outputs 4+4+4+4 = 16
  LayerPtr block = make_inception_block(8, widths, rng);
  const Tensor out = block->forward(random_input(7, {8, 16, 16}));
  CHECK(out.shape() == std::vector<std::size_t>({16, 16, 16}));
}

TEST_CASE("head swap changes neither parameters nor scores") {
  ModelSpec softmax_spec = tiny_spec(Architecture::tiny_resnet, 5);
  softmax_spec.input_height = 16;
  softmax_spec.input_width = 16;
  ModelSpec hinge_spec = softmax_spec;
  hinge_spec.head = Head::hinge_l2;

  Model a = build_model(softmax_spec);
  Model b = build_model(hinge_spec);
  auto pa = a.params();
  auto pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].name == pb[i].name);
    REQUIRE(*pa[i].value == *pb[i].value);
  }
  const Tensor input = random_input(8, {1, 16, 16});
  CHECK(a.forward(input) == b.forward(input));
  CHECK(a.spec().head == Head::softmax);
  CHECK(b.spec().head == Head::hinge_l2);
}

TEST_CASE("SVM architectures force a hinge head") {
  ModelSpec spec = tiny_spec(Architecture::mlp_svm, 4);
  spec.input_height = 8;
  spec.input_width = 8;
  spec.head = Head::softmax;
  const Model model = build_model(spec);
  CHECK(model.spec().head == Head::hinge_l2);

  spec.head = Head::hinge_l1;  // an explicit hinge variant is kept
  CHECK(build_model(spec).spec().head == Head::hinge_l1);
}

TEST_CASE("param_count is the exact sum of parameter extents") {
  SplitMix64 rng(111);
  // a 4 -> 3 -> 2 MLP: (4*3+3) + (3*2+2) = 23
  Sequential mlp;
  mlp.append("fc1", make_dense(4, 3, rng));
  mlp.append("fc2", make_dense(3, 2, rng));
  std::vector<ParamRef> params;
  mlp.collect_params("", params);
  std::size_t total = 0;
  for (const ParamRef& p : params) total += p.value->numel();
  CHECK(total == 23);

  ModelSpec spec = tiny_spec(Architecture::mlp_svm, 3);
  spec.input_height = 8;
  spec.input_width = 8;
  Model model = build_model(spec);
  std::size_t expected = 0;
  for (ParamRef& p : model.params()) expected += p.value->numel();
  CHECK(model.param_count() == expected);
}

TEST_CASE("construction is deterministic in the seed") {
  const ModelSpec spec = tiny_spec(Architecture::tiny_inception, 9);
  Model a = build_model(spec);
  Model b = build_model(spec);
  auto pa = a.params();
  auto pb = b.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(*pa[i].value == *pb[i].value);

  ModelSpec other = spec;
  other.seed = 43;
  Model c = build_model(other);
  bool all_equal = true;
  auto pc = c.params();
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!(*pa[i].value == *pc[i].value)) all_equal = false;
  CHECK_FALSE(all_equal);
}

TEST_CASE("gru_svm consumes rows as timesteps into the final hidden state") {
  ModelSpec spec = tiny_spec(Architecture::gru_svm, 4);
  spec.input_height = 6;
  spec.input_width = 5;
  spec.width_multiplier = 0.125;  // hidden 16
  Model model = build_model(spec);

  const Tensor input = random_input(9, {1, 6, 5});
  const Tensor scores = model.forward(input);

  nn::GruParams params = nn::GruParams::zeros(5, 16);
  const std::pair<const char*, Tensor*> names[] = {
      {"gru.wz", &params.wz}, {"gru.uz", &params.uz}, {"gru.bz", &params.bz},
      {"gru.wr", &params.wr}, {"gru.ur", &params.ur}, {"gru.br", &params.br},
      {"gru.wh", &params.wh}, {"gru.uh", &params.uh}, {"gru.bh", &params.bh}};
  for (const auto& [name, dst] : names) *dst = *param_by_name(model, name);

  Tensor h({16});
  for (std::size_t t = 0; t < 6; ++t) {
    Tensor x({5});
    for (std::size_t c = 0; c < 5; ++c) x[c] = input.at(0, t, c);
    h = nn::gru_step(x, h, params);
  }
  const Tensor expected =
      nn::dense_forward(h, *param_by_name(model, "fc.weight"), *param_by_name(model, "fc.bias"));
  REQUIRE(scores.shape() == expected.shape());
  for (std::size_t i = 0; i < scores.numel(); ++i)
    REQUIRE(scores[i] == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("auxiliary head exists only on tiny_inception and feeds gradients") {
  ModelSpec spec = tiny_spec(Architecture::tiny_inception, 4);
  spec.input_height = 16;
  spec.input_width = 16;
  spec.width_multiplier = 0.5;
  Model model = build_model(spec);
  REQUIRE(model.has_aux());

  const Tensor input = random_input(10, {2, 1, 16, 16});
  const Tensor scores = model.forward(input);
  REQUIRE(model.aux_scores().shape() == scores.shape());

  const std::vector<std::size_t> labels{0, 1};
  model.zero_grads();
  nn::LossResult main = nn::softmax_cross_entropy(scores, labels);
  nn::LossResult aux = nn::softmax_cross_entropy(model.aux_scores(), labels);
  for (std::size_t i = 0; i < aux.grad.numel(); ++i) aux.grad[i] *= 0.3;
  model.backward(main.grad, aux.grad);
  double aux_grad_mass = 0.0;
  for (ParamRef& p : model.params())
    if (p.name.rfind("aux.", 0) == 0)
      for (std::size_t i = 0; i < p.grad->numel(); ++i) aux_grad_mass += std::abs((*p.grad)[i]);
  CHECK(aux_grad_mass > 0.0);

  CHECK_FALSE(build_model(tiny_spec(Architecture::tiny_vgg)).has_aux());
}

TEST_CASE("snapshot save/load round-trips parameters and spec") {
  testsupport::TempDir tmp("snap");
  ModelSpec spec = tiny_spec(Architecture::cnn_svm, 5);
  spec.input_height = 12;
  spec.input_width = 12;
  spec.width_multiplier = 0.25;
  Model model = build_model(spec);
  // perturb so the file differs from a fresh build
  for (ParamRef& p : model.params())
    for (std::size_t i = 0; i < p.value->numel(); ++i) (*p.value)[i] += 0.125;

  const auto path = tmp.path() / "model.mvsnap";
  save_snapshot(model, path);
  Model loaded = load_snapshot(path);
  CHECK(loaded.spec() == model.spec());
  auto pa = model.params();
  auto pb = loaded.params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].name == pb[i].name);
    REQUIRE(*pa[i].value == *pb[i].value);
  }
  const Tensor input = random_input(11, {1, 12, 12});
  CHECK(model.forward(input) == loaded.forward(input));
}

TEST_CASE("snapshot loading rejects corrupt files") {
  testsupport::TempDir tmp("snapbad");
  ModelSpec spec = tiny_spec(Architecture::mlp_svm, 3);
  spec.input_height = 8;
  spec.input_width = 8;
  spec.width_multiplier = 0.125;
  Model model = build_model(spec);
  const auto path = tmp.path() / "model.mvsnap";
  save_snapshot(model, path);

  auto corrupt = [&](std::size_t cut) {
    std::ifstream in(path, std::ios::binary);
    std::string data(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
    std::ofstream out(tmp.path() / "cut.mvsnap", std::ios::binary);
    out.write(data.data(), static_cast<std::streamsize>(data.size() - cut));
  };
  corrupt(7);
  try {
    load_snapshot(tmp.path() / "cut.mvsnap");
    FAIL("expected MalformedSnapshot");
  } catch (const Error& e) {
    CHECK(e.code() == errc::malformed_snapshot);
  }
}

TEST_CASE("model spec round-trips through its config block") {
  ModelSpec spec = tiny_spec(Architecture::gru_svm, 11);
  spec.width_multiplier = 0.375;
  spec.head = Head::hinge_l1;
  spec.seed = 1234567;
  const ModelSpec parsed = spec_from_config(spec_to_config(spec));
  CHECK(parsed == spec);
}

TEST_CASE("end-to-end gradient check on tiny_vgg") {
  ModelSpec spec = tiny_spec(Architecture::tiny_vgg, 3);
  spec.input_height = 8;
  spec.input_width = 8;
  spec.width_multiplier = 0.25;
  Model model = build_model(spec);

  SplitMix64 nudge(mix_seed(42, 2));
  for (ParamRef& p : model.params())
    for (std::size_t i = 0; i < p.value->numel(); ++i)
      (*p.value)[i] += nudge.next_range(-0.05, 0.05);

  const Tensor input = random_input(12, {2, 1, 8, 8});
  const std::vector<std::size_t> labels{0, 1};
  model.zero_grads();
  const Tensor scores = model.forward(input);
  const nn::LossResult main = nn::softmax_cross_entropy(scores, labels);
  model.backward(main.grad);

  std::vector<nn::ParamGrad> pgs;
  for (ParamRef& p : model.params()) pgs.push_back({p.value, p.grad});
  const double err = nn::grad_check(
      [&] {
        return nn::softmax_cross_entropy(model.forward(input),
                                         std::span<const std::size_t>(labels))
            .loss;
      },
      pgs);
  CHECK(err < 1e-4);
}
