#include <doctest.h>

#include <cmath>

#include "amnet/nn.hpp"
#include "amnet/ops.hpp"
#include "amnet/optim.hpp"
#include "support.hpp"

using namespace amnet;
using amnet::test::contract;
using amnet::test::jacobian_error;
using amnet::test::random64;

TEST_CASE("tensor construction checks shape against data") {
  CHECK_THROWS_AS(Tensor(Shape{2, 3}, std::vector<float>(5)), ShapeError);
  Tensor t(Shape{2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 5.0f);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("handles are shallow and detach copies") {
  Tensor a(Shape{2}, {1, 2});
  Tensor b = a;
  b.data()[0] = 7;
  CHECK(a.data()[0] == 7.0f);
  Tensor c = a.detach();
  c.data()[1] = 9;
  CHECK(a.data()[1] == 2.0f);
}

TEST_CASE("softmax and relu examples") {
  const auto s = softmax(Tensor(Shape{4}, {0, 0, 0, 0}), 0);
  for (float v : s.data()) CHECK(v == doctest::Approx(0.25f));
  const auto r = relu(Tensor(Shape{2}, {-3, 3}));
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 3.0f);
}

TEST_CASE("softmax slices sum to one and stay in [0, 1]") {
  Rng rng(3);
  const auto x = random64({3, 5, 4}, rng, -30, 30);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    const auto p = softmax(x, axis);
    for (double v : p.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  const auto p = softmax(x, 1);
  for (Index a = 0; a < 3; ++a)
    for (Index c = 0; c < 4; ++c) {
      double total = 0;
      for (Index k = 0; k < 5; ++k) total += p.at({a, k, c});
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
}

TEST_CASE("interpolation preserves constants") {
  const auto vol = Tensor64::full({1, 2, 3, 4, 5}, 2.5);
  const auto up = upsample_trilinear(vol, 7, 10, 13);
  CHECK(up.shape() == Shape{1, 2, 7, 10, 13});
  for (double v : up.data()) CHECK(v == doctest::Approx(2.5).epsilon(1e-12));
  const auto img = Tensor64::full({1, 1, 3, 3}, -1.0);
  const auto up2 = upsample_bilinear(img, 9, 11);
  for (double v : up2.data()) CHECK(v == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("corner-aligned linear upsampling hits the end points") {
  const Tensor64 x(Shape{3}, {0, 10, 20});
  const auto y = upsample_linear(x, 0, 5);
  const std::vector<double> want{0, 5, 10, 15, 20};
  for (std::size_t i = 0; i < want.size(); ++i) CHECK(y.data()[i] == doctest::Approx(want[i]));
}

TEST_CASE("linear loss gradient equals the input") {
  Rng rng(5);
  auto w = random64({2, 3}, rng, -1, 1, true);
  const auto x = random64({2, 3}, rng);
  sum(mul(w, x)).backward();
  for (std::size_t i = 0; i < 6; ++i) CHECK(w.grad()[i] == x.data()[i]);
}

TEST_CASE("relu gradient at -1 and +1") {
  Tensor64 w(Shape{2}, {-1, 1}, true);
  sum(relu(w)).backward();
  CHECK(w.grad()[0] == 0.0);
  CHECK(w.grad()[1] == 1.0);
}

TEST_CASE("leaf gradients accumulate and zero_grad clears them") {
  Tensor64 w(Shape{1}, {2}, true);
  sum(scale(w, 3.0)).backward();
  sum(scale(w, 3.0)).backward();
  CHECK(w.grad()[0] == 6.0);
  w.zero_grad();
  CHECK(w.grad()[0] == 0.0);
}

TEST_CASE("no-grad mode records nothing") {
  Tensor64 w(Shape{1}, {2}, true);
  Tensor64 y;
  {
    NoGradGuard g;
    y = scale(w, 3.0);
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(grad_enabled());
}

TEST_CASE("elementwise and reduction ops match central differences") {
  Rng rng(11);
  auto a = random64({2, 3, 4}, rng, -1, 1, true);
  auto b = random64({2, 3, 4}, rng, 0.5, 1.5, true);
  CHECK(jacobian_error([&] { return contract(add(a, b)); }, {a, b}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(sub(a, b)); }, {a, b}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(mul(a, b)); }, {a, b}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(neg(a)); }, {a}) < 1e-4);
  CHECK(jacobian_error([&] { return mean(mul(a, a)); }, {a}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(relu(a)); }, {a}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(clamp(a, -0.5, 0.5)); }, {a}) < 1e-4);
}

TEST_CASE("shape ops match central differences") {
  Rng rng(12);
  auto a = random64({2, 3, 4}, rng, -1, 1, true);
  auto b = random64({2, 2, 4}, rng, -1, 1, true);
  auto bias = random64({3}, rng, -1, 1, true);
  CHECK(jacobian_error([&] { return contract(reshape(a, {6, 4})); }, {a}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(concat<double>({a, b}, 1)); }, {a, b}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(slice(a, 2, 1, 2)); }, {a}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(add_channel_bias(a, bias)); }, {a, bias}) < 1e-4);
}

TEST_CASE("softmax, expectation and interpolation match central differences") {
  Rng rng(13);
  auto a = random64({2, 5, 3}, rng, -2, 2, true);
  CHECK(jacobian_error([&] { return contract(softmax(a, 1)); }, {a}) < 1e-4);
  CHECK(jacobian_error([&] { return contract(expectation(softmax(a, 1), 1)); }, {a}) < 1e-4);
  auto v = random64({1, 2, 3, 3, 4}, rng, -1, 1, true);
  CHECK(jacobian_error([&] { return contract(upsample_trilinear(v, 5, 6, 7)); }, {v}) < 1e-4);
  auto img = random64({1, 2, 3, 4}, rng, -1, 1, true);
  CHECK(jacobian_error([&] { return contract(upsample_bilinear(img, 7, 9)); }, {img}) < 1e-4);
}

TEST_CASE("losses match central differences") {
  Rng rng(14);
  auto pred = random64({2, 3, 4}, rng, -3, 3, true);
  std::vector<double> target(24);
  std::vector<std::uint8_t> mask(24);
  for (std::size_t i = 0; i < 24; ++i) {
    target[i] = rng.uniform(-3, 3);
    mask[i] = i % 5 != 0;
  }
  CHECK(jacobian_error([&] { return smooth_l1_loss<double>(pred, target, mask); }, {pred}) < 1e-4);
  auto logits = random64({2, 2, 3, 3}, rng, -2, 2, true);
  std::vector<std::uint8_t> labels(18);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = i % 3 == 0;
  CHECK(jacobian_error([&] { return cross_entropy(softmax(logits, 1), labels); }, {logits}) < 1e-4);
}

TEST_CASE("backward leaves finite gradients") {
  Rng rng(15);
  auto a = random64({4, 6}, rng, -50, 50, true);
  sum(expectation(softmax(scale(a, 10.0), 1), 1)).backward();
  for (double g : a.grad()) CHECK(std::isfinite(g));
}

TEST_CASE("batch norm examples") {
  ParameterStore<double> store(1);
  BatchNormLayer<double> bn(store, "bn", 2);

  SUBCASE("constant channel gives the shift") {
    const auto y = bn(Tensor64::full({2, 2, 3, 3}, 4.0), true);
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("two-element batch normalizes to +-1/sqrt(1+eps)") {
    const Tensor64 x(Shape{2, 2, 1, 1}, {-1, 5, 1, 7});
    const auto y = bn(x, true);
    const double e = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.at({0, 0, 0, 0}) == doctest::Approx(-e).epsilon(1e-12));
    CHECK(y.at({1, 0, 0, 0}) == doctest::Approx(e).epsilon(1e-12));
    CHECK(y.at({0, 1, 0, 0}) == doctest::Approx(-e).epsilon(1e-12));
    CHECK(y.at({1, 1, 0, 0}) == doctest::Approx(e).epsilon(1e-12));
  }
  SUBCASE("standardized input is nearly unchanged") {
    const Tensor64 x(Shape{4, 1, 1, 1}, {-1, 1, -1, 1});
    ParameterStore<double> s2(1);
    BatchNormLayer<double> bn1(s2, "bn", 1);
    const auto y = bn1(x, true);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y.data()[i] - x.data()[i]) < 1e-5);
  }
  SUBCASE("running statistics move with momentum 0.1") {
    const Tensor64 x(Shape{2, 2, 1, 1}, {0, 0, 2, 4});
    bn(x, true);
    const auto* mean = &store.buffers()[0].tensor;
    CHECK(mean->data()[0] == doctest::Approx(0.1));
    CHECK(mean->data()[1] == doctest::Approx(0.2));
  }
}

TEST_CASE("batch norm matches central differences in train mode") {
  Rng rng(16);
  ParameterStore<double> store(2);
  BatchNormLayer<double> bn(store, "bn", 3);
  auto x = random64({2, 3, 2, 2}, rng, -1, 1, true);
  for (auto& p : store.parameters())
    for (auto& v : p.tensor.data()) v = rng.uniform(0.5, 1.5);
  std::vector<Tensor64> inputs{x};
  for (auto& p : store.parameters()) inputs.push_back(p.tensor);
  CHECK(jacobian_error([&] { return contract(bn(x, true)); }, inputs) < 1e-4);
}

TEST_CASE("parameter names are unique and init depends only on seed and name") {
  ParameterStore<float> a(42), b(42);
  const auto w1 = a.create("x.weight", {4, 3}, ParamKind::Conv, Init::FanInUniform);
  b.create("other", {7}, ParamKind::Conv, Init::FanInUniform);
  const auto w2 = b.create("x.weight", {4, 3}, ParamKind::Conv, Init::FanInUniform);
  CHECK(std::equal(w1.data().begin(), w1.data().end(), w2.data().begin()));
  CHECK_THROWS(a.create("x.weight", {1}, ParamKind::Conv, Init::Zeros));
  CHECK(a.count() == 12);
}

TEST_CASE("adam examples") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParameterStore<double> store(1);
    auto w = store.create("w", {3}, ParamKind::Conv, Init::FanInUniform);
    const std::vector<double> before(w.data().begin(), w.data().end());
    Adam<double> opt(store, {});
    w.mutable_grad();
    opt.step();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.data()[i] == before[i]);
  }
  SUBCASE("first step moves by lr * g / (|g| + eps)") {
    ParameterStore<double> store(1);
    auto w = store.create("w", {1}, ParamKind::Conv, Init::Zeros);
    Adam<double> opt(store, {});
    w.mutable_grad()[0] = 1.0;
    opt.step();
    CHECK(w.data()[0] == doctest::Approx(-1e-3 / (1.0 + 1e-8)).epsilon(1e-12));
  }
  SUBCASE("constant gradient keeps the step at lr") {
    ParameterStore<double> store(1);
    auto w = store.create("w", {1}, ParamKind::Conv, Init::Zeros);
    Adam<double> opt(store, {});
    double prev = 0;
    for (int i = 0; i < 200; ++i) {
      store.zero_grad();
      w.mutable_grad()[0] = 0.3;
      opt.step();
      if (i == 199) CHECK(prev - w.data()[0] == doctest::Approx(1e-3).epsilon(1e-6));
      prev = w.data()[0];
    }
  }
  SUBCASE("frozen parameters are skipped") {
    ParameterStore<double> store(1);
    auto w = store.create("seg.w", {1}, ParamKind::Head, Init::Zeros);
    store.set_trainable("seg", false);
    Adam<double> opt(store, {});
    w.mutable_grad()[0] = 1.0;
    opt.step();
    CHECK(w.data()[0] == 0.0);
  }
}
