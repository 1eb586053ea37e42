#include <doctest.h>

#include <cmath>

#include "amnet/disparity_head.hpp"
#include "amnet/ops.hpp"
#include "support.hpp"

using namespace amnet;
using amnet::test::jacobian_error;
using amnet::test::random64;

namespace {

Tensor64 one_pixel_volume(const std::vector<double>& costs) {
  return Tensor64(Shape{1, 1, static_cast<Index>(costs.size()), 1, 1}, costs);
}

}  // namespace

TEST_CASE("soft argmin examples") {
  SUBCASE("one-hot probability at level 5") {
    std::vector<double> p(8, 0.0);
    p[5] = 1.0;
    const auto d = disparity_expectation(Tensor64(Shape{1, 8, 1, 1}, p));
    CHECK(d.item() == 5.0);
  }
  SUBCASE("uniform over four levels") {
    const auto d = disparity_expectation(Tensor64::full({1, 4, 1, 1}, 0.25));
    CHECK(d.item() == 1.5);
  }
  SUBCASE("random scores against a hand-computed softmax expectation") {
    Rng rng(1);
    std::vector<double> c(8);
    for (auto& v : c) v = rng.uniform(-3, 3);
    double z = 0, e = 0;
    for (std::size_t j = 0; j < 8; ++j) {
      z += std::exp(-c[j]);
      e += static_cast<double>(j) * std::exp(-c[j]);
    }
    const auto d = regress_disparity(one_pixel_volume(c), 7, 1, 1);
    CHECK(std::abs(d.item() - e / z) < 1e-6);
  }
}

TEST_CASE("soft argmin stays in range for arbitrary volumes") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto vol = random64({1, 1, 5, 3, 4}, rng, -200, 200);
    const auto d = regress_disparity(vol, 16, 6, 8);
    for (double v : d.data()) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
      CHECK(v <= 16.0);
    }
  }
}

TEST_CASE("constant score shift leaves the disparity unchanged") {
  Rng rng(3);
  const auto vol = random64({1, 1, 5, 3, 4}, rng, -5, 5);
  std::vector<double> shifted(vol.data().begin(), vol.data().end());
  for (auto& v : shifted) v += 17.25;
  const auto a = regress_disparity(vol, 16, 6, 8), b = regress_disparity(Tensor64(vol.shape(), shifted), 16, 6, 8);
  for (std::size_t i = 0; i < a.data().size(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) < 1e-6);
}

TEST_CASE("regression matches central differences") {
  Rng rng(4);
  auto vol = random64({1, 1, 3, 2, 3}, rng, -1, 1, true);
  CHECK(jacobian_error([&] { return amnet::test::contract(regress_disparity(vol, 8, 4, 6)); }, {vol}) < 1e-4);
}

TEST_CASE("smooth L1 examples") {
  const std::vector<std::uint8_t> one{1};
  CHECK(smooth_l1_loss<double>(Tensor64(Shape{1}, {2.0}), std::vector<double>{2.0}, one).item() == 0.0);
  CHECK(smooth_l1_loss<double>(Tensor64(Shape{1}, {2.5}), std::vector<double>{2.0}, one).item() == 0.125);
  CHECK(smooth_l1_loss<double>(Tensor64(Shape{1}, {0.0}), std::vector<double>{2.0}, one).item() == 1.5);
  CHECK_THROWS(smooth_l1_loss<double>(Tensor64(Shape{1}, {0.0}), std::vector<double>{2.0}, std::vector<std::uint8_t>{0}));
}

TEST_CASE("masked pixels contribute exactly zero gradient") {
  Tensor64 pred(Shape{4}, {1, 5, -2, 9}, true);
  const std::vector<double> gt{0, 0, 0, 0};
  const std::vector<std::uint8_t> mask{1, 0, 1, 0};
  smooth_l1_loss<double>(pred, gt, mask).backward();
  CHECK(pred.grad()[1] == 0.0);
  CHECK(pred.grad()[3] == 0.0);
  CHECK(pred.grad()[0] != 0.0);
}

TEST_CASE("total loss is the unweighted stage sum") {
  const std::vector<std::uint8_t> mask{1};
  const std::vector<double> gt{0.0};
  // smooth L1 of errors sqrt(0.2), sqrt(0.4), sqrt(0.6) is 0.1, 0.2, 0.3
  const auto loss = total_disparity_loss<double>(
      {Tensor64(Shape{1}, {std::sqrt(0.2)}), Tensor64(Shape{1}, {std::sqrt(0.4)}), Tensor64(Shape{1}, {std::sqrt(0.6)})}, gt, mask);
  CHECK(loss.total.item() == doctest::Approx(0.6).epsilon(1e-12));
  const auto zero = total_disparity_loss<double>({Tensor64(Shape{1}, {0.0}), Tensor64(Shape{1}, {0.0}), Tensor64(Shape{1}, {0.0})}, gt, mask);
  CHECK(zero.total.item() == 0.0);
  CHECK_THROWS(total_disparity_loss<double>({Tensor64(Shape{1}, {0.0})}, gt, mask));
}

TEST_CASE("SAM head") {
  ParameterStore<double> store(5);
  const Index C = 2, depth = 4 * C;
  DisparityHead<double> head(store, "head", depth, SAMSpec::make(4, 3));
  Rng rng(6);
  const CostVolume<double> ecv{random64({2, depth, 5, 3, 4}, rng), VolumeKind::Ecv, 4};

  SUBCASE("three volumes in training, one at inference, each [N,1,L,h,w]") {
    NoGradGuard g;
    const auto train = head.run_sam(ecv, HeadMode::AllStages, true);
    REQUIRE(train.size() == 3);
    for (const auto& v : train) CHECK(v.shape() == Shape{2, 1, 5, 3, 4});
    CHECK(head.run_sam(ecv, HeadMode::FinalOnly, false).size() == 1);
  }
  SUBCASE("final-only output equals the third stage bitwise") {
    NoGradGuard g;
    const auto all = head.run_sam(ecv, HeadMode::AllStages, false);
    const auto last = head.run_sam(ecv, HeadMode::FinalOnly, false);
    CHECK(std::equal(all[2].data().begin(), all[2].data().end(), last[0].data().begin()));
  }
  SUBCASE("zeroed stage weights pass the shortcut through") {
    for (auto& p : store.parameters())
      if (p.name.rfind("head.stage1.", 0) == 0 && p.name.find(".weight") != std::string::npos)
        for (auto& v : p.tensor.data()) v = 0.0;
    NoGradGuard g;
    const auto feats = head.stage_features(ecv, true);
    CHECK(std::equal(feats[0].data().begin(), feats[0].data().end(), feats[1].data().begin()));
  }
  SUBCASE("intermediate supervision reaches the first stage") {
    const auto vols = head.run_sam(ecv, HeadMode::AllStages, true);
    std::vector<Tensor64> preds;
    for (const auto& v : vols) preds.push_back(regress_disparity(v, 8, 6, 8));
    const std::vector<double> gt(preds[2].data().begin(), preds[2].data().end());
    const std::vector<std::uint8_t> mask(gt.size(), 1);
    store.zero_grad();
    auto loss = total_disparity_loss<double>(preds, gt, mask);
    CHECK(loss.stages[2].item() == 0.0);
    loss.total.backward();
    double norm = 0;
    for (const auto& p : store.parameters())
      if (p.name.rfind("head.stage0.", 0) == 0)
        for (double v : p.tensor.grad()) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("SAM spec validation") {
  auto spec = SAMSpec::make(4, 8);
  spec.stages.pop_back();
  CHECK_THROWS(spec.validate());
}
