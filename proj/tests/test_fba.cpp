#include <doctest.h>

#include <cmath>
#include <cstring>

#include "amnet/fba.hpp"
#include "amnet/network.hpp"
#include "amnet/ops.hpp"
#include "amnet/trainer.hpp"
#include "support.hpp"

using namespace amnet;
using amnet::test::random32;
using amnet::test::random64;

TEST_CASE("segmentation head probabilities") {
  ParameterStore<double> store(1);
  SegmentationHead<double> head(store, "seg", 4);
  Rng rng(2);
  NoGradGuard g;
  SUBCASE("zero logits give one half") {
    for (auto& p : store.parameters())
      for (auto& v : p.tensor.data()) v = 0.0;
    const auto probs = head(random64({1, 4, 3, 5}, rng), 12, 20);
    for (double v : probs.data()) CHECK(v == 0.5);
  }
  SUBCASE("classes sum to one at image size") {
    const auto probs = head(random64({2, 4, 3, 5}, rng), 12, 20);
    CHECK(probs.shape() == Shape{2, 2, 12, 20});
    for (Index n = 0; n < 2; ++n)
      for (Index i = 0; i < 240; ++i)
        CHECK(std::abs(probs.data()[static_cast<std::size_t>(n * 480 + i)] + probs.data()[static_cast<std::size_t>(n * 480 + 240 + i)] - 1.0) < 1e-12);
  }
}

TEST_CASE("multitask loss") {
  const std::vector<std::uint8_t> fg{1, 0, 1, 0};
  const Tensor64 l_disp(Shape{}, {0.75});
  SUBCASE("lambda zero is the disparity loss") {
    const auto parts = multitask_loss(l_disp, Tensor64::full({1, 2, 2, 2}, 0.5), fg, 0.0);
    CHECK(parts.total.item() == 0.75);
  }
  SUBCASE("perfect one-hot prediction has zero cross-entropy") {
    std::vector<double> p(8);
    for (std::size_t i = 0; i < 4; ++i) {
      p[i] = fg[i] ? 0.0 : 1.0;
      p[4 + i] = fg[i] ? 1.0 : 0.0;
    }
    const auto parts = multitask_loss(l_disp, Tensor64(Shape{1, 2, 2, 2}, p), fg, 0.5);
    CHECK(parts.l_seg.item() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(parts.total.item() == doctest::Approx(0.75));
  }
  SUBCASE("uniform prediction costs ln 2 per pixel") {
    const auto parts = multitask_loss(l_disp, Tensor64::full({1, 2, 2, 2}, 0.5), fg, 0.5);
    CHECK(parts.l_seg.item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(parts.total.item() == doctest::Approx(0.75 + 0.5 * std::log(2.0)).epsilon(1e-12));
  }
  CHECK_THROWS(multitask_loss(l_disp, Tensor64::full({1, 2, 2, 2}, 0.5), fg, -0.1));
}

TEST_CASE("foreground IoU") {
  const std::vector<std::uint8_t> a{1, 1, 0, 0}, b{1, 0, 1, 0}, none{0, 0, 0, 0};
  CHECK(foreground_iou(a, a) == 1.0);
  CHECK(foreground_iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(foreground_iou(none, none) == 1.0);
  CHECK(foreground_iou(a, none) == 0.0);
}

TEST_CASE("hard mask picks the larger class") {
  const Tensor64 probs(Shape{1, 2, 1, 3}, {0.9, 0.4, 0.5, 0.1, 0.6, 0.5});
  CHECK(hard_mask(probs) == std::vector<std::uint8_t>{0, 1, 0});
}

TEST_CASE("S-channel store") {
  const auto dir = amnet::test::scratch_dir("s_store");
  SChannelStore store(dir);
  const auto empty = store.get("a", 2, 3);
  CHECK(empty == std::vector<float>(6, 0.0f));
  store.put("a", 2, 3, {0.1f, 0.2f, 0.3f, 0.4f, 0.5f, 1.0f / 3.0f});
  store.put("b", 1, 2, {1.0f, 0.0f});
  store.save();
  SChannelStore back(dir);
  back.load();
  CHECK(back.size() == 2);
  const auto a = back.get("a", 2, 3);
  CHECK(std::memcmp(a.data(), store.get("a", 2, 3).data(), 6 * sizeof(float)) == 0);
  CHECK_THROWS_AS(back.get("a", 3, 2), ShapeError);
}

TEST_CASE("multitask network wiring") {
  AmNet<double> net(NetworkConfig::from_preset("fba-micro"), 3);
  Rng rng(4);
  const auto left = random64({1, 3, 16, 32}, rng), right = random64({1, 3, 16, 32}, rng);
  SUBCASE("segmentation output has image size") {
    NoGradGuard g;
    const auto out = net.forward(left, right, nullptr, HeadMode::FinalOnly, false);
    REQUIRE(out.seg_probs.has_value());
    CHECK(out.seg_probs->shape() == Shape{1, 2, 16, 32});
  }
  SUBCASE("segmentation gradients reach the shared extractor") {
    net.store().zero_grad();
    const auto out = net.forward(left, right, nullptr, HeadMode::AllStages, true);
    const std::vector<std::uint8_t> fg(16 * 32, 1);
    cross_entropy<double>(*out.seg_probs, fg).backward();
    double norm = 0;
    for (const auto& p : net.store().parameters())
      if (p.name.starts_with("extractor.backbone"))
        for (double v : p.tensor.grad()) norm += v * v;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("first multitask epoch reads zero S maps and stores predictions") {
  SynthSceneSpec spec;
  spec.seed = 5;
  const auto train = generate_synthetic_set(spec, 2, "f");
  RunConfig cfg = RunConfig::defaults("fba-micro");
  cfg.crop_height = 32;
  cfg.crop_width = 64;
  cfg.batch = 2;
  AmNet<float> net(cfg.network, cfg.seed);
  SChannelStore store;
  Trainer<float> trainer(net, cfg, train, &store);
  CHECK(store.size() == 0);
  const auto e = trainer.run_epoch(1);
  CHECK(e.seg > 0.0);
  CHECK(store.size() == 2);
  bool any_nonzero = false;
  for (float v : store.get("f0000", 64, 128)) any_nonzero |= v != 0.0f;
  CHECK(any_nonzero);
}

TEST_CASE("lambda zero with frozen multitask layers reproduces the plain network") {
  SynthSceneSpec spec;
  spec.seed = 6;
  const auto train = generate_synthetic_set(spec, 4, "d");
  RunConfig cfg = RunConfig::defaults("micro");
  cfg.crop_height = 32;
  cfg.crop_width = 64;
  cfg.batch = 2;
  const auto res = degenerate_multitask_check(cfg, train, {train[0]}, 2);
  CHECK(res.bitwise_equal);
  CHECK(res.max_abs_diff == 0.0);
  for (std::size_t i = 0; i < res.plain_history.size(); ++i)
    CHECK(res.plain_history[i].total == res.multitask_history[i].total);
}
