#include <doctest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "amnet/checkpoint.hpp"
#include "amnet/image_io.hpp"
#include "amnet/random.hpp"
#include "support.hpp"

using namespace amnet;

TEST_CASE("PFM round trip is bitwise") {
  const auto dir = amnet::test::scratch_dir("pfm");
  Rng rng(1);
  for (Index channels : {1, 3}) {
    FloatImage img{7, 5, channels, {}};
    for (Index i = 0; i < 35 * channels; ++i) img.data.push_back(static_cast<float>(rng.uniform(-1e3, 1e3)));
    img.data[3] = std::numeric_limits<float>::infinity();
    img.data[4] = 1e-40f;
    write_pfm(dir / "a.pfm", img);
    const auto back = read_pfm(dir / "a.pfm");
    CHECK(back.width == 7);
    CHECK(back.height == 5);
    CHECK(back.channels == channels);
    REQUIRE(back.data.size() == img.data.size());
    CHECK(std::memcmp(back.data.data(), img.data.data(), img.data.size() * sizeof(float)) == 0);
  }
}

TEST_CASE("PFM reader rejects malformed files") {
  const auto dir = amnet::test::scratch_dir("pfm_bad");
  std::ofstream(dir / "bad.pfm") << "P7\n3 3\n-1\n";
  CHECK_THROWS_AS(read_pfm(dir / "bad.pfm"), IoError);
  std::ofstream(dir / "short.pfm", std::ios::binary) << "Pf\n4 4\n-1.0\n1234";
  CHECK_THROWS_AS(read_pfm(dir / "short.pfm"), IoError);
  CHECK_THROWS_AS(read_pfm(dir / "missing.pfm"), IoError);
}

TEST_CASE("KITTI disparity PNG") {
  const auto dir = amnet::test::scratch_dir("kitti");
  std::vector<float> disp{1.0f, 0.0f, 1.0f / 256.0f, 37.5f, 100.3f, 255.99f};
  const std::vector<std::uint8_t> valid{1, 1, 1, 1, 0, 1};
  write_kitti_png(dir / "d.png", 3, 2, disp, valid);

  const auto back = read_kitti_png(dir / "d.png");
  CHECK(back.valid == std::vector<std::uint8_t>{1, 0, 1, 1, 0, 1});  // exact zero encodes as invalid
  CHECK(back.disparity[0] == 1.0f);
  CHECK(back.disparity[2] == 1.0f / 256.0f);
  CHECK(back.disparity[3] == 37.5f);
  CHECK(std::abs(back.disparity[5] - 255.99f) <= 0.5f / 256.0f);

  Rng rng(2);
  std::vector<float> many(64);
  for (auto& v : many) v = static_cast<float>(rng.uniform(0.01, 200));
  write_kitti_png(dir / "m.png", 8, 8, many, std::vector<std::uint8_t>(64, 1));
  const auto m = read_kitti_png(dir / "m.png");
  for (std::size_t i = 0; i < 64; ++i) {
    CHECK(std::abs(m.disparity[i] - many[i]) <= 0.5f / 256.0f + 1e-6f);
    CHECK(m.disparity[i] * 256.0f == std::round(many[i] * 256.0f));
  }
  CHECK_THROWS(write_kitti_png(dir / "x.png", 1, 1, std::vector<float>{-1.0f}, std::vector<std::uint8_t>{1}));
  CHECK_THROWS(write_kitti_png(dir / "x.png", 1, 1, std::vector<float>{300.0f}, std::vector<std::uint8_t>{1}));
}

TEST_CASE("8-bit PNG round trip") {
  const auto dir = amnet::test::scratch_dir("png8");
  Image8 img{4, 3, 3, {}};
  for (int i = 0; i < 36; ++i) img.data.push_back(static_cast<std::uint8_t>(i * 7));
  write_png8(dir / "i.png", img);
  const auto back = read_png8(dir / "i.png", 3);
  CHECK(back.data == img.data);
  const auto c = colorize(std::vector<float>{0, 1, std::nanf("")}, 3, 1, 0, 1);
  CHECK(c.data[6] == 0);
  CHECK(c.data[7] == 0);
  CHECK(c.data[8] == 0);
}

TEST_CASE("checkpoint save and load reproduce inference bitwise") {
  const auto dir = amnet::test::scratch_dir("ckpt");
  AmNet<float> a(NetworkConfig::from_preset("micro"), 3);
  // perturb the running statistics so buffers are exercised too
  for (auto& b : a.store().buffers())
    for (auto& v : b.tensor.data()) v += 0.125f;
  save_checkpoint(dir / "m.ckpt", a, {{"epoch", 7}});
  AmNet<float> b(NetworkConfig::from_preset("micro"), 99);
  const auto meta = load_checkpoint(dir / "m.ckpt", b);
  CHECK(meta["epoch"] == 7);
  CHECK(read_checkpoint_header(dir / "m.ckpt")["preset"] == "micro");

  Rng rng(4);
  const auto left = amnet::test::random32({1, 3, 32, 64}, rng), right = amnet::test::random32({1, 3, 32, 64}, rng);
  const auto da = a.infer(left, right), db = b.infer(left, right);
  CHECK(std::memcmp(da.data().data(), db.data().data(), da.data().size() * sizeof(float)) == 0);

  SUBCASE("mismatched network is rejected") {
    AmNet<float> other(NetworkConfig::from_preset("fba-micro"), 3);
    CHECK_THROWS_AS(load_checkpoint(dir / "m.ckpt", other), CheckpointError);
  }
  SUBCASE("truncated file is rejected") {
    const auto size = std::filesystem::file_size(dir / "m.ckpt");
    std::filesystem::copy_file(dir / "m.ckpt", dir / "t.ckpt");
    std::filesystem::resize_file(dir / "t.ckpt", size - 10);
    CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt", b), CheckpointError);
  }
  SUBCASE("foreign file is rejected") {
    std::ofstream(dir / "f.ckpt") << "not a checkpoint";
    CHECK_THROWS_AS(load_checkpoint(dir / "f.ckpt", b), CheckpointError);
  }
}
