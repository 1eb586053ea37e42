#include "amnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "amnet/image_io.hpp"
#include "amnet/random.hpp"

namespace amnet {

void SynthSceneSpec::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("synthetic scene: " + msg); };
  if (width <= 0 || height <= 0) fail("image dims must be positive");
  if (bg_disp_min < 0 || bg_disp_min > bg_disp_max) fail("bad background disparity range");
  if (rect_count_min < 0 || rect_count_min > rect_count_max) fail("bad rectangle count range");
  if (rect_w_min <= 0 || rect_w_min > rect_w_max || rect_w_max > width) fail("bad rectangle width range");
  if (rect_h_min <= 0 || rect_h_min > rect_h_max || rect_h_max > height) fail("bad rectangle height range");
  if (rect_disp_min > rect_disp_max) fail("bad rectangle disparity range");
  if (rect_count_max > 0 && rect_disp_max <= bg_disp_min) fail("rectangle disparities must exceed the background");
  if (bg_disp_max >= d_max) fail("background disparity must be below d_max");
  if (rect_count_max > 0 && rect_disp_max >= d_max) {
    fail("rectangle disparity " + std::to_string(rect_disp_max) + " must be below d_max " + std::to_string(d_max));
  }
  if (noise < 0) fail("noise amplitude must be non-negative");
}

namespace {

struct Layer {
  Index x0 = 0, y0 = 0, w = 0, h = 0;  // left-view footprint; w == 0 marks the full-frame background
  int disparity = 0;
  float base[3] = {0, 0, 0};
  std::uint64_t seed = 0;

  bool covers(Index x, Index y) const { return w == 0 || (x >= x0 && x < x0 + w && y >= y0 && y < y0 + h); }
};

Index floor_div(Index a, Index b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

double lattice(std::uint64_t seed, Index u, Index y) {
  return static_cast<double>(hash_coords(seed, u, y, 0) >> 11) * 0x1.0p-53 - 0.5;
}

// Value noise on a 4-pixel lattice plus per-pixel grain, defined for any u
// so layers can be sampled beyond the image border.
double texture_noise(std::uint64_t seed, Index u, Index y) {
  constexpr Index cell = 4;
  const Index cu = floor_div(u, cell), cy = floor_div(y, cell);
  const double fu = static_cast<double>(u - cu * cell) / cell, fy = static_cast<double>(y - cy * cell) / cell;
  const double a = lattice(seed, cu, cy), b = lattice(seed, cu + 1, cy);
  const double c = lattice(seed, cu, cy + 1), d = lattice(seed, cu + 1, cy + 1);
  const double smooth = (a * (1 - fu) + b * fu) * (1 - fy) + (c * (1 - fu) + d * fu) * fy;
  const double grain = lattice(seed ^ 0x5bd1e995ull, u, y);
  return 0.7 * smooth * 2.0 + 0.3 * grain * 2.0;
}

float quantize(double v) {
  const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<float>(q) / 255.0f;
}

float sample_layer(const Layer& l, Index u, Index y, int c, double noise) {
  return quantize(l.base[c] + noise * texture_noise(l.seed, u, y));
}

}  // namespace

StereoSample generate_synthetic(const SynthSceneSpec& spec, const std::string& id) {
  spec.validate();
  Rng rng(spec.seed);
  const Index W = spec.width, H = spec.height;

  std::vector<Layer> layers(1);
  Layer& bg = layers[0];
  bg.disparity = static_cast<int>(rng.uniform_int(spec.bg_disp_min, spec.bg_disp_max));
  const double grey = rng.uniform(0.35, 0.6);
  for (float& v : bg.base) v = static_cast<float>(grey + rng.uniform(-0.05, 0.05));
  bg.seed = rng.next();

  const auto count = rng.uniform_int(spec.rect_count_min, spec.rect_count_max);
  const int lo = std::max(spec.rect_disp_min, bg.disparity + 1);
  if (count > 0 && lo > spec.rect_disp_max) {
    throw std::invalid_argument("synthetic scene: no rectangle disparity above background " +
                                std::to_string(bg.disparity));
  }
  for (std::int64_t i = 0; i < count; ++i) {
    Layer r;
    r.w = rng.uniform_int(spec.rect_w_min, spec.rect_w_max);
    r.h = rng.uniform_int(spec.rect_h_min, spec.rect_h_max);
    r.x0 = rng.uniform_int(0, W - r.w);
    r.y0 = rng.uniform_int(0, H - r.h);
    r.disparity = static_cast<int>(rng.uniform_int(lo, spec.rect_disp_max));
    // Saturated colours set the foreground apart from the grey background.
    const int dominant = static_cast<int>(rng.uniform_int(0, 2));
    for (int c = 0; c < 3; ++c) r.base[c] = static_cast<float>(c == dominant ? rng.uniform(0.7, 0.85) : rng.uniform(0.1, 0.3));
    r.seed = rng.next();
    layers.push_back(r);
  }
  // Closer layers are drawn on top in both views.
  std::stable_sort(layers.begin() + 1, layers.end(), [](const Layer& a, const Layer& b) { return a.disparity < b.disparity; });

  auto top_left = [&](Index x, Index y) {
    std::size_t top = 0;
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i].covers(x, y)) top = i;
    return top;
  };
  auto top_right = [&](Index u, Index y) {
    std::size_t top = 0;
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i].covers(u + layers[i].disparity, y)) top = i;
    return top;
  };

  StereoSample s;
  s.id = id;
  s.width = W;
  s.height = H;
  const auto plane = static_cast<std::size_t>(W * H);
  s.left.resize(3 * plane);
  s.right.resize(3 * plane);
  s.gt.resize(plane);
  s.valid.assign(plane, 1);
  s.fg.resize(plane);
  s.noc.resize(plane);
  for (Index y = 0; y < H; ++y) {
    for (Index x = 0; x < W; ++x) {
      const auto i = static_cast<std::size_t>(y * W + x);
      const std::size_t lt = top_left(x, y);
      const Layer& l = layers[lt];
      s.gt[i] = static_cast<float>(l.disparity);
      s.fg[i] = lt > 0;
      const Index u = x - l.disparity;
      s.noc[i] = u >= 0 && top_right(u, y) == lt;
      const std::size_t rt = top_right(x, y);
      for (int c = 0; c < 3; ++c) {
        s.left[c * plane + i] = sample_layer(l, u, y, c, spec.noise);
        s.right[c * plane + i] = sample_layer(layers[rt], x, y, c, spec.noise);
      }
    }
  }
  return s;
}

std::vector<StereoSample> generate_synthetic_set(const SynthSceneSpec& spec, int count, const std::string& prefix) {
  std::vector<StereoSample> out;
  for (int i = 0; i < count; ++i) {
    SynthSceneSpec s = spec;
    s.seed = hash_coords(spec.seed, i, 0x5354, 0);
    char id[32];
    std::snprintf(id, sizeof id, "%04d", i);
    out.push_back(generate_synthetic(s, prefix + id));
  }
  return out;
}

namespace {

Image8 planar_to_png(const std::vector<float>& planar, Index W, Index H) {
  Image8 img{W, H, 3, std::vector<std::uint8_t>(static_cast<std::size_t>(W * H * 3))};
  const auto plane = static_cast<std::size_t>(W * H);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c)
      img.data[3 * i + c] = static_cast<std::uint8_t>(std::lround(std::clamp(planar[c * plane + i], 0.0f, 1.0f) * 255.0f));
  return img;
}

std::vector<float> png_to_planar(const Image8& img) {
  const auto plane = static_cast<std::size_t>(img.width * img.height);
  std::vector<float> out(3 * plane);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = static_cast<float>(img.data[3 * i + c]) / 255.0f;
  return out;
}

Image8 mask_to_png(const std::vector<std::uint8_t>& m, Index W, Index H) {
  Image8 img{W, H, 1, std::vector<std::uint8_t>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) img.data[i] = m[i] ? 255 : 0;
  return img;
}

std::vector<std::uint8_t> png_to_mask(const Image8& img) {
  std::vector<std::uint8_t> m(img.data.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = img.data[i] >= 128;
  return m;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, const std::vector<StereoSample>& samples) {
  namespace fs = std::filesystem;
  std::error_code ec;
  for (const char* sub : {"left", "right", "disp", "fg", "noc"}) {
    fs::create_directories(dir / sub, ec);
    if (ec) throw IoError("cannot create " + (dir / sub).string() + ": " + ec.message());
  }
  std::ofstream manifest(dir / "manifest.txt");
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  for (const auto& s : samples) {
    write_png8(dir / "left" / (s.id + ".png"), planar_to_png(s.left, s.width, s.height));
    write_png8(dir / "right" / (s.id + ".png"), planar_to_png(s.right, s.width, s.height));
    if (s.has_gt()) {
      FloatImage d{s.width, s.height, 1, s.gt};
      for (std::size_t i = 0; i < d.data.size(); ++i)
        if (!s.valid.empty() && !s.valid[i]) d.data[i] = std::numeric_limits<float>::infinity();
      write_pfm(dir / "disp" / (s.id + ".pfm"), d);
    }
    if (s.has_fg()) write_png8(dir / "fg" / (s.id + ".png"), mask_to_png(s.fg, s.width, s.height));
    if (!s.noc.empty()) write_png8(dir / "noc" / (s.id + ".png"), mask_to_png(s.noc, s.width, s.height));
    manifest << s.id << '\n';
  }
  if (!manifest) throw IoError("failed writing manifest");
}

std::vector<std::string> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.txt");
  if (!in) throw IoError("missing manifest: " + (dir / "manifest.txt").string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    if (!line.empty() && line[0] != '#') ids.push_back(line);
  }
  return ids;
}

StereoSample read_sample(const std::filesystem::path& dir, const std::string& id) {
  namespace fs = std::filesystem;
  StereoSample s;
  s.id = id;
  const auto left = read_png8(dir / "left" / (id + ".png"), 3);
  const auto right = read_png8(dir / "right" / (id + ".png"), 3);
  if (left.width != right.width || left.height != right.height) throw IoError("left/right size mismatch for " + id);
  s.width = left.width;
  s.height = left.height;
  s.left = png_to_planar(left);
  s.right = png_to_planar(right);
  const auto plane = static_cast<std::size_t>(s.width * s.height);
  auto check = [&](Index w, Index h, const fs::path& p) {
    if (w != s.width || h != s.height) throw IoError("size mismatch: " + p.string());
  };
  if (const auto pfm = dir / "disp" / (id + ".pfm"); fs::exists(pfm)) {
    auto d = read_pfm(pfm);
    check(d.width, d.height, pfm);
    if (d.channels != 1) throw IoError("disparity must be single channel: " + pfm.string());
    s.gt = std::move(d.data);
    s.valid.resize(plane);
    for (std::size_t i = 0; i < plane; ++i) s.valid[i] = std::isfinite(s.gt[i]) && s.gt[i] >= 0;
    for (std::size_t i = 0; i < plane; ++i)
      if (!s.valid[i]) s.gt[i] = 0;
  } else if (const auto png = dir / "disp" / (id + ".png"); fs::exists(png)) {
    auto d = read_kitti_png(png);
    check(d.width, d.height, png);
    s.gt = std::move(d.disparity);
    s.valid = std::move(d.valid);
  }
  if (const auto p = dir / "fg" / (id + ".png"); fs::exists(p)) {
    const auto m = read_png8(p, 1);
    check(m.width, m.height, p);
    s.fg = png_to_mask(m);
  }
  if (const auto p = dir / "noc" / (id + ".png"); fs::exists(p)) {
    const auto m = read_png8(p, 1);
    check(m.width, m.height, p);
    s.noc = png_to_mask(m);
  }
  return s;
}

std::vector<StereoSample> read_dataset(const std::filesystem::path& dir) {
  std::vector<StereoSample> out;
  for (const auto& id : read_manifest(dir)) out.push_back(read_sample(dir, id));
  return out;
}

std::vector<std::uint8_t> training_mask(const StereoSample& s, double d_max) {
  std::vector<std::uint8_t> m(s.gt.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = (s.valid.empty() || s.valid[i]) && s.gt[i] <= d_max;
  return m;
}

namespace {

template <typename V>
V crop_plane(const V& src, Index W, Index planes, Index H, Index y0, Index x0, Index h, Index w) {
  if (src.empty()) return {};
  V out(static_cast<std::size_t>(planes * h * w));
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x)
        out[static_cast<std::size_t>((p * h + y) * w + x)] = src[static_cast<std::size_t>((p * H + y0 + y) * W + x0 + x)];
  return out;
}

}  // namespace

StereoSample crop(const StereoSample& s, Index y0, Index x0, Index h, Index w) {
  if (y0 < 0 || x0 < 0 || h <= 0 || w <= 0 || y0 + h > s.height || x0 + w > s.width) {
    throw std::invalid_argument("crop window outside the image");
  }
  StereoSample o;
  o.id = s.id;
  o.width = w;
  o.height = h;
  o.left = crop_plane(s.left, s.width, 3, s.height, y0, x0, h, w);
  o.right = crop_plane(s.right, s.width, 3, s.height, y0, x0, h, w);
  o.gt = crop_plane(s.gt, s.width, 1, s.height, y0, x0, h, w);
  o.valid = crop_plane(s.valid, s.width, 1, s.height, y0, x0, h, w);
  o.fg = crop_plane(s.fg, s.width, 1, s.height, y0, x0, h, w);
  o.noc = crop_plane(s.noc, s.width, 1, s.height, y0, x0, h, w);
  return o;
}

StereoSample pad_to_multiple(const StereoSample& s, Index m) {
  const Index H = (s.height + m - 1) / m * m, W = (s.width + m - 1) / m * m;
  if (H == s.height && W == s.width) return s;
  StereoSample o;
  o.id = s.id;
  o.width = W;
  o.height = H;
  auto pad_img = [&](const std::vector<float>& src) {
    std::vector<float> out(static_cast<std::size_t>(3 * H * W));
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < H; ++y)
        for (Index x = 0; x < W; ++x)
          out[static_cast<std::size_t>((c * H + y) * W + x)] = src[static_cast<std::size_t>(
              (c * s.height + std::min(y, s.height - 1)) * s.width + std::min(x, s.width - 1))];
    return out;
  };
  auto pad_map = [&](const auto& src) {
    std::remove_cvref_t<decltype(src)> out;
    if (src.empty()) return out;
    out.assign(static_cast<std::size_t>(H * W), 0);
    for (Index y = 0; y < s.height; ++y)
      for (Index x = 0; x < s.width; ++x)
        out[static_cast<std::size_t>(y * W + x)] = src[static_cast<std::size_t>(y * s.width + x)];
    return out;
  };
  o.left = pad_img(s.left);
  o.right = pad_img(s.right);
  o.gt = pad_map(s.gt);
  o.valid = pad_map(s.valid);
  o.fg = pad_map(s.fg);
  o.noc = pad_map(s.noc);
  return o;
}

template <typename T>
BasicTensor<T> stack_images(const std::vector<const StereoSample*>& batch, bool right) {
  if (batch.empty()) throw std::invalid_argument("stack_images: empty batch");
  const Index H = batch[0]->height, W = batch[0]->width;
  std::vector<T> data;
  data.reserve(static_cast<std::size_t>(batch.size() * 3 * H * W));
  for (const auto* s : batch) {
    if (s->height != H || s->width != W) throw ShapeError("stack_images: samples differ in size");
    const auto& src = right ? s->right : s->left;
    data.insert(data.end(), src.begin(), src.end());
  }
  return BasicTensor<T>(Shape{static_cast<Index>(batch.size()), 3, H, W}, std::move(data));
}

template BasicTensor<float> stack_images(const std::vector<const StereoSample*>&, bool);
template BasicTensor<double> stack_images(const std::vector<const StereoSample*>&, bool);

}  // namespace amnet
