#include "mmcrl/mnist.hpp"

#include "mmcrl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <numbers>
#include <numeric>

namespace mmcrl::mnist {

namespace fs = std::filesystem;

namespace {

constexpr int kSize = 28;
constexpr int kPixels = kSize * kSize;
constexpr std::uint64_t kClassMapSeed = 0x6d6e6973745f67ULL;

// Digests of the reference MNIST distribution (uncompressed IDX).
const std::map<std::string, std::string>& reference_digests() {
  static const std::map<std::string, std::string> d{
      {"train-images-idx3-ubyte", "fnv1a64:fb6e3c26051525ed"},
      {"train-labels-idx1-ubyte", "fnv1a64:eccab7a873f1ddf0"},
      {"t10k-images-idx3-ubyte", "fnv1a64:fe068920776fd4bd"},
      {"t10k-labels-idx1-ubyte", "fnv1a64:cf57c2e698f9fc9b"},
  };
  return d;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open " + path.string() +
                  "; place the standard IDX files there (see tools/prepare_raw_data.py) or set MMCRL_DATA_DIR");
  return {std::istreambuf_iterator<char>(in), {}};
}

std::uint32_t be32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (std::size_t k = 0; k < 4; ++k) v = (v << 8) | static_cast<unsigned char>(s[at + k]);
  return v;
}

}  // namespace

IdxImages read_idx_images(const fs::path& path) {
  const std::string s = read_file(path);
  if (s.size() < 16 || be32(s, 0) != 2051) throw IoError(path.string() + ": not an IDX image file");
  IdxImages out;
  out.count = static_cast<int>(be32(s, 4));
  out.rows = static_cast<int>(be32(s, 8));
  out.cols = static_cast<int>(be32(s, 12));
  const std::size_t need = static_cast<std::size_t>(out.count) * out.rows * out.cols;
  if (s.size() != 16 + need) throw IoError(path.string() + ": payload size does not match header");
  out.pixels.assign(s.begin() + 16, s.end());
  return out;
}

std::vector<std::uint8_t> read_idx_labels(const fs::path& path) {
  const std::string s = read_file(path);
  if (s.size() < 8 || be32(s, 0) != 2049) throw IoError(path.string() + ": not an IDX label file");
  const std::size_t n = be32(s, 4);
  if (s.size() != 8 + n) throw IoError(path.string() + ": payload size does not match header");
  return {s.begin() + 8, s.end()};
}

std::vector<std::string> verify_raw_files(const fs::path& dir, const std::vector<std::string>& files) {
  const fs::path manifest = dir / "checksums.json";
  Json expected = Json::object();
  if (fs::exists(manifest)) expected = read_json(manifest);
  else
    for (const auto& [k, v] : reference_digests()) expected[k] = v;
  std::vector<std::string> out;
  for (const auto& name : files) {
    const std::string bytes = read_file(dir / name);
    const std::string digest = "fnv1a64:" + hex64(fnv1a64(bytes));
    if (!expected.contains(name))
      throw IoError((dir / name).string() + ": no checksum to verify against; regenerate checksums.json");
    if (expected[name].get<std::string>() != digest)
      throw IoError((dir / name).string() + ": checksum mismatch (expected " + expected[name].get<std::string>() +
                    ", got " + digest + ")");
    out.push_back(digest);
  }
  return out;
}

LabeledImages load_training_split(const fs::path& dir) {
  LabeledImages out;
  out.digests = verify_raw_files(dir, {kTrainImages, kTrainLabels});
  out.images = read_idx_images(dir / kTrainImages);
  out.labels = read_idx_labels(dir / kTrainLabels);
  if (out.images.rows != kSize || out.images.cols != kSize) throw IoError(dir.string() + ": images must be 28x28");
  if (static_cast<int>(out.labels.size()) != out.images.count) throw IoError(dir.string() + ": label count differs");
  for (int k = 0; k < out.images.count; ++k) {
    if (out.labels[k] > 9) throw IoError(dir.string() + ": label out of range");
    out.by_class[out.labels[k]].push_back(k);
  }
  for (int c = 0; c < 10; ++c)
    if (out.by_class[c].empty()) throw IoError(dir.string() + ": class " + std::to_string(c) + " has no images");
  return out;
}

void VariantConfig::validate() const {
  require(n_pairs >= 1, "mnist: n_pairs must be >= 1");
  require(hue_jitter >= 0.0 && angle_jitter >= 0.0, "mnist: jitter must be non-negative");
  require(exo_dim >= 0, "mnist: exo_dim must be non-negative");
}

Json VariantConfig::to_json() const {
  return {{"seed", seed}, {"n_pairs", n_pairs}, {"hue_jitter", hue_jitter}, {"angle_jitter", angle_jitter},
          {"exo_dim", exo_dim}};
}

VariantConfig VariantConfig::from_json(const Json& j) {
  require(j.is_object(), "mnist config must be a JSON object");
  VariantConfig c;
  for (const auto& [key, v] : j.items()) {
    try {
      if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "n_pairs") c.n_pairs = v.get<std::int64_t>();
      else if (key == "hue_jitter") c.hue_jitter = v.get<double>();
      else if (key == "angle_jitter") c.angle_jitter = v.get<double>();
      else if (key == "exo_dim") c.exo_dim = v.get<int>();
      else throw ConfigError("mnist config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("mnist config: bad value for '" + key + "'");
    }
  }
  c.validate();
  return c;
}

const std::array<int, 10>& class_map() {
  static const std::array<int, 10> map = [] {
    std::vector<int> v(10);
    std::iota(v.begin(), v.end(), 0);
    CounterRng rng(kClassMapSeed, streams::kMnist);
    rng.shuffle(v);
    std::array<int, 10> a{};
    std::copy(v.begin(), v.end(), a.begin());
    return a;
  }();
  return map;
}

double hue_of_class(int c) { return kHueMax * c / 9.0; }
double angle_of_class(int f) { return -kAngleMax + 2.0 * kAngleMax * f / 9.0; }

std::array<double, 3> hue_to_rgb(double hue) {
  const double h = 6.0 * (hue - std::floor(hue));
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  switch (sector) {
    case 0: return {1.0, f, 0.0};
    case 1: return {1.0 - f, 1.0, 0.0};
    case 2: return {0.0, 1.0, f};
    case 3: return {0.0, 1.0 - f, 1.0};
    case 4: return {f, 0.0, 1.0};
    default: return {1.0, 0.0, 1.0 - f};
  }
}

void rotate_bilinear(const double* src, double* dst, int size, double degrees) {
  const double t = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(t), s = std::sin(t);
  const double mid = 0.5 * (size - 1);
  auto at = [&](int y, int x) { return y < 0 || x < 0 || y >= size || x >= size ? 0.0 : src[y * size + x]; };
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      // Inverse map: where in the source does this output pixel come from.
      const double dx = x - mid, dy = y - mid;
      const double sx = mid + c * dx - s * dy;
      const double sy = mid + s * dx + c * dy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double ax = sx - fx, ay = sy - fy;
      dst[y * size + x] = (1 - ay) * ((1 - ax) * at(y0, x0) + ax * at(y0, x0 + 1)) +
                          ay * ((1 - ax) * at(y0 + 1, x0) + ax * at(y0 + 1, x0 + 1));
    }
}

double nearest_centroid_accuracy(const Matrix& features, const std::vector<int>& labels, std::uint64_t seed) {
  const Eigen::Index n = features.rows();
  require(static_cast<Eigen::Index>(labels.size()) == n && n >= 2, "probe: need matching features and labels");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  CounterRng rng(seed, streams::kProbe);
  rng.shuffle(idx);
  const std::size_t half = idx.size() / 2;
  Matrix centroid = Matrix::Zero(10, features.cols());
  std::array<int, 10> count{};
  for (std::size_t k = 0; k < half; ++k) {
    centroid.row(labels[idx[k]]) += features.row(idx[k]);
    ++count[labels[idx[k]]];
  }
  for (int c = 0; c < 10; ++c)
    if (count[c] > 0) centroid.row(c) /= count[c];
  int correct = 0;
  for (std::size_t k = half; k < idx.size(); ++k) {
    int best = -1;
    double best_d = 0.0;
    for (int c = 0; c < 10; ++c) {
      if (count[c] == 0) continue;
      const double d = (features.row(idx[k]) - centroid.row(c)).squaredNorm();
      if (best < 0 || d < best_d) best = c, best_d = d;
    }
    correct += best == labels[idx[k]];
  }
  return static_cast<double>(correct) / static_cast<double>(idx.size() - half);
}

MultimodalDataset build_variant_mnist(const LabeledImages& digits, const LabeledImages& fashion,
                                      const VariantConfig& config) {
  config.validate();
  const Eigen::Index n = config.n_pairs;
  const std::uint64_t seed = config.seed;
  Matrix x0(n, 3 * kPixels), x1(n, kPixels), z(n, 4);
  const double hue_sd = config.hue_jitter * kHueMax;
  const double angle_sd = config.angle_jitter * 2.0 * kAngleMax;
  const auto& g = class_map();

#pragma omp parallel for schedule(static)
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = static_cast<std::uint64_t>(r);
    const int c = std::min(9, static_cast<int>(10.0 * counter_uniform(seed, streams::kMnist, row, 0)));
    const int f = g[c];
    const double hue = std::clamp(hue_of_class(c) + hue_sd * counter_normal(seed, streams::kMnist, row, 10), 0.0,
                                  kHueMax);
    const double angle = std::clamp(
        angle_of_class(f) + angle_sd * counter_normal(seed, streams::kMnist, row, 11), -kAngleMax, kAngleMax);
    const auto& dc = digits.by_class[c];
    const auto& fc = fashion.by_class[f];
    const int di = dc[static_cast<std::size_t>(counter_uniform(seed, streams::kMnist, row, 1) * dc.size())];
    const int fi = fc[static_cast<std::size_t>(counter_uniform(seed, streams::kMnist, row, 2) * fc.size())];

    const auto rgb = hue_to_rgb(hue);
    const std::uint8_t* d = digits.images.image(di);
    for (int ch = 0; ch < 3; ++ch)
      for (int p = 0; p < kPixels; ++p) x0(r, ch * kPixels + p) = rgb[ch] * d[p] / 255.0;

    double src[kPixels], dst[kPixels];
    const std::uint8_t* fp = fashion.images.image(fi);
    for (int p = 0; p < kPixels; ++p) src[p] = fp[p] / 255.0;
    rotate_bilinear(src, dst, kSize, angle);
    for (int p = 0; p < kPixels; ++p) x1(r, p) = std::clamp(dst[p], 0.0, 1.0);

    z(r, 0) = c;
    z(r, 1) = hue;
    z(r, 2) = f;
    z(r, 3) = angle;
  }

  MultimodalDataset out;
  out.observations = {std::move(x0), std::move(x1)};
  out.latents = std::move(z);
  out.latent_dims = {2, 2};
  out.exo_dims = {config.exo_dim, config.exo_dim};
  LatentGraph graph;
  graph.modality_of = {0, 0, 1, 1};
  graph.adjacency = BoolMatrix::Constant(4, 4, false);
  graph.adjacency(1, 0) = true;  // c -> hue
  graph.adjacency(2, 0) = true;  // c -> f
  graph.adjacency(3, 2) = true;  // f -> angle
  out.graph = graph;
  Json map = Json::array();
  for (int v : g) map.push_back(v);
  out.provenance = {{"source", "variant_mnist"},
                    {"config", config.to_json()},
                    {"latent_names", {"digit_class", "hue", "fashion_class", "angle"}},
                    {"class_map", map},
                    {"image_shapes", {{3, kSize, kSize}, {1, kSize, kSize}}},
                    {"digits_digests", digits.digests},
                    {"fashion_digests", fashion.digests}};
  out.validate();
  return out;
}

MultimodalDataset build_variant_mnist(const fs::path& raw_mnist_dir, const fs::path& raw_fashion_dir,
                                      const VariantConfig& config) {
  config.validate();
  const LabeledImages digits = load_training_split(raw_mnist_dir);
  const LabeledImages fashion = load_training_split(raw_fashion_dir);
  return build_variant_mnist(digits, fashion, config);
}

fs::path data_root() {
  const char* env = std::getenv("MMCRL_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path("data");
}

}  // namespace mmcrl::mnist
