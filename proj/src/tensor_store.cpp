#include "mmcrl/tensor_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mmcrl {

static_assert(std::endian::native == std::endian::little,
              "tensor files are little-endian; big-endian hosts need byte swapping");

namespace {

std::string dtype_name(DType d) { return d == DType::Float32 ? "float32" : "float64"; }

DType parse_dtype(const std::string& s) {
  if (s == "float32") return DType::Float32;
  if (s == "float64") return DType::Float64;
  throw IoError("unsupported dtype '" + s + "'");
}

std::string encode(const Matrix& m, DType dtype) {
  const std::size_t count = static_cast<std::size_t>(m.size());
  std::string bytes;
  if (dtype == DType::Float32) {
    bytes.resize(count * sizeof(float));
    auto* out = bytes.data();
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j, ++k) {
        const float f = static_cast<float>(m(i, j));
        std::memcpy(out + k * sizeof(float), &f, sizeof(float));
      }
  } else {
    bytes.resize(count * sizeof(double));
    auto* out = bytes.data();
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j, ++k) {
        const double d = m(i, j);
        std::memcpy(out + k * sizeof(double), &d, sizeof(double));
      }
  }
  return bytes;
}

Matrix decode(const std::string& bytes, Eigen::Index rows, Eigen::Index cols, DType dtype) {
  const std::size_t width = dtype == DType::Float32 ? sizeof(float) : sizeof(double);
  if (bytes.size() != static_cast<std::size_t>(rows * cols) * width)
    throw IoError("tensor file size does not match manifest shape");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j, ++k) {
      if (dtype == DType::Float32) {
        float f;
        std::memcpy(&f, bytes.data() + k * width, width);
        m(i, j) = f;
      } else {
        double d;
        std::memcpy(&d, bytes.data() + k * width, width);
        m(i, j) = d;
      }
    }
  return m;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

void TensorStore::put(const std::string& name, const Matrix& value, DType dtype) {
  require(!name.empty(), "tensor name must be nonempty");
  require(name.find('/') == std::string::npos, "tensor name must not contain '/'");
  if (!contains(name)) order_.push_back(name);
  fields_[name] = Field{value, dtype};
}

const Matrix& TensorStore::get(const std::string& name) const {
  auto it = fields_.find(name);
  if (it == fields_.end()) throw IoError("missing tensor '" + name + "'");
  return it->second.value;
}

std::vector<std::string> TensorStore::names() const { return order_; }

std::string TensorStore::content_hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : order_) {
    const auto& f = fields_.at(name);
    h = fnv1a64(name, h);
    h = fnv1a64(encode(f.value, f.dtype), h);
  }
  return "fnv1a64:" + hex64(h);
}

void TensorStore::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Json fields = Json::array();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& name : order_) {
    const auto& f = fields_.at(name);
    const std::string bytes = encode(f.value, f.dtype);
    h = fnv1a64(name, h);
    h = fnv1a64(bytes, h);
    const std::string file = name + (f.dtype == DType::Float32 ? ".f32" : ".f64");
    std::ofstream out(dir / file, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + (dir / file).string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    fields.push_back({{"name", name},
                      {"file", file},
                      {"dtype", dtype_name(f.dtype)},
                      {"shape", {f.value.rows(), f.value.cols()}}});
  }
  Json manifest = {{"format", "mmcrl-tensors"},
                   {"version", 1},
                   {"kind", kind_},
                   {"fields", fields},
                   {"meta", meta_},
                   {"content_hash", "fnv1a64:" + hex64(h)}};
  write_json(dir / "manifest.json", manifest);
}

TensorStore TensorStore::load(const std::filesystem::path& dir) {
  const Json manifest = read_json(dir / "manifest.json");
  if (manifest.value("format", "") != "mmcrl-tensors")
    throw IoError(dir.string() + " is not an mmcrl tensor container");
  TensorStore store(manifest.value("kind", "dataset"));
  store.meta_ = manifest.value("meta", Json::object());
  for (const auto& f : manifest.at("fields")) {
    const auto shape = f.at("shape").get<std::vector<Eigen::Index>>();
    if (shape.size() != 2) throw IoError("only 2-D tensors are supported");
    const DType dtype = parse_dtype(f.at("dtype").get<std::string>());
    const auto bytes = read_file(dir / f.at("file").get<std::string>());
    store.put(f.at("name").get<std::string>(), decode(bytes, shape[0], shape[1], dtype), dtype);
  }
  const std::string expected = manifest.value("content_hash", "");
  if (expected != store.content_hash())
    throw IoError("content hash mismatch in " + dir.string());
  return store;
}

void write_json(const std::filesystem::path& path, const Json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw IoError("invalid JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace mmcrl
