#pragma once

// Two-modality image dataset built from MNIST digits and Fashion-MNIST items.
//
// Latents per pair, in column order: digit class c, hue, fashion class f,
// rotation angle (degrees). Graph: c -> hue, c -> f, f -> angle.
// Modality 0 is the colored digit (3 x 28 x 28), modality 1 the rotated
// fashion item (1 x 28 x 28), both flattened CHW with values in [0, 1].

#include "mmcrl/dataset.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace mmcrl::mnist {

struct IdxImages {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // count * rows * cols, row-major

  const std::uint8_t* image(int k) const { return pixels.data() + static_cast<std::size_t>(k) * rows * cols; }
};

/// Throws IoError on a missing file, bad magic number, or truncated payload.
IdxImages read_idx_images(const std::filesystem::path& path);
std::vector<std::uint8_t> read_idx_labels(const std::filesystem::path& path);

inline constexpr const char* kTrainImages = "train-images-idx3-ubyte";
inline constexpr const char* kTrainLabels = "train-labels-idx1-ubyte";

/// Checks `files` in `dir` against dir/checksums.json, or against the built-in
/// digests of the reference MNIST files when there is no manifest. Returns the
/// digests. Throws IoError when a file is missing, mismatches, or has no
/// digest to check against.
std::vector<std::string> verify_raw_files(const std::filesystem::path& dir, const std::vector<std::string>& files);

/// Images and labels of one training split, grouped by class.
struct LabeledImages {
  IdxImages images;
  std::vector<std::uint8_t> labels;
  std::array<std::vector<int>, 10> by_class;
  std::vector<std::string> digests;
};
LabeledImages load_training_split(const std::filesystem::path& dir);

struct VariantConfig {
  std::uint64_t seed = 0;
  std::int64_t n_pairs = 10000;
  /// Jitter standard deviations as fractions of each attribute's range.
  double hue_jitter = 0.05;
  double angle_jitter = 0.05;
  /// Declared nuisance capacity per modality (stroke style, item shape).
  int exo_dim = 6;

  void validate() const;
  Json to_json() const;
  static VariantConfig from_json(const Json& j);
};

inline constexpr double kHueMax = 0.8;
inline constexpr double kAngleMax = 45.0;

/// Fixed class-to-class map g(c). Surjective onto the ten fashion classes.
const std::array<int, 10>& class_map();
double hue_of_class(int c);
double angle_of_class(int f);

/// RGB in [0, 1] for hue in [0, 1), full saturation and value.
std::array<double, 3> hue_to_rgb(double hue);

/// Rotates a size x size image by `degrees` counter-clockwise about its
/// centre with bilinear sampling; samples outside the source read as 0.
void rotate_bilinear(const double* src, double* dst, int size, double degrees);

/// Held-out accuracy of a nearest-centroid classifier predicting `labels`
/// (integers 0..9) from the rows of `features`; a random half trains.
double nearest_centroid_accuracy(const Matrix& features, const std::vector<int>& labels, std::uint64_t seed);

/// Builds the dataset. Throws IoError when the raw files are missing (with a
/// hint on how to obtain them) or fail the checksum.
MultimodalDataset build_variant_mnist(const std::filesystem::path& raw_mnist_dir,
                                      const std::filesystem::path& raw_fashion_dir, const VariantConfig& config);

/// Same, from already loaded splits.
MultimodalDataset build_variant_mnist(const LabeledImages& digits, const LabeledImages& fashion,
                                      const VariantConfig& config);

/// $MMCRL_DATA_DIR, else "data".
std::filesystem::path data_root();

}  // namespace mmcrl::mnist
