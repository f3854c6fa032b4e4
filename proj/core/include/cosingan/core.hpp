#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace cosingan {

// Error taxonomy. Each family maps onto one CLI exit code.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StateError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Shape2 {
  int64_t height = 0;
  int64_t width = 0;

  int64_t min_dim() const { return std::min(height, width); }
  int64_t area() const { return height * width; }
  bool operator==(const Shape2&) const = default;
};

std::string to_string(const Shape2& s);

/// Single-channel real image stored row-major. Pixel values conventionally
/// live in [-1, 1] but the type itself does not enforce a range.
class Image {
 public:
  Image() = default;
  Image(Shape2 shape, float fill = 0.0F);
  Image(Shape2 shape, std::vector<float> data);

  const Shape2& shape() const { return shape_; }
  int64_t height() const { return shape_.height; }
  int64_t width() const { return shape_.width; }

  float& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_.width + c)]; }
  float at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_.width + c)]; }

  std::vector<float>& data() { return data_; }
  const std::vector<float>& data() const { return data_; }

  float min() const;
  float max() const;

  bool operator==(const Image&) const = default;

 private:
  Shape2 shape_;
  std::vector<float> data_;
};

enum class MaskClass : uint8_t { background = 0, lung = 1, infection = 2 };
inline constexpr int kNumClasses = 3;

/// Three-class label map (background / lung / infection).
class ConditionMask {
 public:
  ConditionMask() = default;
  ConditionMask(Shape2 shape, uint8_t fill = 0);
  /// Throws ValidationError if any label falls outside {0,1,2}.
  ConditionMask(Shape2 shape, std::vector<uint8_t> labels);

  const Shape2& shape() const { return shape_; }
  int64_t height() const { return shape_.height; }
  int64_t width() const { return shape_.width; }

  uint8_t at(int64_t r, int64_t c) const { return labels_[static_cast<size_t>(r * shape_.width + c)]; }
  void set(int64_t r, int64_t c, uint8_t label);

  const std::vector<uint8_t>& labels() const { return labels_; }

  int64_t count(uint8_t label) const;
  bool contains(uint8_t label) const { return count(label) > 0; }
  /// Labels present in the map, ascending.
  std::vector<uint8_t> label_set() const;

  bool operator==(const ConditionMask&) const = default;

 private:
  Shape2 shape_;
  std::vector<uint8_t> labels_;
};

struct SamplePair {
  Image image;
  ConditionMask mask;
  int scale_index = 0;
  int modality_tag = 0;

  /// Checks shape agreement and the [-1, 1] value range.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Scale schedule

enum class ScheduleProfile { paper, desk };

struct ScaleSchedule {
  std::vector<Shape2> scales;
  std::vector<int> gen_depths;
  std::vector<int> disc_depths;
  std::vector<double> sa_intensity;

  size_t size() const { return scales.size(); }
  const Shape2& final_scale() const { return scales.back(); }

  /// Throws ConfigError when any schedule invariant is broken.
  void validate() const;

  bool operator==(const ScaleSchedule&) const = default;
};

ScaleSchedule build_scale_schedule(int64_t max_size, int n_scales, ScheduleProfile profile);

ScheduleProfile parse_profile(const std::string& name);
std::string to_string(ScheduleProfile p);

// ---------------------------------------------------------------------------
// Mask encoding

/// Pixel values of the canonical condition encoding for classes 0, 1, 2.
inline constexpr std::array<double, 3> kCanonicalPixelValues = {0.0, 128.0, 255.0};

inline double pixel_to_unit(double v) { return v / 255.0 * 2.0 - 1.0; }

/// Encodes a mask as a (1,1,H,W) float tensor using the canonical values.
torch::Tensor encode_mask(const ConditionMask& mask);

/// Encodes with explicit per-class 8-bit pixel values (before normalization).
torch::Tensor encode_mask_with_values(const ConditionMask& mask, const std::array<double, 3>& pixel_values);

/// Inverse of encode_mask: nearest canonical value per pixel. Accepts (H,W),
/// (1,H,W) or (1,1,H,W) tensors.
ConditionMask decode_mask(const torch::Tensor& encoded);

/// (B,1,H,W) int64 label tensor.
torch::Tensor labels_to_tensor(const std::vector<ConditionMask>& masks);

// ---------------------------------------------------------------------------
// Tensor bridges

/// Stacks images into a (B,1,H,W) float tensor.
torch::Tensor images_to_tensor(const std::vector<Image>& images);
torch::Tensor image_to_tensor(const Image& image);
/// Extracts sample `index` of a (B,1,H,W) tensor.
Image tensor_to_image(const torch::Tensor& t, int64_t index = 0);

/// Validates the ImageTensor contract: 4-D, channels in {1,3}, batch >= 1,
/// finite values.
void validate_image_tensor(const torch::Tensor& t, const char* what);

// ---------------------------------------------------------------------------
// Resampling

/// Bilinear resampling with half-pixel centers and edge clamping.
Image resize_image(const Image& img, Shape2 target);

/// Nearest-neighbour resampling; never introduces new labels.
ConditionMask resize_mask(const ConditionMask& mask, Shape2 target);

/// Bilinear sample at continuous pixel coordinates (x = column, y = row),
/// clamped to the border.
float sample_bilinear(const Image& img, double x, double y);
uint8_t sample_nearest(const ConditionMask& mask, double x, double y);

/// lr_init up to and including `start`, then lr_init * (1 - frac * (epoch - start)),
/// clamped at zero.
double linear_decay_lr(double lr_init, int64_t start, double frac_per_epoch, int64_t epoch);

/// Mixes a base seed with a stream index (splitmix64); used to derive
/// independent per-stage and per-sample seeds.
uint64_t derive_seed(uint64_t base, uint64_t stream);

}  // namespace cosingan
