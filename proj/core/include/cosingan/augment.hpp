#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <utility>

#include "cosingan/core.hpp"
#include "cosingan/nets.hpp"
#include "json.hpp"

namespace cosingan::augment {

enum class AugmentKind { strong, weak };

/// Geometric augmentation regime. `intensity` widens the crop range toward 1
/// and scales the elastic amplitude.
struct AugmentPolicy {
  AugmentKind kind = AugmentKind::strong;
  double crop_min_frac = 0.5;
  bool use_elastic = true;
  /// Elastic amplitude and smoothing as fractions of the smaller image side.
  double elastic_alpha_frac = 0.08;
  double elastic_sigma_frac = 0.04;
  double rotation_max_deg = 20.0;
  bool flip_horizontal = true;
  bool flip_vertical = true;
  double intensity = 1.0;

  void validate() const;
  /// Copy with a different intensity (ignored for weak policies).
  AugmentPolicy at_intensity(double value) const;

  double effective_crop_min() const { return 1.0 - (1.0 - crop_min_frac) * intensity; }

  bool operator==(const AugmentPolicy&) const = default;
};

AugmentPolicy strong_policy();
AugmentPolicy weak_policy();

void to_json(nlohmann::json& j, const AugmentPolicy& p);
void from_json(const nlohmann::json& j, AugmentPolicy& p);

struct CropBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;
};

/// One sampled transform; replaying it is deterministic.
struct AugmentDraw {
  Shape2 shape;
  CropBox crop;
  double rotation_deg = 0.0;
  bool flip_h = false;
  bool flip_v = false;
  /// Per-pixel displacement (dx then dy planes, each shape.area() long) in
  /// output pixels; absent when the policy disables elastic warping.
  std::optional<std::vector<float>> elastic_field;
  uint64_t rng_seed = 0;

  static AugmentDraw identity(Shape2 shape);
  double crop_fraction() const { return crop.width / static_cast<double>(shape.width); }
  double max_displacement() const;
};

/// Samples a draw from an explicit seed; the same (policy, shape, seed) always
/// yields the same draw.
AugmentDraw sample_draw(const AugmentPolicy& policy, Shape2 shape, uint64_t seed);
/// Convenience overload consuming one value from `rng` as the seed.
AugmentDraw sample_draw(const AugmentPolicy& policy, Shape2 shape, std::mt19937_64& rng);

/// Applies the same geometric transform to both; bilinear for the image,
/// nearest-neighbour for the mask. Outputs keep the input shape.
std::pair<Image, ConditionMask> apply_draw(const AugmentDraw& draw, const Image& image, const ConditionMask& mask);
Image apply_draw(const AugmentDraw& draw, const Image& image);
ConditionMask apply_draw(const AugmentDraw& draw, const ConditionMask& mask);

double sa_intensity_for_scale(const ScaleSchedule& schedule, int scale_index);

/// Policy used to train a given stage at a scale: SA at the schedule's
/// intensity for stage 1, WA unchanged for stage 2.
AugmentPolicy policy_for(const AugmentPolicy& strong, const AugmentPolicy& weak, const ScaleSchedule& schedule,
                         int scale_index, nets::Stage stage);

struct CascadeInput {
  std::optional<torch::Tensor> prev_output;  ///< O_{i-1} at scale i-1, (B,1,h,w)
  torch::Tensor cond;                        ///< encoded C_i, (B,1,H,W)
  std::vector<ConditionMask> masks;          ///< augmented C_i label maps
};

/// Augments the full-resolution masks once per draw, resizes the result to
/// every scale up to i, and runs the frozen generators 0..i-1 on those
/// conditions. Requires stack.trained_prefix() >= scale_index.
CascadeInput augmented_cascade_input(nets::GeneratorStack& stack, const ConditionMask& mask_orig,
                                     const std::vector<AugmentDraw>& draws, int scale_index);

/// Un-augmented cascade: identical to using identity draws.
CascadeInput cascade_input(nets::GeneratorStack& stack, const std::vector<ConditionMask>& masks_full, int scale_index);

}  // namespace cosingan::augment
