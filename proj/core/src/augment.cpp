#include "cosingan/augment.hpp"

#include <cmath>
#include <numbers>

namespace cosingan::augment {

void AugmentPolicy::validate() const {
  if (!(crop_min_frac > 0.0 && crop_min_frac <= 1.0)) throw ConfigError("crop_min_frac must lie in (0, 1]");
  if (kind == AugmentKind::weak && use_elastic) throw ConfigError("weak augmentation never uses elastic warping");
  if (!(intensity >= 0.0 && intensity <= 1.0)) throw ConfigError("augmentation intensity must lie in [0, 1]");
  if (elastic_alpha_frac < 0.0 || elastic_sigma_frac <= 0.0) throw ConfigError("elastic parameters must be positive");
  if (rotation_max_deg < 0.0 || rotation_max_deg > 180.0) throw ConfigError("rotation_max_deg must lie in [0, 180]");
}

AugmentPolicy AugmentPolicy::at_intensity(double value) const {
  AugmentPolicy out = *this;
  if (kind == AugmentKind::strong) out.intensity = value;
  return out;
}

AugmentPolicy strong_policy() { return AugmentPolicy{}; }

AugmentPolicy weak_policy() {
  AugmentPolicy p;
  p.kind = AugmentKind::weak;
  p.crop_min_frac = 0.75;
  p.use_elastic = false;
  return p;
}

void to_json(nlohmann::json& j, const AugmentPolicy& p) {
  j = {{"kind", p.kind == AugmentKind::strong ? "SA" : "WA"},
       {"crop_min_frac", p.crop_min_frac},
       {"use_elastic", p.use_elastic},
       {"elastic_alpha_frac", p.elastic_alpha_frac},
       {"elastic_sigma_frac", p.elastic_sigma_frac},
       {"rotation_max_deg", p.rotation_max_deg},
       {"flip_horizontal", p.flip_horizontal},
       {"flip_vertical", p.flip_vertical},
       {"intensity", p.intensity}};
}

void from_json(const nlohmann::json& j, AugmentPolicy& p) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind != "SA" && kind != "WA") throw ConfigError("augmentation kind must be SA or WA");
  p.kind = kind == "SA" ? AugmentKind::strong : AugmentKind::weak;
  j.at("crop_min_frac").get_to(p.crop_min_frac);
  j.at("use_elastic").get_to(p.use_elastic);
  j.at("elastic_alpha_frac").get_to(p.elastic_alpha_frac);
  j.at("elastic_sigma_frac").get_to(p.elastic_sigma_frac);
  j.at("rotation_max_deg").get_to(p.rotation_max_deg);
  j.at("flip_horizontal").get_to(p.flip_horizontal);
  j.at("flip_vertical").get_to(p.flip_vertical);
  j.at("intensity").get_to(p.intensity);
  p.validate();
}

AugmentDraw AugmentDraw::identity(Shape2 shape) {
  AugmentDraw d;
  d.shape = shape;
  d.crop = {0.0, 0.0, static_cast<double>(shape.width), static_cast<double>(shape.height)};
  return d;
}

double AugmentDraw::max_displacement() const {
  if (!elastic_field) return 0.0;
  double m = 0.0;
  for (float v : *elastic_field) m = std::max(m, static_cast<double>(std::abs(v)));
  return m;
}

namespace {

std::vector<double> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-(i * i) / (2.0 * sigma * sigma));
    k[static_cast<size_t>(i + radius)] = v;
    sum += v;
  }
  for (double& v : k) v /= sum;
  return k;
}

// Separable blur with clamped borders.
std::vector<double> blur(const std::vector<double>& src, Shape2 shape, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int64_t h = shape.height;
  const int64_t w = shape.width;
  std::vector<double> tmp(src.size());
  std::vector<double> out(src.size());
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int64_t cc = std::clamp<int64_t>(c + t, 0, w - 1);
        acc += k[static_cast<size_t>(t + radius)] * src[static_cast<size_t>(r * w + cc)];
      }
      tmp[static_cast<size_t>(r * w + c)] = acc;
    }
  }
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int t = -radius; t <= radius; ++t) {
        const int64_t rr = std::clamp<int64_t>(r + t, 0, h - 1);
        acc += k[static_cast<size_t>(t + radius)] * tmp[static_cast<size_t>(rr * w + c)];
      }
      out[static_cast<size_t>(r * w + c)] = acc;
    }
  }
  return out;
}

struct SourceMap {
  double x;
  double y;
};

// Inverse mapping from an output pixel to continuous source coordinates.
template <typename Fn>
void for_each_source(const AugmentDraw& d, Fn&& fn) {
  const int64_t h = d.shape.height;
  const int64_t w = d.shape.width;
  const double sx = d.crop.width / static_cast<double>(w);
  const double sy = d.crop.height / static_cast<double>(h);
  const double theta = d.rotation_deg * std::numbers::pi / 180.0;
  const double cos_t = std::cos(theta);
  const double sin_t = std::sin(theta);
  const double cx = static_cast<double>(w) / 2.0;
  const double cy = static_cast<double>(h) / 2.0;
  const size_t plane = static_cast<size_t>(d.shape.area());
  for (int64_t r = 0; r < h; ++r) {
    for (int64_t c = 0; c < w; ++c) {
      double px = static_cast<double>(c) + 0.5;
      double py = static_cast<double>(r) + 0.5;
      if (d.elastic_field) {
        const size_t idx = static_cast<size_t>(r * w + c);
        px += (*d.elastic_field)[idx];
        py += (*d.elastic_field)[plane + idx];
      }
      if (d.flip_h) px = static_cast<double>(w) - px;
      if (d.flip_v) py = static_cast<double>(h) - py;
      if (d.rotation_deg != 0.0) {
        const double dx = px - cx;
        const double dy = py - cy;
        px = cx + cos_t * dx - sin_t * dy;
        py = cy + sin_t * dx + cos_t * dy;
      }
      fn(r, c, SourceMap{d.crop.x0 + px * sx - 0.5, d.crop.y0 + py * sy - 0.5});
    }
  }
}

void check_shape(const AugmentDraw& d, Shape2 s) {
  if (!(d.shape == s)) throw ValidationError("augment draw shape " + to_string(d.shape) + " != input shape " + to_string(s));
  if (d.crop.x0 < -1e-9 || d.crop.y0 < -1e-9 || d.crop.x0 + d.crop.width > static_cast<double>(s.width) + 1e-9 ||
      d.crop.y0 + d.crop.height > static_cast<double>(s.height) + 1e-9) {
    throw std::logic_error("augment crop box outside the image");
  }
}

}  // namespace

AugmentDraw sample_draw(const AugmentPolicy& policy, Shape2 shape, uint64_t seed) {
  policy.validate();
  if (shape.height < 8 || shape.width < 8) throw ValidationError("augmentation needs at least an 8x8 image");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  AugmentDraw d;
  d.shape = shape;
  d.rng_seed = seed;
  const double lo = policy.effective_crop_min();
  const double frac = lo + (1.0 - lo) * unit(rng);
  d.crop.width = frac * static_cast<double>(shape.width);
  d.crop.height = frac * static_cast<double>(shape.height);
  d.crop.x0 = (static_cast<double>(shape.width) - d.crop.width) * unit(rng);
  d.crop.y0 = (static_cast<double>(shape.height) - d.crop.height) * unit(rng);
  d.rotation_deg = policy.rotation_max_deg * (2.0 * unit(rng) - 1.0);
  d.flip_h = policy.flip_horizontal && unit(rng) < 0.5;
  d.flip_v = policy.flip_vertical && unit(rng) < 0.5;

  if (policy.use_elastic) {
    const auto min_dim = static_cast<double>(shape.min_dim());
    const double alpha = policy.elastic_alpha_frac * min_dim * policy.intensity;
    const double sigma = std::max(0.5, policy.elastic_sigma_frac * min_dim);
    const size_t n = static_cast<size_t>(shape.area());
    std::vector<double> dx(n);
    std::vector<double> dy(n);
    for (auto& v : dx) v = 2.0 * unit(rng) - 1.0;
    for (auto& v : dy) v = 2.0 * unit(rng) - 1.0;
    dx = blur(dx, shape, sigma);
    dy = blur(dy, shape, sigma);
    double peak = 0.0;
    for (size_t i = 0; i < n; ++i) peak = std::max({peak, std::abs(dx[i]), std::abs(dy[i])});
    const double scale = peak > 0.0 ? alpha / peak : 0.0;
    std::vector<float> field(2 * n);
    for (size_t i = 0; i < n; ++i) {
      field[i] = static_cast<float>(dx[i] * scale);
      field[n + i] = static_cast<float>(dy[i] * scale);
    }
    d.elastic_field = std::move(field);
  }
  return d;
}

AugmentDraw sample_draw(const AugmentPolicy& policy, Shape2 shape, std::mt19937_64& rng) {
  return sample_draw(policy, shape, rng());
}

Image apply_draw(const AugmentDraw& draw, const Image& image) {
  check_shape(draw, image.shape());
  Image out(image.shape());
  for_each_source(draw, [&](int64_t r, int64_t c, SourceMap s) { out.at(r, c) = sample_bilinear(image, s.x, s.y); });
  return out;
}

ConditionMask apply_draw(const AugmentDraw& draw, const ConditionMask& mask) {
  check_shape(draw, mask.shape());
  std::vector<uint8_t> labels(static_cast<size_t>(mask.shape().area()));
  const int64_t w = mask.width();
  for_each_source(draw, [&](int64_t r, int64_t c, SourceMap s) {
    labels[static_cast<size_t>(r * w + c)] = sample_nearest(mask, s.x, s.y);
  });
  return ConditionMask(mask.shape(), std::move(labels));
}

std::pair<Image, ConditionMask> apply_draw(const AugmentDraw& draw, const Image& image, const ConditionMask& mask) {
  if (!(image.shape() == mask.shape())) throw ValidationError("apply_draw: image and mask are not aligned");
  return {apply_draw(draw, image), apply_draw(draw, mask)};
}

double sa_intensity_for_scale(const ScaleSchedule& schedule, int scale_index) {
  if (scale_index < 0 || static_cast<size_t>(scale_index) >= schedule.size()) {
    throw ValidationError("scale index " + std::to_string(scale_index) + " out of range");
  }
  return schedule.sa_intensity[static_cast<size_t>(scale_index)];
}

AugmentPolicy policy_for(const AugmentPolicy& strong, const AugmentPolicy& weak, const ScaleSchedule& schedule,
                         int scale_index, nets::Stage stage) {
  if (stage == nets::Stage::restore) return weak;
  return strong.at_intensity(sa_intensity_for_scale(schedule, scale_index));
}

CascadeInput cascade_input(nets::GeneratorStack& stack, const std::vector<ConditionMask>& masks_full, int scale_index) {
  if (masks_full.empty()) throw ValidationError("cascade needs at least one mask");
  if (scale_index < 0 || static_cast<size_t>(scale_index) >= stack.schedule.size()) {
    throw ValidationError("scale index " + std::to_string(scale_index) + " out of range");
  }
  if (stack.trained_prefix() < static_cast<size_t>(scale_index)) {
    throw StateError("cascade to scale " + std::to_string(scale_index) + " needs trained generators for all coarser scales");
  }
  auto encode_at = [&](size_t j, std::vector<ConditionMask>* keep) {
    std::vector<torch::Tensor> conds;
    for (const auto& m : masks_full) {
      auto resized = resize_mask(m, stack.schedule.scales[j]);
      conds.push_back(encode_mask(resized));
      if (keep != nullptr) keep->push_back(std::move(resized));
    }
    return torch::cat(conds, 0);
  };

  CascadeInput out;
  torch::NoGradGuard guard;
  for (int j = 0; j < scale_index; ++j) {
    auto cond = encode_at(static_cast<size_t>(j), nullptr);
    out.prev_output = nets::two_stage_forward(stack.levels[static_cast<size_t>(j)], out.prev_output, cond);
  }
  out.cond = encode_at(static_cast<size_t>(scale_index), &out.masks);
  return out;
}

CascadeInput augmented_cascade_input(nets::GeneratorStack& stack, const ConditionMask& mask_orig,
                                     const std::vector<AugmentDraw>& draws, int scale_index) {
  std::vector<ConditionMask> augmented;
  augmented.reserve(draws.size());
  for (const auto& d : draws) augmented.push_back(apply_draw(d, mask_orig));
  return cascade_input(stack, augmented, scale_index);
}

}  // namespace cosingan::augment
