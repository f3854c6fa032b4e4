#include "cosingan/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace cosingan {

std::string to_string(const Shape2& s) {
  std::ostringstream os;
  os << s.height << "x" << s.width;
  return os.str();
}

// ---------------------------------------------------------------------------
// Image

Image::Image(Shape2 shape, float fill) : shape_(shape), data_(static_cast<size_t>(shape.area()), fill) {
  if (shape.height < 1 || shape.width < 1) throw ValidationError("image shape must be at least 1x1, got " + to_string(shape));
}

Image::Image(Shape2 shape, std::vector<float> data) : shape_(shape), data_(std::move(data)) {
  if (shape.height < 1 || shape.width < 1) throw ValidationError("image shape must be at least 1x1, got " + to_string(shape));
  if (static_cast<int64_t>(data_.size()) != shape.area())
    throw ValidationError("image data size does not match shape " + to_string(shape));
}

float Image::min() const { return *std::min_element(data_.begin(), data_.end()); }
float Image::max() const { return *std::max_element(data_.begin(), data_.end()); }

// ---------------------------------------------------------------------------
// ConditionMask

ConditionMask::ConditionMask(Shape2 shape, uint8_t fill) : shape_(shape), labels_(static_cast<size_t>(shape.area()), fill) {
  if (shape.height < 1 || shape.width < 1) throw ValidationError("mask shape must be at least 1x1, got " + to_string(shape));
  if (fill >= kNumClasses) throw ValidationError("mask label out of range: " + std::to_string(fill));
}

ConditionMask::ConditionMask(Shape2 shape, std::vector<uint8_t> labels) : shape_(shape), labels_(std::move(labels)) {
  if (shape.height < 1 || shape.width < 1) throw ValidationError("mask shape must be at least 1x1, got " + to_string(shape));
  if (static_cast<int64_t>(labels_.size()) != shape.area())
    throw ValidationError("mask data size does not match shape " + to_string(shape));
  for (uint8_t v : labels_) {
    if (v >= kNumClasses) throw ValidationError("mask label out of range: " + std::to_string(v));
  }
}

void ConditionMask::set(int64_t r, int64_t c, uint8_t label) {
  if (label >= kNumClasses) throw ValidationError("mask label out of range: " + std::to_string(label));
  labels_[static_cast<size_t>(r * shape_.width + c)] = label;
}

int64_t ConditionMask::count(uint8_t label) const {
  return std::count(labels_.begin(), labels_.end(), label);
}

std::vector<uint8_t> ConditionMask::label_set() const {
  std::array<bool, kNumClasses> seen{};
  for (uint8_t v : labels_) seen[v] = true;
  std::vector<uint8_t> out;
  for (uint8_t k = 0; k < kNumClasses; ++k) {
    if (seen[k]) out.push_back(k);
  }
  return out;
}

void SamplePair::validate() const {
  if (!(image.shape() == mask.shape()))
    throw ValidationError("sample image shape " + to_string(image.shape()) + " != mask shape " + to_string(mask.shape()));
  for (float v : image.data()) {
    if (!(v >= -1.0F - 1e-6F && v <= 1.0F + 1e-6F)) throw ValidationError("sample image value outside [-1, 1]");
  }
}

// ---------------------------------------------------------------------------
// Scale schedule

namespace {

constexpr int kMaxGenDepth = 8;

int depth_for(int64_t min_dim) {
  int lg = 0;
  while ((int64_t{1} << (lg + 1)) <= min_dim) ++lg;
  return std::min(lg - 1, kMaxGenDepth);
}

std::vector<double> linear_intensity(size_t n) {
  std::vector<double> out(n);
  for (size_t i = 0; i < n; ++i) {
    out[i] = n == 1 ? 1.0 : 1.0 - 0.75 * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return out;
}

}  // namespace

void ScaleSchedule::validate() const {
  const size_t n = scales.size();
  if (n < 2) throw ConfigError("schedule needs at least two scales");
  if (gen_depths.size() != n || disc_depths.size() != n || sa_intensity.size() != n)
    throw ConfigError("schedule lists have mismatched lengths");
  for (size_t i = 0; i < n; ++i) {
    const Shape2& s = scales[i];
    if (i > 0 && (s.height <= scales[i - 1].height || s.width <= scales[i - 1].width))
      throw ConfigError("schedule scales must be strictly increasing in both dimensions");
    if (gen_depths[i] < 3) throw ConfigError("generator depth must be >= 3 at scale " + std::to_string(i));
    if (disc_depths[i] < 3) throw ConfigError("discriminator depth must be >= 3 at scale " + std::to_string(i));
    if ((s.min_dim() >> gen_depths[i]) < 2)
      throw ConfigError("scale " + to_string(s) + " too small for generator depth " + std::to_string(gen_depths[i]));
    if (!(sa_intensity[i] >= 0.0 && sa_intensity[i] <= 1.0)) throw ConfigError("sa_intensity must lie in [0, 1]");
    if (i > 0 && sa_intensity[i] > sa_intensity[i - 1]) throw ConfigError("sa_intensity must be non-increasing");
  }
}

ScaleSchedule build_scale_schedule(int64_t max_size, int n_scales, ScheduleProfile profile) {
  if (n_scales < 2) throw ConfigError("n_scales must be >= 2, got " + std::to_string(n_scales));
  if (max_size < 16) throw ConfigError("max_size must be >= 16, got " + std::to_string(max_size));

  std::vector<int64_t> sizes(static_cast<size_t>(n_scales));
  if (profile == ScheduleProfile::paper) {
    // Alternating x3/4 and x2/3 ladder: 512, 384, 256, 192, ...
    int64_t s = max_size;
    for (int k = n_scales - 1; k >= 0; --k) {
      sizes[static_cast<size_t>(k)] = s;
      const bool from_pow = (n_scales - 1 - k) % 2 == 0;
      const int64_t num = from_pow ? 3 : 2;
      const int64_t den = from_pow ? 4 : 3;
      if (k > 0 && (s * num) % den != 0)
        throw ConfigError("max_size " + std::to_string(max_size) + " does not admit a paper-profile ladder of " +
                          std::to_string(n_scales) + " scales");
      s = s * num / den;
    }
  } else {
    const double ratio = static_cast<double>(max_size) / 16.0;
    for (int k = 0; k < n_scales; ++k) {
      const double raw = 16.0 * std::pow(ratio, static_cast<double>(k) / (n_scales - 1));
      sizes[static_cast<size_t>(k)] = std::max<int64_t>(16, 4 * std::llround(raw / 4.0));
    }
    sizes.front() = 16;
    sizes.back() = max_size;
  }

  ScaleSchedule out;
  for (int64_t s : sizes) {
    out.scales.push_back({s, s});
    const int d = depth_for(s);
    out.gen_depths.push_back(d);
    out.disc_depths.push_back(d + 2);
  }
  out.sa_intensity = linear_intensity(sizes.size());
  out.validate();
  return out;
}

ScheduleProfile parse_profile(const std::string& name) {
  if (name == "paper") return ScheduleProfile::paper;
  if (name == "desk") return ScheduleProfile::desk;
  throw ConfigError("unknown schedule profile '" + name + "'");
}

std::string to_string(ScheduleProfile p) { return p == ScheduleProfile::paper ? "paper" : "desk"; }

// ---------------------------------------------------------------------------
// Encoding

torch::Tensor encode_mask_with_values(const ConditionMask& mask, const std::array<double, 3>& pixel_values) {
  std::array<float, 3> unit{};
  for (size_t k = 0; k < 3; ++k) unit[k] = static_cast<float>(pixel_to_unit(pixel_values[k]));
  auto out = torch::empty({1, 1, mask.height(), mask.width()}, torch::kFloat);
  float* dst = out.data_ptr<float>();
  const auto& labels = mask.labels();
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= kNumClasses) throw ValidationError("mask label out of range");
    dst[i] = unit[labels[i]];
  }
  return out;
}

torch::Tensor encode_mask(const ConditionMask& mask) { return encode_mask_with_values(mask, kCanonicalPixelValues); }

ConditionMask decode_mask(const torch::Tensor& encoded) {
  auto t = encoded.detach().to(torch::kCPU, torch::kDouble).contiguous();
  if (t.dim() == 4) {
    if (t.size(0) != 1 || t.size(1) != 1) throw ValidationError("decode_mask expects a single-sample single-channel tensor");
    t = t[0][0];
  } else if (t.dim() == 3) {
    if (t.size(0) != 1) throw ValidationError("decode_mask expects a single-channel tensor");
    t = t[0];
  } else if (t.dim() != 2) {
    throw ValidationError("decode_mask expects a 2-D to 4-D tensor");
  }
  t = t.contiguous();
  const Shape2 shape{t.size(0), t.size(1)};
  const double lo = pixel_to_unit(kCanonicalPixelValues[1]);
  const double cut01 = (-1.0 + lo) / 2.0;
  const double cut12 = (lo + 1.0) / 2.0;
  std::vector<uint8_t> labels(static_cast<size_t>(shape.area()));
  const double* src = t.data_ptr<double>();
  for (size_t i = 0; i < labels.size(); ++i) {
    labels[i] = src[i] < cut01 ? 0 : (src[i] < cut12 ? 1 : 2);
  }
  return ConditionMask(shape, std::move(labels));
}

torch::Tensor labels_to_tensor(const std::vector<ConditionMask>& masks) {
  if (masks.empty()) throw ValidationError("labels_to_tensor needs at least one mask");
  const Shape2 shape = masks.front().shape();
  auto out = torch::empty({static_cast<int64_t>(masks.size()), 1, shape.height, shape.width}, torch::kLong);
  int64_t* dst = out.data_ptr<int64_t>();
  for (const auto& m : masks) {
    if (!(m.shape() == shape)) throw ValidationError("labels_to_tensor: masks differ in shape");
    for (uint8_t v : m.labels()) *dst++ = v;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Tensor bridges

torch::Tensor images_to_tensor(const std::vector<Image>& images) {
  if (images.empty()) throw ValidationError("images_to_tensor needs at least one image");
  const Shape2 shape = images.front().shape();
  auto out = torch::empty({static_cast<int64_t>(images.size()), 1, shape.height, shape.width}, torch::kFloat);
  float* dst = out.data_ptr<float>();
  for (const auto& img : images) {
    if (!(img.shape() == shape)) throw ValidationError("images_to_tensor: images differ in shape");
    dst = std::copy(img.data().begin(), img.data().end(), dst);
  }
  return out;
}

torch::Tensor image_to_tensor(const Image& image) { return images_to_tensor({image}); }

Image tensor_to_image(const torch::Tensor& t, int64_t index) {
  if (t.dim() != 4 || t.size(1) != 1) throw ValidationError("tensor_to_image expects a (B,1,H,W) tensor");
  auto slice = t[index][0].detach().to(torch::kCPU, torch::kFloat).contiguous();
  const Shape2 shape{slice.size(0), slice.size(1)};
  const float* src = slice.data_ptr<float>();
  return Image(shape, std::vector<float>(src, src + shape.area()));
}

void validate_image_tensor(const torch::Tensor& t, const char* what) {
  if (!t.defined()) throw ValidationError(std::string(what) + ": undefined tensor");
  if (t.dim() != 4) throw ValidationError(std::string(what) + ": expected a 4-D (B,C,H,W) tensor");
  if (t.size(0) < 1) throw ValidationError(std::string(what) + ": empty batch");
  if (t.size(1) != 1 && t.size(1) != 3) throw ValidationError(std::string(what) + ": channels must be 1 or 3");
  if (!torch::isfinite(t).all().item<bool>()) throw ValidationError(std::string(what) + ": non-finite values");
}

// ---------------------------------------------------------------------------
// Resampling

float sample_bilinear(const Image& img, double x, double y) {
  const int64_t w = img.width();
  const int64_t h = img.height();
  x = std::clamp(x, 0.0, static_cast<double>(w - 1));
  y = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const auto x0 = static_cast<int64_t>(std::floor(x));
  const auto y0 = static_cast<int64_t>(std::floor(y));
  const int64_t x1 = std::min(x0 + 1, w - 1);
  const int64_t y1 = std::min(y0 + 1, h - 1);
  const double fx = x - static_cast<double>(x0);
  const double fy = y - static_cast<double>(y0);
  if (fx == 0.0 && fy == 0.0) return img.at(y0, x0);
  const double top = (1.0 - fx) * img.at(y0, x0) + fx * img.at(y0, x1);
  const double bottom = (1.0 - fx) * img.at(y1, x0) + fx * img.at(y1, x1);
  return static_cast<float>((1.0 - fy) * top + fy * bottom);
}

uint8_t sample_nearest(const ConditionMask& mask, double x, double y) {
  const auto c = std::clamp<int64_t>(static_cast<int64_t>(std::floor(x + 0.5)), 0, mask.width() - 1);
  const auto r = std::clamp<int64_t>(static_cast<int64_t>(std::floor(y + 0.5)), 0, mask.height() - 1);
  return mask.at(r, c);
}

Image resize_image(const Image& img, Shape2 target) {
  if (target.height < 1 || target.width < 1) throw ValidationError("resize target must be at least 1x1");
  if (img.shape() == target) return img;
  const double sy = static_cast<double>(img.height()) / static_cast<double>(target.height);
  const double sx = static_cast<double>(img.width()) / static_cast<double>(target.width);
  Image out(target);
  for (int64_t r = 0; r < target.height; ++r) {
    const double y = (static_cast<double>(r) + 0.5) * sy - 0.5;
    for (int64_t c = 0; c < target.width; ++c) {
      const double x = (static_cast<double>(c) + 0.5) * sx - 0.5;
      out.at(r, c) = sample_bilinear(img, x, y);
    }
  }
  return out;
}

ConditionMask resize_mask(const ConditionMask& mask, Shape2 target) {
  if (target.height < 1 || target.width < 1) throw ValidationError("resize target must be at least 1x1");
  if (mask.shape() == target) return mask;
  const double sy = static_cast<double>(mask.height()) / static_cast<double>(target.height);
  const double sx = static_cast<double>(mask.width()) / static_cast<double>(target.width);
  std::vector<uint8_t> labels(static_cast<size_t>(target.area()));
  for (int64_t r = 0; r < target.height; ++r) {
    const auto sr = std::min<int64_t>(static_cast<int64_t>(std::floor((static_cast<double>(r) + 0.5) * sy)), mask.height() - 1);
    for (int64_t c = 0; c < target.width; ++c) {
      const auto sc = std::min<int64_t>(static_cast<int64_t>(std::floor((static_cast<double>(c) + 0.5) * sx)), mask.width() - 1);
      labels[static_cast<size_t>(r * target.width + c)] = mask.at(sr, sc);
    }
  }
  return ConditionMask(target, std::move(labels));
}

double linear_decay_lr(double lr_init, int64_t start, double frac_per_epoch, int64_t epoch) {
  if (epoch <= start) return lr_init;
  return std::max(0.0, lr_init * (1.0 - frac_per_epoch * static_cast<double>(epoch - start)));
}

uint64_t derive_seed(uint64_t base, uint64_t stream) {
  uint64_t z = base + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace cosingan
