#pragma once

#include <cmath>
#include <random>
#include <string>

#include "augment_props.hpp"
#include "cosingan/synth.hpp"
#include "test_util.hpp"

namespace props {

/// Every class present in a random mask gets exactly one integer 8-bit value
/// inside its noise range.
inline Outcome rc_ranges(int masks, const cosingan::synth::RcDeltas& d, uint64_t seed) {
  using namespace cosingan;
  Outcome out;
  std::mt19937_64 rng(seed);
  const std::array<std::pair<int, int>, 3> range{{{0, d.background}, {128 - d.lung, 128 + d.lung}, {255 - d.infection, 255}}};
  for (int k = 0; k < masks; ++k) {
    const Shape2 s{8 + static_cast<int64_t>(rng() % 25), 8 + static_cast<int64_t>(rng() % 25)};
    const auto m = testutil::random_mask(s, rng);
    const auto t = synth::randomize_condition(m, d, rng).contiguous();
    const float* v = t.data_ptr<float>();
    std::array<double, 3> seen{NAN, NAN, NAN};
    for (int64_t i = 0; i < s.area(); ++i) {
      const auto cls = static_cast<size_t>(m.labels()[static_cast<size_t>(i)]);
      const double px = (static_cast<double>(v[i]) + 1.0) / 2.0 * 255.0;
      if (std::isnan(seen[cls])) seen[cls] = px;
      if (std::abs(px - seen[cls]) > 1e-4) out.fail("class " + std::to_string(cls) + " has more than one value in mask " + std::to_string(k));
      if (std::abs(px - std::round(px)) > 1e-3) out.fail("non-integer pixel value in mask " + std::to_string(k));
      if (px < range[cls].first - 1e-3 || px > range[cls].second + 1e-3) {
        out.fail("class " + std::to_string(cls) + " value " + std::to_string(px) + " outside its range in mask " + std::to_string(k));
      }
    }
  }
  return out;
}

/// Fusion endpoints are exact copies and the interior is the convex blend.
inline Outcome fuse_exactness(int trials, uint64_t seed) {
  using namespace cosingan;
  Outcome out;
  torch::manual_seed(seed);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int k = 0; k < trials; ++k) {
    const auto a = torch::rand({1, 1, 16, 16}) * 2 - 1;
    const auto b = torch::rand({1, 1, 16, 16}) * 2 - 1;
    if (!torch::equal(synth::fuse(a, b, 1.0), a)) out.fail("fuse(a, b, 1) != a");
    if (!torch::equal(synth::fuse(a, b, 0.0), b)) out.fail("fuse(a, b, 0) != b");
    const double z = u(rng);
    const double err = ((synth::fuse(a, b, z) - b) - z * (a - b)).abs().max().item<double>();
    if (err > 1e-6) out.fail("interior blend error " + std::to_string(err));
  }
  return out;
}

}  // namespace props
