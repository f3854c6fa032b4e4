#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>

#include "cosingan/core.hpp"

namespace testutil {

/// Scratch directory removed on scope exit.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("cosingan_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Random three-class mask: lung blobs with infection patches inside.
inline cosingan::ConditionMask random_mask(cosingan::Shape2 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  cosingan::ConditionMask m(s);
  const double cx = s.width * (0.3 + 0.4 * u(rng));
  const double cy = s.height * (0.3 + 0.4 * u(rng));
  const double rx = s.width * (0.15 + 0.2 * u(rng));
  const double ry = s.height * (0.15 + 0.2 * u(rng));
  const double ix = cx + rx * (u(rng) - 0.5);
  const double iy = cy + ry * (u(rng) - 0.5);
  const double ir = std::min(rx, ry) * 0.4 * u(rng);
  for (int64_t r = 0; r < s.height; ++r) {
    for (int64_t c = 0; c < s.width; ++c) {
      const double dx = (c + 0.5 - cx) / rx;
      const double dy = (r + 0.5 - cy) / ry;
      if (dx * dx + dy * dy > 1.0) continue;
      const double ex = c + 0.5 - ix;
      const double ey = r + 0.5 - iy;
      m.set(r, c, ex * ex + ey * ey < ir * ir ? 2 : 1);
    }
  }
  return m;
}

inline cosingan::Image random_image(cosingan::Shape2 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  cosingan::Image img(s);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

}  // namespace testutil
