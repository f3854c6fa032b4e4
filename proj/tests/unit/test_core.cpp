#include <cmath>
#include <random>

#include "doctest_torch.hpp"

#include "cosingan/core.hpp"

using namespace cosingan;

namespace {

// Reference bilinear sampler with half-pixel centres, written from scratch.
double ref_bilinear(const Image& img, double x, double y) {
  auto clampi = [](int64_t v, int64_t hi) { return std::max<int64_t>(0, std::min(v, hi)); };
  const double fx = x - 0.5;
  const double fy = y - 0.5;
  const auto x0 = static_cast<int64_t>(std::floor(fx));
  const auto y0 = static_cast<int64_t>(std::floor(fy));
  const double ax = fx - static_cast<double>(x0);
  const double ay = fy - static_cast<double>(y0);
  auto px = [&](int64_t r, int64_t c) {
    return static_cast<double>(img.at(clampi(r, img.height() - 1), clampi(c, img.width() - 1)));
  };
  return (1 - ay) * ((1 - ax) * px(y0, x0) + ax * px(y0, x0 + 1)) + ay * ((1 - ax) * px(y0 + 1, x0) + ax * px(y0 + 1, x0 + 1));
}

Image random_image(Shape2 s, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-1.0F, 1.0F);
  Image img(s);
  for (auto& v : img.data()) v = u(rng);
  return img;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("paper schedule depths") {
    const auto s = build_scale_schedule(512, 9, ScheduleProfile::paper);
    const std::vector<int64_t> sizes{32, 48, 64, 96, 128, 192, 256, 384, 512};
    REQUIRE(s.size() == 9);
    for (size_t i = 0; i < 9; ++i) CHECK(s.scales[i] == Shape2{sizes[i], sizes[i]});
    CHECK(s.gen_depths == std::vector<int>{4, 4, 5, 5, 6, 6, 7, 7, 8});
    CHECK(s.disc_depths == std::vector<int>{6, 6, 7, 7, 8, 8, 9, 9, 10});
    for (size_t i = 0; i < 9; ++i) CHECK((s.scales[i].height >> s.gen_depths[i]) >= 2);
  }

  TEST_CASE("desk schedule") {
    const auto s = build_scale_schedule(32, 3, ScheduleProfile::desk);
    REQUIRE(s.size() == 3);
    CHECK(s.scales[0].height == 16);
    CHECK(s.scales[1].height == 24);
    CHECK(s.scales[2].height == 32);
    CHECK(s.gen_depths == std::vector<int>{3, 3, 4});
    CHECK(s.sa_intensity.front() == doctest::Approx(1.0));
    CHECK(s.sa_intensity.back() == doctest::Approx(0.25));
    for (size_t i = 1; i < s.size(); ++i) CHECK(s.sa_intensity[i] < s.sa_intensity[i - 1]);
  }

  TEST_CASE("schedule rejects bad input") {
    CHECK_THROWS_AS(build_scale_schedule(512, 1, ScheduleProfile::paper), ConfigError);
    CHECK_THROWS_AS(build_scale_schedule(8, 3, ScheduleProfile::desk), ConfigError);
    CHECK_THROWS_AS(build_scale_schedule(100, 9, ScheduleProfile::paper), ConfigError);
    CHECK_THROWS_AS(parse_profile("huge"), ConfigError);
  }

  TEST_CASE("mask encode and decode") {
    ConditionMask m({2, 3}, std::vector<uint8_t>{0, 1, 2, 2, 1, 0});
    auto t = encode_mask(m);
    CHECK(t.sizes() == torch::IntArrayRef{1, 1, 2, 3});
    CHECK(t[0][0][0][0].item<float>() == doctest::Approx(-1.0));
    CHECK(t[0][0][0][1].item<float>() == doctest::Approx(128.0 / 255.0 * 2.0 - 1.0));
    CHECK(t[0][0][0][2].item<float>() == doctest::Approx(1.0));
    CHECK(decode_mask(t) == m);
    CHECK(decode_mask(t.squeeze(0)) == m);
    CHECK_THROWS_AS(ConditionMask({1, 2}, std::vector<uint8_t>{0, 3}), ValidationError);
  }

  TEST_CASE("label bookkeeping") {
    ConditionMask m({2, 2}, std::vector<uint8_t>{0, 2, 2, 2});
    CHECK(m.count(2) == 3);
    CHECK(m.label_set() == std::vector<uint8_t>{0, 2});
    CHECK_FALSE(m.contains(1));
  }

  TEST_CASE("sample pair validation") {
    SamplePair p{Image({4, 4}, 0.5F), ConditionMask({4, 4}, 1)};
    CHECK_NOTHROW(p.validate());
    p.image.at(0, 0) = 1.5F;
    CHECK_THROWS_AS(p.validate(), ValidationError);
    SamplePair q{Image({4, 4}), ConditionMask({4, 5})};
    CHECK_THROWS_AS(q.validate(), ValidationError);
  }

  TEST_CASE("bilinear resize matches reference and torch") {
    const auto img = random_image({7, 9}, 3);
    const Shape2 target{12, 5};
    const auto out = resize_image(img, target);
    const auto torch_out = torch::nn::functional::interpolate(
        image_to_tensor(img),
        torch::nn::functional::InterpolateFuncOptions().size(std::vector<int64_t>{12, 5}).mode(torch::kBilinear).align_corners(false));
    for (int64_t r = 0; r < target.height; ++r) {
      for (int64_t c = 0; c < target.width; ++c) {
        const double x = (c + 0.5) * 9.0 / 5.0;
        const double y = (r + 0.5) * 7.0 / 12.0;
        CHECK(out.at(r, c) == doctest::Approx(ref_bilinear(img, x, y)).epsilon(1e-5));
        CHECK(out.at(r, c) == doctest::Approx(torch_out[0][0][r][c].item<float>()).epsilon(1e-5));
      }
    }
  }

  TEST_CASE("nearest resize keeps label set") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 50; ++trial) {
      ConditionMask m({13, 11});
      for (int64_t r = 0; r < 13; ++r)
        for (int64_t c = 0; c < 11; ++c) m.set(r, c, static_cast<uint8_t>(rng() % 2));
      const auto out = resize_mask(m, {20, 17});
      for (auto l : out.label_set()) CHECK(m.contains(l));
    }
  }

  TEST_CASE("tensor bridges round trip") {
    const auto a = random_image({5, 6}, 1);
    const auto b = random_image({5, 6}, 2);
    auto t = images_to_tensor({a, b});
    CHECK(t.sizes() == torch::IntArrayRef{2, 1, 5, 6});
    CHECK(tensor_to_image(t, 1) == b);
    CHECK_THROWS_AS(validate_image_tensor(torch::zeros({1, 2, 4, 4}), "x"), ValidationError);
    CHECK_THROWS_AS(validate_image_tensor(torch::full({1, 1, 2, 2}, NAN), "x"), ValidationError);
  }

  TEST_CASE("linear decay") {
    CHECK(linear_decay_lr(2e-4, 2000, 0.0005, 2000) == 2e-4);
    CHECK(linear_decay_lr(2e-4, 2000, 0.0005, 2001) == doctest::Approx(2e-4 * (1 - 0.0005)).epsilon(1e-12));
    CHECK(linear_decay_lr(2e-4, 2000, 0.0005, 4000) == doctest::Approx(0.0));
    CHECK(linear_decay_lr(2e-4, 2000, 0.0005, 9000) == 0.0);
    CHECK(linear_decay_lr(1e-4, 1000, 0.001, 1500) == doctest::Approx(5e-5).epsilon(1e-12));
  }

  TEST_CASE("derived seeds") {
    CHECK(derive_seed(1, 2) == derive_seed(1, 2));
    CHECK(derive_seed(1, 2) != derive_seed(1, 3));
    CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  }
}
