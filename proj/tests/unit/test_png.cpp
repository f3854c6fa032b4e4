#include <filesystem>
#include <fstream>
#include <random>

#include "doctest_torch.hpp"

#include "cosingan/png_io.hpp"
#include "test_util.hpp"

using namespace cosingan;

TEST_SUITE("png") {
  TEST_CASE("gray pixels round trip exactly") {
    testutil::TempDir dir("png_gray");
    io::GrayPixels px{{3, 5}, {}};
    for (int k = 0; k < 15; ++k) px.pixels.push_back(static_cast<uint8_t>(k * 17));
    io::write_gray_png(dir.path / "a.png", px);
    const auto back = io::read_gray_png(dir.path / "a.png");
    CHECK(back.shape == px.shape);
    CHECK(back.pixels == px.pixels);
  }

  TEST_CASE("image quantization error is at most half a step") {
    testutil::TempDir dir("png_img");
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<float> u(-1.0F, 1.0F);
    Image img({8, 6});
    for (auto& v : img.data()) v = u(rng);
    io::save_image_png(dir.path / "i.png", img);
    const auto back = io::load_image_png(dir.path / "i.png");
    REQUIRE(back.shape() == img.shape());
    for (size_t i = 0; i < img.data().size(); ++i) CHECK(std::abs(back.data()[i] - img.data()[i]) <= 1.0F / 255.0F + 1e-6F);
  }

  TEST_CASE("mask round trip uses canonical values") {
    testutil::TempDir dir("png_mask");
    ConditionMask m({2, 3}, std::vector<uint8_t>{0, 1, 2, 2, 0, 1});
    io::save_mask_png(dir.path / "m.png", m);
    CHECK(io::load_mask_png(dir.path / "m.png") == m);
    CHECK(io::read_gray_png(dir.path / "m.png").pixels == std::vector<uint8_t>{0, 128, 255, 255, 0, 128});
  }

  TEST_CASE("unreadable files fail cleanly") {
    testutil::TempDir dir("png_bad");
    CHECK_THROWS_AS(io::read_gray_png(dir.path / "missing.png"), ValidationError);
    std::ofstream(dir.path / "junk.png") << "not a png";
    CHECK_THROWS_AS(io::read_gray_png(dir.path / "junk.png"), ValidationError);
  }

  TEST_CASE("tile grid layout") {
    std::vector<Image> tiles{Image({4, 4}, 0.5F), Image({4, 4}, -0.5F), Image({4, 4}, 0.0F)};
    const auto g = io::tile_grid(tiles, 2);
    CHECK(g.shape() == Shape2{9, 9});
    CHECK(g.at(0, 0) == 0.5F);
    CHECK(g.at(0, 4) == -1.0F);
    CHECK(g.at(0, 5) == -0.5F);
    CHECK(g.at(5, 0) == 0.0F);
  }
}
