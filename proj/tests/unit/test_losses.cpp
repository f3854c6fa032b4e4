#include <random>

#include "doctest_torch.hpp"

#include "cosingan/eval.hpp"
#include "cosingan/losses.hpp"
#include "loss_scenarios.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace cosingan;
using namespace cosingan::losses;

namespace {

std::vector<double> to_vec(const torch::Tensor& t) {
  auto c = t.to(torch::kDouble).contiguous().flatten();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

}  // namespace

TEST_SUITE("losses") {
  TEST_CASE("wppl hand case") { CHECK(scenarios::wppl_hand_case() == doctest::Approx(0.775).epsilon(1e-9)); }

  TEST_CASE("wppl against loop oracle") {
    torch::manual_seed(11);
    auto labels = torch::randint(0, 3, {3, 1, 9, 7}, torch::kLong);
    auto gen = torch::randn({3, 1, 9, 7}, torch::kDouble);
    auto real = torch::randn({3, 1, 9, 7}, torch::kDouble);
    const CategoryWeightMap w{0.2, 0.7, 1.3};
    auto lv = to_vec(labels);
    std::vector<int> li(lv.begin(), lv.end());
    const double expect = oracle::wppl(li, to_vec(gen), to_vec(real), {0.2, 0.7, 1.3});
    CHECK(loss_wppl(labels, gen, real, w).item<double>() == doctest::Approx(expect).epsilon(1e-12));
    CHECK_THROWS_AS(loss_wppl(labels, gen, real.narrow(3, 0, 6), w), ValidationError);
  }

  TEST_CASE("level count follows the window") {
    CHECK(ms_ssim_levels(10, 5) == 0);
    CHECK(ms_ssim_levels(11, 5) == 1);
    CHECK(ms_ssim_levels(16, 5) == 1);
    CHECK(ms_ssim_levels(32, 5) == 2);
    CHECK(ms_ssim_levels(176, 5) == 5);
    CHECK(ms_ssim_levels(512, 3) == 3);
  }

  TEST_CASE("ms-ssim identity gives zero loss") {
    torch::manual_seed(12);
    auto x = torch::rand({2, 1, 48, 48}) * 2 - 1;
    CHECK(std::abs(loss_ms_ssim(x, x).item<double>()) <= 1e-6);
  }

  TEST_CASE("ms-ssim matches the loop oracle") {
    std::mt19937_64 rng(13);
    for (auto [size, levels] : std::vector<std::pair<int, int>>{{16, 1}, {24, 2}, {48, 3}}) {
      auto x = torch::rand({1, 1, size, size}, torch::kDouble) * 2 - 1;
      auto y = (x + 0.4 * torch::randn({1, 1, size, size}, torch::kDouble)).clamp(-1, 1);
      const double expect = oracle::ms_ssim(to_vec(x), to_vec(y), size, size, levels);
      CHECK(ms_ssim(x, y, levels).item<double>() == doctest::Approx(expect).epsilon(1e-9));
    }
  }

  TEST_CASE("negated checkerboard pushes the loss above one") {
    auto idx = torch::arange(16);
    auto board = ((idx.view({16, 1}) + idx.view({1, 16})) % 2).to(torch::kDouble) * 2 - 1;
    board = board.view({1, 1, 16, 16});
    const double l = loss_ms_ssim(-board, board).item<double>();
    CHECK(l > 1.0);
    CHECK(l <= 2.0 + 1e-9);
  }

  TEST_CASE("feature loss with identity extractor") {
    torch::manual_seed(14);
    auto a = torch::randn({2, 1, 8, 8}, torch::kDouble);
    auto b = torch::randn({2, 1, 8, 8}, torch::kDouble);
    IdentityExtractor id;
    const FeatureLossConfig cfg{{0}, {2.0}, BackboneKind::classifier_features};
    CHECK(loss_feature(a, b, id, cfg, FeatureNorm::l1).item<double>() ==
          doctest::Approx(2.0 * (a - b).abs().mean().item<double>()).epsilon(1e-12));
    CHECK(loss_feature(a, b, id, cfg, FeatureNorm::l2).item<double>() ==
          doctest::Approx(2.0 * (a - b).pow(2).mean().item<double>()).epsilon(1e-12));
  }

  TEST_CASE("feature config validation") {
    CHECK_THROWS_AS(FeatureLossConfig({{0, 1}, {1.0}, BackboneKind::classifier_features}).validate(), ConfigError);
    CHECK_THROWS_AS(LossWeights({-1.0, 1, 1, 1}).validate(), ConfigError);
    CHECK_THROWS_AS(CategoryWeightMap({-0.1, 0.5, 1.0}).validate(), ConfigError);
  }

  TEST_CASE("mixed loss decomposes into its terms") {
    torch::manual_seed(15);
    auto bb = eval::random_feature_backbones(3);
    MixedLossSetup setup;
    setup.vgg = bb.vgg;
    setup.unet = bb.unet;
    auto labels = torch::randint(0, 3, {2, 1, 32, 32}, torch::kLong);
    auto real = torch::rand({2, 1, 32, 32}) * 2 - 1;
    auto gen = (real + 0.2 * torch::randn({2, 1, 32, 32})).clamp(-1, 1);
    const auto m = loss_mixed(labels, gen, real, setup);
    const auto& r = m.report;
    const double recomposed = 10 * r.wppl + 1 * r.ms_ssim + 10 * r.ms_fvl + 10 * r.ms_ful;
    CHECK(m.total.item<double>() == doctest::Approx(recomposed).epsilon(1e-6));
    CHECK(r.mixed == doctest::Approx(recomposed).epsilon(1e-6));
    CHECK(r.wppl == doctest::Approx(loss_wppl(labels, gen, real, {}).item<double>()).epsilon(1e-6));
    CHECK(r.ms_ssim == doctest::Approx(loss_ms_ssim(gen, real).item<double>()).epsilon(1e-6));

    MixedLossSetup missing;
    CHECK_THROWS_AS(loss_mixed(labels, gen, real, missing), ConfigError);
    missing.weights = {10, 1, 0, 0};
    CHECK_NOTHROW(loss_mixed(labels, gen, real, missing));
  }

  TEST_CASE("gradients agree with finite differences") {
    for (const auto& c : scenarios::gradient_checks(40, 21)) {
      INFO(c.name << " worst rel err " << c.result.worst);
      CHECK(c.result.pass_fraction() >= 0.95);
    }
  }

  TEST_CASE("discriminator objective ignores generator gradients") {
    torch::manual_seed(16);
    auto disc = nets::build_discriminator({5, 2, 8});
    auto cond = torch::randn({1, 1, 16, 16});
    auto gen = torch::randn({1, 1, 16, 16}, torch::requires_grad());
    adv_d_objective(disc, cond, gen, torch::randn({1, 1, 16, 16})).backward();
    CHECK_FALSE(gen.grad().defined());
  }

  TEST_CASE("bce against a constant target") {
    auto z = torch::zeros({4}, torch::kDouble);
    CHECK(bce_logits(z, 1.0).item<double>() == doctest::Approx(std::log(2.0)));
  }

  TEST_CASE("csv log rows") {
    testutil::TempDir dir("loss_csv");
    const auto path = dir.path / "logs" / "l.csv";
    {
      LossCsvLog log(path);
      log.append(0, nets::Stage::super, 1, {});
      log.append(0, nets::Stage::restore, 1, {});
    }
    LossCsvLog again(path);
    again.append(1, nets::Stage::super, 1, {});
    CHECK(LossCsvLog::row_count(path) == 3);
    const auto text = testutil::slurp(path);
    CHECK(text.rfind(LossCsvLog::kHeader, 0) == 0);
  }
}
