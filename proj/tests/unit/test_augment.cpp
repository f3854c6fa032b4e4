#include "doctest_torch.hpp"

#include "augment_props.hpp"
#include "cosingan/augment.hpp"
#include "test_util.hpp"

using namespace cosingan;
using namespace cosingan::augment;

TEST_SUITE("augment") {
  TEST_CASE("identity draw is exact") {
    std::mt19937_64 rng(1);
    const Shape2 s{20, 28};
    const auto img = testutil::random_image(s, rng);
    const auto m = testutil::random_mask(s, rng);
    const auto [a, b] = apply_draw(AugmentDraw::identity(s), img, m);
    CHECK(a == img);
    CHECK(b == m);
  }

  TEST_CASE("draws replay from their seed") {
    const auto a = sample_draw(strong_policy(), {32, 32}, 77);
    const auto b = sample_draw(strong_policy(), {32, 32}, 77);
    CHECK(a.crop.x0 == b.crop.x0);
    CHECK(a.rotation_deg == b.rotation_deg);
    CHECK(a.elastic_field == b.elastic_field);
    const auto c = sample_draw(strong_policy(), {32, 32}, 78);
    CHECK(a.elastic_field != c.elastic_field);
  }

  TEST_CASE("elastic amplitude is the configured maximum displacement") {
    auto p = strong_policy();
    const auto d = sample_draw(p, {40, 32}, 5);
    CHECK(d.max_displacement() == doctest::Approx(p.elastic_alpha_frac * 32).epsilon(1e-5));
    CHECK(sample_draw(p.at_intensity(0.5), {40, 32}, 5).max_displacement() ==
          doctest::Approx(0.5 * p.elastic_alpha_frac * 32).epsilon(1e-5));
  }

  TEST_CASE("mask labels are preserved") {
    const auto r = props::label_preservation(100, 2);
    INFO(r.detail);
    CHECK(r.ok);
  }

  TEST_CASE("image and mask stay aligned") {
    int64_t n = 0;
    const auto r = props::geometric_consistency(40, 3, &n);
    INFO(r.detail);
    CHECK(r.ok);
    CHECK(n > 1000);
  }

  TEST_CASE("weak augmentation is never elastic") {
    const auto r = props::weak_never_elastic(100, 4);
    INFO(r.detail);
    CHECK(r.ok);
  }

  TEST_CASE("strong augmentation weakens with scale") {
    const auto r = props::strong_intensity_monotone(build_scale_schedule(32, 3, ScheduleProfile::desk), 50, 5);
    INFO(r.detail);
    CHECK(r.ok);
  }

  TEST_CASE("stage policies") {
    const auto sched = build_scale_schedule(32, 3, ScheduleProfile::desk);
    CHECK(policy_for(strong_policy(), weak_policy(), sched, 2, nets::Stage::restore) == weak_policy());
    CHECK(policy_for(strong_policy(), weak_policy(), sched, 2, nets::Stage::super).intensity == doctest::Approx(0.25));
    CHECK(weak_policy().at_intensity(0.1).intensity == 1.0);
  }

  TEST_CASE("misaligned or tiny inputs are rejected") {
    const auto d = sample_draw(strong_policy(), {16, 16}, 1);
    CHECK_THROWS_AS(apply_draw(d, Image({16, 16}), ConditionMask({16, 17})), ValidationError);
    CHECK_THROWS_AS(apply_draw(d, Image({20, 20})), ValidationError);
    CHECK_THROWS_AS(sample_draw(strong_policy(), {4, 4}, 1), ValidationError);
  }

  TEST_CASE("policy json round trip") {
    auto p = strong_policy().at_intensity(0.4);
    nlohmann::json j = p;
    CHECK(j.get<AugmentPolicy>() == p);
    j["kind"] = "XA";
    CHECK_THROWS_AS(j.get<AugmentPolicy>(), ConfigError);
  }

  TEST_CASE("cascade needs trained coarser scales") {
    nets::GeneratorStack stack;
    stack.schedule = build_scale_schedule(32, 3, ScheduleProfile::desk);
    CHECK_THROWS_AS(cascade_input(stack, {ConditionMask({32, 32})}, 1), StateError);
    const auto in = cascade_input(stack, {ConditionMask({32, 32}, 1), ConditionMask({32, 32})}, 0);
    CHECK_FALSE(in.prev_output.has_value());
    CHECK(in.cond.sizes() == torch::IntArrayRef{2, 1, 16, 16});
  }
}
