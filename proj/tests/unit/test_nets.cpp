#include "doctest_torch.hpp"

#include "cosingan/nets.hpp"
#include "test_util.hpp"

using namespace cosingan;
using namespace cosingan::nets;

namespace {

GeneratorStack tiny_stack(int base_width, CombineMode mode) {
  GeneratorStack stack;
  stack.schedule = build_scale_schedule(32, 3, ScheduleProfile::desk);
  stack.mode = mode;
  for (size_t i = 0; i < stack.schedule.size(); ++i) {
    TwoStageGenerator level;
    level.scale_index = static_cast<int>(i);
    level.mode = mode;
    GeneratorSpec spec{stack.schedule.gen_depths[i], stage1_in_channels(static_cast<int>(i), mode), base_width, 0.5};
    level.g_super = build_generator(spec);
    level.g_restore = build_generator(spec);
    stack.levels.push_back(level);
  }
  return stack;
}

}  // namespace

TEST_SUITE("nets") {
  TEST_CASE("generator preserves spatial shape") {
    torch::manual_seed(0);
    for (int depth : {3, 4, 5}) {
      auto g = build_generator({depth, 2, 8, 0.5});
      auto out = g->forward(torch::randn({2, 2, 32, 48}));
      CHECK(out.sizes() == torch::IntArrayRef{2, 1, 32, 48});
      CHECK(out.abs().max().item<float>() <= 1.0F);
    }
  }

  TEST_CASE("spec validation") {
    CHECK_THROWS_AS(GeneratorSpec({2, 1, 8, 0.5}).validate(), ConfigError);
    CHECK_THROWS_AS(GeneratorSpec({4, 1, 8, 1.5}).validate(), ConfigError);
    CHECK_THROWS_AS(DiscriminatorSpec({2, 2, 8}).validate(), ConfigError);
  }

  TEST_CASE("discriminator logit map") {
    torch::manual_seed(0);
    auto d = build_discriminator({6, 2, 8});
    auto out = d->score(torch::randn({3, 1, 32, 32}), torch::randn({3, 1, 32, 32}));
    CHECK(out.size(0) == 3);
    CHECK(out.size(1) == 1);
    CHECK(out.size(2) >= 2);
  }

  TEST_CASE("inference dropout switch") {
    torch::manual_seed(0);
    auto g = build_generator({4, 1, 8, 0.5});
    g->eval();
    auto x = torch::randn({1, 1, 32, 32});
    torch::NoGradGuard ng;
    CHECK(torch::equal(g->forward(x), g->forward(x)));
    g->set_inference_dropout(true);
    CHECK_FALSE(torch::equal(g->forward(x), g->forward(x)));
  }

  TEST_CASE("stage-1 input channels") {
    CHECK(stage1_in_channels(0, CombineMode::concat) == 1);
    CHECK(stage1_in_channels(2, CombineMode::concat) == 2);
    CHECK(stage1_in_channels(2, CombineMode::add) == 1);
  }

  TEST_CASE("stage-2 replicates its input") {
    torch::manual_seed(1);
    auto g = build_generator({3, 2, 8, 0.0});
    g->eval();
    auto o = torch::randn({1, 1, 16, 16});
    torch::NoGradGuard ng;
    CHECK(torch::allclose(stage2_forward(g, o), g->forward(torch::cat({o, o}, 1))));
  }

  TEST_CASE("two-stage forward across the cascade") {
    torch::manual_seed(2);
    for (auto mode : {CombineMode::concat, CombineMode::add}) {
      auto stack = tiny_stack(8, mode);
      stack.freeze();
      torch::NoGradGuard ng;
      std::optional<torch::Tensor> prev;
      for (size_t i = 0; i < stack.schedule.size(); ++i) {
        const auto s = stack.schedule.scales[i];
        auto out = two_stage_forward(stack.levels[i], prev, torch::zeros({1, 1, s.height, s.width}));
        CHECK(out.sizes() == torch::IntArrayRef{1, 1, s.height, s.width});
        prev = out;
      }
      CHECK_THROWS_AS(two_stage_forward(stack.levels[1], std::nullopt, torch::zeros({1, 1, 24, 24})), ValidationError);
    }
  }

  TEST_CASE("untrained level refuses to run") {
    TwoStageGenerator level;
    level.g_super = build_generator({3, 1, 8, 0.5});
    CHECK_THROWS_AS(two_stage_forward(level, std::nullopt, torch::zeros({1, 1, 16, 16})), StateError);
  }

  TEST_CASE("clone is independent and identical") {
    torch::manual_seed(3);
    auto g = build_generator({3, 1, 8, 0.5});
    auto c = clone_generator(g);
    auto pa = g->parameters();
    auto pb = c->parameters();
    REQUIRE(pa.size() == pb.size());
    for (size_t k = 0; k < pa.size(); ++k) CHECK(torch::equal(pa[k], pb[k]));
    {
      torch::NoGradGuard ng;
      pb[0].add_(1.0);
    }
    CHECK_FALSE(torch::equal(pa[0], pb[0]));
  }

  TEST_CASE("weight transfer copies the channel overlap") {
    torch::manual_seed(4);
    auto from = build_generator({3, 1, 8, 0.5});
    auto to = build_generator({3, 2, 8, 0.5});
    CHECK(transfer_weights(from, to) == static_cast<int>(from->parameters().size()));
    auto src = from->named_parameters();
    for (auto& p : to->named_parameters()) {
      const auto& s = src[p.key()];
      if (s.sizes() == p.value().sizes()) {
        CHECK(torch::equal(s, p.value()));
      } else {
        CHECK(torch::equal(s, p.value().narrow(1, 0, s.size(1))));
      }
    }
  }

  TEST_CASE("checkpoint round trip") {
    testutil::TempDir dir("nets_ckpt");
    torch::manual_seed(5);
    auto g = build_generator({4, 2, 8, 0.25});
    CheckpointManifest m{2, Stage::restore, g->spec(), CombineMode::concat, 17};
    const auto path = checkpoint_path(dir.path, 2, Stage::restore);
    save_generator_checkpoint(path, g, m);
    auto [h, mm] = load_generator_checkpoint(path);
    CHECK(mm.scale_index == 2);
    CHECK(mm.stage == Stage::restore);
    CHECK(mm.epoch == 17);
    CHECK(h->spec() == g->spec());
    auto pa = g->parameters();
    auto pb = h->parameters();
    for (size_t k = 0; k < pa.size(); ++k) CHECK(torch::equal(pa[k], pb[k]));
    CHECK_THROWS(load_generator_checkpoint(dir.path / "missing.bin"));
  }

  TEST_CASE("stack save and load") {
    testutil::TempDir dir("nets_stack");
    auto stack = tiny_stack(8, CombineMode::concat);
    save_schedule(dir.path, stack.schedule, stack.mode);
    for (int i = 0; i < 2; ++i) {
      for (auto st : {Stage::super, Stage::restore}) {
        auto& g = st == Stage::super ? stack.levels[static_cast<size_t>(i)].g_super : stack.levels[static_cast<size_t>(i)].g_restore;
        save_generator_checkpoint(checkpoint_path(dir.path, i, st), g, {i, st, g->spec(), stack.mode, 1});
      }
    }
    auto back = load_stack(dir.path);
    CHECK(back.schedule == stack.schedule);
    CHECK(back.trained_prefix() == 2);
    CHECK_FALSE(back.complete());
    CHECK_THROWS_AS(load_stack(dir.path / "nowhere"), StateError);
  }
}
