#include "doctest_torch.hpp"

#include "cosingan/experiment.hpp"
#include "test_util.hpp"

using namespace cosingan;
using namespace cosingan::experiment;

namespace {

RunConfig tiny_run() {
  auto cfg = desk_run_config(3);
  cfg.train_samples = 8;
  cfg.test_samples = 8;
  cfg.train = trainer::desk_config(1);
  cfg.train.gen_base_width = 8;
  cfg.train.disc_base_width = 8;
  cfg.train.super_cfg.batch_size = 2;
  cfg.train.restore_cfg.batch_size = 2;
  for (auto* p : {&cfg.backbones.classifier, &cfg.backbones.segmenter, &cfg.seg_light, &cfg.seg_heavy, &cfg.cls_light,
                  &cfg.cls_heavy}) {
    p->epochs = 1;
  }
  return cfg;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("run config json and validation") {
    testutil::TempDir dir("exp_cfg");
    const auto cfg = desk_run_config(9);
    save_run_config(dir.path / "c.json", cfg);
    CHECK(load_run_config(dir.path / "c.json") == cfg);
    auto bad = cfg;
    bad.phantom.size = 24;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.seg_repeats = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    CHECK(cfg.seg_repeats == 3);
    CHECK_THROWS_AS(load_run_config(dir.path / "none.json"), StateError);
  }

  TEST_CASE("training-sample choice prefers large infections") {
    eval::EvalCorpus c;
    ConditionMask small({4, 4}, 1);
    small.set(0, 0, 2);
    ConditionMask big({4, 4}, 2);
    c.add({Image({4, 4}), small, 0, 0}, "a");
    c.add({Image({4, 4}), big, 0, 1}, "b");
    c.add({Image({4, 4}), big, 0, 0}, "c");
    CHECK(pick_training_sample(c, 0) == 2);
    CHECK(pick_training_sample(c, 1) == 1);
  }

  TEST_CASE("tiny end-to-end matrix") {
    testutil::TempDir dir("exp_run");
    const auto cfg = tiny_run();
    const auto report = run_experiment(cfg, {dir.path, false});
    CHECK(report.rows.size() == kTrainingSets.size() * 4);
    for (const auto& name : kTrainingSets) {
      CHECK(report.corpus_sizes.at(name) == 8);
      for (auto arch : {eval::ProbeArch::light, eval::ProbeArch::heavy}) {
        const auto& seg = report.row(name, "segmentation", arch);
        CHECK(seg.headline >= 0.0);
        CHECK(seg.headline <= 1.0);
        CHECK(std::filesystem::exists(dir.path / "results" / (name + "_segmentation_" + eval::to_string(arch) + ".json")));
        CHECK_NOTHROW(report.row(name, "classification", arch));
      }
    }
    CHECK(report.quality.size() == 3);
    for (const auto* f : {"report.json", "report.txt", "config.json", "oracle.pt", "backbones.bin"}) {
      CHECK(std::filesystem::exists(dir.path / f));
    }
    const auto text = report.to_text();
    CHECK(text.find("IF-STs") != std::string::npos);

    const auto again = run_experiment(cfg, {dir.path, true});
    REQUIRE(again.rows.size() == report.rows.size());
    for (size_t k = 0; k < report.rows.size(); ++k) CHECK(again.rows[k].headline == report.rows[k].headline);
  }
}
