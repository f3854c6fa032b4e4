#include <cmath>

#include "doctest_torch.hpp"

#include "cosingan/data.hpp"
#include "cosingan/eval.hpp"
#include "test_util.hpp"

using namespace cosingan;
using namespace cosingan::eval;

TEST_SUITE("eval") {
  TEST_CASE("dice coefficient") {
    ConditionMask a({1, 4}, std::vector<uint8_t>{1, 1, 2, 0});
    ConditionMask b({1, 4}, std::vector<uint8_t>{1, 0, 2, 2});
    CHECK(dsc(a, b, 1) == doctest::Approx(2.0 / 3.0));
    CHECK(dsc(a, b, 2) == doctest::Approx(2.0 / 3.0));
    CHECK(dsc(ConditionMask({2, 2}), ConditionMask({2, 2}), 2) == 1.0);
    CHECK(dsc(a, ConditionMask({1, 4}), 2) == 0.0);
    CHECK_THROWS_AS(dsc(a, ConditionMask({2, 2}), 1), ValidationError);
  }

  TEST_CASE("student-t interval") {
    // Five values, mean 0.5, sample sd 0.1 * sqrt(2.5); t(0.975, 4) = 2.7764451051977987.
    const auto r = summarize({"a", "b", "c", "d", "e"}, {0.3, 0.4, 0.5, 0.6, 0.7});
    const double sd = std::sqrt((0.04 + 0.01 + 0 + 0.01 + 0.04) / 4.0);
    const double half = 2.7764451051977987 * sd / std::sqrt(5.0);
    CHECK(r.n == 5);
    CHECK(r.mean == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(r.ci_lo == doctest::Approx(0.5 - half).epsilon(1e-12));
    CHECK(r.ci_hi == doctest::Approx(0.5 + half).epsilon(1e-12));
  }

  TEST_CASE("undefined groups are excluded") {
    const auto r = summarize({"a", "b", "c"}, {1.0, NAN, 0.0});
    CHECK(r.n == 2);
    CHECK(r.excluded == 1);
    CHECK(r.mean == doctest::Approx(0.5));
    // t(0.975, 1) = 12.706204736174698
    CHECK(r.ci_hi == doctest::Approx(0.5 + 12.706204736174698 * std::sqrt(0.5) / std::sqrt(2.0)).epsilon(1e-10));
    const auto one = summarize({"a"}, {0.7});
    CHECK(one.mean == 0.7);
    CHECK(std::isnan(one.ci_lo));
    CHECK_THROWS_AS(summarize({"a"}, {}), ValidationError);
  }

  TEST_CASE("classification metrics per scan") {
    const std::vector<int> preds{1, 1, 0, 1, 0, 0};
    const std::vector<int> labels{1, 1, 0, 0, 0, 0};
    const std::vector<std::string> scans{"s1", "s1", "s1", "s1", "s2", "s2"};
    const auto r = classification_metrics(preds, labels, scans);
    CHECK(r.per_scan.at("s1") == ConfusionCounts{2, 1, 1, 0});
    CHECK(r.per_scan.at("s2") == ConfusionCounts{0, 0, 2, 0});
    CHECK(r.sensitivity.n == 1);
    CHECK(r.sensitivity.mean == 1.0);
    CHECK(r.specificity.mean == doctest::Approx(0.75));
    CHECK(r.accuracy.mean == doctest::Approx((0.75 + 1.0) / 2));
    const auto again = classification_report_from_counts(r.per_scan);
    CHECK(again.accuracy.mean == r.accuracy.mean);
    CHECK_THROWS_AS(classification_metrics({1}, {1, 0}, {"a"}), ValidationError);
  }

  TEST_CASE("segmentation metrics pool pixels per scan") {
    EvalCorpus truth;
    ConditionMask m1({1, 4}, std::vector<uint8_t>{1, 1, 2, 0});
    ConditionMask m2({1, 4}, std::vector<uint8_t>{1, 1, 1, 1});
    truth.add({Image({1, 4}), m1, 0, 0}, "s");
    truth.add({Image({1, 4}), m2, 0, 1}, "s");
    ConditionMask p1({1, 4}, std::vector<uint8_t>{1, 0, 2, 0});
    const auto r = segmentation_metrics({p1, m2}, truth);
    // lung: inter 1 + 4, sums 3 + 8
    CHECK(r.lung.per_group.at(0) == doctest::Approx(10.0 / 11.0));
    CHECK(r.infection.per_group.at(0) == doctest::Approx(1.0));
    CHECK(r.per_modality.at(0).first == doctest::Approx(2.0 / 3.0));
    CHECK(r.per_modality.at(1).first == doctest::Approx(1.0));
  }

  TEST_CASE("averaging repeated probes") {
    EvalCorpus truth;
    ConditionMask m({1, 4}, std::vector<uint8_t>{1, 1, 2, 2});
    truth.add({Image({1, 4}), m, 0, 0}, "s1");
    truth.add({Image({1, 4}), m, 0, 1}, "s2");
    const ConditionMask half({1, 4}, std::vector<uint8_t>{1, 0, 2, 0});
    // Repeat one: s1 exact, s2 half right (infection 2/3). Repeat two: both half right.
    const auto r1 = segmentation_metrics({m, half}, truth);
    const auto r2 = segmentation_metrics({half, half}, truth);
    const auto avg = average_segmentation({r1, r2});
    CHECK(avg.infection.per_group.at(0) == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
    CHECK(avg.infection.per_group.at(1) == doctest::Approx(2.0 / 3.0));
    CHECK(avg.infection.mean == doctest::Approx(((1.0 + 2.0 / 3.0) / 2 + 2.0 / 3.0) / 2));
    CHECK(avg.infection.n == 2);
    CHECK(avg.per_modality.at(0).second == doctest::Approx((1.0 + 2.0 / 3.0) / 2));
    CHECK(avg.per_modality.at(1).second == doctest::Approx(2.0 / 3.0));
    CHECK(average_segmentation({r1}).infection.mean == r1.infection.mean);
    CHECK_THROWS_AS(average_segmentation({}), ValidationError);
  }

  TEST_CASE("weighted cross-entropy against a loop") {
    torch::manual_seed(3);
    auto logits = torch::randn({2, 3, 4, 5}, torch::kDouble);
    auto labels = torch::randint(0, 3, {2, 1, 4, 5}, torch::kLong);
    const std::array<double, 3> w{0.1, 1.0, 5.0};
    auto logp = torch::log_softmax(logits, 1);
    double s = 0.0;
    for (int b = 0; b < 2; ++b)
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 5; ++c) {
          const auto y = labels[b][0][r][c].item<int64_t>();
          s += w[static_cast<size_t>(y)] * -logp[b][y][r][c].item<double>();
        }
    CHECK(weighted_cross_entropy(logits, labels, w).item<double>() == doctest::Approx(s / 40.0).epsilon(1e-12));
    CHECK(weighted_cross_entropy(logits, labels.squeeze(1), w).item<double>() == doctest::Approx(s / 40.0).epsilon(1e-12));
  }

  TEST_CASE("probe network shapes") {
    torch::manual_seed(4);
    for (auto arch : {ProbeArch::light, ProbeArch::heavy}) {
      Segmenter seg(arch);
      CHECK(seg->forward(torch::randn({2, 1, 32, 32})).sizes() == torch::IntArrayRef{2, 3, 32, 32});
      CHECK(seg->forward(torch::randn({2, 1, 24, 24})).sizes() == torch::IntArrayRef{2, 3, 24, 24});
      Classifier cls(arch);
      CHECK(cls->forward(torch::randn({3, 3, 32, 32})).sizes() == torch::IntArrayRef{3});
    }
    VggBackbone vgg;
    CHECK(vgg->stage_features(torch::randn({1, 3, 32, 32})).size() == 5);
    Segmenter heavy(ProbeArch::heavy);
    CHECK(heavy->encoder_levels() == 5);
    CHECK(parse_arch("heavy") == ProbeArch::heavy);
    CHECK_THROWS_AS(parse_arch("medium"), ConfigError);
  }

  TEST_CASE("corpora must not share scans") {
    EvalCorpus a;
    EvalCorpus b;
    a.add({Image({4, 4}), ConditionMask({4, 4}), 0, 0}, "x");
    b.add({Image({4, 4}), ConditionMask({4, 4}), 0, 0}, "y");
    CHECK_NOTHROW(check_disjoint(a, b));
    b.add({Image({4, 4}), ConditionMask({4, 4}), 0, 0}, "x");
    CHECK_THROWS_AS(check_disjoint(a, b), ValidationError);
  }

  TEST_CASE("segmenter training lowers its loss") {
    const auto corpus = data::make_phantom_corpus(data::PhantomSpec{}, 16, 5);
    ProbeTrainConfig cfg;
    cfg.epochs = 6;
    cfg.lr = 2e-3;
    cfg.decay_start = 6;
    cfg.seed = 1;
    const auto t = train_segmenter(corpus, ProbeArch::light, cfg);
    REQUIRE(t.epoch_losses.size() == 6);
    CHECK(t.epoch_losses.back() < t.epoch_losses.front());
    auto net = t.net;
    std::vector<Image> images;
    for (const auto& s : corpus.samples) images.push_back(s.image);
    CHECK(segment(net, images).size() == 16);
  }

  TEST_CASE("classifier training runs") {
    const auto corpus = data::make_phantom_corpus(data::PhantomSpec{}, 16, 6);
    ProbeTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 8;
    const auto t = train_classifier(corpus, ProbeArch::light, cfg);
    auto net = t.net;
    std::vector<Image> images;
    for (const auto& s : corpus.samples) images.push_back(s.image);
    const auto preds = classify(net, images);
    CHECK(preds.size() == 16);
    for (int p : preds) CHECK((p == 0 || p == 1));
  }

  TEST_CASE("quality score and table") {
    const auto corpus = data::make_phantom_corpus(data::PhantomSpec{}, 8, 7);
    torch::manual_seed(1);
    Segmenter seg(ProbeArch::light);
    const auto q = image_quality_score(corpus, seg);
    CHECK(q.per_modality.size() == 2);
    CHECK(q.lung >= 0.0);
    CHECK(q.lung <= 1.0);
    const auto table = format_quality_table(q);
    CHECK(table.find("Overall") != std::string::npos);
  }

  TEST_CASE("feature backbones persist") {
    testutil::TempDir dir("eval_bb");
    auto bb = random_feature_backbones(2);
    save_feature_backbones(dir.path / "bb.bin", bb);
    auto back = load_feature_backbones(dir.path / "bb.bin");
    auto x = torch::randn({1, 3, 32, 32});
    const auto fa = bb.vgg->features(x, {0, 4});
    const auto fb = back.vgg->features(x, {0, 4});
    CHECK(torch::equal(fa[1], fb[1]));
    for (const auto& p : back.unet->net()->parameters()) CHECK_FALSE(p.requires_grad());
    CHECK_THROWS(load_feature_backbones(dir.path / "none.bin"));
  }
}
