#include "doctest_torch.hpp"

#include "cosingan/data.hpp"
#include "cosingan/png_io.hpp"
#include "test_util.hpp"

using namespace cosingan;
using namespace cosingan::data;

namespace {

Volume toy_volume(int64_t depth, int64_t h, int64_t w) {
  Volume v;
  v.shape = {depth, h, w};
  v.scan_id = "vol";
  v.modality_tag = 1;
  v.window = std::array<double, 2>{-1000.0, 400.0};
  for (int64_t d = 0; d < depth; ++d) {
    for (int64_t r = 0; r < h; ++r) {
      for (int64_t c = 0; c < w; ++c) {
        v.image.push_back(static_cast<float>(-1200.0 + 1800.0 * static_cast<double>(c) / static_cast<double>(w - 1)));
        uint8_t l = 0;
        if (r > h / 4 && r < 3 * h / 4) l = c < w / 2 ? 1 : 2;
        if (l != 0 && r == h / 2 && c % 7 == 3) l = 3;
        v.labels.push_back(l);
      }
    }
  }
  return v;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("phantoms are reproducible and in range") {
    const PhantomSpec spec;
    const auto a = make_phantom(spec, 0, 5);
    const auto b = make_phantom(spec, 0, 5);
    CHECK(a.image == b.image);
    CHECK(a.mask == b.mask);
    CHECK_NOTHROW(a.validate());
    CHECK(a.mask.contains(1));
    CHECK_FALSE(make_phantom(spec, 0, 6).image == a.image);
    CHECK_THROWS_AS(make_phantom(spec, 2, 5), ValidationError);
  }

  TEST_CASE("infection stays inside the lungs") {
    PhantomSpec always;
    always.infection_prob = 1.0;
    PhantomSpec never = always;
    never.infection_prob = 0.0;
    int infected = 0;
    for (uint64_t s = 0; s < 50; ++s) {
      const auto with = make_phantom(always, static_cast<int>(s % 2), s).mask;
      const auto without = make_phantom(never, static_cast<int>(s % 2), s).mask;
      CHECK_FALSE(without.contains(2));
      infected += with.contains(2) ? 1 : 0;
      // The lungs are drawn before any blob, so both share one lung field.
      for (size_t i = 0; i < with.labels().size(); ++i) CHECK((with.labels()[i] != 0) == (without.labels()[i] != 0));
    }
    CHECK(infected > 40);
  }

  TEST_CASE("modalities differ in intensity statistics") {
    const PhantomSpec spec;
    std::vector<Image> a;
    std::vector<Image> b;
    for (uint64_t s = 0; s < 8; ++s) {
      a.push_back(make_phantom(spec, 0, s).image);
      b.push_back(make_phantom(spec, 1, s).image);
    }
    CHECK(histogram_distance(a, b) > 0.2);
    CHECK(histogram_distance(a, a) == 0.0);
  }

  TEST_CASE("phantom corpus grouping") {
    PhantomSpec spec;
    spec.slices_per_scan = 3;
    const auto c = make_phantom_corpus(spec, 7, 1, "t");
    CHECK(c.size() == 7);
    CHECK(c.scan_ids[0] == "t0");
    CHECK(c.scan_ids[3] == "t1");
    CHECK(c.samples[3].modality_tag == 1);
    CHECK(c.unique_scans().size() == 3);
  }

  TEST_CASE("spec validation and json") {
    PhantomSpec s;
    nlohmann::json j = s;
    CHECK(j.get<PhantomSpec>() == s);
    s.lung_axis_x = {0.1, 0.3};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = PhantomSpec{};
    s.size = 8;
    CHECK_THROWS_AS(s.validate(), ConfigError);
  }

  TEST_CASE("label remap") {
    CHECK(remap_label(0) == 0);
    CHECK(remap_label(1) == 1);
    CHECK(remap_label(2) == 1);
    CHECK(remap_label(3) == 2);
    CHECK_THROWS_AS(remap_label(4), ValidationError);
  }

  TEST_CASE("ingest a ten-slice volume") {
    testutil::TempDir dir("data_ingest");
    const auto v = toy_volume(10, 40, 48);
    write_volume(dir.path / "vol.json", v);
    const auto back = read_volume(dir.path / "vol.json");
    CHECK(back.image == v.image);
    CHECK(back.labels == v.labels);

    const auto r = ingest_volume(dir.path / "vol.json", 32, dir.path / "corpus");
    REQUIRE(r.samples.size() == 10);
    CHECK(r.names[9] == "vol_9");
    for (const auto& s : r.samples) {
      CHECK(s.image.shape() == Shape2{32, 32});
      CHECK(s.mask.shape() == Shape2{32, 32});
      CHECK(s.modality_tag == 1);
      CHECK(s.image.min() >= -1.0F);
      CHECK(s.image.max() <= 1.0F);
      CHECK(s.mask.contains(2));
    }
    // Values below the window clamp to -1.
    CHECK(r.samples[0].image.at(0, 0) == -1.0F);
    const auto corpus = load_corpus(dir.path / "corpus");
    CHECK(corpus.size() == 10);
    CHECK(corpus.scan_ids[0] == "vol");
    CHECK(load_masks(dir.path / "corpus").size() == 10);
  }

  TEST_CASE("broken volumes are rejected") {
    testutil::TempDir dir("data_bad");
    auto v = toy_volume(2, 10, 10);
    v.labels.pop_back();
    CHECK_THROWS_AS(write_volume(dir.path / "a.json", v), ValidationError);

    v = toy_volume(2, 10, 10);
    write_volume(dir.path / "b.json", v);
    auto j = nlohmann::json::parse(testutil::slurp(dir.path / "b.json"));
    j["shape"] = {2, 10, 11};
    std::ofstream(dir.path / "b.json") << j.dump();
    CHECK_THROWS_AS(read_volume(dir.path / "b.json"), ValidationError);

    v.labels[3] = 7;
    write_volume(dir.path / "c.json", v);
    CHECK_THROWS_AS(ingest_volume(dir.path / "c.json", 16), ValidationError);
    CHECK_THROWS_AS(read_volume(dir.path / "missing.json"), StateError);
  }

  TEST_CASE("corpus round trip") {
    testutil::TempDir dir("data_corpus");
    const auto c = make_phantom_corpus(PhantomSpec{}, 5, 2);
    save_corpus(dir.path, c);
    const auto back = load_corpus(dir.path);
    REQUIRE(back.size() == 5);
    for (size_t k = 0; k < 5; ++k) {
      CHECK(back.samples[k].mask == c.samples[k].mask);
      CHECK(back.scan_ids[k] == c.scan_ids[k]);
      CHECK(back.samples[k].modality_tag == c.samples[k].modality_tag);
      for (size_t i = 0; i < c.samples[k].image.data().size(); ++i) {
        CHECK(std::abs(back.samples[k].image.data()[i] - c.samples[k].image.data()[i]) <= 1.0F / 255.0F + 1e-6F);
      }
    }
    CHECK_THROWS_AS(load_masks(dir.path / "nothing"), StateError);
  }
}
