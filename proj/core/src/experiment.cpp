#include "cosingan/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cosingan::eval {

void to_json(nlohmann::json& j, const BackboneTrainConfig& c) {
  j = {{"classifier", c.classifier}, {"segmenter", c.segmenter}};
}

void from_json(const nlohmann::json& j, BackboneTrainConfig& c) {
  j.at("classifier").get_to(c.classifier);
  j.at("segmenter").get_to(c.segmenter);
}

}  // namespace cosingan::eval

namespace cosingan::synth {

void to_json(nlohmann::json& j, const RcDeltas& d) { j = {d.background, d.lung, d.infection}; }

void from_json(const nlohmann::json& j, RcDeltas& d) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("deltas must be a 3-element array");
  j.at(0).get_to(d.background);
  j.at(1).get_to(d.lung);
  j.at(2).get_to(d.infection);
  d.validate();
}

}  // namespace cosingan::synth

namespace cosingan::experiment {

namespace {

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp);
    os << text;
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw StateError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

eval::ProbeTrainConfig desk_probe(int epochs, int batch, int64_t decay_start, double decay_frac) {
  eval::ProbeTrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.lr = 1e-3;
  c.decay_start = decay_start;
  c.decay_frac = decay_frac;
  return c;
}

}  // namespace

void RunConfig::validate() const {
  phantom.validate();
  train.validate();
  if (phantom.size != train.max_size)
    throw ConfigError("phantom size " + std::to_string(phantom.size) + " must equal the schedule's final size " +
                      std::to_string(train.max_size));
  if (train_samples < 2 || test_samples < 2) throw ConfigError("train_samples and test_samples must be >= 2");
  if (train_samples < 2 * phantom.slices_per_scan)
    throw ConfigError("train_samples must cover at least one scan of each modality");
  if (seg_repeats < 1) throw ConfigError("seg_repeats must be >= 1");
  deltas.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"phantom", c.phantom},
       {"train_samples", c.train_samples},
       {"test_samples", c.test_samples},
       {"train", c.train},
       {"backbones", c.backbones},
       {"seg_light", c.seg_light},
       {"seg_heavy", c.seg_heavy},
       {"cls_light", c.cls_light},
       {"cls_heavy", c.cls_heavy},
       {"seg_repeats", c.seg_repeats},
       {"deltas", c.deltas},
       {"dropout_at_inference", c.dropout_at_inference},
       {"run_classifiers", c.run_classifiers},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  j.at("phantom").get_to(c.phantom);
  j.at("train_samples").get_to(c.train_samples);
  j.at("test_samples").get_to(c.test_samples);
  j.at("train").get_to(c.train);
  j.at("backbones").get_to(c.backbones);
  j.at("seg_light").get_to(c.seg_light);
  j.at("seg_heavy").get_to(c.seg_heavy);
  j.at("cls_light").get_to(c.cls_light);
  j.at("cls_heavy").get_to(c.cls_heavy);
  j.at("seg_repeats").get_to(c.seg_repeats);
  j.at("deltas").get_to(c.deltas);
  j.at("dropout_at_inference").get_to(c.dropout_at_inference);
  j.at("run_classifiers").get_to(c.run_classifiers);
  j.at("seed").get_to(c.seed);
  c.validate();
}

RunConfig desk_run_config(uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  // Short stages leave the pyramids undertrained and their samples blurry;
  // 400 epochs is where synthetic sets start to pay off on phantoms.
  c.train = trainer::desk_config(400);
  c.dropout_at_inference = true;
  // A single probe's infection DSC moves by up to 0.15 with its seed alone.
  c.seg_repeats = 3;
  c.seg_light = desk_probe(50, 8, 25, 0.02);
  c.seg_heavy = desk_probe(50, 2, 25, 0.02);
  c.cls_light = desk_probe(30, 16, 15, 0.04);
  c.cls_heavy = desk_probe(30, 16, 15, 0.04);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  try {
    return read_json(path).get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid run config " + path.string() + ": " + e.what());
  }
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  write_text_atomic(path, nlohmann::json(c).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Report

const ProbeRow& ExperimentReport::row(const std::string& set, const std::string& task, eval::ProbeArch arch) const {
  for (const auto& r : rows) {
    if (r.training_set == set && r.task == task && r.arch == arch) return r;
  }
  throw StateError("report has no " + task + " row for " + set + " (" + eval::to_string(arch) + ")");
}

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json rj = nlohmann::json::array();
  for (const auto& r : rows) {
    rj.push_back({{"training_set", r.training_set},
                  {"task", r.task},
                  {"arch", eval::to_string(r.arch)},
                  {"headline", r.headline},
                  {"metrics", r.metrics}});
  }
  nlohmann::json q = nlohmann::json::object();
  for (const auto& [name, score] : quality) q[name] = eval::to_json(score);
  return {{"rows", rj}, {"quality", q}, {"corpus_sizes", corpus_sizes}};
}

namespace {

std::string fmt_ci(const nlohmann::json& m) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(3);
  const auto val = [](const nlohmann::json& v) { return v.is_null() ? std::nan("") : v.get<double>(); };
  os << val(m.at("mean")) << " [" << val(m.at("ci95").at(0)) << ", " << val(m.at("ci95").at(1)) << "]";
  return os.str();
}

}  // namespace

std::string ExperimentReport::to_text() const {
  std::ostringstream os;
  os << "Segmentation on the test split (per-scan DSC, mean [95% CI])\n";
  os << std::left << std::setw(10) << "Set" << std::setw(7) << "Arch" << std::setw(26) << "Lung" << "Infection\n";
  for (const auto& r : rows) {
    if (r.task != "segmentation") continue;
    os << std::left << std::setw(10) << r.training_set << std::setw(7) << eval::to_string(r.arch) << std::setw(26)
       << fmt_ci(r.metrics.at("lung")) << fmt_ci(r.metrics.at("infection")) << "\n";
  }
  bool any_cls = false;
  for (const auto& r : rows) any_cls = any_cls || r.task == "classification";
  if (any_cls) {
    os << "\nClassification on the test split (per-scan, mean [95% CI])\n";
    os << std::left << std::setw(10) << "Set" << std::setw(7) << "Arch" << std::setw(26) << "Sensitivity" << std::setw(26)
       << "Specificity" << "Accuracy\n";
    for (const auto& r : rows) {
      if (r.task != "classification") continue;
      os << std::left << std::setw(10) << r.training_set << std::setw(7) << eval::to_string(r.arch) << std::setw(26)
         << fmt_ci(r.metrics.at("sensitivity")) << std::setw(26) << fmt_ci(r.metrics.at("specificity"))
         << fmt_ci(r.metrics.at("accuracy")) << "\n";
    }
  }
  for (const auto& [name, score] : quality) {
    os << "\nImage quality of " << name << " (oracle DSC, %)\n" << eval::format_quality_table(score);
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Protocol

size_t pick_training_sample(const eval::EvalCorpus& corpus, int modality) {
  std::optional<size_t> best;
  int64_t best_count = -1;
  for (size_t k = 0; k < corpus.size(); ++k) {
    if (corpus.samples[k].modality_tag != modality) continue;
    const int64_t n = corpus.samples[k].mask.count(2);
    if (n > best_count) {
      best = k;
      best_count = n;
    }
  }
  if (!best) throw ValidationError("corpus has no sample of modality " + std::to_string(modality));
  return *best;
}

std::map<std::string, eval::EvalCorpus> build_training_sets(const eval::EvalCorpus& real, size_t sin_index,
                                                            size_t two_index, nets::GeneratorStack& stack_a,
                                                            nets::GeneratorStack& stack_b, const RunConfig& cfg) {
  const size_t n = real.size();
  std::map<std::string, eval::EvalCorpus> sets;
  sets["OC-TS"] = real;
  auto& sin = sets["Sin-TS"];
  auto& two = sets["Two-TS"];
  for (size_t k = 0; k < n; ++k) {
    sin.add(real.samples[sin_index], "sin");
    if (k % 2 == 0) {
      two.add(real.samples[sin_index], "two_a");
    } else {
      two.add(real.samples[two_index], "two_b");
    }
  }

  std::vector<ConditionMask> masks;
  for (const auto& s : real.samples) masks.push_back(s.mask);
  const std::vector<std::pair<std::string, synth::CorpusMode>> modes = {
      {"O-STs", synth::CorpusMode::o_st}, {"RC-STs", synth::CorpusMode::rc_st}, {"IF-STs", synth::CorpusMode::if_st}};
  for (size_t m = 0; m < modes.size(); ++m) {
    synth::CorpusOptions opts;
    opts.mode = modes[m].second;
    opts.seed = derive_seed(cfg.seed, 500 + m);
    opts.dropout_at_inference = cfg.dropout_at_inference;
    opts.deltas = cfg.deltas;
    opts.stack_modalities = {real.samples[sin_index].modality_tag, real.samples[two_index].modality_tag};
    auto gen = synth::generate_corpus({&stack_a, &stack_b}, masks, opts);
    auto& set = sets[modes[m].first];
    for (size_t k = 0; k < gen.samples.size(); ++k) set.add(std::move(gen.samples[k]), real.scan_ids[k]);
  }
  for (const auto& [name, set] : sets) {
    if (set.size() != n) throw StateError("training set " + name + " has the wrong sample count");
  }
  return sets;
}

namespace {

ProbeRow row_from_json(const nlohmann::json& j) {
  ProbeRow r;
  j.at("training_set").get_to(r.training_set);
  j.at("task").get_to(r.task);
  r.arch = eval::parse_arch(j.at("arch").get<std::string>());
  j.at("headline").get_to(r.headline);
  r.metrics = j.at("metrics");
  return r;
}

nlohmann::json row_to_json(const ProbeRow& r) {
  return {{"training_set", r.training_set},
          {"task", r.task},
          {"arch", eval::to_string(r.arch)},
          {"headline", r.headline},
          {"metrics", r.metrics}};
}

double json_mean(const nlohmann::json& m) { return m.at("mean").is_null() ? std::nan("") : m.at("mean").get<double>(); }

}  // namespace

ExperimentReport run_experiment(const RunConfig& cfg, const ExperimentOptions& opts) {
  cfg.validate();
  const auto& out = opts.out;
  std::filesystem::create_directories(out);
  save_run_config(out / "config.json", cfg);

  const auto train = data::make_phantom_corpus(cfg.phantom, cfg.train_samples, derive_seed(cfg.seed, 100), "train");
  auto test = data::make_phantom_corpus(cfg.phantom, cfg.test_samples, derive_seed(cfg.seed, 101), "test");
  test.split = eval::Split::test;
  eval::check_disjoint(train, test);

  // Frozen feature extractors for the reconstruction loss.
  const auto bb_path = out / "backbones.bin";
  eval::FeatureBackbones backbones;
  if (opts.resume && std::filesystem::exists(bb_path)) {
    backbones = eval::load_feature_backbones(bb_path);
  } else {
    auto bcfg = cfg.backbones;
    bcfg.classifier.seed = derive_seed(cfg.seed, 200);
    bcfg.segmenter.seed = derive_seed(cfg.seed, 201);
    backbones = eval::train_feature_backbones(train, bcfg);
    eval::save_feature_backbones(bb_path, backbones);
  }
  const auto loss = trainer::make_loss_setup(cfg.train, backbones.vgg, backbones.unet);

  const size_t sin_index = pick_training_sample(train, 0);
  const size_t two_index = pick_training_sample(train, 1);
  const auto train_stack = [&](size_t index, const std::string& dir, uint64_t stream) {
    auto tcfg = cfg.train;
    tcfg.seed = derive_seed(cfg.seed, stream);
    trainer::FullTrainOptions t;
    t.out.root = out / dir;
    t.resume = opts.resume && std::filesystem::exists(t.out.ckpt_dir() / "schedule.json");
    return trainer::train_full(train.samples[index], tcfg, loss, t);
  };
  auto stack_a = train_stack(sin_index, "cosingan_a", 300);
  auto stack_b = train_stack(two_index, "cosingan_b", 301);

  auto sets = build_training_sets(train, sin_index, two_index, stack_a, stack_b, cfg);

  ExperimentReport report;
  for (const auto& [name, set] : sets) report.corpus_sizes[name] = set.size();

  std::vector<Image> test_images;
  std::vector<int> test_labels;
  for (const auto& s : test.samples) {
    test_images.push_back(s.image);
    test_labels.push_back(eval::classification_label(s.mask));
  }

  std::optional<eval::Segmenter> oracle;
  const auto oracle_path = out / "oracle.pt";
  const auto results = out / "results";
  for (size_t si = 0; si < kTrainingSets.size(); ++si) {
    const auto& name = kTrainingSets[si];
    const auto& set = sets.at(name);
    for (const auto arch : {eval::ProbeArch::light, eval::ProbeArch::heavy}) {
      const uint64_t stream = 400 + si * 8 + (arch == eval::ProbeArch::heavy ? 1 : 0);
      const bool is_oracle = name == "OC-TS" && arch == eval::ProbeArch::heavy;

      const auto seg_path = results / (name + "_segmentation_" + eval::to_string(arch) + ".json");
      const bool reuse_seg = opts.resume && std::filesystem::exists(seg_path) &&
                             (!is_oracle || std::filesystem::exists(oracle_path));
      if (reuse_seg) {
        report.rows.push_back(row_from_json(read_json(seg_path)));
        if (is_oracle) {
          eval::Segmenter net(eval::ProbeArch::heavy);
          torch::load(net, oracle_path.string());
          net->eval();
          oracle = net;
        }
      } else {
        auto pcfg = arch == eval::ProbeArch::light ? cfg.seg_light : cfg.seg_heavy;
        std::vector<eval::SegmentationReport> repeats;
        for (int k = 0; k < cfg.seg_repeats; ++k) {
          pcfg.seed = derive_seed(derive_seed(cfg.seed, stream), static_cast<uint64_t>(k));
          auto trained = eval::train_segmenter(set, arch, pcfg);
          repeats.push_back(eval::segmentation_metrics(eval::segment(trained.net, test_images), test));
          if (is_oracle && k == 0) {
            torch::save(trained.net, oracle_path.string());
            oracle = trained.net;
          }
        }
        const auto seg = eval::average_segmentation(repeats);
        ProbeRow r{name, "segmentation", arch, seg.infection.mean, eval::to_json(seg)};
        write_text_atomic(seg_path, row_to_json(r).dump(2) + "\n");
        report.rows.push_back(r);
      }

      if (!cfg.run_classifiers) continue;
      const auto cls_path = results / (name + "_classification_" + eval::to_string(arch) + ".json");
      if (opts.resume && std::filesystem::exists(cls_path)) {
        report.rows.push_back(row_from_json(read_json(cls_path)));
        continue;
      }
      auto ccfg = arch == eval::ProbeArch::light ? cfg.cls_light : cfg.cls_heavy;
      ccfg.seed = derive_seed(cfg.seed, stream + 4);
      auto clf = eval::train_classifier(set, arch, ccfg);
      const auto preds = eval::classify(clf.net, test_images);
      const auto cls = eval::classification_metrics(preds, test_labels, test.scan_ids);
      const auto cj = eval::to_json(cls);
      ProbeRow r{name, "classification", arch, json_mean(cj.at("accuracy")), cj};
      write_text_atomic(cls_path, row_to_json(r).dump(2) + "\n");
      report.rows.push_back(r);
    }
  }

  for (const char* name : {"O-STs", "RC-STs", "IF-STs"}) report.quality[name] = eval::image_quality_score(sets.at(name), *oracle);

  write_text_atomic(out / "report.json", report.to_json().dump(2) + "\n");
  write_text_atomic(out / "report.txt", report.to_text());
  return report;
}

}  // namespace cosingan::experiment
