// cosingan: command-line front end for ingestion, training, synthesis and
// evaluation.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "cosingan/augment.hpp"
#include "cosingan/data.hpp"
#include "cosingan/eval.hpp"
#include "cosingan/experiment.hpp"
#include "cosingan/png_io.hpp"
#include "cosingan/synth.hpp"
#include "cosingan/trainer.hpp"

namespace fs = std::filesystem;
using namespace cosingan;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitState = 3;
constexpr int kExitDivergence = 4;

struct Globals {
  std::string config;
  std::optional<uint64_t> seed;
  std::string out;
};

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path);
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed config " + path + ": " + e.what());
  }
}

template <typename T>
T parse_config(const std::string& path, T fallback) {
  if (path.empty()) return fallback;
  try {
    return read_json_file(path).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid config " + path + ": " + e.what());
  }
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required");
  return g.out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

int cmd_ingest(const Globals& g, const std::string& volume, int64_t resolution) {
  const auto out = require_out(g);
  const auto res = data::ingest_volume(volume, resolution, out);
  std::cout << "ingested " << res.samples.size() << " slices into " << out << "\n";
  return 0;
}

int cmd_phantom(const Globals& g, int n, const std::string& prefix) {
  const auto out = require_out(g);
  const auto spec = parse_config<data::PhantomSpec>(g.config, data::PhantomSpec{});
  const auto corpus = data::make_phantom_corpus(spec, n, g.seed.value_or(0), prefix);
  data::save_corpus(out, corpus);
  std::cout << "wrote " << corpus.size() << " phantom pairs to " << out << "\n";
  return 0;
}

eval::FeatureBackbones obtain_backbones(const std::string& path, const fs::path& out, const data::PhantomSpec& spec,
                                        uint64_t seed) {
  if (!path.empty()) return eval::load_feature_backbones(path);
  const auto cached = out / "backbones.bin";
  if (fs::exists(cached)) return eval::load_feature_backbones(cached);
  std::cout << "training feature backbones on a phantom corpus\n";
  const auto corpus = data::make_phantom_corpus(spec, 64, derive_seed(seed, 100), "bb");
  auto bb = eval::train_feature_backbones(corpus, eval::default_backbone_config(seed));
  eval::save_feature_backbones(cached, bb);
  return bb;
}

int cmd_train(const Globals& g, const std::string& image_path, const std::string& mask_path, bool resume,
              const std::string& backbones_path) {
  const auto out = require_out(g);
  auto cfg = parse_config<trainer::TrainConfig>(g.config, trainer::desk_config());
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  const auto final_scale = cfg.schedule().final_scale();
  SamplePair sample;
  sample.image = resize_image(io::load_image_png(image_path), final_scale);
  sample.mask = resize_mask(io::load_mask_png(mask_path), final_scale);
  fs::create_directories(out);
  write_json(out / "train_config.json", cfg);

  data::PhantomSpec spec;
  spec.size = final_scale.height;
  auto bb = obtain_backbones(backbones_path, out, spec, cfg.seed);
  const auto loss = trainer::make_loss_setup(cfg, bb.vgg, bb.unet);
  trainer::FullTrainOptions opts;
  opts.out.root = out;
  opts.resume = resume;
  const auto stack = trainer::train_full(sample, cfg, loss, opts);
  std::cout << "trained " << stack.scale_count() << " scales; checkpoints in " << opts.out.ckpt_dir() << "\n";
  return 0;
}

int cmd_synthesize(const Globals& g, const std::string& ckpt, const std::string& ckpt_b, const std::string& masks_dir,
                   const std::string& mode_name, bool dropout, const std::string& deltas) {
  const auto out = require_out(g);
  const auto mode = synth::parse_corpus_mode(mode_name);
  auto stack_a = nets::load_stack(fs::path(ckpt) / "ckpt");
  std::optional<nets::GeneratorStack> stack_b;
  if (!ckpt_b.empty()) stack_b = nets::load_stack(fs::path(ckpt_b) / "ckpt");
  auto masks = data::load_masks(masks_dir);
  for (auto& m : masks) m = resize_mask(m, stack_a.schedule.final_scale());

  synth::CorpusOptions opts;
  opts.mode = mode;
  opts.seed = g.seed.value_or(0);
  opts.dropout_at_inference = dropout;
  if (!deltas.empty()) opts.deltas = synth::parse_deltas(deltas);
  std::vector<nets::GeneratorStack*> stacks{&stack_a};
  if (stack_b) stacks.push_back(&*stack_b);
  const auto corpus = synth::generate_corpus(stacks, masks, opts, out);
  std::cout << "synthesized " << corpus.samples.size() << " images into " << out << "\n";
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& train_dir, const std::string& test_dir, const std::string& synth_dir,
                 const std::string& task, const std::string& arch_name) {
  const auto out = require_out(g);
  const auto arch = eval::parse_arch(arch_name);
  if (task != "segmentation" && task != "classification") throw ConfigError("--task must be segmentation or classification");
  auto cfg = parse_config<eval::ProbeTrainConfig>(
      g.config, task == "segmentation" ? eval::paper_segmenter_config(arch) : eval::paper_classifier_config());
  if (g.seed) cfg.seed = *g.seed;
  const auto train = data::load_corpus(train_dir);
  auto test = data::load_corpus(test_dir);
  test.split = eval::Split::test;
  eval::check_disjoint(train, test);

  std::vector<Image> images;
  for (const auto& s : test.samples) images.push_back(s.image);
  nlohmann::json report;
  if (task == "segmentation") {
    auto net = eval::train_segmenter(train, arch, cfg);
    const auto seg = eval::segmentation_metrics(eval::segment(net.net, images), test);
    report = {{"segmentation", eval::to_json(seg)}};
    if (!synth_dir.empty()) {
      const auto q = eval::image_quality_score(data::load_corpus(synth_dir), net.net);
      report["quality"] = eval::to_json(q);
      std::cout << eval::format_quality_table(q);
    }
    std::cout << "lung DSC " << seg.lung.mean << ", infection DSC " << seg.infection.mean << "\n";
  } else {
    auto net = eval::train_classifier(train, arch, cfg);
    std::vector<int> labels;
    for (const auto& s : test.samples) labels.push_back(eval::classification_label(s.mask));
    const auto cls = eval::classification_metrics(eval::classify(net.net, images), labels, test.scan_ids);
    report = {{"classification", eval::to_json(cls)}};
    std::cout << "accuracy " << cls.accuracy.mean << "\n";
  }
  write_json(out / "metrics.json", report);
  return 0;
}

int cmd_experiment(const Globals& g, bool resume) {
  const auto out = require_out(g);
  auto cfg = parse_config<experiment::RunConfig>(g.config, experiment::desk_run_config());
  if (g.seed) cfg.seed = *g.seed;
  const auto report = experiment::run_experiment(cfg, {out, resume});
  std::cout << report.to_text();
  return 0;
}

int cmd_dump_augment(const Globals& g, const std::string& image_path, const std::string& mask_path,
                     const std::string& policy_name, int n, std::optional<double> intensity) {
  const auto out = require_out(g);
  augment::AugmentPolicy policy;
  if (!g.config.empty()) {
    policy = parse_config<augment::AugmentPolicy>(g.config, policy);
  } else if (policy_name == "sa") {
    policy = augment::strong_policy();
  } else if (policy_name == "wa") {
    policy = augment::weak_policy();
  } else {
    throw ConfigError("--policy must be sa or wa");
  }
  if (intensity) policy = policy.at_intensity(*intensity);
  SamplePair pair{io::load_image_png(image_path), io::load_mask_png(mask_path), 0, 0};
  pair.validate();
  std::mt19937_64 rng(g.seed.value_or(0));
  std::vector<Image> tiles;
  nlohmann::json draws = nlohmann::json::array();
  for (int k = 0; k < n; ++k) {
    const auto draw = augment::sample_draw(policy, pair.image.shape(), rng);
    auto [img, mask] = augment::apply_draw(draw, pair.image, pair.mask);
    tiles.push_back(img);
    tiles.push_back(tensor_to_image(encode_mask(mask)));
    draws.push_back({{"crop", {draw.crop.x0, draw.crop.y0, draw.crop.width, draw.crop.height}},
                     {"rotation_deg", draw.rotation_deg},
                     {"flip_h", draw.flip_h},
                     {"flip_v", draw.flip_v},
                     {"elastic", draw.elastic_field.has_value()}});
  }
  fs::create_directories(out);
  io::save_image_png(out / "augment_grid.png", io::tile_grid(tiles, 2));
  write_json(out / "draws.json", {{"policy", policy}, {"draws", draws}});
  std::cout << "wrote " << n << " augmented pairs to " << out / "augment_grid.png" << "\n";
  return 0;
}

int cmd_defaults(const std::string& kind) {
  nlohmann::json j;
  if (kind == "run") {
    j = experiment::desk_run_config();
  } else if (kind == "train") {
    j = trainer::desk_config();
  } else if (kind == "train-paper") {
    j = trainer::paper_config();
  } else if (kind == "phantom") {
    j = data::PhantomSpec{};
  } else if (kind == "probe") {
    j = eval::paper_segmenter_config(eval::ProbeArch::light);
  } else {
    throw ConfigError("unknown config kind '" + kind + "'");
  }
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  // One intra-op thread keeps reductions in a fixed order, so reruns match bitwise.
  torch::set_num_threads(1);

  CLI::App app{"cosingan: conditional single-image GAN pyramid for mask-driven image synthesis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  uint64_t seed_value = 0;
  app.add_option("--config", g.config, "JSON config file for the chosen subcommand");
  auto* seed_opt = app.add_option("--seed", seed_value, "Base random seed");
  app.add_option("--out", g.out, "Output directory");

  std::function<int()> run;

  auto* ingest = app.add_subcommand("ingest", "Slice a raw volume into image/mask pairs");
  std::string volume;
  int64_t resolution = 32;
  ingest->add_option("--volume", volume, "Volume header (JSON)")->required();
  ingest->add_option("--resolution", resolution, "Output slice size");
  ingest->callback([&] { run = [&] { return cmd_ingest(g, volume, resolution); }; });

  auto* phantom = app.add_subcommand("phantom", "Generate a phantom corpus");
  int phantom_n = 64;
  std::string prefix = "scan";
  phantom->add_option("--n", phantom_n, "Number of slices");
  phantom->add_option("--prefix", prefix, "Scan id prefix");
  phantom->callback([&] { run = [&] { return cmd_phantom(g, phantom_n, prefix); }; });

  auto* train = app.add_subcommand("train", "Train a generator pyramid on one image/mask pair");
  std::string image_path;
  std::string mask_path;
  std::string backbones_path;
  bool resume = false;
  train->add_option("--image", image_path, "Training image PNG")->required();
  train->add_option("--mask", mask_path, "Training mask PNG (0/128/255)")->required();
  train->add_option("--backbones", backbones_path, "Frozen feature backbones archive");
  train->add_flag("--resume", resume, "Continue from checkpoints under --out");
  train->callback([&] { run = [&] { return cmd_train(g, image_path, mask_path, resume, backbones_path); }; });

  auto* syn = app.add_subcommand("synthesize", "Synthesize images for a directory of masks");
  std::string ckpt;
  std::string ckpt_b;
  std::string masks_dir;
  std::string mode = "o-st";
  bool dropout = false;
  std::string deltas;
  syn->add_option("--ckpt", ckpt, "Training output directory of the first pyramid")->required();
  syn->add_option("--ckpt-b", ckpt_b, "Training output directory of a second pyramid");
  syn->add_option("--masks", masks_dir, "Directory of mask PNGs")->required();
  syn->add_option("--mode", mode, "o-st, rc-st or if-st");
  syn->add_flag("--dropout", dropout, "Keep dropout active at inference");
  syn->add_option("--deltas", deltas, "Condition noise b,l,i for rc-st");
  syn->callback([&] { run = [&] { return cmd_synthesize(g, ckpt, ckpt_b, masks_dir, mode, dropout, deltas); }; });

  auto* evaluate = app.add_subcommand("evaluate", "Train a probe on one corpus and score it on another");
  std::string train_dir;
  std::string test_dir;
  std::string synth_dir;
  std::string task = "segmentation";
  std::string arch = "light";
  evaluate->add_option("--train", train_dir, "Training corpus directory")->required();
  evaluate->add_option("--test", test_dir, "Test corpus directory")->required();
  evaluate->add_option("--synth", synth_dir, "Synthesized corpus to score with the trained segmenter");
  evaluate->add_option("--task", task, "segmentation or classification");
  evaluate->add_option("--arch", arch, "light or heavy");
  evaluate->callback([&] { run = [&] { return cmd_evaluate(g, train_dir, test_dir, synth_dir, task, arch); }; });

  auto* exp = app.add_subcommand("experiment", "Run the six-training-set comparison on phantoms");
  bool exp_resume = false;
  exp->add_flag("--resume", exp_resume, "Reuse finished stages under --out");
  exp->callback([&] { run = [&] { return cmd_experiment(g, exp_resume); }; });

  auto* dump = app.add_subcommand("dump-augment", "Write a grid of augmented pairs");
  std::string policy = "sa";
  int dump_n = 8;
  std::optional<double> intensity;
  dump->add_option("--image", image_path, "Image PNG")->required();
  dump->add_option("--mask", mask_path, "Mask PNG")->required();
  dump->add_option("--policy", policy, "sa or wa (ignored with --config)");
  dump->add_option("--n", dump_n, "Number of draws");
  dump->add_option("--intensity", intensity, "Strong-augmentation intensity");
  dump->callback([&] { run = [&] { return cmd_dump_augment(g, image_path, mask_path, policy, dump_n, intensity); }; });

  auto* defaults = app.add_subcommand("defaults", "Print a default config (run, train, train-paper, phantom, probe)");
  std::string kind = "run";
  defaults->add_option("kind", kind, "Config kind");
  defaults->callback([&] { run = [&] { return cmd_defaults(kind); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;

  try {
    return run();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const StateError& e) {
    std::cerr << "state error: " << e.what() << "\n";
    return kExitState;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
