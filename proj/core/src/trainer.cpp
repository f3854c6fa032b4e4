#include "cosingan/trainer.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "cosingan/png_io.hpp"

namespace cosingan::trainer {

void StageTrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("stage epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("stage batch_size must be >= 1");
  if (!(lr_init >= 0.0)) throw ConfigError("lr_init must be >= 0");
  if (lr_decay_start_epoch < 0) throw ConfigError("lr_decay_start_epoch must be >= 0");
  if (!(lr_decay_per_epoch_frac >= 0.0)) throw ConfigError("lr_decay_per_epoch_frac must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
    throw ConfigError("adam betas must lie in [0, 1)");
}

void to_json(nlohmann::json& j, const StageTrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr_init", c.lr_init},
       {"lr_decay_start_epoch", c.lr_decay_start_epoch},
       {"lr_decay_per_epoch_frac", c.lr_decay_per_epoch_frac},
       {"adam_beta1", c.adam_beta1},
       {"adam_beta2", c.adam_beta2}};
}

void from_json(const nlohmann::json& j, StageTrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr_init").get_to(c.lr_init);
  j.at("lr_decay_start_epoch").get_to(c.lr_decay_start_epoch);
  j.at("lr_decay_per_epoch_frac").get_to(c.lr_decay_per_epoch_frac);
  j.at("adam_beta1").get_to(c.adam_beta1);
  j.at("adam_beta2").get_to(c.adam_beta2);
  c.validate();
}

StageTrainConfig paper_super_config() { return StageTrainConfig{}; }

StageTrainConfig paper_restore_config() {
  StageTrainConfig c;
  c.epochs = 2000;
  c.lr_init = 1e-4;
  c.lr_decay_start_epoch = 1000;
  c.lr_decay_per_epoch_frac = 0.001;
  return c;
}

double lr_schedule(const StageTrainConfig& cfg, int64_t epoch) {
  if (epoch < 0) throw ValidationError("epoch must be >= 0");
  return linear_decay_lr(cfg.lr_init, cfg.lr_decay_start_epoch, cfg.lr_decay_per_epoch_frac, epoch);
}

// ---------------------------------------------------------------------------
// Run configuration

void TrainConfig::validate() const {
  schedule().validate();
  if (gen_base_width < 1 || disc_base_width < 1) throw ConfigError("network widths must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
  strong.validate();
  weak.validate();
  if (weak.use_elastic) throw ConfigError("the weak policy never uses elastic deformation");
  super_cfg.validate();
  restore_cfg.validate();
  if (final_batch_size < 0) throw ConfigError("final_batch_size must be >= 0");
  loss_weights.validate();
  category_weights.validate();
  vgg_cfg.validate();
  unet_cfg.validate();
  if (ms_ssim_levels < 1 || ms_ssim_levels > 5) throw ConfigError("ms_ssim_levels must lie in [1, 5]");
  if (preview_every < 0) throw ConfigError("preview_every must be >= 0");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"max_size", c.max_size},
       {"n_scales", c.n_scales},
       {"profile", to_string(c.profile)},
       {"combine_mode", nets::to_string(c.mode)},
       {"gen_base_width", c.gen_base_width},
       {"disc_base_width", c.disc_base_width},
       {"dropout_rate", c.dropout_rate},
       {"strong", c.strong},
       {"weak", c.weak},
       {"super", c.super_cfg},
       {"restore", c.restore_cfg},
       {"final_batch_size", c.final_batch_size},
       {"loss_weights", c.loss_weights},
       {"category_weights", c.category_weights},
       {"vgg_features", c.vgg_cfg},
       {"unet_features", c.unet_cfg},
       {"ms_ssim_levels", c.ms_ssim_levels},
       {"preview_every", c.preview_every},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("max_size").get_to(c.max_size);
  j.at("n_scales").get_to(c.n_scales);
  c.profile = parse_profile(j.at("profile").get<std::string>());
  c.mode = nets::parse_combine_mode(j.at("combine_mode").get<std::string>());
  j.at("gen_base_width").get_to(c.gen_base_width);
  j.at("disc_base_width").get_to(c.disc_base_width);
  j.at("dropout_rate").get_to(c.dropout_rate);
  j.at("strong").get_to(c.strong);
  j.at("weak").get_to(c.weak);
  j.at("super").get_to(c.super_cfg);
  j.at("restore").get_to(c.restore_cfg);
  j.at("final_batch_size").get_to(c.final_batch_size);
  j.at("loss_weights").get_to(c.loss_weights);
  j.at("category_weights").get_to(c.category_weights);
  j.at("vgg_features").get_to(c.vgg_cfg);
  j.at("unet_features").get_to(c.unet_cfg);
  j.at("ms_ssim_levels").get_to(c.ms_ssim_levels);
  j.at("preview_every").get_to(c.preview_every);
  j.at("seed").get_to(c.seed);
  c.validate();
}

TrainConfig paper_config() {
  TrainConfig c;
  c.max_size = 512;
  c.n_scales = 9;
  c.profile = ScheduleProfile::paper;
  return c;
}

TrainConfig desk_config(int64_t epochs_per_stage) {
  TrainConfig c;
  c.max_size = 32;
  c.n_scales = 3;
  c.profile = ScheduleProfile::desk;
  c.gen_base_width = 32;
  c.disc_base_width = 32;
  c.final_batch_size = 0;
  // Short runs need a larger step; the decay still reaches zero at the end.
  const int64_t half = std::max<int64_t>(1, epochs_per_stage / 2);
  c.super_cfg.epochs = epochs_per_stage;
  c.super_cfg.lr_init = 2e-3;
  c.super_cfg.lr_decay_start_epoch = half;
  c.super_cfg.lr_decay_per_epoch_frac = 1.0 / static_cast<double>(std::max<int64_t>(1, epochs_per_stage - half + 1));
  c.restore_cfg = c.super_cfg;
  c.restore_cfg.lr_init = 1e-3;
  return c;
}

// ---------------------------------------------------------------------------
// Train state

void to_json(nlohmann::json& j, const TrainState& s) {
  j = {{"current_scale", s.current_scale},
       {"current_stage", nets::to_string(s.current_stage)},
       {"epoch", s.epoch},
       {"seed", s.seed},
       {"stage_seed", s.stage_seed},
       {"log_rows", s.log_rows}};
}

void from_json(const nlohmann::json& j, TrainState& s) {
  j.at("current_scale").get_to(s.current_scale);
  s.current_stage = nets::parse_stage(j.at("current_stage").get<std::string>());
  j.at("epoch").get_to(s.epoch);
  j.at("seed").get_to(s.seed);
  j.at("stage_seed").get_to(s.stage_seed);
  j.at("log_rows").get_to(s.log_rows);
}

void save_train_state(const std::filesystem::path& path, const TrainState& s) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp);
    os << nlohmann::json(s).dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

TrainState load_train_state(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw StateError("cannot read train state " + path.string());
  return nlohmann::json::parse(is).get<TrainState>();
}

uint64_t stage_seed(uint64_t run_seed, int scale_index, nets::Stage stage) {
  return derive_seed(run_seed, static_cast<uint64_t>(scale_index) * 2 + (stage == nets::Stage::restore ? 1 : 0));
}

losses::MixedLossSetup make_loss_setup(const TrainConfig& cfg, std::shared_ptr<losses::FeatureExtractor> vgg,
                                       std::shared_ptr<losses::FeatureExtractor> unet) {
  losses::MixedLossSetup s;
  s.weights = cfg.loss_weights;
  s.category_weights = cfg.category_weights;
  s.vgg_cfg = cfg.vgg_cfg;
  s.unet_cfg = cfg.unet_cfg;
  s.vgg = std::move(vgg);
  s.unet = std::move(unet);
  s.ms_ssim_levels = cfg.ms_ssim_levels;
  return s;
}

// ---------------------------------------------------------------------------
// Stage training

namespace {

void freeze_net(nets::UNetGenerator& g) {
  g->eval();
  g->set_inference_dropout(false);
  for (auto& p : g->parameters()) p.set_requires_grad(false);
}

void unfreeze_net(nets::UNetGenerator& g) {
  g->train();
  for (auto& p : g->parameters()) p.set_requires_grad(true);
}

void set_lr(torch::optim::Adam& opt, double lr) {
  for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
}

bool finite(double v) { return std::isfinite(v); }

void write_preview(const std::filesystem::path& dir, int scale, nets::Stage stage, int64_t epoch,
                   const torch::Tensor& real, const torch::Tensor& gen) {
  std::vector<Image> tiles;
  for (int64_t b = 0; b < real.size(0); ++b) {
    tiles.push_back(tensor_to_image(real, b));
    tiles.push_back(tensor_to_image(gen.detach(), b));
  }
  std::ostringstream name;
  name << "scale" << scale << "_" << nets::to_string(stage) << "_epoch" << epoch << ".png";
  std::filesystem::create_directories(dir);
  io::save_image_png(dir / name.str(), io::tile_grid(tiles, 2));
}

}  // namespace

StageTrainConfig effective_stage_config(const TrainConfig& cfg, const ScaleSchedule& schedule, int scale_index,
                                        nets::Stage stage) {
  StageTrainConfig c = stage == nets::Stage::super ? cfg.super_cfg : cfg.restore_cfg;
  if (cfg.final_batch_size > 0 && static_cast<size_t>(scale_index) + 1 == schedule.size()) c.batch_size = cfg.final_batch_size;
  return c;
}

nets::TwoStageGenerator init_level(const nets::GeneratorStack& stack, const TrainConfig& cfg, int scale_index) {
  const auto& sched = stack.schedule;
  if (scale_index < 0 || static_cast<size_t>(scale_index) >= sched.size()) throw ValidationError("scale index out of range");
  nets::GeneratorSpec spec;
  spec.depth = sched.gen_depths[static_cast<size_t>(scale_index)];
  spec.in_channels = nets::stage1_in_channels(scale_index, cfg.mode);
  spec.base_width = cfg.gen_base_width;
  spec.dropout_rate = cfg.dropout_rate;
  nets::TwoStageGenerator level;
  level.scale_index = scale_index;
  level.mode = cfg.mode;
  level.g_super = nets::build_generator(spec);
  if (scale_index > 0) {
    const auto& prev = stack.levels.at(static_cast<size_t>(scale_index - 1));
    if (prev.has_restore()) nets::transfer_weights(prev.g_restore, level.g_super);
  }
  return level;
}

StageResult train_stage(int scale_index, nets::Stage stage, nets::GeneratorStack& stack, const StageContext& ctx,
                        const StageTrainConfig& stage_cfg, uint64_t seed) {
  if (ctx.sample == nullptr || ctx.cfg == nullptr) throw ConfigError("train_stage needs a sample and a config");
  stage_cfg.validate();
  const auto& sched = stack.schedule;
  if (scale_index < 0 || static_cast<size_t>(scale_index) >= stack.levels.size())
    throw StateError("scale " + std::to_string(scale_index) + " has no networks");
  if (stack.trained_prefix() < static_cast<size_t>(scale_index))
    throw StateError("scale " + std::to_string(scale_index) + " requires all coarser scales trained");
  auto& level = stack.levels[static_cast<size_t>(scale_index)];
  if (level.g_super.is_empty()) throw StateError("stage 1 network missing");
  if (stage == nets::Stage::restore && !level.has_restore()) throw StateError("stage 2 network missing");

  const auto& sample = *ctx.sample;
  sample.validate();
  const Shape2 shape = sched.scales[static_cast<size_t>(scale_index)];
  const auto policy = augment::policy_for(ctx.cfg->strong, ctx.cfg->weak, sched, scale_index, stage);

  StageResult result;
  if (stage_cfg.epochs == 0) return result;

  torch::manual_seed(derive_seed(seed, 1));
  std::mt19937_64 rng(derive_seed(seed, 2));

  nets::UNetGenerator trainee = stage == nets::Stage::super ? level.g_super : level.g_restore;
  if (stage == nets::Stage::restore) freeze_net(level.g_super);
  unfreeze_net(trainee);

  nets::DiscriminatorSpec dspec;
  dspec.conv_layers = sched.disc_depths[static_cast<size_t>(scale_index)];
  dspec.in_channels = 2;
  dspec.base_width = ctx.cfg->disc_base_width;
  auto disc = nets::build_discriminator(dspec);
  disc->train();

  const auto adam = [&](const std::vector<torch::Tensor>& params) {
    return torch::optim::Adam(params, torch::optim::AdamOptions(stage_cfg.lr_init).betas({stage_cfg.adam_beta1, stage_cfg.adam_beta2}));
  };
  auto opt_g = adam(trainee->parameters());
  auto opt_d = adam(disc->parameters());

  for (int64_t epoch = 1; epoch <= stage_cfg.epochs; ++epoch) {
    const double lr = lr_schedule(stage_cfg, epoch);
    set_lr(opt_g, lr);
    set_lr(opt_d, lr);

    std::vector<augment::AugmentDraw> draws;
    std::vector<Image> reals;
    for (int b = 0; b < stage_cfg.batch_size; ++b) {
      draws.push_back(augment::sample_draw(policy, sample.image.shape(), rng));
      reals.push_back(resize_image(augment::apply_draw(draws.back(), sample.image), shape));
    }
    auto casc = augment::augmented_cascade_input(stack, sample.mask, draws, scale_index);
    const auto real = images_to_tensor(reals);
    const auto labels = labels_to_tensor(casc.masks);

    torch::Tensor out;
    if (stage == nets::Stage::super) {
      out = nets::stage1_forward(trainee, casc.prev_output, casc.cond, stack.mode);
    } else {
      torch::Tensor o_is;
      {
        torch::NoGradGuard guard;
        o_is = nets::stage1_forward(level.g_super, casc.prev_output, casc.cond, stack.mode);
      }
      out = nets::stage2_forward(trainee, o_is);
    }

    opt_d.zero_grad();
    auto loss_d = losses::adv_d_objective(disc, casc.cond, out, real);
    loss_d.backward();
    opt_d.step();

    opt_g.zero_grad();
    auto loss_adv = losses::adv_g_objective(disc, casc.cond, out);
    auto mixed = losses::loss_mixed(labels, out, real, ctx.loss);
    auto total = loss_adv + mixed.total;
    total.backward();
    opt_g.step();

    losses::LossReport report = mixed.report;
    report.adv_g = loss_adv.item<double>();
    report.adv_d = loss_d.item<double>();
    result.history.push_back(report);
    ++result.steps;
    if (ctx.log != nullptr) ctx.log->append(scale_index, stage, epoch, report);

    if (!finite(report.adv_d) || !finite(report.mixed) || !finite(report.adv_g)) {
      if (ctx.diag_dir) {
        nets::CheckpointManifest m{scale_index, stage, trainee->spec(), stack.mode, epoch};
        std::ostringstream name;
        name << "diverged_scale" << scale_index << "_" << nets::to_string(stage) << ".bin";
        nets::save_generator_checkpoint(*ctx.diag_dir / name.str(), trainee, m);
      }
      std::ostringstream msg;
      msg << "non-finite loss at scale " << scale_index << " stage " << nets::to_string(stage) << " epoch " << epoch
          << " (adv_d=" << report.adv_d << ", adv_g=" << report.adv_g << ", mixed=" << report.mixed << ")";
      throw DivergenceError(msg.str());
    }

    const bool preview = ctx.samples_dir &&
                         (epoch == stage_cfg.epochs || (ctx.cfg->preview_every > 0 && epoch % ctx.cfg->preview_every == 0));
    if (preview) write_preview(*ctx.samples_dir, scale_index, stage, epoch, real, out);
  }
  freeze_net(trainee);
  return result;
}

// ---------------------------------------------------------------------------
// Full pyramid

namespace {

// Keeps the header plus the first `rows` data lines so a resumed run appends
// exactly where the last finished stage stopped.
void truncate_log(const std::filesystem::path& path, int64_t rows) {
  if (!std::filesystem::exists(path)) return;
  std::ifstream is(path);
  std::ostringstream kept;
  std::string line;
  int64_t n = -1;
  while (n < rows && std::getline(is, line)) {
    if (line.empty()) continue;
    kept << line << "\n";
    ++n;
  }
  is.close();
  std::ofstream os(path, std::ios::trunc);
  os << kept.str();
}

}  // namespace

nets::GeneratorStack train_full(const SamplePair& sample, const TrainConfig& cfg, const losses::MixedLossSetup& loss,
                                const FullTrainOptions& opts) {
  cfg.validate();
  sample.validate();
  const auto sched = cfg.schedule();
  if (!(sample.image.shape() == sched.final_scale()))
    throw ValidationError("training sample is " + to_string(sample.image.shape()) + " but the schedule ends at " +
                          to_string(sched.final_scale()));

  const auto ckpt = opts.out.ckpt_dir();
  nets::GeneratorStack stack;
  if (opts.resume && std::filesystem::exists(ckpt / "schedule.json")) {
    stack = nets::load_stack(ckpt);
    if (!(stack.schedule == sched) || stack.mode != cfg.mode)
      throw StateError("checkpoint schedule under " + ckpt.string() + " does not match the config");
    int64_t rows = 0;
    if (std::filesystem::exists(opts.out.state_file())) rows = load_train_state(opts.out.state_file()).log_rows;
    truncate_log(opts.out.loss_log(), rows);
    for (auto& level : stack.levels) {
      freeze_net(level.g_super);
      if (level.has_restore()) freeze_net(level.g_restore);
    }
  } else {
    if (opts.resume) throw StateError("nothing to resume under " + ckpt.string());
    std::filesystem::remove(opts.out.loss_log());
    std::filesystem::remove(opts.out.state_file());
    stack.schedule = sched;
    stack.mode = cfg.mode;
    nets::save_schedule(ckpt, sched, cfg.mode);
  }

  losses::LossCsvLog log(opts.out.loss_log());
  StageContext ctx;
  ctx.sample = &sample;
  ctx.cfg = &cfg;
  ctx.loss = loss;
  ctx.log = &log;
  ctx.samples_dir = opts.out.samples_dir();
  ctx.diag_dir = ckpt;

  int done = 0;
  for (int i = 0; i < static_cast<int>(sched.size()); ++i) {
    for (const auto stage : {nets::Stage::super, nets::Stage::restore}) {
      const bool have = static_cast<size_t>(i) < stack.levels.size() &&
                        (stage == nets::Stage::super || stack.levels[static_cast<size_t>(i)].has_restore());
      if (have) continue;
      if (opts.stop_after_stages && done >= *opts.stop_after_stages) return stack;

      const uint64_t seed = stage_seed(cfg.seed, i, stage);
      if (stage == nets::Stage::super) {
        torch::manual_seed(seed);
        stack.levels.push_back(init_level(stack, cfg, i));
      } else {
        auto& level = stack.levels[static_cast<size_t>(i)];
        level.g_restore = nets::clone_generator(level.g_super);
      }
      const auto stage_cfg = effective_stage_config(cfg, sched, i, stage);
      train_stage(i, stage, stack, ctx, stage_cfg, seed);

      auto& level = stack.levels[static_cast<size_t>(i)];
      auto& net = stage == nets::Stage::super ? level.g_super : level.g_restore;
      nets::save_generator_checkpoint(nets::checkpoint_path(ckpt, i, stage), net,
                                      nets::CheckpointManifest{i, stage, net->spec(), cfg.mode, stage_cfg.epochs});
      TrainState state;
      state.current_scale = i;
      state.current_stage = stage;
      state.epoch = stage_cfg.epochs;
      state.seed = cfg.seed;
      state.stage_seed = seed;
      state.log_rows = losses::LossCsvLog::row_count(opts.out.loss_log());
      save_train_state(opts.out.state_file(), state);
      ++done;
    }
  }
  return stack;
}

}  // namespace cosingan::trainer
