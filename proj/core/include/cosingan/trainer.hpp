#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cosingan/augment.hpp"
#include "cosingan/core.hpp"
#include "cosingan/losses.hpp"
#include "cosingan/nets.hpp"
#include "json.hpp"

namespace cosingan::trainer {

struct StageTrainConfig {
  int64_t epochs = 4000;
  int batch_size = 4;
  double lr_init = 2e-4;
  int64_t lr_decay_start_epoch = 2000;
  double lr_decay_per_epoch_frac = 0.0005;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;

  void validate() const;
  bool operator==(const StageTrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const StageTrainConfig& c);
void from_json(const nlohmann::json& j, StageTrainConfig& c);

StageTrainConfig paper_super_config();
StageTrainConfig paper_restore_config();

/// Learning rate at a 1-based epoch: lr_init through the decay start, then a
/// linear ramp clamped at zero.
double lr_schedule(const StageTrainConfig& cfg, int64_t epoch);

/// Everything that shapes a training run apart from the sample and the frozen
/// feature backbones.
struct TrainConfig {
  int64_t max_size = 32;
  int n_scales = 3;
  ScheduleProfile profile = ScheduleProfile::desk;
  nets::CombineMode mode = nets::CombineMode::concat;
  int gen_base_width = 32;
  int disc_base_width = 32;
  double dropout_rate = 0.5;
  augment::AugmentPolicy strong = augment::strong_policy();
  augment::AugmentPolicy weak = augment::weak_policy();
  StageTrainConfig super_cfg = paper_super_config();
  StageTrainConfig restore_cfg = paper_restore_config();
  /// Batch size used at the final scale (0 keeps the stage value).
  int final_batch_size = 2;
  losses::LossWeights loss_weights;
  losses::CategoryWeightMap category_weights;
  losses::FeatureLossConfig vgg_cfg{{0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}, losses::BackboneKind::classifier_features};
  losses::FeatureLossConfig unet_cfg{{0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}, losses::BackboneKind::segmenter_features};
  int ms_ssim_levels = 5;
  /// Write a preview grid every N epochs (0: only after the last epoch).
  int64_t preview_every = 0;
  uint64_t seed = 0;

  void validate() const;
  ScaleSchedule schedule() const { return build_scale_schedule(max_size, n_scales, profile); }
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Small schedule and short stages for quick local runs.
TrainConfig desk_config(int64_t epochs_per_stage = 50);
TrainConfig paper_config();

/// Position reached by a run. Written after every finished stage so a run can
/// pick up at the next one.
struct TrainState {
  int current_scale = 0;
  nets::Stage current_stage = nets::Stage::super;
  int64_t epoch = 0;
  uint64_t seed = 0;
  uint64_t stage_seed = 0;
  int64_t log_rows = 0;

  bool operator==(const TrainState&) const = default;
};

void to_json(nlohmann::json& j, const TrainState& s);
void from_json(const nlohmann::json& j, TrainState& s);
void save_train_state(const std::filesystem::path& path, const TrainState& s);
TrainState load_train_state(const std::filesystem::path& path);

/// Seed of one (scale, stage) unit of work, independent of what ran before.
uint64_t stage_seed(uint64_t run_seed, int scale_index, nets::Stage stage);

struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path ckpt_dir() const { return root / "ckpt"; }
  std::filesystem::path loss_log() const { return root / "logs" / "losses.csv"; }
  std::filesystem::path samples_dir() const { return root / "samples"; }
  std::filesystem::path state_file() const { return ckpt_dir() / "state.json"; }
};

struct StageContext {
  const SamplePair* sample = nullptr;  ///< full-resolution training pair
  const TrainConfig* cfg = nullptr;
  losses::MixedLossSetup loss;         ///< extractors plus weights
  losses::LossCsvLog* log = nullptr;   ///< optional
  std::optional<std::filesystem::path> samples_dir;
  std::optional<std::filesystem::path> diag_dir;  ///< divergence checkpoints
};

struct StageResult {
  std::vector<losses::LossReport> history;
  int64_t steps = 0;
};

/// Trains one stage of one scale in place. For Stage::super the level's
/// g_super is updated; for Stage::restore g_restore is updated and g_super is
/// left untouched. A fresh discriminator is built for every call.
StageResult train_stage(int scale_index, nets::Stage stage, nets::GeneratorStack& stack, const StageContext& ctx,
                        const StageTrainConfig& stage_cfg, uint64_t seed);

/// Creates the untrained networks for scale i (stage 1 warm-started from the
/// previous scale's stage 2 where shapes allow).
nets::TwoStageGenerator init_level(const nets::GeneratorStack& stack, const TrainConfig& cfg, int scale_index);

/// Stage config with the final-scale batch override applied.
StageTrainConfig effective_stage_config(const TrainConfig& cfg, const ScaleSchedule& schedule, int scale_index,
                                        nets::Stage stage);

struct FullTrainOptions {
  OutputLayout out;
  bool resume = false;
  /// Stop after this many stages in this invocation (testing resumption).
  std::optional<int> stop_after_stages;
};

/// Trains every stage of every scale coarse to fine, checkpointing after each.
/// With resume, stages already on disk are loaded instead of retrained.
nets::GeneratorStack train_full(const SamplePair& sample, const TrainConfig& cfg, const losses::MixedLossSetup& loss,
                                const FullTrainOptions& opts);

/// Builds the loss setup from config weights and extractors.
losses::MixedLossSetup make_loss_setup(const TrainConfig& cfg, std::shared_ptr<losses::FeatureExtractor> vgg,
                                       std::shared_ptr<losses::FeatureExtractor> unet);

}  // namespace cosingan::trainer
