#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cosingan/core.hpp"
#include "json.hpp"

namespace cosingan::nets {

/// How the upsampled previous output is combined with the condition before
/// entering the stage-1 generator.
enum class CombineMode { concat, add };

std::string to_string(CombineMode m);
CombineMode parse_combine_mode(const std::string& s);

struct GeneratorSpec {
  int depth = 4;
  int in_channels = 1;
  int base_width = 32;
  double dropout_rate = 0.5;

  void validate() const;
  bool operator==(const GeneratorSpec&) const = default;
};

struct DiscriminatorSpec {
  int conv_layers = 6;
  int in_channels = 2;
  int base_width = 32;

  void validate() const;
  bool operator==(const DiscriminatorSpec&) const = default;
};

void to_json(nlohmann::json& j, const GeneratorSpec& s);
void from_json(const nlohmann::json& j, GeneratorSpec& s);
void to_json(nlohmann::json& j, const DiscriminatorSpec& s);
void from_json(const nlohmann::json& j, DiscriminatorSpec& s);

/// pix2pix-style UNet: `depth` stride-2 encoder convolutions mirrored by
/// transposed convolutions, skip connections at every level, tanh output.
/// Dropout sits in the inner decoder blocks and is active while training or
/// when inference dropout is switched on.
class UNetGeneratorImpl : public torch::nn::Module {
 public:
  explicit UNetGeneratorImpl(GeneratorSpec spec);

  torch::Tensor forward(torch::Tensor x);

  const GeneratorSpec& spec() const { return spec_; }
  void set_inference_dropout(bool on) { inference_dropout_ = on; }
  bool inference_dropout() const { return inference_dropout_; }

  /// Spatial size of the innermost feature map for a given input size.
  static int64_t bottleneck_size(int64_t input, int depth) { return input >> depth; }

 private:
  GeneratorSpec spec_;
  bool inference_dropout_ = false;
  std::vector<torch::nn::Conv2d> down_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<bool> down_norm_;
  std::vector<bool> up_dropout_;
};
TORCH_MODULE(UNetGenerator);

/// Patch discriminator over (condition, image) pairs. The first min(3, L-2)
/// layers halve the resolution; the remaining 3x3 layers keep it, so the
/// receptive field grows with L while the logit map tracks the input size.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(DiscriminatorSpec spec);

  /// x is the channel concatenation of condition and image.
  torch::Tensor forward(torch::Tensor x);
  torch::Tensor score(const torch::Tensor& cond, const torch::Tensor& image);

  const DiscriminatorSpec& spec() const { return spec_; }

 private:
  DiscriminatorSpec spec_;
  std::vector<torch::nn::Conv2d> convs_;
  std::vector<bool> norm_;
};
TORCH_MODULE(PatchDiscriminator);

UNetGenerator build_generator(const GeneratorSpec& spec);
PatchDiscriminator build_discriminator(const DiscriminatorSpec& spec);

int64_t parameter_count(const torch::nn::Module& m);

/// Fresh module with identical spec, weights and dropout switch.
UNetGenerator clone_generator(const UNetGenerator& src);

/// Copies every parameter whose name and shape match. When only the input
/// channel dimension differs, the overlapping channel slice is copied.
/// Returns the number of tensors fully or partially copied.
int transfer_weights(const UNetGenerator& from, UNetGenerator& to);

// ---------------------------------------------------------------------------
// Two-stage generator

struct TwoStageGenerator {
  UNetGenerator g_super{nullptr};
  UNetGenerator g_restore{nullptr};
  int scale_index = 0;
  CombineMode mode = CombineMode::concat;

  bool has_restore() const { return !g_restore.is_empty(); }
};

/// Stage-1 input channel count at a scale.
int stage1_in_channels(int scale_index, CombineMode mode);

/// O_is = G_is(U(O_{i-1}) (+) C_i); at scale 0 `prev` must be empty.
torch::Tensor stage1_forward(UNetGenerator& g_super, const std::optional<torch::Tensor>& prev, const torch::Tensor& cond,
                             CombineMode mode);

/// O_ir = G_ir(O_is). The stage-2 net shares the stage-1 architecture, so O_is
/// is replicated into every input slot.
torch::Tensor stage2_forward(UNetGenerator& g_restore, const torch::Tensor& o_is);

torch::Tensor two_stage_forward(TwoStageGenerator& gen, const std::optional<torch::Tensor>& prev, const torch::Tensor& cond);

/// Bilinear upsampling (half-pixel centers) to `target`.
torch::Tensor upsample_to(const torch::Tensor& x, Shape2 target);

// ---------------------------------------------------------------------------
// Stacks and checkpoints

enum class Stage { super, restore };
std::string to_string(Stage s);
Stage parse_stage(const std::string& s);

struct CheckpointManifest {
  int scale_index = 0;
  Stage stage = Stage::super;
  GeneratorSpec spec;
  CombineMode mode = CombineMode::concat;
  int64_t epoch = 0;
};

void to_json(nlohmann::json& j, const CheckpointManifest& m);
void from_json(const nlohmann::json& j, CheckpointManifest& m);

/// Writes weights and manifest into one archive (write-temp-then-rename).
void save_generator_checkpoint(const std::filesystem::path& path, const UNetGenerator& net, const CheckpointManifest& manifest);
std::pair<UNetGenerator, CheckpointManifest> load_generator_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& ckpt_dir, int scale_index, Stage stage);

/// Trained pyramid. `levels[i]` is scale i; levels beyond the trained prefix
/// are absent.
struct GeneratorStack {
  ScaleSchedule schedule;
  CombineMode mode = CombineMode::concat;
  std::vector<TwoStageGenerator> levels;

  size_t scale_count() const { return levels.size(); }
  /// Number of leading scales whose both stages are trained.
  size_t trained_prefix() const;
  bool complete() const { return trained_prefix() == schedule.size(); }
  /// Switches every generator into eval mode with the given inference dropout.
  void freeze(bool inference_dropout = false);
};

}  // namespace cosingan::nets

namespace cosingan {
void to_json(nlohmann::json& j, const ScaleSchedule& s);
void from_json(const nlohmann::json& j, ScaleSchedule& s);
}  // namespace cosingan

namespace cosingan::nets {

void save_schedule(const std::filesystem::path& ckpt_dir, const ScaleSchedule& schedule, CombineMode mode);
/// Loads schedule.json plus every checkpoint present under ckpt_dir.
GeneratorStack load_stack(const std::filesystem::path& ckpt_dir);

}  // namespace cosingan::nets
