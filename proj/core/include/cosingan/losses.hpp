#pragma once

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cosingan/core.hpp"
#include "cosingan/nets.hpp"
#include "json.hpp"

namespace cosingan::losses {

/// Weights of the four reconstruction terms.
struct LossWeights {
  double wppl = 10.0;
  double ms_ssim = 1.0;
  double ms_fvl = 10.0;
  double ms_ful = 10.0;

  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

/// Per-class pixel weights of the weighted pixel-level L1 loss.
struct CategoryWeightMap {
  double background = 0.1;
  double lung = 0.5;
  double infection = 1.0;

  void validate() const;
  double operator[](int label) const { return label == 0 ? background : (label == 1 ? lung : infection); }
  bool operator==(const CategoryWeightMap&) const = default;
};

enum class BackboneKind { classifier_features, segmenter_features };
enum class FeatureNorm { l1, l2 };

struct FeatureLossConfig {
  std::vector<int> layer_ids{0, 1, 2, 3, 4};
  std::vector<double> layer_weights{1.0, 1.0, 1.0, 1.0, 1.0};
  BackboneKind backbone_kind = BackboneKind::classifier_features;

  void validate() const;
  bool operator==(const FeatureLossConfig&) const = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);
void to_json(nlohmann::json& j, const CategoryWeightMap& w);
void from_json(const nlohmann::json& j, CategoryWeightMap& w);
void to_json(nlohmann::json& j, const FeatureLossConfig& c);
void from_json(const nlohmann::json& j, FeatureLossConfig& c);

/// Frozen multi-level feature extractor. Implementations must not hold
/// parameters that require gradients; gradients still flow to the input.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int64_t in_channels() const = 0;
  virtual int num_layers() const = 0;
  /// Feature maps for the requested layer ids, in request order.
  virtual std::vector<torch::Tensor> features(const torch::Tensor& x, const std::vector<int>& layer_ids) = 0;
  /// Moves the extractor to another dtype (used by double-precision checks).
  virtual void to(torch::ScalarType dtype) = 0;
};

/// Returns the input itself as layer 0.
class IdentityExtractor final : public FeatureExtractor {
 public:
  explicit IdentityExtractor(int64_t channels = 1) : channels_(channels) {}
  int64_t in_channels() const override { return channels_; }
  int num_layers() const override { return 1; }
  std::vector<torch::Tensor> features(const torch::Tensor& x, const std::vector<int>& layer_ids) override;
  void to(torch::ScalarType) override {}

 private:
  int64_t channels_;
};

/// ell_WPPL: (1/P) sum_p M(C^p) |O^p - X^p|. `labels` is a (B,1,H,W) integer
/// tensor of class ids.
torch::Tensor loss_wppl(const torch::Tensor& labels, const torch::Tensor& gen, const torch::Tensor& real,
                        const CategoryWeightMap& w);

inline constexpr int kMsSsimWindow = 11;
inline constexpr double kMsSsimSigma = 1.5;
inline constexpr std::array<double, 5> kMsSsimLevelWeights = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

/// Largest level count <= requested for which every level keeps at least an
/// 11-pixel window; 0 when even a single level does not fit.
int ms_ssim_levels(int64_t min_dim, int requested);

/// Multi-scale SSIM for images with data range 2 ([-1, 1]). Level weights are
/// the first `levels` standard weights renormalized to sum to one. Negative
/// per-level terms keep their sign (sign(v)|v|^w), so the value lies in
/// [-1, 1].
torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& y, int levels = 5);

/// 1 - MS-SSIM with levels auto-reduced to what the image size supports.
torch::Tensor loss_ms_ssim(const torch::Tensor& gen, const torch::Tensor& real, int levels = 5);

/// sum_j eta_j (1/P_j) ||F_j(real) - F_j(gen)||, with L1 or squared-L2 norm.
torch::Tensor loss_feature(const torch::Tensor& gen, const torch::Tensor& real, FeatureExtractor& extractor,
                           const FeatureLossConfig& cfg, FeatureNorm norm);

struct LossReport {
  double wppl = 0.0;
  double ms_ssim = 0.0;
  double ms_fvl = 0.0;
  double ms_ful = 0.0;
  double mixed = 0.0;
  double adv_g = 0.0;
  double adv_d = 0.0;
};

struct MixedLoss {
  torch::Tensor total;  ///< differentiable weighted sum
  LossReport report;
};

/// Shared pieces of the mixed reconstruction loss. Extractors may be null only
/// when their weight is zero.
struct MixedLossSetup {
  LossWeights weights;
  CategoryWeightMap category_weights;
  FeatureLossConfig vgg_cfg{{0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}, BackboneKind::classifier_features};
  FeatureLossConfig unet_cfg{{0, 1, 2, 3, 4}, {1, 1, 1, 1, 1}, BackboneKind::segmenter_features};
  std::shared_ptr<FeatureExtractor> vgg;
  std::shared_ptr<FeatureExtractor> unet;
  int ms_ssim_levels = 5;
};

MixedLoss loss_mixed(const torch::Tensor& labels, const torch::Tensor& gen, const torch::Tensor& real,
                     const MixedLossSetup& setup);

/// Mean binary cross-entropy of patch logits against a constant target.
torch::Tensor bce_logits(const torch::Tensor& logits, double target);

/// Generator objective: l_adv(D(C, G), 1).
torch::Tensor adv_g_objective(nets::PatchDiscriminator& disc, const torch::Tensor& cond, const torch::Tensor& gen_out);

/// Discriminator objective: 0.5 (l_adv(D(C, G), 0) + l_adv(D(C, X), 1)). The
/// generated image is detached.
torch::Tensor adv_d_objective(nets::PatchDiscriminator& disc, const torch::Tensor& cond, const torch::Tensor& gen_out,
                              const torch::Tensor& real);

/// Append-only CSV of per-step losses.
class LossCsvLog {
 public:
  static constexpr const char* kHeader = "scale,stage,epoch,wppl,ms_ssim,ms_fvl,ms_ful,mixed,adv_g,adv_d";

  explicit LossCsvLog(std::filesystem::path path);
  void append(int scale, nets::Stage stage, int64_t epoch, const LossReport& r);
  const std::filesystem::path& path() const { return path_; }

  /// Number of data rows currently in the file.
  static int64_t row_count(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
};

}  // namespace cosingan::losses
