#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "cosingan/augment.hpp"
#include "cosingan/core.hpp"
#include "cosingan/losses.hpp"
#include "json.hpp"

namespace cosingan::eval {

enum class Split { train, test };

/// Samples grouped by scan. scan_ids[k] belongs to samples[k].
struct EvalCorpus {
  std::vector<SamplePair> samples;
  std::vector<std::string> scan_ids;
  Split split = Split::train;

  size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  void add(SamplePair s, std::string scan_id);
  void validate() const;
  std::vector<std::string> unique_scans() const;
};

/// Throws ValidationError when the corpora share a scan id.
void check_disjoint(const EvalCorpus& train, const EvalCorpus& test);

enum class ProbeArch { light, heavy };
std::string to_string(ProbeArch a);
ProbeArch parse_arch(const std::string& s);

// ---------------------------------------------------------------------------
// Probe networks

/// Encoder-decoder segmenter producing 3-class logits. "light" is a shallow
/// single-conv network; "heavy" is a four-level double-conv UNet whose
/// encoder stages also serve as the segmenter-feature backbone.
class SegmenterImpl : public torch::nn::Module {
 public:
  explicit SegmenterImpl(ProbeArch arch);

  torch::Tensor forward(torch::Tensor x);
  /// Encoder stage outputs, finest first (length == encoder_levels()).
  std::vector<torch::Tensor> encoder_features(torch::Tensor x);
  int encoder_levels() const { return static_cast<int>(enc_.size()); }
  ProbeArch arch() const { return arch_; }

 private:
  ProbeArch arch_;
  std::vector<torch::nn::Sequential> enc_;
  std::vector<torch::nn::Sequential> dec_;
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(Segmenter);

/// Binary (infection present) classifier over 3-channel inputs.
class ClassifierImpl : public torch::nn::Module {
 public:
  explicit ClassifierImpl(ProbeArch arch);
  /// Logits of shape (B).
  torch::Tensor forward(torch::Tensor x);
  ProbeArch arch() const { return arch_; }

 private:
  ProbeArch arch_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> blocks_;
  std::vector<torch::nn::Conv2d> shortcuts_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(Classifier);

/// Five-stage VGG-style classifier; stage outputs are the classifier-feature
/// maps used by the MS-FVL term.
class VggBackboneImpl : public torch::nn::Module {
 public:
  VggBackboneImpl();
  torch::Tensor forward(torch::Tensor x);
  std::vector<torch::Tensor> stage_features(torch::Tensor x);
  static constexpr int kStages = 5;

 private:
  std::vector<torch::nn::Sequential> stages_;
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(VggBackbone);

/// Replicates single-channel input to 3 channels.
torch::Tensor to_three_channels(const torch::Tensor& x);

// ---------------------------------------------------------------------------
// Probe training

struct ProbeTrainConfig {
  int epochs = 50;
  int batch_size = 8;
  double lr = 1e-4;
  int64_t decay_start = 25;
  double decay_frac = 0.04;
  double beta1 = 0.9;
  double beta2 = 0.999;
  augment::AugmentPolicy policy = augment::strong_policy();
  bool augment = true;
  uint64_t seed = 0;

  bool operator==(const ProbeTrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const ProbeTrainConfig& c);
void from_json(const nlohmann::json& j, ProbeTrainConfig& c);

/// Segmenter defaults: 50 epochs, lr 1e-4 decayed 4%/epoch after 25, batch 8
/// (light) or 2 (heavy).
ProbeTrainConfig paper_segmenter_config(ProbeArch arch);
/// Classifier defaults: 10 epochs, batch 16, lr 1e-4 decayed 20%/epoch after 5.
ProbeTrainConfig paper_classifier_config();

inline constexpr std::array<double, 3> kSegmenterClassWeights = {0.1, 1.0, 5.0};

/// mean_p w(y_p) * (-log softmax(logits)_p[y_p]); logits (B,3,H,W), labels
/// (B,1,H,W) or (B,H,W).
torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                     const std::array<double, 3>& class_weights = kSegmenterClassWeights);

/// 1 when the mask has any infection pixel.
int classification_label(const ConditionMask& mask);

template <typename Net>
struct Trained {
  Net net{nullptr};
  std::vector<double> epoch_losses;  ///< mean training loss per epoch
};

Trained<Segmenter> train_segmenter(const EvalCorpus& corpus, ProbeArch arch, const ProbeTrainConfig& cfg);
Trained<Classifier> train_classifier(const EvalCorpus& corpus, ProbeArch arch, const ProbeTrainConfig& cfg);
Trained<VggBackbone> train_vgg_backbone(const EvalCorpus& corpus, const ProbeTrainConfig& cfg);

std::vector<ConditionMask> segment(Segmenter& net, const std::vector<Image>& images);
std::vector<int> classify(Classifier& net, const std::vector<Image>& images);

// ---------------------------------------------------------------------------
// Metrics

/// Dice coefficient for one class; 1 when both are empty, 0 when exactly one is.
double dsc(const ConditionMask& pred, const ConditionMask& truth, uint8_t class_id);

struct MetricsReport {
  std::vector<std::string> groups;
  std::vector<double> per_group;  ///< NaN marks an undefined group value
  double mean = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  int64_t n = 0;         ///< groups contributing
  int64_t excluded = 0;  ///< undefined groups left out
};

/// Mean and two-sided 95% Student-t interval (n - 1 degrees of freedom) over
/// the defined values; bounds are NaN when fewer than two values are defined.
MetricsReport summarize(std::vector<std::string> groups, std::vector<double> values);

struct ConfusionCounts {
  int64_t tp = 0;
  int64_t fp = 0;
  int64_t tn = 0;
  int64_t fn = 0;
  bool operator==(const ConfusionCounts&) const = default;
};

struct ClassificationReport {
  std::map<std::string, ConfusionCounts> per_scan;
  MetricsReport sensitivity;
  MetricsReport specificity;
  MetricsReport accuracy;
};

ClassificationReport classification_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                            const std::vector<std::string>& scan_ids);
/// Rebuilds the report from persisted per-scan confusion counts.
ClassificationReport classification_report_from_counts(const std::map<std::string, ConfusionCounts>& per_scan);

struct SegmentationReport {
  /// modality tag -> pooled DSC for (lung, infection)
  std::map<int, std::pair<double, double>> per_modality;
  MetricsReport lung;       ///< per-scan DSC with CI
  MetricsReport infection;  ///< per-scan DSC with CI
};

SegmentationReport segmentation_metrics(const std::vector<ConditionMask>& preds, const EvalCorpus& truth);

/// Averages per-scan and per-modality DSC over reports on the same test set,
/// then recomputes the intervals.
SegmentationReport average_segmentation(const std::vector<SegmentationReport>& reports);

struct QualityScore {
  std::map<int, std::pair<double, double>> per_modality;  ///< tag -> mean (lung, infection) DSC
  double lung = 0.0;
  double infection = 0.0;
};

/// Segments every synthesized image with the oracle and scores it against the
/// mask that generated it.
QualityScore image_quality_score(const EvalCorpus& synth_corpus, Segmenter& oracle);

/// Table-1-style rendering: one row per modality plus overall.
std::string format_quality_table(const QualityScore& q);

nlohmann::json to_json(const MetricsReport& r);
nlohmann::json to_json(const ClassificationReport& r);
nlohmann::json to_json(const SegmentationReport& r);
nlohmann::json to_json(const QualityScore& q);

// ---------------------------------------------------------------------------
// Frozen feature backbones for the reconstruction loss

class VggFeatureExtractor final : public losses::FeatureExtractor {
 public:
  explicit VggFeatureExtractor(VggBackbone net);
  int64_t in_channels() const override { return 3; }
  int num_layers() const override { return VggBackbone::Impl::kStages; }
  std::vector<torch::Tensor> features(const torch::Tensor& x, const std::vector<int>& layer_ids) override;
  void to(torch::ScalarType dtype) override;
  VggBackbone& net() { return net_; }

 private:
  VggBackbone net_;
};

class SegmenterFeatureExtractor final : public losses::FeatureExtractor {
 public:
  explicit SegmenterFeatureExtractor(Segmenter net);
  int64_t in_channels() const override { return 1; }
  int num_layers() const override { return net_->encoder_levels(); }
  std::vector<torch::Tensor> features(const torch::Tensor& x, const std::vector<int>& layer_ids) override;
  void to(torch::ScalarType dtype) override;
  Segmenter& net() { return net_; }

 private:
  Segmenter net_;
};

struct FeatureBackbones {
  std::shared_ptr<VggFeatureExtractor> vgg;
  std::shared_ptr<SegmenterFeatureExtractor> unet;
};

struct BackboneTrainConfig {
  ProbeTrainConfig classifier;
  ProbeTrainConfig segmenter;
  bool operator==(const BackboneTrainConfig&) const = default;
};

BackboneTrainConfig default_backbone_config(uint64_t seed);

/// Trains both backbones on the corpus and freezes them.
FeatureBackbones train_feature_backbones(const EvalCorpus& corpus, const BackboneTrainConfig& cfg);
/// Randomly initialized frozen backbones (tests and quick runs).
FeatureBackbones random_feature_backbones(uint64_t seed);
void save_feature_backbones(const std::filesystem::path& path, const FeatureBackbones& b);
FeatureBackbones load_feature_backbones(const std::filesystem::path& path);

/// Freezes a module: eval mode, no parameter gradients.
void freeze(torch::nn::Module& m);

}  // namespace cosingan::eval
