#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cosingan/data.hpp"
#include "cosingan/eval.hpp"
#include "cosingan/synth.hpp"
#include "cosingan/trainer.hpp"
#include "json.hpp"

namespace cosingan::eval {
void to_json(nlohmann::json& j, const BackboneTrainConfig& c);
void from_json(const nlohmann::json& j, BackboneTrainConfig& c);
}  // namespace cosingan::eval

namespace cosingan::synth {
void to_json(nlohmann::json& j, const RcDeltas& d);
void from_json(const nlohmann::json& j, RcDeltas& d);
}  // namespace cosingan::synth

namespace cosingan::experiment {

/// Complete description of a run. Seeds inside the nested configs are
/// replaced by streams derived from `seed`, so one number fixes the run.
struct RunConfig {
  data::PhantomSpec phantom;
  int train_samples = 64;
  int test_samples = 32;
  trainer::TrainConfig train = trainer::desk_config(50);
  eval::BackboneTrainConfig backbones = eval::default_backbone_config(0);
  eval::ProbeTrainConfig seg_light;
  eval::ProbeTrainConfig seg_heavy;
  eval::ProbeTrainConfig cls_light;
  eval::ProbeTrainConfig cls_heavy;
  /// Segmentation probes per table cell, each with its own seed; per-scan DSC
  /// is averaged over them before the interval is taken.
  int seg_repeats = 1;
  synth::RcDeltas deltas = synth::paper_deltas();
  bool dropout_at_inference = false;
  bool run_classifiers = true;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

/// Desk defaults: 32 px phantoms, 400-epoch stages, dropout kept on while
/// synthesizing, probe learning rate 1e-3, three segmentation probes per cell.
RunConfig desk_run_config(uint64_t seed = 0);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

inline const std::vector<std::string> kTrainingSets = {"OC-TS", "Sin-TS", "Two-TS", "O-STs", "RC-STs", "IF-STs"};

struct ProbeRow {
  std::string training_set;
  std::string task;  ///< "segmentation" or "classification"
  eval::ProbeArch arch = eval::ProbeArch::light;
  double headline = 0.0;  ///< infection DSC or accuracy
  nlohmann::json metrics;
};

struct ExperimentReport {
  std::vector<ProbeRow> rows;
  std::map<std::string, eval::QualityScore> quality;  ///< synthetic set -> score
  std::map<std::string, size_t> corpus_sizes;

  const ProbeRow& row(const std::string& set, const std::string& task, eval::ProbeArch arch) const;
  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// The six training sets built from a real corpus and two trained stacks.
std::map<std::string, eval::EvalCorpus> build_training_sets(const eval::EvalCorpus& real, size_t sin_index,
                                                            size_t two_index, nets::GeneratorStack& stack_a,
                                                            nets::GeneratorStack& stack_b, const RunConfig& cfg);

/// Index of the sample of `modality` with the most infection pixels.
size_t pick_training_sample(const eval::EvalCorpus& corpus, int modality);

struct ExperimentOptions {
  std::filesystem::path out;
  /// Reuse stages and probe results already persisted under `out`.
  bool resume = false;
};

/// Phantom corpora, two single-sample generators, six training sets, probes on
/// each, and the quality table. Partial results land under out/ as they
/// finish.
ExperimentReport run_experiment(const RunConfig& cfg, const ExperimentOptions& opts);

}  // namespace cosingan::experiment
