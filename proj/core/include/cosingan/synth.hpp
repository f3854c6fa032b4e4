#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cosingan/core.hpp"
#include "cosingan/nets.hpp"
#include "json.hpp"

namespace cosingan::synth {

/// Noise magnitudes for condition randomization, in 8-bit pixel units.
struct RcDeltas {
  int background = 16;
  int lung = 16;
  int infection = 32;

  /// Throws ConfigError unless each delta is in [0,127] and the three
  /// ranges stay disjoint.
  void validate() const;
  bool operator==(const RcDeltas&) const = default;
};

RcDeltas paper_deltas();
RcDeltas parse_deltas(const std::string& text);  ///< "b,l,i"

/// Per-class pixel values: background in [0, db], lung in [128-dl, 128+dl],
/// infection in [255-di, 255]. One integer per class.
std::array<double, 3> draw_rc_values(const RcDeltas& d, std::mt19937_64& rng);

/// Encoded (1,1,H,W) condition with one randomized value per class.
torch::Tensor randomize_condition(const ConditionMask& mask, const RcDeltas& d, std::mt19937_64& rng);

/// zeta * a + (1 - zeta) * b; exact copies at zeta 0 and 1.
torch::Tensor fuse(const torch::Tensor& a, const torch::Tensor& b, double zeta);

struct SynthesisRequest {
  ConditionMask mask;  ///< at the schedule's final resolution
  bool dropout_at_inference = false;
  std::optional<RcDeltas> rc_noise;
  uint64_t seed = 0;
};

struct SynthesisTrace {
  torch::Tensor image;                       ///< (1,1,H,W) at the final scale
  std::vector<torch::Tensor> intermediates;  ///< output of every scale
  std::vector<std::array<double, 3>> rc_values;  ///< per scale, when RC is on
};

/// Runs the pyramid coarse to fine on the request's condition.
torch::Tensor synthesize(nets::GeneratorStack& stack, const SynthesisRequest& req);
SynthesisTrace synthesize_traced(nets::GeneratorStack& stack, const SynthesisRequest& req);

struct FusionRequest {
  ConditionMask mask;
  std::optional<double> zeta;  ///< empty: draw uniformly from [0, 1]
  bool dropout_at_inference = false;
  uint64_t seed = 0;
};

struct FusionResult {
  torch::Tensor image;
  double zeta = 0.0;
};

/// Synthesizes with both stacks and blends the outputs. The stacks must share
/// a schedule.
FusionResult synthesize_fused(nets::GeneratorStack& a, nets::GeneratorStack& b, const FusionRequest& req);

enum class CorpusMode { o_st, rc_st, if_st };
std::string to_string(CorpusMode m);
CorpusMode parse_corpus_mode(const std::string& s);

struct CorpusOptions {
  CorpusMode mode = CorpusMode::o_st;
  uint64_t seed = 0;
  bool dropout_at_inference = false;
  RcDeltas deltas = paper_deltas();
  /// modality tag recorded for samples of each stack; fused samples take the
  /// tag of the dominant stack
  std::vector<int> stack_modalities{0, 1};
};

struct CorpusEntry {
  int index = 0;
  uint64_t seed = 0;
  int stack = 0;  ///< generating stack; -1 for fused samples
  std::optional<double> zeta;
  std::vector<std::array<double, 3>> rc_values;
};

struct GeneratedCorpus {
  std::vector<SamplePair> samples;
  std::vector<CorpusEntry> entries;
  nlohmann::json manifest;
};

/// One synthesized image per mask. With two stacks, O-ST and RC-ST alternate
/// between them (mask k uses stack k mod 2) and IF-ST fuses both. When
/// `out_dir` is set, writes images/NNNNN.png, masks/NNNNN.png and
/// manifest.json.
GeneratedCorpus generate_corpus(std::vector<nets::GeneratorStack*> stacks, const std::vector<ConditionMask>& masks,
                                const CorpusOptions& opts, const std::optional<std::filesystem::path>& out_dir = {});

}  // namespace cosingan::synth
