#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "cosingan/core.hpp"
#include "cosingan/eval.hpp"
#include "json.hpp"

namespace cosingan::data {

// ---------------------------------------------------------------------------
// Phantoms

/// Intensity and texture of one imaging style. Levels are in [-1, 1].
struct PhantomTexture {
  double body_level = 0.1;
  double lung_level = -0.6;
  double infection_level = 0.25;
  double noise_std = 0.08;
  int smooth_radius = 1;  ///< box blur radius applied to the noise field
  double gradient = 0.0;  ///< vertical intensity ramp across lungs

  bool operator==(const PhantomTexture&) const = default;
};

struct PhantomSpec {
  int64_t size = 32;
  /// Lung semi-axes as fractions of the canvas, (min, max) for x then y.
  std::array<double, 2> lung_axis_x{0.12, 0.17};
  std::array<double, 2> lung_axis_y{0.24, 0.32};
  int max_infections = 3;
  double infection_prob = 0.6;  ///< chance a slice carries any infection
  std::array<double, 2> infection_radius{0.05, 0.11};
  int slices_per_scan = 4;
  std::array<PhantomTexture, 2> textures{
      PhantomTexture{0.1, -0.6, 0.25, 0.08, 1, 0.0},
      PhantomTexture{0.3, -0.2, 0.6, 0.05, 0, 0.25},
  };

  void validate() const;
  bool operator==(const PhantomSpec&) const = default;
};

void to_json(nlohmann::json& j, const PhantomSpec& s);
void from_json(const nlohmann::json& j, PhantomSpec& s);

/// One phantom slice. Infection blobs are clipped to the lungs, so the mask
/// never holds infection outside lung.
SamplePair make_phantom(const PhantomSpec& spec, int modality_tag, uint64_t seed);

/// n slices grouped into scans of spec.slices_per_scan; scans alternate
/// between the two modality tags. Scan ids are "<prefix><k>".
eval::EvalCorpus make_phantom_corpus(const PhantomSpec& spec, int n, uint64_t seed, const std::string& prefix = "scan");

/// L1 distance between normalized 32-bin intensity histograms.
double histogram_distance(const std::vector<Image>& a, const std::vector<Image>& b);

// ---------------------------------------------------------------------------
// Raw volumes

/// A volume on disk is a JSON header next to two raw little-endian blobs:
/// {"shape": [D, H, W], "image": "x.f32", "labels": "x.u8",
///  "scan_id": "...", "modality_tag": 0, "window": [lo, hi] (optional)}.
struct Volume {
  std::array<int64_t, 3> shape{0, 0, 0};  ///< depth, height, width
  std::vector<float> image;
  std::vector<uint8_t> labels;
  std::string scan_id;
  int modality_tag = 0;
  std::optional<std::array<double, 2>> window;
};

void write_volume(const std::filesystem::path& header, const Volume& v);
Volume read_volume(const std::filesystem::path& header);

/// Maps source labels {0: background, 1: left lung, 2: right lung,
/// 3: infection} onto the three condition classes.
uint8_t remap_label(uint8_t source);

struct IngestResult {
  std::vector<SamplePair> samples;
  std::vector<std::string> names;  ///< "<scan>_<index>"
};

/// Slices the volume axially, windows intensities to [-1, 1], resizes images
/// bilinearly and masks by nearest neighbour, and (when out_dir is set)
/// writes images/<name>.png, masks/<name>.png and corpus.json.
IngestResult ingest_volume(const std::filesystem::path& header, int64_t resolution,
                           const std::optional<std::filesystem::path>& out_dir = {});

// ---------------------------------------------------------------------------
// Corpus directories: images/, masks/, corpus.json

void save_corpus(const std::filesystem::path& dir, const eval::EvalCorpus& corpus);
eval::EvalCorpus load_corpus(const std::filesystem::path& dir);

/// Masks from <dir>/masks/*.png (or <dir>/*.png), sorted by file name.
std::vector<ConditionMask> load_masks(const std::filesystem::path& dir);

}  // namespace cosingan::data
