#include "cosingan/losses.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace cosingan::losses {

namespace nnf = torch::nn::functional;

void LossWeights::validate() const {
  for (double v : {wppl, ms_ssim, ms_fvl, ms_ful}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("loss weights must be finite and non-negative");
  }
  if (wppl + ms_ssim + ms_fvl + ms_ful <= 0.0) throw ConfigError("at least one loss weight must be positive");
}

void CategoryWeightMap::validate() const {
  for (double v : {background, lung, infection}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("category weights must be finite and non-negative");
  }
}

void FeatureLossConfig::validate() const {
  if (layer_ids.empty() || layer_ids.size() != layer_weights.size())
    throw ConfigError("feature loss needs equally many layer ids and weights (>= 1)");
  for (double w : layer_weights) {
    if (!(w >= 0.0)) throw ConfigError("feature layer weights must be non-negative");
  }
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"wppl", w.wppl}, {"ms_ssim", w.ms_ssim}, {"ms_fvl", w.ms_fvl}, {"ms_ful", w.ms_ful}};
}
void from_json(const nlohmann::json& j, LossWeights& w) {
  j.at("wppl").get_to(w.wppl);
  j.at("ms_ssim").get_to(w.ms_ssim);
  j.at("ms_fvl").get_to(w.ms_fvl);
  j.at("ms_ful").get_to(w.ms_ful);
}
void to_json(nlohmann::json& j, const CategoryWeightMap& w) {
  j = {{"background", w.background}, {"lung", w.lung}, {"infection", w.infection}};
}
void from_json(const nlohmann::json& j, CategoryWeightMap& w) {
  j.at("background").get_to(w.background);
  j.at("lung").get_to(w.lung);
  j.at("infection").get_to(w.infection);
}
void to_json(nlohmann::json& j, const FeatureLossConfig& c) {
  j = {{"layer_ids", c.layer_ids},
       {"layer_weights", c.layer_weights},
       {"backbone", c.backbone_kind == BackboneKind::classifier_features ? "classifier" : "segmenter"}};
}
void from_json(const nlohmann::json& j, FeatureLossConfig& c) {
  j.at("layer_ids").get_to(c.layer_ids);
  j.at("layer_weights").get_to(c.layer_weights);
  const auto kind = j.at("backbone").get<std::string>();
  if (kind == "classifier") {
    c.backbone_kind = BackboneKind::classifier_features;
  } else if (kind == "segmenter") {
    c.backbone_kind = BackboneKind::segmenter_features;
  } else {
    throw ConfigError("unknown feature backbone '" + kind + "'");
  }
}

std::vector<torch::Tensor> IdentityExtractor::features(const torch::Tensor& x, const std::vector<int>& layer_ids) {
  std::vector<torch::Tensor> out;
  for (int id : layer_ids) {
    if (id != 0) throw ValidationError("identity extractor only has layer 0");
    out.push_back(x);
  }
  return out;
}

namespace {

void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (a.sizes() != b.sizes()) throw ValidationError(std::string(what) + ": shape mismatch");
}

torch::Tensor gaussian_window(torch::ScalarType dtype) {
  auto coords = torch::arange(kMsSsimWindow, torch::TensorOptions().dtype(torch::kDouble)) - (kMsSsimWindow / 2);
  auto g = torch::exp(-(coords * coords) / (2.0 * kMsSsimSigma * kMsSsimSigma));
  return (g / g.sum()).to(dtype);
}

// Separable valid Gaussian filter, one group per channel.
torch::Tensor gaussian_filter(const torch::Tensor& x, const torch::Tensor& win) {
  const int64_t c = x.size(1);
  auto wh = win.view({1, 1, 1, kMsSsimWindow}).expand({c, 1, 1, kMsSsimWindow}).contiguous();
  auto wv = win.view({1, 1, kMsSsimWindow, 1}).expand({c, 1, kMsSsimWindow, 1}).contiguous();
  auto out = nnf::conv2d(x, wh, nnf::Conv2dFuncOptions().groups(c));
  return nnf::conv2d(out, wv, nnf::Conv2dFuncOptions().groups(c));
}

// sign(v) |v|^w, differentiable away from v == 0.
torch::Tensor signed_pow(const torch::Tensor& v, double w) {
  return torch::sign(v) * torch::pow(torch::abs(v).clamp_min(1e-12), w);
}

}  // namespace

torch::Tensor loss_wppl(const torch::Tensor& labels, const torch::Tensor& gen, const torch::Tensor& real,
                        const CategoryWeightMap& w) {
  check_same_shape(gen, real, "loss_wppl");
  if (labels.dim() != 4 || labels.size(0) != gen.size(0) || labels.size(2) != gen.size(2) || labels.size(3) != gen.size(3)) {
    throw ValidationError("loss_wppl: label map shape mismatch");
  }
  auto table = torch::tensor({w.background, w.lung, w.infection}, torch::TensorOptions().dtype(gen.scalar_type()));
  auto weight = table.index({labels.to(torch::kLong)});
  return (weight * torch::abs(gen - real)).mean();
}

int ms_ssim_levels(int64_t min_dim, int requested) {
  int levels = 0;
  int64_t dim = min_dim;
  while (levels < requested && dim >= kMsSsimWindow) {
    ++levels;
    dim /= 2;
  }
  return levels;
}

torch::Tensor ms_ssim(const torch::Tensor& x, const torch::Tensor& y, int levels) {
  check_same_shape(x, y, "ms_ssim");
  if (x.dim() != 4) throw ValidationError("ms_ssim expects (B,C,H,W) tensors");
  if (levels < 1 || levels > static_cast<int>(kMsSsimLevelWeights.size())) throw ValidationError("ms_ssim: bad level count");
  if (ms_ssim_levels(std::min(x.size(2), x.size(3)), levels) < levels) {
    throw ValidationError("ms_ssim: image too small for " + std::to_string(levels) + " level(s)");
  }
  constexpr double data_range = 2.0;
  const double c1 = std::pow(0.01 * data_range, 2);
  const double c2 = std::pow(0.03 * data_range, 2);
  const double wsum = std::accumulate(kMsSsimLevelWeights.begin(), kMsSsimLevelWeights.begin() + levels, 0.0);
  const auto win = gaussian_window(x.scalar_type());

  torch::Tensor a = x;
  torch::Tensor b = y;
  torch::Tensor result;
  for (int j = 0; j < levels; ++j) {
    auto mu_a = gaussian_filter(a, win);
    auto mu_b = gaussian_filter(b, win);
    auto saa = gaussian_filter(a * a, win) - mu_a * mu_a;
    auto sbb = gaussian_filter(b * b, win) - mu_b * mu_b;
    auto sab = gaussian_filter(a * b, win) - mu_a * mu_b;
    auto cs_map = (2.0 * sab + c2) / (saa + sbb + c2);
    const double w = kMsSsimLevelWeights[static_cast<size_t>(j)] / wsum;
    torch::Tensor term;
    if (j == levels - 1) {
      auto l_map = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
      term = (l_map * cs_map).flatten(1).mean(1);
    } else {
      term = cs_map.flatten(1).mean(1);
      a = nnf::avg_pool2d(a, nnf::AvgPool2dFuncOptions(2).stride(2));
      b = nnf::avg_pool2d(b, nnf::AvgPool2dFuncOptions(2).stride(2));
    }
    auto powered = signed_pow(term, w);
    result = result.defined() ? result * powered : powered;
  }
  return result.mean();
}

torch::Tensor loss_ms_ssim(const torch::Tensor& gen, const torch::Tensor& real, int levels) {
  check_same_shape(gen, real, "loss_ms_ssim");
  const int usable = ms_ssim_levels(std::min(gen.size(2), gen.size(3)), levels);
  if (usable < 1) throw ValidationError("loss_ms_ssim: image smaller than the 11-pixel window");
  return 1.0 - ms_ssim(gen, real, usable);
}

torch::Tensor loss_feature(const torch::Tensor& gen, const torch::Tensor& real, FeatureExtractor& extractor,
                           const FeatureLossConfig& cfg, FeatureNorm norm) {
  check_same_shape(gen, real, "loss_feature");
  cfg.validate();
  const int64_t want = extractor.in_channels();
  auto lift = [&](const torch::Tensor& t) {
    if (t.size(1) == want) return t;
    if (t.size(1) != 1) throw ValidationError("loss_feature: extractor expects " + std::to_string(want) + " channels");
    return t.expand({-1, want, -1, -1}).contiguous();
  };
  std::vector<torch::Tensor> real_f;
  {
    torch::NoGradGuard guard;
    real_f = extractor.features(lift(real), cfg.layer_ids);
  }
  const auto gen_f = extractor.features(lift(gen), cfg.layer_ids);
  torch::Tensor total = torch::zeros({}, gen.options());
  for (size_t j = 0; j < gen_f.size(); ++j) {
    const auto diff = real_f[j] - gen_f[j];
    const auto per = norm == FeatureNorm::l1 ? torch::abs(diff).mean() : (diff * diff).mean();
    total = total + cfg.layer_weights[j] * per;
  }
  return total;
}

MixedLoss loss_mixed(const torch::Tensor& labels, const torch::Tensor& gen, const torch::Tensor& real,
                     const MixedLossSetup& setup) {
  setup.weights.validate();
  setup.category_weights.validate();
  const auto& w = setup.weights;
  auto zero = torch::zeros({}, gen.options());

  auto wppl = w.wppl > 0.0 ? loss_wppl(labels, gen, real, setup.category_weights) : zero;
  auto ssim = w.ms_ssim > 0.0 ? loss_ms_ssim(gen, real, setup.ms_ssim_levels) : zero;
  torch::Tensor fvl = zero;
  if (w.ms_fvl > 0.0) {
    if (!setup.vgg) throw ConfigError("MS-FVL weight is positive but no classifier feature extractor is configured");
    fvl = loss_feature(gen, real, *setup.vgg, setup.vgg_cfg, FeatureNorm::l1);
  }
  torch::Tensor ful = zero;
  if (w.ms_ful > 0.0) {
    if (!setup.unet) throw ConfigError("MS-FUL weight is positive but no segmenter feature extractor is configured");
    ful = loss_feature(gen, real, *setup.unet, setup.unet_cfg, FeatureNorm::l2);
  }

  MixedLoss out;
  out.total = w.wppl * wppl + w.ms_ssim * ssim + w.ms_fvl * fvl + w.ms_ful * ful;
  out.report.wppl = wppl.item<double>();
  out.report.ms_ssim = ssim.item<double>();
  out.report.ms_fvl = fvl.item<double>();
  out.report.ms_ful = ful.item<double>();
  out.report.mixed = out.total.item<double>();
  return out;
}

torch::Tensor bce_logits(const torch::Tensor& logits, double target) {
  return nnf::binary_cross_entropy_with_logits(logits, torch::full_like(logits, target));
}

torch::Tensor adv_g_objective(nets::PatchDiscriminator& disc, const torch::Tensor& cond, const torch::Tensor& gen_out) {
  return bce_logits(disc->score(cond, gen_out), 1.0);
}

torch::Tensor adv_d_objective(nets::PatchDiscriminator& disc, const torch::Tensor& cond, const torch::Tensor& gen_out,
                              const torch::Tensor& real) {
  const auto fake = bce_logits(disc->score(cond, gen_out.detach()), 0.0);
  const auto genuine = bce_logits(disc->score(cond, real), 1.0);
  return 0.5 * (fake + genuine);
}

// ---------------------------------------------------------------------------
// CSV log

LossCsvLog::LossCsvLog(std::filesystem::path path) : path_(std::move(path)) {
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  if (!std::filesystem::exists(path_) || std::filesystem::file_size(path_) == 0) {
    std::ofstream os(path_);
    os << kHeader << "\n";
  }
}

void LossCsvLog::append(int scale, nets::Stage stage, int64_t epoch, const LossReport& r) {
  char line[512];
  std::snprintf(line, sizeof(line), "%d,%s,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", scale, nets::to_string(stage).c_str(),
                static_cast<long long>(epoch), r.wppl, r.ms_ssim, r.ms_fvl, r.ms_ful, r.mixed, r.adv_g, r.adv_d);
  std::ofstream os(path_, std::ios::app);
  os << line;
}

int64_t LossCsvLog::row_count(const std::filesystem::path& path) {
  std::ifstream is(path);
  std::string line;
  int64_t n = -1;  // header
  while (std::getline(is, line)) {
    if (!line.empty()) ++n;
  }
  return std::max<int64_t>(n, 0);
}

}  // namespace cosingan::losses
