#include "cosingan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

namespace cosingan::eval {

namespace nnf = torch::nn::functional;

void EvalCorpus::add(SamplePair s, std::string scan_id) {
  samples.push_back(std::move(s));
  scan_ids.push_back(std::move(scan_id));
}

void EvalCorpus::validate() const {
  if (samples.size() != scan_ids.size()) throw ValidationError("corpus has mismatched sample and scan id counts");
  for (const auto& s : samples) s.validate();
}

std::vector<std::string> EvalCorpus::unique_scans() const {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& id : scan_ids) {
    if (seen.insert(id).second) out.push_back(id);
  }
  return out;
}

void check_disjoint(const EvalCorpus& train, const EvalCorpus& test) {
  const std::set<std::string> a(train.scan_ids.begin(), train.scan_ids.end());
  for (const auto& id : test.scan_ids) {
    if (a.count(id) != 0) throw ValidationError("scan '" + id + "' appears in both train and test splits");
  }
}

std::string to_string(ProbeArch a) { return a == ProbeArch::light ? "light" : "heavy"; }

ProbeArch parse_arch(const std::string& s) {
  if (s == "light") return ProbeArch::light;
  if (s == "heavy") return ProbeArch::heavy;
  throw ConfigError("unknown probe architecture '" + s + "'");
}

torch::Tensor to_three_channels(const torch::Tensor& x) {
  if (x.size(1) == 3) return x;
  if (x.size(1) != 1) throw ValidationError("expected 1 or 3 input channels");
  return x.expand({-1, 3, -1, -1}).contiguous();
}

namespace {

torch::nn::Sequential conv_block(int64_t in, int64_t out, bool twice) {
  torch::nn::Sequential seq;
  seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1)));
  seq->push_back(torch::nn::BatchNorm2d(out));
  seq->push_back(torch::nn::ReLU());
  if (twice) {
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
    seq->push_back(torch::nn::BatchNorm2d(out));
    seq->push_back(torch::nn::ReLU());
  }
  return seq;
}

torch::Tensor resize_to(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return nnf::interpolate(
      x, nnf::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kBilinear).align_corners(false));
}

torch::Tensor pool2(const torch::Tensor& x) {
  if (x.size(2) < 2 || x.size(3) < 2) return x;
  return nnf::max_pool2d(x, nnf::MaxPool2dFuncOptions(2).stride(2));
}

}  // namespace

// ---------------------------------------------------------------------------
// Segmenter

SegmenterImpl::SegmenterImpl(ProbeArch arch) : arch_(arch) {
  const bool heavy = arch == ProbeArch::heavy;
  const std::vector<int64_t> widths = heavy ? std::vector<int64_t>{16, 32, 64, 128, 128} : std::vector<int64_t>{8, 16, 32};
  for (size_t k = 0; k < widths.size(); ++k) {
    const int64_t in = k == 0 ? 1 : widths[k - 1];
    enc_.push_back(register_module("enc" + std::to_string(k), conv_block(in, widths[k], heavy)));
  }
  for (size_t k = 0; k + 1 < widths.size(); ++k) {
    dec_.push_back(register_module("dec" + std::to_string(k), conv_block(widths[k + 1] + widths[k], widths[k], heavy)));
  }
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[0], kNumClasses, 1)));
}

std::vector<torch::Tensor> SegmenterImpl::encoder_features(torch::Tensor x) {
  std::vector<torch::Tensor> feats;
  for (size_t k = 0; k < enc_.size(); ++k) {
    x = enc_[k]->forward(k == 0 ? x : pool2(x));
    feats.push_back(x);
  }
  return feats;
}

torch::Tensor SegmenterImpl::forward(torch::Tensor x) {
  auto feats = encoder_features(std::move(x));
  torch::Tensor h = feats.back();
  for (int k = static_cast<int>(dec_.size()) - 1; k >= 0; --k) {
    const auto& skip = feats[static_cast<size_t>(k)];
    h = dec_[static_cast<size_t>(k)]->forward(torch::cat({resize_to(h, skip.size(2), skip.size(3)), skip}, 1));
  }
  return head_->forward(h);
}

// ---------------------------------------------------------------------------
// Classifier

ClassifierImpl::ClassifierImpl(ProbeArch arch) : arch_(arch) {
  if (arch == ProbeArch::light) {
    stem_ = register_module("stem", conv_block(3, 8, false));
    blocks_.push_back(register_module("block0", conv_block(8, 16, false)));
    blocks_.push_back(register_module("block1", conv_block(16, 32, false)));
    fc_ = register_module("fc", torch::nn::Linear(32, 1));
    return;
  }
  stem_ = register_module("stem", conv_block(3, 16, false));
  const std::vector<int64_t> widths{16, 32, 64, 128};
  int64_t in = 16;
  for (size_t k = 0; k < widths.size(); ++k) {
    const int64_t stride = k == 0 ? 1 : 2;
    torch::nn::Sequential body;
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, widths[k], 3).stride(stride).padding(1)));
    body->push_back(torch::nn::BatchNorm2d(widths[k]));
    body->push_back(torch::nn::ReLU());
    body->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(widths[k], widths[k], 3).padding(1)));
    body->push_back(torch::nn::BatchNorm2d(widths[k]));
    blocks_.push_back(register_module("block" + std::to_string(k), body));
    shortcuts_.push_back(register_module("short" + std::to_string(k),
                                         torch::nn::Conv2d(torch::nn::Conv2dOptions(in, widths[k], 1).stride(stride))));
    in = widths[k];
  }
  fc_ = register_module("fc", torch::nn::Linear(in, 1));
}

torch::Tensor ClassifierImpl::forward(torch::Tensor x) {
  x = stem_->forward(to_three_channels(x));
  if (arch_ == ProbeArch::light) {
    for (auto& b : blocks_) x = b->forward(pool2(x));
  } else {
    for (size_t k = 0; k < blocks_.size(); ++k) x = torch::relu(blocks_[k]->forward(x) + shortcuts_[k]->forward(x));
  }
  x = x.mean({2, 3});
  return fc_->forward(x).squeeze(1);
}

// ---------------------------------------------------------------------------
// VGG-style backbone

VggBackboneImpl::VggBackboneImpl() {
  const std::array<int64_t, kStages> widths{16, 32, 64, 64, 64};
  int64_t in = 3;
  for (int k = 0; k < kStages; ++k) {
    torch::nn::Sequential seq;
    seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, widths[static_cast<size_t>(k)], 3).padding(1)));
    seq->push_back(torch::nn::ReLU());
    if (k >= 2) {
      seq->push_back(torch::nn::Conv2d(
          torch::nn::Conv2dOptions(widths[static_cast<size_t>(k)], widths[static_cast<size_t>(k)], 3).padding(1)));
      seq->push_back(torch::nn::ReLU());
    }
    stages_.push_back(register_module("stage" + std::to_string(k), seq));
    in = widths[static_cast<size_t>(k)];
  }
  fc_ = register_module("fc", torch::nn::Linear(in, 1));
}

std::vector<torch::Tensor> VggBackboneImpl::stage_features(torch::Tensor x) {
  x = to_three_channels(x);
  std::vector<torch::Tensor> out;
  for (size_t k = 0; k < stages_.size(); ++k) {
    x = stages_[k]->forward(k == 0 ? x : pool2(x));
    out.push_back(x);
  }
  return out;
}

torch::Tensor VggBackboneImpl::forward(torch::Tensor x) {
  auto feats = stage_features(std::move(x));
  return fc_->forward(feats.back().mean({2, 3})).squeeze(1);
}

// ---------------------------------------------------------------------------
// Training

void to_json(nlohmann::json& j, const ProbeTrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},         {"decay_start", c.decay_start},
       {"decay_frac", c.decay_frac}, {"beta1", c.beta1},   {"beta2", c.beta2}, {"policy", c.policy},
       {"augment", c.augment},   {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, ProbeTrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("lr").get_to(c.lr);
  j.at("decay_start").get_to(c.decay_start);
  j.at("decay_frac").get_to(c.decay_frac);
  j.at("beta1").get_to(c.beta1);
  j.at("beta2").get_to(c.beta2);
  j.at("policy").get_to(c.policy);
  j.at("augment").get_to(c.augment);
  j.at("seed").get_to(c.seed);
  if (c.epochs < 0 || c.batch_size < 1) throw ConfigError("probe config needs epochs >= 0 and batch_size >= 1");
}

ProbeTrainConfig paper_segmenter_config(ProbeArch arch) {
  ProbeTrainConfig c;
  c.epochs = 50;
  c.batch_size = arch == ProbeArch::light ? 8 : 2;
  c.lr = 1e-4;
  c.decay_start = 25;
  c.decay_frac = 0.04;
  return c;
}

ProbeTrainConfig paper_classifier_config() {
  ProbeTrainConfig c;
  c.epochs = 10;
  c.batch_size = 16;
  c.lr = 1e-4;
  c.decay_start = 5;
  c.decay_frac = 0.20;
  return c;
}

torch::Tensor weighted_cross_entropy(const torch::Tensor& logits, const torch::Tensor& labels,
                                     const std::array<double, 3>& class_weights) {
  auto target = labels.dim() == 4 ? labels.squeeze(1) : labels;
  target = target.to(torch::kLong);
  auto logp = torch::log_softmax(logits, 1);
  auto picked = logp.gather(1, target.unsqueeze(1)).squeeze(1);
  auto table = torch::tensor({class_weights[0], class_weights[1], class_weights[2]}, logits.options());
  return -(table.index({target}) * picked).mean();
}

int classification_label(const ConditionMask& mask) { return mask.contains(2) ? 1 : 0; }

namespace {

struct Batch {
  torch::Tensor images;
  std::vector<ConditionMask> masks;
};

// Runs `step` over shuffled, augmented mini-batches; returns per-epoch mean loss.
template <typename Step>
std::vector<double> run_epochs(const EvalCorpus& corpus, const ProbeTrainConfig& cfg, torch::optim::Adam& opt, Step&& step) {
  if (corpus.empty()) throw ValidationError("cannot train on an empty corpus");
  std::mt19937_64 rng(cfg.seed);
  std::vector<size_t> order(corpus.size());
  std::vector<double> losses;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = linear_decay_lr(cfg.lr, cfg.decay_start, cfg.decay_frac, epoch);
    for (auto& g : opt.param_groups()) static_cast<torch::optim::AdamOptions&>(g.options()).lr(lr);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int64_t count = 0;
    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      const size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      // Batch statistics need at least two samples.
      if (end - start < 2 && order.size() > 1) continue;
      Batch batch;
      std::vector<Image> imgs;
      for (size_t k = start; k < end; ++k) {
        const auto& s = corpus.samples[order[k]];
        if (cfg.augment) {
          const auto draw = augment::sample_draw(cfg.policy, s.image.shape(), rng());
          auto [img, mask] = augment::apply_draw(draw, s.image, s.mask);
          imgs.push_back(std::move(img));
          batch.masks.push_back(std::move(mask));
        } else {
          imgs.push_back(s.image);
          batch.masks.push_back(s.mask);
        }
      }
      batch.images = images_to_tensor(imgs);
      opt.zero_grad();
      auto loss = step(batch);
      loss.backward();
      opt.step();
      total += loss.template item<double>() * static_cast<double>(end - start);
      count += static_cast<int64_t>(end - start);
    }
    losses.push_back(count > 0 ? total / static_cast<double>(count) : 0.0);
  }
  return losses;
}

torch::optim::Adam make_adam(torch::nn::Module& m, const ProbeTrainConfig& cfg) {
  return torch::optim::Adam(m.parameters(), torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}));
}

void require_same_shapes(const EvalCorpus& corpus) {
  corpus.validate();
  for (const auto& s : corpus.samples) {
    if (!(s.image.shape() == corpus.samples.front().image.shape())) throw ValidationError("corpus images differ in shape");
  }
}

}  // namespace

Trained<Segmenter> train_segmenter(const EvalCorpus& corpus, ProbeArch arch, const ProbeTrainConfig& cfg) {
  if (corpus.empty()) throw ValidationError("train_segmenter: empty corpus");
  require_same_shapes(corpus);
  torch::manual_seed(cfg.seed);
  Trained<Segmenter> out{Segmenter(arch), {}};
  out.net->train();
  auto opt = make_adam(*out.net, cfg);
  out.epoch_losses = run_epochs(corpus, cfg, opt, [&](const Batch& b) {
    return weighted_cross_entropy(out.net->forward(b.images), labels_to_tensor(b.masks));
  });
  out.net->eval();
  return out;
}

Trained<Classifier> train_classifier(const EvalCorpus& corpus, ProbeArch arch, const ProbeTrainConfig& cfg) {
  if (corpus.empty()) throw ValidationError("train_classifier: empty corpus");
  require_same_shapes(corpus);
  torch::manual_seed(cfg.seed);
  Trained<Classifier> out{Classifier(arch), {}};
  out.net->train();
  auto opt = make_adam(*out.net, cfg);
  out.epoch_losses = run_epochs(corpus, cfg, opt, [&](const Batch& b) {
    std::vector<float> y;
    for (const auto& m : b.masks) y.push_back(static_cast<float>(classification_label(m)));
    return nnf::binary_cross_entropy_with_logits(out.net->forward(b.images), torch::tensor(y));
  });
  out.net->eval();
  return out;
}

Trained<VggBackbone> train_vgg_backbone(const EvalCorpus& corpus, const ProbeTrainConfig& cfg) {
  if (corpus.empty()) throw ValidationError("train_vgg_backbone: empty corpus");
  require_same_shapes(corpus);
  torch::manual_seed(cfg.seed);
  Trained<VggBackbone> out{VggBackbone(), {}};
  out.net->train();
  auto opt = make_adam(*out.net, cfg);
  out.epoch_losses = run_epochs(corpus, cfg, opt, [&](const Batch& b) {
    std::vector<float> y;
    for (const auto& m : b.masks) y.push_back(static_cast<float>(classification_label(m)));
    return nnf::binary_cross_entropy_with_logits(out.net->forward(b.images), torch::tensor(y));
  });
  out.net->eval();
  return out;
}

std::vector<ConditionMask> segment(Segmenter& net, const std::vector<Image>& images) {
  torch::NoGradGuard guard;
  net->eval();
  std::vector<ConditionMask> out;
  for (size_t start = 0; start < images.size(); start += 32) {
    const size_t end = std::min(images.size(), start + 32);
    const std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(start), images.begin() + static_cast<std::ptrdiff_t>(end));
    auto pred = net->forward(images_to_tensor(chunk)).argmax(1).to(torch::kUInt8).contiguous();
    for (int64_t b = 0; b < pred.size(0); ++b) {
      auto p = pred[b].contiguous();
      const uint8_t* src = p.data_ptr<uint8_t>();
      out.emplace_back(Shape2{p.size(0), p.size(1)}, std::vector<uint8_t>(src, src + p.numel()));
    }
  }
  return out;
}

std::vector<int> classify(Classifier& net, const std::vector<Image>& images) {
  torch::NoGradGuard guard;
  net->eval();
  std::vector<int> out;
  for (size_t start = 0; start < images.size(); start += 32) {
    const size_t end = std::min(images.size(), start + 32);
    const std::vector<Image> chunk(images.begin() + static_cast<std::ptrdiff_t>(start), images.begin() + static_cast<std::ptrdiff_t>(end));
    auto logits = net->forward(images_to_tensor(chunk)).contiguous();
    for (int64_t b = 0; b < logits.size(0); ++b) out.push_back(logits[b].item<float>() > 0.0F ? 1 : 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics

double dsc(const ConditionMask& pred, const ConditionMask& truth, uint8_t class_id) {
  if (!(pred.shape() == truth.shape())) throw ValidationError("dsc: shape mismatch");
  int64_t inter = 0;
  int64_t p = 0;
  int64_t t = 0;
  for (size_t i = 0; i < pred.labels().size(); ++i) {
    const bool a = pred.labels()[i] == class_id;
    const bool b = truth.labels()[i] == class_id;
    inter += (a && b) ? 1 : 0;
    p += a ? 1 : 0;
    t += b ? 1 : 0;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(p + t);
}

MetricsReport summarize(std::vector<std::string> groups, std::vector<double> values) {
  if (groups.size() != values.size()) throw ValidationError("summarize: group/value count mismatch");
  MetricsReport r;
  r.groups = std::move(groups);
  r.per_group = std::move(values);
  std::vector<double> defined;
  for (double v : r.per_group) {
    if (std::isnan(v)) {
      ++r.excluded;
    } else {
      defined.push_back(v);
    }
  }
  r.n = static_cast<int64_t>(defined.size());
  const double nan = std::numeric_limits<double>::quiet_NaN();
  if (defined.empty()) {
    r.mean = r.ci_lo = r.ci_hi = nan;
    return r;
  }
  r.mean = std::accumulate(defined.begin(), defined.end(), 0.0) / static_cast<double>(defined.size());
  if (defined.size() < 2) {
    r.ci_lo = r.ci_hi = nan;
    return r;
  }
  double ss = 0.0;
  for (double v : defined) ss += (v - r.mean) * (v - r.mean);
  const double sd = std::sqrt(ss / static_cast<double>(defined.size() - 1));
  const boost::math::students_t dist(static_cast<double>(defined.size() - 1));
  const double half = boost::math::quantile(dist, 0.975) * sd / std::sqrt(static_cast<double>(defined.size()));
  r.ci_lo = r.mean - half;
  r.ci_hi = r.mean + half;
  return r;
}

ClassificationReport classification_report_from_counts(const std::map<std::string, ConfusionCounts>& per_scan) {
  ClassificationReport r;
  r.per_scan = per_scan;
  std::vector<std::string> groups;
  std::vector<double> sens;
  std::vector<double> spec;
  std::vector<double> acc;
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& [id, c] : per_scan) {
    groups.push_back(id);
    sens.push_back(c.tp + c.fn > 0 ? static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn) : nan);
    spec.push_back(c.tn + c.fp > 0 ? static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp) : nan);
    const int64_t total = c.tp + c.tn + c.fp + c.fn;
    acc.push_back(total > 0 ? static_cast<double>(c.tp + c.tn) / static_cast<double>(total) : nan);
  }
  r.sensitivity = summarize(groups, sens);
  r.specificity = summarize(groups, spec);
  r.accuracy = summarize(groups, acc);
  return r;
}

ClassificationReport classification_metrics(const std::vector<int>& preds, const std::vector<int>& labels,
                                            const std::vector<std::string>& scan_ids) {
  if (preds.empty()) throw ValidationError("classification_metrics: no predictions");
  if (preds.size() != labels.size() || preds.size() != scan_ids.size())
    throw ValidationError("classification_metrics: length mismatch");
  std::map<std::string, ConfusionCounts> per_scan;
  for (size_t i = 0; i < preds.size(); ++i) {
    auto& c = per_scan[scan_ids[i]];
    if (labels[i] == 1) {
      (preds[i] == 1 ? c.tp : c.fn) += 1;
    } else {
      (preds[i] == 1 ? c.fp : c.tn) += 1;
    }
  }
  return classification_report_from_counts(per_scan);
}

SegmentationReport segmentation_metrics(const std::vector<ConditionMask>& preds, const EvalCorpus& truth) {
  if (preds.size() != truth.size()) throw ValidationError("segmentation_metrics: length mismatch");
  struct Acc {
    std::array<int64_t, 3> inter{};
    std::array<int64_t, 3> sum{};
    double dice(int c) const {
      return sum[static_cast<size_t>(c)] == 0 ? 1.0
                                              : 2.0 * static_cast<double>(inter[static_cast<size_t>(c)]) /
                                                    static_cast<double>(sum[static_cast<size_t>(c)]);
    }
  };
  std::map<std::string, Acc> per_scan;
  std::map<int, Acc> per_mod;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto& p = preds[i];
    const auto& t = truth.samples[i].mask;
    if (!(p.shape() == t.shape())) throw ValidationError("segmentation_metrics: shape mismatch");
    auto& a = per_scan[truth.scan_ids[i]];
    auto& m = per_mod[truth.samples[i].modality_tag];
    for (size_t k = 0; k < p.labels().size(); ++k) {
      for (uint8_t c = 1; c < kNumClasses; ++c) {
        const bool pa = p.labels()[k] == c;
        const bool tb = t.labels()[k] == c;
        const int64_t inter = (pa && tb) ? 1 : 0;
        const int64_t sum = (pa ? 1 : 0) + (tb ? 1 : 0);
        a.inter[c] += inter;
        a.sum[c] += sum;
        m.inter[c] += inter;
        m.sum[c] += sum;
      }
    }
  }
  SegmentationReport r;
  std::vector<std::string> groups;
  std::vector<double> lung;
  std::vector<double> inf;
  for (const auto& [id, a] : per_scan) {
    groups.push_back(id);
    lung.push_back(a.dice(1));
    inf.push_back(a.dice(2));
  }
  r.lung = summarize(groups, lung);
  r.infection = summarize(groups, inf);
  for (const auto& [tag, a] : per_mod) r.per_modality[tag] = {a.dice(1), a.dice(2)};
  return r;
}

SegmentationReport average_segmentation(const std::vector<SegmentationReport>& reports) {
  if (reports.empty()) throw ValidationError("average_segmentation: no reports");
  if (reports.size() == 1) return reports.front();
  const auto& first = reports.front();
  const double n = static_cast<double>(reports.size());
  const auto mean_of = [&](auto&& pick) {
    std::vector<double> out(pick(first).per_group.size(), 0.0);
    for (const auto& r : reports) {
      if (pick(r).groups != pick(first).groups) throw ValidationError("average_segmentation: reports cover different scans");
      for (size_t g = 0; g < out.size(); ++g) out[g] += pick(r).per_group[g] / n;
    }
    return summarize(pick(first).groups, out);
  };
  SegmentationReport avg;
  avg.lung = mean_of([](const SegmentationReport& r) -> const MetricsReport& { return r.lung; });
  avg.infection = mean_of([](const SegmentationReport& r) -> const MetricsReport& { return r.infection; });
  for (const auto& r : reports) {
    for (const auto& [tag, v] : r.per_modality) {
      auto& slot = avg.per_modality[tag];
      slot.first += v.first / n;
      slot.second += v.second / n;
    }
  }
  return avg;
}

QualityScore image_quality_score(const EvalCorpus& synth_corpus, Segmenter& oracle) {
  if (synth_corpus.empty()) throw ValidationError("image_quality_score: empty corpus");
  std::vector<Image> images;
  for (const auto& s : synth_corpus.samples) images.push_back(s.image);
  const auto preds = segment(oracle, images);
  std::map<int, std::array<double, 3>> acc;  // lung sum, infection sum, count
  double lung = 0.0;
  double inf = 0.0;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto& truth = synth_corpus.samples[i].mask;
    const double l = dsc(preds[i], truth, 1);
    const double f = dsc(preds[i], truth, 2);
    auto& a = acc[synth_corpus.samples[i].modality_tag];
    a[0] += l;
    a[1] += f;
    a[2] += 1.0;
    lung += l;
    inf += f;
  }
  QualityScore q;
  for (const auto& [tag, a] : acc) q.per_modality[tag] = {a[0] / a[2], a[1] / a[2]};
  q.lung = lung / static_cast<double>(preds.size());
  q.infection = inf / static_cast<double>(preds.size());
  return q;
}

std::string format_quality_table(const QualityScore& q) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1);
  os << "Group        Lung   Infection\n";
  for (const auto& [tag, v] : q.per_modality) {
    os << "Modality " << std::setw(2) << tag + 1 << "  " << std::setw(5) << 100.0 * v.first << "  " << std::setw(9)
       << 100.0 * v.second << "\n";
  }
  os << "Overall      " << std::setw(5) << 100.0 * q.lung << "  " << std::setw(9) << 100.0 * q.infection << "\n";
  return os.str();
}

namespace {

nlohmann::json num(double v) { return std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v); }

}  // namespace

nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::object();
  for (size_t i = 0; i < r.groups.size(); ++i) per[r.groups[i]] = num(r.per_group[i]);
  return {{"mean", num(r.mean)}, {"ci95", {num(r.ci_lo), num(r.ci_hi)}}, {"n", r.n}, {"excluded", r.excluded}, {"per_group", per}};
}

nlohmann::json to_json(const ClassificationReport& r) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [id, c] : r.per_scan) counts[id] = {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
  return {{"sensitivity", to_json(r.sensitivity)},
          {"specificity", to_json(r.specificity)},
          {"accuracy", to_json(r.accuracy)},
          {"confusion", counts}};
}

nlohmann::json to_json(const SegmentationReport& r) {
  nlohmann::json mods = nlohmann::json::object();
  for (const auto& [tag, v] : r.per_modality) mods[std::to_string(tag)] = {{"lung", v.first}, {"infection", v.second}};
  return {{"per_modality", mods}, {"lung", to_json(r.lung)}, {"infection", to_json(r.infection)}};
}

nlohmann::json to_json(const QualityScore& q) {
  nlohmann::json mods = nlohmann::json::object();
  for (const auto& [tag, v] : q.per_modality) mods[std::to_string(tag)] = {{"lung", v.first}, {"infection", v.second}};
  return {{"per_modality", mods}, {"lung", q.lung}, {"infection", q.infection}};
}

// ---------------------------------------------------------------------------
// Feature backbones

void freeze(torch::nn::Module& m) {
  m.eval();
  for (auto& p : m.parameters()) p.set_requires_grad(false);
}

namespace {

std::vector<torch::Tensor> pick(const std::vector<torch::Tensor>& all, const std::vector<int>& ids) {
  std::vector<torch::Tensor> out;
  for (int id : ids) {
    if (id < 0 || static_cast<size_t>(id) >= all.size()) throw ValidationError("feature layer id out of range");
    out.push_back(all[static_cast<size_t>(id)]);
  }
  return out;
}

}  // namespace

VggFeatureExtractor::VggFeatureExtractor(VggBackbone net) : net_(std::move(net)) { freeze(*net_); }

std::vector<torch::Tensor> VggFeatureExtractor::features(const torch::Tensor& x, const std::vector<int>& layer_ids) {
  if (x.size(1) != 3) throw ValidationError("classifier-feature extractor expects 3-channel input");
  return pick(net_->stage_features(x), layer_ids);
}

void VggFeatureExtractor::to(torch::ScalarType dtype) { net_->to(dtype); }

SegmenterFeatureExtractor::SegmenterFeatureExtractor(Segmenter net) : net_(std::move(net)) { freeze(*net_); }

std::vector<torch::Tensor> SegmenterFeatureExtractor::features(const torch::Tensor& x, const std::vector<int>& layer_ids) {
  if (x.size(1) != 1) throw ValidationError("segmenter-feature extractor expects 1-channel input");
  return pick(net_->encoder_features(x), layer_ids);
}

void SegmenterFeatureExtractor::to(torch::ScalarType dtype) { net_->to(dtype); }

BackboneTrainConfig default_backbone_config(uint64_t seed) {
  BackboneTrainConfig c;
  c.classifier.epochs = 30;
  c.classifier.batch_size = 16;
  c.classifier.lr = 1e-3;
  c.classifier.decay_start = 20;
  c.classifier.decay_frac = 0.05;
  c.classifier.seed = derive_seed(seed, 1);
  c.segmenter.epochs = 30;
  c.segmenter.batch_size = 8;
  c.segmenter.lr = 2e-3;
  c.segmenter.decay_start = 20;
  c.segmenter.decay_frac = 0.05;
  c.segmenter.seed = derive_seed(seed, 2);
  return c;
}

FeatureBackbones train_feature_backbones(const EvalCorpus& corpus, const BackboneTrainConfig& cfg) {
  auto vgg = train_vgg_backbone(corpus, cfg.classifier);
  auto seg = train_segmenter(corpus, ProbeArch::heavy, cfg.segmenter);
  return {std::make_shared<VggFeatureExtractor>(vgg.net), std::make_shared<SegmenterFeatureExtractor>(seg.net)};
}

FeatureBackbones random_feature_backbones(uint64_t seed) {
  torch::manual_seed(seed);
  VggBackbone vgg;
  Segmenter seg(ProbeArch::heavy);
  return {std::make_shared<VggFeatureExtractor>(vgg), std::make_shared<SegmenterFeatureExtractor>(seg)};
}

void save_feature_backbones(const std::filesystem::path& path, const FeatureBackbones& b) {
  if (!b.vgg || !b.unet) throw StateError("save_feature_backbones: incomplete backbones");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  torch::serialize::OutputArchive root;
  torch::serialize::OutputArchive vgg;
  torch::serialize::OutputArchive seg;
  b.vgg->net()->save(vgg);
  b.unet->net()->save(seg);
  root.write("vgg", vgg);
  root.write("unet", seg);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  root.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

FeatureBackbones load_feature_backbones(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw StateError("missing feature backbones " + path.string());
  torch::serialize::InputArchive root;
  root.load_from(path.string());
  torch::serialize::InputArchive vgg_ar;
  torch::serialize::InputArchive seg_ar;
  root.read("vgg", vgg_ar);
  root.read("unet", seg_ar);
  VggBackbone vgg;
  Segmenter seg(ProbeArch::heavy);
  vgg->load(vgg_ar);
  seg->load(seg_ar);
  return {std::make_shared<VggFeatureExtractor>(vgg), std::make_shared<SegmenterFeatureExtractor>(seg)};
}

}  // namespace cosingan::eval
