#include "cosingan/nets.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace cosingan::nets {

namespace nnf = torch::nn::functional;

std::string to_string(CombineMode m) { return m == CombineMode::concat ? "concat" : "add"; }

CombineMode parse_combine_mode(const std::string& s) {
  if (s == "concat") return CombineMode::concat;
  if (s == "add") return CombineMode::add;
  throw ConfigError("unknown combine mode '" + s + "'");
}

std::string to_string(Stage s) { return s == Stage::super ? "super" : "restore"; }

Stage parse_stage(const std::string& s) {
  if (s == "super") return Stage::super;
  if (s == "restore") return Stage::restore;
  throw ConfigError("unknown stage '" + s + "'");
}

void GeneratorSpec::validate() const {
  if (depth < 3) throw ConfigError("generator depth must be >= 3");
  if (in_channels < 1) throw ConfigError("generator needs at least one input channel");
  if (base_width < 1) throw ConfigError("generator base width must be positive");
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0)) throw ConfigError("dropout rate must lie in [0, 1]");
}

void DiscriminatorSpec::validate() const {
  if (conv_layers < 3) throw ConfigError("discriminator needs at least 3 conv layers");
  if (in_channels < 1) throw ConfigError("discriminator needs at least one input channel");
  if (base_width < 1) throw ConfigError("discriminator base width must be positive");
}

void to_json(nlohmann::json& j, const GeneratorSpec& s) {
  j = {{"depth", s.depth}, {"in_channels", s.in_channels}, {"base_width", s.base_width}, {"dropout_rate", s.dropout_rate}};
}

void from_json(const nlohmann::json& j, GeneratorSpec& s) {
  j.at("depth").get_to(s.depth);
  j.at("in_channels").get_to(s.in_channels);
  j.at("base_width").get_to(s.base_width);
  j.at("dropout_rate").get_to(s.dropout_rate);
}

void to_json(nlohmann::json& j, const DiscriminatorSpec& s) {
  j = {{"conv_layers", s.conv_layers}, {"in_channels", s.in_channels}, {"base_width", s.base_width}};
}

void from_json(const nlohmann::json& j, DiscriminatorSpec& s) {
  j.at("conv_layers").get_to(s.conv_layers);
  j.at("in_channels").get_to(s.in_channels);
  j.at("base_width").get_to(s.base_width);
}

namespace {

int64_t level_width(int base, int k) { return static_cast<int64_t>(base) * std::min<int64_t>(int64_t{1} << k, 8); }

void init_conv_weights(torch::nn::Module& m) {
  torch::NoGradGuard guard;
  for (auto& p : m.named_parameters()) {
    if (p.key().ends_with("weight")) {
      p.value().normal_(0.0, 0.02);
    } else {
      p.value().zero_();
    }
  }
}

torch::Tensor instance_norm(const torch::Tensor& x) {
  return nnf::instance_norm(x, nnf::InstanceNormFuncOptions().eps(1e-5));
}

torch::Tensor match_spatial(const torch::Tensor& x, int64_t h, int64_t w) {
  if (x.size(2) == h && x.size(3) == w) return x;
  return nnf::interpolate(x, nnf::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace

// ---------------------------------------------------------------------------
// UNet generator

UNetGeneratorImpl::UNetGeneratorImpl(GeneratorSpec spec) : spec_(spec) {
  spec_.validate();
  const int d = spec_.depth;
  for (int k = 0; k < d; ++k) {
    const int64_t in = k == 0 ? spec_.in_channels : level_width(spec_.base_width, k - 1);
    const int64_t out = level_width(spec_.base_width, k);
    down_.push_back(register_module("down" + std::to_string(k),
                                    torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 4).stride(2).padding(1))));
    down_norm_.push_back(k > 0 && k < d - 1);
  }
  for (int k = 0; k < d; ++k) {
    const int64_t in = k == d - 1 ? level_width(spec_.base_width, k) : 2 * level_width(spec_.base_width, k);
    const int64_t out = k == 0 ? 1 : level_width(spec_.base_width, k - 1);
    up_.push_back(register_module("up" + std::to_string(k), torch::nn::ConvTranspose2d(
                                                               torch::nn::ConvTranspose2dOptions(in, out, 4).stride(2).padding(1))));
    up_dropout_.push_back(k > 0 && k >= d - 3);
  }
  init_conv_weights(*this);
}

torch::Tensor UNetGeneratorImpl::forward(torch::Tensor x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    throw ValidationError("generator expects (B," + std::to_string(spec_.in_channels) + ",H,W) input");
  }
  if (bottleneck_size(std::min(x.size(2), x.size(3)), spec_.depth) < 1) {
    throw ValidationError("input " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                          " too small for generator depth " + std::to_string(spec_.depth));
  }
  const bool drop = is_training() || inference_dropout_;
  const int d = spec_.depth;
  std::vector<torch::Tensor> skips;
  skips.reserve(static_cast<size_t>(d));
  torch::Tensor h = x;
  for (int k = 0; k < d; ++k) {
    if (k > 0) h = nnf::leaky_relu(h, nnf::LeakyReLUFuncOptions().negative_slope(0.2));
    h = down_[static_cast<size_t>(k)]->forward(h);
    if (down_norm_[static_cast<size_t>(k)]) h = instance_norm(h);
    skips.push_back(h);
  }
  for (int k = d - 1; k >= 0; --k) {
    h = up_[static_cast<size_t>(k)]->forward(torch::relu(h));
    if (k == 0) {
      h = match_spatial(h, x.size(2), x.size(3));
      return torch::tanh(h);
    }
    const auto& skip = skips[static_cast<size_t>(k - 1)];
    h = instance_norm(match_spatial(h, skip.size(2), skip.size(3)));
    if (up_dropout_[static_cast<size_t>(k)]) h = torch::dropout(h, spec_.dropout_rate, drop);
    h = torch::cat({h, skip}, 1);
  }
  return h;  // unreachable
}

// ---------------------------------------------------------------------------
// Patch discriminator

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorSpec spec) : spec_(spec) {
  spec_.validate();
  const int layers = spec_.conv_layers;
  const int strided = std::min(3, layers - 2);
  int64_t ch = spec_.in_channels;
  for (int k = 0; k < layers; ++k) {
    const bool last = k == layers - 1;
    const int64_t out = last ? 1 : level_width(spec_.base_width, std::min(k, 3));
    auto opts = k < strided ? torch::nn::Conv2dOptions(ch, out, 4).stride(2).padding(1)
                            : torch::nn::Conv2dOptions(ch, out, 3).stride(1).padding(1);
    convs_.push_back(register_module("conv" + std::to_string(k), torch::nn::Conv2d(opts)));
    norm_.push_back(k > 0 && !last);
    ch = out;
  }
  init_conv_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(torch::Tensor x) {
  if (x.dim() != 4 || x.size(1) != spec_.in_channels) {
    throw ValidationError("discriminator expects (B," + std::to_string(spec_.in_channels) + ",H,W) input");
  }
  for (size_t k = 0; k < convs_.size(); ++k) {
    x = convs_[k]->forward(x);
    if (k + 1 == convs_.size()) break;
    if (norm_[k]) x = instance_norm(x);
    x = nnf::leaky_relu(x, nnf::LeakyReLUFuncOptions().negative_slope(0.2));
  }
  return x;
}

torch::Tensor PatchDiscriminatorImpl::score(const torch::Tensor& cond, const torch::Tensor& image) {
  if (cond.sizes() != image.sizes()) throw ValidationError("discriminator condition/image shape mismatch");
  return forward(torch::cat({cond, image}, 1));
}

UNetGenerator build_generator(const GeneratorSpec& spec) { return UNetGenerator(spec); }
PatchDiscriminator build_discriminator(const DiscriminatorSpec& spec) { return PatchDiscriminator(spec); }

int64_t parameter_count(const torch::nn::Module& m) {
  int64_t n = 0;
  for (const auto& p : m.parameters()) n += p.numel();
  return n;
}

UNetGenerator clone_generator(const UNetGenerator& src) {
  UNetGenerator out(src->spec());
  out->to(src->parameters().front().scalar_type());
  torch::NoGradGuard guard;
  auto dst_params = out->named_parameters();
  for (const auto& p : src->named_parameters()) dst_params[p.key()].copy_(p.value());
  out->set_inference_dropout(src->inference_dropout());
  out->train(src->is_training());
  return out;
}

int transfer_weights(const UNetGenerator& from, UNetGenerator& to) {
  torch::NoGradGuard guard;
  int copied = 0;
  auto src_params = from->named_parameters();
  for (auto& p : to->named_parameters()) {
    const auto* src = src_params.find(p.key());
    if (src == nullptr) continue;
    auto& dst = p.value();
    if (src->sizes() == dst.sizes()) {
      dst.copy_(*src);
      ++copied;
    } else if (src->dim() == 4 && dst.dim() == 4 && src->size(0) == dst.size(0) && src->size(2) == dst.size(2) &&
               src->size(3) == dst.size(3)) {
      // Conv weight (out, in, kh, kw) differing only in input channels.
      const int64_t n = std::min(src->size(1), dst.size(1));
      dst.narrow(1, 0, n).copy_(src->narrow(1, 0, n));
      ++copied;
    }
  }
  return copied;
}

// ---------------------------------------------------------------------------
// Two-stage forward

int stage1_in_channels(int scale_index, CombineMode mode) {
  return scale_index == 0 || mode == CombineMode::add ? 1 : 2;
}

torch::Tensor upsample_to(const torch::Tensor& x, Shape2 target) {
  return match_spatial(x, target.height, target.width);
}

torch::Tensor stage1_forward(UNetGenerator& g_super, const std::optional<torch::Tensor>& prev, const torch::Tensor& cond,
                             CombineMode mode) {
  if (cond.dim() != 4 || cond.size(1) != 1) throw ValidationError("condition must be a (B,1,H,W) tensor");
  const Shape2 scale{cond.size(2), cond.size(3)};
  if (!prev.has_value()) {
    if (g_super->spec().in_channels != 1) throw ValidationError("stage-1 generator above scale 0 requires a previous output");
    return g_super->forward(cond);
  }
  const auto& p = *prev;
  if (p.dim() != 4 || p.size(1) != 1 || p.size(0) != cond.size(0)) {
    throw ValidationError("previous output must be (B,1,h,w) with the condition's batch size");
  }
  if (p.size(2) > scale.height || p.size(3) > scale.width) {
    throw ValidationError("previous output is larger than the current scale");
  }
  const auto up = upsample_to(p, scale);
  if (mode == CombineMode::add) return g_super->forward(up + cond);
  if (g_super->spec().in_channels != 2) throw ValidationError("concat mode needs a 2-channel stage-1 generator");
  return g_super->forward(torch::cat({cond, up}, 1));
}

torch::Tensor stage2_forward(UNetGenerator& g_restore, const torch::Tensor& o_is) {
  if (o_is.dim() != 4 || o_is.size(1) != 1) throw ValidationError("stage-2 input must be a (B,1,H,W) tensor");
  const int64_t ch = g_restore->spec().in_channels;
  return g_restore->forward(ch == 1 ? o_is : o_is.expand({-1, ch, -1, -1}).contiguous());
}

torch::Tensor two_stage_forward(TwoStageGenerator& gen, const std::optional<torch::Tensor>& prev, const torch::Tensor& cond) {
  if (gen.g_super.is_empty() || !gen.has_restore()) {
    throw StateError("scale " + std::to_string(gen.scale_index) + " generator is not fully trained");
  }
  if (gen.scale_index == 0 && prev.has_value()) throw ValidationError("scale 0 takes no previous output");
  if (gen.scale_index > 0 && !prev.has_value()) throw ValidationError("scale > 0 requires a previous output");
  return stage2_forward(gen.g_restore, stage1_forward(gen.g_super, prev, cond, gen.mode));
}

// ---------------------------------------------------------------------------
// Checkpoints

void to_json(nlohmann::json& j, const CheckpointManifest& m) {
  j = {{"format", "cosingan-generator/1"},
       {"scale_index", m.scale_index},
       {"stage", to_string(m.stage)},
       {"spec", m.spec},
       {"combine_mode", to_string(m.mode)},
       {"epoch", m.epoch}};
}

void from_json(const nlohmann::json& j, CheckpointManifest& m) {
  j.at("scale_index").get_to(m.scale_index);
  m.stage = parse_stage(j.at("stage").get<std::string>());
  j.at("spec").get_to(m.spec);
  m.mode = parse_combine_mode(j.at("combine_mode").get<std::string>());
  j.at("epoch").get_to(m.epoch);
}

void save_generator_checkpoint(const std::filesystem::path& path, const UNetGenerator& net, const CheckpointManifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::string text = nlohmann::json(manifest).dump();
  auto bytes = torch::empty({static_cast<int64_t>(text.size())}, torch::kUInt8);
  std::memcpy(bytes.data_ptr<uint8_t>(), text.data(), text.size());

  torch::serialize::OutputArchive archive;
  archive.write("manifest", bytes);
  net->save(archive);
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  archive.save_to(tmp.string());
  std::filesystem::rename(tmp, path);
}

std::pair<UNetGenerator, CheckpointManifest> load_generator_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw StateError("missing checkpoint " + path.string());
  torch::serialize::InputArchive archive;
  archive.load_from(path.string());
  torch::Tensor bytes;
  archive.read("manifest", bytes);
  bytes = bytes.contiguous();
  const std::string text(reinterpret_cast<const char*>(bytes.data_ptr<uint8_t>()), static_cast<size_t>(bytes.numel()));
  auto manifest = nlohmann::json::parse(text).get<CheckpointManifest>();
  UNetGenerator net(manifest.spec);
  net->load(archive);
  return {net, manifest};
}

std::filesystem::path checkpoint_path(const std::filesystem::path& ckpt_dir, int scale_index, Stage stage) {
  return ckpt_dir / ("scale" + std::to_string(scale_index) + "_" + to_string(stage) + ".bin");
}

size_t GeneratorStack::trained_prefix() const {
  size_t n = 0;
  while (n < levels.size() && !levels[n].g_super.is_empty() && levels[n].has_restore()) ++n;
  return n;
}

void GeneratorStack::freeze(bool inference_dropout) {
  for (auto& level : levels) {
    for (auto* g : {&level.g_super, &level.g_restore}) {
      if (g->is_empty()) continue;
      (*g)->eval();
      (*g)->set_inference_dropout(inference_dropout);
      for (auto& p : (*g)->parameters()) p.set_requires_grad(false);
    }
  }
}

}  // namespace cosingan::nets

namespace cosingan {

void to_json(nlohmann::json& j, const ScaleSchedule& s) {
  nlohmann::json scales = nlohmann::json::array();
  for (const auto& sh : s.scales) scales.push_back({sh.height, sh.width});
  j = {{"scales", scales}, {"gen_depths", s.gen_depths}, {"disc_depths", s.disc_depths}, {"sa_intensity", s.sa_intensity}};
}

void from_json(const nlohmann::json& j, ScaleSchedule& s) {
  s.scales.clear();
  for (const auto& sh : j.at("scales")) s.scales.push_back({sh.at(0).get<int64_t>(), sh.at(1).get<int64_t>()});
  j.at("gen_depths").get_to(s.gen_depths);
  j.at("disc_depths").get_to(s.disc_depths);
  j.at("sa_intensity").get_to(s.sa_intensity);
  s.validate();
}

}  // namespace cosingan

namespace cosingan::nets {

void save_schedule(const std::filesystem::path& ckpt_dir, const ScaleSchedule& schedule, CombineMode mode) {
  std::filesystem::create_directories(ckpt_dir);
  const auto path = ckpt_dir / "schedule.json";
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp);
    os << nlohmann::json{{"schedule", schedule}, {"combine_mode", to_string(mode)}}.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

GeneratorStack load_stack(const std::filesystem::path& ckpt_dir) {
  const auto sched_path = ckpt_dir / "schedule.json";
  if (!std::filesystem::exists(sched_path)) throw StateError("no schedule.json under " + ckpt_dir.string());
  std::ifstream is(sched_path);
  const auto j = nlohmann::json::parse(is);
  GeneratorStack stack;
  stack.schedule = j.at("schedule").get<ScaleSchedule>();
  stack.mode = parse_combine_mode(j.at("combine_mode").get<std::string>());
  for (size_t i = 0; i < stack.schedule.size(); ++i) {
    const auto sp = checkpoint_path(ckpt_dir, static_cast<int>(i), Stage::super);
    if (!std::filesystem::exists(sp)) break;
    TwoStageGenerator level;
    level.scale_index = static_cast<int>(i);
    level.mode = stack.mode;
    level.g_super = load_generator_checkpoint(sp).first;
    const auto rp = checkpoint_path(ckpt_dir, static_cast<int>(i), Stage::restore);
    if (std::filesystem::exists(rp)) level.g_restore = load_generator_checkpoint(rp).first;
    stack.levels.push_back(std::move(level));
  }
  return stack;
}

}  // namespace cosingan::nets
