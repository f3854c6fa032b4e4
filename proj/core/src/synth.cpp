#include "cosingan/synth.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "cosingan/png_io.hpp"

namespace cosingan::synth {

void RcDeltas::validate() const {
  for (int d : {background, lung, infection}) {
    if (d < 0 || d > 127) throw ConfigError("condition noise deltas must lie in [0, 127]");
  }
  if (!(background < 128 - lung)) throw ConfigError("background and lung noise ranges overlap");
  if (!(128 + lung < 255 - infection)) throw ConfigError("lung and infection noise ranges overlap");
}

RcDeltas paper_deltas() { return RcDeltas{16, 16, 32}; }

RcDeltas parse_deltas(const std::string& text) {
  RcDeltas d;
  char tail = 0;
  if (std::sscanf(text.c_str(), "%d,%d,%d%c", &d.background, &d.lung, &d.infection, &tail) != 3)
    throw ConfigError("deltas must look like 'b,l,i', got '" + text + "'");
  d.validate();
  return d;
}

std::array<double, 3> draw_rc_values(const RcDeltas& d, std::mt19937_64& rng) {
  d.validate();
  std::uniform_int_distribution<int> bg(0, d.background);
  std::uniform_int_distribution<int> lung(128 - d.lung, 128 + d.lung);
  std::uniform_int_distribution<int> inf(255 - d.infection, 255);
  const double b = bg(rng);
  const double l = lung(rng);
  const double i = inf(rng);
  return {b, l, i};
}

torch::Tensor randomize_condition(const ConditionMask& mask, const RcDeltas& d, std::mt19937_64& rng) {
  return encode_mask_with_values(mask, draw_rc_values(d, rng));
}

torch::Tensor fuse(const torch::Tensor& a, const torch::Tensor& b, double zeta) {
  if (!(zeta >= 0.0 && zeta <= 1.0)) throw ValidationError("fusion coefficient must lie in [0, 1]");
  if (a.sizes() != b.sizes()) throw ValidationError("fused images must share a shape");
  if (zeta == 1.0) return a.clone();
  if (zeta == 0.0) return b.clone();
  return zeta * a + (1.0 - zeta) * b;
}

namespace {

void prepare(nets::GeneratorStack& stack, const ConditionMask& mask, bool dropout) {
  if (!stack.complete()) throw StateError("synthesis needs a fully trained generator stack");
  if (!(mask.shape() == stack.schedule.final_scale()))
    throw ValidationError("mask is " + to_string(mask.shape()) + " but the stack produces " +
                          to_string(stack.schedule.final_scale()));
  stack.freeze(dropout);
}

}  // namespace

SynthesisTrace synthesize_traced(nets::GeneratorStack& stack, const SynthesisRequest& req) {
  if (req.rc_noise) req.rc_noise->validate();
  prepare(stack, req.mask, req.dropout_at_inference);
  torch::NoGradGuard guard;
  torch::manual_seed(derive_seed(req.seed, 1));
  std::mt19937_64 rng(derive_seed(req.seed, 2));

  SynthesisTrace trace;
  std::optional<torch::Tensor> prev;
  for (size_t j = 0; j < stack.schedule.size(); ++j) {
    const auto m = resize_mask(req.mask, stack.schedule.scales[j]);
    torch::Tensor cond;
    if (req.rc_noise) {
      const auto values = draw_rc_values(*req.rc_noise, rng);
      trace.rc_values.push_back(values);
      cond = encode_mask_with_values(m, values);
    } else {
      cond = encode_mask(m);
    }
    prev = nets::two_stage_forward(stack.levels[j], prev, cond);
    trace.intermediates.push_back(*prev);
  }
  trace.image = *prev;
  return trace;
}

torch::Tensor synthesize(nets::GeneratorStack& stack, const SynthesisRequest& req) {
  return synthesize_traced(stack, req).image;
}

FusionResult synthesize_fused(nets::GeneratorStack& a, nets::GeneratorStack& b, const FusionRequest& req) {
  if (!(a.schedule == b.schedule)) throw ValidationError("fused stacks must share a scale schedule");
  FusionResult out;
  if (req.zeta) {
    out.zeta = *req.zeta;
  } else {
    std::mt19937_64 rng(derive_seed(req.seed, 3));
    out.zeta = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
  if (!(out.zeta >= 0.0 && out.zeta <= 1.0)) throw ValidationError("fusion coefficient must lie in [0, 1]");
  SynthesisRequest ra{req.mask, req.dropout_at_inference, std::nullopt, derive_seed(req.seed, 10)};
  SynthesisRequest rb{req.mask, req.dropout_at_inference, std::nullopt, derive_seed(req.seed, 11)};
  out.image = fuse(synthesize(a, ra), synthesize(b, rb), out.zeta);
  return out;
}

std::string to_string(CorpusMode m) {
  switch (m) {
    case CorpusMode::o_st: return "o-st";
    case CorpusMode::rc_st: return "rc-st";
    case CorpusMode::if_st: return "if-st";
  }
  return "?";
}

CorpusMode parse_corpus_mode(const std::string& s) {
  if (s == "o-st" || s == "O_ST") return CorpusMode::o_st;
  if (s == "rc-st" || s == "RC_ST") return CorpusMode::rc_st;
  if (s == "if-st" || s == "IF_ST") return CorpusMode::if_st;
  throw ConfigError("unknown synthesis mode '" + s + "' (expected o-st, rc-st or if-st)");
}

GeneratedCorpus generate_corpus(std::vector<nets::GeneratorStack*> stacks, const std::vector<ConditionMask>& masks,
                                const CorpusOptions& opts, const std::optional<std::filesystem::path>& out_dir) {
  if (masks.empty()) throw ValidationError("corpus generation needs at least one mask");
  if (stacks.empty() || stacks.size() > 2) throw ConfigError("corpus generation takes one or two generator stacks");
  for (auto* s : stacks) {
    if (s == nullptr) throw ConfigError("null generator stack");
  }
  if (opts.mode == CorpusMode::if_st && stacks.size() != 2) throw ConfigError("IF-ST needs two generator stacks");
  if (opts.mode == CorpusMode::rc_st) opts.deltas.validate();
  const auto tag_of = [&](int stack) {
    return static_cast<size_t>(stack) < opts.stack_modalities.size() ? opts.stack_modalities[static_cast<size_t>(stack)]
                                                                     : stack;
  };

  GeneratedCorpus out;
  nlohmann::json entries = nlohmann::json::array();
  for (size_t k = 0; k < masks.size(); ++k) {
    CorpusEntry e;
    e.index = static_cast<int>(k);
    e.seed = derive_seed(opts.seed, k);
    SamplePair pair;
    pair.mask = masks[k];
    if (opts.mode == CorpusMode::if_st) {
      FusionRequest req{masks[k], std::nullopt, opts.dropout_at_inference, e.seed};
      const auto fused = synthesize_fused(*stacks[0], *stacks[1], req);
      e.stack = -1;
      e.zeta = fused.zeta;
      pair.image = tensor_to_image(fused.image);
      pair.modality_tag = tag_of(fused.zeta >= 0.5 ? 0 : 1);
    } else {
      e.stack = static_cast<int>(k % stacks.size());
      SynthesisRequest req{masks[k], opts.dropout_at_inference, std::nullopt, e.seed};
      if (opts.mode == CorpusMode::rc_st) req.rc_noise = opts.deltas;
      auto trace = synthesize_traced(*stacks[static_cast<size_t>(e.stack)], req);
      e.rc_values = trace.rc_values;
      pair.image = tensor_to_image(trace.image);
      pair.modality_tag = tag_of(e.stack);
    }
    pair.scale_index = static_cast<int>(stacks[0]->schedule.size()) - 1;

    char name[32];
    std::snprintf(name, sizeof(name), "%05zu.png", k);
    nlohmann::json ej = {{"index", e.index}, {"seed", e.seed}, {"stack", e.stack}, {"modality_tag", pair.modality_tag},
                         {"image", std::string("images/") + name}, {"mask", std::string("masks/") + name}};
    if (e.zeta) ej["zeta"] = *e.zeta;
    if (!e.rc_values.empty()) ej["rc_values"] = e.rc_values;
    entries.push_back(ej);
    if (out_dir) {
      io::save_image_png(*out_dir / "images" / name, pair.image);
      io::save_mask_png(*out_dir / "masks" / name, pair.mask);
    }
    out.samples.push_back(std::move(pair));
    out.entries.push_back(std::move(e));
  }

  out.manifest = {{"mode", to_string(opts.mode)},
                  {"seed", opts.seed},
                  {"count", masks.size()},
                  {"stacks", stacks.size()},
                  {"dropout_at_inference", opts.dropout_at_inference},
                  {"samples", entries}};
  if (opts.mode == CorpusMode::rc_st)
    out.manifest["deltas"] = {opts.deltas.background, opts.deltas.lung, opts.deltas.infection};
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    const auto path = *out_dir / "manifest.json";
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream os(tmp);
      os << out.manifest.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, path);
  }
  return out;
}

}  // namespace cosingan::synth
