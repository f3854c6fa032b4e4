#include "cosingan/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "cosingan/png_io.hpp"

namespace cosingan::data {

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

void check_range(const std::array<double, 2>& r, const char* what) {
  if (!(r[0] > 0.0 && r[0] <= r[1] && r[1] < 0.5)) throw ConfigError(std::string("phantom ") + what + " range is invalid");
}

void write_json_atomic(const std::filesystem::path& path, const nlohmann::json& j) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp);
    os << j.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, path);
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw StateError("cannot read " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Phantoms

void PhantomSpec::validate() const {
  if (size < 16) throw ConfigError("phantom size must be >= 16");
  check_range(lung_axis_x, "lung_axis_x");
  check_range(lung_axis_y, "lung_axis_y");
  check_range(infection_radius, "infection_radius");
  if (lung_axis_x[1] > 0.18) throw ConfigError("lung_axis_x above 0.18 lets the lungs touch");
  if (max_infections < 0) throw ConfigError("max_infections must be >= 0");
  if (!(infection_prob >= 0.0 && infection_prob <= 1.0)) throw ConfigError("infection_prob must lie in [0, 1]");
  if (slices_per_scan < 1) throw ConfigError("slices_per_scan must be >= 1");
}

void to_json(nlohmann::json& j, const PhantomSpec& s) {
  nlohmann::json tex = nlohmann::json::array();
  for (const auto& t : s.textures) {
    tex.push_back({{"body_level", t.body_level},
                   {"lung_level", t.lung_level},
                   {"infection_level", t.infection_level},
                   {"noise_std", t.noise_std},
                   {"smooth_radius", t.smooth_radius},
                   {"gradient", t.gradient}});
  }
  j = {{"size", s.size},
       {"lung_axis_x", s.lung_axis_x},
       {"lung_axis_y", s.lung_axis_y},
       {"max_infections", s.max_infections},
       {"infection_prob", s.infection_prob},
       {"infection_radius", s.infection_radius},
       {"slices_per_scan", s.slices_per_scan},
       {"textures", tex}};
}

void from_json(const nlohmann::json& j, PhantomSpec& s) {
  j.at("size").get_to(s.size);
  j.at("lung_axis_x").get_to(s.lung_axis_x);
  j.at("lung_axis_y").get_to(s.lung_axis_y);
  j.at("max_infections").get_to(s.max_infections);
  j.at("infection_prob").get_to(s.infection_prob);
  j.at("infection_radius").get_to(s.infection_radius);
  j.at("slices_per_scan").get_to(s.slices_per_scan);
  const auto& tex = j.at("textures");
  if (tex.size() != 2) throw ConfigError("phantom spec needs exactly two textures");
  for (size_t k = 0; k < 2; ++k) {
    auto& t = s.textures[k];
    tex[k].at("body_level").get_to(t.body_level);
    tex[k].at("lung_level").get_to(t.lung_level);
    tex[k].at("infection_level").get_to(t.infection_level);
    tex[k].at("noise_std").get_to(t.noise_std);
    tex[k].at("smooth_radius").get_to(t.smooth_radius);
    tex[k].at("gradient").get_to(t.gradient);
  }
  s.validate();
}

SamplePair make_phantom(const PhantomSpec& spec, int modality_tag, uint64_t seed) {
  spec.validate();
  if (modality_tag != 0 && modality_tag != 1) throw ValidationError("phantom modality tag must be 0 or 1");
  const auto& tex = spec.textures[static_cast<size_t>(modality_tag)];
  std::mt19937_64 rng(seed);
  const int64_t n = spec.size;
  const double s = static_cast<double>(n);

  struct Ellipse {
    double cx, cy, ax, ay;
    bool inside(double x, double y) const {
      const double u = (x - cx) / ax;
      const double v = (y - cy) / ay;
      return u * u + v * v <= 1.0;
    }
  };
  std::array<Ellipse, 2> lungs{};
  for (int side = 0; side < 2; ++side) {
    auto& e = lungs[static_cast<size_t>(side)];
    e.cx = s * (side == 0 ? 0.3 : 0.7) + uniform(rng, -0.02, 0.02) * s;
    e.cy = s * 0.5 + uniform(rng, -0.03, 0.03) * s;
    e.ax = uniform(rng, spec.lung_axis_x[0], spec.lung_axis_x[1]) * s;
    e.ay = uniform(rng, spec.lung_axis_y[0], spec.lung_axis_y[1]) * s;
  }
  const Ellipse body{s * 0.5, s * 0.5, s * 0.47, s * 0.45};

  struct Blob {
    double cx, cy, r, amp, phase;
    bool inside(double x, double y) const {
      const double dx = x - cx;
      const double dy = y - cy;
      const double phi = std::atan2(dy, dx);
      const double rr = r * (1.0 + amp * std::sin(3.0 * phi + phase));
      return dx * dx + dy * dy <= rr * rr;
    }
  };
  std::vector<Blob> blobs;
  if (spec.max_infections > 0 && uniform(rng, 0.0, 1.0) < spec.infection_prob) {
    const int k = std::uniform_int_distribution<int>(1, spec.max_infections)(rng);
    for (int b = 0; b < k; ++b) {
      const auto& lung = lungs[std::uniform_int_distribution<size_t>(0, 1)(rng)];
      const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      const double rho = std::sqrt(uniform(rng, 0.0, 1.0)) * 0.6;
      Blob blob{lung.cx + rho * lung.ax * std::cos(theta), lung.cy + rho * lung.ay * std::sin(theta),
                uniform(rng, spec.infection_radius[0], spec.infection_radius[1]) * s, uniform(rng, 0.0, 0.3),
                uniform(rng, 0.0, 2.0 * std::numbers::pi)};
      blobs.push_back(blob);
    }
  }

  ConditionMask mask({n, n});
  std::vector<uint8_t> in_body(static_cast<size_t>(n * n), 0);
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t c = 0; c < n; ++c) {
      const double x = static_cast<double>(c) + 0.5;
      const double y = static_cast<double>(r) + 0.5;
      in_body[static_cast<size_t>(r * n + c)] = body.inside(x, y) ? 1 : 0;
      if (!lungs[0].inside(x, y) && !lungs[1].inside(x, y)) continue;
      uint8_t label = 1;
      for (const auto& b : blobs) {
        if (b.inside(x, y)) label = 2;
      }
      mask.set(r, c, label);
    }
  }

  // Smoothed noise field, rescaled so its spread does not depend on the radius.
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> noise(static_cast<size_t>(n * n));
  for (auto& v : noise) v = gauss(rng);
  const int rad = tex.smooth_radius;
  std::vector<double> smooth(noise.size(), 0.0);
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t c = 0; c < n; ++c) {
      double acc = 0.0;
      int cnt = 0;
      for (int64_t dr = -rad; dr <= rad; ++dr) {
        for (int64_t dc = -rad; dc <= rad; ++dc) {
          const int64_t rr = std::clamp<int64_t>(r + dr, 0, n - 1);
          const int64_t cc = std::clamp<int64_t>(c + dc, 0, n - 1);
          acc += noise[static_cast<size_t>(rr * n + cc)];
          ++cnt;
        }
      }
      smooth[static_cast<size_t>(r * n + c)] = acc / std::sqrt(static_cast<double>(cnt));
    }
  }

  Image image({n, n});
  for (int64_t r = 0; r < n; ++r) {
    for (int64_t c = 0; c < n; ++c) {
      const size_t k = static_cast<size_t>(r * n + c);
      double v = -0.95;
      if (in_body[k] != 0) {
        const uint8_t label = mask.at(r, c);
        const double ramp = tex.gradient * ((static_cast<double>(r) + 0.5) / s - 0.5);
        if (label == 0) v = tex.body_level;
        if (label == 1) v = tex.lung_level + ramp;
        if (label == 2) v = tex.infection_level + ramp;
        v += tex.noise_std * smooth[k];
      }
      image.at(r, c) = static_cast<float>(std::clamp(v, -1.0, 1.0));
    }
  }
  return SamplePair{std::move(image), std::move(mask), 0, modality_tag};
}

eval::EvalCorpus make_phantom_corpus(const PhantomSpec& spec, int n, uint64_t seed, const std::string& prefix) {
  if (n < 1) throw ConfigError("phantom corpus size must be >= 1");
  spec.validate();
  eval::EvalCorpus corpus;
  for (int k = 0; k < n; ++k) {
    const int scan = k / spec.slices_per_scan;
    corpus.add(make_phantom(spec, scan % 2, derive_seed(seed, static_cast<uint64_t>(k))), prefix + std::to_string(scan));
  }
  return corpus;
}

double histogram_distance(const std::vector<Image>& a, const std::vector<Image>& b) {
  const auto hist = [](const std::vector<Image>& imgs) {
    std::array<double, 32> h{};
    double total = 0.0;
    for (const auto& img : imgs) {
      for (float v : img.data()) {
        const int bin = std::clamp(static_cast<int>((static_cast<double>(v) + 1.0) / 2.0 * 32.0), 0, 31);
        h[static_cast<size_t>(bin)] += 1.0;
        total += 1.0;
      }
    }
    if (total > 0.0) {
      for (auto& x : h) x /= total;
    }
    return h;
  };
  const auto ha = hist(a);
  const auto hb = hist(b);
  double d = 0.0;
  for (size_t k = 0; k < ha.size(); ++k) d += std::abs(ha[k] - hb[k]);
  return d;
}

// ---------------------------------------------------------------------------
// Volumes

void write_volume(const std::filesystem::path& header, const Volume& v) {
  const int64_t count = v.shape[0] * v.shape[1] * v.shape[2];
  if (static_cast<int64_t>(v.image.size()) != count || static_cast<int64_t>(v.labels.size()) != count)
    throw ValidationError("volume buffers do not match its shape");
  const auto stem = header.stem().string();
  const auto dir = header.has_parent_path() ? header.parent_path() : std::filesystem::path(".");
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / (stem + ".f32"), std::ios::binary);
    os.write(reinterpret_cast<const char*>(v.image.data()), static_cast<std::streamsize>(v.image.size() * sizeof(float)));
  }
  {
    std::ofstream os(dir / (stem + ".u8"), std::ios::binary);
    os.write(reinterpret_cast<const char*>(v.labels.data()), static_cast<std::streamsize>(v.labels.size()));
  }
  nlohmann::json j = {{"shape", v.shape},
                      {"image", stem + ".f32"},
                      {"labels", stem + ".u8"},
                      {"scan_id", v.scan_id},
                      {"modality_tag", v.modality_tag}};
  if (v.window) j["window"] = *v.window;
  write_json_atomic(header, j);
}

Volume read_volume(const std::filesystem::path& header) {
  const auto j = read_json(header);
  const auto dir = header.has_parent_path() ? header.parent_path() : std::filesystem::path(".");
  Volume v;
  try {
    j.at("shape").get_to(v.shape);
    v.scan_id = j.value("scan_id", header.stem().string());
    v.modality_tag = j.value("modality_tag", 0);
    if (j.contains("window")) v.window = j.at("window").get<std::array<double, 2>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad volume header " + header.string() + ": " + e.what());
  }
  for (auto d : v.shape) {
    if (d < 1) throw ValidationError("volume dimensions must be positive");
  }
  const auto count = static_cast<size_t>(v.shape[0] * v.shape[1] * v.shape[2]);
  const auto read_blob = [&](const std::string& name, size_t bytes, char* dst) {
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw StateError("missing volume data " + path.string());
    if (std::filesystem::file_size(path) != bytes)
      throw ValidationError("volume data " + path.string() + " does not match the header shape");
    std::ifstream is(path, std::ios::binary);
    is.read(dst, static_cast<std::streamsize>(bytes));
  };
  v.image.resize(count);
  v.labels.resize(count);
  read_blob(j.at("image").get<std::string>(), count * sizeof(float), reinterpret_cast<char*>(v.image.data()));
  read_blob(j.at("labels").get<std::string>(), count, reinterpret_cast<char*>(v.labels.data()));
  return v;
}

uint8_t remap_label(uint8_t source) {
  switch (source) {
    case 0: return 0;
    case 1:
    case 2: return 1;
    case 3: return 2;
    default: throw ValidationError("volume label " + std::to_string(source) + " is outside {0,1,2,3}");
  }
}

IngestResult ingest_volume(const std::filesystem::path& header, int64_t resolution,
                           const std::optional<std::filesystem::path>& out_dir) {
  if (resolution < 8) throw ConfigError("ingest resolution must be >= 8");
  const auto v = read_volume(header);
  const int64_t depth = v.shape[0];
  const int64_t h = v.shape[1];
  const int64_t w = v.shape[2];
  double lo = 0.0;
  double hi = 0.0;
  if (v.window) {
    lo = (*v.window)[0];
    hi = (*v.window)[1];
  } else {
    const auto [mn, mx] = std::minmax_element(v.image.begin(), v.image.end());
    lo = *mn;
    hi = *mx;
  }
  const double span = hi > lo ? hi - lo : 1.0;

  IngestResult out;
  eval::EvalCorpus corpus;
  for (int64_t d = 0; d < depth; ++d) {
    Image img({h, w});
    std::vector<uint8_t> labels(static_cast<size_t>(h * w));
    for (int64_t k = 0; k < h * w; ++k) {
      const size_t src = static_cast<size_t>(d * h * w + k);
      const double x = (static_cast<double>(v.image[src]) - lo) / span * 2.0 - 1.0;
      img.data()[static_cast<size_t>(k)] = static_cast<float>(std::clamp(x, -1.0, 1.0));
      labels[static_cast<size_t>(k)] = remap_label(v.labels[src]);
    }
    const Shape2 target{resolution, resolution};
    SamplePair pair{resize_image(img, target), resize_mask(ConditionMask({h, w}, std::move(labels)), target), 0,
                    v.modality_tag};
    out.names.push_back(v.scan_id + "_" + std::to_string(d));
    corpus.add(pair, v.scan_id);
    out.samples.push_back(std::move(pair));
  }
  if (out_dir) save_corpus(*out_dir, corpus);
  return out;
}

// ---------------------------------------------------------------------------
// Corpus directories

void save_corpus(const std::filesystem::path& dir, const eval::EvalCorpus& corpus) {
  corpus.validate();
  nlohmann::json samples = nlohmann::json::array();
  std::map<std::string, int> per_scan;
  for (size_t k = 0; k < corpus.size(); ++k) {
    const auto& id = corpus.scan_ids[k];
    const std::string name = id + "_" + std::to_string(per_scan[id]++) + ".png";
    io::save_image_png(dir / "images" / name, corpus.samples[k].image);
    io::save_mask_png(dir / "masks" / name, corpus.samples[k].mask);
    samples.push_back({{"image", "images/" + name},
                       {"mask", "masks/" + name},
                       {"scan_id", id},
                       {"modality_tag", corpus.samples[k].modality_tag}});
  }
  write_json_atomic(dir / "corpus.json", {{"samples", samples}});
}

eval::EvalCorpus load_corpus(const std::filesystem::path& dir) {
  const auto j = read_json(dir / "corpus.json");
  eval::EvalCorpus corpus;
  for (const auto& s : j.at("samples")) {
    SamplePair pair;
    pair.image = io::load_image_png(dir / s.at("image").get<std::string>());
    pair.mask = io::load_mask_png(dir / s.at("mask").get<std::string>());
    pair.modality_tag = s.value("modality_tag", 0);
    corpus.add(std::move(pair), s.at("scan_id").get<std::string>());
  }
  corpus.validate();
  return corpus;
}

std::vector<ConditionMask> load_masks(const std::filesystem::path& dir) {
  auto src = dir / "masks";
  if (!std::filesystem::is_directory(src)) src = dir;
  if (!std::filesystem::is_directory(src)) throw StateError("mask directory " + dir.string() + " does not exist");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(src)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no mask PNGs under " + src.string());
  std::vector<ConditionMask> masks;
  for (const auto& f : files) masks.push_back(io::load_mask_png(f));
  return masks;
}

}  // namespace cosingan::data
