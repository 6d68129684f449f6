#include "tacnet/synthdata.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "tacnet/io.hpp"
#include "tacnet/seed.hpp"

namespace tacnet::synth {
namespace {

using json = nlohmann::json;

struct Square {
  double cx, cy, side;
};

/// Fraction of pixel [px, px+1) x [py, py+1) covered by the square.
double coverage(const Square& s, std::size_t px, std::size_t py) {
  const double x0 = std::max(static_cast<double>(px), s.cx - 0.5 * s.side);
  const double x1 = std::min(static_cast<double>(px) + 1.0, s.cx + 0.5 * s.side);
  const double y0 = std::max(static_cast<double>(py), s.cy - 0.5 * s.side);
  const double y1 = std::min(static_cast<double>(py) + 1.0, s.cy + 0.5 * s.side);
  if (x1 <= x0 || y1 <= y0) return 0.0;
  return (x1 - x0) * (y1 - y0);
}

void paint(std::vector<double>& img, std::size_t size, const Square& s, double intensity) {
  const long lo_x = std::max(0L, static_cast<long>(std::floor(s.cx - 0.5 * s.side)));
  const long hi_x = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(s.cx + 0.5 * s.side)));
  const long lo_y = std::max(0L, static_cast<long>(std::floor(s.cy - 0.5 * s.side)));
  const long hi_y = std::min(static_cast<long>(size) - 1, static_cast<long>(std::ceil(s.cy + 0.5 * s.side)));
  for (long y = lo_y; y <= hi_y; ++y) {
    for (long x = lo_x; x <= hi_x; ++x) {
      const double c = coverage(s, static_cast<std::size_t>(x), static_cast<std::size_t>(y));
      if (c <= 0.0) continue;
      double& v = img[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)];
      v = v * (1.0 - c) + intensity * c;
    }
  }
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

std::size_t uniform_int(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return lo + static_cast<std::size_t>(rng() % (hi - lo + 1));
}

json config_to_json(const SynthConfig& c) {
  return {{"frame_size", c.frame_size},       {"video_length", c.video_length},
          {"num_classes", c.num_classes},     {"actor_min", c.actor_min},
          {"actor_max", c.actor_max},         {"transition_min", c.transition_min},
          {"transition_max", c.transition_max}, {"active_min", c.active_min},
          {"active_max", c.active_max},       {"amplitude", c.amplitude},
          {"period", c.period},               {"drift_speed", c.drift_speed},
          {"distractors", c.distractors},     {"noise", c.noise},
          {"episodes", c.episodes},           {"seed", c.seed}};
}

SynthConfig config_from_json(const json& j) {
  SynthConfig c;
  c.frame_size = j.at("frame_size");
  c.video_length = j.at("video_length");
  c.num_classes = j.at("num_classes");
  c.actor_min = j.at("actor_min");
  c.actor_max = j.at("actor_max");
  c.transition_min = j.at("transition_min");
  c.transition_max = j.at("transition_max");
  c.active_min = j.at("active_min");
  c.active_max = j.at("active_max");
  c.amplitude = j.at("amplitude");
  c.period = j.at("period");
  c.drift_speed = j.at("drift_speed");
  c.distractors = j.at("distractors");
  c.noise = j.at("noise");
  c.episodes = j.at("episodes");
  c.seed = j.at("seed");
  return c;
}

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

}  // namespace

void SynthConfig::validate() const {
  if (num_classes < 2 || num_classes > kMaxClasses) {
    throw std::invalid_argument("SynthConfig: num_classes must lie in [2, " + std::to_string(kMaxClasses) + "], got " +
                                std::to_string(num_classes));
  }
  if (frame_size < 16) throw std::invalid_argument("SynthConfig: frame_size must be >= 16");
  if (!(actor_min > 0.0 && actor_min <= actor_max)) throw std::invalid_argument("SynthConfig: bad actor size range");
  if (transition_min > transition_max || active_min > active_max || active_min < 1) {
    throw std::invalid_argument("SynthConfig: bad transition or active length range");
  }
  if (2 * transition_max + active_min > video_length) {
    throw std::invalid_argument("SynthConfig: transitions plus active phase exceed the video length");
  }
  const double margin = 0.5 * actor_max + amplitude + drift_speed * static_cast<double>(transition_max) + 1.0;
  if (2.0 * margin >= static_cast<double>(frame_size)) {
    throw std::invalid_argument("SynthConfig: actor motion does not fit in the frame");
  }
  if (period <= 0.0 || noise < 0.0 || drift_speed < 0.0) throw std::invalid_argument("SynthConfig: bad motion/noise");
}

std::pair<double, double> motion_offset(int label, double amplitude, double theta) {
  const double s = amplitude * std::sin(theta);
  const double c = amplitude * std::cos(theta);
  switch (label) {
    case 1: return {s, 0.0};
    case 2: return {0.0, s};
    case 3: return {s, c};
    case 4: return {s, s};
    case 5: return {s, -s};
    case 6: return {s, -c};
    default: throw std::invalid_argument("motion_offset: unknown class " + std::to_string(label));
  }
}

evalkit::GroundTruthTube Episode::gt_tube() const {
  evalkit::GroundTruthTube tube;
  tube.video = video;
  tube.label = label;
  for (std::size_t f = active_start; f <= active_end; ++f) tube.frames.emplace_back(f, *actor_boxes[f]);
  return tube;
}

Tensor Episode::frame_tensor(std::size_t frame) const {
  Tensor t({1, 1, frame_size, frame_size});
  auto v = t.values();
  const auto& src = frames.at(frame);
  for (std::size_t i = 0; i < src.size(); ++i) v[i] = src[i];
  return t;
}

Episode generate_episode(const SynthConfig& config, std::size_t episode_index) {
  config.validate();
  Episode ep;
  ep.episode_seed = mix_seed(config.seed, episode_index);
  std::mt19937_64 rng(ep.episode_seed);
  {
    std::ostringstream os;
    os << "video" << std::setw(5) << std::setfill('0') << episode_index;
    ep.video = os.str();
  }
  const auto K = config.num_classes;
  const auto L = config.video_length;
  const double S = static_cast<double>(config.frame_size);
  ep.label = static_cast<int>(1 + rng() % K);
  ep.frame_size = config.frame_size;

  const std::size_t pre = uniform_int(rng, config.transition_min, config.transition_max);
  const std::size_t post = uniform_int(rng, config.transition_min, config.transition_max);
  const std::size_t active = uniform_int(rng, config.active_min, std::min(config.active_max, L - pre - post));
  const std::size_t visible = pre + active + post;
  ep.visible_start = uniform_int(rng, 0, L - visible);
  ep.visible_end = ep.visible_start + visible - 1;
  ep.active_start = ep.visible_start + pre;
  ep.active_end = ep.active_start + active - 1;

  const double side = uniform(rng, config.actor_min, config.actor_max);
  const double A = config.amplitude;
  const double margin = 0.5 * config.actor_max + A + config.drift_speed * static_cast<double>(config.transition_max) + 1.0;
  // Each axis is a uniform base plus an arcsine-distributed offset: a moving
  // sinusoid, or a frozen one for the static axis of classes 1 and 2. Single
  // frames of those two classes are then identically distributed.
  const double base_x = uniform(rng, margin, S - margin);
  const double base_y = uniform(rng, margin, S - margin);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double frozen = A * std::sin(uniform(rng, 0.0, 2.0 * std::numbers::pi));
  const double static_x = ep.label == 2 ? frozen : 0.0;
  const double static_y = ep.label == 1 ? frozen : 0.0;
  const double drift_pre = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double drift_post = uniform(rng, 0.0, 2.0 * std::numbers::pi);

  auto active_pos = [&](std::size_t f) {
    const double theta = phase + 2.0 * std::numbers::pi * static_cast<double>(f - ep.active_start) / config.period;
    const auto [dx, dy] = motion_offset(ep.label, A, theta);
    return std::pair{base_x + static_x + dx, base_y + static_y + dy};
  };
  const auto start_pos = active_pos(ep.active_start);
  const auto end_pos = active_pos(ep.active_end);

  struct Distractor {
    double x, y, vx, vy;
  };
  std::vector<Distractor> distractors;
  for (std::size_t d = 0; d < config.distractors; ++d) {
    const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double speed = uniform(rng, 1.0, 2.0);
    distractors.push_back({uniform(rng, 4.0, S - 4.0), uniform(rng, 4.0, S - 4.0), speed * std::cos(angle),
                           speed * std::sin(angle)});
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n = config.frame_size;
  ep.frames.resize(L);
  ep.actor_boxes.assign(L, std::nullopt);
  for (std::size_t f = 0; f < L; ++f) {
    std::vector<double> img(n * n, 0.15);
    for (auto& d : distractors) {
      paint(img, n, {d.x, d.y, 4.0}, 0.6);
      d.x += d.vx;
      d.y += d.vy;
      if (d.x < 3.0 || d.x > S - 3.0) d.vx = -d.vx;
      if (d.y < 3.0 || d.y > S - 3.0) d.vy = -d.vy;
    }
    if (f >= ep.visible_start && f <= ep.visible_end) {
      std::pair<double, double> pos;
      if (f < ep.active_start) {
        const double back = config.drift_speed * static_cast<double>(ep.active_start - f);
        pos = {start_pos.first - back * std::cos(drift_pre), start_pos.second - back * std::sin(drift_pre)};
      } else if (f > ep.active_end) {
        const double fwd = config.drift_speed * static_cast<double>(f - ep.active_end);
        pos = {end_pos.first + fwd * std::cos(drift_post), end_pos.second + fwd * std::sin(drift_post)};
      } else {
        pos = active_pos(f);
      }
      paint(img, n, {pos.first, pos.second, side}, 0.85);
      paint(img, n, {pos.first, pos.second, 0.5 * side}, 0.45);
      ep.actor_boxes[f] = Box::from_center(pos.first / S, pos.second / S, side / S, side / S);
    }
    auto& out = ep.frames[f];
    out.resize(n * n);
    for (std::size_t i = 0; i < n * n; ++i) out[i] = static_cast<float>(img[i] + config.noise * noise(rng));
  }
  return ep;
}

std::vector<Episode> generate_dataset(const SynthConfig& config) {
  std::vector<Episode> out;
  out.reserve(config.episodes);
  for (std::size_t i = 0; i < config.episodes; ++i) out.push_back(generate_episode(config, i));
  return out;
}

std::string episode_digest(const Episode& ep) {
  std::string blob;
  for (const auto& frame : ep.frames) blob.append(reinterpret_cast<const char*>(frame.data()), frame.size() * sizeof(float));
  blob += io::gt_to_jsonl_line(ep.gt_tube());
  return io::sha256_hex(blob);
}

std::string dataset_digest(const SynthConfig& config, const std::vector<Episode>& episodes) {
  std::string blob = config_to_json(config).dump();
  for (const auto& ep : episodes) blob += episode_digest(ep);
  return io::sha256_hex(blob);
}

std::string write_dataset(const SynthConfig& config, const std::vector<Episode>& episodes,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format_version"] = 1;
  manifest["config"] = config_to_json(config);
  manifest["episodes"] = json::array();
  std::ofstream gt_all(dir / "gt.jsonl");
  for (const auto& ep : episodes) {
    io::write_raw_tensor(dir / (ep.video + ".tensor"), ep.frames, ep.frame_size);
    const std::string gt_line = io::gt_to_jsonl_line(ep.gt_tube());
    std::ofstream(dir / (ep.video + ".gt.jsonl")) << gt_line << '\n';
    gt_all << gt_line << '\n';
    json actors = json::array();
    for (std::size_t f = 0; f < ep.actor_boxes.size(); ++f) {
      if (ep.actor_boxes[f]) actors.push_back({{"frame", f}, {"box", box_json(*ep.actor_boxes[f])}});
    }
    manifest["episodes"].push_back({{"video", ep.video},
                                    {"episode_seed", ep.episode_seed},
                                    {"class", ep.label},
                                    {"frames", ep.length()},
                                    {"active", {ep.active_start, ep.active_end}},
                                    {"visible", {ep.visible_start, ep.visible_end}},
                                    {"actor", actors},
                                    {"sha256", episode_digest(ep)}});
  }
  const std::string digest = dataset_digest(config, episodes);
  manifest["digest"] = digest;
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
  return digest;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw std::runtime_error("load_dataset: cannot open " + (dir / "manifest.json").string());
  const json manifest = json::parse(in);
  Dataset ds;
  ds.config = config_from_json(manifest.at("config"));
  for (const auto& e : manifest.at("episodes")) {
    Episode ep;
    ep.video = e.at("video");
    ep.episode_seed = e.at("episode_seed");
    ep.label = e.at("class");
    ep.frame_size = ds.config.frame_size;
    ep.active_start = e.at("active")[0];
    ep.active_end = e.at("active")[1];
    ep.visible_start = e.at("visible")[0];
    ep.visible_end = e.at("visible")[1];
    ep.frames = io::read_raw_tensor(dir / (ep.video + ".tensor"), ep.frame_size);
    const std::size_t frames = e.at("frames");
    if (ep.frames.size() != frames) throw std::runtime_error("load_dataset: frame count mismatch for " + ep.video);
    ep.actor_boxes.assign(frames, std::nullopt);
    for (const auto& a : e.at("actor")) {
      const auto& b = a.at("box");
      ep.actor_boxes.at(a.at("frame").get<std::size_t>()) = Box{b[0], b[1], b[2], b[3]};
    }
    if (episode_digest(ep) != e.at("sha256").get<std::string>()) {
      throw std::runtime_error("load_dataset: checksum mismatch for " + ep.video);
    }
    ds.episodes.push_back(std::move(ep));
  }
  ds.digest = manifest.at("digest");
  return ds;
}

}  // namespace tacnet::synth
