#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tacnet/box.hpp"
#include "tacnet/evalkit.hpp"
#include "tacnet/tensor.hpp"

namespace tacnet::synth {

/// Motion patterns by class: 1 horizontal oscillation, 2 vertical oscillation,
/// 3 circular, 4 diagonal oscillation, 5 anti-diagonal oscillation,
/// 6 counter-clockwise circular.
inline constexpr std::size_t kMaxClasses = 6;

struct SynthConfig {
  std::size_t frame_size = 64;
  std::size_t video_length = 48;
  std::size_t num_classes = 3;
  double actor_min = 12.0;  // pixels
  double actor_max = 20.0;
  std::size_t transition_min = 6;  // frames, each side
  std::size_t transition_max = 12;
  std::size_t active_min = 12;
  std::size_t active_max = 24;
  double amplitude = 6.0;      // pixels
  double period = 8.0;         // frames
  double drift_speed = 0.25;   // pixels per frame during transitions
  std::size_t distractors = 2;
  double noise = 0.05;
  std::size_t episodes = 200;
  std::uint64_t seed = 2024;

  void validate() const;
};

struct Episode {
  std::string video;
  std::uint64_t episode_seed = 0;
  int label = 1;
  std::size_t frame_size = 0;
  /// Row-major frame_size x frame_size intensities per frame.
  std::vector<std::vector<float>> frames;
  std::size_t active_start = 0;  // inclusive
  std::size_t active_end = 0;    // inclusive
  std::size_t visible_start = 0;
  std::size_t visible_end = 0;
  /// Actor box on every frame where it is rendered.
  std::vector<std::optional<Box>> actor_boxes;

  std::size_t length() const { return frames.size(); }
  bool annotated(std::size_t frame) const { return frame >= active_start && frame <= active_end; }
  bool transitional(std::size_t frame) const {
    return frame >= visible_start && frame <= visible_end && !annotated(frame);
  }
  evalkit::GroundTruthTube gt_tube() const;
  /// [1, 1, S, S] tensor of one frame.
  Tensor frame_tensor(std::size_t frame) const;
  bool operator==(const Episode&) const = default;
};

/// Deterministic in (config, episode_index).
Episode generate_episode(const SynthConfig& config, std::size_t episode_index);
std::vector<Episode> generate_dataset(const SynthConfig& config);

/// Actor centre offset from its base position for class `label` at phase angle theta.
std::pair<double, double> motion_offset(int label, double amplitude, double theta);

struct Dataset {
  SynthConfig config;
  std::vector<Episode> episodes;
  std::string digest;  // hex SHA-256 over config and episode digests
};

std::string episode_digest(const Episode& ep);
std::string dataset_digest(const SynthConfig& config, const std::vector<Episode>& episodes);

/// Layout: manifest.json, gt.jsonl, and per episode <video>.tensor + <video>.gt.jsonl.
/// Returns the manifest digest.
std::string write_dataset(const SynthConfig& config, const std::vector<Episode>& episodes,
                          const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace tacnet::synth
