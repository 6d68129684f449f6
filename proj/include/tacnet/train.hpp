#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "tacnet/detector.hpp"
#include "tacnet/losses.hpp"
#include "tacnet/synthdata.hpp"

namespace tacnet::train {

struct TrainConfig {
  double lr = 0.001;
  double momentum = 0.9;
  std::size_t warmup_steps = 100;
  double warmup_lr = 0.0001;
  std::size_t epochs = 10;
  /// Stop after this many steps when non-zero.
  std::size_t max_steps = 0;
  std::size_t batch_clips = 4;
  /// lr is multiplied by decay_factor at each listed epoch mark.
  std::vector<std::size_t> decay_epochs;
  double decay_factor = 0.1;
  double weight_decay = 0.0;
  /// Global gradient L2 norm cap; 0 disables clipping.
  double clip_norm = 0.0;
  std::uint64_t seed = 1;
  losses::TrainMode mode = losses::TrainMode::kTac;
  losses::MiningRule mining = losses::MiningRule::kRawScore;
  /// Architecture; input_size, input_channels and num_classes come from the dataset.
  detector::DetectorConfig model;

  void validate() const;
};

/// Learning rate for a step that belongs to `epoch` (both 0-based).
double learning_rate(const TrainConfig& config, std::size_t step, std::size_t epoch);

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  /// Per-step means of the normalized terms: cls and reg over N_p, trans over N_t.
  double cls = 0.0;
  double reg = 0.0;
  double trans = 0.0;
  double total = 0.0;
  double mean_positives = 0.0;
  double mean_transitional = 0.0;
};

/// One clip: L consecutive frames of an episode starting at `start`.
struct ClipRef {
  std::size_t episode;
  std::size_t start;
};

/// Frame tensors [B, 1, S, S] per clip position and per-row annotations
/// (row = t * B + b) for a batch of clips.
struct Batch {
  std::vector<Tensor> frames;
  std::vector<losses::FrameAnnotation> annotations;
};
Batch make_batch(const std::vector<synth::Episode>& episodes, const std::vector<ClipRef>& clips,
                 std::size_t clip_length);

/// Every episode contributes length / L clips at random offsets; order is shuffled.
std::vector<ClipRef> epoch_clips(const std::vector<synth::Episode>& episodes, std::size_t clip_length,
                                 std::uint64_t seed, std::size_t epoch);

/// Copies the dataset-dependent fields into the architecture config.
detector::DetectorConfig model_config(const TrainConfig& config, const synth::SynthConfig& data);

struct SgdState {
  std::vector<std::vector<double>> velocity;
};

/// v = momentum * v + g + wd * w; w -= lr * v.
void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum, double weight_decay);

/// Scales every gradient so the global L2 norm is at most max_norm; returns the norm before.
double clip_gradients(std::vector<Tensor>& params, double max_norm);

using EpochCallback = std::function<void(const EpochLog&)>;

struct TrainResult {
  detector::DetectorModel model;
  std::vector<EpochLog> epochs;
  std::size_t steps = 0;
};

/// Deterministic for a fixed config and dataset; single-threaded.
TrainResult train_model(const std::vector<synth::Episode>& episodes, const synth::SynthConfig& data,
                        const TrainConfig& config, const EpochCallback& on_epoch = {});

}  // namespace tacnet::train
