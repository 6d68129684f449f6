#include "tacnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "tacnet/seed.hpp"

namespace tacnet::train {

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !(warmup_lr > 0.0)) throw std::invalid_argument("TrainConfig: learning rates must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
  if (batch_clips < 1) throw std::invalid_argument("TrainConfig: batch_clips must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw std::invalid_argument("TrainConfig: decay_factor must lie in (0, 1]");
  if (weight_decay < 0.0 || clip_norm < 0.0) throw std::invalid_argument("TrainConfig: negative regularizer");
}

double learning_rate(const TrainConfig& config, std::size_t step, std::size_t epoch) {
  if (step < config.warmup_steps) return config.warmup_lr;
  double lr = config.lr;
  for (std::size_t mark : config.decay_epochs) {
    if (epoch >= mark) lr *= config.decay_factor;
  }
  return lr;
}

Batch make_batch(const std::vector<synth::Episode>& episodes, const std::vector<ClipRef>& clips,
                 std::size_t clip_length) {
  if (clips.empty()) throw std::invalid_argument("make_batch: empty batch");
  const std::size_t B = clips.size();
  const std::size_t S = episodes.at(clips.front().episode).frame_size;
  Batch batch;
  batch.annotations.resize(clip_length * B);
  for (std::size_t t = 0; t < clip_length; ++t) {
    Tensor frame({B, 1, S, S});
    auto v = frame.values();
    for (std::size_t b = 0; b < B; ++b) {
      const auto& ep = episodes.at(clips[b].episode);
      const std::size_t f = clips[b].start + t;
      if (ep.frame_size != S || f >= ep.length()) throw std::invalid_argument("make_batch: clip outside episode");
      std::copy(ep.frames[f].begin(), ep.frames[f].end(), v.begin() + static_cast<std::ptrdiff_t>(b * S * S));
      auto& ann = batch.annotations[t * B + b];
      ann.annotated = ep.annotated(f);
      if (ann.annotated) ann.boxes.push_back({*ep.actor_boxes[f], ep.label});
    }
    batch.frames.push_back(std::move(frame));
  }
  return batch;
}

std::vector<ClipRef> epoch_clips(const std::vector<synth::Episode>& episodes, std::size_t clip_length,
                                 std::uint64_t seed, std::size_t epoch) {
  std::mt19937_64 rng(mix_seed(seed, 0x5eed, epoch));
  std::vector<ClipRef> clips;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const std::size_t len = episodes[e].length();
    if (len < clip_length) continue;
    for (std::size_t k = 0; k < len / clip_length; ++k) {
      clips.push_back({e, static_cast<std::size_t>(rng() % (len - clip_length + 1))});
    }
  }
  std::shuffle(clips.begin(), clips.end(), rng);
  return clips;
}

detector::DetectorConfig model_config(const TrainConfig& config, const synth::SynthConfig& data) {
  detector::DetectorConfig m = config.model;
  m.input_size = data.frame_size;
  m.input_channels = 1;
  m.num_classes = data.num_classes;
  m.validate();
  return m;
}

void sgd_step(std::vector<Tensor>& params, SgdState& state, double lr, double momentum, double weight_decay) {
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.numel(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].values();
    auto g = params[i].grad();
    auto& v = state.velocity[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      v[k] = momentum * v[k] + g[k] + weight_decay * w[k];
      w[k] -= lr * v[k];
    }
  }
}

double clip_gradients(std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    for (double g : p.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : params) {
      for (double& g : p.grad()) g *= s;
    }
  }
  return norm;
}

TrainResult train_model(const std::vector<synth::Episode>& episodes, const synth::SynthConfig& data,
                        const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result{detector::DetectorModel::create(model_config(config, data), mix_seed(config.seed, 0x1417)), {}, 0};
  auto& model = result.model;
  auto params = model.parameters();
  SgdState sgd;
  const std::size_t L = model.config.clip_length;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (config.max_steps != 0 && result.steps >= config.max_steps) break;
    const auto clips = epoch_clips(episodes, L, config.seed, epoch);
    EpochLog log;
    log.epoch = epoch;
    for (std::size_t first = 0; first + config.batch_clips <= clips.size(); first += config.batch_clips) {
      if (config.max_steps != 0 && result.steps >= config.max_steps) break;
      const std::vector<ClipRef> chunk(clips.begin() + static_cast<std::ptrdiff_t>(first),
                                       clips.begin() + static_cast<std::ptrdiff_t>(first + config.batch_clips));
      const Batch batch = make_batch(episodes, chunk, L);
      for (auto& p : params) p.zero_grad();
      Graph g;
      const auto out = detector::forward_clip(g, model, batch.frames, true, mix_seed(config.seed, result.steps));
      const auto targets = losses::build_targets(out, model.anchors, batch.annotations, config.mode, config.mining);
      losses::LossBreakdown br;
      Tensor loss = losses::total_loss(g, out, targets, config.mode, &br);
      g.backward(loss);
      if (config.clip_norm > 0.0) clip_gradients(params, config.clip_norm);
      sgd_step(params, sgd, learning_rate(config, result.steps, epoch), config.momentum, config.weight_decay);
      ++result.steps;
      ++log.steps;
      const double np = static_cast<double>(br.num_positives);
      const double nt = static_cast<double>(br.num_positives + br.num_transitional);
      if (np > 0) {
        log.cls += br.cls / np;
        log.reg += br.reg / np;
      }
      if (config.mode == losses::TrainMode::kTac && nt > 0) log.trans += br.trans / nt;
      log.total += br.total;
      log.mean_positives += static_cast<double>(br.num_positives);
      log.mean_transitional += static_cast<double>(br.num_transitional);
    }
    if (log.steps == 0) break;
    const double n = static_cast<double>(log.steps);
    log.cls /= n;
    log.reg /= n;
    log.trans /= n;
    log.total /= n;
    log.mean_positives /= n;
    log.mean_transitional /= n;
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace tacnet::train
