#include "tacnet/config.hpp"

#include <charconv>
#include <set>
#include <sstream>
#include <stdexcept>

#include "tacnet/checkpoint.hpp"

namespace tacnet::config {
namespace {

class Reader {
 public:
  explicit Reader(const KeyValues& kv) : kv_(kv) {}

  template <typename T>
  void get(const std::string& key, T& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    out = parse<T>(key, it->second);
  }

  template <typename T>
  void list(const std::string& key, std::vector<T>& out) {
    auto it = kv_.find(key);
    if (it == kv_.end()) return;
    used_.insert(key);
    out.clear();
    std::stringstream ss(it->second);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto b = item.find_first_not_of(' ');
      const auto e = item.find_last_not_of(' ');
      if (b == std::string::npos) continue;
      out.push_back(parse<T>(key, item.substr(b, e - b + 1)));
    }
  }

  void finish() const {
    std::string unknown;
    for (const auto& [k, v] : kv_) {
      if (!used_.contains(k)) unknown += (unknown.empty() ? "" : ", ") + k;
    }
    if (!unknown.empty()) throw std::invalid_argument("unknown config key(s): " + unknown);
  }

 private:
  template <typename T>
  static T parse(const std::string& key, const std::string& text) {
    if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      throw std::invalid_argument("config key '" + key + "': expected true or false, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else {
      T v{};
      const char* end = text.data() + text.size();
      auto [ptr, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || ptr != end) {
        throw std::invalid_argument("config key '" + key + "': cannot parse '" + text + "'");
      }
      return v;
    }
  }

  const KeyValues& kv_;
  std::set<std::string> used_;
};

}  // namespace

losses::MiningRule mining_rule_from_string(const std::string& s) {
  if (s == "raw-score") return losses::MiningRule::kRawScore;
  if (s == "category-prob") return losses::MiningRule::kCategoryProb;
  throw std::invalid_argument("unknown mining rule '" + s + "' (expected raw-score or category-prob)");
}

std::string to_string(losses::MiningRule rule) {
  return rule == losses::MiningRule::kRawScore ? "raw-score" : "category-prob";
}

synth::SynthConfig synth_config(const KeyValues& kv) {
  synth::SynthConfig c;
  Reader r(kv);
  r.get("frame_size", c.frame_size);
  r.get("video_length", c.video_length);
  r.get("num_classes", c.num_classes);
  r.get("actor_min", c.actor_min);
  r.get("actor_max", c.actor_max);
  r.get("transition_min", c.transition_min);
  r.get("transition_max", c.transition_max);
  r.get("active_min", c.active_min);
  r.get("active_max", c.active_max);
  r.get("amplitude", c.amplitude);
  r.get("period", c.period);
  r.get("drift_speed", c.drift_speed);
  r.get("distractors", c.distractors);
  r.get("noise", c.noise);
  r.get("episodes", c.episodes);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

tubes::LinkConfig link_config(const KeyValues& kv) {
  tubes::LinkConfig c;
  Reader r(kv);
  r.get("link_iou", c.link_iou);
  r.get("patience", c.patience);
  r.get("top_n", c.top_n);
  r.get("nms_iou", c.nms_iou);
  r.get("start_score", c.start_score);
  r.get("smoothing_window", c.smoothing_window);
  r.list("watershed_thresholds", c.watershed_thresholds);
  r.get("temporal_nms_iou", c.temporal_nms_iou);
  r.get("microtube_window", c.microtube_window);
  r.get("microtube_refinement", c.microtube_refinement);
  r.finish();
  c.validate();
  return c;
}

train::TrainConfig train_config(const KeyValues& kv) {
  train::TrainConfig c;
  Reader r(kv);
  r.get("lr", c.lr);
  r.get("momentum", c.momentum);
  r.get("warmup_steps", c.warmup_steps);
  r.get("warmup_lr", c.warmup_lr);
  r.get("epochs", c.epochs);
  r.get("max_steps", c.max_steps);
  r.get("batch_clips", c.batch_clips);
  r.list("decay_epochs", c.decay_epochs);
  r.get("decay_factor", c.decay_factor);
  r.get("weight_decay", c.weight_decay);
  r.get("clip_norm", c.clip_norm);
  r.get("seed", c.seed);
  std::string mode = losses::to_string(c.mode);
  r.get("mode", mode);
  c.mode = losses::train_mode_from_string(mode);
  std::string mining = to_string(c.mining);
  r.get("mining", mining);
  c.mining = mining_rule_from_string(mining);

  auto& m = c.model;
  r.list("strides", m.strides);
  r.list("aspect_ratios", m.aspect_ratios);
  r.list("anchor_sizes", m.anchor_sizes);
  r.list("feature_channels", m.feature_channels);
  r.get("hidden_channels", m.hidden_channels);
  r.get("clip_length", m.clip_length);
  r.get("dropout", m.dropout_p);
  std::string sites = checkpoint::to_string(m.relu_sites);
  r.get("relu_sites", sites);
  m.relu_sites = checkpoint::relu_sites_from_string(sites);
  r.get("temporal_context", m.temporal_context);
  r.finish();
  c.validate();
  return c;
}

detector::PostprocessConfig postprocess_config(const KeyValues& kv) {
  detector::PostprocessConfig c;
  Reader r(kv);
  r.get("score_floor", c.score_floor);
  r.get("nms_iou", c.nms_iou);
  r.get("top_n", c.top_n);
  r.finish();
  return c;
}

}  // namespace tacnet::config
