#include "tacnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>
#include <stdexcept>

namespace tacnet::losses {
namespace {

double sorted_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}

double clamped_neg_log(double prob) { return -std::log(std::max(prob, kLogClamp)); }

/// sigmoid(x) and 1 - sigmoid(x) without cancellation.
std::pair<double, double> sigmoid_pair(double x) {
  if (x >= 0) {
    const double e = std::exp(-x);
    return {1.0 / (1.0 + e), e / (1.0 + e)};
  }
  const double e = std::exp(x);
  return {e / (1.0 + e), 1.0 / (1.0 + e)};
}

}  // namespace

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::kTac: return "tac";
    case TrainMode::kNoTac: return "no-tac";
    case TrainMode::kBgBaseline: return "bg-baseline";
  }
  return "tac";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "tac") return TrainMode::kTac;
  if (s == "no-tac") return TrainMode::kNoTac;
  if (s == "bg-baseline") return TrainMode::kBgBaseline;
  throw std::invalid_argument("unknown training mode '" + s + "' (expected tac, no-tac or bg-baseline)");
}

int mining_label(tac::ScoreView s, MiningRule rule) {
  const auto p = tac::category_probs(s);
  const auto best = std::max_element(p.begin() + 1, p.end());
  const int v = static_cast<int>(std::distance(p.begin(), best));
  const bool mined = rule == MiningRule::kRawScore ? s.c_plus[v] > s.c_plus[0] : p[v] > p[0];
  return mined ? v : 0;
}

std::vector<MinedAnchor> mine_transitional(const detector::RawHeadOutput& out,
                                           std::span<const FrameAnnotation> frames, MiningRule rule) {
  if (frames.size() != out.frames()) throw std::invalid_argument("mine_transitional: one annotation per frame row required");
  std::vector<MinedAnchor> mined;
  for (std::size_t f = 0; f < out.frames(); ++f) {
    if (frames[f].annotated) continue;
    for (std::size_t n = 0; n < out.num_anchors; ++n) {
      const int v = mining_label(out.scores_at(f, n), rule);
      if (v > 0) mined.push_back({f * out.num_anchors + n, v});
    }
  }
  return mined;
}

std::vector<std::size_t> hard_negative_mine(std::vector<NegativeCandidate> negatives, std::size_t num_positives) {
  const std::size_t keep = std::min(num_positives, negatives.size());
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<std::ptrdiff_t>(keep), negatives.end(),
                    [](const NegativeCandidate& a, const NegativeCandidate& b) {
                      if (a.background_prob != b.background_prob) return a.background_prob < b.background_prob;
                      return a.instance < b.instance;
                    });
  std::vector<std::size_t> out(keep);
  for (std::size_t i = 0; i < keep; ++i) out[i] = negatives[i].instance;
  std::sort(out.begin(), out.end());
  return out;
}

BatchTargets build_targets(const detector::RawHeadOutput& out, const detector::AnchorGrid& grid,
                           std::span<const FrameAnnotation> frames, TrainMode mode, MiningRule rule) {
  if (frames.size() != out.frames()) throw std::invalid_argument("build_targets: one annotation per frame row required");
  if (grid.size() != out.num_anchors) throw std::invalid_argument("build_targets: anchor grid does not match head output");
  BatchTargets targets;
  std::vector<NegativeCandidate> negatives;
  for (std::size_t f = 0; f < out.frames(); ++f) {
    if (!frames[f].annotated) continue;
    const auto matches = detector::match_anchors(grid, frames[f].boxes);
    for (std::size_t n = 0; n < grid.size(); ++n) {
      const std::size_t instance = f * out.num_anchors + n;
      if (matches[n].positive) {
        targets.positives.push_back(instance);
        targets.positive_labels.push_back(matches[n].label);
        targets.positive_offsets.push_back(
            detector::encode_box(frames[f].boxes[matches[n].gt_index].box, grid.anchors[n]));
      } else {
        negatives.push_back({instance, tac::category_probs(out.scores_at(f, n))[0]});
      }
    }
  }
  targets.negatives = hard_negative_mine(std::move(negatives), targets.positives.size());
  if (mode != TrainMode::kNoTac) {
    for (const auto& m : mine_transitional(out, frames, rule)) {
      targets.transitional.push_back(m.instance);
      targets.transitional_labels.push_back(m.label);
    }
  }
  return targets;
}

double cls_loss(std::span<const double> positive_target_probs, std::span<const double> negative_background_probs) {
  std::vector<double> terms;
  for (double p : positive_target_probs) terms.push_back(clamped_neg_log(p));
  for (double p : negative_background_probs) terms.push_back(clamped_neg_log(p));
  return sorted_sum(std::move(terms));
}

double trans_loss(std::span<const double> positive_active_probs, std::span<const double> transitional_active_probs) {
  std::vector<double> terms;
  for (double t : positive_active_probs) terms.push_back(clamped_neg_log(t));
  for (double t : transitional_active_probs) terms.push_back(clamped_neg_log(1.0 - t));
  return sorted_sum(std::move(terms));
}

double smooth_l1(double d) {
  const double a = std::abs(d);
  return a < 1.0 ? 0.5 * d * d : a - 0.5;
}

double reg_loss(std::span<const std::array<double, 4>> predicted, std::span<const std::array<double, 4>> target) {
  if (predicted.size() != target.size()) throw std::invalid_argument("reg_loss: size mismatch");
  std::vector<double> terms;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    for (std::size_t k = 0; k < 4; ++k) terms.push_back(smooth_l1(predicted[i][k] - target[i][k]));
  }
  return sorted_sum(std::move(terms));
}

double combine_losses(double cls, double reg, double trans, std::size_t num_positives, std::size_t num_trans) {
  double total = 0.0;
  if (num_positives > 0) total += (cls + reg) / static_cast<double>(num_positives);
  if (num_trans > 0) total += trans / static_cast<double>(num_trans);
  return total;
}

Tensor total_loss(Graph& g, const detector::RawHeadOutput& out, const BatchTargets& targets, TrainMode mode,
                  LossBreakdown* breakdown) {
  const std::size_t K = out.num_classes;
  const std::size_t D = out.stride();
  const std::size_t plus = 4;
  const std::size_t minus = 5 + K;
  auto values = out.scores.values();
  auto local = std::make_shared<std::vector<double>>(values.size(), 0.0);

  const std::size_t num_p = targets.positives.size();
  const bool state_branch = mode == TrainMode::kTac;
  const std::size_t num_t = state_branch ? num_p + targets.transitional.size() : 0;
  const double wp = num_p > 0 ? 1.0 / static_cast<double>(num_p) : 0.0;
  const double wt = num_t > 0 ? 1.0 / static_cast<double>(num_t) : 0.0;

  std::vector<double> cls_terms, reg_terms, trans_terms;

  // Cross-entropy over the K+1 common-mode logits of one instance.
  auto add_cls = [&](std::size_t instance, std::size_t target) {
    const std::size_t base = instance * D;
    std::vector<double> z(K + 1);
    z[0] = values[base + plus];
    for (std::size_t k = 1; k <= K; ++k) z[k] = values[base + plus + k] + values[base + minus + k - 1];
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (double& v : z) v /= sum;
    cls_terms.push_back(clamped_neg_log(z[target]));
    if (z[target] < kLogClamp) return;
    auto& gr = *local;
    for (std::size_t k = 0; k <= K; ++k) {
      const double dz = wp * (z[k] - (k == target ? 1.0 : 0.0));
      gr[base + plus + k] += dz;
      if (k > 0) gr[base + minus + k - 1] += dz;
    }
  };

  // Binary cross-entropy on the differential logit c+_y - c-_y.
  auto add_trans = [&](std::size_t instance, std::size_t label, bool active) {
    const std::size_t base = instance * D;
    const double d = values[base + plus + label] - values[base + minus + label - 1];
    const auto [t, one_minus_t] = sigmoid_pair(d);
    const double prob = active ? t : one_minus_t;
    trans_terms.push_back(clamped_neg_log(prob));
    if (prob < kLogClamp) return;
    const double dd = wt * (active ? -one_minus_t : t);
    (*local)[base + plus + label] += dd;
    (*local)[base + minus + label - 1] -= dd;
  };

  for (std::size_t i = 0; i < num_p; ++i) {
    const std::size_t j = targets.positives[i];
    add_cls(j, static_cast<std::size_t>(targets.positive_labels[i]));
    const std::size_t base = j * D;
    for (std::size_t k = 0; k < 4; ++k) {
      const double diff = values[base + k] - targets.positive_offsets[i][k];
      reg_terms.push_back(smooth_l1(diff));
      (*local)[base + k] += wp * (std::abs(diff) < 1.0 ? diff : (diff > 0 ? 1.0 : -1.0));
    }
    if (state_branch) add_trans(j, static_cast<std::size_t>(targets.positive_labels[i]), true);
  }
  for (std::size_t j : targets.negatives) add_cls(j, 0);
  if (mode == TrainMode::kBgBaseline) {
    for (std::size_t j : targets.transitional) add_cls(j, 0);
  } else if (state_branch) {
    for (std::size_t i = 0; i < targets.transitional.size(); ++i) {
      add_trans(targets.transitional[i], static_cast<std::size_t>(targets.transitional_labels[i]), false);
    }
  }

  LossBreakdown b;
  b.cls = sorted_sum(std::move(cls_terms));
  b.reg = sorted_sum(std::move(reg_terms));
  b.trans = sorted_sum(std::move(trans_terms));
  b.num_positives = num_p;
  b.num_transitional = state_branch ? targets.transitional.size() : 0;
  b.total = combine_losses(b.cls, b.reg, b.trans, num_p, num_t);
  if (breakdown) *breakdown = b;

  Tensor loss = g.make_output({1}, {&out.scores});
  loss.values()[0] = b.total;
  if (loss.requires_grad()) {
    Tensor scores = out.scores;
    g.record([loss, scores, local]() mutable {
      const double go = loss.grad()[0];
      auto gs = scores.grad();
      for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += go * (*local)[i];
    });
  }
  return loss;
}

}  // namespace tacnet::losses
