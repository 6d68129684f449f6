#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "tacnet/detector.hpp"
#include "tacnet/tensor.hpp"

namespace tacnet::losses {

/// Training objective variant.
///  kTac:        classification + regression + transitional loss on P and mined T.
///  kNoTac:      classification + regression only; the state branch is not trained.
///  kBgBaseline: mined transitional anchors are trained as background.
enum class TrainMode { kTac, kNoTac, kBgBaseline };

/// Simple-mining condition for an anchor of an unannotated frame with predicted
/// class v = argmax_{i>=1} p_i.
///  kRawScore:     c+_v > c+_0
///  kCategoryProb: p_v > p_0
enum class MiningRule { kRawScore, kCategoryProb };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

/// Anchor instance = (frame row, anchor) flattened as row * num_anchors + anchor.
struct BatchTargets {
  std::vector<std::size_t> positives;
  std::vector<int> positive_labels;
  std::vector<std::array<double, 4>> positive_offsets;
  /// Negatives kept after hard-negative mining (subset of annotated frames).
  std::vector<std::size_t> negatives;
  /// Mined transitional instances (unannotated frames only) and their classes v.
  std::vector<std::size_t> transitional;
  std::vector<int> transitional_labels;
};

/// Ground truth for one frame row of a RawHeadOutput. `annotated` marks frames
/// belonging to G; unannotated frames feed transitional mining.
struct FrameAnnotation {
  bool annotated = false;
  std::vector<detector::GroundTruthBox> boxes;
};

struct MinedAnchor {
  std::size_t instance;
  int label;
};

/// Mining over the given rows; annotated rows never contribute.
std::vector<MinedAnchor> mine_transitional(const detector::RawHeadOutput& out,
                                           std::span<const FrameAnnotation> frames, MiningRule rule);

/// Rule applied to one anchor's scores; returns v or 0 when not mined.
int mining_label(tac::ScoreView s, MiningRule rule);

struct NegativeCandidate {
  std::size_t instance;
  double background_prob;
};

/// Keeps the min(num_positives, |N|) candidates with lowest background
/// probability, ties by instance index; result sorted by instance.
std::vector<std::size_t> hard_negative_mine(std::vector<NegativeCandidate> negatives, std::size_t num_positives);

BatchTargets build_targets(const detector::RawHeadOutput& out, const detector::AnchorGrid& grid,
                           std::span<const FrameAnnotation> frames, TrainMode mode, MiningRule rule);

inline constexpr double kLogClamp = 1e-12;

/// -sum log p_y over positives - sum log p_0 over negatives (log clamped at 1e-12).
double cls_loss(std::span<const double> positive_target_probs, std::span<const double> negative_background_probs);
/// -sum log t_y over positives - sum log(1 - t_v) over transitional members.
double trans_loss(std::span<const double> positive_active_probs, std::span<const double> transitional_active_probs);
double smooth_l1(double d);
double reg_loss(std::span<const std::array<double, 4>> predicted, std::span<const std::array<double, 4>> target);
/// (cls + reg) / N_p + trans / N_t with empty terms dropped when a count is zero.
double combine_losses(double cls, double reg, double trans, std::size_t num_positives, std::size_t num_trans);

struct LossBreakdown {
  double cls = 0.0;
  double reg = 0.0;
  double trans = 0.0;
  double total = 0.0;
  std::size_t num_positives = 0;
  std::size_t num_transitional = 0;
};

/// Differentiable combined objective over head outputs for fixed targets.
/// N_p = |P|, N_t = |P| + |T|. Terms are summed in sorted order so the value does
/// not depend on anchor enumeration order.
Tensor total_loss(Graph& g, const detector::RawHeadOutput& out, const BatchTargets& targets, TrainMode mode,
                  LossBreakdown* breakdown = nullptr);

}  // namespace tacnet::losses
