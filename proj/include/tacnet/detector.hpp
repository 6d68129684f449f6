#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tacnet/box.hpp"
#include "tacnet/convlstm.hpp"
#include "tacnet/tac.hpp"
#include "tacnet/tensor.hpp"

namespace tacnet::detector {

struct DetectorConfig {
  std::size_t input_size = 64;
  std::size_t input_channels = 1;
  /// Feature-map strides; each must double the previous one.
  std::vector<std::size_t> strides{8, 16};
  std::vector<double> aspect_ratios{1.0, 2.0, 0.5};
  /// Anchor side (normalized) of ratio-1 anchors at each scale; empty means 2*stride/input_size.
  std::vector<double> anchor_sizes;
  std::size_t num_classes = 3;
  /// Backbone channels at each scale.
  std::vector<std::size_t> feature_channels{16, 32};
  std::size_t hidden_channels = 16;
  std::size_t clip_length = 16;
  double dropout_p = 0.3;
  ReluSites relu_sites = ReluSites::kBoth;
  /// Bi-ConvLSTM after every scale when true; otherwise the detector is purely per-frame.
  bool temporal_context = true;

  std::size_t anchors_per_cell() const { return aspect_ratios.size(); }
  /// Values per anchor: 4 offsets, K+1 common scores, K state scores.
  std::size_t values_per_anchor() const { return 2 * num_classes + 5; }
  double anchor_size(std::size_t scale) const;
  void validate() const;
};

struct Anchor {
  double cx, cy, w, h;
  Box box() const { return Box::from_center(cx, cy, w, h); }
  friend bool operator==(const Anchor&, const Anchor&) = default;
};

/// Anchors concatenated over scales, then rows, columns and aspect ratios.
struct AnchorGrid {
  std::vector<Anchor> anchors;
  /// Per scale: map extent and index of its first anchor.
  std::vector<std::size_t> map_extent;
  std::vector<std::size_t> first_anchor;

  std::size_t size() const { return anchors.size(); }
};

AnchorGrid build_anchor_grid(const DetectorConfig& config);

struct GroundTruthBox {
  Box box;
  int label = 1;  // class in [1, K]
};

struct AnchorMatch {
  bool positive = false;
  int label = 0;
  std::size_t gt_index = 0;
  double iou = 0.0;
};

/// Positive iff IoU > 0.5 with some gt (assigned to its best gt, ties by lower
/// gt index); the best anchor of every gt is forced positive (ties by lower
/// anchor index, later gts override earlier ones on the same anchor).
std::vector<AnchorMatch> match_anchors(const AnchorGrid& grid, std::span<const GroundTruthBox> gts,
                                       double positive_iou = 0.5);

/// SSD offsets (dcx/w_a, dcy/h_a, log(w/w_a), log(h/h_a)).
std::array<double, 4> encode_box(const Box& box, const Anchor& anchor);
/// Inverse of encode_box followed by clipping to [0,1].
Box decode_box(std::span<const double> offsets, const Anchor& anchor);
Box decode_box_unclipped(std::span<const double> offsets, const Anchor& anchor);

struct ConvLayer {
  Tensor kernel;
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

struct DetectorModel {
  DetectorConfig config;
  std::vector<ConvLayer> stem;        // input -> first scale
  std::vector<ConvLayer> downsample;  // scale s -> s+1
  std::vector<BiConvLSTMLayer> context;
  std::vector<ConvLayer> heads;
  AnchorGrid anchors;

  static DetectorModel create(const DetectorConfig& config, std::uint64_t seed);
  /// Named parameter tensors in a fixed order.
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::vector<Tensor> parameters() const;
  void zero_heads();
};

/// Head outputs for a clip of L frames and B clips, frame-major: row f = t*B + b.
/// scores is [L*B, anchors, 2K+5].
struct RawHeadOutput {
  Tensor scores;
  std::size_t clip_length = 0;
  std::size_t batch = 0;
  std::size_t num_anchors = 0;
  std::size_t num_classes = 0;

  std::size_t frames() const { return clip_length * batch; }
  std::size_t stride() const { return 2 * num_classes + 5; }
  std::span<const double> row(std::size_t frame, std::size_t anchor) const;
  std::span<const double> reg(std::size_t frame, std::size_t anchor) const { return row(frame, anchor).subspan(0, 4); }
  tac::ScoreView scores_at(std::size_t frame, std::size_t anchor) const;
};

/// frames: L tensors of [B, C, S, S]. Backbone per frame, Bi-ConvLSTM per scale
/// (the fused output of scale s feeds the downsampling into scale s+1), 3x3 heads.
RawHeadOutput forward_clip(Graph& g, const DetectorModel& model, const std::vector<Tensor>& frames, bool training,
                           std::uint64_t seed);

struct FrameDetection {
  std::size_t frame = 0;
  int label = 1;
  Box box;
  double p = 0.0;
  double t = 0.0;
};

struct PostprocessConfig {
  double score_floor = 0.05;
  double nms_iou = 0.45;
  std::size_t top_n = 10;
  /// When false the state branch is untrained and t is replaced by p.
  bool use_state_scores = true;
};

/// Greedy NMS in descending p; ties by input order. Returns kept indices.
std::vector<std::size_t> nms(std::span<const FrameDetection> dets, double iou_threshold);

/// Decodes one frame's anchors into per-class detections: score floor on p,
/// per-class NMS, top-n per class by p.
std::vector<FrameDetection> postprocess_frame(const RawHeadOutput& out, const AnchorGrid& grid, std::size_t row,
                                              std::size_t frame_index, const PostprocessConfig& config);

}  // namespace tacnet::detector
