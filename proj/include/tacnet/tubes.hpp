#pragma once

#include <string>
#include <vector>

#include "tacnet/box.hpp"
#include "tacnet/detector.hpp"

namespace tacnet::tubes {

struct TubeEntry {
  std::size_t frame = 0;
  Box box;
  double p = 0.0;
  double t = 0.0;
  /// Filled in across a detection gap rather than claimed.
  bool interpolated = false;
  /// Index of the claimed detection in the linker input; unset for interpolated entries.
  std::size_t detection = static_cast<std::size_t>(-1);
};

struct Tube {
  std::string video;
  int label = 1;
  std::vector<TubeEntry> entries;  // strictly increasing, gap-free frames
  double score = 0.0;              // running mean of claimed p

  std::size_t first_frame() const { return entries.front().frame; }
  std::size_t last_frame() const { return entries.back().frame; }
};

struct TrimSegment {
  std::size_t start = 0;  // inclusive, absolute frame index
  std::size_t end = 0;    // inclusive
  double mean_state = 0.0;
  double score = 0.0;     // sum over frames of (a_f - 0.5)
  friend bool operator==(const TrimSegment&, const TrimSegment&) = default;
};

struct LinkConfig {
  double link_iou = 0.3;
  std::size_t patience = 3;
  std::size_t top_n = 10;
  double nms_iou = 0.45;
  /// Unclaimed detections need at least this p to start a tube.
  double start_score = 0.1;
  std::size_t smoothing_window = 5;
  std::vector<double> watershed_thresholds{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  double temporal_nms_iou = 0.2;
  std::size_t microtube_window = 8;
  bool microtube_refinement = true;

  void validate() const;
};

/// Per frame and class: NMS at nms_iou, then the top_n by p. Output keeps
/// (frame, class, descending p) order.
std::vector<detector::FrameDetection> prepare_detections(const std::vector<detector::FrameDetection>& dets,
                                                         const LinkConfig& config);

/// Greedy online linking per class; see LinkConfig for the constants.
std::vector<Tube> link_greedy(const std::vector<detector::FrameDetection>& dets, const LinkConfig& config,
                              const std::string& video = "");

/// Centered moving average of t with the window truncated at the tube ends.
std::vector<double> smooth_scores(const Tube& tube, std::size_t window);

double temporal_iou(std::size_t a_start, std::size_t a_end, std::size_t b_start, std::size_t b_end);

/// Multi-threshold grouping of the smoothed state signal into segments.
std::vector<TrimSegment> watershed_trim(const Tube& tube, const LinkConfig& config);

/// Replaces every entry's p by its mean over a centered window of m tube frames
/// [i - (m-1)/2, i + m/2], truncated at the ends. Boxes and t are untouched.
void microtube_refine(std::vector<Tube>& tubes, std::size_t window);

struct ScoredTube {
  std::string video;
  int label = 1;
  double score = 0.0;
  TrimSegment segment;
  std::vector<TubeEntry> entries;  // entries inside the segment
};

/// Mean of p*t over the segment.
ScoredTube score_tube(const TrimSegment& segment, const Tube& tube);

struct LinkResult {
  std::vector<ScoredTube> tubes;
  /// Frame-level detections with tube-refined p where refinement applies.
  std::vector<detector::FrameDetection> frame_detections;
};

/// link -> trim -> score for one video. Micro-tube refinement only touches the
/// exported frame detections; tubes are scored from the unrefined p.
LinkResult process_video(const std::vector<detector::FrameDetection>& dets, const LinkConfig& config,
                         const std::string& video);

}  // namespace tacnet::tubes
