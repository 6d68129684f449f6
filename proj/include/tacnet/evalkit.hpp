#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tacnet/box.hpp"

namespace tacnet::evalkit {

using tacnet::spatial_iou;

/// Frame-indexed boxes, strictly increasing frames.
using FrameBoxes = std::vector<std::pair<std::size_t, Box>>;

struct GroundTruthTube {
  std::string video;
  int label = 1;
  FrameBoxes frames;  // active extent only
};

struct TubeDetection {
  std::string video;
  int label = 1;
  double score = 0.0;
  FrameBoxes frames;
};

struct BoxDetection {
  std::string video;
  std::size_t frame = 0;
  int label = 1;
  Box box;
  double score = 0.0;
};

struct BoxGroundTruth {
  std::string video;
  std::size_t frame = 0;
  int label = 1;
  Box box;
};

enum class IouMode { kSpatioTemporal, kTemporal };

/// Temporal IoU of the frame sets; spatio-temporal mode multiplies it by the mean
/// spatial IoU over the shared frames.
double st_iou(const FrameBoxes& pred, const FrameBoxes& gt, IouMode mode);

/// Score-ordered greedy matching (stable for equal scores). A detection is a TP
/// iff some unmatched gt has iou >= threshold; the best such gt (lowest index on
/// ties) is consumed. AP = sum over TP ranks of precision / num_gt.
/// iou(d, g) may return a negative value for incompatible pairs.
double average_precision(const std::vector<double>& scores, std::size_t num_gt,
                         const std::function<double(std::size_t, std::size_t)>& iou, double threshold);

struct ClassAP {
  std::map<int, double> per_class;  // classes with at least one gt
  double mean = 0.0;
};

ClassAP frame_map(const std::vector<BoxDetection>& dets, const std::vector<BoxGroundTruth>& gts,
                  double iou_threshold = 0.5);

ClassAP video_ap(const std::vector<TubeDetection>& dets, const std::vector<GroundTruthTube>& gts, double threshold,
                 IouMode mode);

/// Keyed by threshold label: "0.2", "0.5", "0.75", "0.5:0.95" for the standard set.
struct VideoMapTable {
  std::map<std::string, ClassAP> entries;
};

/// Each label is either a single threshold or "lo:hi" meaning the mean over
/// lo, lo+0.05, ..., hi.
VideoMapTable video_map(const std::vector<TubeDetection>& dets, const std::vector<GroundTruthTube>& gts,
                        const std::vector<std::string>& threshold_labels, IouMode mode);

const std::vector<std::string>& standard_video_thresholds();

}  // namespace tacnet::evalkit
