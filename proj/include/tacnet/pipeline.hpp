#pragma once

#include <string>
#include <vector>

#include "tacnet/detector.hpp"
#include "tacnet/evalkit.hpp"
#include "tacnet/gradcheck.hpp"
#include "tacnet/io.hpp"
#include "tacnet/losses.hpp"
#include "tacnet/synthdata.hpp"
#include "tacnet/tubes.hpp"

namespace tacnet::pipeline {

/// Clips of model.config.clip_length consecutive frames (the last one may be
/// shorter), each starting from zero recurrent state. When use_state_scores is
/// false (state branch untrained) t is exported as p.
std::vector<io::DetectionRecord> infer_episode(const detector::DetectorModel& model, const synth::Episode& episode,
                                               const detector::PostprocessConfig& post);

/// Records ordered by (episode order, frame, descending p, class).
std::vector<io::DetectionRecord> infer_dataset(const detector::DetectorModel& model,
                                               const std::vector<synth::Episode>& episodes,
                                               const detector::PostprocessConfig& post);

/// Post-processing configuration matching a training mode.
detector::PostprocessConfig postprocess_for(losses::TrainMode mode, detector::PostprocessConfig base = {});

struct LinkOutput {
  std::vector<tubes::ScoredTube> tubes;
  /// Frame detections after micro-tube refinement (when enabled).
  std::vector<io::DetectionRecord> frames;
};

/// Runs link -> trim -> score per video (videos in lexicographic order).
LinkOutput link_all(const std::vector<io::DetectionRecord>& detections, const tubes::LinkConfig& config);

std::vector<evalkit::BoxGroundTruth> frame_ground_truth(const std::vector<evalkit::GroundTruthTube>& gts);

/// Frame-mAP@0.5 from frame detections and video-mAP / temporal-mAP from tubes;
/// either input may be absent.
io::Metrics evaluate(const std::vector<io::DetectionRecord>* frames, const std::vector<tubes::ScoredTube>* tubes,
                     const std::vector<evalkit::GroundTruthTube>& gts, double temporal_threshold = 0.5);

/// Averages p (and t) of detections present in both inputs with the same
/// video, frame, class and box; unmatched detections pass through unchanged.
std::vector<io::DetectionRecord> fuse_detections(const std::vector<io::DetectionRecord>& a,
                                                 const std::vector<io::DetectionRecord>& b);

struct NamedCheck {
  std::string name;
  GradCheckReport report;
};

/// Finite-difference suite over the differentiable ops, the ConvLSTM cell,
/// one direction, the Bi-ConvLSTM layer and the full loss on a tiny model.
/// fault_scale != 1 multiplies every input gradient, which must be detected.
std::vector<NamedCheck> gradcheck_suite(double fault_scale = 1.0, double h = 1e-6, double tol = 1e-4);

}  // namespace tacnet::pipeline
