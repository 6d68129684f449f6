#include "tacnet/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tacnet::evalkit {
namespace {

using Candidates = std::function<void(std::size_t det, std::vector<std::pair<std::size_t, double>>& out)>;

double ap_core(const std::vector<double>& scores, std::size_t num_gt, const Candidates& candidates,
               double threshold) {
  if (num_gt == 0) return 0.0;
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  std::vector<bool> matched(num_gt, false);
  std::vector<std::pair<std::size_t, double>> cand;
  std::size_t tp = 0;
  double ap = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    cand.clear();
    candidates(order[rank], cand);
    std::size_t best = num_gt;
    double best_iou = -1.0;
    for (auto [gt, iou] : cand) {
      if (matched[gt] || iou < threshold) continue;
      if (iou > best_iou || (iou == best_iou && gt < best)) {
        best = gt;
        best_iou = iou;
      }
    }
    if (best < num_gt) {
      matched[best] = true;
      ++tp;
      ap += static_cast<double>(tp) / static_cast<double>(rank + 1);
    }
  }
  return ap / static_cast<double>(num_gt);
}

ClassAP finish(std::map<int, double> per_class) {
  ClassAP out;
  out.per_class = std::move(per_class);
  double acc = 0.0;
  for (auto& [c, ap] : out.per_class) acc += ap;
  out.mean = out.per_class.empty() ? 0.0 : acc / static_cast<double>(out.per_class.size());
  return out;
}

std::vector<double> expand_thresholds(const std::string& label) {
  const auto colon = label.find(':');
  if (colon == std::string::npos) return {std::stod(label)};
  const double lo = std::stod(label.substr(0, colon));
  const double hi = std::stod(label.substr(colon + 1));
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double v = std::round((lo + 0.05 * k) * 100.0) / 100.0;
    if (v > hi + 1e-9) break;
    out.push_back(v);
  }
  if (out.empty()) throw std::invalid_argument("video_map: empty threshold range '" + label + "'");
  return out;
}

}  // namespace

double st_iou(const FrameBoxes& pred, const FrameBoxes& gt, IouMode mode) {
  std::size_t inter = 0;
  double spatial = 0.0;
  std::size_t i = 0, j = 0;
  while (i < pred.size() && j < gt.size()) {
    if (pred[i].first < gt[j].first) {
      ++i;
    } else if (gt[j].first < pred[i].first) {
      ++j;
    } else {
      ++inter;
      spatial += spatial_iou(pred[i].second, gt[j].second);
      ++i;
      ++j;
    }
  }
  if (inter == 0) return 0.0;
  const double uni = static_cast<double>(pred.size() + gt.size() - inter);
  const double temporal = static_cast<double>(inter) / uni;
  if (mode == IouMode::kTemporal) return temporal;
  return temporal * (spatial / static_cast<double>(inter));
}

double average_precision(const std::vector<double>& scores, std::size_t num_gt,
                         const std::function<double(std::size_t, std::size_t)>& iou, double threshold) {
  return ap_core(
      scores, num_gt,
      [&](std::size_t d, std::vector<std::pair<std::size_t, double>>& out) {
        for (std::size_t g = 0; g < num_gt; ++g) out.emplace_back(g, iou(d, g));
      },
      threshold);
}

ClassAP frame_map(const std::vector<BoxDetection>& dets, const std::vector<BoxGroundTruth>& gts,
                  double iou_threshold) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.label);
  std::map<int, double> per_class;
  for (int c : classes) {
    std::vector<const BoxGroundTruth*> cg;
    std::map<std::pair<std::string, std::size_t>, std::vector<std::size_t>> index;
    for (const auto& g : gts) {
      if (g.label != c) continue;
      index[{g.video, g.frame}].push_back(cg.size());
      cg.push_back(&g);
    }
    std::vector<const BoxDetection*> cd;
    std::vector<double> scores;
    for (const auto& d : dets) {
      if (d.label != c) continue;
      cd.push_back(&d);
      scores.push_back(d.score);
    }
    per_class[c] = ap_core(
        scores, cg.size(),
        [&](std::size_t di, std::vector<std::pair<std::size_t, double>>& out) {
          auto it = index.find({cd[di]->video, cd[di]->frame});
          if (it == index.end()) return;
          for (std::size_t gi : it->second) out.emplace_back(gi, spatial_iou(cd[di]->box, cg[gi]->box));
        },
        iou_threshold);
  }
  return finish(std::move(per_class));
}

ClassAP video_ap(const std::vector<TubeDetection>& dets, const std::vector<GroundTruthTube>& gts, double threshold,
                 IouMode mode) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.label);
  std::map<int, double> per_class;
  for (int c : classes) {
    std::vector<const GroundTruthTube*> cg;
    for (const auto& g : gts) {
      if (g.label == c) cg.push_back(&g);
    }
    std::vector<const TubeDetection*> cd;
    std::vector<double> scores;
    for (const auto& d : dets) {
      if (d.label != c) continue;
      cd.push_back(&d);
      scores.push_back(d.score);
    }
    per_class[c] = ap_core(
        scores, cg.size(),
        [&](std::size_t di, std::vector<std::pair<std::size_t, double>>& out) {
          for (std::size_t gi = 0; gi < cg.size(); ++gi) {
            if (cg[gi]->video == cd[di]->video) out.emplace_back(gi, st_iou(cd[di]->frames, cg[gi]->frames, mode));
          }
        },
        threshold);
  }
  return finish(std::move(per_class));
}

VideoMapTable video_map(const std::vector<TubeDetection>& dets, const std::vector<GroundTruthTube>& gts,
                        const std::vector<std::string>& threshold_labels, IouMode mode) {
  VideoMapTable table;
  for (const auto& label : threshold_labels) {
    const auto thresholds = expand_thresholds(label);
    std::map<int, double> per_class;
    double mean = 0.0;
    for (double th : thresholds) {
      const auto r = video_ap(dets, gts, th, mode);
      for (auto& [c, ap] : r.per_class) per_class[c] += ap;
      mean += r.mean;
    }
    const auto n = static_cast<double>(thresholds.size());
    for (auto& [c, ap] : per_class) ap /= n;
    mean /= n;
    ClassAP entry;
    entry.per_class = std::move(per_class);
    entry.mean = mean;
    table.entries[label] = std::move(entry);
  }
  return table;
}

const std::vector<std::string>& standard_video_thresholds() {
  static const std::vector<std::string> kLabels{"0.2", "0.5", "0.75", "0.5:0.95"};
  return kLabels;
}

}  // namespace tacnet::evalkit
