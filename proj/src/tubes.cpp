#include "tacnet/tubes.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tacnet::tubes {

using detector::FrameDetection;

void LinkConfig::validate() const {
  auto unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!unit(link_iou) || !unit(nms_iou) || !unit(temporal_nms_iou)) {
    throw std::invalid_argument("LinkConfig: IoU thresholds must lie in (0, 1)");
  }
  if (smoothing_window % 2 == 0) throw std::invalid_argument("LinkConfig: smoothing window must be odd");
  if (microtube_window < 1) throw std::invalid_argument("LinkConfig: micro-tube window must be >= 1");
  if (patience < 1) throw std::invalid_argument("LinkConfig: patience must be >= 1");
  for (double tau : watershed_thresholds) {
    if (!unit(tau)) throw std::invalid_argument("LinkConfig: watershed thresholds must lie in (0, 1)");
  }
}

std::vector<FrameDetection> prepare_detections(const std::vector<FrameDetection>& dets, const LinkConfig& config) {
  std::map<std::pair<std::size_t, int>, std::vector<FrameDetection>> groups;
  for (const auto& d : dets) groups[{d.frame, d.label}].push_back(d);
  std::vector<FrameDetection> out;
  for (auto& [key, group] : groups) {
    auto kept = detector::nms(group, config.nms_iou);
    if (kept.size() > config.top_n) kept.resize(config.top_n);
    for (std::size_t i : kept) out.push_back(group[i]);
  }
  return out;
}

namespace {

struct LiveTube {
  Tube tube;
  std::size_t id = 0;
  std::size_t misses = 0;
  double claimed_sum = 0.0;
  std::size_t claimed = 0;
};

void extend(LiveTube& live, const FrameDetection& det, std::size_t det_index) {
  auto& entries = live.tube.entries;
  if (!entries.empty()) {
    const TubeEntry last = entries.back();
    const double span = static_cast<double>(det.frame - last.frame);
    for (std::size_t f = last.frame + 1; f < det.frame; ++f) {
      const double a = static_cast<double>(f - last.frame) / span;
      auto lerp = [a](double u, double v) { return u + a * (v - u); };
      TubeEntry e;
      e.frame = f;
      e.box = {lerp(last.box.x1, det.box.x1), lerp(last.box.y1, det.box.y1), lerp(last.box.x2, det.box.x2),
               lerp(last.box.y2, det.box.y2)};
      e.p = lerp(last.p, det.p);
      e.t = lerp(last.t, det.t);
      e.interpolated = true;
      entries.push_back(e);
    }
  }
  entries.push_back({det.frame, det.box, det.p, det.t, false, det_index});
  live.claimed_sum += det.p;
  ++live.claimed;
  live.tube.score = live.claimed_sum / static_cast<double>(live.claimed);
  live.misses = 0;
}

}  // namespace

std::vector<Tube> link_greedy(const std::vector<FrameDetection>& dets, const LinkConfig& config,
                              const std::string& video) {
  std::vector<Tube> result;
  if (dets.empty()) return result;
  std::map<int, std::map<std::size_t, std::vector<std::size_t>>> by_class;  // class -> frame -> det indices
  for (std::size_t i = 0; i < dets.size(); ++i) by_class[dets[i].label][dets[i].frame].push_back(i);

  for (auto& [label, frames] : by_class) {
    std::vector<LiveTube> live;
    std::vector<LiveTube> done;
    std::size_t next_id = 0;
    const std::size_t first = frames.begin()->first;
    const std::size_t last = frames.rbegin()->first;
    for (std::size_t f = first; f <= last; ++f) {
      static const std::vector<std::size_t> kNone;
      auto it = frames.find(f);
      const auto& cands = it == frames.end() ? kNone : it->second;
      std::vector<bool> claimed(cands.size(), false);

      std::vector<std::size_t> order(live.size());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (live[a].tube.score != live[b].tube.score) return live[a].tube.score > live[b].tube.score;
        return live[a].id < live[b].id;
      });
      for (std::size_t ti : order) {
        LiveTube& lt = live[ti];
        const Box& tail = lt.tube.entries.back().box;
        std::size_t best = cands.size();
        for (std::size_t c = 0; c < cands.size(); ++c) {
          if (claimed[c]) continue;
          const auto& d = dets[cands[c]];
          if (spatial_iou(tail, d.box) < config.link_iou) continue;
          if (best == cands.size() || d.p > dets[cands[best]].p) best = c;
        }
        if (best < cands.size()) {
          claimed[best] = true;
          extend(lt, dets[cands[best]], cands[best]);
        } else {
          ++lt.misses;
        }
      }
      // Retire tubes that missed `patience` consecutive frames.
      std::vector<LiveTube> still;
      for (auto& lt : live) (lt.misses >= config.patience ? done : still).push_back(std::move(lt));
      live = std::move(still);

      for (std::size_t c = 0; c < cands.size(); ++c) {
        if (claimed[c] || dets[cands[c]].p < config.start_score) continue;
        LiveTube lt;
        lt.id = next_id++;
        lt.tube.video = video;
        lt.tube.label = label;
        extend(lt, dets[cands[c]], cands[c]);
        live.push_back(std::move(lt));
      }
    }
    for (auto& lt : live) done.push_back(std::move(lt));
    std::sort(done.begin(), done.end(), [](const LiveTube& a, const LiveTube& b) { return a.id < b.id; });
    for (auto& lt : done) result.push_back(std::move(lt.tube));
  }
  return result;
}

std::vector<double> smooth_scores(const Tube& tube, std::size_t window) {
  if (window % 2 == 0) throw std::invalid_argument("smooth_scores: window must be odd");
  const std::size_t n = tube.entries.size();
  const std::size_t half = window / 2;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= half ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + half);
    double acc = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) acc += tube.entries[k].t;
    out[i] = acc / static_cast<double>(hi - lo + 1);
  }
  return out;
}

double temporal_iou(std::size_t a_start, std::size_t a_end, std::size_t b_start, std::size_t b_end) {
  const std::size_t lo = std::max(a_start, b_start);
  const std::size_t hi = std::min(a_end, b_end);
  if (hi < lo) return 0.0;
  const double inter = static_cast<double>(hi - lo + 1);
  const double uni = static_cast<double>(std::max(a_end, b_end) - std::min(a_start, b_start) + 1);
  return inter / uni;
}

std::vector<TrimSegment> watershed_trim(const Tube& tube, const LinkConfig& config) {
  std::vector<TrimSegment> out;
  if (tube.entries.empty()) return out;
  const auto a = smooth_scores(tube, config.smoothing_window);
  const std::size_t n = a.size();

  std::set<std::pair<std::size_t, std::size_t>> runs;  // tube-relative [lo, hi]
  for (double tau : config.watershed_thresholds) {
    std::size_t i = 0;
    while (i < n) {
      if (a[i] < tau) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j + 1 < n && a[j + 1] >= tau) ++j;
      runs.insert({i, j});
      i = j + 1;
    }
  }

  std::vector<TrimSegment> candidates;
  for (auto [lo, hi] : runs) {
    double score = 0.0, total = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) {
      score += a[k] - 0.5;
      total += a[k];
    }
    const double mean = total / static_cast<double>(hi - lo + 1);
    if (score > 0.0 && mean >= 0.5) {
      candidates.push_back({tube.entries[lo].frame, tube.entries[hi].frame, mean, score});
    }
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const TrimSegment& x, const TrimSegment& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.start < y.start;
  });
  for (const auto& c : candidates) {
    bool suppressed = false;
    for (const auto& k : out) {
      if (temporal_iou(c.start, c.end, k.start, k.end) >= config.temporal_nms_iou) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) out.push_back(c);
  }
  return out;
}

void microtube_refine(std::vector<Tube>& tubes, std::size_t window) {
  if (window < 1) throw std::invalid_argument("microtube_refine: window must be >= 1");
  const std::size_t before = (window - 1) / 2;
  const std::size_t after = window / 2;
  for (auto& tube : tubes) {
    const std::size_t n = tube.entries.size();
    std::vector<double> refined(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t lo = i >= before ? i - before : 0;
      const std::size_t hi = std::min(n - 1, i + after);
      double acc = 0.0;
      for (std::size_t k = lo; k <= hi; ++k) acc += tube.entries[k].p;
      refined[i] = acc / static_cast<double>(hi - lo + 1);
    }
    for (std::size_t i = 0; i < n; ++i) tube.entries[i].p = refined[i];
  }
}

ScoredTube score_tube(const TrimSegment& segment, const Tube& tube) {
  if (segment.start > segment.end || segment.start < tube.first_frame() || segment.end > tube.last_frame()) {
    throw std::invalid_argument("score_tube: segment outside tube extent");
  }
  ScoredTube out;
  out.video = tube.video;
  out.label = tube.label;
  out.segment = segment;
  double acc = 0.0;
  for (const auto& e : tube.entries) {
    if (e.frame < segment.start || e.frame > segment.end) continue;
    out.entries.push_back(e);
    acc += e.p * e.t;
  }
  out.score = acc / static_cast<double>(out.entries.size());
  return out;
}

LinkResult process_video(const std::vector<FrameDetection>& dets, const LinkConfig& config,
                         const std::string& video) {
  config.validate();
  LinkResult result;
  auto prepared = prepare_detections(dets, config);
  auto tubes = link_greedy(prepared, config, video);
  for (const auto& tube : tubes) {
    for (const auto& seg : watershed_trim(tube, config)) result.tubes.push_back(score_tube(seg, tube));
  }
  result.frame_detections = prepared;
  if (config.microtube_refinement) {
    auto refined = tubes;
    microtube_refine(refined, config.microtube_window);
    for (const auto& tube : refined) {
      for (const auto& e : tube.entries) {
        if (!e.interpolated) result.frame_detections[e.detection].p = e.p;
      }
    }
  }
  return result;
}

}  // namespace tacnet::tubes
