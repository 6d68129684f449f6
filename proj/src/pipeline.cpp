#include "tacnet/pipeline.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "tacnet/ops.hpp"
#include "tacnet/seed.hpp"

namespace tacnet::pipeline {

using detector::FrameDetection;
using io::DetectionRecord;

namespace {

bool record_order(const DetectionRecord& a, const DetectionRecord& b) {
  if (a.det.frame != b.det.frame) return a.det.frame < b.det.frame;
  if (a.det.p != b.det.p) return a.det.p > b.det.p;
  return a.det.label < b.det.label;
}

}  // namespace

detector::PostprocessConfig postprocess_for(losses::TrainMode mode, detector::PostprocessConfig base) {
  base.use_state_scores = mode == losses::TrainMode::kTac;
  return base;
}

std::vector<DetectionRecord> infer_episode(const detector::DetectorModel& model, const synth::Episode& episode,
                                           const detector::PostprocessConfig& post) {
  std::vector<DetectionRecord> out;
  const std::size_t L = model.config.clip_length;
  for (std::size_t start = 0; start < episode.length(); start += L) {
    const std::size_t len = std::min(L, episode.length() - start);
    std::vector<Tensor> frames;
    for (std::size_t k = 0; k < len; ++k) frames.push_back(episode.frame_tensor(start + k));
    Graph g(false);
    const auto raw = detector::forward_clip(g, model, frames, false, 0);
    for (std::size_t k = 0; k < len; ++k) {
      for (const auto& d : detector::postprocess_frame(raw, model.anchors, k, start + k, post)) {
        out.push_back({episode.video, d});
      }
    }
  }
  std::stable_sort(out.begin(), out.end(), record_order);
  return out;
}

std::vector<DetectionRecord> infer_dataset(const detector::DetectorModel& model,
                                           const std::vector<synth::Episode>& episodes,
                                           const detector::PostprocessConfig& post) {
  std::vector<DetectionRecord> out;
  for (const auto& ep : episodes) {
    auto part = infer_episode(model, ep, post);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

LinkOutput link_all(const std::vector<DetectionRecord>& detections, const tubes::LinkConfig& config) {
  std::map<std::string, std::vector<FrameDetection>> by_video;
  for (const auto& r : detections) by_video[r.video].push_back(r.det);
  LinkOutput out;
  for (const auto& [video, dets] : by_video) {
    auto result = tubes::process_video(dets, config, video);
    for (auto& t : result.tubes) out.tubes.push_back(std::move(t));
    std::vector<DetectionRecord> frames;
    for (const auto& d : result.frame_detections) frames.push_back({video, d});
    std::stable_sort(frames.begin(), frames.end(), record_order);
    out.frames.insert(out.frames.end(), frames.begin(), frames.end());
  }
  return out;
}

std::vector<evalkit::BoxGroundTruth> frame_ground_truth(const std::vector<evalkit::GroundTruthTube>& gts) {
  std::vector<evalkit::BoxGroundTruth> out;
  for (const auto& g : gts) {
    for (const auto& [frame, box] : g.frames) out.push_back({g.video, frame, g.label, box});
  }
  return out;
}

io::Metrics evaluate(const std::vector<DetectionRecord>* frames, const std::vector<tubes::ScoredTube>* tubes,
                     const std::vector<evalkit::GroundTruthTube>& gts, double temporal_threshold) {
  io::Metrics m;
  m.temporal_threshold = temporal_threshold;
  for (const auto& g : gts) m.per_class[g.label];
  if (frames) {
    std::vector<evalkit::BoxDetection> dets;
    for (const auto& r : *frames) dets.push_back({r.video, r.det.frame, r.det.label, r.det.box, r.det.p});
    const auto fm = evalkit::frame_map(dets, frame_ground_truth(gts), 0.5);
    m.frame_map = fm.mean;
    for (const auto& [c, ap] : fm.per_class) m.per_class[c].frame_ap = ap;
  }
  if (tubes) {
    std::vector<evalkit::TubeDetection> dets;
    for (const auto& t : *tubes) {
      evalkit::TubeDetection d{t.video, t.label, t.score, {}};
      for (const auto& e : t.entries) d.frames.emplace_back(e.frame, e.box);
      dets.push_back(std::move(d));
    }
    const auto table =
        evalkit::video_map(dets, gts, evalkit::standard_video_thresholds(), evalkit::IouMode::kSpatioTemporal);
    for (const auto& [label, entry] : table.entries) {
      m.video_map[label] = entry.mean;
      for (const auto& [c, ap] : entry.per_class) m.per_class[c].video_ap[label] = ap;
    }
    const auto temporal = evalkit::video_ap(dets, gts, temporal_threshold, evalkit::IouMode::kTemporal);
    m.temporal_map = temporal.mean;
    for (const auto& [c, ap] : temporal.per_class) m.per_class[c].temporal_ap = ap;
  }
  return m;
}

std::vector<DetectionRecord> fuse_detections(const std::vector<DetectionRecord>& a,
                                             const std::vector<DetectionRecord>& b) {
  using Key = std::tuple<std::string, std::size_t, int, double, double, double, double>;
  auto key = [](const DetectionRecord& r) {
    return Key{r.video, r.det.frame, r.det.label, r.det.box.x1, r.det.box.y1, r.det.box.x2, r.det.box.y2};
  };
  std::map<Key, std::vector<std::size_t>> index;
  for (std::size_t i = 0; i < b.size(); ++i) index[key(b[i])].push_back(i);
  std::vector<bool> used(b.size(), false);
  std::vector<DetectionRecord> out;
  for (const auto& r : a) {
    DetectionRecord fused = r;
    auto it = index.find(key(r));
    if (it != index.end()) {
      for (std::size_t j : it->second) {
        if (used[j]) continue;
        used[j] = true;
        fused.det.p = 0.5 * (r.det.p + b[j].det.p);
        fused.det.t = 0.5 * (r.det.t + b[j].det.t);
        break;
      }
    }
    out.push_back(fused);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    if (!used[j]) out.push_back(b[j]);
  }
  std::stable_sort(out.begin(), out.end(), [](const DetectionRecord& x, const DetectionRecord& y) {
    if (x.video != y.video) return x.video < y.video;
    return record_order(x, y);
  });
  return out;
}

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0, true);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.values()) v = u(rng);
  return t;
}

/// Values bounded away from zero so relu kinks stay out of the difference stencil.
Tensor off_kink_tensor(Shape shape, std::mt19937_64& rng) {
  Tensor t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& v : t.values()) {
    if (sign(rng)) v = -v;
  }
  return t;
}

/// Weighted sum so that every output coordinate receives a distinct gradient.
Tensor probe(Graph& g, const Tensor& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor w = random_tensor(y.shape(), rng);
  w.set_requires_grad(false);
  return ops::sum(g, ops::mul(g, y, w));
}

}  // namespace

std::vector<NamedCheck> gradcheck_suite(double fault_scale, double h, double tol) {
  std::vector<NamedCheck> out;
  std::mt19937_64 rng(20240611);
  auto in = [&](Graph& g, const Tensor& x) { return ops::scale_gradient(g, x, fault_scale); };
  auto run = [&](const std::string& name, const GraphFunction& f, std::vector<Tensor> wrt) {
    out.push_back({name, finite_diff_check(f, std::move(wrt), h, tol)});
  };

  {
    Tensor x = random_tensor({2, 3, 5, 5}, rng), k = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    run("conv2d 3x3 s1 p1", [&](Graph& g) { return probe(g, ops::conv2d(g, in(g, x), in(g, k), in(g, b), 1, 1), 1); },
        {x, k, b});
    Tensor x2 = random_tensor({2, 2, 6, 6}, rng), k2 = random_tensor({3, 2, 4, 4}, rng), b2 = random_tensor({3}, rng);
    run("conv2d 4x4 s2 p1",
        [&](Graph& g) { return probe(g, ops::conv2d(g, in(g, x2), in(g, k2), in(g, b2), 2, 1), 2); }, {x2, k2, b2});
  }
  {
    Tensor x = off_kink_tensor({2, 3, 4}, rng);
    run("relu", [&](Graph& g) { return probe(g, ops::relu(g, in(g, x)), 3); }, {x});
    Tensor y = random_tensor({2, 3, 4}, rng, -3.0, 3.0);
    run("sigmoid", [&](Graph& g) { return probe(g, ops::sigmoid(g, in(g, y)), 4); }, {y});
    run("tanh", [&](Graph& g) { return probe(g, ops::activation(g, in(g, y), ops::Activation::kTanh), 5); }, {y});
  }
  {
    Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    run("add", [&](Graph& g) { return probe(g, ops::add(g, in(g, a), in(g, b)), 6); }, {a, b});
    run("mul", [&](Graph& g) { return probe(g, ops::mul(g, in(g, a), in(g, b)), 7); }, {a, b});
    run("sum", [&](Graph& g) { return ops::sum(g, in(g, a)); }, {a});
    run("sum_squares", [&](Graph& g) { return ops::sum_squares(g, in(g, a)); }, {a});
    run("softmax", [&](Graph& g) { return probe(g, ops::softmax_lastdim(g, in(g, a)), 8); }, {a});
  }
  {
    Tensor x = random_tensor({3, 4, 3, 3}, rng), y = random_tensor({3, 2, 3, 3}, rng);
    run("dropout2d", [&](Graph& g) { return probe(g, ops::dropout2d(g, in(g, x), 0.3, true, 99), 9); }, {x});
    run("concat/slice channels",
        [&](Graph& g) {
          Tensor c = ops::concat_channels(g, in(g, x), in(g, y));
          return probe(g, ops::slice_channels(g, c, 1, 4), 10);
        },
        {x, y});
    run("concat/slice batch",
        [&](Graph& g) {
          Tensor c = ops::concat_batch(g, {in(g, x), in(g, x)});
          return probe(g, ops::slice_batch(g, c, 2, 3), 11);
        },
        {x});
  }
  {
    auto cell = ConvLSTMCellParams::random(2, 3, 3, rng, 1.0);
    Tensor x = random_tensor({2, 2, 4, 4}, rng), hp = random_tensor({2, 3, 4, 4}, rng),
           cp = random_tensor({2, 3, 4, 4}, rng);
    const DropoutSpec drop{0.3, true, 7};
    auto wrt = cell.parameters();
    wrt.insert(wrt.end(), {x, hp, cp});
    run("convlstm cell",
        [&](Graph& g) {
          auto s = cell_step(g, cell, in(g, x), in(g, hp), in(g, cp), drop);
          return ops::add(g, probe(g, s.h, 12), probe(g, s.c, 13));
        },
        wrt);
    std::vector<Tensor> seq;
    for (int t = 0; t < 3; ++t) seq.push_back(random_tensor({1, 2, 4, 4}, rng));
    auto seq_wrt = cell.parameters();
    seq_wrt.insert(seq_wrt.end(), seq.begin(), seq.end());
    run("convlstm reverse direction",
        [&](Graph& g) {
          std::vector<Tensor> s;
          for (const auto& f : seq) s.push_back(in(g, f));
          auto hs = run_direction(g, cell, s, true, drop);
          Tensor acc = probe(g, hs[0], 14);
          for (std::size_t t = 1; t < hs.size(); ++t) acc = ops::add(g, acc, probe(g, hs[t], 14 + t));
          return acc;
        },
        seq_wrt);

    auto layer = BiConvLSTMLayer::random(2, 2, 3, 3, rng);
    layer.dropout_p = 0.3;
    auto layer_wrt = layer.parameters();
    layer_wrt.insert(layer_wrt.end(), seq.begin(), seq.end());
    run("bi-convlstm layer",
        [&](Graph& g) {
          std::vector<Tensor> s;
          for (const auto& f : seq) s.push_back(in(g, f));
          auto ys = bidirectional_fuse(g, layer, s, true, 5);
          Tensor acc = probe(g, ys[0], 20);
          for (std::size_t t = 1; t < ys.size(); ++t) acc = ops::add(g, acc, probe(g, ys[t], 20 + t));
          return acc;
        },
        layer_wrt);
  }
  {
    detector::DetectorConfig cfg;
    cfg.input_size = 16;
    cfg.strides = {4, 8};
    cfg.feature_channels = {3, 4};
    cfg.hidden_channels = 2;
    cfg.num_classes = 2;
    cfg.clip_length = 3;
    auto model = detector::DetectorModel::create(cfg, 31);
    for (auto& head : model.heads) {
      for (double& v : head.kernel.values()) v *= 30.0;
    }
    // Zero biases put dead-channel preactivations exactly on the relu kink.
    std::uniform_real_distribution<double> jitter(-0.2, 0.2);
    for (auto& [name, t] : model.named_parameters()) {
      if (name.ends_with("bias")) {
        for (double& v : Tensor(t).values()) v += jitter(rng);
      }
    }
    const std::size_t B = 2;
    std::vector<Tensor> frames;
    for (std::size_t t = 0; t < cfg.clip_length; ++t) {
      Tensor f = random_tensor({B, 1, 16, 16}, rng, 0.0, 1.0);
      f.set_requires_grad(false);
      frames.push_back(f);
    }
    std::vector<losses::FrameAnnotation> ann(cfg.clip_length * B);
    ann[0] = {true, {{Box{0.2, 0.2, 0.7, 0.6}, 1}}};
    ann[3] = {true, {{Box{0.1, 0.4, 0.5, 0.9}, 2}}};
    ann[4] = {true, {}};
    const std::uint64_t seed = 3;
    for (auto mode : {losses::TrainMode::kTac, losses::TrainMode::kBgBaseline}) {
      Graph probe_graph(false);
      const auto raw = detector::forward_clip(probe_graph, model, frames, true, seed);
      const auto targets = losses::build_targets(raw, model.anchors, ann, mode, losses::MiningRule::kRawScore);
      run(std::string("full loss (") + losses::to_string(mode) + ")",
          [&](Graph& g) {
            auto o = detector::forward_clip(g, model, frames, true, seed);
            o.scores = in(g, o.scores);
            return losses::total_loss(g, o, targets, mode);
          },
          model.parameters());
    }
  }
  return out;
}

}  // namespace tacnet::pipeline
