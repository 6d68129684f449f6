#include "tacnet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "tacnet/ops.hpp"
#include "tacnet/seed.hpp"

namespace tacnet::detector {
namespace {

ConvLayer make_conv(std::size_t cin, std::size_t cout, std::size_t k, int stride, std::mt19937_64& rng,
                    double stddev) {
  ConvLayer layer{Tensor({cout, cin, k, k}, 0.0, true), Tensor({cout}, 0.0, true), stride, static_cast<int>(k / 2)};
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : layer.kernel.values()) v = dist(rng);
  return layer;
}

ConvLayer make_he_conv(std::size_t cin, std::size_t cout, std::size_t k, int stride, std::mt19937_64& rng) {
  return make_conv(cin, cout, k, stride, rng, std::sqrt(2.0 / static_cast<double>(cin * k * k)));
}

/// 4x4 / stride 2 / pad 1 halves even extents exactly.
ConvLayer make_downsampling_conv(std::size_t cin, std::size_t cout, std::mt19937_64& rng) {
  ConvLayer layer = make_he_conv(cin, cout, 4, 2, rng);
  layer.padding = 1;
  return layer;
}

Tensor apply(Graph& g, const ConvLayer& layer, const Tensor& x) {
  return ops::conv2d(g, x, layer.kernel, layer.bias, layer.stride, layer.padding);
}

std::vector<Tensor> split_frames(Graph& g, const Tensor& stacked, std::size_t L, std::size_t B) {
  std::vector<Tensor> out;
  out.reserve(L);
  for (std::size_t t = 0; t < L; ++t) out.push_back(L == 1 ? stacked : ops::slice_batch(g, stacked, t * B, B));
  return out;
}

Tensor join_frames(Graph& g, const std::vector<Tensor>& frames) {
  return frames.size() == 1 ? frames.front() : ops::concat_batch(g, frames);
}

/// Per-scale head maps [F, A*D, H, W] -> [F, N, D] in anchor-grid order.
Tensor gather_anchor_rows(Graph& g, const std::vector<Tensor>& maps, const AnchorGrid& grid, std::size_t A,
                          std::size_t D) {
  const std::size_t F = maps.front().dim(0);
  const std::size_t N = grid.size();
  bool needs_grad = false;
  for (const auto& m : maps) needs_grad = needs_grad || m.requires_grad();
  Tensor out(Shape{F, N, D}, 0.0, needs_grad && g.recording());
  // (scale, source offset) for every output value.
  auto sources = std::make_shared<std::vector<std::pair<std::uint32_t, std::uint32_t>>>(F * N * D);
  for (std::size_t s = 0; s < maps.size(); ++s) {
    const std::size_t E = grid.map_extent[s];
    const std::size_t plane = E * E;
    for (std::size_t f = 0; f < F; ++f) {
      for (std::size_t y = 0; y < E; ++y) {
        for (std::size_t x = 0; x < E; ++x) {
          for (std::size_t a = 0; a < A; ++a) {
            const std::size_t n = grid.first_anchor[s] + (y * E + x) * A + a;
            for (std::size_t j = 0; j < D; ++j) {
              (*sources)[(f * N + n) * D + j] = {static_cast<std::uint32_t>(s),
                                                 static_cast<std::uint32_t>((f * A * D + a * D + j) * plane + y * E + x)};
            }
          }
        }
      }
    }
  }
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = maps[(*sources)[i].first].values()[(*sources)[i].second];
  if (out.requires_grad()) {
    g.record([out, maps, sources]() mutable {
      auto go = out.grad();
      for (std::size_t i = 0; i < go.size(); ++i) {
        auto& m = maps[(*sources)[i].first];
        if (m.requires_grad()) m.grad()[(*sources)[i].second] += go[i];
      }
    });
  }
  return out;
}

}  // namespace

double DetectorConfig::anchor_size(std::size_t scale) const {
  if (scale < anchor_sizes.size()) return anchor_sizes[scale];
  return 2.0 * static_cast<double>(strides.at(scale)) / static_cast<double>(input_size);
}

void DetectorConfig::validate() const {
  if (num_classes < 1) throw std::invalid_argument("DetectorConfig: num_classes must be >= 1");
  if (clip_length < 1) throw std::invalid_argument("DetectorConfig: clip_length must be >= 1");
  if (strides.empty() || strides.size() != feature_channels.size()) {
    throw std::invalid_argument("DetectorConfig: need one channel count per stride");
  }
  if (aspect_ratios.empty()) throw std::invalid_argument("DetectorConfig: no aspect ratios");
  for (std::size_t s = 0; s < strides.size(); ++s) {
    const std::size_t st = strides[s];
    if (st < 2 || input_size % st != 0) {
      throw std::invalid_argument("DetectorConfig: stride " + std::to_string(st) + " does not divide input size " +
                                  std::to_string(input_size));
    }
    if (s == 0 && (st & (st - 1)) != 0) throw std::invalid_argument("DetectorConfig: first stride must be a power of 2");
    if (s > 0 && st != 2 * strides[s - 1]) throw std::invalid_argument("DetectorConfig: strides must double per scale");
  }
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw std::invalid_argument("DetectorConfig: dropout must lie in [0,1)");
}

AnchorGrid build_anchor_grid(const DetectorConfig& config) {
  config.validate();
  AnchorGrid grid;
  for (std::size_t s = 0; s < config.strides.size(); ++s) {
    const std::size_t E = config.input_size / config.strides[s];
    grid.map_extent.push_back(E);
    grid.first_anchor.push_back(grid.anchors.size());
    const double size = config.anchor_size(s);
    for (std::size_t y = 0; y < E; ++y) {
      for (std::size_t x = 0; x < E; ++x) {
        const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(E);
        const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(E);
        for (double ratio : config.aspect_ratios) {
          const double r = std::sqrt(ratio);
          grid.anchors.push_back({cx, cy, size * r, size / r});
        }
      }
    }
  }
  return grid;
}

std::vector<AnchorMatch> match_anchors(const AnchorGrid& grid, std::span<const GroundTruthBox> gts,
                                       double positive_iou) {
  std::vector<AnchorMatch> matches(grid.size());
  if (gts.empty()) return matches;
  std::vector<double> best_for_gt(gts.size(), -1.0);
  std::vector<std::size_t> best_anchor(gts.size(), 0);
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const Box ab = grid.anchors[n].box();
    AnchorMatch& m = matches[n];
    double best = -1.0;
    for (std::size_t k = 0; k < gts.size(); ++k) {
      const double iou = spatial_iou(ab, gts[k].box);
      if (iou > best) {
        best = iou;
        m.gt_index = k;
      }
      if (iou > best_for_gt[k]) {
        best_for_gt[k] = iou;
        best_anchor[k] = n;
      }
    }
    m.iou = best;
    if (best > positive_iou) {
      m.positive = true;
      m.label = gts[m.gt_index].label;
    }
  }
  for (std::size_t k = 0; k < gts.size(); ++k) {
    if (best_for_gt[k] <= 0.0) continue;
    AnchorMatch& m = matches[best_anchor[k]];
    m.positive = true;
    m.gt_index = k;
    m.label = gts[k].label;
    m.iou = best_for_gt[k];
  }
  return matches;
}

std::array<double, 4> encode_box(const Box& box, const Anchor& anchor) {
  if (!(box.width() > 0.0 && box.height() > 0.0 && anchor.w > 0.0 && anchor.h > 0.0)) {
    throw std::invalid_argument("encode_box: non-positive box or anchor extent");
  }
  const double cx = 0.5 * (box.x1 + box.x2);
  const double cy = 0.5 * (box.y1 + box.y2);
  return {(cx - anchor.cx) / anchor.w, (cy - anchor.cy) / anchor.h, std::log(box.width() / anchor.w),
          std::log(box.height() / anchor.h)};
}

Box decode_box_unclipped(std::span<const double> offsets, const Anchor& anchor) {
  if (!(anchor.w > 0.0 && anchor.h > 0.0)) throw std::invalid_argument("decode_box: non-positive anchor extent");
  const double cx = anchor.cx + offsets[0] * anchor.w;
  const double cy = anchor.cy + offsets[1] * anchor.h;
  const double w = anchor.w * std::exp(offsets[2]);
  const double h = anchor.h * std::exp(offsets[3]);
  return Box::from_center(cx, cy, w, h);
}

Box decode_box(std::span<const double> offsets, const Anchor& anchor) {
  return decode_box_unclipped(offsets, anchor).clipped();
}

DetectorModel DetectorModel::create(const DetectorConfig& config, std::uint64_t seed) {
  config.validate();
  DetectorModel m;
  m.config = config;
  m.anchors = build_anchor_grid(config);
  std::mt19937_64 rng(seed);

  const std::size_t c0 = config.feature_channels.front();
  std::size_t channels = config.input_channels;
  std::size_t reduce = config.strides.front();
  while (reduce > 1) {
    const std::size_t next = reduce == 2 ? c0 : std::max<std::size_t>(1, c0 / 2);
    m.stem.push_back(make_downsampling_conv(channels, next, rng));
    channels = next;
    reduce /= 2;
  }
  m.stem.push_back(make_he_conv(channels, c0, 3, 1, rng));

  const std::size_t S = config.strides.size();
  const std::size_t head_out = config.anchors_per_cell() * config.values_per_anchor();
  for (std::size_t s = 0; s < S; ++s) {
    const std::size_t cs = config.feature_channels[s];
    if (s + 1 < S) m.downsample.push_back(make_downsampling_conv(cs, config.feature_channels[s + 1], rng));
    if (config.temporal_context) {
      auto layer = BiConvLSTMLayer::random(cs, config.hidden_channels, cs, 3, rng);
      layer.dropout_p = config.dropout_p;
      layer.forward_cell.relu_sites = config.relu_sites;
      layer.backward_cell.relu_sites = config.relu_sites;
      m.context.push_back(std::move(layer));
    }
    m.heads.push_back(make_conv(cs, head_out, 3, 1, rng, 0.01));
  }
  return m;
}

std::vector<std::pair<std::string, Tensor>> DetectorModel::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  auto conv = [&out](const std::string& name, const ConvLayer& l) {
    out.emplace_back(name + ".kernel", l.kernel);
    out.emplace_back(name + ".bias", l.bias);
  };
  auto cell = [&out](const std::string& name, const ConvLSTMCellParams& c) {
    out.emplace_back(name + ".input_kernel", c.input_kernel);
    out.emplace_back(name + ".hidden_kernel", c.hidden_kernel);
    out.emplace_back(name + ".bias", c.bias);
  };
  for (std::size_t i = 0; i < stem.size(); ++i) conv("stem" + std::to_string(i), stem[i]);
  for (std::size_t i = 0; i < downsample.size(); ++i) conv("down" + std::to_string(i), downsample[i]);
  for (std::size_t i = 0; i < context.size(); ++i) {
    const std::string p = "context" + std::to_string(i);
    cell(p + ".fwd", context[i].forward_cell);
    cell(p + ".bwd", context[i].backward_cell);
    out.emplace_back(p + ".fuse_kernel", context[i].fuse_kernel);
    out.emplace_back(p + ".fuse_bias", context[i].fuse_bias);
  }
  for (std::size_t i = 0; i < heads.size(); ++i) conv("head" + std::to_string(i), heads[i]);
  return out;
}

std::vector<Tensor> DetectorModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

void DetectorModel::zero_heads() {
  for (auto& h : heads) {
    std::fill(h.kernel.values().begin(), h.kernel.values().end(), 0.0);
    std::fill(h.bias.values().begin(), h.bias.values().end(), 0.0);
  }
}

std::span<const double> RawHeadOutput::row(std::size_t frame, std::size_t anchor) const {
  return std::span<const double>(scores.values()).subspan((frame * num_anchors + anchor) * stride(), stride());
}

tac::ScoreView RawHeadOutput::scores_at(std::size_t frame, std::size_t anchor) const {
  auto r = row(frame, anchor);
  return {r.subspan(4, num_classes + 1), r.subspan(5 + num_classes, num_classes)};
}

RawHeadOutput forward_clip(Graph& g, const DetectorModel& model, const std::vector<Tensor>& frames, bool training,
                           std::uint64_t seed) {
  const auto& cfg = model.config;
  if (frames.empty()) throw std::invalid_argument("forward_clip: empty clip");
  const Shape expected{frames.front().dim(0), cfg.input_channels, cfg.input_size, cfg.input_size};
  for (const auto& f : frames) {
    if (f.shape() != expected) {
      throw std::invalid_argument("forward_clip: frame shape " + shape_to_string(f.shape()) + " expected " +
                                  shape_to_string(expected));
    }
  }
  const std::size_t L = frames.size();
  const std::size_t B = expected[0];

  Tensor x = join_frames(g, frames);
  for (const auto& layer : model.stem) x = ops::relu(g, apply(g, layer, x));

  std::vector<Tensor> head_maps;
  const std::size_t S = cfg.strides.size();
  for (std::size_t s = 0; s < S; ++s) {
    if (s > 0) x = ops::relu(g, apply(g, model.downsample[s - 1], x));
    if (cfg.temporal_context) {
      auto fused = bidirectional_fuse(g, model.context[s], split_frames(g, x, L, B), training, mix_seed(seed, s));
      x = join_frames(g, fused);
    }
    head_maps.push_back(apply(g, model.heads[s], x));
  }

  RawHeadOutput out;
  out.clip_length = L;
  out.batch = B;
  out.num_anchors = model.anchors.size();
  out.num_classes = cfg.num_classes;
  out.scores = gather_anchor_rows(g, head_maps, model.anchors, cfg.anchors_per_cell(), cfg.values_per_anchor());
  return out;
}

std::vector<std::size_t> nms(std::span<const FrameDetection> dets, double iou_threshold) {
  std::vector<std::size_t> order(dets.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dets[a].p > dets[b].p; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool suppressed = false;
    for (std::size_t k : kept) {
      if (spatial_iou(dets[i].box, dets[k].box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(i);
  }
  return kept;
}

std::vector<FrameDetection> postprocess_frame(const RawHeadOutput& out, const AnchorGrid& grid, std::size_t row,
                                              std::size_t frame_index, const PostprocessConfig& config) {
  const std::size_t K = out.num_classes;
  std::vector<std::vector<FrameDetection>> per_class(K + 1);
  for (std::size_t n = 0; n < out.num_anchors; ++n) {
    const auto s = out.scores_at(row, n);
    const auto p = tac::category_probs(s);
    std::vector<double> t;
    Box box;
    bool decoded = false;
    for (std::size_t y = 1; y <= K; ++y) {
      if (p[y] < config.score_floor) continue;
      if (!decoded) {
        box = decode_box(out.reg(row, n), grid.anchors[n]);
        t = tac::state_probs(s);
        decoded = true;
      }
      if (!box.valid()) break;
      per_class[y].push_back({frame_index, static_cast<int>(y), box, p[y], config.use_state_scores ? t[y - 1] : p[y]});
    }
  }
  std::vector<FrameDetection> result;
  for (std::size_t y = 1; y <= K; ++y) {
    auto kept = nms(per_class[y], config.nms_iou);
    if (kept.size() > config.top_n) kept.resize(config.top_n);
    for (std::size_t i : kept) result.push_back(per_class[y][i]);
  }
  return result;
}

}  // namespace tacnet::detector
