#include <gtest/gtest.h>

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <unistd.h>

#include "tacnet/synthdata.hpp"

using namespace tacnet;
using namespace tacnet::synth;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("tacnet_synth_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

SynthConfig small(std::size_t episodes) {
  SynthConfig c;
  c.episodes = episodes;
  c.seed = 11;
  return c;
}

}  // namespace

TEST(Synth, Deterministic) {
  const auto c = small(4);
  EXPECT_EQ(generate_episode(c, 2), generate_episode(c, 2));
  EXPECT_NE(generate_episode(c, 2).frames, generate_episode(c, 3).frames);
  auto other = c;
  other.seed = 12;
  EXPECT_NE(generate_episode(c, 2).frames, generate_episode(other, 2).frames);
  EXPECT_EQ(dataset_digest(c, generate_dataset(c)), dataset_digest(c, generate_dataset(c)));
  EXPECT_NE(dataset_digest(c, generate_dataset(c)), dataset_digest(other, generate_dataset(other)));
}

TEST(Synth, AnnotationContract) {
  const auto c = small(60);
  for (const auto& ep : generate_dataset(c)) {
    ASSERT_EQ(ep.length(), c.video_length);
    ASSERT_LE(ep.visible_start, ep.active_start);
    ASSERT_LE(ep.active_end, ep.visible_end);
    const auto tube = ep.gt_tube();
    ASSERT_EQ(tube.frames.size(), ep.active_end - ep.active_start + 1);
    EXPECT_EQ(tube.frames.front().first, ep.active_start);
    for (std::size_t f = 0; f < ep.length(); ++f) {
      const bool visible = f >= ep.visible_start && f <= ep.visible_end;
      ASSERT_EQ(ep.actor_boxes[f].has_value(), visible);
      if (!ep.transitional(f)) continue;
      // The actor is still there and overlaps the nearest annotated box.
      const Box& anchor = f < ep.active_start ? tube.frames.front().second : tube.frames.back().second;
      EXPECT_GE(spatial_iou(*ep.actor_boxes[f], anchor), 0.5) << ep.video << " frame " << f;
    }
    EXPECT_GE(ep.active_start - ep.visible_start, c.transition_min);
    EXPECT_LE(ep.visible_end - ep.active_end, c.transition_max);
  }
}

TEST(Synth, ZeroTransitionsIsTrimmed) {
  auto c = small(10);
  c.transition_min = c.transition_max = 0;
  for (const auto& ep : generate_dataset(c)) {
    EXPECT_EQ(ep.visible_start, ep.active_start);
    EXPECT_EQ(ep.visible_end, ep.active_end);
    std::size_t visible = 0;
    for (const auto& b : ep.actor_boxes) visible += b.has_value();
    EXPECT_EQ(ep.gt_tube().frames.size(), visible);
  }
}

TEST(Synth, ActorIsRendered) {
  const auto ep = generate_episode(small(1), 0);
  const std::size_t f = ep.active_start;
  const Box& b = *ep.actor_boxes[f];
  const std::size_t n = ep.frame_size;
  double inside = 0, outside = 0, ni = 0, no = 0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double u = (x + 0.5) / static_cast<double>(n), v = (y + 0.5) / static_cast<double>(n);
      const bool in = u > b.x1 && u < b.x2 && v > b.y1 && v < b.y2;
      (in ? inside : outside) += ep.frames[f][y * n + x];
      (in ? ni : no) += 1;
    }
  EXPECT_GT(inside / ni, 0.5);
  EXPECT_LT(outside / no, 0.3);
  const auto t = ep.frame_tensor(f);
  EXPECT_EQ(t.shape(), (Shape{1, 1, ep.frame_size, ep.frame_size}));
}

TEST(Synth, ClassBalance) {
  const auto c = small(600);
  std::vector<std::size_t> counts(c.num_classes + 1, 0);
  for (std::size_t i = 0; i < c.episodes; ++i) ++counts[generate_episode(c, i).label];
  const double n = static_cast<double>(c.episodes), p = 1.0 / static_cast<double>(c.num_classes);
  const double sigma = std::sqrt(n * p * (1 - p));
  for (std::size_t k = 1; k <= c.num_classes; ++k) EXPECT_LE(std::abs(static_cast<double>(counts[k]) - n * p), 3 * sigma);
}

TEST(Synth, SingleFramesDoNotSeparateClassesOneAndTwo) {
  // One random annotated frame per episode; the frame content is fixed by the
  // actor centre and size, so compare their joint distribution across classes.
  auto c = small(0);
  c.num_classes = 2;
  std::mt19937_64 pick(5);
  std::vector<std::array<double, 3>> feats[3];
  for (std::size_t i = 0; feats[1].size() < 1000 || feats[2].size() < 1000; ++i) {
    const auto ep = generate_episode(c, i);
    if (feats[ep.label].size() >= 1000) continue;
    const std::size_t f = ep.active_start + pick() % (ep.active_end - ep.active_start + 1);
    const Box& b = *ep.actor_boxes[f];
    feats[ep.label].push_back({(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2, b.x2 - b.x1});
  }
  // Quartile edges from the pooled sample, 4 x 4 x 2 cells.
  auto edges = [&](int d, int parts) {
    std::vector<double> all;
    for (int k = 1; k <= 2; ++k)
      for (auto& v : feats[k]) all.push_back(v[d]);
    std::sort(all.begin(), all.end());
    std::vector<double> e;
    for (int q = 1; q < parts; ++q) e.push_back(all[all.size() * q / parts]);
    return e;
  };
  const auto ex = edges(0, 4), ey = edges(1, 4), es = edges(2, 2);
  auto bin = [](const std::vector<double>& e, double v) {
    return static_cast<std::size_t>(std::upper_bound(e.begin(), e.end(), v) - e.begin());
  };
  const std::size_t cells = 4 * 4 * 2;
  std::vector<double> obs[3];
  for (int k = 1; k <= 2; ++k) {
    obs[k].assign(cells, 0.0);
    for (auto& v : feats[k]) obs[k][(bin(ex, v[0]) * 4 + bin(ey, v[1])) * 2 + bin(es, v[2])] += 1;
  }
  double chi2 = 0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < cells; ++j) {
    const double col = obs[1][j] + obs[2][j];
    if (col == 0) continue;
    ++used;
    for (int k = 1; k <= 2; ++k) {
      const double expect = col * 1000.0 / 2000.0;
      chi2 += (obs[k][j] - expect) * (obs[k][j] - expect) / expect;
    }
  }
  boost::math::chi_squared dist(static_cast<double>(used - 1));
  const double p_value = 1.0 - boost::math::cdf(dist, chi2);
  EXPECT_GT(p_value, 0.05) << "chi2 " << chi2 << " df " << used - 1;
}

TEST(Synth, WriteLoadRoundTrip) {
  const auto c = small(5);
  const auto eps = generate_dataset(c);
  const auto dir = scratch_dir("rt");
  const auto digest = write_dataset(c, eps, dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "gt.jsonl"));
  const auto ds = load_dataset(dir);
  EXPECT_EQ(ds.digest, digest);
  EXPECT_EQ(ds.digest, dataset_digest(c, eps));
  ASSERT_EQ(ds.episodes.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_TRUE(ds.episodes[i] == eps[i]) << i;
  EXPECT_EQ(ds.config.seed, c.seed);
  EXPECT_EQ(write_dataset(c, eps, scratch_dir("rt2")), digest);
  fs::remove_all(dir);
  fs::remove_all(scratch_dir("rt2"));
}

TEST(Synth, EmptyDataset) {
  const auto c = small(0);
  const auto dir = scratch_dir("empty");
  const auto digest = write_dataset(c, {}, dir);
  const auto ds = load_dataset(dir);
  EXPECT_TRUE(ds.episodes.empty());
  EXPECT_EQ(ds.digest, digest);
  fs::remove_all(dir);
}

TEST(Synth, CorruptedTensorIsRejected) {
  const auto c = small(2);
  const auto eps = generate_dataset(c);
  const auto dir = scratch_dir("corrupt");
  write_dataset(c, eps, dir);
  const auto file = dir / (eps[0].video + ".tensor");
  std::fstream f(file, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(fs::file_size(file) / 2));
  f.put('\x7f');
  f.close();
  EXPECT_THROW(load_dataset(dir), std::runtime_error);
  EXPECT_THROW(load_dataset(dir / "missing"), std::runtime_error);
  fs::remove_all(dir);
}

TEST(Synth, ConfigValidation) {
  SynthConfig c;
  c.num_classes = 1;
  EXPECT_THROW(generate_episode(c, 0), std::invalid_argument);
  c = SynthConfig{};
  c.transition_max = 20;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SynthConfig{};
  c.actor_max = 60;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_THROW(motion_offset(7, 1.0, 0.0), std::invalid_argument);
}
