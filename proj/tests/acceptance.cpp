// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//   acceptance [--only 1,4,...] [--seeds N] [--epochs N]

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "eval_oracle.hpp"
#include "tacnet/detector.hpp"
#include "tacnet/io.hpp"
#include "tacnet/pipeline.hpp"
#include "tacnet/tac.hpp"
#include "tacnet/train.hpp"
#include "tacnet/tubes.hpp"

using namespace tacnet;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// 1 -------------------------------------------------------------------------
Outcome gradients() {
  const auto t0 = Clock::now();
  const auto suite = pipeline::gradcheck_suite(1.0, 1e-6, 1e-4);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  std::string worst_name;
  bool all = true;
  for (const auto& c : suite) {
    all = all && c.report.pass;
    if (c.report.max_rel_error >= worst) {
      worst = c.report.max_rel_error;
      worst_name = c.name;
    }
  }
  bool caught = false;
  for (const auto& c : pipeline::gradcheck_suite(1.01, 1e-6, 1e-4)) caught = caught || !c.report.pass;
  return {all && caught && elapsed < 120.0,
          fmt("%zu checks, worst %.2e (%s), fault injection %s, %.1fs", suite.size(), worst, worst_name.c_str(),
              caught ? "detected" : "MISSED", elapsed)};
}

// 2 -------------------------------------------------------------------------
Outcome decoupling() {
  std::mt19937_64 rng(20240601);
  std::normal_distribution<double> gauss(0, 3);
  // Multiples of 2^-24 below 64 in magnitude: the sums below are exact.
  auto draw = [&] { return std::ldexp(std::round(std::ldexp(std::clamp(gauss(rng), -60.0, 60.0), 24)), -24); };
  double worst_p = 0, worst_logit = 0;
  std::size_t bitwise_failures = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 1 + rng() % 6;
    tac::ScorePair s;
    s.c_plus.resize(K + 1);
    s.c_minus.resize(K);
    for (auto& c : s.c_plus) c = draw();
    for (auto& c : s.c_minus) c = draw();
    auto diff = s, common = s;
    std::vector<double> lambda(K);
    for (std::size_t i = 1; i <= K; ++i) {
      lambda[i - 1] = draw();
      const double mu = draw();
      diff.c_plus[i] -= lambda[i - 1];
      diff.c_minus[i - 1] += lambda[i - 1];
      common.c_plus[i] += mu;
      common.c_minus[i - 1] += mu;
    }
    const auto p0 = tac::category_probs(s), p1 = tac::category_probs(diff);
    for (std::size_t j = 0; j <= K; ++j) worst_p = std::max(worst_p, std::abs(p0[j] - p1[j]));
    for (std::size_t i = 1; i <= K; ++i) {
      const double shift = tac::state_logit(tac::view(diff), i) - tac::state_logit(tac::view(s), i);
      worst_logit = std::max(worst_logit, std::abs(shift + 2.0 * lambda[i - 1]));
    }
    const auto t0 = tac::state_probs(s), t2 = tac::state_probs(common);
    if (std::memcmp(t0.data(), t2.data(), t0.size() * sizeof(double)) != 0) ++bitwise_failures;
  }
  return {worst_p <= 1e-12 && worst_logit <= 1e-12 && bitwise_failures == 0,
          fmt("1000 draws, max |dp| %.1e, max logit error %.1e, %zu bitwise mismatches", worst_p, worst_logit,
              bitwise_failures)};
}

// 3 -------------------------------------------------------------------------
Outcome context_cost() {
  detector::DetectorConfig cfg;
  cfg.dropout_p = 0.0;
  const auto model = detector::DetectorModel::create(cfg, 7);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  auto clip = [&](std::size_t L) {
    std::vector<Tensor> frames;
    for (std::size_t t = 0; t < L; ++t) {
      Tensor x({1, 1, cfg.input_size, cfg.input_size});
      for (auto& v : x.values()) v = u(rng);
      frames.push_back(x);
    }
    return frames;
  };
  const auto c16 = clip(16), c32 = clip(32);
  auto median_time = [&](const std::vector<Tensor>& frames) {
    std::vector<double> times;
    for (int r = 0; r < 20; ++r) {
      Graph g(false);
      const auto t0 = Clock::now();
      const auto out = detector::forward_clip(g, model, frames, false, 0);
      times.push_back(seconds_since(t0));
      if (out.frames() != frames.size()) return -1.0;
    }
    std::sort(times.begin(), times.end());
    return 0.5 * (times[9] + times[10]);
  };
  median_time(c16);  // warm-up
  const double t16 = median_time(c16), t32 = median_time(c32);
  const double ratio = t32 / t16;
  return {t16 > 0 && t32 > 0 && ratio <= 2.2, fmt("median L=16 %.1fms, L=32 %.1fms, ratio %.3f", t16 * 1e3, t32 * 1e3, ratio)};
}

// 4 -------------------------------------------------------------------------
struct TrendBudget {
  std::size_t seeds = 3;
  std::size_t epochs = 5;
};

Outcome trend(const TrendBudget& budget) {
  const auto t0 = Clock::now();
  synth::SynthConfig train_data;  // defaults: 200 episodes, seed 2024
  synth::SynthConfig test_data = train_data;
  test_data.episodes = 50;
  test_data.seed = 4048;
  const auto train_eps = synth::generate_dataset(train_data);
  const auto test_eps = synth::generate_dataset(test_data);
  std::vector<evalkit::GroundTruthTube> gts;
  for (const auto& e : test_eps) gts.push_back(e.gt_tube());

  const std::array<losses::TrainMode, 3> modes{losses::TrainMode::kTac, losses::TrainMode::kBgBaseline,
                                               losses::TrainMode::kNoTac};
  std::array<double, 3> temporal{}, video{};
  for (std::size_t m = 0; m < modes.size(); ++m) {
    for (std::size_t seed = 1; seed <= budget.seeds; ++seed) {
      train::TrainConfig cfg;
      cfg.mode = modes[m];
      cfg.seed = seed;
      cfg.epochs = budget.epochs;
      cfg.lr = 0.01;
      cfg.clip_norm = 10.0;
      const auto model = train::train_model(train_eps, train_data, cfg).model;
      const auto dets = pipeline::infer_dataset(model, test_eps, pipeline::postprocess_for(cfg.mode));
      const auto linked = pipeline::link_all(dets, tubes::LinkConfig{});
      const auto metrics = pipeline::evaluate(nullptr, &linked.tubes, gts);
      temporal[m] += *metrics.temporal_map / static_cast<double>(budget.seeds);
      video[m] += metrics.video_map.at("0.5") / static_cast<double>(budget.seeds);
      std::fprintf(stderr, "  trend: mode %zu seed %zu temporal %.4f video@0.5 %.4f (%.0fs)\n", m, seed,
                   *metrics.temporal_map, metrics.video_map.at("0.5"), seconds_since(t0));
    }
  }
  const bool ok = temporal[0] > temporal[1] && video[0] > video[2];
  return {ok, fmt("temporal-mAP tac %.3f > bg %.3f; video-mAP@0.5 tac %.3f > no-tac %.3f (%zu seeds x %zu epochs, %.0fs)",
                  temporal[0], temporal[1], video[0], video[2], budget.seeds, budget.epochs, seconds_since(t0))};
}

// 5 -------------------------------------------------------------------------
Outcome oracle_equivalence() {
  using namespace evalkit;
  std::mt19937_64 rng(55);
  std::size_t mismatches = 0;
  double worst = 0;
  auto check = [&](double a, double b) {
    const double d = std::abs(a - b);
    worst = std::max(worst, d);
    if (d > 1e-12) ++mismatches;
  };
  for (int trial = 0; trial < 500; ++trial) {
    const auto in = oracle::random_instance(rng);
    for (double thr : {0.2, 0.5, 0.75}) {
      check(average_precision(in.scores, in.num_gt, [&](std::size_t d, std::size_t g) { return in.iou[d][g]; }, thr),
            oracle::ap(in.scores, in.iou, in.num_gt, thr));
    }
    const auto fm = frame_map(in.box_dets, in.box_gts);
    const auto fo = oracle::frame_ap(in.box_dets, in.box_gts, 0.5);
    check(fm.mean, oracle::mean_over_classes(fo));
    for (auto mode : {IouMode::kSpatioTemporal, IouMode::kTemporal}) {
      const auto vm = video_map(in.tube_dets, in.tube_gts, {"0.2", "0.5", "0.75"}, mode);
      for (auto [label, thr] : {std::pair<std::string, double>{"0.2", 0.2}, {"0.5", 0.5}, {"0.75", 0.75}}) {
        check(vm.entries.at(label).mean,
              oracle::mean_over_classes(oracle::tube_ap(in.tube_dets, in.tube_gts, thr, mode == IouMode::kSpatioTemporal)));
      }
    }
  }
  return {mismatches == 0, fmt("500 instances, %zu mismatches, max deviation %.1e", mismatches, worst)};
}

// 6 -------------------------------------------------------------------------
Outcome trimming() {
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> hi(0.7, 1.0), lo(0.0, 0.3);
  tubes::LinkConfig cfg;
  cfg.smoothing_window = 1;
  int recovered = 0;
  const int n = 100;
  for (int i = 0; i < n; ++i) {
    const std::size_t pre = rng() % 15, len = 1 + rng() % 40, post = rng() % 15;
    std::vector<double> a(pre, lo(rng));
    a.insert(a.end(), len, hi(rng));
    a.insert(a.end(), post, lo(rng));
    tubes::Tube tube;
    for (std::size_t f = 0; f < a.size(); ++f) tube.entries.push_back({f, {0.2, 0.2, 0.5, 0.5}, 0.8, a[f]});
    const auto segs = tubes::watershed_trim(tube, cfg);
    const auto near = [](std::size_t x, std::size_t y) { return (x > y ? x - y : y - x) <= 1; };
    if (segs.size() == 1 && near(segs[0].start, pre) && near(segs[0].end, pre + len - 1)) ++recovered;
  }
  return {recovered * 100 >= 99 * n, fmt("%d/%d step tubes recovered within one frame", recovered, n)};
}

// 7 -------------------------------------------------------------------------
Outcome refinement_scope() {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> pos(0.0, 0.6), score(0.05, 1.0);
  tubes::LinkConfig on, off;
  off.microtube_refinement = false;
  std::size_t tube_diffs = 0, frame_diffs = 0, changed_p = 0, tubes_seen = 0;
  auto same_bits = [](const auto& a, const auto& b) { return std::memcmp(&a, &b, sizeof a) == 0; };
  for (int video = 0; video < 50; ++video) {
    std::vector<detector::FrameDetection> dets;
    const double x = pos(rng), y = pos(rng);
    const std::size_t s = rng() % 15, e = s + 10 + rng() % 20;
    for (std::size_t f = 0; f < 48; ++f) {
      dets.push_back({f, 1 + static_cast<int>(rng() % 3), {x + 0.002 * f, y, x + 0.3 + 0.002 * f, y + 0.3}, score(rng),
                      f >= s && f <= e ? 0.85 : 0.15});
      for (int k = 0; k < 3; ++k) {
        const double u = pos(rng), v = pos(rng);
        dets.push_back({f, 1 + static_cast<int>(rng() % 3), {u, v, u + 0.25, v + 0.25}, score(rng), score(rng)});
      }
    }
    const auto a = tubes::process_video(dets, on, "v");
    const auto b = tubes::process_video(dets, off, "v");
    tubes_seen += a.tubes.size();
    if (a.tubes.size() != b.tubes.size()) {
      ++tube_diffs;
      continue;
    }
    for (std::size_t i = 0; i < a.tubes.size(); ++i) {
      const auto &ta = a.tubes[i], &tb = b.tubes[i];
      bool same = ta.segment == tb.segment && same_bits(ta.score, tb.score) && ta.label == tb.label &&
                  ta.entries.size() == tb.entries.size();
      for (std::size_t j = 0; same && j < ta.entries.size(); ++j) {
        same = ta.entries[j].frame == tb.entries[j].frame && same_bits(ta.entries[j].box, tb.entries[j].box) &&
               same_bits(ta.entries[j].t, tb.entries[j].t);
      }
      tube_diffs += !same;
    }
    if (a.frame_detections.size() != b.frame_detections.size()) {
      ++frame_diffs;
      continue;
    }
    for (std::size_t i = 0; i < a.frame_detections.size(); ++i) {
      const auto &da = a.frame_detections[i], &db = b.frame_detections[i];
      if (da.frame != db.frame || da.label != db.label || !same_bits(da.box, db.box) || !same_bits(da.t, db.t)) ++frame_diffs;
      changed_p += !same_bits(da.p, db.p);
    }
  }
  return {tube_diffs == 0 && frame_diffs == 0 && changed_p > 0,
          fmt("50 videos, %zu tubes: %zu tube differences, %zu non-score frame differences, %zu frame scores refined",
              tubes_seen, tube_diffs, frame_diffs, changed_p)};
}

// 8 -------------------------------------------------------------------------
int shell(const std::string& cmd) {
  const int st = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

Outcome determinism() {
  const auto t0 = Clock::now();
  const auto root = fs::temp_directory_path() / ("tacnet_accept_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  io::write_text(root / "synth.cfg", "seed = 2024\nepisodes = 200\n");
  io::write_text(root / "test.cfg", "seed = 4048\nepisodes = 50\n");
  io::write_text(root / "train.cfg", "epochs = 1\nlr = 0.01\nclip_norm = 10\nseed = 1\n");
  io::write_text(root / "link.cfg", "microtube_refinement = true\n");
  const std::string bin = TACNET_BIN;
  std::vector<std::string> metrics;
  for (int run = 0; run < 2; ++run) {
    const auto d = root / ("run" + std::to_string(run));
    const auto q = [&](const std::string& name) { return (d / name).string(); };
    const std::string r = root.string();
    const std::vector<std::string> steps{
        bin + " synth " + r + "/synth.cfg " + q("train"),
        bin + " synth " + r + "/test.cfg " + q("test"),
        bin + " train " + q("train") + " " + r + "/train.cfg " + q("model.ckpt"),
        bin + " infer " + q("model.ckpt") + " " + q("test") + " " + q("dets.jsonl"),
        bin + " link " + q("dets.jsonl") + " " + r + "/link.cfg " + q("tubes.jsonl") + " --frames-out " + q("frames.jsonl"),
        bin + " eval --tubes " + q("tubes.jsonl") + " --detections " + q("frames.jsonl") + " --gt " + q("test") +
            " --out " + q("metrics.json"),
    };
    for (const auto& s : steps) {
      if (shell(s) != 0) {
        fs::remove_all(root);
        return {false, "pipeline step failed: " + s};
      }
    }
    metrics.push_back(io::read_text(d / "metrics.json"));
  }
  fs::remove_all(root);
  const bool same = metrics[0] == metrics[1] && !metrics[0].empty();
  return {same, fmt("two synth/train/infer/link/eval runs, metrics JSON %zu bytes, sha256 %s%s (%.0fs)", metrics[0].size(),
                    io::sha256_hex(metrics[0]).substr(0, 16).c_str(), same ? " identical" : " DIFFERS",
                    seconds_since(t0))};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  TrendBudget budget;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--seeds" && i + 1 < argc) {
      budget.seeds = std::stoul(argv[++i]);
    } else if (a == "--epochs" && i + 1 < argc) {
      budget.epochs = std::stoul(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--only 1,2,...] [--seeds N] [--epochs N]\n");
      return 2;
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradients},
      {"decoupling invariance", decoupling},
      {"constant per-frame context cost", context_cost},
      {"TAC vs baseline trend", [&] { return trend(budget); }},
      {"evaluation oracle equivalence", oracle_equivalence},
      {"trimming accuracy", trimming},
      {"micro-tube refinement scope", refinement_scope},
      {"end-to-end determinism", determinism},
  };
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!only.empty() && !only.contains(id)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return all ? 0 : 1;
}
