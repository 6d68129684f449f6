#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <random>
#include <unistd.h>

#include "tacnet/checkpoint.hpp"
#include "tacnet/config.hpp"
#include "tacnet/io.hpp"

using namespace tacnet;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("tacnet_io_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  return dir / name;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

detector::DetectorConfig tiny() {
  detector::DetectorConfig c;
  c.input_size = 32;
  c.feature_channels = {4, 6};
  c.hidden_channels = 3;
  c.num_classes = 2;
  c.clip_length = 4;
  return c;
}

}  // namespace

TEST(Jsonl, DetectionRoundTrip) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<io::DetectionRecord> recs;
  for (int i = 0; i < 50; ++i) {
    const double x = u(rng) * 0.5, y = u(rng) * 0.5;
    recs.push_back({"video" + std::to_string(i % 3), {static_cast<std::size_t>(i), 1 + i % 3, {x, y, x + 0.3, y + 0.1}, u(rng), u(rng)}});
  }
  const auto path = scratch("dets.jsonl");
  io::write_detections(path, recs);
  EXPECT_EQ(io::read_detections(path), recs);
  io::write_detections(path, {});
  EXPECT_TRUE(io::read_detections(path).empty());
}

TEST(Jsonl, TubeAndGtRoundTrip) {
  tubes::ScoredTube t;
  t.video = "v1";
  t.label = 2;
  t.score = 0.123456789012345678;
  t.segment = {3, 4, 0.7, 0.4};
  t.entries = {{3, {0.1, 0.2, 0.3, 0.4}, 0.5, 0.6}, {4, {0.11, 0.2, 0.3, 0.4}, 0.55, 0.65}};
  const auto back = io::parse_tube_line(io::tube_to_jsonl_line(t), "x");
  EXPECT_EQ(back.video, t.video);
  EXPECT_EQ(back.label, t.label);
  EXPECT_EQ(back.score, t.score);
  EXPECT_EQ(back.segment.start, 3u);
  EXPECT_EQ(back.segment.end, 4u);
  ASSERT_EQ(back.entries.size(), 2u);
  EXPECT_EQ(back.entries[1].box, t.entries[1].box);
  EXPECT_EQ(back.entries[1].p, t.entries[1].p);

  evalkit::GroundTruthTube g{"v2", 3, {{5, {0.1, 0.1, 0.2, 0.2}}, {6, {0.1, 0.1, 0.25, 0.2}}}};
  const auto gb = io::parse_gt_line(io::gt_to_jsonl_line(g), "x");
  EXPECT_EQ(gb.video, g.video);
  EXPECT_EQ(gb.label, g.label);
  EXPECT_EQ(gb.frames, g.frames);
}

TEST(Jsonl, RejectsMalformedWithLineNumbers) {
  const auto path = scratch("bad.jsonl");
  const std::string good = R"({"video":"a","frame":0,"class":1,"box":[0,0,0.5,0.5],"p":0.5,"t":0.5})";
  io::write_text(path, good + "\n" + R"({"video":"a","frame":0,"class":1,"box":[0,0,0.5,0.5],"p":0.5,"t":0.5,"extra":1})" + "\n");
  auto msg = error_of([&] { io::read_detections(path); });
  EXPECT_NE(msg.find(":2: unknown field 'extra'"), std::string::npos) << msg;

  io::write_text(path, good + "\n\n" + R"({"video":"a","frame":0,"class":1,"box":[0,0,0.5,0.5],"p":0.5})" + "\n");
  msg = error_of([&] { io::read_detections(path); });
  EXPECT_NE(msg.find(":3: missing field 't'"), std::string::npos) << msg;

  const std::vector<std::string> bad{
      "not json",
      "[1,2]",
      R"({"video":"a","frame":-1,"class":1,"box":[0,0,0.5,0.5],"p":0.5,"t":0.5})",
      R"({"video":"a","frame":0,"class":0,"box":[0,0,0.5,0.5],"p":0.5,"t":0.5})",
      R"({"video":"a","frame":0,"class":1,"box":[0.5,0,0.5,0.5],"p":0.5,"t":0.5})",
      R"({"video":"a","frame":0,"class":1,"box":[0,0,0.5],"p":0.5,"t":0.5})",
      R"({"video":"a","frame":0,"class":1,"box":[0,0,0.5,0.5],"p":1.5,"t":0.5})",
      R"({"video":1,"frame":0,"class":1,"box":[0,0,0.5,0.5],"p":0.5,"t":0.5})",
  };
  for (const auto& line : bad) EXPECT_THROW(io::parse_detection_line(line, "f:1"), io::FormatError) << line;
  EXPECT_THROW(io::parse_gt_line(R"({"video":"a","class":1,"frames":[]})", "g:1"), io::FormatError);
  EXPECT_THROW(io::parse_gt_line(R"({"video":"a","class":1,"frames":[{"frame":2,"box":[0,0,1,1]},{"frame":2,"box":[0,0,1,1]}]})", "g:1"),
               io::FormatError);
  EXPECT_THROW(io::read_detections(scratch("missing.jsonl")), io::FormatError);
}

TEST(RawTensor, RoundTripAndRejects) {
  const std::vector<std::vector<float>> frames{{0.f, 1.f, 2.f, 3.f}, {-1.f, 0.5f, 1e-30f, 7.f}};
  const auto path = scratch("t.tensor");
  io::write_raw_tensor(path, frames, 2);
  EXPECT_EQ(io::read_raw_tensor(path, 2), frames);
  EXPECT_THROW(io::read_raw_tensor(path, 3), io::FormatError);
  fs::resize_file(path, fs::file_size(path) - 1);
  EXPECT_THROW(io::read_raw_tensor(path, 2), io::FormatError);
}

TEST(Metrics, JsonRoundTripAndOrder) {
  io::Metrics m;
  m.frame_map = 0.1 + 0.2;
  m.video_map = {{"0.2", 1.0 / 3.0}, {"0.5", 0.0}, {"0.75", 0.25}, {"0.5:0.95", 0.125}};
  m.temporal_map = 2.0 / 3.0;
  m.per_class[1].frame_ap = 0.5;
  m.per_class[1].video_ap = {{"0.5", 0.1}};
  m.per_class[2].temporal_ap = 0.9;
  const auto text = io::metrics_to_json(m);
  EXPECT_EQ(text.back(), '\n');
  const auto back = io::metrics_from_json(text);
  EXPECT_EQ(*back.frame_map, *m.frame_map);
  EXPECT_EQ(back.video_map, m.video_map);
  EXPECT_EQ(io::metrics_to_json(back), text);
}

TEST(KeyValues, Parsing) {
  const auto kv = io::parse_key_values("# comment\n seed = 7 \n\nname=a b\n", "cfg");
  EXPECT_EQ(kv.at("seed"), "7");
  EXPECT_EQ(kv.at("name"), "a b");
  auto msg = error_of([] { io::parse_key_values("a = 1\na = 2\n", "cfg"); });
  EXPECT_NE(msg.find("cfg:2"), std::string::npos) << msg;
  EXPECT_THROW(io::parse_key_values("just words\n", "cfg"), io::FormatError);
}

TEST(Config, AppliersOverrideDefaults) {
  const auto s = config::synth_config({{"seed", "9"}, {"num_classes", "4"}, {"noise", "0.1"}});
  EXPECT_EQ(s.seed, 9u);
  EXPECT_EQ(s.num_classes, 4u);
  EXPECT_EQ(s.noise, 0.1);
  EXPECT_EQ(s.frame_size, synth::SynthConfig{}.frame_size);
  EXPECT_THROW(config::synth_config({{"sead", "9"}}), std::invalid_argument);
  EXPECT_THROW(config::synth_config({{"seed", "nine"}}), std::invalid_argument);
  EXPECT_THROW(config::synth_config({{"num_classes", "0"}}), std::invalid_argument);

  const auto l = config::link_config({{"microtube_refinement", "false"}, {"smoothing_window", "3"}});
  EXPECT_FALSE(l.microtube_refinement);
  EXPECT_EQ(l.smoothing_window, 3u);
  const auto t = config::train_config({{"lr", "0.01"}, {"mode", "bg-baseline"}, {"mining", "category-prob"}});
  EXPECT_EQ(t.lr, 0.01);
  EXPECT_EQ(t.mode, losses::TrainMode::kBgBaseline);
  EXPECT_EQ(t.mining, losses::MiningRule::kCategoryProb);
  EXPECT_EQ(config::mining_rule_from_string(config::to_string(losses::MiningRule::kRawScore)), losses::MiningRule::kRawScore);
  EXPECT_THROW(config::train_config({{"mode", "fancy"}}), std::invalid_argument);
  const auto p = config::postprocess_config({{"score_floor", "0.2"}});
  EXPECT_EQ(p.score_floor, 0.2);
}

TEST(Checkpoint, BitwiseRoundTrip) {
  const auto model = detector::DetectorModel::create(tiny(), 42);
  const auto bytes = checkpoint::serialize(model, losses::TrainMode::kNoTac);
  const auto ck = checkpoint::deserialize(bytes);
  EXPECT_EQ(ck.mode, losses::TrainMode::kNoTac);
  EXPECT_EQ(ck.config_digest, checkpoint::config_digest(model.config));
  const auto a = model.named_parameters(), b = ck.model.named_parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    ASSERT_EQ(a[i].second.shape(), b[i].second.shape());
    EXPECT_EQ(std::memcmp(a[i].second.values().data(), b[i].second.values().data(), a[i].second.numel() * sizeof(double)), 0);
  }
  EXPECT_EQ(checkpoint::serialize(ck.model, ck.mode), bytes);

  const auto path = scratch("m.ckpt");
  checkpoint::save(path, model, losses::TrainMode::kTac);
  EXPECT_EQ(checkpoint::serialize(checkpoint::load(path).model, losses::TrainMode::kTac),
            checkpoint::serialize(model, losses::TrainMode::kTac));
}

TEST(Checkpoint, RejectsCorruption) {
  const auto bytes = checkpoint::serialize(detector::DetectorModel::create(tiny(), 1), losses::TrainMode::kTac);
  EXPECT_ANY_THROW(checkpoint::deserialize("NOTACKPT" + bytes.substr(8)));
  EXPECT_ANY_THROW(checkpoint::deserialize(bytes.substr(0, bytes.size() - 8)));
  EXPECT_ANY_THROW(checkpoint::deserialize(bytes + "x"));
  EXPECT_ANY_THROW(checkpoint::deserialize(""));
}

TEST(Checkpoint, ConfigJson) {
  const auto c = tiny();
  const auto back = checkpoint::detector_config_from_json(checkpoint::detector_config_json(c));
  EXPECT_EQ(checkpoint::detector_config_json(back), checkpoint::detector_config_json(c));
  EXPECT_EQ(checkpoint::config_digest(back), checkpoint::config_digest(c));
  auto d = c;
  d.hidden_channels = 4;
  EXPECT_NE(checkpoint::config_digest(d), checkpoint::config_digest(c));
}

TEST(Sha256, KnownVectors) {
  EXPECT_EQ(io::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(io::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
