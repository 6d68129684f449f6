#include "tacnet/io.hpp"

#include <openssl/sha.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "json.hpp"

namespace tacnet::io {
namespace {

using json = nlohmann::json;
using ordered = nlohmann::ordered_json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

[[noreturn]] void fail(const std::string& where, const std::string& msg) { throw FormatError(where + ": " + msg); }

json parse_object(const std::string& line, const std::string& where) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    fail(where, std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) fail(where, "record must be a JSON object");
  return j;
}

void require_fields(const json& j, std::initializer_list<const char*> fields, const std::string& where,
                    const std::string& what) {
  std::set<std::string> expected(fields.begin(), fields.end());
  for (const auto& [key, value] : j.items()) {
    if (!expected.contains(key)) fail(where, "unknown field '" + key + "' in " + what);
  }
  for (const auto& f : expected) {
    if (!j.contains(f)) fail(where, "missing field '" + f + "' in " + what);
  }
}

double get_number(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number()) fail(where, std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

std::size_t get_index(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
    fail(where, std::string("field '") + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

int get_class(const json& j, const std::string& where) {
  const auto& v = j.at("class");
  if (!v.is_number_integer() || v.get<long long>() < 1) fail(where, "field 'class' must be an integer >= 1");
  return v.get<int>();
}

std::string get_string(const json& j, const char* key, const std::string& where) {
  const auto& v = j.at(key);
  if (!v.is_string()) fail(where, std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

Box get_box(const json& j, const std::string& where) {
  const auto& v = j.at("box");
  if (!v.is_array() || v.size() != 4) fail(where, "field 'box' must be [x1, y1, x2, y2]");
  for (const auto& x : v) {
    if (!x.is_number()) fail(where, "field 'box' must hold numbers");
  }
  Box b{v[0].get<double>(), v[1].get<double>(), v[2].get<double>(), v[3].get<double>()};
  if (!(b.x1 < b.x2 && b.y1 < b.y2)) fail(where, "box must satisfy x1 < x2 and y1 < y2");
  return b;
}

ordered box_json(const Box& b) { return ordered::array({b.x1, b.y1, b.x2, b.y2}); }

template <typename T, typename Parse>
std::vector<T> read_lines(const std::filesystem::path& path, Parse parse) {
  std::ifstream in(path);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::vector<T> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out.push_back(parse(line, path.string() + ":" + std::to_string(lineno)));
  }
  return out;
}

template <typename T, typename Format>
void write_lines(const std::filesystem::path& path, const std::vector<T>& items, Format format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  for (const auto& item : items) out << format(item) << '\n';
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void write_raw_tensor(const std::filesystem::path& path, const std::vector<std::vector<float>>& frames,
                      std::size_t frame_size) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  const std::uint32_t rank = 3;
  const std::uint64_t dims[3] = {frames.size(), frame_size, frame_size};
  out.write("TNSR", 4);
  out.write(reinterpret_cast<const char*>(&rank), sizeof rank);
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  for (const auto& f : frames) {
    if (f.size() != frame_size * frame_size) throw std::invalid_argument("write_raw_tensor: frame size mismatch");
    out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
}

std::vector<std::vector<float>> read_raw_tensor(const std::filesystem::path& path, std::size_t frame_size) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  char magic[4];
  std::uint32_t rank = 0;
  std::uint64_t dims[3] = {};
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&rank), sizeof rank);
  if (!in || std::memcmp(magic, "TNSR", 4) != 0 || rank != 3) throw FormatError(path.string() + ": bad tensor header");
  in.read(reinterpret_cast<char*>(dims), sizeof dims);
  if (!in || dims[1] != frame_size || dims[2] != frame_size) {
    throw FormatError(path.string() + ": expected frames of " + std::to_string(frame_size) + "x" +
                      std::to_string(frame_size));
  }
  std::vector<std::vector<float>> frames(dims[0], std::vector<float>(frame_size * frame_size));
  for (auto& f : frames) {
    in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  }
  if (!in) throw FormatError(path.string() + ": truncated tensor data");
  if (in.peek() != std::char_traits<char>::eof()) throw FormatError(path.string() + ": trailing bytes");
  return frames;
}

bool operator==(const DetectionRecord& a, const DetectionRecord& b) {
  return a.video == b.video && a.det.frame == b.det.frame && a.det.label == b.det.label && a.det.box == b.det.box &&
         a.det.p == b.det.p && a.det.t == b.det.t;
}

std::string detection_to_jsonl_line(const DetectionRecord& r) {
  ordered j;
  j["video"] = r.video;
  j["frame"] = r.det.frame;
  j["class"] = r.det.label;
  j["box"] = box_json(r.det.box);
  j["p"] = r.det.p;
  j["t"] = r.det.t;
  return j.dump();
}

std::string tube_to_jsonl_line(const tubes::ScoredTube& t) {
  ordered j;
  j["video"] = t.video;
  j["class"] = t.label;
  j["score"] = t.score;
  j["segment"] = ordered::array({t.segment.start, t.segment.end});
  ordered frames = ordered::array();
  for (const auto& e : t.entries) {
    ordered f;
    f["frame"] = e.frame;
    f["box"] = box_json(e.box);
    f["p"] = e.p;
    f["t"] = e.t;
    frames.push_back(std::move(f));
  }
  j["frames"] = std::move(frames);
  return j.dump();
}

std::string gt_to_jsonl_line(const evalkit::GroundTruthTube& g) {
  ordered j;
  j["video"] = g.video;
  j["class"] = g.label;
  ordered frames = ordered::array();
  for (const auto& [frame, box] : g.frames) {
    ordered f;
    f["frame"] = frame;
    f["box"] = box_json(box);
    frames.push_back(std::move(f));
  }
  j["frames"] = std::move(frames);
  return j.dump();
}

DetectionRecord parse_detection_line(const std::string& line, const std::string& where) {
  const json j = parse_object(line, where);
  require_fields(j, {"video", "frame", "class", "box", "p", "t"}, where, "detection");
  DetectionRecord r;
  r.video = get_string(j, "video", where);
  r.det.frame = get_index(j, "frame", where);
  r.det.label = get_class(j, where);
  r.det.box = get_box(j, where);
  r.det.p = get_number(j, "p", where);
  r.det.t = get_number(j, "t", where);
  if (r.det.p < 0.0 || r.det.p > 1.0 || r.det.t < 0.0 || r.det.t > 1.0) fail(where, "p and t must lie in [0, 1]");
  return r;
}

tubes::ScoredTube parse_tube_line(const std::string& line, const std::string& where) {
  const json j = parse_object(line, where);
  require_fields(j, {"video", "class", "score", "segment", "frames"}, where, "tube");
  tubes::ScoredTube t;
  t.video = get_string(j, "video", where);
  t.label = get_class(j, where);
  t.score = get_number(j, "score", where);
  const auto& seg = j.at("segment");
  if (!seg.is_array() || seg.size() != 2 || !seg[0].is_number_unsigned() || !seg[1].is_number_unsigned()) {
    fail(where, "field 'segment' must be [start, end] with non-negative integers");
  }
  t.segment.start = seg[0].get<std::size_t>();
  t.segment.end = seg[1].get<std::size_t>();
  if (t.segment.start > t.segment.end) fail(where, "segment start exceeds end");
  const auto& frames = j.at("frames");
  if (!frames.is_array()) fail(where, "field 'frames' must be an array");
  for (const auto& f : frames) {
    if (!f.is_object()) fail(where, "tube frame must be an object");
    require_fields(f, {"frame", "box", "p", "t"}, where, "tube frame");
    tubes::TubeEntry e;
    e.frame = get_index(f, "frame", where);
    e.box = get_box(f, where);
    e.p = get_number(f, "p", where);
    e.t = get_number(f, "t", where);
    if (!t.entries.empty() && e.frame <= t.entries.back().frame) fail(where, "tube frames must strictly increase");
    t.entries.push_back(e);
  }
  return t;
}

evalkit::GroundTruthTube parse_gt_line(const std::string& line, const std::string& where) {
  const json j = parse_object(line, where);
  require_fields(j, {"video", "class", "frames"}, where, "ground truth");
  evalkit::GroundTruthTube g;
  g.video = get_string(j, "video", where);
  g.label = get_class(j, where);
  const auto& frames = j.at("frames");
  if (!frames.is_array() || frames.empty()) fail(where, "field 'frames' must be a non-empty array");
  for (const auto& f : frames) {
    if (!f.is_object()) fail(where, "ground-truth frame must be an object");
    require_fields(f, {"frame", "box"}, where, "ground-truth frame");
    const std::size_t frame = get_index(f, "frame", where);
    if (!g.frames.empty() && frame <= g.frames.back().first) fail(where, "ground-truth frames must strictly increase");
    g.frames.emplace_back(frame, get_box(f, where));
  }
  return g;
}

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path) {
  return read_lines<DetectionRecord>(path, parse_detection_line);
}

std::vector<tubes::ScoredTube> read_tubes(const std::filesystem::path& path) {
  return read_lines<tubes::ScoredTube>(path, parse_tube_line);
}

std::vector<evalkit::GroundTruthTube> read_gt(const std::filesystem::path& path) {
  return read_lines<evalkit::GroundTruthTube>(path, parse_gt_line);
}

void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records) {
  write_lines(path, records, detection_to_jsonl_line);
}

void write_tubes(const std::filesystem::path& path, const std::vector<tubes::ScoredTube>& tubes) {
  write_lines(path, tubes, tube_to_jsonl_line);
}

void write_gt(const std::filesystem::path& path, const std::vector<evalkit::GroundTruthTube>& gts) {
  write_lines(path, gts, gt_to_jsonl_line);
}

std::string metrics_to_json(const Metrics& m) {
  auto opt = [](const std::optional<double>& v) { return v ? ordered(*v) : ordered(nullptr); };
  ordered j;
  j["frame_map"] = opt(m.frame_map);
  ordered vm = ordered::object();
  for (const auto& label : evalkit::standard_video_thresholds()) {
    if (m.video_map.contains(label)) vm[label] = m.video_map.at(label);
  }
  for (const auto& [label, v] : m.video_map) {
    if (!vm.contains(label)) vm[label] = v;
  }
  j["video_map"] = std::move(vm);
  j["temporal_map"] = opt(m.temporal_map);
  j["temporal_threshold"] = m.temporal_threshold;
  ordered pc = ordered::object();
  for (const auto& [c, entry] : m.per_class) {
    ordered e;
    e["frame_ap"] = opt(entry.frame_ap);
    ordered va = ordered::object();
    for (const auto& label : evalkit::standard_video_thresholds()) {
      if (entry.video_ap.contains(label)) va[label] = entry.video_ap.at(label);
    }
    for (const auto& [label, v] : entry.video_ap) {
      if (!va.contains(label)) va[label] = v;
    }
    e["video_ap"] = std::move(va);
    e["temporal_ap"] = opt(entry.temporal_ap);
    pc[std::to_string(c)] = std::move(e);
  }
  j["per_class"] = std::move(pc);
  return j.dump(2) + "\n";
}

Metrics metrics_from_json(const std::string& text) {
  const json j = json::parse(text);
  auto opt = [](const json& v) { return v.is_null() ? std::optional<double>{} : std::optional<double>{v.get<double>()}; };
  Metrics m;
  m.frame_map = opt(j.at("frame_map"));
  for (const auto& [k, v] : j.at("video_map").items()) m.video_map[k] = v.get<double>();
  m.temporal_map = opt(j.at("temporal_map"));
  m.temporal_threshold = j.at("temporal_threshold").get<double>();
  for (const auto& [k, v] : j.at("per_class").items()) {
    Metrics::PerClass pc;
    pc.frame_ap = opt(v.at("frame_ap"));
    for (const auto& [label, ap] : v.at("video_ap").items()) pc.video_ap[label] = ap.get<double>();
    pc.temporal_ap = opt(v.at("temporal_ap"));
    m.per_class[std::stoi(k)] = std::move(pc);
  }
  return m;
}

std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& where) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string loc = where + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(loc, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(loc, "empty key");
    if (!out.emplace(key, value).second) fail(loc, "duplicate key '" + key + "'");
  }
  return out;
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  return parse_key_values(read_text(path), path.string());
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char d[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size(), d);
  std::ostringstream os;
  for (unsigned char c : d) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(c);
  return os.str();
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path.string() + ": cannot open");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot write");
  out << text;
}

}  // namespace tacnet::io
