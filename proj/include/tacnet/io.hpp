#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tacnet/detector.hpp"
#include "tacnet/evalkit.hpp"
#include "tacnet/tubes.hpp"

namespace tacnet::io {

/// Malformed input file; the message carries "path:line: ".
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raw frame tensors: "TNSR", u32 rank (3), u64 dims [frames, S, S], float32 LE data.
void write_raw_tensor(const std::filesystem::path& path, const std::vector<std::vector<float>>& frames,
                      std::size_t frame_size);
std::vector<std::vector<float>> read_raw_tensor(const std::filesystem::path& path, std::size_t frame_size);

struct DetectionRecord {
  std::string video;
  detector::FrameDetection det;
  friend bool operator==(const DetectionRecord& a, const DetectionRecord& b);
};

/// {"video","frame","class","box","p","t"}
std::string detection_to_jsonl_line(const DetectionRecord& r);
/// {"video","class","score","segment","frames":[{"frame","box","p","t"}]}
std::string tube_to_jsonl_line(const tubes::ScoredTube& t);
/// {"video","class","frames":[{"frame","box"}]}
std::string gt_to_jsonl_line(const evalkit::GroundTruthTube& g);

/// Strict parsers: exact field sets, typed values. `where` prefixes diagnostics.
DetectionRecord parse_detection_line(const std::string& line, const std::string& where);
tubes::ScoredTube parse_tube_line(const std::string& line, const std::string& where);
evalkit::GroundTruthTube parse_gt_line(const std::string& line, const std::string& where);

std::vector<DetectionRecord> read_detections(const std::filesystem::path& path);
std::vector<tubes::ScoredTube> read_tubes(const std::filesystem::path& path);
std::vector<evalkit::GroundTruthTube> read_gt(const std::filesystem::path& path);

void write_detections(const std::filesystem::path& path, const std::vector<DetectionRecord>& records);
void write_tubes(const std::filesystem::path& path, const std::vector<tubes::ScoredTube>& tubes);
void write_gt(const std::filesystem::path& path, const std::vector<evalkit::GroundTruthTube>& gts);

struct Metrics {
  std::optional<double> frame_map;
  std::map<std::string, double> video_map;  // threshold label -> mAP
  std::optional<double> temporal_map;
  double temporal_threshold = 0.5;
  struct PerClass {
    std::optional<double> frame_ap;
    std::map<std::string, double> video_ap;
    std::optional<double> temporal_ap;
  };
  std::map<int, PerClass> per_class;
};

/// Pretty-printed JSON with a fixed key order and a trailing newline.
std::string metrics_to_json(const Metrics& m);
Metrics metrics_from_json(const std::string& text);

/// Flat "key = value" lines; '#' starts a comment; blank lines ignored.
/// Duplicate keys and lines without '=' are errors.
std::map<std::string, std::string> parse_key_values(const std::string& text, const std::string& where);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

/// Hex SHA-256 of arbitrary bytes.
std::string sha256_hex(const std::string& bytes);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace tacnet::io
