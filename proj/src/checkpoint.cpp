#include "tacnet/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "json.hpp"
#include "tacnet/io.hpp"

namespace tacnet::checkpoint {
namespace {

using json = nlohmann::ordered_json;

constexpr char kMagic[8] = {'T', 'A', 'C', 'N', 'E', 'T', 'C', 'K'};

template <typename T>
void put(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw io::FormatError("checkpoint: truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof v);
  pos += sizeof v;
  return v;
}

json config_to_json(const detector::DetectorConfig& c) {
  json j;
  j["input_size"] = c.input_size;
  j["input_channels"] = c.input_channels;
  j["strides"] = c.strides;
  j["aspect_ratios"] = c.aspect_ratios;
  j["anchor_sizes"] = c.anchor_sizes;
  j["num_classes"] = c.num_classes;
  j["feature_channels"] = c.feature_channels;
  j["hidden_channels"] = c.hidden_channels;
  j["clip_length"] = c.clip_length;
  j["dropout_p"] = c.dropout_p;
  j["relu_sites"] = to_string(c.relu_sites);
  j["temporal_context"] = c.temporal_context;
  return j;
}

detector::DetectorConfig config_from(const json& j) {
  detector::DetectorConfig c;
  c.input_size = j.at("input_size");
  c.input_channels = j.at("input_channels");
  c.strides = j.at("strides").get<std::vector<std::size_t>>();
  c.aspect_ratios = j.at("aspect_ratios").get<std::vector<double>>();
  c.anchor_sizes = j.at("anchor_sizes").get<std::vector<double>>();
  c.num_classes = j.at("num_classes");
  c.feature_channels = j.at("feature_channels").get<std::vector<std::size_t>>();
  c.hidden_channels = j.at("hidden_channels");
  c.clip_length = j.at("clip_length");
  c.dropout_p = j.at("dropout_p");
  c.relu_sites = relu_sites_from_string(j.at("relu_sites"));
  c.temporal_context = j.at("temporal_context");
  return c;
}

}  // namespace

std::string to_string(ReluSites sites) {
  switch (sites) {
    case ReluSites::kBoth: return "both";
    case ReluSites::kCandidateOnly: return "candidate";
    case ReluSites::kCellOutputOnly: return "cell-output";
  }
  return "both";
}

ReluSites relu_sites_from_string(const std::string& s) {
  if (s == "both") return ReluSites::kBoth;
  if (s == "candidate") return ReluSites::kCandidateOnly;
  if (s == "cell-output") return ReluSites::kCellOutputOnly;
  throw std::invalid_argument("unknown relu sites '" + s + "' (expected both, candidate or cell-output)");
}

std::string detector_config_json(const detector::DetectorConfig& config) { return config_to_json(config).dump(); }

detector::DetectorConfig detector_config_from_json(const std::string& text) { return config_from(json::parse(text)); }

std::string config_digest(const detector::DetectorConfig& config) { return io::sha256_hex(detector_config_json(config)); }

std::string serialize(const detector::DetectorModel& model, losses::TrainMode mode) {
  json header;
  header["config"] = config_to_json(model.config);
  header["mode"] = losses::to_string(mode);
  header["config_digest"] = config_digest(model.config);
  json tensors = json::array();
  const auto named = model.named_parameters();
  for (const auto& [name, t] : named) tensors.push_back({{"name", name}, {"shape", t.shape()}});
  header["tensors"] = std::move(tensors);
  const std::string h = header.dump();

  std::string out(kMagic, sizeof kMagic);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  for (const auto& [name, t] : named) {
    const auto v = t.values();
    out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(double));
  }
  return out;
}

Checkpoint deserialize(const std::string& bytes) {
  if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw io::FormatError("checkpoint: bad magic");
  }
  std::size_t pos = sizeof kMagic;
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kVersion) throw io::FormatError("checkpoint: unsupported version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw io::FormatError("checkpoint: truncated header");
  const json header = json::parse(bytes.substr(pos, header_len));
  pos += header_len;

  Checkpoint ck;
  const auto config = config_from(header.at("config"));
  ck.mode = losses::train_mode_from_string(header.at("mode"));
  ck.config_digest = header.at("config_digest");
  if (ck.config_digest != config_digest(config)) throw io::FormatError("checkpoint: config digest mismatch");
  ck.model = detector::DetectorModel::create(config, 0);
  const auto named = ck.model.named_parameters();
  const auto& tensors = header.at("tensors");
  if (tensors.size() != named.size()) throw io::FormatError("checkpoint: tensor count mismatch");
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& [name, t] = named[i];
    if (tensors[i].at("name") != name || tensors[i].at("shape").get<Shape>() != t.shape()) {
      throw io::FormatError("checkpoint: tensor " + name + " does not match the architecture");
    }
    auto v = Tensor(t).values();
    const std::size_t n = v.size() * sizeof(double);
    if (pos + n > bytes.size()) throw io::FormatError("checkpoint: truncated tensor " + name);
    std::memcpy(v.data(), bytes.data() + pos, n);
    pos += n;
  }
  if (pos != bytes.size()) throw io::FormatError("checkpoint: trailing bytes");
  return ck;
}

void save(const std::filesystem::path& path, const detector::DetectorModel& model, losses::TrainMode mode) {
  io::write_text(path, serialize(model, mode));
}

Checkpoint load(const std::filesystem::path& path) { return deserialize(io::read_text(path)); }

}  // namespace tacnet::checkpoint
