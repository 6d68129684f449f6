#pragma once

#include <filesystem>
#include <string>

#include "tacnet/detector.hpp"
#include "tacnet/losses.hpp"

namespace tacnet::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

struct Checkpoint {
  detector::DetectorModel model;
  losses::TrainMode mode = losses::TrainMode::kTac;
  /// SHA-256 of the serialized detector config.
  std::string config_digest;
};

std::string detector_config_json(const detector::DetectorConfig& config);
detector::DetectorConfig detector_config_from_json(const std::string& text);
std::string config_digest(const detector::DetectorConfig& config);

std::string to_string(ReluSites sites);
ReluSites relu_sites_from_string(const std::string& s);

/// Layout: "TACNETCK", u32 version, u64 header length, JSON header (config,
/// mode, digest, tensor names and shapes), then every tensor as LE doubles.
std::string serialize(const detector::DetectorModel& model, losses::TrainMode mode);
Checkpoint deserialize(const std::string& bytes);

void save(const std::filesystem::path& path, const detector::DetectorModel& model, losses::TrainMode mode);
Checkpoint load(const std::filesystem::path& path);

}  // namespace tacnet::checkpoint
