#pragma once

#include <map>
#include <string>

#include "tacnet/detector.hpp"
#include "tacnet/synthdata.hpp"
#include "tacnet/train.hpp"
#include "tacnet/tubes.hpp"

namespace tacnet::config {

using KeyValues = std::map<std::string, std::string>;

// Each applier starts from the defaults, overrides the keys present and
// throws std::invalid_argument on unknown keys or unparsable values.
synth::SynthConfig synth_config(const KeyValues& kv);
tubes::LinkConfig link_config(const KeyValues& kv);
train::TrainConfig train_config(const KeyValues& kv);
detector::PostprocessConfig postprocess_config(const KeyValues& kv);

losses::MiningRule mining_rule_from_string(const std::string& s);
std::string to_string(losses::MiningRule rule);

}  // namespace tacnet::config
