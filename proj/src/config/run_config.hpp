// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <string>

#include "databank/bank.hpp"
#include "trainer/trainer.hpp"

namespace scale {

/// Resolved configuration for one CLI run. Every field is optional in the
/// input document; absent fields take the defaults of SynthSpec,
/// TrainConfig and ScaleHyper. Unknown keys are rejected.
///
///   {"synth": {...}, "train": {...}, "hyper": {...},
///    "paths": {"data": "...", "out": "...", "checkpoint": "..."}}
struct RunConfig {
  SynthSpec synth;
  TrainConfig train;
  std::string data_dir;
  std::string out_dir;
  std::string checkpoint;
};

nlohmann::ordered_json to_json(const SynthSpec& s);
nlohmann::ordered_json to_json(const ScaleHyper& h);
nlohmann::ordered_json to_json(const TrainConfig& t);  // includes "hyper"
nlohmann::ordered_json to_json(const RunConfig& r);

/// Overlays `doc` on top of `base`; throws ValidationError on unknown keys
/// or wrongly typed values.
RunConfig merge_run_config(const nlohmann::ordered_json& doc, RunConfig base = {});
TrainConfig train_config_from_json(const nlohmann::ordered_json& doc);

/// Parses text, merges over defaults, validates every section.
RunConfig parse_run_config(const std::string& text);

}  // namespace scale
