#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ursct/trainer.hpp"

namespace ursct {

using ConfigMap = std::map<std::string, std::string>;

// Flat "key = value" text; blank lines and #-comments ignored.
ConfigMap parse_config_text(const std::string& text, const std::string& origin);
ConfigMap parse_config_file(const std::string& path);

// Applies --set style "key=value" entries on top of the map (overrides win).
void apply_overrides(ConfigMap& map, const std::vector<std::string>& sets);

// Fills the seed key from the URSCT_SEED environment variable when the map
// does not already provide one.
void apply_seed_env(ConfigMap& map);

// Builds the full run configuration; unknown keys and malformed values are
// ConfigErrors. Dataset paths live under data.*.
TrainConfig make_train_config(const ConfigMap& map);

// Subsets usable on a checkpoint's config snapshot.
ModelConfig make_model_config(const ConfigMap& map);
LossConfig make_loss_config(const ConfigMap& map);

// Every run setting except the data paths, as sorted text keys — the
// checkpoint snapshot, stable across output directories.
ConfigMap snapshot_config(const TrainConfig& cfg);

// Every effective setting including paths, for the pre-run echo.
ConfigMap effective_config(const TrainConfig& cfg);

std::string render_config(const ConfigMap& map);  // "key = value" lines

}  // namespace ursct
