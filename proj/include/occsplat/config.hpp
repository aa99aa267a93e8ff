#pragma once

#include "occsplat/synth.hpp"
#include "occsplat/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace occsplat {

using Json = nlohmann::ordered_json;

/// Everything a CLI run reads from its config file.
struct RunConfig {
    std::uint64_t seed = 1;
    bool deterministic = true;
    SceneSpec scene;
    TrainConfig train;
    /// Metrics rows are written every `log_interval` iterations (and at the last).
    int log_interval = 100;
    /// Intermediate checkpoints every this many iterations; 0 keeps only the final one.
    int checkpoint_interval = 0;
    std::string ablate_modes = "ABCD";
    std::vector<std::uint64_t> ablate_seeds{1, 2, 3, 4, 5};

    void validate() const;
};

/// The fully populated default document; its key set is the schema.
Json default_config_json();

/// Merges `user` into `base`, rejecting keys absent from `base` and values
/// whose JSON type differs. `path` prefixes error messages.
void merge_strict(Json& base, const Json& user, const std::string& path = "");

/// Applies one "dotted.key=value" override. The value is parsed as JSON when
/// possible and taken as a string otherwise.
void apply_override(Json& doc, const std::string& assignment);

/// Defaults ← occlusion preset (if the user document names one) ← user
/// document ← overrides. Throws InvalidInput on any schema violation.
Json resolve_config(const Json& user, const std::vector<std::string>& overrides);

RunConfig config_from_json(const Json& doc);
Json config_to_json(const RunConfig& cfg);

/// SHA-256 of the canonical dump.
std::string config_hash(const Json& doc);

Json scene_spec_to_json(const SceneSpec& s);
SceneSpec scene_spec_from_json(const Json& j);

} // namespace occsplat
