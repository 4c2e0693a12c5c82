#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "scorelab/oracle.hpp"

namespace scorelab {

inline constexpr std::string_view kWorldSchema = "scorelab.world/1";

/// Parses a world definition (JSON):
///
///   {
///     "schema": "scorelab.world/1",
///     "dim": 2,
///     "modes": [{"id": "front", "mean": [4, 0], "cov_scale": 0.25}, ...],
///     "prompts": {"back": {"front": 0.7, "back": 0.3}, ...},
///     "prior": {"back": 0.5, ...}
///   }
///
/// Prompt weights are keyed by mode id (omitted modes get 0) or given as an
/// array in mode order. "prior" is keyed by prompt label; a missing prior
/// means uniform over prompts. Errors name the offending field.
OracleWorld parse_world(std::string_view text);
OracleWorld load_world(const std::filesystem::path& path);

/// Canonical JSON text for a world (round-trips through parse_world).
std::string world_to_json(const OracleWorld& world);

}  // namespace scorelab
