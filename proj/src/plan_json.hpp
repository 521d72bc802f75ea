#pragma once

// Canonical FloorPlan JSON:
//   {"outline": {"x0","y0","x1","y1"}, "rooms": [{"type","ordinal","cx","cy","w","h"}, ...]}

#include <string>

#include <json.hpp>

#include "geometry.hpp"

namespace roomseq {

using ordered_json = nlohmann::ordered_json;

ordered_json outline_to_json(const Outline& outline);
ordered_json room_to_json(const Room& room);
ordered_json plan_to_json(const FloorPlan& plan);

// Parsers validate types and invariants; failures throw Error(Parse).
Outline outline_from_json(const nlohmann::json& j);
Room room_from_json(const nlohmann::json& j);
FloorPlan plan_from_json(const nlohmann::json& j);

std::string plan_to_json_string(const FloorPlan& plan);
FloorPlan plan_from_json_string(const std::string& text);

}  // namespace roomseq
