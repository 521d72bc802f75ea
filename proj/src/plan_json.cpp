#include "plan_json.hpp"

#include "error.hpp"

namespace roomseq {

namespace {

int int_field(const nlohmann::json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) fail(ErrorCode::Parse, std::string("missing field: ") + key);
  const auto& v = j.at(key);
  if (!v.is_number_integer()) fail(ErrorCode::Parse, std::string("field must be an integer: ") + key);
  return v.get<int>();
}

}  // namespace

ordered_json outline_to_json(const Outline& o) {
  ordered_json j;
  j["x0"] = o.x0;
  j["y0"] = o.y0;
  j["x1"] = o.x1;
  j["y1"] = o.y1;
  return j;
}

ordered_json room_to_json(const Room& r) {
  ordered_json j;
  j["type"] = std::string(room_type_name(r.type));
  j["ordinal"] = r.ordinal;
  j["cx"] = r.cx;
  j["cy"] = r.cy;
  j["w"] = r.w;
  j["h"] = r.h;
  return j;
}

ordered_json plan_to_json(const FloorPlan& plan) {
  ordered_json j;
  j["outline"] = outline_to_json(plan.outline);
  j["rooms"] = ordered_json::array();
  for (const auto& r : plan.rooms) j["rooms"].push_back(room_to_json(r));
  return j;
}

Outline outline_from_json(const nlohmann::json& j) {
  Outline o{int_field(j, "x0"), int_field(j, "y0"), int_field(j, "x1"), int_field(j, "y1")};
  if (auto why = check_outline(o)) fail(ErrorCode::Parse, "invalid outline: " + *why);
  return o;
}

Room room_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("type") || !j.at("type").is_string())
    fail(ErrorCode::Parse, "room needs a string field: type");
  auto type = room_type_from_name(j.at("type").get<std::string>());
  if (!type) fail(ErrorCode::Parse, "unknown room type: " + j.at("type").get<std::string>());
  Room r;
  r.type = *type;
  r.ordinal = j.contains("ordinal") ? int_field(j, "ordinal") : 1;
  r.cx = int_field(j, "cx");
  r.cy = int_field(j, "cy");
  r.w = int_field(j, "w");
  r.h = int_field(j, "h");
  if (auto why = check_room(r)) fail(ErrorCode::Parse, "invalid room: " + *why);
  return r;
}

FloorPlan plan_from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail(ErrorCode::Parse, "plan must be a JSON object");
  FloorPlan plan;
  if (j.contains("outline")) plan.outline = outline_from_json(j.at("outline"));
  if (!j.contains("rooms") || !j.at("rooms").is_array()) fail(ErrorCode::Parse, "missing field: rooms");
  for (const auto& r : j.at("rooms")) plan.rooms.push_back(room_from_json(r));
  if (auto why = check_plan(plan)) fail(ErrorCode::Parse, "invalid plan: " + *why);
  return plan;
}

std::string plan_to_json_string(const FloorPlan& plan) { return plan_to_json(plan).dump(); }

FloorPlan plan_from_json_string(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::Parse, "plan is not valid JSON");
  return plan_from_json(j);
}

}  // namespace roomseq
