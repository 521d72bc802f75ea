#include "geometry.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "error.hpp"

namespace roomseq {

namespace {

constexpr std::array<std::string_view, kNumRoomTypes> kRoomTypeNames = {
    "living room", "master room", "common room", "bedroom",
    "bathroom",    "kitchen",     "balcony"};

double interval_overlap(double a_lo, double a_hi, double b_lo, double b_hi) {
  return std::max(0.0, std::min(a_hi, b_hi) - std::max(a_lo, b_lo));
}

double interval_separation(double a_lo, double a_hi, double b_lo, double b_hi) {
  return std::max({0.0, b_lo - a_hi, a_lo - b_hi});
}

}  // namespace

std::string_view room_type_name(RoomType type) {
  return kRoomTypeNames[static_cast<std::size_t>(type)];
}

std::optional<RoomType> room_type_from_name(std::string_view name) {
  for (int i = 0; i < kNumRoomTypes; ++i) {
    if (kRoomTypeNames[i] == name) return static_cast<RoomType>(i);
  }
  return std::nullopt;
}

RoomType room_type_from_id(int id) {
  if (id < 0 || id >= kNumRoomTypes) {
    fail(ErrorCode::InvalidArgument, "room type id out of range: " + std::to_string(id));
  }
  return static_cast<RoomType>(id);
}

bool is_sleeping_room(RoomType type) {
  return type == RoomType::MasterRoom || type == RoomType::CommonRoom ||
         type == RoomType::Bedroom;
}

std::optional<std::string> check_room(const Room& room) {
  if (static_cast<int>(room.type) >= kNumRoomTypes)
    return "unknown room type";
  if (room.ordinal < 1 || room.ordinal > kMaxOrdinal)
    return "ordinal must be in [1, " + std::to_string(kMaxOrdinal) + "]";
  if (room.cx < 0 || room.cx > kGridSize - 1) return "cx out of range";
  if (room.cy < 0 || room.cy > kGridSize - 1) return "cy out of range";
  if (room.w < 1 || room.w > kGridSize) return "w out of range";
  if (room.h < 1 || room.h > kGridSize) return "h out of range";
  return std::nullopt;
}

std::optional<std::string> check_outline(const Outline& o) {
  if (o.x0 < 0 || o.y0 < 0 || o.x1 > kGridSize - 1 || o.y1 > kGridSize - 1)
    return "outline exceeds the grid";
  if (o.x0 >= o.x1 || o.y0 >= o.y1) return "outline must satisfy x0 < x1 and y0 < y1";
  return std::nullopt;
}

std::optional<std::string> check_plan(const FloorPlan& plan) {
  if (auto why = check_outline(plan.outline)) return why;
  if (plan.rooms.size() > static_cast<std::size_t>(kMaxRooms))
    return "too many rooms (max " + std::to_string(kMaxRooms) + ")";
  for (std::size_t i = 0; i < plan.rooms.size(); ++i) {
    if (auto why = check_room(plan.rooms[i])) return "room " + std::to_string(i) + ": " + *why;
  }
  return std::nullopt;
}

void validate_room(const Room& room) {
  if (auto why = check_room(room)) fail(ErrorCode::InvalidArgument, *why);
}

void validate_outline(const Outline& outline) {
  if (auto why = check_outline(outline)) fail(ErrorCode::InvalidArgument, *why);
}

void validate_plan(const FloorPlan& plan) {
  if (auto why = check_plan(plan)) fail(ErrorCode::InvalidArgument, *why);
}

Rect room_bounds(const Room& room) {
  const double hw = room.w / 2.0;
  const double hh = room.h / 2.0;
  return {room.cx - hw, room.cy - hh, room.cx + hw, room.cy + hh};
}

Rect outline_rect(const Outline& o) {
  return {static_cast<double>(o.x0), static_cast<double>(o.y0),
          static_cast<double>(o.x1), static_cast<double>(o.y1)};
}

double intersection_area(const Rect& a, const Rect& b) {
  return interval_overlap(a.x_lo, a.x_hi, b.x_lo, b.x_hi) *
         interval_overlap(a.y_lo, a.y_hi, b.y_lo, b.y_hi);
}

double overlap_area(const Room& a, const Room& b) {
  return intersection_area(room_bounds(a), room_bounds(b));
}

double rect_gap(const Rect& a, const Rect& b) {
  return std::max(interval_separation(a.x_lo, a.x_hi, b.x_lo, b.x_hi),
                  interval_separation(a.y_lo, a.y_hi, b.y_lo, b.y_hi));
}

double gap(const Room& a, const Room& b) { return rect_gap(room_bounds(a), room_bounds(b)); }

double outside_area(const Rect& room, const Outline& outline) {
  return room.area() - intersection_area(room, outline_rect(outline));
}

double outside_area(const Room& room, const Outline& outline) {
  return outside_area(room_bounds(room), outline);
}

std::vector<std::pair<int, int>> adjacency_pairs(const FloorPlan& plan) {
  std::vector<std::tuple<double, int, int>> candidates;
  const auto& rooms = plan.rooms;
  for (int s = 0; s < static_cast<int>(rooms.size()); ++s) {
    if (!is_sleeping_room(rooms[s].type)) continue;
    for (int b = 0; b < static_cast<int>(rooms.size()); ++b) {
      if (rooms[b].type != RoomType::Bathroom) continue;
      candidates.emplace_back(gap(rooms[s], rooms[b]), s, b);
    }
  }
  std::sort(candidates.begin(), candidates.end());

  std::vector<bool> used(rooms.size(), false);
  std::vector<std::pair<int, int>> pairs;
  for (const auto& [g, s, b] : candidates) {
    if (used[s] || used[b]) continue;
    used[s] = used[b] = true;
    pairs.emplace_back(s, b);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

}  // namespace roomseq
