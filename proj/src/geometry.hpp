#pragma once

// Vector floor plan domain model: typed axis-aligned rooms on an integer grid,
// an outline rectangle, and the geometric predicates that losses and decode
// masks are built on.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace roomseq {

inline constexpr int kGridSize = 256;
inline constexpr int kMaxRooms = 16;
inline constexpr int kMaxOrdinal = 4;

enum class RoomType : std::uint8_t {
  LivingRoom = 0,
  MasterRoom,
  CommonRoom,
  Bedroom,
  Bathroom,
  Kitchen,
  Balcony,
};

inline constexpr int kNumRoomTypes = 7;

inline constexpr std::array<RoomType, kNumRoomTypes> kAllRoomTypes = {
    RoomType::LivingRoom, RoomType::MasterRoom, RoomType::CommonRoom,
    RoomType::Bedroom,    RoomType::Bathroom,   RoomType::Kitchen,
    RoomType::Balcony};

std::string_view room_type_name(RoomType type);
std::optional<RoomType> room_type_from_name(std::string_view name);
inline int room_type_id(RoomType type) { return static_cast<int>(type); }
RoomType room_type_from_id(int id);

bool is_sleeping_room(RoomType type);

struct Room {
  RoomType type = RoomType::LivingRoom;
  int ordinal = 1;
  int cx = 0;
  int cy = 0;
  int w = 1;
  int h = 1;

  friend bool operator==(const Room&, const Room&) = default;
};

struct Outline {
  int x0 = 0;
  int y0 = 0;
  int x1 = kGridSize - 1;
  int y1 = kGridSize - 1;

  friend bool operator==(const Outline&, const Outline&) = default;
};

struct FloorPlan {
  Outline outline;
  std::vector<Room> rooms;

  friend bool operator==(const FloorPlan&, const FloorPlan&) = default;
};

// Continuous rectangle in grid units.
struct Rect {
  double x_lo = 0;
  double y_lo = 0;
  double x_hi = 0;
  double y_hi = 0;

  double width() const { return x_hi - x_lo; }
  double height() const { return y_hi - y_lo; }
  double area() const { return width() * height(); }

  friend bool operator==(const Rect&, const Rect&) = default;
};

// Invariant checks; they return a human-readable reason on failure.
std::optional<std::string> check_room(const Room& room);
std::optional<std::string> check_outline(const Outline& outline);
std::optional<std::string> check_plan(const FloorPlan& plan);

// Throws Error(InvalidArgument) with the reason.
void validate_room(const Room& room);
void validate_outline(const Outline& outline);
void validate_plan(const FloorPlan& plan);

Rect room_bounds(const Room& room);
Rect outline_rect(const Outline& outline);

double intersection_area(const Rect& a, const Rect& b);
double overlap_area(const Room& a, const Room& b);

// L-infinity separation of two rectangles; 0 when they intersect or touch.
double rect_gap(const Rect& a, const Rect& b);
double gap(const Room& a, const Room& b);

double outside_area(const Rect& room, const Outline& outline);
double outside_area(const Room& room, const Outline& outline);

// (sleeping room index, bathroom index) pairs that should be adjacent.
// Candidate pairs are taken greedily by increasing gap; every room appears in
// at most one pair. Ties fall back to index order. Sorted by sleeping index.
std::vector<std::pair<int, int>> adjacency_pairs(const FloorPlan& plan);

}  // namespace roomseq
