#include "synth.hpp"

#include <algorithm>
#include <cmath>
#include <optional>
#include <tuple>
#include <fstream>
#include <numeric>
#include <sstream>

#include "error.hpp"
#include "grammar.hpp"
#include "plan_json.hpp"

namespace roomseq {

namespace {

struct Leaf {
  int x_lo, y_lo, x_hi, y_hi;
  int width() const { return x_hi - x_lo; }
  int height() const { return y_hi - y_lo; }
};

bool share_edge(const Leaf& a, const Leaf& b) {
  const bool vertical = a.x_hi == b.x_lo || b.x_hi == a.x_lo;
  const bool horizontal = a.y_hi == b.y_lo || b.y_hi == a.y_lo;
  const int oy = std::min(a.y_hi, b.y_hi) - std::max(a.y_lo, b.y_lo);
  const int ox = std::min(a.x_hi, b.x_hi) - std::max(a.x_lo, b.x_lo);
  return (vertical && oy > 0) || (horizontal && ox > 0);
}

int uniform_int(std::mt19937_64& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Splits `leaf` into `n` leaves, cutting across `axis` (0 = vertical cut) and
// alternating below. Returns false when a leaf would get too small.
bool partition(const Leaf& leaf, int n, int axis, std::mt19937_64& rng, std::vector<Leaf>& out) {
  if (leaf.width() < kMinLeafSide || leaf.height() < kMinLeafSide) return false;
  if (n == 1) {
    out.push_back(leaf);
    return true;
  }
  const int lo = axis == 0 ? leaf.x_lo : leaf.y_lo;
  const int span = axis == 0 ? leaf.width() : leaf.height();
  const int cut_lo = lo + static_cast<int>(std::ceil(0.2 * span));
  const int cut_hi = lo + static_cast<int>(std::floor(0.8 * span));
  if (cut_lo > cut_hi) return false;
  const int cut = uniform_int(rng, cut_lo, cut_hi);
  int n_first = n / 2;
  if (n % 2 == 1 && uniform_int(rng, 0, 1) == 1) n_first = n - n_first;
  Leaf a = leaf, b = leaf;
  if (axis == 0) {
    a.x_hi = cut;
    b.x_lo = cut;
  } else {
    a.y_hi = cut;
    b.y_lo = cut;
  }
  return partition(a, n_first, 1 - axis, rng, out) && partition(b, n - n_first, 1 - axis, rng, out);
}

// One extent inside [lo, hi] shrunk by `margin`: returns (center, size).
// Odd sizes put the room edge half a unit inside the margin, so they are only
// used when the margin leaves room for that.
std::pair<int, int> fit_extent(int lo, int hi, int margin) {
  int size = hi - lo - 2 * margin;
  if (size % 2 == 1 && margin == 0) --size;
  const int center = lo + margin + size / 2;
  return {center, size};
}

Room leaf_room(const Leaf& leaf, int margin) {
  Room r;
  std::tie(r.cx, r.w) = fit_extent(leaf.x_lo, leaf.x_hi, margin);
  std::tie(r.cy, r.h) = fit_extent(leaf.y_lo, leaf.y_hi, margin);
  return r;
}

int area(const Room& r) { return r.w * r.h; }

std::optional<FloorPlan> attempt(const ApartmentTemplate& tmpl, const Outline& outline,
                                 std::mt19937_64& rng) {
  const int n = tmpl.room_count();
  const Leaf root{outline.x0, outline.y0, outline.x1, outline.y1};
  const int first_axis = root.width() >= root.height() ? 0 : 1;
  std::vector<Leaf> leaves;
  if (!partition(root, n, first_axis, rng, leaves)) return std::nullopt;

  std::vector<Room> rooms;
  for (const auto& leaf : leaves) {
    Room r = leaf_room(leaf, uniform_int(rng, 0, 2));
    if (r.w < 1 || r.h < 1 || area(r) < 64) return std::nullopt;
    rooms.push_back(r);
  }

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return area(rooms[a]) > area(rooms[b]); });

  std::vector<int> assigned(n, -1);  // leaf -> room type id
  std::vector<int> ordinal(n, 0);
  std::array<int, kNumRoomTypes> used{};
  const auto give = [&](int leaf, RoomType t) {
    assigned[leaf] = room_type_id(t);
    ordinal[leaf] = ++used[room_type_id(t)];
  };
  const auto largest_free = [&]() {
    for (int i : order)
      if (assigned[i] < 0) return i;
    return -1;
  };

  give(largest_free(), RoomType::LivingRoom);
  for (RoomType t : {RoomType::MasterRoom, RoomType::CommonRoom, RoomType::Bedroom})
    for (int c = 0; c < tmpl.counts[room_type_id(t)]; ++c) give(largest_free(), t);

  // Bathrooms next to sleeping rooms, preferring sleeping rooms without one.
  std::vector<char> served(n, 0);
  for (int c = 0; c < tmpl.counts[room_type_id(RoomType::Bathroom)]; ++c) {
    int pick = -1;
    int pick_rank = 3;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      const int i = *it;
      if (assigned[i] >= 0) continue;
      int rank = 2;
      for (int s = 0; s < n; ++s) {
        if (assigned[s] < 0 || !is_sleeping_room(room_type_from_id(assigned[s]))) continue;
        if (!share_edge(leaves[i], leaves[s])) continue;
        rank = std::min(rank, served[s] ? 1 : 0);
      }
      if (rank < pick_rank) {
        pick = i;
        pick_rank = rank;
      }
    }
    give(pick, RoomType::Bathroom);
    for (int s = 0; s < n; ++s) {
      if (assigned[s] < 0 || !is_sleeping_room(room_type_from_id(assigned[s]))) continue;
      if (!served[s] && share_edge(leaves[pick], leaves[s])) {
        served[s] = 1;
        break;
      }
    }
  }
  for (RoomType t : {RoomType::Kitchen, RoomType::Balcony})
    for (int c = 0; c < tmpl.counts[room_type_id(t)]; ++c) give(largest_free(), t);

  FloorPlan plan{outline, {}};
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int a, int b) {
    return assigned[a] != assigned[b] ? assigned[a] < assigned[b] : ordinal[a] < ordinal[b];
  });
  for (int i : idx) {
    Room r = rooms[i];
    r.type = room_type_from_id(assigned[i]);
    r.ordinal = ordinal[i];
    plan.rooms.push_back(r);
  }
  return plan;
}

ApartmentTemplate make_template(std::string name, std::initializer_list<std::pair<RoomType, int>> counts) {
  ApartmentTemplate t;
  t.name = std::move(name);
  for (const auto& [type, c] : counts) t.counts[room_type_id(type)] = c;
  return t;
}

}  // namespace

int ApartmentTemplate::room_count() const { return std::accumulate(counts.begin(), counts.end(), 0); }

const std::vector<ApartmentTemplate>& standard_templates() {
  using T = RoomType;
  static const std::vector<ApartmentTemplate> templates = {
      make_template("1 bedroom, 1 living room, 1 bathroom, 1 balcony",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::Bathroom, 1}, {T::Balcony, 1}}),
      make_template("2 bedrooms, 1 living room, 1 bathroom, 1 kitchen, 1 balcony",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 1}, {T::Bathroom, 1},
                     {T::Kitchen, 1}, {T::Balcony, 1}}),
      make_template("2 bedrooms, 1 living room, 1 bathroom, 1 kitchen",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 1}, {T::Bathroom, 1},
                     {T::Kitchen, 1}}),
      make_template("2 bedrooms, 1 living room, 2 bathrooms, 1 kitchen",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 1}, {T::Bathroom, 2},
                     {T::Kitchen, 1}}),
      make_template("3 bedrooms, 1 living room, 1 bathroom, 1 kitchen, 1 balcony",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 2}, {T::Bathroom, 1},
                     {T::Kitchen, 1}, {T::Balcony, 1}}),
      make_template("3 bedrooms, 1 living room, 1 bathroom, 1 balcony",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 2}, {T::Bathroom, 1},
                     {T::Balcony, 1}}),
      make_template("3 bedrooms, 1 living room, 1 bathroom, 1 kitchen",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 2}, {T::Bathroom, 1},
                     {T::Kitchen, 1}}),
      make_template("3 bedrooms, 1 living room, 2 bathrooms, 1 kitchen, 1 balcony",
                    {{T::LivingRoom, 1}, {T::MasterRoom, 1}, {T::CommonRoom, 2}, {T::Bathroom, 2},
                     {T::Kitchen, 1}, {T::Balcony, 1}}),
      make_template("studio", {{T::LivingRoom, 1}, {T::Bedroom, 1}, {T::Bathroom, 1}}),
  };
  return templates;
}

const ApartmentTemplate& find_template(const std::string& name) {
  for (const auto& t : standard_templates())
    if (t.name == name) return t;
  fail(ErrorCode::InvalidArgument, "unknown apartment template: " + name);
}

FloorPlan synthesize_plan(const ApartmentTemplate& tmpl, const Outline& outline, std::mt19937_64& rng) {
  validate_outline(outline);
  const int n = tmpl.room_count();
  if (n < 1 || n > kMaxRooms) fail(ErrorCode::InvalidArgument, "template room count out of range");
  if (tmpl.counts[room_type_id(RoomType::LivingRoom)] < 1)
    fail(ErrorCode::InvalidArgument, "template needs a living room");
  const long outline_area = static_cast<long>(outline.x1 - outline.x0) * (outline.y1 - outline.y0);
  if (outline_area < 64L * n)
    fail(ErrorCode::InfeasiblePartition, "outline too small for " + std::to_string(n) + " rooms");
  for (int a = 0; a < kPartitionAttempts; ++a) {
    if (auto plan = attempt(tmpl, outline, rng)) return *plan;
  }
  fail(ErrorCode::InfeasiblePartition,
       "no valid partition after " + std::to_string(kPartitionAttempts) + " attempts");
}

std::string plan_to_prompt(const FloorPlan& plan, std::mt19937_64& rng) {
  std::string out = grammar::outline_sentence(plan.outline) + ".";
  for (const auto& r : plan.rooms) {
    const std::string size = grammar::size_clause(r);
    const std::string pos = grammar::position_clause(r, plan.outline);
    const bool size_first = uniform_int(rng, 0, 1) == 0;
    out += " " + grammar::room_display_name(r, plan) + " " + (size_first ? size : pos) + " " +
           (size_first ? pos : size) + ".";
  }
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  auto mix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return mix(mix(seed) ^ index);
}

bool is_val_index(std::size_t index) { return mix_seed(0x5eed, index) % 10 == 0; }

std::vector<Example> make_dataset(int n, const std::vector<ApartmentTemplate>& templates,
                                  std::uint64_t seed) {
  if (n < 1) fail(ErrorCode::InvalidArgument, "dataset size must be >= 1");
  if (templates.empty()) fail(ErrorCode::InvalidArgument, "no templates");
  constexpr int kDims = (grammar::kOutlineDimMax - grammar::kOutlineDimMin) / grammar::kOutlineDimStep;
  std::vector<Example> out;
  out.reserve(n);
  for (int i = 0; i < n; ++i) {
    const auto& tmpl = templates[i % templates.size()];
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    // A failed partition resamples the outline with the same stream.
    for (int tries = 0;; ++tries) {
      const int w = grammar::kOutlineDimMin + grammar::kOutlineDimStep * uniform_int(rng, 0, kDims);
      const int h = grammar::kOutlineDimMin + grammar::kOutlineDimStep * uniform_int(rng, 0, kDims);
      try {
        FloorPlan plan = synthesize_plan(tmpl, grammar::centered_outline(w, h), rng);
        std::string prompt = plan_to_prompt(plan, rng);
        out.push_back({std::move(prompt), std::move(plan)});
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::InfeasiblePartition || tries >= 16) throw;
      }
    }
  }
  return out;
}

std::string example_to_jsonl(const Example& ex) {
  ordered_json j;
  j["prompt"] = ex.prompt;
  j["plan"] = plan_to_json(ex.plan);
  return j.dump();
}

void write_dataset(const std::string& path, const std::vector<Example>& examples) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open for writing: " + path);
  for (const auto& ex : examples) f << example_to_jsonl(ex) << '\n';
  if (!f) fail(ErrorCode::Io, "write failed: " + path);
}

std::vector<Example> read_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::Io, "cannot open dataset: " + path);
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("prompt") || !j["prompt"].is_string() || !j.contains("plan"))
        fail(ErrorCode::Parse, "expected {\"prompt\": string, \"plan\": object}");
      out.push_back({j["prompt"].get<std::string>(), plan_from_json(j["plan"])});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Parse, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(ErrorCode::Parse, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace roomseq
