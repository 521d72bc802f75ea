#pragma once

// Procedural (prompt, plan) corpus. Plans come from recursive guillotine
// partitions of a centered outline; prompts describe every room's area,
// aspect ratio and sector in the grammar of grammar.hpp.

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "geometry.hpp"

namespace roomseq {

struct ApartmentTemplate {
  std::string name;
  std::array<int, kNumRoomTypes> counts{};  // indexed by room_type_id

  int room_count() const;
};

// The eight reference apartment types ("N bedrooms" become one master room
// plus N - 1 common rooms) followed by a studio with a plain bedroom.
const std::vector<ApartmentTemplate>& standard_templates();

// Looks a template up by name; throws InvalidArgument.
const ApartmentTemplate& find_template(const std::string& name);

// Smallest leaf side the partition accepts.
inline constexpr int kMinLeafSide = 8;
inline constexpr int kPartitionAttempts = 32;

// Rooms in canonical order: by room type (living room, sleeping rooms,
// service rooms), ordinals numbered by decreasing area within a type.
// Throws InfeasiblePartition after kPartitionAttempts failed attempts.
FloorPlan synthesize_plan(const ApartmentTemplate& tmpl, const Outline& outline,
                          std::mt19937_64& rng);

// Outline sentence followed by one sentence per room in plan order; the order
// of the size and position clauses is drawn per room.
std::string plan_to_prompt(const FloorPlan& plan, std::mt19937_64& rng);

struct Example {
  std::string prompt;
  FloorPlan plan;
};

// Sample i uses template i mod |templates| and an RNG seeded from (seed, i).
std::vector<Example> make_dataset(int n, const std::vector<ApartmentTemplate>& templates,
                                  std::uint64_t seed);

// One {"prompt", "plan"} object per line.
std::string example_to_jsonl(const Example& ex);
void write_dataset(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> read_dataset(const std::string& path);

// Deterministic 10% validation split by index hash.
bool is_val_index(std::size_t index);

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace roomseq
