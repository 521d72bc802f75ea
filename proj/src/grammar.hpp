#pragma once

// Prompt grammar shared by the corpus generator, the vocabulary and the fact
// extractor used in tests. Phrasing is a compact form of the apartment brief
// style: one outline sentence followed by one sentence per room carrying its
// area, aspect ratio and sector.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "geometry.hpp"

namespace roomseq::grammar {

inline constexpr int kGrammarVersion = 1;

// 1200 sqft corresponds to a 157 x 121 room.
inline constexpr double kSqftPerUnit2 = 1200.0 / (157.0 * 121.0);
inline constexpr int kAreaQuantum = 50;
inline constexpr int kMaxAreaWord = 4150;
inline constexpr int kMaxAspectTerm = 20;

inline constexpr int kOutlineDimMin = 128;
inline constexpr int kOutlineDimMax = 224;
inline constexpr int kOutlineDimStep = 16;

// Rounded to the nearest 50 sqft, never below 50.
int quantize_area_sqft(double area_units2);

struct Aspect {
  int num = 1;  // width term
  int den = 1;  // height term
  friend bool operator==(const Aspect&, const Aspect&) = default;
};

// Closest p/q to w/h with 1 <= p, q <= 20; ties go to the smaller terms.
Aspect reduce_aspect(int w, int h);

// 3x3 sector of a room center inside the outline; row 2 is north (larger y),
// column 2 is east (larger x).
struct Sector {
  int row = 1;
  int col = 1;
  friend bool operator==(const Sector&, const Sector&) = default;
};

Sector sector_of(int cx, int cy, const Outline& outline);

// "north east corner", "north side", "center", ...
std::string sector_phrase(Sector sector);

// Name used in prompts and textual output: "common room 2" when the plan has
// several rooms of that type, otherwise the bare type name.
std::string room_display_name(const Room& room, const FloorPlan& plan);
std::string room_display_name(const Room& room, bool numbered);

std::string outline_sentence(const Outline& outline);
std::string size_clause(const Room& room);      // "1200 sqft aspect 13 over 10"
std::string position_clause(const Room& room, const Outline& outline);  // "at north east corner"

// Centered outline of the given dimensions.
Outline centered_outline(int width, int height);

// Outline named by the first "apartment W by H" phrase of a prompt.
std::optional<Outline> outline_from_prompt(std::string_view prompt);

// Closed word list of the grammar (plus example-brief filler words), in
// vocabulary order.
const std::vector<std::string>& vocabulary_words();

}  // namespace roomseq::grammar
