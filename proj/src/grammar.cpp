#include "grammar.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <numeric>
#include <set>

#include "codec.hpp"

namespace roomseq::grammar {

int quantize_area_sqft(double area_units2) {
  const double sqft = area_units2 * kSqftPerUnit2;
  const long q = std::lround(sqft / kAreaQuantum);
  return static_cast<int>(std::max(1L, q) * kAreaQuantum);
}

Aspect reduce_aspect(int w, int h) {
  Aspect best{1, 1};
  long best_err_num = -1;  // |p*h - q*w|, compared as a fraction over q
  int best_den = 1;
  for (int q = 1; q <= kMaxAspectTerm; ++q) {
    for (int p = 1; p <= kMaxAspectTerm; ++p) {
      if (std::gcd(p, q) != 1) continue;
      const long err = std::labs(static_cast<long>(p) * h - static_cast<long>(q) * w);
      bool better = false;
      if (best_err_num < 0) {
        better = true;
      } else {
        const long lhs = err * best_den;
        const long rhs = best_err_num * q;
        if (lhs < rhs) better = true;
        else if (lhs == rhs && p + q < best.num + best.den) better = true;
      }
      if (better) {
        best = {p, q};
        best_err_num = err;
        best_den = q;
      }
    }
  }
  return best;
}

Sector sector_of(int cx, int cy, const Outline& o) {
  auto bucket = [](int v, int lo, int hi) {
    const int span = hi - lo;
    const int c = std::clamp(v, lo, hi);
    return std::min(2, 3 * (c - lo) / span);
  };
  return {bucket(cy, o.y0, o.y1), bucket(cx, o.x0, o.x1)};
}

std::string sector_phrase(Sector s) {
  static const char* rows[] = {"south", "", "north"};
  static const char* cols[] = {"west", "", "east"};
  if (s.row == 1 && s.col == 1) return "center";
  if (s.row == 1) return std::string(cols[s.col]) + " side";
  if (s.col == 1) return std::string(rows[s.row]) + " side";
  return std::string(rows[s.row]) + " " + cols[s.col] + " corner";
}

std::string room_display_name(const Room& room, bool numbered) {
  std::string name(room_type_name(room.type));
  if (numbered) name += " " + std::to_string(room.ordinal);
  return name;
}

std::string room_display_name(const Room& room, const FloorPlan& plan) {
  const auto same = std::count_if(plan.rooms.begin(), plan.rooms.end(),
                                  [&](const Room& r) { return r.type == room.type; });
  return room_display_name(room, same > 1);
}

std::string outline_sentence(const Outline& o) {
  return "apartment " + std::to_string(o.x1 - o.x0) + " by " + std::to_string(o.y1 - o.y0);
}

std::string size_clause(const Room& room) {
  const int sqft = quantize_area_sqft(static_cast<double>(room.w) * room.h);
  const Aspect a = reduce_aspect(room.w, room.h);
  return std::to_string(sqft) + " sqft aspect " + std::to_string(a.num) + " over " +
         std::to_string(a.den);
}

std::string position_clause(const Room& room, const Outline& outline) {
  return "at " + sector_phrase(sector_of(room.cx, room.cy, outline));
}

Outline centered_outline(int width, int height) {
  const int x0 = kGridSize / 2 - width / 2;
  const int y0 = kGridSize / 2 - height / 2;
  return {x0, y0, x0 + width, y0 + height};
}

std::optional<Outline> outline_from_prompt(std::string_view prompt) {
  const auto words = split_words(prompt);
  const auto dim = [](const std::string& w) -> std::optional<int> {
    if (w.empty() || w.size() > 3 || !std::all_of(w.begin(), w.end(), ::isdigit)) return std::nullopt;
    const int v = std::stoi(w);
    if (v < 2 || v > kGridSize - 2) return std::nullopt;
    return v;
  };
  for (std::size_t i = 0; i + 3 < words.size(); ++i) {
    if (words[i] != "apartment" || words[i + 2] != "by") continue;
    const auto w = dim(words[i + 1]);
    const auto h = dim(words[i + 3]);
    if (w && h) return centered_outline(*w, *h);
  }
  return std::nullopt;
}

const std::vector<std::string>& vocabulary_words() {
  static const std::vector<std::string> words = [] {
    std::vector<std::string> out;
    std::set<std::string> seen;
    auto add = [&](const std::string& w) {
      if (seen.insert(w).second) out.push_back(w);
    };
    for (const char* w : {"apartment", "by", "sqft", "aspect", "ratio", "over", "at", "the",
                          "of", "north", "south", "east", "west", "corner", "side", "center",
                          "living", "room", "master", "common", "bedroom", "bathroom",
                          "kitchen", "balcony"})
      add(w);
    // Filler words of free-form briefs, so typical requests encode without UNK.
    for (const char* w : {"generate", "a", "floorplan", "based", "on", "following", "input",
                          "i", "would", "like", "to", "have", "around", "with", "can", "we",
                          "be", "should", "an", "en", "suite", "place", "you", "make",
                          "approx", "about", "used", "guest", "and", "is", "it", "in", "near"})
      add(w);
    for (int n = 1; n <= kMaxAspectTerm; ++n) add(std::to_string(n));
    for (int a = kAreaQuantum; a <= kMaxAreaWord; a += kAreaQuantum) add(std::to_string(a));
    for (int d = kOutlineDimMin; d <= kOutlineDimMax; d += kOutlineDimStep) add(std::to_string(d));
    return out;
  }();
  return words;
}

}  // namespace roomseq::grammar
