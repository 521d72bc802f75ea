#pragma once

// Shared fixtures for the unit tests: random plans, the reference six-room
// plan and small model configurations.

#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "codec.hpp"
#include "geometry.hpp"
#include "model.hpp"

namespace testing {

using namespace roomseq;

inline Room make_room(RoomType t, int ordinal, int cx, int cy, int w, int h) {
  Room r;
  r.type = t;
  r.ordinal = ordinal;
  r.cx = cx;
  r.cy = cy;
  r.w = w;
  r.h = h;
  return r;
}

// The six rooms of the published example output, in printed order.
inline FloorPlan figure3_plan() {
  FloorPlan p;
  p.rooms = {
      make_room(RoomType::LivingRoom, 1, 128, 128, 157, 121),
      make_room(RoomType::Bathroom, 1, 91, 151, 39, 46),
      make_room(RoomType::Kitchen, 1, 91, 110, 27, 46),
      make_room(RoomType::MasterRoom, 1, 163, 183, 48, 51),
      make_room(RoomType::CommonRoom, 1, 163, 123, 47, 51),
      make_room(RoomType::CommonRoom, 2, 91, 181, 39, 46),
  };
  return p;
}

// Any valid encodable room: w, h in [1, 255].
inline Room random_room(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> type(0, kNumRoomTypes - 1), ord(1, kMaxOrdinal),
      c(0, kGridSize - 1), e(1, kGridSize - 1);
  return make_room(static_cast<RoomType>(type(rng)), ord(rng), c(rng), c(rng), e(rng), e(rng));
}

inline Outline random_outline(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> lo(0, 120), span(8, 130);
  Outline o;
  o.x0 = lo(rng);
  o.y0 = lo(rng);
  o.x1 = std::min(kGridSize - 1, o.x0 + span(rng));
  o.y1 = std::min(kGridSize - 1, o.y0 + span(rng));
  return o;
}

inline FloorPlan random_plan(std::mt19937_64& rng, int max_rooms = kMaxRooms) {
  FloorPlan p;
  p.outline = random_outline(rng);
  const int n = std::uniform_int_distribution<int>(0, max_rooms)(rng);
  for (int i = 0; i < n; ++i) p.rooms.push_back(random_room(rng));
  return p;
}

inline ModelConfig tiny_config(int vocab_size = 20, int max_seq_len = 16) {
  ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 16;
  c.vocab_size = vocab_size;
  c.max_seq_len = max_seq_len;
  c.seed = 3;
  return c;
}

// Small but full-vocabulary configuration able to hold complete plans.
inline ModelConfig small_config(int vocab_size) {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_ff = 32;
  c.vocab_size = vocab_size;
  c.max_seq_len = 160;
  c.seed = 11;
  return c;
}

// Weights drawn wider than the default initialization so that logits differ
// visibly between tokens.
inline Parameters noisy_params(const ModelConfig& c, double sigma, std::uint64_t seed) {
  Parameters p = init_params(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sigma);
  for (double& v : p.values()) v += n(rng);
  return p;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string golden_path(const std::string& name) {
  return std::string(ROOMSEQ_GOLDEN_DIR) + "/" + name;
}

}  // namespace testing
