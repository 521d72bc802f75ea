#pragma once

// Inference-time next-room prediction: per-slot token masks (record grammar
// plus optional outline containment), greedy / Top-K / beam decoding, and the
// room-granular proposal API used by interactive sessions.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "codec.hpp"
#include "error.hpp"
#include "model.hpp"

namespace roomseq {

enum class Strategy { Greedy, TopK, Beam };

const char* strategy_name(Strategy s);
std::optional<Strategy> strategy_from_name(const std::string& name);

struct DecodeConfig {
  Strategy strategy = Strategy::Greedy;
  int k = 5;
  int beam_width = 4;
  double temperature = 1.0;
  int max_rooms = kMaxRooms;
  std::uint64_t seed = 0;
  bool hard_constraints = true;

  void validate() const;
};

struct RoomProposal {
  Room room;
  double logprob = 0;  // sum of the record's token log-probabilities
  int rank = 0;
};

// Values fixed so far inside the current record.
struct PartialRoom {
  std::optional<RoomType> type;
  std::optional<int> ordinal;
  std::optional<int> cx, cy, h;
};

// Allowed next tokens for a record slot. At the type slot EOS is always
// allowed and room types only when `allow_room` is set. Extents are at least 1.
// With hard_constraints the centre slots keep cx in [x0, x1] (likewise cy) and
// the extent slots keep h <= 2 * min(cy - y0, y1 - cy), w <= 2 * min(cx - x0,
// x1 - cx). A centre on the boundary therefore leaves no extent: AllMasked.
std::vector<char> slot_mask(RecordSlot slot, const PartialRoom& partial, const Outline& outline,
                            bool hard_constraints, bool allow_room, int vocab_size);

// softmax(logits / temperature) restricted to the mask and renormalized.
// Throws AllMasked when nothing survives.
Vector masked_distribution(const Eigen::Ref<const RowVector>& logits, const std::vector<char>& mask,
                           double temperature);

// Distribution for the next token after `prefix`, whose record position is
// `slot` with `partial` already fixed.
Vector masked_next_dist(const Parameters& params, const TokenSequence& prefix, RecordSlot slot,
                        const PartialRoom& partial, const Outline& outline,
                        double temperature = 1.0, bool hard_constraints = true,
                        bool allow_room = true);

// Uniform double in [0, 1) from the top 53 bits.
double uniform01(std::mt19937_64& rng);

// Top-K filtered categorical draw; ties in probability go to the lower id.
TokenId sample_topk(const Vector& dist, int k, std::mt19937_64& rng);

// Highest-probability token, lowest id on ties.
TokenId argmax_token(const Vector& dist);

struct NextRoomResult {
  std::vector<RoomProposal> proposals;
  bool finished = false;
};

// Proposals for the room that follows `accepted`. `reseed` perturbs the Top-K
// sub-seeds (used when a user rejects every proposal).
NextRoomResult next_room(const Parameters& params, const std::vector<TokenId>& prompt_tokens,
                         const std::vector<Room>& accepted, const Outline& outline,
                         const DecodeConfig& config, std::uint64_t reseed = 0);

struct BeamResult {
  TokenSequence tokens;  // full sequence including prompt and EOS
  double logprob = 0;
};

// Best complete sequence; the result for width B is the best over widths
// 1..B, so its log-probability never decreases with B.
BeamResult beam_search(const Parameters& params, const std::vector<TokenId>& prompt_tokens,
                       const Outline& outline, const DecodeConfig& config);

struct GenerateResult {
  FloorPlan plan;
  double logprob = 0;
  TokenSequence tokens;
};

// Thrown on an infeasible decoding step; carries the plan decoded so far.
class InfeasibleStepError : public Error {
 public:
  InfeasibleStepError(const std::string& message, FloorPlan partial)
      : Error(ErrorCode::InfeasibleStep, message), partial_(std::move(partial)) {}
  const FloorPlan& partial() const { return partial_; }

 private:
  FloorPlan partial_;
};

GenerateResult generate_plan(const Parameters& params, const std::string& prompt,
                             const Outline& outline, const DecodeConfig& config,
                             const Vocabulary& vocab = Vocabulary::standard());

GenerateResult generate_plan_from_tokens(const Parameters& params,
                                         const std::vector<TokenId>& prompt_tokens,
                                         const Outline& outline, const DecodeConfig& config);

// ---------------------------------------------------------------------------
// Generic beam search.
//
// Scorer requirements:
//   using State = ...;                       // copyable
//   std::vector<std::pair<TokenId, double>> candidates(const State&) const;
//   void advance(State&, TokenId) const;
//   bool is_final(TokenId) const;
//
// Each step expands every live hypothesis, keeps the `width` best extensions
// (ties: earlier hypothesis, then lower token id) and retires those ending in
// a final token. Up to `width` finished hypotheses are kept; a live one is
// dropped once it cannot beat the worst of a full finished set, since
// log-probabilities only decrease as tokens are added. The result is sorted
// best first.

template <class Scorer>
struct BeamHypothesis {
  typename Scorer::State state;
  std::vector<TokenId> tokens;
  double logprob = 0;
};

template <class Scorer>
std::vector<BeamHypothesis<Scorer>> beam_core(const Scorer& scorer,
                                              const typename Scorer::State& initial, int width,
                                              int max_steps) {
  using Hyp = BeamHypothesis<Scorer>;
  const auto better = [](const Hyp& a, const Hyp& b) { return a.logprob > b.logprob; };
  std::vector<Hyp> live;
  live.push_back(Hyp{initial, {}, 0.0});
  std::vector<Hyp> done;
  const auto threshold = [&]() -> std::optional<double> {
    if (static_cast<int>(done.size()) < width) return std::nullopt;
    return done.back().logprob;
  };

  struct Cand {
    double logprob;
    std::size_t hyp;
    TokenId token;
  };
  for (int step = 0; step < max_steps && !live.empty(); ++step) {
    std::vector<Cand> pool;
    for (std::size_t h = 0; h < live.size(); ++h) {
      auto cands = scorer.candidates(live[h].state);
      std::sort(cands.begin(), cands.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
      });
      if (static_cast<int>(cands.size()) > width) cands.resize(width);
      for (const auto& [t, lp] : cands) pool.push_back({live[h].logprob + lp, h, t});
    }
    std::sort(pool.begin(), pool.end(), [](const Cand& a, const Cand& b) {
      if (a.logprob != b.logprob) return a.logprob > b.logprob;
      if (a.hyp != b.hyp) return a.hyp < b.hyp;
      return a.token < b.token;
    });
    if (static_cast<int>(pool.size()) > width) pool.resize(width);

    std::vector<Hyp> next;
    for (const auto& c : pool) {
      if (auto t = threshold(); t && c.logprob <= *t) continue;
      Hyp h = live[c.hyp];
      h.tokens.push_back(c.token);
      h.logprob = c.logprob;
      if (scorer.is_final(c.token)) {
        done.insert(std::upper_bound(done.begin(), done.end(), h, better), std::move(h));
        if (static_cast<int>(done.size()) > width) done.pop_back();
        continue;
      }
      scorer.advance(h.state, c.token);
      next.push_back(std::move(h));
    }
    live = std::move(next);
    if (auto t = threshold()) {
      std::erase_if(live, [&](const Hyp& h) { return h.logprob <= *t; });
    }
  }
  return done;
}

}  // namespace roomseq
