#include "decoder.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace roomseq {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seed for proposal `j` of room `index`.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t reseed, std::size_t index, int j) {
  std::uint64_t s = splitmix64(seed);
  s = splitmix64(s ^ reseed);
  s = splitmix64(s ^ static_cast<std::uint64_t>(index));
  return splitmix64(s ^ static_cast<std::uint64_t>(j));
}

void allow_values(std::vector<char>& mask, int lo, int hi) {
  lo = std::max(lo, 0);
  hi = std::min(hi, kNumValues - 1);
  for (int v = lo; v <= hi; ++v) mask[tok::value_token(v)] = 1;
}

// Where a decode is inside the record grammar.
struct RecordCursor {
  RecordSlot slot = RecordSlot::Type;
  PartialRoom partial;
  int rooms = 0;

  // Applies an emitted token; returns the room when END_ROOM closes a record.
  std::optional<Room> push(TokenId t) {
    std::optional<Room> closed;
    switch (slot) {
      case RecordSlot::Type:
        partial = {};
        partial.type = room_type_from_id(t - tok::kTypeBase);
        break;
      case RecordSlot::Ordinal: partial.ordinal = t - tok::kOrdinalBase + 1; break;
      case RecordSlot::X: partial.cx = t - tok::kValueBase; break;
      case RecordSlot::Y: partial.cy = t - tok::kValueBase; break;
      case RecordSlot::H: partial.h = t - tok::kValueBase; break;
      case RecordSlot::W: {
        Room r;
        r.type = *partial.type;
        r.ordinal = *partial.ordinal;
        r.cx = *partial.cx;
        r.cy = *partial.cy;
        r.h = *partial.h;
        r.w = t - tok::kValueBase;
        pending = r;
        break;
      }
      case RecordSlot::EndRoom:
        closed = pending;
        ++rooms;
        break;
    }
    slot = static_cast<RecordSlot>((static_cast<int>(slot) + 1) % kRecordLength);
    return closed;
  }

  Room pending;
};

struct Decoder {
  const Parameters& params;
  const Outline& outline;
  const DecodeConfig& config;

  bool allow_room(const DecodeContext& ctx, const RecordCursor& cur) const {
    return cur.rooms < config.max_rooms &&
           ctx.length() + kRecordLength <= params.config().max_seq_len;
  }

  Vector dist(const DecodeContext& ctx, const RecordCursor& cur) const {
    const auto mask = slot_mask(cur.slot, cur.partial, outline, config.hard_constraints,
                                allow_room(ctx, cur), params.config().vocab_size);
    return masked_distribution(ctx.last_logits(), mask, config.temperature);
  }
};

// Scorer over the model for the generic beam engine. `stop_at_end_room`
// restricts the search to one record.
struct ModelScorer {
  struct State {
    DecodeContext ctx;
    RecordCursor cur;
  };
  Decoder dec;
  bool stop_at_end_room = false;

  std::vector<std::pair<TokenId, double>> candidates(const State& s) const {
    Vector p;
    try {
      p = dec.dist(s.ctx, s.cur);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::AllMasked) return {};
      throw;
    }
    std::vector<std::pair<TokenId, double>> out;
    for (int t = 0; t < p.size(); ++t)
      if (p(t) > 0) out.emplace_back(t, std::log(p(t)));
    return out;
  }
  void advance(State& s, TokenId t) const {
    s.cur.push(t);
    s.ctx.append(t);
  }
  bool is_final(TokenId t) const {
    return t == tok::kEos || (stop_at_end_room && t == tok::kEndRoom);
  }
};

DecodeContext prime(const Parameters& params, const TokenSequence& prefix) {
  if (static_cast<int>(prefix.size()) > params.config().max_seq_len)
    fail(ErrorCode::SequenceTooLong, "prefix of " + std::to_string(prefix.size()) +
                                         " tokens exceeds max_seq_len " +
                                         std::to_string(params.config().max_seq_len));
  DecodeContext ctx(params);
  ctx.append(std::span<const TokenId>(prefix));
  return ctx;
}

struct RecordDraw {
  std::optional<Room> room;  // nullopt means EOS
  double logprob = 0;
};

// Decodes one record (or EOS) choosing tokens with `pick`.
template <class Pick>
RecordDraw draw_record(const Decoder& dec, DecodeContext& ctx, RecordCursor& cur, Pick&& pick) {
  RecordDraw out;
  for (int i = 0; i < kRecordLength; ++i) {
    const Vector p = dec.dist(ctx, cur);
    const TokenId t = pick(p);
    out.logprob += std::log(p(t));
    if (t == tok::kEos) return out;
    auto closed = cur.push(t);
    ctx.append(t);
    if (closed) out.room = closed;
  }
  return out;
}

}  // namespace

const char* strategy_name(Strategy s) {
  switch (s) {
    case Strategy::Greedy: return "greedy";
    case Strategy::TopK: return "topk";
    case Strategy::Beam: return "beam";
  }
  return "greedy";
}

std::optional<Strategy> strategy_from_name(const std::string& name) {
  if (name == "greedy") return Strategy::Greedy;
  if (name == "topk") return Strategy::TopK;
  if (name == "beam") return Strategy::Beam;
  return std::nullopt;
}

void DecodeConfig::validate() const {
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  if (beam_width < 1) fail(ErrorCode::InvalidArgument, "beam_width must be >= 1");
  if (!(temperature > 0) || !std::isfinite(temperature))
    fail(ErrorCode::InvalidArgument, "temperature must be a positive finite number");
  if (max_rooms < 0 || max_rooms > kMaxRooms)
    fail(ErrorCode::InvalidArgument, "max_rooms must be in [0, " + std::to_string(kMaxRooms) + "]");
}

std::vector<char> slot_mask(RecordSlot slot, const PartialRoom& partial, const Outline& outline,
                            bool hard_constraints, bool allow_room, int vocab_size) {
  if (vocab_size < tok::kWordBase)
    fail(ErrorCode::ShapeMismatch, "vocabulary smaller than the fixed token blocks");
  std::vector<char> mask(vocab_size, 0);
  const int g = kNumValues - 1;
  switch (slot) {
    case RecordSlot::Type:
      mask[tok::kEos] = 1;
      if (allow_room)
        for (RoomType t : kAllRoomTypes) mask[tok::type_token(t)] = 1;
      break;
    case RecordSlot::Ordinal:
      for (int o = 1; o <= kMaxOrdinal; ++o) mask[tok::ordinal_token(o)] = 1;
      break;
    case RecordSlot::X:
      if (hard_constraints) allow_values(mask, outline.x0, outline.x1);
      else allow_values(mask, 0, g);
      break;
    case RecordSlot::Y:
      if (hard_constraints) allow_values(mask, outline.y0, outline.y1);
      else allow_values(mask, 0, g);
      break;
    case RecordSlot::H:
      if (hard_constraints) {
        if (!partial.cy) fail(ErrorCode::InvalidArgument, "height slot needs a known cy");
        allow_values(mask, 1, 2 * std::min(*partial.cy - outline.y0, outline.y1 - *partial.cy));
      } else {
        allow_values(mask, 1, g);
      }
      break;
    case RecordSlot::W:
      if (hard_constraints) {
        if (!partial.cx) fail(ErrorCode::InvalidArgument, "width slot needs a known cx");
        allow_values(mask, 1, 2 * std::min(*partial.cx - outline.x0, outline.x1 - *partial.cx));
      } else {
        allow_values(mask, 1, g);
      }
      break;
    case RecordSlot::EndRoom:
      mask[tok::kEndRoom] = 1;
      break;
  }
  return mask;
}

Vector masked_distribution(const Eigen::Ref<const RowVector>& logits, const std::vector<char>& mask,
                           double temperature) {
  if (static_cast<std::size_t>(logits.size()) != mask.size())
    fail(ErrorCode::ShapeMismatch, "mask and logits differ in length");
  double m = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < logits.size(); ++t)
    if (mask[t]) m = std::max(m, logits(t) / temperature);
  if (m == -std::numeric_limits<double>::infinity())
    fail(ErrorCode::AllMasked, "no token survives the mask");
  Vector p = Vector::Zero(logits.size());
  double sum = 0;
  for (int t = 0; t < logits.size(); ++t) {
    if (!mask[t]) continue;
    p(t) = std::exp(logits(t) / temperature - m);
    sum += p(t);
  }
  return p / sum;
}

Vector masked_next_dist(const Parameters& params, const TokenSequence& prefix, RecordSlot slot,
                        const PartialRoom& partial, const Outline& outline, double temperature,
                        bool hard_constraints, bool allow_room) {
  if (prefix.empty()) fail(ErrorCode::InvalidArgument, "empty prefix");
  const auto mask =
      slot_mask(slot, partial, outline, hard_constraints, allow_room, params.config().vocab_size);
  DecodeContext ctx = prime(params, prefix);
  return masked_distribution(ctx.last_logits(), mask, temperature);
}

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

TokenId argmax_token(const Vector& dist) {
  TokenId best = 0;
  for (int t = 1; t < dist.size(); ++t)
    if (dist(t) > dist(best)) best = t;
  return best;
}

TokenId sample_topk(const Vector& dist, int k, std::mt19937_64& rng) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  if (dist.size() == 0) fail(ErrorCode::InvalidArgument, "empty distribution");
  std::vector<TokenId> order(dist.size());
  std::iota(order.begin(), order.end(), 0);
  const auto by_prob = [&](TokenId a, TokenId b) {
    return dist(a) != dist(b) ? dist(a) > dist(b) : a < b;
  };
  const int keep = std::min<int>(k, static_cast<int>(order.size()));
  std::partial_sort(order.begin(), order.begin() + keep, order.end(), by_prob);
  order.resize(keep);
  if (keep == 1) return order[0];

  double total = 0;
  for (TokenId t : order) total += dist(t);
  const double u = uniform01(rng) * total;
  double acc = 0;
  TokenId last_positive = order[0];
  for (TokenId t : order) {
    if (dist(t) <= 0) continue;
    acc += dist(t);
    last_positive = t;
    if (u < acc) return t;
  }
  return last_positive;
}

NextRoomResult next_room(const Parameters& params, const std::vector<TokenId>& prompt_tokens,
                         const std::vector<Room>& accepted, const Outline& outline,
                         const DecodeConfig& config, std::uint64_t reseed) {
  config.validate();
  const Decoder dec{params, outline, config};
  const TokenSequence prefix = encode_prefix(prompt_tokens, accepted);
  DecodeContext ctx = prime(params, prefix);
  RecordCursor cur;
  cur.rooms = static_cast<int>(accepted.size());

  NextRoomResult result;
  const auto add = [&](const Room& room, double lp) {
    for (const auto& p : result.proposals)
      if (p.room == room) return;
    result.proposals.push_back({room, lp, 0});
  };

  try {
    switch (config.strategy) {
      case Strategy::Greedy: {
        auto d = draw_record(dec, ctx, cur, [](const Vector& p) { return argmax_token(p); });
        if (!d.room) result.finished = true;
        else add(*d.room, d.logprob);
        break;
      }
      case Strategy::TopK: {
        for (int j = 0; j < config.k; ++j) {
          std::mt19937_64 rng(sub_seed(config.seed, reseed, accepted.size(), j));
          DecodeContext c = ctx;
          RecordCursor rc = cur;
          auto d = draw_record(dec, c, rc, [&](const Vector& p) { return sample_topk(p, config.k, rng); });
          if (!d.room) {
            if (j == 0) {
              result.finished = true;
              break;
            }
            continue;
          }
          add(*d.room, d.logprob);
        }
        break;
      }
      case Strategy::Beam: {
        const ModelScorer scorer{dec, true};
        auto hyps = beam_core(scorer, ModelScorer::State{ctx, cur}, config.beam_width, kRecordLength);
        if (hyps.empty()) fail(ErrorCode::AllMasked, "no feasible record");
        if (hyps.front().tokens.back() == tok::kEos) {
          result.finished = true;
          break;
        }
        for (const auto& h : hyps) {
          if (h.tokens.back() == tok::kEos) continue;
          add(h.state.cur.pending, h.logprob);
        }
        break;
      }
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::AllMasked)
      throw InfeasibleStepError(std::string("infeasible step: ") + e.what(),
                                FloorPlan{outline, accepted});
    throw;
  }
  if (result.finished) result.proposals.clear();
  std::stable_sort(result.proposals.begin(), result.proposals.end(),
                   [](const RoomProposal& a, const RoomProposal& b) { return a.logprob > b.logprob; });
  for (std::size_t i = 0; i < result.proposals.size(); ++i) result.proposals[i].rank = static_cast<int>(i);
  return result;
}

BeamResult beam_search(const Parameters& params, const std::vector<TokenId>& prompt_tokens,
                       const Outline& outline, const DecodeConfig& config) {
  config.validate();
  const Decoder dec{params, outline, config};
  const TokenSequence prefix = encode_prefix(prompt_tokens, {});
  const ModelScorer scorer{dec, false};
  const ModelScorer::State initial{prime(params, prefix), {}};
  const int max_steps = params.config().max_seq_len - static_cast<int>(prefix.size()) + 1;

  std::optional<BeamResult> best;
  for (int b = 1; b <= config.beam_width; ++b) {
    auto hyps = beam_core(scorer, initial, b, max_steps);
    if (hyps.empty()) continue;
    if (!best || hyps.front().logprob > best->logprob) {
      BeamResult r;
      r.tokens = prefix;
      r.tokens.insert(r.tokens.end(), hyps.front().tokens.begin(), hyps.front().tokens.end());
      r.logprob = hyps.front().logprob;
      best = std::move(r);
    }
  }
  if (!best) throw InfeasibleStepError("beam search found no complete sequence", FloorPlan{outline, {}});
  return *best;
}

GenerateResult generate_plan_from_tokens(const Parameters& params,
                                         const std::vector<TokenId>& prompt_tokens,
                                         const Outline& outline, const DecodeConfig& config) {
  config.validate();
  validate_outline(outline);
  GenerateResult out;
  if (config.strategy == Strategy::Beam) {
    auto b = beam_search(params, prompt_tokens, outline, config);
    out.tokens = std::move(b.tokens);
    out.logprob = b.logprob;
  } else {
    const Decoder dec{params, outline, config};
    TokenSequence seq = encode_prefix(prompt_tokens, {});
    DecodeContext ctx = prime(params, seq);
    RecordCursor cur;
    std::vector<Room> rooms;
    while (true) {
      RecordDraw d;
      try {
        if (config.strategy == Strategy::Greedy) {
          d = draw_record(dec, ctx, cur, [](const Vector& p) { return argmax_token(p); });
        } else {
          std::mt19937_64 rng(sub_seed(config.seed, 0, rooms.size(), 0));
          d = draw_record(dec, ctx, cur, [&](const Vector& p) { return sample_topk(p, config.k, rng); });
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::AllMasked)
          throw InfeasibleStepError(std::string("infeasible step: ") + e.what(),
                                    FloorPlan{outline, rooms});
        throw;
      }
      out.logprob += d.logprob;
      if (!d.room) break;
      rooms.push_back(*d.room);
      append_room_record(seq, *d.room);
    }
    seq.push_back(tok::kEos);
    out.tokens = std::move(seq);
  }
  out.plan = decode_tokens(out.tokens, DecodeMode::Lenient, outline);
  return out;
}

GenerateResult generate_plan(const Parameters& params, const std::string& prompt,
                             const Outline& outline, const DecodeConfig& config,
                             const Vocabulary& vocab) {
  return generate_plan_from_tokens(params, encode_prompt(prompt, vocab), outline, config);
}

}  // namespace roomseq
