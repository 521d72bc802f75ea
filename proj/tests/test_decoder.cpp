#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "decoder.hpp"
#include "support.hpp"

using namespace roomseq;

namespace {

const int kV = Vocabulary::standard().size();

const Parameters& peaked_model() {
  static const Parameters p = testing::noisy_params(testing::small_config(kV), 0.6, 77);
  return p;
}

int count_kind(const std::vector<char>& mask, TokenKind kind) {
  int n = 0;
  for (int t = 0; t < static_cast<int>(mask.size()); ++t) n += mask[t] && token_kind(t, kV) == kind;
  return n;
}

int total(const std::vector<char>& mask) { return static_cast<int>(std::count(mask.begin(), mask.end(), 1)); }

// Five tokens; 4 ends a sequence. The next-token distribution depends on the
// previous token and the length so far.
struct ToyScorer {
  using State = std::vector<TokenId>;
  static constexpr TokenId kFinal = 4;

  std::vector<std::pair<TokenId, double>> candidates(const State& s) const {
    const int last = s.empty() ? 0 : s.back();
    const int len = static_cast<int>(s.size());
    double logits[5];
    double z = 0;
    for (int t = 0; t < 5; ++t) {
      logits[t] = std::sin(1.7 * t + 2.3 * last + 0.9 * len) + (t == kFinal ? 0.3 * len : 0.0);
      z += std::exp(logits[t]);
    }
    std::vector<std::pair<TokenId, double>> out;
    for (int t = 0; t < 5; ++t) out.emplace_back(t, logits[t] - std::log(z));
    return out;
  }
  void advance(State& s, TokenId t) const { s.push_back(t); }
  bool is_final(TokenId t) const { return t == kFinal; }
};

void enumerate(const ToyScorer& sc, ToyScorer::State s, double lp, int depth, int max_steps,
               std::vector<std::pair<double, std::vector<TokenId>>>& out) {
  if (depth == max_steps) return;
  for (auto [t, l] : sc.candidates(s)) {
    auto next = s;
    next.push_back(t);
    if (sc.is_final(t)) out.emplace_back(lp + l, next);
    else enumerate(sc, next, lp + l, depth + 1, max_steps, out);
  }
}

}  // namespace

TEST_CASE("slot masks follow the record grammar") {
  const Outline full{0, 0, 255, 255};
  PartialRoom none;
  const auto type = slot_mask(RecordSlot::Type, none, full, true, true, kV);
  CHECK(type[tok::kEos]);
  CHECK(count_kind(type, TokenKind::RoomType) == kNumRoomTypes);
  CHECK(total(type) == kNumRoomTypes + 1);
  const auto type_closed = slot_mask(RecordSlot::Type, none, full, true, false, kV);
  CHECK(total(type_closed) == 1);
  CHECK(type_closed[tok::kEos]);

  CHECK(count_kind(slot_mask(RecordSlot::Ordinal, none, full, true, true, kV), TokenKind::Ordinal) == kMaxOrdinal);
  CHECK(total(slot_mask(RecordSlot::EndRoom, none, full, true, true, kV)) == 1);

  // On the full grid the centre slot is only kind-masked.
  const auto x = slot_mask(RecordSlot::X, none, full, true, true, kV);
  CHECK(count_kind(x, TokenKind::Value) == 256);
  CHECK(total(x) == 256);

  const Outline o{40, 60, 200, 180};
  const auto xo = slot_mask(RecordSlot::X, none, o, true, true, kV);
  CHECK(total(xo) == 161);
  CHECK(xo[tok::value_token(40)]);
  CHECK_FALSE(xo[tok::value_token(39)]);
  CHECK(total(slot_mask(RecordSlot::X, none, o, false, true, kV)) == 256);

  PartialRoom p;
  p.cx = 70;
  p.cy = 100;
  const auto h = slot_mask(RecordSlot::H, p, o, true, true, kV);
  CHECK(total(h) == 80);  // 1 .. 2 * min(40, 80)
  CHECK(h[tok::value_token(80)]);
  CHECK_FALSE(h[tok::value_token(81)]);
  CHECK_FALSE(h[tok::value_token(0)]);
  const auto w = slot_mask(RecordSlot::W, p, o, true, true, kV);
  CHECK(total(w) == 60);
  CHECK(total(slot_mask(RecordSlot::W, p, o, false, true, kV)) == 255);

  // A centre on the boundary leaves no admissible extent.
  PartialRoom edge;
  edge.cx = 70;
  edge.cy = o.y0;
  RowVector logits = RowVector::Zero(kV);
  const auto hm = slot_mask(RecordSlot::H, edge, o, true, true, kV);
  CHECK(total(hm) == 0);
  try {
    masked_distribution(logits, hm, 1.0);
    FAIL("expected AllMasked");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::AllMasked);
  }
}

TEST_CASE("masked distributions") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 3);
  RowVector logits(kV);
  for (int t = 0; t < kV; ++t) logits(t) = n(rng);
  PartialRoom p;
  p.cx = 100;
  p.cy = 120;
  const Outline o{60, 60, 190, 200};
  for (double temp : {0.5, 1.0, 2.0}) {
    for (RecordSlot s : {RecordSlot::Type, RecordSlot::X, RecordSlot::H, RecordSlot::W}) {
      const auto mask = slot_mask(s, p, o, true, true, kV);
      const Vector d = masked_distribution(logits, mask, temp);
      CHECK(d.sum() == doctest::Approx(1.0).epsilon(1e-12));
      double z = 0;
      for (int t = 0; t < kV; ++t)
        if (mask[t]) z += std::exp(logits(t) / temp);
      for (int t = 0; t < kV; ++t) {
        if (!mask[t]) CHECK(d(t) == 0.0);
        else CHECK(d(t) == doctest::Approx(std::exp(logits(t) / temp) / z).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("top-k sampling") {
  Vector d(3);
  d << 0.5, 0.3, 0.2;
  std::mt19937_64 rng(123);
  int counts[3] = {};
  for (int i = 0; i < 10000; ++i) ++counts[sample_topk(d, 2, rng)];
  CHECK(counts[2] == 0);
  CHECK(counts[0] / 10000.0 == doctest::Approx(0.625).epsilon(0.02 / 0.625));
  CHECK(std::abs(counts[0] / 10000.0 - 0.625) < 0.02);
  CHECK(std::abs(counts[1] / 10000.0 - 0.375) < 0.02);

  // K = 1 is the argmax with the lower id winning ties and consumes no randomness.
  Vector tie(4);
  tie << 0.1, 0.4, 0.4, 0.1;
  std::mt19937_64 a(1), b(1);
  CHECK(sample_topk(tie, 1, a) == 1);
  CHECK(argmax_token(tie) == 1);
  CHECK(a == b);

  // Large K: plain categorical over the support.
  std::mt19937_64 r2(9);
  int c2[3] = {};
  for (int i = 0; i < 20000; ++i) ++c2[sample_topk(d, 10, r2)];
  CHECK(std::abs(c2[2] / 20000.0 - 0.2) < 0.02);

  // Zero-probability tokens are never drawn.
  Vector sparse = Vector::Zero(6);
  sparse(3) = 0.7;
  sparse(5) = 0.3;
  std::mt19937_64 r3(2);
  for (int i = 0; i < 5000; ++i) {
    const TokenId t = sample_topk(sparse, 6, r3);
    CHECK((t == 3 || t == 5));
  }
}

TEST_CASE("masked tokens are never emitted while decoding") {
  const Parameters& m = peaked_model();
  DecodeConfig c;
  c.strategy = Strategy::TopK;
  c.k = 50;
  c.temperature = 2.0;
  c.max_rooms = 4;
  const Outline o{50, 40, 210, 190};
  int steps = 0, violations = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    c.seed = seed;
    try {
      const GenerateResult g = generate_plan(m, "apartment 160 by 150", o, c);
      const auto sep = *find_separator(g.tokens);
      CHECK_FALSE(check_kind_discipline(TokenSequence(g.tokens.begin() + static_cast<long>(sep) - 1,
                                                      g.tokens.end()),
                                        kV)
                      .has_value());
      for (const Room& r : g.plan.rooms) violations += outside_area(r, o) > 0;
      steps += static_cast<int>(g.tokens.size() - sep);
    } catch (const InfeasibleStepError& e) {
      for (const Room& r : e.partial().rooms) violations += outside_area(r, o) > 0;
    }
  }
  CHECK(steps > 100);
  CHECK(violations == 0);
}

TEST_CASE("beam engine matches exhaustive enumeration on a toy model") {
  const ToyScorer sc;
  const int max_steps = 4;
  std::vector<std::pair<double, std::vector<TokenId>>> all;
  enumerate(sc, {}, 0.0, 0, max_steps, all);
  std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  REQUIRE(all.size() == 1 + 4 + 16 + 64);

  // Wide enough that no candidate is ever cut: identical to enumeration.
  for (int width : {320, 500}) {
    const auto hyps = beam_core(sc, {}, width, max_steps);
    const std::size_t n = std::min<std::size_t>(width, all.size());
    REQUIRE(hyps.size() == n);
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(hyps[i].logprob == doctest::Approx(all[i].first).epsilon(1e-12));
      CHECK(hyps[i].tokens == all[i].second);
    }
  }

  // Width 1 follows the per-step argmax.
  ToyScorer::State s;
  double lp = 0;
  for (int i = 0; i < max_steps; ++i) {
    auto c = sc.candidates(s);
    auto best = *std::max_element(c.begin(), c.end(), [](auto& a, auto& b) { return a.second < b.second; });
    s.push_back(best.first);
    lp += best.second;
    if (sc.is_final(best.first)) break;
  }
  const auto one = beam_core(sc, {}, 1, max_steps);
  if (sc.is_final(s.back())) {
    REQUIRE(one.size() == 1);
    CHECK(one[0].tokens == s);
    CHECK(one[0].logprob == doctest::Approx(lp));
  }

  // Every width finds something no better than the optimum.
  for (int width = 1; width <= 8; ++width) {
    const auto h = beam_core(sc, {}, width, max_steps);
    if (!h.empty()) CHECK(h[0].logprob <= all[0].first + 1e-12);
    CHECK(std::is_sorted(h.begin(), h.end(), [](auto& a, auto& b) { return a.logprob > b.logprob; }));
  }
}

TEST_CASE("strategy equivalences on a random model") {
  const Parameters& m = peaked_model();
  const std::vector<std::string> prompts = {
      "apartment 160 by 144 living room at north side",
      "apartment 200 by 176 two bathrooms",
      "apartment 128 by 128",
      "kitchen at south east corner 150 sqft",
      "apartment 224 by 160 master room 400 sqft aspect 4 over 3",
  };
  std::mt19937_64 rng(8);
  int compared = 0;
  for (int i = 0; i < 10; ++i) {
    const std::string& prompt = prompts[i % prompts.size()];
    const Outline o = testing::random_outline(rng);
    DecodeConfig greedy;
    greedy.max_rooms = 3;
    greedy.hard_constraints = i % 2 == 0;
    DecodeConfig beam1 = greedy, topk1 = greedy, beam2 = greedy, beam4 = greedy;
    beam1.strategy = Strategy::Beam;
    beam1.beam_width = 1;
    beam2.strategy = Strategy::Beam;
    beam2.beam_width = 2;
    beam4.strategy = Strategy::Beam;
    beam4.beam_width = 4;
    topk1.strategy = Strategy::TopK;
    topk1.k = 1;
    topk1.seed = 99;
    try {
      const auto g = generate_plan(m, prompt, o, greedy);
      const auto b1 = generate_plan(m, prompt, o, beam1);
      const auto k1 = generate_plan(m, prompt, o, topk1);
      CHECK(b1.tokens == g.tokens);
      CHECK(k1.tokens == g.tokens);
      CHECK(b1.logprob == doctest::Approx(g.logprob).epsilon(1e-12));
      const auto b2 = generate_plan(m, prompt, o, beam2);
      const auto b4 = generate_plan(m, prompt, o, beam4);
      CHECK(b2.logprob >= b1.logprob);
      CHECK(b4.logprob >= b2.logprob);
      ++compared;

      // The room-level API agrees with full decoding for the first room.
      const auto words = encode_prompt(prompt);
      const auto nr = next_room(m, words, {}, o, greedy);
      const auto nb = next_room(m, words, {}, o, beam1);
      CHECK(nr.finished == g.plan.rooms.empty());
      if (!nr.finished) {
        REQUIRE(nr.proposals.size() == 1);
        CHECK(nr.proposals[0].room == g.plan.rooms[0]);
        REQUIRE_FALSE(nb.proposals.empty());
        CHECK(nb.proposals[0].room == nr.proposals[0].room);
        CHECK(nb.proposals[0].logprob == doctest::Approx(nr.proposals[0].logprob).epsilon(1e-12));
      }
    } catch (const InfeasibleStepError&) {
      // Boundary centres can leave no extent; equivalence is checked on the rest.
    }
  }
  CHECK(compared >= 5);
}

TEST_CASE("next_room proposals") {
  const Parameters& m = peaked_model();
  const Outline o{30, 30, 226, 226};
  DecodeConfig c;
  c.strategy = Strategy::TopK;
  c.k = 6;
  c.temperature = 1.5;
  c.seed = 4;
  const auto words = encode_prompt("apartment 196 by 196");
  NextRoomResult a = next_room(m, words, {}, o, c);
  NextRoomResult b = next_room(m, words, {}, o, c);
  REQUIRE(a.proposals.size() == b.proposals.size());
  for (std::size_t i = 0; i < a.proposals.size(); ++i) {
    CHECK(a.proposals[i].room == b.proposals[i].room);
    CHECK(a.proposals[i].rank == static_cast<int>(i));
    CHECK(a.proposals[i].logprob <= 0);
    CHECK(outside_area(a.proposals[i].room, o) == 0);
    for (std::size_t j = 0; j < i; ++j) {
      CHECK_FALSE(a.proposals[i].room == a.proposals[j].room);
      CHECK(a.proposals[j].logprob >= a.proposals[i].logprob);
    }
  }
  CHECK(a.proposals.size() <= 6);

  // A different reseed draws a different set (overwhelmingly likely here).
  const NextRoomResult r = next_room(m, words, {}, o, c, 1);
  bool differs = r.proposals.size() != a.proposals.size();
  for (std::size_t i = 0; !differs && i < r.proposals.size(); ++i)
    differs = !(r.proposals[i].room == a.proposals[i].room);
  CHECK(differs);

  DecodeConfig beam;
  beam.strategy = Strategy::Beam;
  beam.beam_width = 3;
  const auto bp = next_room(m, words, {}, o, beam);
  CHECK(bp.proposals.size() <= 3);

  // With the room budget spent only EOS remains.
  DecodeConfig full = c;
  full.max_rooms = 1;
  FloorPlan one{o, {testing::make_room(RoomType::LivingRoom, 1, 128, 128, 60, 60)}};
  const auto done = next_room(m, words, one.rooms, o, full);
  CHECK(done.finished);
  CHECK(done.proposals.empty());

  DecodeConfig bad;
  bad.k = 0;
  CHECK_THROWS_AS(next_room(m, words, {}, o, bad), Error);
}

TEST_CASE("hard outline masking keeps every room inside") {
  const Parameters& m = peaked_model();
  std::mt19937_64 rng(31);
  int plans = 0, rooms = 0;
  for (int i = 0; i < 200; ++i) {
    const Outline o = testing::random_outline(rng);
    DecodeConfig c;
    c.strategy = i % 2 ? Strategy::TopK : Strategy::Greedy;
    c.seed = static_cast<std::uint64_t>(i);
    c.max_rooms = 5;
    try {
      const auto g = generate_plan(m, "apartment 100 by 100", o, c);
      ++plans;
      for (const Room& r : g.plan.rooms) {
        ++rooms;
        CHECK(outside_area(r, o) == 0);
      }
    } catch (const InfeasibleStepError& e) {
      for (const Room& r : e.partial().rooms) CHECK(outside_area(r, o) == 0);
      CHECK(e.partial().outline == o);
    }
  }
  CHECK(plans > 100);
  CHECK(rooms > 0);
}

TEST_CASE("infeasible steps carry the partial plan") {
  // Zero final gain with unit bias makes every hidden row all ones, so the
  // head columns alone set the logits: kitchen, ordinal 1, then VAL_40 for
  // both centres, which sits on the outline's lower edge.
  ModelConfig cfg = testing::small_config(kV);
  Parameters p = init_params(cfg);
  p.view(p.layout().final_gain).setZero();
  p.view(p.layout().final_bias).setOnes();
  auto head = p.view(p.layout().head);
  head.setZero();
  head.col(tok::type_token(RoomType::Kitchen)).setConstant(1.0);
  head.col(tok::ordinal_token(1)).setConstant(0.5);
  head.col(tok::value_token(40)).setConstant(0.5);
  const Outline o{40, 40, 200, 200};

  DecodeConfig c;
  try {
    generate_plan(p, "", o, c);
    FAIL("expected InfeasibleStepError");
  } catch (const InfeasibleStepError& e) {
    CHECK(e.code() == ErrorCode::InfeasibleStep);
    CHECK(e.partial().outline == o);
    CHECK(e.partial().rooms.empty());
  }

  const std::vector<Room> accepted = {testing::make_room(RoomType::LivingRoom, 1, 120, 120, 50, 50)};
  try {
    next_room(p, {}, accepted, o, c);
    FAIL("expected InfeasibleStepError");
  } catch (const InfeasibleStepError& e) {
    CHECK(e.partial().rooms == accepted);
  }

  // Without hard masking the same model decodes a (boundary) room.
  c.hard_constraints = false;
  c.max_rooms = 1;
  const auto g = generate_plan(p, "", o, c);
  REQUIRE(g.plan.rooms.size() == 1);
  CHECK(g.plan.rooms[0].cx == 40);
  CHECK(g.plan.rooms[0].cy == 40);
}

TEST_CASE("decoding is deterministic and validated") {
  const Parameters& m = peaked_model();
  const Outline o{20, 20, 236, 236};
  DecodeConfig c;
  c.strategy = Strategy::TopK;
  c.k = 4;
  c.seed = 12;
  c.max_rooms = 4;
  const auto a = generate_plan(m, "apartment 216 by 216", o, c);
  const auto b = generate_plan(m, "apartment 216 by 216", o, c);
  CHECK(a.tokens == b.tokens);
  CHECK(a.logprob == b.logprob);
  CHECK(a.plan.rooms.size() <= 4);

  DecodeConfig bad;
  bad.temperature = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = DecodeConfig{};
  bad.beam_width = 0;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = DecodeConfig{};
  bad.max_rooms = kMaxRooms + 1;
  CHECK_THROWS_AS(bad.validate(), Error);
  CHECK(strategy_from_name("beam") == Strategy::Beam);
  CHECK_FALSE(strategy_from_name("nucleus").has_value());
  CHECK(std::string(strategy_name(Strategy::TopK)) == "topk");
}
