#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "codec.hpp"
#include "constraints.hpp"
#include "error.hpp"
#include "support.hpp"

using namespace roomseq;
using testing::figure3_plan;
using testing::make_room;

namespace {

// Fourth-order central difference.
double five_point(const std::function<double(double)>& f, double h) {
  return (f(-2 * h) - 8 * f(-h) + 8 * f(h) - f(2 * h)) / (12 * h);
}

std::vector<SoftRoom> soft(const std::vector<Room>& rooms) {
  std::vector<SoftRoom> out;
  for (const auto& r : rooms) out.push_back(SoftRoom::from_room(r));
  return out;
}

double& field(SoftRoom& r, int f) {
  switch (f) {
    case 0: return r.cx;
    case 1: return r.cy;
    case 2: return r.w;
    default: return r.h;
  }
}

double field(const SoftGrad& g, int f) {
  switch (f) {
    case 0: return g.cx;
    case 1: return g.cy;
    case 2: return g.w;
    default: return g.h;
  }
}

// Central differences on each soft coordinate against the analytic gradient.
void check_soft_gradient(std::vector<SoftRoom> rooms,
                         const std::function<ConstraintTerm(const std::vector<SoftRoom>&)>& loss) {
  const ConstraintTerm t = loss(rooms);
  REQUIRE(t.grad.size() == rooms.size());
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    for (int f = 0; f < 4; ++f) {
      const double orig = field(rooms[i], f);
      const double fd = five_point(
          [&](double d) {
            field(rooms[i], f) = orig + d;
            const double v = loss(rooms).value;
            field(rooms[i], f) = orig;
            return v;
          },
          1e-3);
      const double an = field(t.grad[i], f);
      CHECK_MESSAGE(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(fd)),
                    "room " << i << " field " << f << ": " << an << " vs " << fd);
    }
  }
}

struct LogitFixture {
  RowMatrix logits;
  std::vector<SlotRows> rows;
  std::vector<RoomType> types;
  std::vector<std::pair<int, int>> pairs;
  Outline outline{40, 40, 200, 180};
};

// Value logits peaked near the requested coordinates with random noise, so the
// expected rooms sit at known places away from the loss kinks.
LogitFixture make_fixture(const std::vector<Room>& rooms, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.5);
  LogitFixture fx;
  const int V = tok::kValueBase + kNumValues + 5;
  fx.logits = RowMatrix::Zero(static_cast<int>(rooms.size()) * 4 + 1, V);
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const int base = static_cast<int>(i) * 4 + 1;
    fx.rows.push_back({base, base + 1, base + 2, base + 3});
    fx.types.push_back(rooms[i].type);
    const int target[4] = {rooms[i].cx, rooms[i].cy, rooms[i].h, rooms[i].w};
    for (int f = 0; f < 4; ++f) {
      for (int k = 0; k < kNumValues; ++k) {
        const double d = (k - target[f]) / 3.0;
        fx.logits(base + f, tok::kValueBase + k) = -0.5 * d * d + noise(rng);
      }
    }
  }
  FloorPlan p;
  p.rooms = rooms;
  fx.pairs = adjacency_pairs(p);
  return fx;
}

void check_logit_gradient(LogitFixture fx, const ConstraintWeights& w) {
  const ConstraintEval ev =
      evaluate_constraints(fx.logits, fx.rows, fx.types, fx.pairs, fx.outline, w);
  auto total = [&](const RowMatrix& l) {
    const ConstraintEval e = evaluate_constraints(l, fx.rows, fx.types, fx.pairs, fx.outline, w);
    return w.w_adj * e.adj + w.w_edit * e.edit + w.w_out * e.out;
  };
  const double base = total(fx.logits);
  CHECK(base > 0);
  std::mt19937_64 rng(77);
  int checked = 0;
  for (std::size_t i = 0; i < fx.rows.size(); ++i) {
    for (int r : {fx.rows[i].x, fx.rows[i].y, fx.rows[i].h, fx.rows[i].w}) {
      int peak = 0;
      fx.logits.row(r).segment(tok::kValueBase, kNumValues).maxCoeff(&peak);
      for (int trial = 0; trial < 4; ++trial) {
        // Columns near the peak carry almost all of the gradient.
        const int k = std::clamp(peak + static_cast<int>(rng() % 17) - 8, 0, kNumValues - 1);
        const int col = tok::kValueBase + k;
        RowMatrix l = fx.logits;
        const double fd = five_point(
            [&](double d) {
              l(r, col) = fx.logits(r, col) + d;
              return total(l);
            },
            1e-3);
        const double an = ev.dlogits(r, col);
        const double scale = std::max(std::abs(fd), std::abs(an));
        if (scale < 1e-6) continue;
        CHECK_MESSAGE(std::abs(fd - an) / scale < 1e-5, "row " << r << " col " << col << ": " << an
                                                           << " vs " << fd);
        ++checked;
      }
    }
  }
  CHECK(checked > 0);
  // Nothing leaks outside the value block or the slot rows.
  CHECK(ev.dlogits.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(ev.dlogits.leftCols(tok::kValueBase).cwiseAbs().maxCoeff() == 0.0);
}

}  // namespace

TEST_CASE("expected coordinate") {
  const RowVector uniform = RowVector::Zero(kNumValues);
  CHECK(expected_coord(uniform).value == doctest::Approx(127.5).epsilon(1e-12));
  RowVector peaked = RowVector::Zero(kNumValues);
  peaked(91) = 20.0;
  const ExpectedCoord ec = expected_coord(peaked);
  CHECK(std::abs(ec.value - 91) < 0.01);
  CHECK(std::abs(ec.probs.sum() - 1.0) < 1e-9);

  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0, 1.5);
  RowVector l(kNumValues);
  for (int k = 0; k < kNumValues; ++k) l(k) = n(rng);
  const ExpectedCoord base = expected_coord(l);
  const RowVector g = expected_coord_grad(base, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const int k = static_cast<int>(rng() % kNumValues);
    RowVector a = l;
    const double fd = five_point(
        [&](double d) {
          a(k) = l(k) + d;
          return expected_coord(a).value;
        },
        1e-3);
    if (std::abs(g(k)) < 1e-4) {
      CHECK(std::abs(fd - g(k)) < 1e-10);
    } else {
      CHECK(std::abs(fd - g(k)) / std::abs(g(k)) < 1e-6);
    }
  }
  CHECK((expected_coord_grad(base, 3.0) - 3.0 * g).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("adjacency loss") {
  const auto fig = figure3_plan();
  const auto rooms = soft(fig.rooms);
  const std::vector<std::pair<int, int>> none;
  CHECK(loss_adjacency(rooms, none, 4.0).value == 0.0);

  const std::vector<std::pair<int, int>> master_common = {{3, 4}};
  CHECK(loss_adjacency(rooms, master_common, 4.0).value == doctest::Approx(25.0).epsilon(1e-12));

  const auto overlapping = soft({make_room(RoomType::MasterRoom, 1, 50, 50, 20, 20),
                                 make_room(RoomType::Bathroom, 1, 55, 55, 10, 10)});
  const std::vector<std::pair<int, int>> p01 = {{0, 1}};
  CHECK(loss_adjacency(overlapping, p01, 4.0).value == 0.0);

  // Mean over pairs.
  const std::vector<std::pair<int, int>> two = {{3, 4}, {0, 1}};
  CHECK(loss_adjacency(rooms, two, 4.0).value == doctest::Approx(12.5).epsilon(1e-12));

  auto far = soft({make_room(RoomType::MasterRoom, 1, 50, 50, 20, 20),
                   make_room(RoomType::Bathroom, 1, 90, 62, 10, 14),
                   make_room(RoomType::CommonRoom, 1, 150, 150, 30, 24),
                   make_room(RoomType::Bathroom, 1, 170, 110, 12, 8)});
  far[1].cx += 0.3;
  far[3].cy -= 0.2;
  const std::vector<std::pair<int, int>> fp = {{0, 1}, {2, 3}};
  check_soft_gradient(far, [&](const std::vector<SoftRoom>& r) { return loss_adjacency(r, fp, 4.0); });
}

TEST_CASE("editability loss") {
  const auto fig = figure3_plan();
  const auto bk = soft({fig.rooms[1], fig.rooms[2]});
  CHECK(loss_editability(bk).value == doctest::Approx(135.0 / 1242.0).epsilon(1e-12));
  CHECK(135.0 / 1242.0 == doctest::Approx(0.1087).epsilon(1e-3));
  CHECK(loss_editability(soft({fig.rooms[0]})).value == 0.0);
  CHECK(loss_editability(soft({make_room(RoomType::Kitchen, 1, 10, 10, 10, 10),
                               make_room(RoomType::Kitchen, 2, 100, 100, 10, 10)}))
            .value == 0.0);

  auto rooms = soft({make_room(RoomType::Kitchen, 1, 60, 60, 40, 30),
                     make_room(RoomType::Bathroom, 1, 75, 70, 20, 26),
                     make_room(RoomType::LivingRoom, 1, 50, 80, 50, 30)});
  rooms[1].cx += 0.37;
  rooms[2].h += 0.21;
  check_soft_gradient(rooms, [](const std::vector<SoftRoom>& r) { return loss_editability(r); });
}

TEST_CASE("outline loss") {
  const Outline o{5, 5, 100, 100};
  CHECK(loss_outline(soft({make_room(RoomType::Bedroom, 1, 10, 10, 20, 20)}), o).value ==
        doctest::Approx(0.4375).epsilon(1e-12));
  CHECK(loss_outline(soft({make_room(RoomType::Bedroom, 1, 50, 50, 20, 20)}), o).value == 0.0);
  CHECK(loss_outline({}, o).value == 0.0);

  auto rooms = soft({make_room(RoomType::Bedroom, 1, 10, 12, 20, 22),
                     make_room(RoomType::Kitchen, 1, 95, 50, 30, 16),
                     make_room(RoomType::Balcony, 1, 50, 50, 10, 10)});
  rooms[0].cx += 0.13;
  rooms[1].w += 0.29;
  check_soft_gradient(rooms, [&](const std::vector<SoftRoom>& r) { return loss_outline(r, o); });
}

TEST_CASE("losses are non-negative and permutation invariant") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    FloorPlan p = testing::random_plan(rng, 6);
    const auto pairs = adjacency_pairs(p);
    const auto rooms = soft(p.rooms);
    const double adj = loss_adjacency(rooms, pairs, 4.0).value;
    const double edit = loss_editability(rooms).value;
    const double out = loss_outline(rooms, p.outline).value;
    CHECK(adj >= 0);
    CHECK(edit >= 0);
    CHECK(out >= 0);

    bool all_inside = true;
    for (const auto& r : p.rooms) all_inside = all_inside && outside_area(r, p.outline) == 0;
    CHECK((out == 0) == all_inside);

    std::vector<int> perm(p.rooms.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> where(perm.size());
    std::vector<SoftRoom> shuffled;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      shuffled.push_back(rooms[perm[i]]);
      where[perm[i]] = static_cast<int>(i);
    }
    std::vector<std::pair<int, int>> moved;
    for (auto [s, b] : pairs) moved.emplace_back(where[s], where[b]);
    CHECK(loss_adjacency(shuffled, moved, 4.0).value == doctest::Approx(adj).epsilon(1e-12));
    CHECK(loss_editability(shuffled).value == doctest::Approx(edit).epsilon(1e-12));
    CHECK(loss_outline(shuffled, p.outline).value == doctest::Approx(out).epsilon(1e-12));
  }
}

TEST_CASE("total loss combinator") {
  ConstraintWeights w;
  w.lambda = 0.1;
  CHECK(total_loss(2.0, 25.0, 0.0, 0.0, w).total == doctest::Approx(4.5).epsilon(1e-12));
  w.lambda = 0.0;
  const double nll = 1.2345678901234567;
  CHECK(total_loss(nll, 25.0, 3.0, 7.0, w).total == nll);
  w.lambda = 0.1;
  CHECK(total_loss(nll, 0.0, 0.0, 0.0, w).total == nll);
  const auto b = total_loss(2.0, 1.0, 2.0, 3.0, w);
  CHECK(b.adj == 1.0);
  CHECK(b.edit == 2.0);
  CHECK(b.out == 3.0);
  CHECK(b.total == doctest::Approx(2.0 + 0.1 * (1.0 + 0.5 * 2.0 + 3.0)).epsilon(1e-12));

  ConstraintWeights bad;
  bad.w_adj = -1;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("constraint gradients through the expected-coordinate path") {
  const std::vector<Room> rooms = {
      make_room(RoomType::MasterRoom, 1, 70, 70, 40, 36),
      make_room(RoomType::Bathroom, 1, 120, 80, 20, 24),   // 20 units from the master room
      make_room(RoomType::Kitchen, 1, 80, 90, 30, 26),     // overlaps the master room
      make_room(RoomType::Balcony, 1, 190, 170, 40, 30),   // crosses the outline corner
  };
  const LogitFixture fx = make_fixture(rooms, 5);

  SUBCASE("adjacency") {
    ConstraintWeights w;
    w.w_adj = 1;
    w.w_edit = 0;
    w.w_out = 0;
    check_logit_gradient(fx, w);
  }
  SUBCASE("editability") {
    ConstraintWeights w;
    w.w_adj = 0;
    w.w_edit = 1;
    w.w_out = 0;
    check_logit_gradient(fx, w);
  }
  SUBCASE("outline") {
    ConstraintWeights w;
    w.w_adj = 0;
    w.w_edit = 0;
    w.w_out = 1;
    check_logit_gradient(fx, w);
  }
  SUBCASE("weighted sum") {
    check_logit_gradient(fx, ConstraintWeights{});
  }
}

TEST_CASE("evaluate_constraints shape checks") {
  const RowMatrix small = RowMatrix::Zero(4, 10);
  const std::vector<SlotRows> rows = {{0, 1, 2, 3}};
  const std::vector<RoomType> types = {RoomType::Kitchen};
  CHECK_THROWS_AS(evaluate_constraints(small, rows, types, {}, Outline{}, ConstraintWeights{}), Error);
  const RowMatrix ok = RowMatrix::Zero(4, tok::kValueBase + kNumValues);
  const std::vector<SlotRows> bad_rows = {{0, 1, 2, 4}};
  CHECK_THROWS_AS(evaluate_constraints(ok, bad_rows, types, {}, Outline{}, ConstraintWeights{}), Error);
  const ConstraintEval ev = evaluate_constraints(ok, rows, types, {}, Outline{}, ConstraintWeights{});
  CHECK(ev.soft_rooms[0].cx == doctest::Approx(127.5));
}
