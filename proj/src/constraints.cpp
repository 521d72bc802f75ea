#include "constraints.hpp"

#include <algorithm>
#include <cmath>

#include "codec.hpp"
#include "error.hpp"

namespace roomseq {

namespace {

constexpr double kMinArea = 1e-6;

// Bounds of a soft room with gradients of each bound w.r.t. (c, s):
// lo = c - s/2, hi = c + s/2.
struct Interval {
  double lo, hi;
};

Interval x_interval(const SoftRoom& r) { return {r.cx - r.w / 2, r.cx + r.w / 2}; }
Interval y_interval(const SoftRoom& r) { return {r.cy - r.h / 2, r.cy + r.h / 2}; }

// Gradient of a scalar w.r.t. the lo and hi ends of an interval.
struct EndGrad {
  double lo = 0, hi = 0;
};

// Centre/extent gradient from end gradients.
void add_x(SoftGrad& g, EndGrad e) {
  g.cx += e.lo + e.hi;
  g.w += 0.5 * (e.hi - e.lo);
}
void add_y(SoftGrad& g, EndGrad e) {
  g.cy += e.lo + e.hi;
  g.h += 0.5 * (e.hi - e.lo);
}

// Overlap length max(0, min(a.hi, b.hi) - max(a.lo, b.lo)) and its end gradients.
double overlap_1d(Interval a, Interval b, EndGrad& da, EndGrad& db) {
  da = {};
  db = {};
  const double hi = std::min(a.hi, b.hi);
  const double lo = std::max(a.lo, b.lo);
  if (hi - lo <= 0) return 0.0;
  if (a.hi <= b.hi) da.hi = 1; else db.hi = 1;
  if (a.lo >= b.lo) da.lo = -1; else db.lo = -1;
  return hi - lo;
}

// max(0, b.lo - a.hi, a.lo - b.hi) and end gradients.
double separation_1d(Interval a, Interval b, EndGrad& da, EndGrad& db) {
  da = {};
  db = {};
  const double s1 = b.lo - a.hi;
  const double s2 = a.lo - b.hi;
  if (s1 <= 0 && s2 <= 0) return 0.0;
  if (s1 >= s2) {
    db.lo = 1;
    da.hi = -1;
    return s1;
  }
  da.lo = 1;
  db.hi = -1;
  return s2;
}

}  // namespace

void ConstraintWeights::validate() const {
  if (lambda < 0 || w_adj < 0 || w_edit < 0 || w_out < 0 || tau_adj < 0)
    fail(ErrorCode::InvalidArgument, "constraint weights must be non-negative");
}

ExpectedCoord expected_coord(const Eigen::Ref<const RowVector>& value_logits) {
  if (value_logits.size() != kNumValues)
    fail(ErrorCode::ShapeMismatch, "expected_coord needs exactly 256 value logits");
  ExpectedCoord ec;
  const double m = value_logits.maxCoeff();
  ec.probs = (value_logits.array() - m).exp().transpose();
  ec.probs /= ec.probs.sum();
  double e = 0;
  for (int k = 0; k < kNumValues; ++k) e += k * ec.probs(k);
  ec.value = e;
  return ec;
}

RowVector expected_coord_grad(const ExpectedCoord& ec, double upstream) {
  RowVector g(kNumValues);
  for (int k = 0; k < kNumValues; ++k) g(k) = upstream * ec.probs(k) * (k - ec.value);
  return g;
}

ConstraintTerm loss_adjacency(std::span<const SoftRoom> rooms,
                              std::span<const std::pair<int, int>> pairs, double tau_adj) {
  ConstraintTerm term;
  term.grad.assign(rooms.size(), {});
  if (pairs.empty()) return term;
  const double inv = 1.0 / static_cast<double>(pairs.size());
  for (const auto& [i, j] : pairs) {
    const auto& a = rooms[i];
    const auto& b = rooms[j];
    EndGrad ax, bx, ay, by;
    const double dx = separation_1d(x_interval(a), x_interval(b), ax, bx);
    const double dy = separation_1d(y_interval(a), y_interval(b), ay, by);
    const double g = std::max(dx, dy);
    const double excess = g - tau_adj;
    if (excess <= 0) continue;
    term.value += excess * excess * inv;
    const double up = 2.0 * excess * inv;
    if (dx >= dy) {
      add_x(term.grad[i], {ax.lo * up, ax.hi * up});
      add_x(term.grad[j], {bx.lo * up, bx.hi * up});
    } else {
      add_y(term.grad[i], {ay.lo * up, ay.hi * up});
      add_y(term.grad[j], {by.lo * up, by.hi * up});
    }
  }
  return term;
}

ConstraintTerm loss_editability(std::span<const SoftRoom> rooms) {
  ConstraintTerm term;
  term.grad.assign(rooms.size(), {});
  const std::size_t n = rooms.size();
  if (n < 2) return term;
  const double inv = 2.0 / (static_cast<double>(n) * static_cast<double>(n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto& a = rooms[i];
      const auto& b = rooms[j];
      EndGrad ax, bx, ay, by;
      const double ox = overlap_1d(x_interval(a), x_interval(b), ax, bx);
      const double oy = overlap_1d(y_interval(a), y_interval(b), ay, by);
      const double ov = ox * oy;
      if (ov <= 0) continue;
      const double area_a = a.w * a.h;
      const double area_b = b.w * b.h;
      const bool a_smaller = area_a <= area_b;
      const double denom = std::max(a_smaller ? area_a : area_b, kMinArea);
      term.value += ov / denom * inv;
      // d(ov/denom) = dov/denom - ov/denom^2 ddenom
      const double k = inv / denom;
      add_x(term.grad[i], {ax.lo * oy * k, ax.hi * oy * k});
      add_x(term.grad[j], {bx.lo * oy * k, bx.hi * oy * k});
      add_y(term.grad[i], {ay.lo * ox * k, ay.hi * ox * k});
      add_y(term.grad[j], {by.lo * ox * k, by.hi * ox * k});
      if (denom > kMinArea) {
        const double kd = -ov / (denom * denom) * inv;
        SoftGrad& gs = term.grad[a_smaller ? i : j];
        const SoftRoom& s = a_smaller ? a : b;
        gs.w += kd * s.h;
        gs.h += kd * s.w;
      }
    }
  }
  return term;
}

ConstraintTerm loss_outline(std::span<const SoftRoom> rooms, const Outline& outline) {
  ConstraintTerm term;
  term.grad.assign(rooms.size(), {});
  if (rooms.empty()) return term;
  const double inv = 1.0 / static_cast<double>(rooms.size());
  const Interval ox_i{double(outline.x0), double(outline.x1)};
  const Interval oy_i{double(outline.y0), double(outline.y1)};
  for (std::size_t i = 0; i < rooms.size(); ++i) {
    const auto& r = rooms[i];
    const double area = r.w * r.h;
    if (area <= kMinArea) continue;
    EndGrad rx, unused_x, ry, unused_y;
    const double ix = overlap_1d(x_interval(r), ox_i, rx, unused_x);
    const double iy = overlap_1d(y_interval(r), oy_i, ry, unused_y);
    const double inside = ix * iy;
    term.value += (1.0 - inside / area) * inv;
    // d/d(.) of -inside/area
    const double k = -inv / area;
    add_x(term.grad[i], {rx.lo * iy * k, rx.hi * iy * k});
    add_y(term.grad[i], {ry.lo * ix * k, ry.hi * ix * k});
    const double kd = inv * inside / (area * area);
    term.grad[i].w += kd * r.h;
    term.grad[i].h += kd * r.w;
  }
  return term;
}

LossBreakdown total_loss(double nll, double adj, double edit, double out,
                         const ConstraintWeights& weights) {
  LossBreakdown b{nll, adj, edit, out, nll};
  if (weights.lambda == 0.0) return b;
  b.total = nll + weights.lambda * (weights.w_adj * adj + weights.w_edit * edit + weights.w_out * out);
  return b;
}

ConstraintEval evaluate_constraints(const RowMatrix& logits, std::span<const SlotRows> rows,
                                    std::span<const RoomType> types,
                                    std::span<const std::pair<int, int>> pairs,
                                    const Outline& outline, const ConstraintWeights& weights) {
  if (rows.size() != types.size()) fail(ErrorCode::ShapeMismatch, "rows and types differ in length");
  if (logits.cols() < tok::kValueBase + kNumValues)
    fail(ErrorCode::ShapeMismatch, "logits do not cover the value block");
  const std::size_t n = rows.size();
  ConstraintEval ev;
  ev.dlogits = RowMatrix::Zero(logits.rows(), logits.cols());

  std::vector<std::array<ExpectedCoord, 4>> coords(n);
  ev.soft_rooms.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::array<int, 4> r = {rows[i].x, rows[i].y, rows[i].h, rows[i].w};
    for (int f = 0; f < 4; ++f) {
      if (r[f] < 0 || r[f] >= logits.rows()) fail(ErrorCode::ShapeMismatch, "slot row out of range");
      coords[i][f] = expected_coord(logits.row(r[f]).segment(tok::kValueBase, kNumValues));
    }
    ev.soft_rooms[i] = {types[i], coords[i][0].value, coords[i][1].value, coords[i][3].value,
                        coords[i][2].value};
  }

  const auto adj = loss_adjacency(ev.soft_rooms, pairs, weights.tau_adj);
  const auto edit = loss_editability(ev.soft_rooms);
  const auto out = loss_outline(ev.soft_rooms, outline);
  ev.adj = adj.value;
  ev.edit = edit.value;
  ev.out = out.value;

  for (std::size_t i = 0; i < n; ++i) {
    SoftGrad g;
    for (const auto* t : {&adj, &edit, &out}) {
      const double w = t == &adj ? weights.w_adj : t == &edit ? weights.w_edit : weights.w_out;
      g.cx += w * t->grad[i].cx;
      g.cy += w * t->grad[i].cy;
      g.w += w * t->grad[i].w;
      g.h += w * t->grad[i].h;
    }
    const std::array<int, 4> r = {rows[i].x, rows[i].y, rows[i].h, rows[i].w};
    const std::array<double, 4> up = {g.cx, g.cy, g.h, g.w};
    for (int f = 0; f < 4; ++f) {
      if (up[f] == 0.0) continue;
      ev.dlogits.row(r[f]).segment(tok::kValueBase, kNumValues) +=
          expected_coord_grad(coords[i][f], up[f]);
    }
  }
  return ev;
}

}  // namespace roomseq
