#pragma once

// Differentiable layout penalties computed on "soft rooms": rectangles whose
// center and extent are the expected values of the model's predicted
// coordinate distributions under teacher forcing.

#include <array>
#include <span>
#include <utility>
#include <vector>

#include "geometry.hpp"
#include "model.hpp"

namespace roomseq {

struct ConstraintWeights {
  double lambda = 0.1;
  double w_adj = 1.0;
  double w_edit = 0.5;
  double w_out = 1.0;
  double tau_adj = 4.0;

  void validate() const;
};

struct ExpectedCoord {
  double value = 0;
  Vector probs;  // softmax over the value block
};

// sum_k k * softmax(value_logits)_k over the 256 value bins.
ExpectedCoord expected_coord(const Eigen::Ref<const RowVector>& value_logits);

// d value / d logits given upstream gradient.
RowVector expected_coord_grad(const ExpectedCoord& ec, double upstream);

struct SoftRoom {
  RoomType type = RoomType::LivingRoom;
  double cx = 0, cy = 0, w = 0, h = 0;

  Rect bounds() const { return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2}; }
  static SoftRoom from_room(const Room& r) {
    return {r.type, double(r.cx), double(r.cy), double(r.w), double(r.h)};
  }
};

// Gradient of a scalar with respect to each soft room's (cx, cy, w, h).
struct SoftGrad {
  double cx = 0, cy = 0, w = 0, h = 0;
};

struct ConstraintTerm {
  double value = 0;
  std::vector<SoftGrad> grad;  // one entry per soft room
};

// Mean over pairs of max(0, gap - tau)^2; 0 without pairs.
ConstraintTerm loss_adjacency(std::span<const SoftRoom> rooms,
                              std::span<const std::pair<int, int>> pairs, double tau_adj);

// Mean over unordered pairs of overlap / smaller area; 0 for fewer than two rooms.
ConstraintTerm loss_editability(std::span<const SoftRoom> rooms);

// Mean over rooms of the fraction of area outside the outline; 0 without rooms.
ConstraintTerm loss_outline(std::span<const SoftRoom> rooms, const Outline& outline);

struct LossBreakdown {
  double nll = 0;
  double adj = 0;
  double edit = 0;
  double out = 0;
  double total = 0;
};

// nll + lambda * (w_adj * adj + w_edit * edit + w_out * out). With lambda == 0
// the result is nll exactly.
LossBreakdown total_loss(double nll, double adj, double edit, double out,
                         const ConstraintWeights& weights);

// Logits rows (into a logits matrix) whose value block predicts cx, cy, h, w
// of one room record.
struct SlotRows {
  int x = 0, y = 0, h = 0, w = 0;
};

struct ConstraintEval {
  double adj = 0;
  double edit = 0;
  double out = 0;
  std::vector<SoftRoom> soft_rooms;
  // d(w_adj*adj + w_edit*edit + w_out*out) / d logits, same shape as the input.
  RowMatrix dlogits;
};

// Builds soft rooms from the value blocks of `logits` at `rows`, evaluates the
// three penalties and their weighted gradient by the expected-coordinate path.
ConstraintEval evaluate_constraints(const RowMatrix& logits, std::span<const SlotRows> rows,
                                    std::span<const RoomType> types,
                                    std::span<const std::pair<int, int>> pairs,
                                    const Outline& outline, const ConstraintWeights& weights);

}  // namespace roomseq
