#pragma once

#include <array>
#include <span>

#include "qeot/tensor.hpp"

namespace qeot::geometry {

// Normalized center/size box; the parameterization the box head predicts.
struct BoxCxCyWh {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const BoxCxCyWh&) const = default;
};

struct BoxXyXy {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool operator==(const BoxXyXy&) const = default;
};

// Areas below this are treated as this when they appear in a denominator.
inline constexpr double kAreaFloor = 1e-9;

BoxXyXy to_xyxy(const BoxCxCyWh& b);
BoxCxCyWh to_cxcywh(const BoxXyXy& b);
double area(const BoxXyXy& b);

// Intersection over union; 0 when both boxes are degenerate.
double iou(const BoxXyXy& a, const BoxXyXy& b);
// IoU minus the empty fraction of the smallest enclosing box, in [-1, 1].
double giou(const BoxXyXy& a, const BoxXyXy& b);

struct GiouGrad {
  double value = 0.0;
  std::array<double, 4> d_a{};  // d giou / d (x0, y0, x1, y1) of a
  std::array<double, 4> d_b{};
};

// giou with its gradient. At min/max ties and at the zero-overlap clamp the
// subgradient contribution of the tied term is 0.
GiouGrad giou_with_grad(const BoxXyXy& a, const BoxXyXy& b);

// 1 - giou, in [0, 2].
double giou_loss(const BoxCxCyWh& pred, const BoxCxCyWh& gold);
// Sum of absolute coordinate differences in cxcywh space.
double l1_box(const BoxCxCyWh& pred, const BoxCxCyWh& gold);

// Row-wise differentiable versions over predicted boxes pred [N, 4] (cxcywh)
// against constant gold boxes; both return shape [N].
Tensor giou_loss_rows(const Tensor& pred, std::span<const BoxCxCyWh> gold);
Tensor l1_rows(const Tensor& pred, std::span<const BoxCxCyWh> gold);

}  // namespace qeot::geometry
