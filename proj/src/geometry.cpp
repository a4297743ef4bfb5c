#include "qeot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "qeot/errors.hpp"

namespace qeot::geometry {

BoxXyXy to_xyxy(const BoxCxCyWh& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

BoxCxCyWh to_cxcywh(const BoxXyXy& b) {
  return {0.5 * (b.x0 + b.x1), 0.5 * (b.y0 + b.y1), b.x1 - b.x0, b.y1 - b.y0};
}

double area(const BoxXyXy& b) { return std::max(0.0, b.x1 - b.x0) * std::max(0.0, b.y1 - b.y0); }

namespace {

double intersection(const BoxXyXy& a, const BoxXyXy& b) {
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  return iw > 0.0 && ih > 0.0 ? iw * ih : 0.0;
}

double enclosing(const BoxXyXy& a, const BoxXyXy& b) {
  return (std::max(a.x1, b.x1) - std::min(a.x0, b.x0)) * (std::max(a.y1, b.y1) - std::min(a.y0, b.y0));
}

}  // namespace

double iou(const BoxXyXy& a, const BoxXyXy& b) {
  const double inter = intersection(a, b);
  const double uni = area(a) + area(b) - inter;
  return inter / std::max(uni, kAreaFloor);
}

double giou(const BoxXyXy& a, const BoxXyXy& b) {
  const double inter = intersection(a, b);
  const double uni = area(a) + area(b) - inter;
  const double encl = enclosing(a, b);
  // C >= U holds exactly; the clamp only removes rounding that would put giou above iou.
  return inter / std::max(uni, kAreaFloor) - std::max(encl - uni, 0.0) / std::max(encl, kAreaFloor);
}

GiouGrad giou_with_grad(const BoxXyXy& a, const BoxXyXy& b) {
  GiouGrad out;
  // Index layout for both d_a and d_b: 0 x0, 1 y0, 2 x1, 3 y1.
  std::array<double, 4> dI_a{}, dI_b{}, dC_a{}, dC_b{};

  const double wa = a.x1 - a.x0, ha = a.y1 - a.y0;
  const double wb = b.x1 - b.x0, hb = b.y1 - b.y0;
  const double area_a = wa * ha;
  const double area_b = wb * hb;
  const std::array<double, 4> dA_a{-ha, -wa, ha, wa};
  const std::array<double, 4> dA_b{-hb, -wb, hb, wb};

  const double ix0 = std::max(a.x0, b.x0), ix1 = std::min(a.x1, b.x1);
  const double iy0 = std::max(a.y0, b.y0), iy1 = std::min(a.y1, b.y1);
  const double iw = ix1 - ix0, ih = iy1 - iy0;
  double inter = 0.0;
  if (iw > 0.0 && ih > 0.0) {
    inter = iw * ih;
    // d iw: +1 on the smaller right edge, -1 on the larger left edge.
    if (a.x1 < b.x1) dI_a[2] += ih; else if (b.x1 < a.x1) dI_b[2] += ih;
    if (a.x0 > b.x0) dI_a[0] -= ih; else if (b.x0 > a.x0) dI_b[0] -= ih;
    if (a.y1 < b.y1) dI_a[3] += iw; else if (b.y1 < a.y1) dI_b[3] += iw;
    if (a.y0 > b.y0) dI_a[1] -= iw; else if (b.y0 > a.y0) dI_b[1] -= iw;
  }

  const double ex0 = std::min(a.x0, b.x0), ex1 = std::max(a.x1, b.x1);
  const double ey0 = std::min(a.y0, b.y0), ey1 = std::max(a.y1, b.y1);
  const double ew = ex1 - ex0, eh = ey1 - ey0;
  const double encl = ew * eh;
  if (a.x1 > b.x1) dC_a[2] += eh; else if (b.x1 > a.x1) dC_b[2] += eh;
  if (a.x0 < b.x0) dC_a[0] -= eh; else if (b.x0 < a.x0) dC_b[0] -= eh;
  if (a.y1 > b.y1) dC_a[3] += ew; else if (b.y1 > a.y1) dC_b[3] += ew;
  if (a.y0 < b.y0) dC_a[1] -= ew; else if (b.y0 < a.y0) dC_b[1] -= ew;

  const double uni = area_a + area_b - inter;
  const bool uni_floored = uni < kAreaFloor;
  const bool encl_floored = encl < kAreaFloor;
  const double U = uni_floored ? kAreaFloor : uni;
  const double C = encl_floored ? kAreaFloor : encl;
  out.value = inter / U - std::max(encl - uni, 0.0) / C;

  // giou = I/U - C_raw/C + uni/C; with C unfloored that is I/U - 1 + uni/C.
  for (int side = 0; side < 2; ++side) {
    const auto& dI = side == 0 ? dI_a : dI_b;
    const auto& dA = side == 0 ? dA_a : dA_b;
    const auto& dC = side == 0 ? dC_a : dC_b;
    auto& dst = side == 0 ? out.d_a : out.d_b;
    for (int k = 0; k < 4; ++k) {
      const double dU = dA[k] - dI[k];
      double g = dI[k] / U;
      if (!uni_floored) g -= inter * dU / (U * U);
      if (!encl_floored) {
        g += (dU * C - uni * dC[k]) / (C * C);
      } else {
        g += (dU - dC[k]) / C;
      }
      dst[k] = g;
    }
  }
  return out;
}

double giou_loss(const BoxCxCyWh& pred, const BoxCxCyWh& gold) {
  return 1.0 - giou(to_xyxy(pred), to_xyxy(gold));
}

double l1_box(const BoxCxCyWh& pred, const BoxCxCyWh& gold) {
  return std::abs(pred.cx - gold.cx) + std::abs(pred.cy - gold.cy) + std::abs(pred.w - gold.w) +
         std::abs(pred.h - gold.h);
}

namespace {

void check_rows(const Tensor& pred, std::size_t n, const char* op) {
  if (pred.rank() != 2 || pred.dim(1) != 4 || pred.dim(0) != n) {
    throw DimensionError(std::string(op) + ": predictions " + shape_str(pred.shape()) +
                         " do not match " + std::to_string(n) + " gold boxes");
  }
}

BoxCxCyWh row_box(std::span<const double> v, std::size_t r) {
  return {v[r * 4], v[r * 4 + 1], v[r * 4 + 2], v[r * 4 + 3]};
}

}  // namespace

Tensor giou_loss_rows(const Tensor& pred, std::span<const BoxCxCyWh> gold) {
  check_rows(pred, gold.size(), "giou_loss_rows");
  const std::size_t n = gold.size();
  std::vector<double> out(n);
  std::vector<double> dpred(n * 4);
  for (std::size_t r = 0; r < n; ++r) {
    const GiouGrad g = giou_with_grad(to_xyxy(row_box(pred.data(), r)), to_xyxy(gold[r]));
    out[r] = 1.0 - g.value;
    // loss = 1 - giou; chain through x0 = cx - w/2, x1 = cx + w/2 (same for y).
    const auto& d = g.d_a;
    dpred[r * 4 + 0] = -(d[0] + d[2]);
    dpred[r * 4 + 1] = -(d[1] + d[3]);
    dpred[r * 4 + 2] = -0.5 * (d[2] - d[0]);
    dpred[r * 4 + 3] = -0.5 * (d[3] - d[1]);
  }
  return make_result("giou_loss_rows", {n}, std::move(out), {pred},
                     [dpred = std::move(dpred)](Node& self) {
                       auto& gx = self.inputs[0]->ensure_grad();
                       for (std::size_t i = 0; i < dpred.size(); ++i) gx[i] += self.grad[i / 4] * dpred[i];
                     });
}

Tensor l1_rows(const Tensor& pred, std::span<const BoxCxCyWh> gold) {
  check_rows(pred, gold.size(), "l1_rows");
  const std::size_t n = gold.size();
  std::vector<double> out(n);
  std::vector<double> sign(n * 4);
  const auto v = pred.data();
  for (std::size_t r = 0; r < n; ++r) {
    const double g[4] = {gold[r].cx, gold[r].cy, gold[r].w, gold[r].h};
    double s = 0.0;
    for (int k = 0; k < 4; ++k) {
      const double diff = v[r * 4 + k] - g[k];
      s += std::abs(diff);
      sign[r * 4 + k] = diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    }
    out[r] = s;
  }
  return make_result("l1_rows", {n}, std::move(out), {pred}, [sign = std::move(sign)](Node& self) {
    auto& gx = self.inputs[0]->ensure_grad();
    for (std::size_t i = 0; i < sign.size(); ++i) gx[i] += self.grad[i / 4] * sign[i];
  });
}

}  // namespace qeot::geometry
