#pragma once

#include <stdexcept>
#include <vector>

#include "stenet/ops.hpp"
#include "stenet/saliency.hpp"

namespace stenet::loss {

/// Floor applied to the arguments of both logarithms.
inline constexpr double kLogFloor = 1e-7;

struct LossBreakdown {
  Tensor bce;    // scalar
  Tensor iou;    // scalar
  Tensor total;  // bce + iou
  std::vector<Tensor> per_scale;  // one total per supervised map
  Tensor grand_total;             // sum of per_scale

  double bce_value() const { return bce.item(); }
  double iou_value() const { return iou.item(); }
  double total_value() const { return total.item(); }
  double grand_total_value() const { return grand_total.item(); }
};

/// Binary cross-entropy plus soft IoU between a prediction in (0, 1) and a
/// binary mask of the same shape.
inline LossBreakdown hybrid_loss(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    throw ShapeError("hybrid_loss: prediction " + to_string(pred.shape()) + " vs ground truth " +
                     to_string(gt.shape()));
  }
  for (double g : gt.data()) {
    if (g != 0.0 && g != 1.0) throw std::invalid_argument("hybrid_loss: ground truth must be binary");
  }
  const auto g = gt.detach();
  const auto not_g = affine(g, -1.0, 1.0);

  const auto log_s = log(clamp_min(pred, kLogFloor));
  const auto log_not_s = log(clamp_min(affine(pred, -1.0, 1.0), kLogFloor));
  LossBreakdown out;
  out.bce = affine(mean(g * log_s + not_g * log_not_s), -1.0);

  const auto inter = sum(pred * g);
  const auto uni = sum(pred + g - pred * g);
  out.iou = uni.item() == 0.0 ? Tensor::scalar(0.0) : affine(div(inter, uni), -1.0, 1.0);

  out.total = out.bce + out.iou;
  out.per_scale = {out.total};
  out.grand_total = out.total;
  return out;
}

/// Equal-weight sum of the hybrid loss over every supervised map.
inline LossBreakdown deep_supervision(const SaliencyOutput& out, const Tensor& gt) {
  LossBreakdown total;
  for (const auto& map : out.maps) {
    auto l = hybrid_loss(map, gt);
    total.bce = total.bce.defined() ? total.bce + l.bce : l.bce;
    total.iou = total.iou.defined() ? total.iou + l.iou : l.iou;
    total.per_scale.push_back(l.total);
  }
  total.grand_total = total.per_scale[0];
  for (std::size_t i = 1; i < total.per_scale.size(); ++i) total.grand_total = total.grand_total + total.per_scale[i];
  total.total = total.grand_total;
  return total;
}

}  // namespace stenet::loss
