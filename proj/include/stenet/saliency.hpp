#pragma once

#include <array>

#include "stenet/tensor.hpp"

namespace stenet {

/// Per-stage saliency maps at input resolution, finest first:
/// maps[0] is SM^1 (the prediction), maps[3] is SM^4.
struct SaliencyOutput {
  std::array<Tensor, 4> maps;

  const Tensor& final_map() const { return maps[0]; }
  const Tensor& stage(std::size_t i) const { return maps.at(i - 1); }
};

}  // namespace stenet
