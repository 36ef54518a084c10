#pragma once

#include <vector>

#include "ctvio/factor.hpp"

namespace ctvio {

/// Gaussian prior left behind by marginalization:
///   r = offset + S (x [-] x0)
/// with S upper triangular (nonnegative diagonal) and x0 the stacked block
/// values at marginalization time. The linearization point is never updated.
class PriorFactor final : public Factor {
 public:
  PriorFactor() = default;
  /// `linearization` holds one ambient-size vector per block.
  PriorFactor(std::vector<BlockRef> blocks, std::vector<VecX> linearization, MatX sqrt_info, VecX offset);

  std::string_view type() const override { return "prior"; }
  int residual_dim() const override { return static_cast<int>(offset_.size()); }
  void evaluate(VecX& residual, MatX* jacobian) const override;

  bool empty() const { return offset_.size() == 0; }
  const std::vector<VecX>& linearization() const { return linearization_; }
  const MatX& sqrt_info() const { return sqrt_info_; }
  const VecX& offset() const { return offset_; }

  /// Residual for explicitly supplied block values (ambient, one per block).
  /// Throws std::invalid_argument on a layout mismatch.
  VecX residual_at(const std::vector<VecX>& values) const;

 private:
  std::vector<VecX> linearization_;
  MatX sqrt_info_;
  VecX offset_;
};

}  // namespace ctvio
