#include "ctvio/prior.hpp"

#include <stdexcept>

namespace ctvio {

PriorFactor::PriorFactor(std::vector<BlockRef> blocks, std::vector<VecX> linearization, MatX sqrt_info,
                         VecX offset)
    : linearization_(std::move(linearization)), sqrt_info_(std::move(sqrt_info)), offset_(std::move(offset)) {
  blocks_ = std::move(blocks);
  if (linearization_.size() != blocks_.size()) {
    throw std::invalid_argument("PriorFactor: one linearization value per block required");
  }
  int cols = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (linearization_[i].size() != ambient_dim(blocks_[i].kind)) {
      throw std::invalid_argument("PriorFactor: linearization value size does not match block kind");
    }
    cols += tangent_dim(blocks_[i].kind);
  }
  if (sqrt_info_.rows() != offset_.size() || sqrt_info_.cols() != cols) {
    throw std::invalid_argument("PriorFactor: square-root information has the wrong shape");
  }
}

VecX PriorFactor::residual_at(const std::vector<VecX>& values) const {
  if (values.size() != blocks_.size()) throw std::invalid_argument("prior: block count mismatch");
  VecX dx(sqrt_info_.cols());
  int col = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (values[i].size() != ambient_dim(blocks_[i].kind)) {
      throw std::invalid_argument("prior: block " + std::to_string(i) + " has the wrong size");
    }
    const int n = tangent_dim(blocks_[i].kind);
    dx.segment(col, n) = local_difference(blocks_[i].kind, values[i].data(), linearization_[i].data());
    col += n;
  }
  return offset_ + sqrt_info_ * dx;
}

void PriorFactor::evaluate(VecX& residual, MatX* jacobian) const {
  VecX dx(sqrt_info_.cols());
  int col = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const int n = tangent_dim(blocks_[i].kind);
    dx.segment(col, n) = local_difference(blocks_[i].kind, blocks_[i].data, linearization_[i].data());
    col += n;
  }
  residual = offset_ + sqrt_info_ * dx;
  if (!jacobian) return;
  *jacobian = sqrt_info_;
  col = 0;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const int n = tangent_dim(blocks_[i].kind);
    if (blocks_[i].kind == BlockKind::kRotation) {
      const MatX lift = local_difference_jacobian(blocks_[i].kind, blocks_[i].data, linearization_[i].data());
      jacobian->middleCols(col, n) = sqrt_info_.middleCols(col, n) * lift;
    }
    col += n;
  }
}

}  // namespace ctvio
