#pragma once

#include <memory>
#include <string_view>
#include <vector>

#include "ctvio/types.hpp"

namespace ctvio {

/// Kinds of optimization variables. Rotations are stored as 3x3 matrices
/// (9 doubles, column-major) and updated on the right tangent space; all
/// other kinds are Euclidean.
enum class BlockKind { kRotation, kPosition, kBiasGyro, kBiasAccel, kInverseDepth, kLineDelay };

int tangent_dim(BlockKind kind);
int ambient_dim(BlockKind kind);
std::string_view to_string(BlockKind kind);

/// Non-owning reference to a parameter block living in estimator state.
struct BlockRef {
  double* data = nullptr;
  BlockKind kind = BlockKind::kPosition;

  bool operator==(const BlockRef& other) const { return data == other.data; }
};

/// x <- x [+] delta (right-multiplicative exponential for rotations).
void retract(BlockKind kind, double* x, const double* delta);

/// Tangent-space difference x [-] x0, Log(R0^T R) for rotations.
VecX local_difference(BlockKind kind, const double* x, const double* x0);

/// d(x [-] x0)/d(delta) where x is perturbed as x [+] delta.
MatX local_difference_jacobian(BlockKind kind, const double* x, const double* x0);

VecX copy_block(const BlockRef& block);

/// A residual term of the sliding-window cost. Residuals are returned
/// already whitened by the factor's noise model. The Jacobian is stacked
/// over the blocks in blocks() order, columns in tangent coordinates.
///
/// Evaluation is const and reads parameter memory only; any number of
/// factors may be evaluated concurrently as long as nobody writes the
/// parameters meanwhile.
class Factor {
 public:
  virtual ~Factor() = default;

  virtual std::string_view type() const = 0;
  virtual int residual_dim() const = 0;
  virtual void evaluate(VecX& residual, MatX* jacobian) const = 0;

  /// Huber threshold on the whitened residual norm, 0 for plain squares.
  virtual double loss_threshold() const { return 0.0; }

  const std::vector<BlockRef>& blocks() const { return blocks_; }
  int jacobian_cols() const;

 protected:
  std::vector<BlockRef> blocks_;
};

using FactorPtr = std::shared_ptr<const Factor>;

/// Huber robustification: returns rho(s) for s = |r|^2 and the sqrt(rho')
/// scale applied to residual and Jacobian in the linearized model.
struct RobustWeight {
  double rho = 0.0;
  double scale = 1.0;
};
RobustWeight huber(double squared_norm, double threshold);

}  // namespace ctvio
