#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ctvio/factor.hpp"

namespace ctvio {

struct ParameterBlock {
  double* data = nullptr;
  BlockKind kind = BlockKind::kPosition;
  bool constant = false;
};

/// Sliding-window least-squares problem: registered parameter blocks plus
/// the factors over them. Parameter memory is owned by the caller.
class Problem {
 public:
  /// Registers a block; re-registering the same pointer is a no-op but the
  /// kind must agree.
  void add_parameter_block(double* data, BlockKind kind);
  /// Registers all of the factor's blocks that are not yet known.
  void add_factor_and_blocks(FactorPtr factor);
  /// Throws std::invalid_argument if one of the factor's blocks is unknown.
  void add_factor(FactorPtr factor);
  void set_constant(double* data, bool constant = true);

  bool has_block(const double* data) const { return index_.count(data) != 0; }
  bool is_constant(const double* data) const;
  const std::vector<ParameterBlock>& parameter_blocks() const { return blocks_; }
  const std::vector<FactorPtr>& factors() const { return factors_; }

  /// 1/2 sum of robustified squared residual norms at the current values.
  double cost() const;

 private:
  std::vector<ParameterBlock> blocks_;
  std::unordered_map<const double*, std::size_t> index_;
  std::vector<FactorPtr> factors_;
};

/// Normal equations H dx = -g of the whitened, robustified stacked residual
/// about the current values; columns follow `layout` in tangent coordinates.
struct LinearSystem {
  MatX H;
  VecX g;  // gradient J^T r
  double cost = 0.0;
};

/// Tangent column offset of every variable block, -1 for excluded ones.
struct ColumnLayout {
  std::unordered_map<const double*, int> offset;
  int cols = 0;

  void append(const BlockRef& block);
  int operator[](const double* data) const;
};

LinearSystem linearize(const std::vector<FactorPtr>& factors, const ColumnLayout& layout);

enum class Termination { kFunctionTolerance, kGradientTolerance, kMaxIterations, kNoProgress, kEmpty };
std::string to_string(Termination t);

struct SolverOptions {
  int max_iterations = 20;
  double function_tolerance = 1e-8;  // relative cost decrease
  double gradient_tolerance = 1e-10;  // max-norm of the gradient
  double min_cost = 1e-16;            // absolute; a smaller cost counts as converged
  double initial_lambda = 1e-4;       // 0 gives an undamped first step
  double min_diagonal = 1e-6;
  double max_diagonal = 1e32;
  bool schur_inverse_depths = true;
  // Lower bound on new / old for positive inverse depths (0 disables).
  double inverse_depth_shrink = 0.1;
};

struct SolveReport {
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  Termination termination = Termination::kEmpty;
  std::vector<double> step_norms;  // one per accepted step
  std::vector<double> costs;       // cost after each accepted step
};

/// Levenberg-Marquardt with right-multiplicative retraction on rotations.
/// Throws std::runtime_error if the initial residual is not finite. Trial
/// points whose evaluation fails (non-finite values, cheirality) count as
/// rejected steps.
SolveReport solve(Problem& problem, const SolverOptions& options = {});

}  // namespace ctvio
