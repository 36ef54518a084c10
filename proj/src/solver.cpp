#include "ctvio/solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>

namespace ctvio {

void Problem::add_parameter_block(double* data, BlockKind kind) {
  if (data == nullptr) throw std::invalid_argument("Problem: null parameter block");
  const auto it = index_.find(data);
  if (it != index_.end()) {
    if (blocks_[it->second].kind != kind) {
      throw std::invalid_argument("Problem: block re-registered with a different kind");
    }
    return;
  }
  index_.emplace(data, blocks_.size());
  blocks_.push_back({data, kind, false});
}

void Problem::add_factor(FactorPtr factor) {
  for (const BlockRef& b : factor->blocks()) {
    const auto it = index_.find(b.data);
    if (it == index_.end()) {
      throw std::invalid_argument("Problem: factor '" + std::string(factor->type()) +
                                  "' references an unregistered block");
    }
    if (blocks_[it->second].kind != b.kind) {
      throw std::invalid_argument("Problem: factor block kind disagrees with the registered block");
    }
  }
  factors_.push_back(std::move(factor));
}

void Problem::add_factor_and_blocks(FactorPtr factor) {
  for (const BlockRef& b : factor->blocks()) add_parameter_block(b.data, b.kind);
  add_factor(std::move(factor));
}

void Problem::set_constant(double* data, bool constant) {
  const auto it = index_.find(data);
  if (it == index_.end()) throw std::invalid_argument("Problem: set_constant on an unregistered block");
  blocks_[it->second].constant = constant;
}

bool Problem::is_constant(const double* data) const {
  const auto it = index_.find(data);
  return it != index_.end() && blocks_[it->second].constant;
}

namespace {

double factor_cost(const Factor& f, VecX& r) {
  f.evaluate(r, nullptr);
  return 0.5 * huber(r.squaredNorm(), f.loss_threshold()).rho;
}

double total_cost(const std::vector<FactorPtr>& factors) {
  double cost = 0.0;
  VecX r;
  for (const FactorPtr& f : factors) cost += factor_cost(*f, r);
  return cost;
}

}  // namespace

double Problem::cost() const { return total_cost(factors_); }

void ColumnLayout::append(const BlockRef& block) {
  if (offset.count(block.data)) return;
  offset.emplace(block.data, cols);
  cols += tangent_dim(block.kind);
}

int ColumnLayout::operator[](const double* data) const {
  const auto it = offset.find(data);
  return it == offset.end() ? -1 : it->second;
}

LinearSystem linearize(const std::vector<FactorPtr>& factors, const ColumnLayout& layout) {
  struct Segment {
    int col;  // in the factor Jacobian
    int dst;  // in H
    int n;
  };
  LinearSystem sys;
  sys.H.setZero(layout.cols, layout.cols);
  sys.g.setZero(layout.cols);
  VecX r;
  MatX J;
  std::vector<Segment> segs;
  for (const FactorPtr& f : factors) {
    f->evaluate(r, &J);
    const RobustWeight w = huber(r.squaredNorm(), f->loss_threshold());
    sys.cost += 0.5 * w.rho;

    // Keep the columns of variable blocks only.
    segs.clear();
    int col = 0;
    for (const BlockRef& b : f->blocks()) {
      const int n = tangent_dim(b.kind);
      const int off = layout[b.data];
      if (off >= 0) segs.push_back({col, off, n});
      col += n;
    }
    if (segs.empty()) continue;
    if (w.scale != 1.0) {
      J *= w.scale;
      r *= w.scale;
    }
    // Upper triangle in H coordinates; mirrored below.
    for (const Segment& a : segs) {
      const auto Ja = J.middleCols(a.col, a.n);
      sys.g.segment(a.dst, a.n) += Ja.transpose().lazyProduct(r);
      for (const Segment& b : segs) {
        if (b.dst < a.dst) continue;
        sys.H.block(a.dst, b.dst, a.n, b.n) += Ja.transpose().lazyProduct(J.middleCols(b.col, b.n));
      }
    }
  }
  sys.H.triangularView<Eigen::StrictlyLower>() = sys.H.transpose();
  return sys;
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::kFunctionTolerance: return "function_tolerance";
    case Termination::kGradientTolerance: return "gradient_tolerance";
    case Termination::kMaxIterations: return "max_iterations";
    case Termination::kNoProgress: return "no_progress";
    case Termination::kEmpty: return "empty";
  }
  return "unknown";
}

namespace {

struct VariableSet {
  std::vector<ParameterBlock> blocks;
  ColumnLayout layout;
  std::vector<int> landmark_cols;
  std::vector<int> other_cols;
};

VariableSet collect_variables(const Problem& problem, bool split_landmarks) {
  VariableSet v;
  for (const ParameterBlock& b : problem.parameter_blocks()) {
    if (b.constant) continue;
    v.blocks.push_back(b);
    const int off = v.layout.cols;
    v.layout.append({b.data, b.kind});
    for (int i = 0; i < tangent_dim(b.kind); ++i) {
      (split_landmarks && b.kind == BlockKind::kInverseDepth ? v.landmark_cols : v.other_cols).push_back(off + i);
    }
  }
  return v;
}

// Solves A dx = b where A is symmetric. Landmark columns are eliminated
// first when they are mutually uncoupled.
bool solve_damped(const MatX& A, const VecX& b, const VariableSet& vars, VecX& dx) {
  const auto& L = vars.landmark_cols;
  const auto& C = vars.other_cols;
  bool schur = !L.empty() && !C.empty();
  if (schur) {
    const MatX All = A(L, L);
    const VecX d = All.diagonal();
    schur = (All - MatX(d.asDiagonal())).cwiseAbs().maxCoeff() == 0.0 && d.minCoeff() > 0.0;
  }
  if (schur) {
    const VecX dinv = A(L, L).diagonal().cwiseInverse();
    const MatX Acl = A(C, L);
    const MatX Acl_scaled = Acl * dinv.asDiagonal();
    const MatX S = A(C, C) - Acl_scaled * Acl.transpose();
    const VecX rhs = b(C) - Acl_scaled * b(L);
    const Eigen::LDLT<MatX> ldlt(S);
    if (ldlt.info() != Eigen::Success) return false;
    const VecX dc = ldlt.solve(rhs);
    const VecX dl = dinv.cwiseProduct(b(L) - Acl.transpose() * dc);
    dx.resize(A.rows());
    dx(C) = dc;
    dx(L) = dl;
  } else {
    const Eigen::LDLT<MatX> ldlt(A);
    if (ldlt.info() != Eigen::Success) return false;
    dx = ldlt.solve(b);
  }
  return dx.allFinite();
}

std::vector<double> snapshot(const std::vector<ParameterBlock>& blocks) {
  std::vector<double> out;
  for (const ParameterBlock& b : blocks) out.insert(out.end(), b.data, b.data + ambient_dim(b.kind));
  return out;
}

void restore(const std::vector<ParameterBlock>& blocks, const std::vector<double>& values) {
  std::size_t i = 0;
  for (const ParameterBlock& b : blocks) {
    const int n = ambient_dim(b.kind);
    std::copy(values.begin() + i, values.begin() + i + n, b.data);
    i += n;
  }
}

// Positive inverse depths may shrink by at most `ratio` per step; the
// clamped entries are written back into dx.
void apply_step(const VariableSet& vars, VecX& dx, double ratio) {
  for (const ParameterBlock& b : vars.blocks) {
    double* step = dx.data() + vars.layout[b.data];
    if (b.kind == BlockKind::kInverseDepth && ratio > 0.0 && *b.data > 0.0) {
      *step = std::max(*step, (ratio - 1.0) * *b.data);
    }
    retract(b.kind, b.data, step);
  }
}

bool try_cost(const std::vector<FactorPtr>& factors, double& cost) {
  try {
    cost = total_cost(factors);
  } catch (const std::exception&) {
    return false;
  }
  return std::isfinite(cost);
}

}  // namespace

SolveReport solve(Problem& problem, const SolverOptions& options) {
  SolveReport report;
  const VariableSet vars = collect_variables(problem, options.schur_inverse_depths);
  double cost = 0.0;
  if (!try_cost(problem.factors(), cost)) throw std::runtime_error("solve: residual not finite at the initial point");
  report.initial_cost = report.final_cost = cost;
  if (vars.layout.cols == 0 || problem.factors().empty()) return report;

  double lambda = options.initial_lambda;
  double nu = 2.0;
  LinearSystem sys = linearize(problem.factors(), vars.layout);
  report.termination = Termination::kMaxIterations;
  while (report.iterations < options.max_iterations) {
    if (cost < options.min_cost) {
      report.termination = Termination::kFunctionTolerance;
      break;
    }
    if (sys.g.cwiseAbs().maxCoeff() < options.gradient_tolerance) {
      report.termination = Termination::kGradientTolerance;
      break;
    }
    ++report.iterations;

    const VecX D = sys.H.diagonal().cwiseMax(options.min_diagonal).cwiseMin(options.max_diagonal);
    MatX A = sys.H;
    A.diagonal() += lambda * D;
    VecX dx;
    const std::vector<double> saved = snapshot(vars.blocks);
    bool accepted = false;
    if (solve_damped(A, -sys.g, vars, dx)) {
      apply_step(vars, dx, options.inverse_depth_shrink);
      double new_cost = 0.0;
      const double model_decrease = -(sys.g.dot(dx) + 0.5 * dx.dot(sys.H * dx));
      if (model_decrease <= options.function_tolerance * 1e-6 * cost) {
        restore(vars.blocks, saved);
        report.termination = Termination::kFunctionTolerance;
        break;
      }
      if (try_cost(problem.factors(), new_cost) && new_cost <= cost) {
        const double actual = cost - new_cost;
        const double rho = model_decrease > 0.0 ? actual / model_decrease : 0.0;
        accepted = true;
        report.step_norms.push_back(dx.norm());
        report.costs.push_back(new_cost);
        const double prev = cost;
        cost = new_cost;
        lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        if (actual <= options.function_tolerance * prev) {
          report.termination = Termination::kFunctionTolerance;
          break;
        }
        sys = linearize(problem.factors(), vars.layout);
      } else {
        restore(vars.blocks, saved);
      }
    }
    if (!accepted) {
      lambda = lambda == 0.0 ? 1e-4 : lambda * nu;
      nu *= 2.0;
      if (lambda > 1e32) {
        report.termination = Termination::kNoProgress;
        break;
      }
    }
  }
  report.final_cost = cost;
  return report;
}

}  // namespace ctvio
