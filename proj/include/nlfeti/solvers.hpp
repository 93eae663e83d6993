#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nlfeti/assembly.hpp"
#include "nlfeti/coarse_space.hpp"
#include "nlfeti/operators.hpp"

namespace nlfeti {

struct PcgReport {
  int iterations = 0;
  /// Preconditioned residual norms relative to the initial one.
  std::vector<double> residual_history;
  /// Extreme Ritz values of the Lanczos matrix built from the CG coefficients.
  double lambda_min = 1.0;
  double lambda_max = 1.0;
  double condition_estimate = 1.0;
  bool converged = false;
};

using LinearOperator = std::function<Vector(const Vector&)>;

struct PcgResult {
  Vector solution;
  PcgReport report;
};

/// Preconditioned conjugate gradients from a zero initial guess. Stops when
/// the preconditioned residual norm drops below rel_tol times its initial
/// value. Throws std::runtime_error when p^T A p <= 0 or the preconditioner
/// produces r^T z < 0.
PcgResult pcg(const LinearOperator& apply_op, const LinearOperator& apply_prec, const Vector& rhs, double rel_tol,
              int max_it);

struct SolverSettings {
  double newton_tol = 1e-8;
  double inner_tol = 1e-10;
  double pcg_tol = 1e-10;
  int max_outer = 50;
  int max_inner = 50;
  int max_pcg = 5000;
  /// Simple backtracking on the energy; off by default (plain Newton).
  bool line_search = false;
  /// NL-FETI-DP-2 outer loop: halve the multiplier update until the jump
  /// norm decreases (plain Newton in lambda overshoots on high-contrast p > 2
  /// problems).
  bool outer_damping = true;
  int max_damping = 10;
  /// Used when a tangent turns out singular and epsilon is zero.
  double epsilon_fallback = 1e-12;

  bool operator==(const SolverSettings&) const = default;
};

/// A discretized p-Laplace problem on a decomposition.
struct Problem {
  const Decomposition* decomposition = nullptr;
  CoefficientField field;
  double p = 4.0;
  double epsilon = 0.0;
  double source = 1.0;
  std::vector<LocalProblem> locals;

  const Decomposition& decomp() const { return *decomposition; }
  void set_epsilon(double eps);
  void set_source(double f);
};

Problem make_problem(const Decomposition& d, const CoefficientField& field, double p, double epsilon = 0.0);

/// u0(x, y) = x on the global dofs.
Vector initial_guess(const Decomposition& d);
std::vector<Vector> restrict_to_subdomains(const Decomposition& d, const Vector& global);
/// sum_i R_i^T v_i.
Vector assemble_from_subdomains(const Decomposition& d, const std::vector<Vector>& local);
/// Mean of the subdomain values at each node.
Vector average_from_subdomains(const Decomposition& d, const std::vector<Vector>& local);
std::vector<SparseMatrix> local_tangents(const Problem& problem, const std::vector<Vector>& local_u);

struct NewtonStep {
  double residual_norm = 0.0;
  int inner_iterations = 0;
  double step_length = 1.0;
  PcgReport pcg;
};

struct NewtonTrace {
  std::vector<NewtonStep> steps;
  int initial_inner = 0;  // inner iterations before the first outer step
  int outer = 0;
  int inner = 0;
  int pcg = 0;
  double min_cond = 0.0;
  double max_cond = 0.0;
  bool converged = false;

  void finalize();
};

struct SolveReport {
  std::string method;
  std::string coarse_label;
  int coarse_size = 0;
  NewtonTrace trace;
  Vector solution;  // global dofs
  double seconds = 0.0;
  bool epsilon_fallback = false;
};

struct LinearFetiResult {
  Vector solution;  // global dofs
  std::vector<Vector> local_solution;
  PcgReport report;
};

/// Linear FETI-DP for sum_i R_i^T K_i R_i x = sum_i R_i^T b_i.
LinearFetiResult linear_fetidp(const DualPrimalSpace& space, const ScaledJumpOperator& scaling,
                               const std::vector<SparseMatrix>& tangents, const std::vector<Vector>& local_rhs,
                               double pcg_tol, int max_pcg);

SolveReport nk_fetidp(const Problem& problem, const CoarseSpace& coarse, const SolverSettings& settings = {});
SolveReport nl_fetidp2(const Problem& problem, const CoarseSpace& coarse, const SolverSettings& settings = {});

/// Newton on the fully assembled system with a sparse direct solve per step.
Vector direct_reference_solve(const Problem& problem, const SolverSettings& settings = {});

double relative_l2(const Vector& a, const Vector& reference);

}  // namespace nlfeti
