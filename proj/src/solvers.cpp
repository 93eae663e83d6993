#include "nlfeti/solvers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace nlfeti {

PcgResult pcg(const LinearOperator& apply_op, const LinearOperator& apply_prec, const Vector& rhs, double rel_tol,
              int max_it) {
  PcgResult out;
  out.solution = Vector::Zero(rhs.size());
  auto& rep = out.report;
  Vector r = rhs;
  if (r.norm() == 0.0) {
    rep.converged = true;
    rep.residual_history.push_back(0.0);
    return out;
  }
  Vector z = apply_prec(r);
  double rz = r.dot(z);
  if (!(rz > 0.0)) throw std::runtime_error("pcg: preconditioner is not positive definite (r^T z <= 0)");
  const double norm0 = std::sqrt(rz);
  rep.residual_history.push_back(1.0);
  Vector p = z;
  std::vector<double> alphas;
  std::vector<double> betas;
  for (int k = 0; k < max_it; ++k) {
    const Vector q = apply_op(p);
    const double pq = p.dot(q);
    if (!(pq > 0.0))
      throw std::runtime_error("pcg: breakdown, p^T A p <= 0 (operator indefinite) at iteration " +
                               std::to_string(k));
    const double alpha = rz / pq;
    out.solution += alpha * p;
    r -= alpha * q;
    alphas.push_back(alpha);
    z = apply_prec(r);
    const double rz_new = r.dot(z);
    if (rz_new < 0.0) throw std::runtime_error("pcg: preconditioner is not positive definite (r^T z < 0)");
    const double rel = std::sqrt(rz_new) / norm0;
    rep.residual_history.push_back(rel);
    rep.iterations = k + 1;
    if (rel <= rel_tol) {
      rep.converged = true;
      break;
    }
    const double beta = rz_new / rz;
    betas.push_back(beta);
    p = z + beta * p;
    rz = rz_new;
  }

  const auto n = static_cast<Eigen::Index>(alphas.size());
  Vector diag(n);
  Vector off(std::max<Eigen::Index>(n - 1, 0));
  for (Eigen::Index j = 0; j < n; ++j) {
    diag[j] = 1.0 / alphas[j];
    if (j > 0) diag[j] += betas[j - 1] / alphas[j - 1];
    if (j + 1 < n) off[j] = std::sqrt(betas[j]) / alphas[j];
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es;
  es.computeFromTridiagonal(diag, off, Eigen::EigenvaluesOnly);
  rep.lambda_min = es.eigenvalues().minCoeff();
  rep.lambda_max = es.eigenvalues().maxCoeff();
  rep.condition_estimate = rep.lambda_max / rep.lambda_min;
  return out;
}

void Problem::set_epsilon(double eps) {
  epsilon = eps;
  for (auto& l : locals) l.set_epsilon(eps);
}

void Problem::set_source(double f) {
  source = f;
  for (auto& l : locals) l.set_source(f);
}

Problem make_problem(const Decomposition& d, const CoefficientField& field, double p, double epsilon) {
  if (field.values.size() != d.mesh.elements.size())
    throw std::invalid_argument("make_problem: coefficient field does not match the mesh");
  Problem prob;
  prob.decomposition = &d;
  prob.field = field;
  prob.p = p;
  prob.epsilon = epsilon;
  for (int i = 0; i < d.num_subdomains(); ++i) prob.locals.push_back(make_local_problem(d, field, i, p, epsilon));
  return prob;
}

Vector initial_guess(const Decomposition& d) {
  Vector u(d.num_global_dofs);
  for (std::size_t g = 0; g < d.mesh.nodes.size(); ++g)
    if (d.global_dof[g] >= 0) u[d.global_dof[g]] = d.mesh.nodes[g].x;
  return u;
}

std::vector<Vector> restrict_to_subdomains(const Decomposition& d, const Vector& global) {
  std::vector<Vector> out(d.num_subdomains());
  for (int i = 0; i < d.num_subdomains(); ++i) {
    const auto& nodes = d.partition[i].dof_nodes;
    out[i].resize(static_cast<Eigen::Index>(nodes.size()));
    for (std::size_t a = 0; a < nodes.size(); ++a) out[i][a] = global[d.global_dof[nodes[a]]];
  }
  return out;
}

Vector assemble_from_subdomains(const Decomposition& d, const std::vector<Vector>& local) {
  Vector out = Vector::Zero(d.num_global_dofs);
  for (int i = 0; i < d.num_subdomains(); ++i) {
    const auto& nodes = d.partition[i].dof_nodes;
    for (std::size_t a = 0; a < nodes.size(); ++a) out[d.global_dof[nodes[a]]] += local[i][a];
  }
  return out;
}

Vector average_from_subdomains(const Decomposition& d, const std::vector<Vector>& local) {
  Vector sum = assemble_from_subdomains(d, local);
  std::vector<Vector> ones(d.num_subdomains());
  for (int i = 0; i < d.num_subdomains(); ++i) ones[i] = Vector::Ones(d.partition[i].num_dofs());
  return sum.cwiseQuotient(assemble_from_subdomains(d, ones));
}

std::vector<SparseMatrix> local_tangents(const Problem& problem, const std::vector<Vector>& local_u) {
  std::vector<SparseMatrix> out;
  out.reserve(problem.locals.size());
  for (std::size_t i = 0; i < problem.locals.size(); ++i) out.push_back(problem.locals[i].tangent(local_u[i]));
  return out;
}

void NewtonTrace::finalize() {
  outer = static_cast<int>(steps.size());
  inner = initial_inner;
  pcg = 0;
  min_cond = std::numeric_limits<double>::infinity();
  max_cond = 0.0;
  for (const auto& s : steps) {
    inner += s.inner_iterations;
    pcg += s.pcg.iterations;
    if (s.pcg.iterations > 0) {
      min_cond = std::min(min_cond, s.pcg.condition_estimate);
      max_cond = std::max(max_cond, s.pcg.condition_estimate);
    }
  }
  if (max_cond == 0.0) min_cond = max_cond = 1.0;
}

double relative_l2(const Vector& a, const Vector& reference) {
  const double ref = reference.norm();
  return ref > 0.0 ? (a - reference).norm() / ref : (a - reference).norm();
}

LinearFetiResult linear_fetidp(const DualPrimalSpace& space, const ScaledJumpOperator& scaling,
                               const std::vector<SparseMatrix>& tangents, const std::vector<Vector>& local_rhs,
                               double pcg_tol, int max_pcg) {
  const PartialTangent k(space, tangents);
  const DirichletPreconditioner m(k, scaling);
  const PartialVector rhs = space.assemble(local_rhs);
  const Vector d = space.jump(k.solve(rhs));
  auto res = pcg([&](const Vector& v) { return k.apply_F(v); }, [&](const Vector& v) { return m.apply(v); }, d,
                 pcg_tol, max_pcg);
  PartialVector x = rhs;
  x -= space.jump_transpose(res.solution);
  x = k.solve(x);
  LinearFetiResult out;
  out.local_solution = space.to_local_original(x);
  out.solution = average_from_subdomains(space.decomposition(), out.local_solution);
  out.report = std::move(res.report);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Runs `body`; on a singular tangent with epsilon == 0, switches the problem
// to the fallback regularization and retries once.
template <class Body>
auto with_epsilon_fallback(Problem& problem, const SolverSettings& settings, bool& used, Body&& body) {
  try {
    return body();
  } catch (const FactorizationError&) {
    if (problem.epsilon > 0.0 || used) throw;
    used = true;
    problem.set_epsilon(settings.epsilon_fallback);
    return body();
  }
}

double total_energy(const Problem& problem, const std::vector<Vector>& local_u) {
  double w = 0.0;
  for (std::size_t i = 0; i < local_u.size(); ++i) w += problem.locals[i].energy(local_u[i]);
  return w;
}

}  // namespace

SolveReport nk_fetidp(const Problem& problem_in, const CoarseSpace& coarse, const SolverSettings& settings) {
  const auto t0 = Clock::now();
  Problem problem = problem_in;
  const Decomposition& d = problem.decomp();
  const DualPrimalSpace space(d, coarse);
  const ScaledJumpOperator scaling(space, problem.field);

  SolveReport rep;
  rep.method = "NK-FETI-DP";
  rep.coarse_label = coarse.label;
  rep.coarse_size = coarse.size();

  Vector u = initial_guess(d);
  auto residuals = [&](const Vector& v) {
    const auto local = restrict_to_subdomains(d, v);
    std::vector<Vector> r(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) r[i] = problem.locals[i].residual(local[i]);
    return r;
  };
  double r0 = -1.0;
  for (int outer = 0;; ++outer) {
    auto r = residuals(u);
    const double rn = assemble_from_subdomains(d, r).norm();
    if (r0 < 0.0) r0 = rn;
    if (rn <= settings.newton_tol * r0 || rn == 0.0) {
      rep.trace.converged = true;
      break;
    }
    if (outer >= settings.max_outer) break;
    NewtonStep step;
    step.residual_norm = rn;
    const auto result = with_epsilon_fallback(problem, settings, rep.epsilon_fallback, [&] {
      r = residuals(u);
      std::vector<Vector> rhs(r.size());
      for (std::size_t i = 0; i < r.size(); ++i) rhs[i] = -r[i];
      return linear_fetidp(space, scaling, local_tangents(problem, restrict_to_subdomains(d, u)), rhs,
                           settings.pcg_tol, settings.max_pcg);
    });
    double t = 1.0;
    if (settings.line_search) {
      const double e0 = total_energy(problem, restrict_to_subdomains(d, u));
      while (t > 1e-4 && total_energy(problem, restrict_to_subdomains(d, u + t * result.solution)) > e0) t *= 0.5;
    }
    u += t * result.solution;
    step.pcg = result.report;
    rep.trace.steps.push_back(std::move(step));
  }
  rep.trace.finalize();
  rep.solution = std::move(u);
  rep.seconds = seconds_since(t0);
  return rep;
}

SolveReport nl_fetidp2(const Problem& problem_in, const CoarseSpace& coarse, const SolverSettings& settings) {
  const auto t0 = Clock::now();
  Problem problem = problem_in;
  const Decomposition& d = problem.decomp();
  const DualPrimalSpace space(d, coarse);
  const ScaledJumpOperator scaling(space, problem.field);

  SolveReport rep;
  rep.method = "NL-FETI-DP-2";
  rep.coarse_label = coarse.label;
  rep.coarse_size = coarse.size();

  std::vector<Vector> loads;
  for (const auto& l : problem.locals) loads.push_back(l.load());
  const PartialVector f = space.assemble(loads);

  PartialVector u = space.inject(restrict_to_subdomains(d, initial_guess(d)));
  Vector lambda = Vector::Zero(space.num_multipliers());

  auto internal = [&](const PartialVector& v) {
    const auto local = space.to_local_original(v);
    std::vector<Vector> k(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) k[i] = problem.locals[i].internal_force(local[i]);
    return space.assemble(k);
  };
  // Size of the rounding error in K~(v): the residual cannot be driven below
  // a modest multiple (backward error of the sparse solve) of eps * sum_e |K_e||v_e|.
  auto rounding_floor = [&](const PartialVector& v) {
    const auto local = space.to_local_original(v);
    std::vector<Vector> m(local.size());
    for (std::size_t i = 0; i < local.size(); ++i) m[i] = problem.locals[i].internal_force_magnitude(local[i]);
    return 256.0 * std::numeric_limits<double>::epsilon() * space.assemble(m).norm();
  };
  // sum_i J_i(u_i) already contains -f~.u; shift it to the current rhs.
  auto inner_energy = [&](const PartialVector& v, const PartialVector& rhs) {
    return total_energy(problem, space.to_local_original(v)) + f.dot(v) - rhs.dot(v);
  };

  // Newton on K~(u) + R^T B^T lambda - f~ = 0 for the current lambda; adds
  // the iterations taken to `count`. After a multiplier update at least one
  // step is taken: a small update can leave the residual under the rounding
  // floor without u ever seeing it.
  auto inner_solve = [&](int& count, int min_steps) {
    PartialVector rhs = f;
    rhs -= space.jump_transpose(lambda);
    const double scale = std::max(rhs.norm(), std::numeric_limits<double>::min());
    for (int it = 0;; ++it) {
      PartialVector res = internal(u);
      res -= rhs;
      if (it >= min_steps && res.norm() <= std::max(settings.inner_tol * scale, rounding_floor(u))) return;
      if (it >= settings.max_inner)
        throw std::runtime_error("nl_fetidp2: inner Newton did not converge in " +
                                 std::to_string(settings.max_inner) + " iterations");
      PartialVector delta = with_epsilon_fallback(problem, settings, rep.epsilon_fallback, [&] {
        const PartialTangent k(space, local_tangents(problem, space.to_local_original(u)));
        return k.solve(res);
      });
      double t = 1.0;
      if (settings.line_search) {
        auto energy = [&](const PartialVector& v) { return inner_energy(v, rhs); };
        const double e0 = energy(u);
        for (;;) {
          PartialVector trial = delta;
          trial *= -t;
          trial += u;
          if (energy(trial) <= e0 || t <= 1e-4) break;
          t *= 0.5;
        }
      }
      delta *= t;
      u -= delta;
      ++count;
      if (delta.norm() <= 1e-14 * u.norm()) return;
    }
  };

  inner_solve(rep.trace.initial_inner, 0);
  Vector jump = space.jump(u);
  const double g0 = jump.norm();
  for (int outer = 0;; ++outer) {
    const double gn = jump.norm();
    if (gn <= settings.newton_tol * g0 || gn == 0.0) {
      rep.trace.converged = true;
      break;
    }
    if (outer >= settings.max_outer) break;
    NewtonStep step;
    step.residual_norm = gn;
    auto res = with_epsilon_fallback(problem, settings, rep.epsilon_fallback, [&] {
      const PartialTangent k(space, local_tangents(problem, space.to_local_original(u)));
      const DirichletPreconditioner m(k, scaling);
      return pcg([&](const Vector& v) { return k.apply_F(v); }, [&](const Vector& v) { return m.apply(v); }, jump,
                 settings.pcg_tol, settings.max_pcg);
    });
    step.pcg = std::move(res.report);
    // Damped update: halve the step until the Armijo condition on |G|^2 / 2
    // holds (slope -|G|^2 along the Newton direction, c = 1/4). Inner
    // iterations of rejected trials are counted too.
    const PartialVector u_prev = u;
    const Vector lambda_prev = lambda;
    double t = 1.0;
    for (int trial = 0;; ++trial) {
      lambda = lambda_prev + t * res.solution;
      bool ok = true;
      try {
        inner_solve(step.inner_iterations, 1);
      } catch (const std::runtime_error&) {
        if (!settings.outer_damping || trial >= settings.max_damping) throw;
        ok = false;
      }
      if (ok) {
        jump = space.jump(u);
        if (!settings.outer_damping || jump.norm() <= std::sqrt(1.0 - 0.5 * t) * gn || trial >= settings.max_damping) break;
      }
      u = u_prev;
      t *= 0.5;
    }
    step.step_length = t;
    rep.trace.steps.push_back(std::move(step));
  }
  rep.trace.finalize();
  rep.solution = average_from_subdomains(d, space.to_local_original(u));
  rep.seconds = seconds_since(t0);
  return rep;
}

Vector direct_reference_solve(const Problem& problem, const SolverSettings& settings) {
  const Decomposition& d = problem.decomp();
  LocalProblem global = make_global_problem(d, problem.field, problem.p, problem.epsilon);
  global.set_source(problem.source);
  Vector u = initial_guess(d);
  double r0 = -1.0;
  bool fallback_used = false;
  for (int it = 0;; ++it) {
    const Vector r = global.residual(u);
    const double rn = r.norm();
    if (r0 < 0.0) r0 = rn;
    if (rn <= settings.newton_tol * r0 || rn == 0.0) return u;
    if (it >= settings.max_outer)
      throw std::runtime_error("direct_reference_solve: Newton did not converge in " +
                               std::to_string(settings.max_outer) + " iterations");
    Eigen::SimplicialLDLT<SparseMatrix> solver(global.tangent(u));
    const bool singular = solver.info() != Eigen::Success ||
                          !(solver.vectorD().minCoeff() > 1e-14 * solver.vectorD().cwiseAbs().maxCoeff());
    if (singular) {
      if (global.epsilon() > 0.0 || fallback_used)
        throw std::runtime_error("direct_reference_solve: singular tangent");
      fallback_used = true;
      global.set_epsilon(settings.epsilon_fallback);
      --it;
      continue;
    }
    const Vector delta = solver.solve(r);
    double t = 1.0;
    if (settings.line_search) {
      const double e0 = global.energy(u);
      while (t > 1e-4 && global.energy(u - t * delta) > e0) t *= 0.5;
    }
    u -= t * delta;
  }
}

}  // namespace nlfeti
