#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "nlfeti/coefficients.hpp"
#include "nlfeti/geometry.hpp"

namespace nlfeti {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// P1 discretization of -div(alpha |grad u|^{p-2} grad u) = f on a set of
/// triangles, f constant. Nodes mapped to dof -1 carry the homogeneous Dirichlet value.
class LocalProblem {
 public:
  LocalProblem(const std::vector<Point>& coords, const std::vector<std::array<int, 3>>& elements,
               const std::vector<std::array<int, 3>>& element_dofs, std::vector<double> coefficients,
               int num_dofs, double p, double epsilon = 0.0);

  int num_dofs() const { return num_dofs_; }
  double p() const { return p_; }
  double epsilon() const { return epsilon_; }
  void set_epsilon(double eps) { epsilon_ = eps; }
  /// Constant right-hand side f (1 unless changed).
  double source() const { return source_; }
  void set_source(double f) { source_ = f; }

  /// K(u) - f.
  Vector residual(const Vector& u) const;
  /// K(u) alone.
  Vector internal_force(const Vector& u) const;
  /// sum_e |K_e(u)| |u_e| with absolute values taken entrywise; the scale of
  /// rounding errors in K(u) and in solves with the tangent.
  Vector internal_force_magnitude(const Vector& u) const;
  SparseMatrix tangent(const Vector& u) const;
  Vector load() const;
  /// sum_e alpha_e / p * (|grad u|^2 + eps)^{p/2} * area - f.u
  double energy(const Vector& u) const;

 private:
  struct ElementGeometry {
    Eigen::Matrix<double, 2, 3> grad;  // gradients of the three hat functions
    double area = 0.0;
  };

  Eigen::Vector2d gradient(std::size_t e, const Vector& u) const;
  void check_size(const Vector& u) const;

  std::vector<ElementGeometry> geometry_;
  std::vector<std::array<int, 3>> dofs_;
  std::vector<double> alpha_;
  int num_dofs_;
  double p_;
  double epsilon_;
  double source_ = 1.0;
};

/// Subdomain problem `sd` of a decomposition.
LocalProblem make_local_problem(const Decomposition& d, const CoefficientField& field, int sd, double p,
                                double epsilon = 0.0);
/// The undecomposed problem over all non-Dirichlet nodes.
LocalProblem make_global_problem(const Decomposition& d, const CoefficientField& field, double p,
                                 double epsilon = 0.0);

}  // namespace nlfeti
