#include "nlfeti/assembly.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace nlfeti {

LocalProblem::LocalProblem(const std::vector<Point>& coords, const std::vector<std::array<int, 3>>& elements,
                           const std::vector<std::array<int, 3>>& element_dofs, std::vector<double> coefficients,
                           int num_dofs, double p, double epsilon)
    : dofs_(element_dofs), alpha_(std::move(coefficients)), num_dofs_(num_dofs), p_(p), epsilon_(epsilon) {
  if (p < 2.0) throw std::invalid_argument("LocalProblem: exponent p must be >= 2");
  if (epsilon < 0.0) throw std::invalid_argument("LocalProblem: epsilon must be nonnegative");
  if (elements.size() != element_dofs.size() || elements.size() != alpha_.size())
    throw std::invalid_argument("LocalProblem: element, dof and coefficient counts differ");

  geometry_.resize(elements.size());
  for (std::size_t e = 0; e < elements.size(); ++e) {
    const Point& a = coords[elements[e][0]];
    const Point& b = coords[elements[e][1]];
    const Point& c = coords[elements[e][2]];
    const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if (std::abs(det) <= 0.0) throw std::invalid_argument("LocalProblem: degenerate triangle");
    auto& g = geometry_[e];
    g.area = 0.5 * std::abs(det);
    g.grad << (b.y - c.y), (c.y - a.y), (a.y - b.y),  //
        (c.x - b.x), (a.x - c.x), (b.x - a.x);
    g.grad /= det;
  }
}

void LocalProblem::check_size(const Vector& u) const {
  if (u.size() != num_dofs_)
    throw std::invalid_argument("LocalProblem: vector of size " + std::to_string(u.size()) + ", expected " +
                                std::to_string(num_dofs_));
}

Eigen::Vector2d LocalProblem::gradient(std::size_t e, const Vector& u) const {
  Eigen::Vector3d ue;
  for (int k = 0; k < 3; ++k) ue[k] = dofs_[e][k] >= 0 ? u[dofs_[e][k]] : 0.0;
  return geometry_[e].grad * ue;
}

Vector LocalProblem::internal_force(const Vector& u) const {
  check_size(u);
  Vector r = Vector::Zero(num_dofs_);
  for (std::size_t e = 0; e < geometry_.size(); ++e) {
    const Eigen::Vector2d gu = gradient(e, u);
    const double g = gu.squaredNorm() + epsilon_;
    const double flux_scale = alpha_[e] * std::pow(g, 0.5 * (p_ - 2.0)) * geometry_[e].area;
    const Eigen::Vector3d re = flux_scale * (geometry_[e].grad.transpose() * gu);
    for (int k = 0; k < 3; ++k)
      if (dofs_[e][k] >= 0) r[dofs_[e][k]] += re[k];
  }
  return r;
}

Vector LocalProblem::internal_force_magnitude(const Vector& u) const {
  check_size(u);
  Vector r = Vector::Zero(num_dofs_);
  for (std::size_t e = 0; e < geometry_.size(); ++e) {
    Eigen::Vector3d ue;
    for (int k = 0; k < 3; ++k) ue[k] = dofs_[e][k] >= 0 ? std::abs(u[dofs_[e][k]]) : 0.0;
    const Eigen::Vector2d gu = gradient(e, u);
    const double g = gu.squaredNorm() + epsilon_;
    const double flux_scale = alpha_[e] * std::pow(g, 0.5 * (p_ - 2.0)) * geometry_[e].area;
    const Eigen::Matrix<double, 2, 3> ag = geometry_[e].grad.cwiseAbs();
    const Eigen::Vector3d re = flux_scale * (ag.transpose() * (ag * ue));
    for (int k = 0; k < 3; ++k)
      if (dofs_[e][k] >= 0) r[dofs_[e][k]] += re[k];
  }
  return r;
}

Vector LocalProblem::residual(const Vector& u) const { return internal_force(u) - load(); }

SparseMatrix LocalProblem::tangent(const Vector& u) const {
  check_size(u);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(9 * geometry_.size());
  for (std::size_t e = 0; e < geometry_.size(); ++e) {
    const Eigen::Vector2d gu = gradient(e, u);
    const double g = gu.squaredNorm() + epsilon_;
    // alpha g^{(p-2)/2} (I + (p-2) grad u grad u^T / g); the second term
    // vanishes continuously as g -> 0 for p >= 2.
    const double c0 = std::pow(g, 0.5 * (p_ - 2.0));
    const double c1 = (p_ > 2.0 && g > 0.0) ? (p_ - 2.0) * std::pow(g, 0.5 * (p_ - 4.0)) : 0.0;
    const Eigen::Matrix2d metric = alpha_[e] * (c0 * Eigen::Matrix2d::Identity() + c1 * gu * gu.transpose());
    const Eigen::Matrix3d ke = geometry_[e].area * geometry_[e].grad.transpose() * metric * geometry_[e].grad;
    for (int a = 0; a < 3; ++a) {
      if (dofs_[e][a] < 0) continue;
      for (int b = 0; b < 3; ++b)
        if (dofs_[e][b] >= 0) triplets.emplace_back(dofs_[e][a], dofs_[e][b], ke(a, b));
    }
  }
  SparseMatrix k(num_dofs_, num_dofs_);
  k.setFromTriplets(triplets.begin(), triplets.end());
  return k;
}

Vector LocalProblem::load() const {
  Vector f = Vector::Zero(num_dofs_);
  for (std::size_t e = 0; e < geometry_.size(); ++e)
    for (int k = 0; k < 3; ++k)
      if (dofs_[e][k] >= 0) f[dofs_[e][k]] += source_ * geometry_[e].area / 3.0;
  return f;
}

double LocalProblem::energy(const Vector& u) const {
  check_size(u);
  double w = 0.0;
  for (std::size_t e = 0; e < geometry_.size(); ++e) {
    const double g = gradient(e, u).squaredNorm() + epsilon_;
    w += alpha_[e] / p_ * std::pow(g, 0.5 * p_) * geometry_[e].area;
  }
  return w - load().dot(u);
}

LocalProblem make_local_problem(const Decomposition& d, const CoefficientField& field, int sd, double p,
                                double epsilon) {
  const auto& elems = d.mesh.subdomain_elements.at(sd);
  std::vector<std::array<int, 3>> nodes;
  std::vector<double> alpha;
  nodes.reserve(elems.size());
  alpha.reserve(elems.size());
  for (int e : elems) {
    nodes.push_back(d.mesh.elements[e]);
    alpha.push_back(field.values.at(e));
  }
  const auto& layout = d.partition[sd];
  return LocalProblem(d.mesh.nodes, nodes, layout.element_dofs, std::move(alpha), layout.num_dofs(), p, epsilon);
}

LocalProblem make_global_problem(const Decomposition& d, const CoefficientField& field, double p,
                                 double epsilon) {
  std::vector<std::array<int, 3>> dofs(d.mesh.elements.size());
  for (std::size_t e = 0; e < d.mesh.elements.size(); ++e)
    for (int k = 0; k < 3; ++k) dofs[e][k] = d.global_dof[d.mesh.elements[e][k]];
  return LocalProblem(d.mesh.nodes, d.mesh.elements, dofs, field.values, d.num_global_dofs, p, epsilon);
}

}  // namespace nlfeti
