#include "nlfeti/operators.hpp"

#include <algorithm>

#include <Eigen/QR>

namespace nlfeti {

ConstraintTransform build_transform(const CoarseSpace& coarse, double rank_tol) {
  ConstraintTransform t;
  const std::size_t ne = coarse.edges.size();
  t.basis.resize(ne);
  t.num_constraints.resize(ne);
  for (std::size_t e = 0; e < ne; ++e) {
    const int n = coarse.edge_sizes.at(e);
    const auto& vecs = coarse.edges[e].vectors;
    const int k = static_cast<int>(vecs.size());
    if (k > n) throw std::invalid_argument("build_transform: more constraints than edge nodes on edge " +
                                           std::to_string(e));
    t.num_constraints[e] = k;
    if (k == 0) {
      t.basis[e] = Matrix::Identity(n, n);
      continue;
    }
    Matrix c(n, k);
    for (int l = 0; l < k; ++l) {
      if (vecs[l].size() != n)
        throw std::invalid_argument("build_transform: constraint length mismatch on edge " + std::to_string(e));
      const double nrm = vecs[l].norm();
      if (!(nrm > 0.0)) throw std::invalid_argument("build_transform: zero constraint on edge " + std::to_string(e));
      c.col(l) = vecs[l] / nrm;
    }
    Eigen::HouseholderQR<Matrix> qr(c);
    const Matrix r = qr.matrixQR().topRows(k).triangularView<Eigen::Upper>();
    Matrix q = qr.householderQ() * Matrix::Identity(n, n);
    for (int l = 0; l < k; ++l) {
      if (std::abs(r(l, l)) < rank_tol)
        throw std::invalid_argument("build_transform: rank-deficient constraint set on edge " + std::to_string(e));
      if (r(l, l) < 0.0) q.col(l) *= -1.0;
    }
    t.basis[e] = std::move(q);
  }
  return t;
}

double PartialVector::dot(const PartialVector& o) const {
  double s = primal.dot(o.primal);
  for (std::size_t i = 0; i < remaining.size(); ++i) s += remaining[i].dot(o.remaining[i]);
  return s;
}

PartialVector& PartialVector::operator+=(const PartialVector& o) {
  primal += o.primal;
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] += o.remaining[i];
  return *this;
}

PartialVector& PartialVector::operator-=(const PartialVector& o) {
  primal -= o.primal;
  for (std::size_t i = 0; i < remaining.size(); ++i) remaining[i] -= o.remaining[i];
  return *this;
}

PartialVector& PartialVector::operator*=(double s) {
  primal *= s;
  for (auto& r : remaining) r *= s;
  return *this;
}

DualPrimalSpace::DualPrimalSpace(const Decomposition& d, const CoarseSpace& coarse)
    : decomp_(&d), transform_(build_transform(coarse)) {
  const auto& iface = d.interface;
  if (coarse.edges.size() != iface.edges.size())
    throw std::invalid_argument("DualPrimalSpace: coarse space does not match the decomposition");

  // Global primal numbering: vertices, then edge constraints edge by edge.
  std::vector<int> edge_primal_offset(iface.edges.size());
  num_primal_ = static_cast<int>(iface.vertex_nodes.size());
  multiplier_offset_.resize(iface.edges.size());
  for (std::size_t e = 0; e < iface.edges.size(); ++e) {
    edge_primal_offset[e] = num_primal_;
    num_primal_ += transform_.num_constraints[e];
    multiplier_offset_[e] = num_multipliers_;
    num_multipliers_ += edge_dual_count(static_cast<int>(e));
  }

  locals_.resize(d.num_subdomains());
  for (int i = 0; i < d.num_subdomains(); ++i) {
    const auto& layout = d.partition[i];
    auto& loc = locals_[i];
    loc.num_interior = static_cast<int>(layout.interior.size());
    for (const auto& slot : layout.edges) loc.num_dual += edge_dual_count(slot.edge);

    std::vector<Eigen::Triplet<double>> trip;
    int col = 0;
    for (int dof : layout.interior) trip.emplace_back(dof, col++, 1.0);
    int dual_col = loc.num_interior;
    int primal_col = loc.num_remaining();
    for (std::size_t v = 0; v < layout.vertices.size(); ++v) {
      trip.emplace_back(layout.vertices[v], primal_col++, 1.0);
      loc.primal_global.push_back(layout.vertex_ids[v]);
    }
    for (const auto& slot : layout.edges) {
      const int k = transform_.num_constraints[slot.edge];
      const Matrix& q = transform_.basis[slot.edge];
      const int n = static_cast<int>(slot.dofs.size());
      EdgeBlock blk{slot.edge, slot.sign, dual_col, primal_col, n - k, k};
      for (int a = 0; a < n; ++a) {
        for (int l = 0; l < k; ++l) trip.emplace_back(slot.dofs[a], primal_col + l, q(a, l));
        for (int m = 0; m < n - k; ++m) trip.emplace_back(slot.dofs[a], dual_col + m, q(a, k + m));
      }
      for (int l = 0; l < k; ++l) loc.primal_global.push_back(edge_primal_offset[slot.edge] + l);
      dual_col += n - k;
      primal_col += k;
      loc.edges.push_back(blk);
    }
    loc.num_primal = primal_col - loc.num_remaining();
    loc.transform.resize(layout.num_dofs(), primal_col);
    loc.transform.setFromTriplets(trip.begin(), trip.end());
    if (primal_col != layout.num_dofs())
      throw std::logic_error("DualPrimalSpace: transformed dimension mismatch");
  }
}

int DualPrimalSpace::edge_dual_count(int edge) const {
  return static_cast<int>(transform_.basis[edge].rows()) - transform_.num_constraints[edge];
}

PartialVector DualPrimalSpace::zero() const {
  PartialVector v;
  v.primal = Vector::Zero(num_primal_);
  v.remaining.reserve(locals_.size());
  for (const auto& loc : locals_) v.remaining.push_back(Vector::Zero(loc.num_remaining()));
  return v;
}

PartialVector DualPrimalSpace::assemble(const std::vector<Vector>& local_original) const {
  PartialVector out = zero();
  for (int i = 0; i < num_subdomains(); ++i) {
    const auto& loc = locals_[i];
    const Vector t = loc.transform.transpose() * local_original[i];
    out.remaining[i] = t.head(loc.num_remaining());
    for (int p = 0; p < loc.num_primal; ++p) out.primal[loc.primal_global[p]] += t[loc.num_remaining() + p];
  }
  return out;
}

PartialVector DualPrimalSpace::inject(const std::vector<Vector>& local_original) const {
  PartialVector out = zero();
  std::vector<bool> seen(num_primal_, false);
  for (int i = 0; i < num_subdomains(); ++i) {
    const auto& loc = locals_[i];
    const Vector t = loc.transform.transpose() * local_original[i];
    out.remaining[i] = t.head(loc.num_remaining());
    for (int p = 0; p < loc.num_primal; ++p) {
      const int g = loc.primal_global[p];
      if (!seen[g]) {
        out.primal[g] = t[loc.num_remaining() + p];
        seen[g] = true;
      }
    }
  }
  return out;
}

Vector DualPrimalSpace::to_local_transformed(const PartialVector& u, int i) const {
  const auto& loc = locals_[i];
  Vector t(loc.size());
  t.head(loc.num_remaining()) = u.remaining[i];
  for (int p = 0; p < loc.num_primal; ++p) t[loc.num_remaining() + p] = u.primal[loc.primal_global[p]];
  return t;
}

Vector DualPrimalSpace::to_local_original(const PartialVector& u, int i) const {
  return locals_[i].transform * to_local_transformed(u, i);
}

std::vector<Vector> DualPrimalSpace::to_local_original(const PartialVector& u) const {
  std::vector<Vector> out;
  out.reserve(locals_.size());
  for (int i = 0; i < num_subdomains(); ++i) out.push_back(to_local_original(u, i));
  return out;
}

Vector DualPrimalSpace::jump(const PartialVector& u) const {
  Vector lambda = Vector::Zero(num_multipliers_);
  for (int i = 0; i < num_subdomains(); ++i) {
    for (const auto& blk : locals_[i].edges) {
      lambda.segment(multiplier_offset_[blk.edge], blk.num_dual) +=
          blk.sign * u.remaining[i].segment(blk.dual_offset, blk.num_dual);
    }
  }
  return lambda;
}

PartialVector DualPrimalSpace::jump_transpose(const Vector& lambda) const {
  PartialVector out = zero();
  for (int i = 0; i < num_subdomains(); ++i) {
    for (const auto& blk : locals_[i].edges) {
      out.remaining[i].segment(blk.dual_offset, blk.num_dual) =
          blk.sign * lambda.segment(multiplier_offset_[blk.edge], blk.num_dual);
    }
  }
  return out;
}

std::vector<std::array<Vector, 2>> rho_scaling_weights(const Decomposition& d, const CoefficientField& field) {
  const auto& mesh = d.mesh;
  std::vector<double> rho(mesh.nodes.size(), 0.0);
  std::vector<std::array<Vector, 2>> weights(d.interface.edges.size());
  // rho_k at the nodes of every edge of subdomain k, per subdomain.
  std::vector<std::vector<std::array<double, 2>>> edge_rho(d.interface.edges.size());
  for (const auto& e : d.interface.edges) edge_rho[e.id].assign(e.nodes.size(), {0.0, 0.0});
  for (int sd = 0; sd < d.num_subdomains(); ++sd) {
    for (int e : mesh.subdomain_elements[sd])
      for (int node : mesh.elements[e]) rho[node] = std::max(rho[node], field.values[e]);
    for (const auto& slot : d.partition[sd].edges) {
      const auto& edge = d.interface.edges[slot.edge];
      const int side = slot.sign > 0 ? 0 : 1;
      for (std::size_t a = 0; a < edge.nodes.size(); ++a) edge_rho[slot.edge][a][side] = rho[edge.nodes[a]];
    }
    for (int e : mesh.subdomain_elements[sd])
      for (int node : mesh.elements[e]) rho[node] = 0.0;
  }
  for (const auto& e : d.interface.edges) {
    const auto n = static_cast<Eigen::Index>(e.nodes.size());
    weights[e.id] = {Vector(n), Vector(n)};
    for (Eigen::Index a = 0; a < n; ++a) {
      const auto [r0, r1] = edge_rho[e.id][a];
      weights[e.id][0][a] = r1 / (r0 + r1);
      weights[e.id][1][a] = r0 / (r0 + r1);
    }
  }
  return weights;
}

ScaledJumpOperator::ScaledJumpOperator(const DualPrimalSpace& space, const CoefficientField& field)
    : weights_(rho_scaling_weights(space.decomposition(), field)) {
  const auto& t = space.transform();
  blocks_.resize(weights_.size());
  for (std::size_t e = 0; e < weights_.size(); ++e) {
    const int k = t.num_constraints[e];
    const Matrix& q = t.basis[e];
    const auto perp = q.rightCols(q.cols() - k);
    for (int side = 0; side < 2; ++side)
      blocks_[e][side] = perp.transpose() * weights_[e][side].asDiagonal() * perp;
  }
}

std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> factorize_spd(const SparseMatrix& k, int subdomain,
                                                                   const char* what) {
  auto solver = std::make_unique<Eigen::SimplicialLDLT<SparseMatrix>>();
  if (k.rows() == 0) return solver;
  solver->compute(k);
  const auto where = std::string(what) + " of subdomain " + std::to_string(subdomain);
  if (solver->info() != Eigen::Success) throw FactorizationError(subdomain, "factorization failed: " + where);
  const Vector& diag = solver->vectorD();
  const double dmax = diag.cwiseAbs().maxCoeff();
  if (!(diag.minCoeff() > 1e-14 * dmax))
    throw FactorizationError(subdomain, "singular or indefinite block: " + where);
  return solver;
}

PartialTangent::PartialTangent(const DualPrimalSpace& space, const std::vector<SparseMatrix>& local_tangents)
    : space_(&space), locals_(space.num_subdomains()), coarse_(Matrix::Zero(space.num_primal(), space.num_primal())) {
  for (int i = 0; i < space.num_subdomains(); ++i) {
    const auto& sl = space.local(i);
    auto& loc = locals_[i];
    const SparseMatrix& t = sl.transform;
    loc.khat = SparseMatrix(t.transpose() * local_tangents.at(i) * t);
    const int nr = sl.num_remaining();
    const int np = sl.num_primal;
    const SparseMatrix krr = loc.khat.topLeftCorner(nr, nr);
    loc.krr = factorize_spd(krr, i, "remaining block");
    loc.krp = Matrix(loc.khat.block(0, nr, nr, np));
    loc.kpp = Matrix(loc.khat.block(nr, nr, np, np));
    loc.krr_inv_krp = nr > 0 ? Matrix(loc.krr->solve(loc.krp)) : Matrix(0, np);
    const Matrix local_coarse = loc.kpp - loc.krp.transpose() * loc.krr_inv_krp;
    for (int a = 0; a < np; ++a)
      for (int b = 0; b < np; ++b) coarse_(sl.primal_global[a], sl.primal_global[b]) += local_coarse(a, b);
  }
  coarse_ = 0.5 * (coarse_ + coarse_.transpose());
  if (coarse_.rows() > 0) {
    coarse_llt_.compute(coarse_);
    if (coarse_llt_.info() != Eigen::Success)
      throw FactorizationError(-1, "coarse matrix is not positive definite");
  }
}

PartialVector PartialTangent::solve(const PartialVector& rhs) const {
  const auto& space = *space_;
  PartialVector x = space.zero();
  std::vector<Vector> y(locals_.size());
  Vector g = rhs.primal;
  for (int i = 0; i < space.num_subdomains(); ++i) {
    const auto& sl = space.local(i);
    y[i] = sl.num_remaining() > 0 ? Vector(locals_[i].krr->solve(rhs.remaining[i])) : Vector(0);
    const Vector contrib = locals_[i].krp.transpose() * y[i];
    for (int p = 0; p < sl.num_primal; ++p) g[sl.primal_global[p]] -= contrib[p];
  }
  if (g.size() > 0) x.primal = coarse_llt_.solve(g);
  for (int i = 0; i < space.num_subdomains(); ++i) {
    const auto& sl = space.local(i);
    Vector xp(sl.num_primal);
    for (int p = 0; p < sl.num_primal; ++p) xp[p] = x.primal[sl.primal_global[p]];
    x.remaining[i] = y[i] - locals_[i].krr_inv_krp * xp;
  }
  return x;
}

PartialVector PartialTangent::apply(const PartialVector& x) const {
  const auto& space = *space_;
  PartialVector out = space.zero();
  for (int i = 0; i < space.num_subdomains(); ++i) {
    const auto& sl = space.local(i);
    const Vector v = locals_[i].khat * space.to_local_transformed(x, i);
    out.remaining[i] = v.head(sl.num_remaining());
    for (int p = 0; p < sl.num_primal; ++p) out.primal[sl.primal_global[p]] += v[sl.num_remaining() + p];
  }
  return out;
}

Vector PartialTangent::apply_F(const Vector& lambda) const {
  return space_->jump(solve(space_->jump_transpose(lambda)));
}

DirichletPreconditioner::DirichletPreconditioner(const PartialTangent& tangent, const ScaledJumpOperator& scaling)
    : space_(&tangent.space()), scaling_(&scaling), locals_(tangent.space().num_subdomains()) {
  for (int i = 0; i < space_->num_subdomains(); ++i) {
    const auto& sl = space_->local(i);
    const SparseMatrix& khat = tangent.transformed_tangent(i);
    auto& loc = locals_[i];
    const int ni = sl.num_interior;
    const int nd = sl.num_dual;
    loc.has_interior = ni > 0;
    loc.kdd = khat.block(ni, ni, nd, nd);
    if (loc.has_interior) {
      loc.kii = factorize_spd(SparseMatrix(khat.topLeftCorner(ni, ni)), i, "interior block");
      loc.kid = khat.block(0, ni, ni, nd);
    }
  }
}

Vector DirichletPreconditioner::apply(const Vector& lambda) const {
  Vector out = Vector::Zero(lambda.size());
  for (int i = 0; i < space_->num_subdomains(); ++i) {
    const auto& sl = space_->local(i);
    const auto& loc = locals_[i];
    if (sl.num_dual == 0) continue;
    Vector v(sl.num_dual);
    for (const auto& blk : sl.edges) {
      const int side = blk.sign > 0 ? 0 : 1;
      v.segment(blk.dual_offset - sl.num_interior, blk.num_dual) =
          blk.sign * (scaling_->block(blk.edge, side) *
                      lambda.segment(space_->multiplier_offset(blk.edge), blk.num_dual));
    }
    Vector w = loc.kdd * v;
    if (loc.has_interior) {
      const Vector rhs = loc.kid * v;
      w -= loc.kid.transpose() * loc.kii->solve(rhs);
    }
    for (const auto& blk : sl.edges) {
      const int side = blk.sign > 0 ? 0 : 1;
      out.segment(space_->multiplier_offset(blk.edge), blk.num_dual) +=
          blk.sign * (scaling_->block(blk.edge, side) * w.segment(blk.dual_offset - sl.num_interior, blk.num_dual));
    }
  }
  return out;
}

}  // namespace nlfeti
