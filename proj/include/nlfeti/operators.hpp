#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "nlfeti/assembly.hpp"
#include "nlfeti/coarse_space.hpp"
#include "nlfeti/coefficients.hpp"
#include "nlfeti/geometry.hpp"

namespace nlfeti {

/// Raised when a local or coarse factorization meets a singular block.
class FactorizationError : public std::runtime_error {
 public:
  FactorizationError(int subdomain, const std::string& what)
      : std::runtime_error(what), subdomain_(subdomain) {}
  /// -1 for the coarse problem.
  int subdomain() const { return subdomain_; }

 private:
  int subdomain_;
};

/// Per-edge orthogonal change of basis [C | C_perp] whose first k columns
/// are the edge constraints.
struct ConstraintTransform {
  std::vector<Matrix> basis;
  std::vector<int> num_constraints;
};

ConstraintTransform build_transform(const CoarseSpace& coarse, double rank_tol = 1e-8);

/// An element of the partially assembled space: per-subdomain remaining
/// (interior + dual) coordinates and the globally shared primal vector, all
/// in the transformed basis.
struct PartialVector {
  std::vector<Vector> remaining;
  Vector primal;

  double dot(const PartialVector& o) const;
  double norm() const { return std::sqrt(dot(*this)); }
  PartialVector& operator+=(const PartialVector& o);
  PartialVector& operator-=(const PartialVector& o);
  PartialVector& operator*=(double s);
};

/// Index bookkeeping for the dual-primal splitting under a given coarse
/// space, and the maps between the broken space W, the partially assembled
/// space and the multiplier space. Local transformed coordinates are ordered
/// [interior | dual (per edge slot) | vertices | edge primal (per slot)].
class DualPrimalSpace {
 public:
  struct EdgeBlock {
    int edge = 0;
    int sign = 1;
    int dual_offset = 0;    // into the local transformed vector
    int primal_offset = 0;  // into the local transformed vector
    int num_dual = 0;
    int num_primal = 0;
  };

  struct Local {
    SparseMatrix transform;  // transformed -> original local coordinates
    int num_interior = 0;
    int num_dual = 0;
    int num_primal = 0;
    std::vector<int> primal_global;
    std::vector<EdgeBlock> edges;

    int num_remaining() const { return num_interior + num_dual; }
    int size() const { return num_remaining() + num_primal; }
  };

  DualPrimalSpace(const Decomposition& d, const CoarseSpace& coarse);

  const Decomposition& decomposition() const { return *decomp_; }
  const ConstraintTransform& transform() const { return transform_; }
  const Local& local(int i) const { return locals_[i]; }
  int num_subdomains() const { return static_cast<int>(locals_.size()); }
  int num_primal() const { return num_primal_; }
  int num_multipliers() const { return num_multipliers_; }
  int multiplier_offset(int edge) const { return multiplier_offset_[edge]; }
  int edge_dual_count(int edge) const;

  PartialVector zero() const;

  /// Transposed restriction of local vectors given in original coordinates;
  /// primal components are summed over subdomains.
  PartialVector assemble(const std::vector<Vector>& local_original) const;
  /// Restriction of a function that is continuous at the primal level; the
  /// primal value is taken from the first subdomain holding it.
  PartialVector inject(const std::vector<Vector>& local_original) const;
  Vector to_local_transformed(const PartialVector& u, int i) const;
  Vector to_local_original(const PartialVector& u, int i) const;
  std::vector<Vector> to_local_original(const PartialVector& u) const;

  /// Jump of the dual coordinates across each edge (lower index minus upper).
  Vector jump(const PartialVector& u) const;
  PartialVector jump_transpose(const Vector& lambda) const;

 private:
  const Decomposition* decomp_;
  ConstraintTransform transform_;
  std::vector<Local> locals_;
  std::vector<int> multiplier_offset_;
  int num_primal_ = 0;
  int num_multipliers_ = 0;
};

/// rho-scaled jump operator B_D. For edge node x shared by subdomains i, j
/// the side-i weight is rho_j(x) / (rho_i(x) + rho_j(x)), with rho_k(x) the
/// largest coefficient over elements of subdomain k touching x. In the
/// transformed basis each edge side carries the block C_perp^T diag(w) C_perp.
class ScaledJumpOperator {
 public:
  ScaledJumpOperator(const DualPrimalSpace& space, const CoefficientField& field);

  /// Nodal weights of side 0 (lower index) and side 1 on an edge.
  const std::array<Vector, 2>& node_weights(int edge) const { return weights_[edge]; }
  /// Scaling block for `side` of `edge` in transformed dual coordinates.
  const Matrix& block(int edge, int side) const { return blocks_[edge][side]; }

 private:
  std::vector<std::array<Vector, 2>> weights_;
  std::vector<std::array<Matrix, 2>> blocks_;
};

/// Nodal rho weights per edge side, original coordinates.
std::vector<std::array<Vector, 2>> rho_scaling_weights(const Decomposition& d, const CoefficientField& field);

/// Factorized partially assembled tangent: local sparse LDL^T of the
/// remaining blocks and a dense Cholesky of the assembled coarse matrix.
class PartialTangent {
 public:
  PartialTangent(const DualPrimalSpace& space, const std::vector<SparseMatrix>& local_tangents);

  const DualPrimalSpace& space() const { return *space_; }
  PartialVector solve(const PartialVector& rhs) const;
  PartialVector apply(const PartialVector& x) const;
  /// F lambda = B R K~^{-1} R^T B^T lambda.
  Vector apply_F(const Vector& lambda) const;
  const Matrix& coarse_matrix() const { return coarse_; }
  const SparseMatrix& transformed_tangent(int i) const { return locals_[i].khat; }

 private:
  struct Local {
    SparseMatrix khat;
    std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> krr;
    Matrix krp;
    Matrix kpp;
    Matrix krr_inv_krp;
  };

  const DualPrimalSpace* space_;
  std::vector<Local> locals_;
  Matrix coarse_;
  Eigen::LLT<Matrix> coarse_llt_;
};

/// M_D^{-1} = sum_i B_D^(i) S^(i) B_D^(i)T with S^(i) the interface Schur
/// complement of the transformed local tangent, applied matrix-free.
class DirichletPreconditioner {
 public:
  DirichletPreconditioner(const PartialTangent& tangent, const ScaledJumpOperator& scaling);
  Vector apply(const Vector& lambda) const;

 private:
  struct Local {
    std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> kii;
    SparseMatrix kid;
    SparseMatrix kdd;
    bool has_interior = false;
  };

  const DualPrimalSpace* space_;
  const ScaledJumpOperator* scaling_;
  std::vector<Local> locals_;
};

/// Factorizes `k` with LDL^T and throws FactorizationError on a failed or
/// non-positive pivot.
std::unique_ptr<Eigen::SimplicialLDLT<SparseMatrix>> factorize_spd(const SparseMatrix& k, int subdomain,
                                                                   const char* what);

}  // namespace nlfeti
