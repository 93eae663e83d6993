#pragma once

#include <array>
#include <limits>
#include <vector>

#include "nlfeti/assembly.hpp"
#include "nlfeti/coarse_space.hpp"
#include "nlfeti/geometry.hpp"

namespace nlfeti {

/// Dense Schur complement of a subdomain tangent onto its interface dofs
/// (vertices first, then edge slots in layout order).
struct InterfaceSchur {
  Matrix s;
  std::vector<int> vertex_ids;  // row r < vertex_ids.size() holds this vertex
  std::vector<int> edge_ids;    // per edge slot
  std::vector<int> edge_rows;   // first row of each edge slot

  int edge_row(int edge) const;
};

InterfaceSchur interface_schur(const Decomposition& d, int subdomain, const SparseMatrix& tangent);

struct EdgeEigenResult {
  int edge = 0;
  Vector eigenvalues;                 // descending
  std::vector<Vector> constraints;    // for the leading eigenvectors
  int count_above_tol = 0;
};

/// Two-subdomain generalized eigenproblem on an edge:
///   <S P_D w, P_D v> = mu <S^ w, v>
/// where S^ is the Schur complement of the pair's interface operator (shared
/// vertices identified) onto the two edge traces, and P_D = B_D^T B restricted
/// to the edge. Constraints are c = B_D S P_D w, normalized with the
/// largest-magnitude entry made positive. At least `min_vectors` leading
/// constraints are returned, more if more eigenvalues exceed `tol`.
EdgeEigenResult edge_eigenproblem(const Decomposition& d, int edge, const InterfaceSchur& side0,
                                  const InterfaceSchur& side1, const std::array<Vector, 2>& weights, double tol,
                                  int min_vectors = 3, double shift = 1e-12);

std::vector<EdgeEigenResult> adaptive_edge_analysis(const Decomposition& d, const CoefficientField& field,
                                                    const std::vector<SparseMatrix>& tangents, double tol,
                                                    int min_vectors = 3);

/// Vertices plus, per edge, the constraints of eigenvalues above `tol`
/// (at most `max_per_edge`).
CoarseSpace adaptive_coarse_from(const Decomposition& d, const std::vector<EdgeEigenResult>& results, double tol,
                                 int max_per_edge = std::numeric_limits<int>::max());

CoarseSpace adaptive_coarse(const Decomposition& d, const CoefficientField& field,
                            const std::vector<SparseMatrix>& tangents_at_initial, double tol);

/// Makes the entry of largest magnitude positive.
Vector sign_fixed(const Vector& v);

}  // namespace nlfeti
