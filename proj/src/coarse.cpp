#include "nlfeti/coarse.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include <Eigen/Eigenvalues>

#include "nlfeti/operators.hpp"

namespace nlfeti {

int CoarseSpace::num_edge_constraints() const {
  int n = 0;
  for (const auto& e : edges) n += e.count();
  return n;
}

CoarseSpace vertex_coarse(const InterfaceConnectivity& iface) {
  CoarseSpace c;
  c.label = "vertices";
  c.vertex_nodes = iface.vertex_nodes;
  c.edges.resize(iface.edges.size());
  for (const auto& e : iface.edges) c.edge_sizes.push_back(static_cast<int>(e.nodes.size()));
  return c;
}

CoarseSpace manual_coarse(const InterfaceConnectivity& iface,
                          const std::vector<std::vector<CandidateConstraint>>& per_edge, double drop_tol) {
  if (per_edge.size() != iface.edges.size() && !per_edge.empty())
    throw std::invalid_argument("manual_coarse: expected one constraint list per edge");
  CoarseSpace c = vertex_coarse(iface);
  c.label = "manual";
  for (std::size_t e = 0; e < per_edge.size(); ++e) {
    const auto n = static_cast<Eigen::Index>(iface.edges[e].nodes.size());
    auto& out = c.edges[e];
    for (const auto& cand : per_edge[e]) {
      if (cand.vector.size() != n)
        throw std::invalid_argument("manual_coarse: constraint of length " + std::to_string(cand.vector.size()) +
                                    " on edge " + std::to_string(e) + " with " + std::to_string(n) + " nodes");
      const double nrm = cand.vector.norm();
      if (!(nrm > 0.0)) {
        ++c.dropped;
        continue;
      }
      Vector v = cand.vector / nrm;
      // Two Gram-Schmidt passes.
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& q : out.vectors) v -= q.dot(v) * q;
      const double rest = v.norm();
      if (rest < drop_tol || out.count() >= n) {
        ++c.dropped;
        continue;
      }
      out.vectors.push_back(v / rest);
      out.provenance.push_back(cand.provenance);
    }
  }
  return c;
}

namespace {

std::string source_name(ConstraintSource s) {
  switch (s) {
    case ConstraintSource::adaptive: return "adaptive";
    case ConstraintSource::learned: return "learned";
    case ConstraintSource::manual: return "manual";
  }
  return "manual";
}

ConstraintSource source_from_name(const std::string& s) {
  if (s == "adaptive") return ConstraintSource::adaptive;
  if (s == "learned") return ConstraintSource::learned;
  if (s == "manual") return ConstraintSource::manual;
  throw std::invalid_argument("unknown constraint source '" + s + "'");
}

}  // namespace

nlohmann::json to_json(const CoarseSpace& space) {
  nlohmann::json j;
  j["format"] = "nlfeti-coarse-space";
  j["version"] = 1;
  j["label"] = space.label;
  j["vertex_nodes"] = space.vertex_nodes;
  j["size"] = space.size();
  j["dropped"] = space.dropped;
  auto& edges = j["edges"] = nlohmann::json::array();
  for (std::size_t e = 0; e < space.edges.size(); ++e) {
    nlohmann::json je;
    je["id"] = e;
    je["nodes"] = space.edge_sizes[e];
    je["constraints"] = nlohmann::json::array();
    for (int l = 0; l < space.edges[e].count(); ++l) {
      const auto& v = space.edges[e].vectors[l];
      const auto& pv = space.edges[e].provenance[l];
      je["constraints"].push_back({{"weights", std::vector<double>(v.data(), v.data() + v.size())},
                                   {"source", source_name(pv.source)},
                                   {"eigenvalue", pv.eigenvalue},
                                   {"rank", pv.rank},
                                   {"newton_step", pv.newton_step}});
    }
    edges.push_back(std::move(je));
  }
  return j;
}

CoarseSpace coarse_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "nlfeti-coarse-space")
    throw std::invalid_argument("not a coarse-space file");
  if (j.at("version").get<int>() != 1) throw std::invalid_argument("unsupported coarse-space version");
  CoarseSpace c;
  c.label = j.value("label", "");
  c.dropped = j.value("dropped", 0);
  c.vertex_nodes = j.at("vertex_nodes").get<std::vector<int>>();
  for (const auto& je : j.at("edges")) {
    const int n = je.at("nodes").get<int>();
    c.edge_sizes.push_back(n);
    EdgeConstraints ec;
    for (const auto& jc : je.at("constraints")) {
      const auto w = jc.at("weights").get<std::vector<double>>();
      if (static_cast<int>(w.size()) != n) throw std::invalid_argument("coarse-space file: weight length mismatch");
      ec.vectors.push_back(Eigen::Map<const Vector>(w.data(), n));
      ConstraintProvenance p;
      p.source = source_from_name(jc.at("source").get<std::string>());
      p.eigenvalue = jc.value("eigenvalue", 0.0);
      p.rank = jc.value("rank", 0);
      p.newton_step = jc.value("newton_step", 0);
      ec.provenance.push_back(p);
    }
    c.edges.push_back(std::move(ec));
  }
  return c;
}

int InterfaceSchur::edge_row(int edge) const {
  for (std::size_t k = 0; k < edge_ids.size(); ++k)
    if (edge_ids[k] == edge) return edge_rows[k];
  throw std::invalid_argument("InterfaceSchur: edge " + std::to_string(edge) + " not adjacent");
}

namespace {

SparseMatrix selection(const std::vector<int>& rows, int n) {
  SparseMatrix p(static_cast<Eigen::Index>(rows.size()), n);
  std::vector<Eigen::Triplet<double>> t;
  for (std::size_t r = 0; r < rows.size(); ++r) t.emplace_back(static_cast<int>(r), rows[r], 1.0);
  p.setFromTriplets(t.begin(), t.end());
  return p;
}

}  // namespace

InterfaceSchur interface_schur(const Decomposition& d, int subdomain, const SparseMatrix& tangent) {
  const auto& layout = d.partition[subdomain];
  InterfaceSchur out;
  std::vector<int> gamma = layout.vertices;
  out.vertex_ids = layout.vertex_ids;
  for (const auto& slot : layout.edges) {
    out.edge_ids.push_back(slot.edge);
    out.edge_rows.push_back(static_cast<int>(gamma.size()));
    gamma.insert(gamma.end(), slot.dofs.begin(), slot.dofs.end());
  }
  const int n = layout.num_dofs();
  const SparseMatrix pg = selection(gamma, n);
  const SparseMatrix pi = selection(layout.interior, n);
  const SparseMatrix kgg = pg * tangent * pg.transpose();
  out.s = Matrix(kgg);
  if (!layout.interior.empty()) {
    const SparseMatrix kii = pi * tangent * pi.transpose();
    const Matrix kig = Matrix(SparseMatrix(pi * tangent * pg.transpose()));
    const auto solver = factorize_spd(kii, subdomain, "interior block");
    out.s -= kig.transpose() * solver->solve(kig);
  }
  out.s = 0.5 * (out.s + out.s.transpose());
  return out;
}

Vector sign_fixed(const Vector& v) {
  if (v.size() == 0) return v;
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  return v[imax] < 0.0 ? Vector(-v) : v;
}

EdgeEigenResult edge_eigenproblem(const Decomposition& d, int edge, const InterfaceSchur& side0,
                                  const InterfaceSchur& side1, const std::array<Vector, 2>& weights, double tol,
                                  int min_vectors, double shift) {
  const int n = static_cast<int>(d.interface.edges.at(edge).nodes.size());
  const std::array<const InterfaceSchur*, 2> sides{&side0, &side1};

  // Pair numbering: edge trace of side 0, edge trace of side 1, then the
  // remaining interface dofs with shared vertices identified.
  std::array<std::vector<int>, 2> map;
  int next = 2 * n;
  std::unordered_map<int, int> vertex_slot;
  for (int s = 0; s < 2; ++s) {
    const auto& sc = *sides[s];
    map[s].assign(sc.s.rows(), -1);
    const int er = sc.edge_row(edge);
    for (int a = 0; a < n; ++a) map[s][er + a] = s * n + a;
    for (std::size_t v = 0; v < sc.vertex_ids.size(); ++v) {
      auto [it, inserted] = vertex_slot.emplace(sc.vertex_ids[v], next);
      if (inserted) ++next;
      map[s][v] = it->second;
    }
    for (Eigen::Index r = 0; r < sc.s.rows(); ++r)
      if (map[s][r] < 0) map[s][r] = next++;
  }
  Matrix pair = Matrix::Zero(next, next);
  for (int s = 0; s < 2; ++s) {
    const auto& m = sides[s]->s;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) pair(map[s][r], map[s][c]) += m(r, c);
  }
  const int ne = 2 * n;
  const int nr = next - ne;
  Matrix schur = pair.topLeftCorner(ne, ne);
  if (nr > 0) {
    Eigen::LDLT<Matrix> rr(pair.bottomRightCorner(nr, nr));
    schur -= pair.block(0, ne, ne, nr) * rr.solve(pair.block(ne, 0, nr, ne));
  }
  schur = 0.5 * (schur + schur.transpose());
  schur.diagonal().array() += shift * schur.trace() / ne;

  // Edge-block (Neumann) operator and P_D.
  Matrix s_edge = Matrix::Zero(ne, ne);
  for (int s = 0; s < 2; ++s) {
    const int er = sides[s]->edge_row(edge);
    s_edge.block(s * n, s * n, n, n) = sides[s]->s.block(er, er, n, n);
  }
  Matrix pd(ne, ne);
  const Matrix d0 = weights[0].asDiagonal();
  const Matrix d1 = weights[1].asDiagonal();
  pd << d0, -d0, -d1, d1;
  Matrix a = pd.transpose() * s_edge * pd;
  a = 0.5 * (a + a.transpose());

  Eigen::GeneralizedSelfAdjointEigenSolver<Matrix> ges(a, schur);
  if (ges.info() != Eigen::Success)
    throw std::runtime_error("edge_eigenproblem: eigensolver failed on edge " + std::to_string(edge));

  EdgeEigenResult res;
  res.edge = edge;
  res.eigenvalues = ges.eigenvalues().reverse();
  for (Eigen::Index k = 0; k < res.eigenvalues.size(); ++k)
    if (res.eigenvalues[k] > tol) ++res.count_above_tol;
  const int m = std::min<int>(ne, std::max(min_vectors, res.count_above_tol));
  for (int k = 0; k < m; ++k) {
    const Vector w = ges.eigenvectors().col(ne - 1 - k);
    const Vector y = s_edge * (pd * w);
    Vector c = weights[0].cwiseProduct(y.head(n)) - weights[1].cwiseProduct(y.tail(n));
    const double nrm = c.norm();
    if (nrm > 0.0) c /= nrm;
    res.constraints.push_back(sign_fixed(c));
  }
  return res;
}

std::vector<EdgeEigenResult> adaptive_edge_analysis(const Decomposition& d, const CoefficientField& field,
                                                    const std::vector<SparseMatrix>& tangents, double tol,
                                                    int min_vectors) {
  std::vector<InterfaceSchur> schur;
  schur.reserve(d.num_subdomains());
  for (int i = 0; i < d.num_subdomains(); ++i) schur.push_back(interface_schur(d, i, tangents.at(i)));
  const auto weights = rho_scaling_weights(d, field);
  std::vector<EdgeEigenResult> out;
  out.reserve(d.interface.edges.size());
  for (const auto& e : d.interface.edges)
    out.push_back(edge_eigenproblem(d, e.id, schur[e.subdomains[0]], schur[e.subdomains[1]], weights[e.id], tol,
                                    min_vectors));
  return out;
}

CoarseSpace adaptive_coarse_from(const Decomposition& d, const std::vector<EdgeEigenResult>& results, double tol,
                                 int max_per_edge) {
  std::vector<std::vector<CandidateConstraint>> cands(d.interface.edges.size());
  for (const auto& r : results) {
    for (int k = 0; k < static_cast<int>(r.constraints.size()) && k < max_per_edge; ++k) {
      if (!(r.eigenvalues[k] > tol)) break;
      ConstraintProvenance p;
      p.source = ConstraintSource::adaptive;
      p.eigenvalue = r.eigenvalues[k];
      cands[r.edge].push_back({r.constraints[k], p});
    }
  }
  CoarseSpace c = manual_coarse(d.interface, cands);
  c.label = "adaptive";
  return c;
}

CoarseSpace adaptive_coarse(const Decomposition& d, const CoefficientField& field,
                            const std::vector<SparseMatrix>& tangents_at_initial, double tol) {
  if (!(tol > 0.0)) throw std::invalid_argument("adaptive_coarse: TOL must be positive");
  return adaptive_coarse_from(d, adaptive_edge_analysis(d, field, tangents_at_initial, tol, 0), tol);
}

}  // namespace nlfeti
