#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nlfeti/geometry.hpp"

namespace nlfeti {

/// Piecewise-constant diffusion coefficient, one value per element.
struct CoefficientField {
  std::vector<double> values;
  double alpha_low = 1.0;
  double alpha_high = 1.0;
};

enum class PatternKind { constant, channels_and_us, combs, random_channels, random_boxes };

std::string to_string(PatternKind kind);
PatternKind pattern_kind_from_string(const std::string& name);

/// Parametric description of a binary coefficient layout. Lengths are in
/// grid cells (elements per axis); `width == 0` selects a default of
/// max(1, H/h / 10).
struct PatternSpec {
  PatternKind kind = PatternKind::constant;
  std::optional<std::uint64_t> seed;
  double alpha_low = 1.0;
  double alpha_high = 1e6;
  int width = 0;
  /// Random kinds: mean number of features per subdomain.
  double density = 1.0;
  /// Deterministic kinds: shift of the feature layout in cells.
  int offset = 0;

  bool operator==(const PatternSpec&) const = default;
};

CoefficientField generate(const PatternSpec& spec, const DecomposedMesh& mesh);

/// Builds a field from per-cell values (row-major, cells_per_dim^2 entries).
CoefficientField field_from_cells(const DecomposedMesh& mesh, const std::vector<double>& cells,
                                  double alpha_low, double alpha_high);

constexpr int kDefaultSamplingResolution = 12;

/// Samples alpha on a resolution x resolution lattice in each subdomain
/// adjacent to `edge`, in the canonical frame where the edge is vertical,
/// runs upward in its node order, and the lower-indexed subdomain is on the
/// left. Horizontal edges are brought to this frame by the x <-> y
/// reflection, which maps the triangulation onto itself. Values are divided
/// by alpha_high. Layout: block of subdomain i then j; within a block, index
/// = along_edge * resolution + normal, normal increasing left to right.
std::vector<double> sample_on_grid(const CoefficientField& field, const DecomposedMesh& mesh,
                                   const Edge& edge, int resolution = kDefaultSamplingResolution);

}  // namespace nlfeti
