#include "nlfeti/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace nlfeti {

std::string to_string(PatternKind kind) {
  switch (kind) {
    case PatternKind::constant: return "constant";
    case PatternKind::channels_and_us: return "channels_and_us";
    case PatternKind::combs: return "combs";
    case PatternKind::random_channels: return "random_channels";
    case PatternKind::random_boxes: return "random_boxes";
  }
  return "constant";
}

PatternKind pattern_kind_from_string(const std::string& name) {
  for (auto k : {PatternKind::constant, PatternKind::channels_and_us, PatternKind::combs,
                 PatternKind::random_channels, PatternKind::random_boxes})
    if (to_string(k) == name) return k;
  throw std::invalid_argument("unknown pattern kind '" + name + "'");
}

namespace {

class CellGrid {
 public:
  explicit CellGrid(int n) : n_(n), high_(static_cast<std::size_t>(n) * n, false) {}

  // Half-open rectangle [x0, x1) x [y0, y1), clipped to the grid.
  void fill(int x0, int x1, int y0, int y1) {
    x0 = std::clamp(x0, 0, n_);
    x1 = std::clamp(x1, 0, n_);
    y0 = std::clamp(y0, 0, n_);
    y1 = std::clamp(y1, 0, n_);
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x) high_[static_cast<std::size_t>(y) * n_ + x] = true;
  }

  std::vector<double> values(double low, double high) const {
    std::vector<double> out(high_.size());
    for (std::size_t k = 0; k < high_.size(); ++k) out[k] = high_[k] ? high : low;
    return out;
  }

 private:
  int n_;
  std::vector<bool> high_;
};

// One horizontal channel per subdomain row spanning the whole domain, and
// U-shaped inclusions straddling every other horizontal subdomain edge.
void channels_and_us(CellGrid& g, int ns, int hh, int w, int off) {
  const int n = ns * hh;
  for (int sy = 0; sy < ns; ++sy) {
    const int y = sy * hh + (sy % 2 == 0 ? (3 * hh) / 10 : (7 * hh) / 10) + off;
    g.fill(0, n, y, y + w);
  }
  for (int sy = 0; sy + 1 < ns; ++sy) {
    for (int sx = 0; sx < ns; ++sx) {
      if ((sx + sy) % 2 != 0) continue;
      const int ey = (sy + 1) * hh;
      const int left = sx * hh + hh / 4 + off;
      const int right = sx * hh + (3 * hh) / 4 - w + off;
      const int bottom = ey - hh / 4;
      const int top = ey + hh / 4;
      g.fill(left, left + w, bottom, top);
      g.fill(right, right + w, bottom, top);
      g.fill(left, right + w, bottom, bottom + w);
    }
  }
}

// Comb-shaped inclusions: a spine parallel to a subdomain edge with three
// teeth reaching across it into the neighbour. Vertical edges get combs in a
// checkerboard, horizontal edges in the complementary one.
void combs(CellGrid& g, int ns, int hh, int w, int off) {
  const int reach = (3 * hh) / 10;
  for (int sy = 0; sy < ns; ++sy) {
    for (int sx = 0; sx < ns; ++sx) {
      const int x0 = sx * hh;
      const int y0 = sy * hh;
      if (sx + 1 < ns && (sx + sy) % 2 == 0) {
        const int ex = x0 + hh;
        const int spine = ex - reach + off;
        g.fill(spine, spine + w, y0 + hh / 8, y0 + (7 * hh) / 8);
        for (int t = 0; t < 3; ++t) {
          const int ty = y0 + hh / 8 + t * ((3 * hh) / 8 - w / 2);
          g.fill(spine, ex + reach, ty, ty + w);
        }
      }
      if (sy + 1 < ns && (sx + sy) % 2 == 1) {
        const int ey = y0 + hh;
        const int spine = ey - reach + off;
        g.fill(x0 + hh / 8, x0 + (7 * hh) / 8, spine, spine + w);
        for (int t = 0; t < 3; ++t) {
          const int tx = x0 + hh / 8 + t * ((3 * hh) / 8 - w / 2);
          g.fill(tx, tx + w, spine, ey + reach);
        }
      }
    }
  }
}

void random_channels(CellGrid& g, int ns, int hh, int w, double density, std::mt19937_64& rng) {
  const int n = ns * hh;
  std::poisson_distribution<int> count_dist(density * ns * ns);
  const int count = std::max(1, count_dist(rng));
  std::uniform_int_distribution<int> pos(0, n - 1);
  std::uniform_int_distribution<int> width(w, 2 * w);
  std::uniform_int_distribution<int> length(hh / 2, 2 * hh);
  std::bernoulli_distribution horizontal(0.5);
  std::bernoulli_distribution full(0.25);
  for (int c = 0; c < count; ++c) {
    const int across = pos(rng);
    const int wd = width(rng);
    int start = pos(rng);
    int len = length(rng);
    if (full(rng)) {
      start = 0;
      len = n;
    }
    if (horizontal(rng))
      g.fill(start, start + len, across, across + wd);
    else
      g.fill(across, across + wd, start, start + len);
  }
}

void random_boxes(CellGrid& g, int ns, int hh, int w, double density, std::mt19937_64& rng) {
  const int n = ns * hh;
  std::poisson_distribution<int> count_dist(density * ns * ns);
  const int count = std::max(1, count_dist(rng));
  std::uniform_int_distribution<int> pos(0, n - 1);
  std::uniform_int_distribution<int> size(w, std::max(w, hh / 2));
  for (int c = 0; c < count; ++c) {
    const int x = pos(rng);
    const int y = pos(rng);
    g.fill(x, x + size(rng), y, y + size(rng));
  }
}

// floor(a / b) for b > 0.
int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

}  // namespace

CoefficientField field_from_cells(const DecomposedMesh& mesh, const std::vector<double>& cells,
                                  double alpha_low, double alpha_high) {
  const int n = mesh.cells_per_dim();
  if (cells.size() != static_cast<std::size_t>(n) * n)
    throw std::invalid_argument("field_from_cells: expected one value per grid cell");
  CoefficientField field;
  field.alpha_low = alpha_low;
  field.alpha_high = alpha_high;
  field.values.resize(mesh.elements.size());
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) field.values[e] = cells[e / 2];
  for (double v : field.values)
    if (!(v > 0.0)) throw std::invalid_argument("coefficient values must be strictly positive");
  return field;
}

CoefficientField generate(const PatternSpec& spec, const DecomposedMesh& mesh) {
  if (!(spec.alpha_low > 0.0) || !(spec.alpha_high > 0.0))
    throw std::invalid_argument("generate: coefficients must be strictly positive");
  const int hh = mesh.elements_per_subdomain_edge;
  const int ns = mesh.subdomains_per_dim;
  const int w = spec.width == 0 ? std::max(1, hh / 10) : spec.width;
  if (w < 1) throw std::invalid_argument("generate: feature width must be at least one element");
  if (w > hh / 2) throw std::invalid_argument("generate: feature width exceeds half a subdomain");

  const bool random = spec.kind == PatternKind::random_channels || spec.kind == PatternKind::random_boxes;
  if (random && !spec.seed) throw std::invalid_argument("generate: random pattern requires a seed");
  if (random && !(spec.density > 0.0)) throw std::invalid_argument("generate: density must be positive");

  CellGrid grid(mesh.cells_per_dim());
  std::mt19937_64 rng(spec.seed.value_or(0));
  switch (spec.kind) {
    case PatternKind::constant:
      return field_from_cells(mesh, grid.values(spec.alpha_low, spec.alpha_low), spec.alpha_low,
                              spec.alpha_high);
    case PatternKind::channels_and_us: channels_and_us(grid, ns, hh, w, spec.offset); break;
    case PatternKind::combs: combs(grid, ns, hh, w, spec.offset); break;
    case PatternKind::random_channels: random_channels(grid, ns, hh, w, spec.density, rng); break;
    case PatternKind::random_boxes: random_boxes(grid, ns, hh, w, spec.density, rng); break;
  }
  return field_from_cells(mesh, grid.values(spec.alpha_low, spec.alpha_high), spec.alpha_low,
                          spec.alpha_high);
}

std::vector<double> sample_on_grid(const CoefficientField& field, const DecomposedMesh& mesh,
                                   const Edge& edge, int resolution) {
  if (resolution < 2) throw std::invalid_argument("sample_on_grid: resolution must be >= 2");
  const int hh = mesh.elements_per_subdomain_edge;
  const int ns = mesh.subdomains_per_dim;
  const int n = mesh.cells_per_dim();
  const int res = resolution;

  // Edge position and start in cell units, from the lower-indexed subdomain.
  const int sx = edge.subdomains[0] % ns;
  const int sy = edge.subdomains[0] / ns;
  const int normal0 = edge.horizontal ? (sy + 1) * hh : (sx + 1) * hh;
  const int along0 = edge.horizontal ? sx * hh : sy * hh;

  std::vector<double> out(2 * static_cast<std::size_t>(res) * res);
  for (int side = 0; side < 2; ++side) {
    for (int b = 0; b < res; ++b) {
      for (int a = 0; a < res; ++a) {
        // Lattice point at (k + 1/2) / res of the subdomain width; exact
        // integer arithmetic keeps the reflection symmetry bit-exact.
        const int normal_num = (2 * a + 1 - (side == 0 ? 2 * res : 0)) * hh;
        const int along_num = (2 * b + 1) * hh;
        const int normal = normal0 + floor_div(normal_num, 2 * res);
        const int along = along0 + floor_div(along_num, 2 * res);
        const int cx = edge.horizontal ? along : normal;
        const int cy = edge.horizontal ? normal : along;
        if (cx < 0 || cx >= n || cy < 0 || cy >= n)
          throw std::logic_error("sample_on_grid: lattice point outside the domain");
        const double alpha = field.values[2 * (static_cast<std::size_t>(cy) * n + cx)];
        out[static_cast<std::size_t>(side) * res * res + static_cast<std::size_t>(b) * res + a] =
            alpha / field.alpha_high;
      }
    }
  }
  return out;
}

}  // namespace nlfeti
