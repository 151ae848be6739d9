#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "eitskin/error.hpp"

namespace eitskin {

/// Default sensing-layer footprint and resolution (mm).
inline constexpr double kSensorWidth = 150.0;
inline constexpr double kSensorHeight = 60.0;
inline constexpr double kDefaultElementSize = 5.0;
inline constexpr double kDefaultElectrodeWidth = 5.0;
inline constexpr int kDefaultElectrodeCount = 8;
/// Contact impedance of the silver electrodes, Ohm mm^2.
inline constexpr double kDefaultContactImpedance = 100.0;

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Triangulated rectangular domain [0,width] x [0,height] (mm).
///
/// `boundary` is the closed loop of boundary nodes, counterclockwise, starting
/// at the node nearest the origin. Boundary edge k joins boundary[k] and
/// boundary[k+1 mod B] and starts at arc length `boundary_arc[k]`.
struct Mesh {
  double width = 0.0;
  double height = 0.0;
  std::vector<Point> nodes;
  std::vector<std::array<int, 3>> elements;
  std::vector<double> element_areas;
  std::vector<int> boundary;
  std::vector<double> boundary_arc;
  double perimeter = 0.0;

  int N() const { return static_cast<int>(elements.size()); }
  int node_count() const { return static_cast<int>(nodes.size()); }
  int boundary_edge_count() const { return static_cast<int>(boundary.size()); }

  Point centroid(int e) const {
    const auto& t = elements[e];
    return {(nodes[t[0]].x + nodes[t[1]].x + nodes[t[2]].x) / 3.0,
            (nodes[t[0]].y + nodes[t[1]].y + nodes[t[2]].y) / 3.0};
  }

  double boundary_edge_length(int k) const {
    const Point& a = nodes[boundary[k]];
    const Point& b = nodes[boundary[(k + 1) % boundary.size()]];
    return std::hypot(b.x - a.x, b.y - a.y);
  }

  std::pair<int, int> boundary_edge(int k) const {
    return {boundary[k], boundary[(k + 1) % boundary.size()]};
  }

  double total_area() const {
    double s = 0.0;
    for (double a : element_areas) s += a;
    return s;
  }

  friend bool operator==(const Mesh& a, const Mesh& b) {
    return a.width == b.width && a.height == b.height && a.nodes == b.nodes && a.elements == b.elements;
  }
};

namespace detail {

inline double signed_area(const Point& a, const Point& b, const Point& c) {
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

/// Fills areas and the boundary loop from nodes/elements; validates the mesh.
inline void finalize_mesh(Mesh& mesh) {
  const int n_nodes = mesh.node_count();
  mesh.element_areas.assign(mesh.elements.size(), 0.0);
  for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
    auto& t = mesh.elements[e];
    for (int v : t) require(v >= 0 && v < n_nodes, "element references an invalid node index");
    require(t[0] != t[1] && t[1] != t[2] && t[0] != t[2], "element repeats a node index");
    double a = signed_area(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
    if (a < 0.0) {
      std::swap(t[1], t[2]);
      a = -a;
    }
    require(a > 0.0, "degenerate element with zero area");
    mesh.element_areas[e] = a;
  }
  const double expected = mesh.width * mesh.height;
  require(std::abs(mesh.total_area() - expected) <= 1e-6 * expected,
          "elements do not tile the rectangular domain");

  // Directed edges of counterclockwise triangles; an edge is on the boundary
  // when its reverse is absent. Boundary edges then run counterclockwise.
  std::map<std::pair<int, int>, int> directed;
  for (const auto& t : mesh.elements)
    for (int i = 0; i < 3; ++i) directed[{t[i], t[(i + 1) % 3]}] += 1;
  std::map<int, int> next;
  for (const auto& [edge, count] : directed) {
    if (directed.count({edge.second, edge.first}) == 0) {
      require(next.count(edge.first) == 0, "non-manifold boundary");
      next[edge.first] = edge.second;
    }
  }
  require(!next.empty(), "mesh has no boundary");

  int start = next.begin()->first;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& [node, unused] : next) {
    const double d = std::hypot(mesh.nodes[node].x, mesh.nodes[node].y);
    if (d < best) {
      best = d;
      start = node;
    }
  }
  mesh.boundary.clear();
  mesh.boundary_arc.clear();
  double arc = 0.0;
  int node = start;
  do {
    mesh.boundary.push_back(node);
    mesh.boundary_arc.push_back(arc);
    const int nxt = next.at(node);
    arc += std::hypot(mesh.nodes[nxt].x - mesh.nodes[node].x, mesh.nodes[nxt].y - mesh.nodes[node].y);
    node = nxt;
    require(mesh.boundary.size() <= next.size(), "boundary does not close");
  } while (node != start);
  require(mesh.boundary.size() == next.size(), "boundary is not a single loop");
  mesh.perimeter = arc;
}

inline double wrap_arc(double s, double perimeter) {
  double r = std::fmod(s, perimeter);
  if (r < 0.0) r += perimeter;
  return r;
}

/// Circular signed distance a - b in (-P/2, P/2].
inline double arc_delta(double a, double b, double perimeter) {
  double d = wrap_arc(a - b, perimeter);
  if (d > 0.5 * perimeter) d -= perimeter;
  return d;
}

}  // namespace detail

/// nx x ny grid cells, each split along its rising diagonal. No electrode
/// feasibility check; see build_rect_mesh.
inline Mesh build_grid_mesh(double width, double height, int nx, int ny) {
  require(width > 0.0 && height > 0.0, "mesh dimensions must be positive");
  require(nx >= 1 && ny >= 1, "grid needs at least one cell per direction");
  Mesh mesh;
  mesh.width = width;
  mesh.height = height;
  mesh.nodes.reserve(static_cast<std::size_t>((nx + 1) * (ny + 1)));
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i)
      mesh.nodes.push_back({width * i / nx, height * j / ny});
  auto id = [nx](int i, int j) { return j * (nx + 1) + i; };
  mesh.elements.reserve(static_cast<std::size_t>(2 * nx * ny));
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      mesh.elements.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.elements.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  detail::finalize_mesh(mesh);
  return mesh;
}

/// Structured triangulation with cells no larger than target_elem_size.
inline Mesh build_rect_mesh(double width, double height, double target_elem_size) {
  require(width > 0.0 && height > 0.0 && target_elem_size > 0.0, "mesh dimensions must be positive");
  require(target_elem_size <= std::min(width, height) / 4.0,
          "target element size too coarse to place electrodes (must be <= min(width, height)/4)");
  const int nx = std::max(1, static_cast<int>(std::ceil(width / target_elem_size - 1e-9)));
  const int ny = std::max(1, static_cast<int>(std::ceil(height / target_elem_size - 1e-9)));
  return build_grid_mesh(width, height, nx, ny);
}

/// Maps an arc length (wrapped onto the perimeter) to a boundary point.
inline Point boundary_point(const Mesh& mesh, double arc) {
  const double s = detail::wrap_arc(arc, mesh.perimeter);
  const int B = mesh.boundary_edge_count();
  for (int k = 0; k < B; ++k) {
    const double len = mesh.boundary_edge_length(k);
    if (s <= mesh.boundary_arc[k] + len || k == B - 1) {
      const double t = len > 0.0 ? (s - mesh.boundary_arc[k]) / len : 0.0;
      const auto [a, b] = mesh.boundary_edge(k);
      return {mesh.nodes[a].x + t * (mesh.nodes[b].x - mesh.nodes[a].x),
              mesh.nodes[a].y + t * (mesh.nodes[b].y - mesh.nodes[a].y)};
    }
  }
  return mesh.nodes[mesh.boundary.front()];
}

struct Electrode {
  double center = 0.0;  ///< nominal center arc length
  double start = 0.0;   ///< snapped start arc length, in [0, perimeter)
  double length = 0.0;  ///< snapped length along the boundary
  std::vector<int> edges;

  friend bool operator==(const Electrode&, const Electrode&) = default;
};

struct ElectrodeLayout {
  std::vector<Electrode> electrodes;
  double contact_impedance = kDefaultContactImpedance;
  double electrode_width = kDefaultElectrodeWidth;

  int E() const { return static_cast<int>(electrodes.size()); }

  friend bool operator==(const ElectrodeLayout&, const ElectrodeLayout&) = default;
};

/// Electrodes at equal arc-length spacing, counterclockwise, electrode 0
/// centered at arc length 0. Each electrode is snapped to the run of whole
/// boundary edges whose midpoint is nearest its nominal center; a tie goes to
/// the run lying further counterclockwise.
inline ElectrodeLayout place_electrodes(const Mesh& mesh, int count, double electrode_width,
                                        double contact_impedance = kDefaultContactImpedance) {
  require(count >= 4, "at least 4 electrodes are required");
  require(electrode_width > 0.0, "electrode width must be positive");
  require(contact_impedance > 0.0, "contact impedance must be positive");
  require(mesh.perimeter >= count * electrode_width, "boundary too short for the requested electrodes");

  const int B = mesh.boundary_edge_count();
  const double P = mesh.perimeter;
  ElectrodeLayout layout;
  layout.contact_impedance = contact_impedance;
  layout.electrode_width = electrode_width;
  std::vector<int> owner(static_cast<std::size_t>(B), -1);

  for (int l = 0; l < count; ++l) {
    const double center = P * l / count;
    int containing = 0;
    for (int k = 0; k < B; ++k) {
      const double rel = detail::wrap_arc(center - mesh.boundary_arc[k], P);
      if (rel < mesh.boundary_edge_length(k)) {
        containing = k;
        break;
      }
    }
    const int run = std::max(1, static_cast<int>(std::lround(electrode_width / mesh.boundary_edge_length(containing))));
    require(run < B, "electrode wider than the boundary");

    int best_start = -1;
    double best_abs = std::numeric_limits<double>::infinity();
    double best_signed = 0.0;
    for (int i = 0; i < B; ++i) {
      double len = 0.0;
      for (int r = 0; r < run; ++r) len += mesh.boundary_edge_length((i + r) % B);
      const double d = detail::arc_delta(mesh.boundary_arc[i] + 0.5 * len, center, P);
      const double ad = std::abs(d);
      const bool tie = std::abs(ad - best_abs) <= 1e-9;
      if ((!tie && ad < best_abs) || (tie && d > best_signed)) {
        best_abs = ad;
        best_signed = d;
        best_start = i;
      }
    }
    Electrode el;
    el.center = center;
    el.start = mesh.boundary_arc[best_start];
    for (int r = 0; r < run; ++r) {
      const int k = (best_start + r) % B;
      if (owner[k] != -1) {
        throw Error(ErrorKind::InvalidArgument,
                    "electrode " + std::to_string(l) + " cannot be snapped: boundary edge already used by electrode " +
                        std::to_string(owner[k]));
      }
      owner[k] = l;
      el.edges.push_back(k);
      el.length += mesh.boundary_edge_length(k);
    }
    layout.electrodes.push_back(std::move(el));
  }
  return layout;
}

// ---------------------------------------------------------------------------
// Plain-text mesh format
//
//   eitskin-mesh 1
//   domain <width> <height>
//   nodes <n>
//   <x> <y>                       (n lines)
//   elements <m>
//   <a> <b> <c>                   (m lines, 0-based node indices)
//   electrodes <E> <contact_impedance> <electrode_width>   (optional)
//   <center> <start> <length> <k> <edge_0> ... <edge_k-1>  (E lines)
//
// Doubles are written in shortest round-trip form.

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void expect_token(std::istream& is, const std::string& token) {
  std::string got;
  if (!(is >> got) || got != token) throw Error(ErrorKind::Io, "mesh text: expected '" + token + "', got '" + got + "'");
}

}  // namespace detail

inline void write_mesh_text(std::ostream& os, const Mesh& mesh, const ElectrodeLayout* layout = nullptr) {
  using detail::format_double;
  os << "eitskin-mesh 1\n";
  os << "domain " << format_double(mesh.width) << ' ' << format_double(mesh.height) << '\n';
  os << "nodes " << mesh.nodes.size() << '\n';
  for (const auto& p : mesh.nodes) os << format_double(p.x) << ' ' << format_double(p.y) << '\n';
  os << "elements " << mesh.elements.size() << '\n';
  for (const auto& t : mesh.elements) os << t[0] << ' ' << t[1] << ' ' << t[2] << '\n';
  if (layout != nullptr) {
    os << "electrodes " << layout->E() << ' ' << format_double(layout->contact_impedance) << ' '
       << format_double(layout->electrode_width) << '\n';
    for (const auto& el : layout->electrodes) {
      os << format_double(el.center) << ' ' << format_double(el.start) << ' ' << format_double(el.length) << ' '
         << el.edges.size();
      for (int k : el.edges) os << ' ' << k;
      os << '\n';
    }
  }
}

struct MeshText {
  Mesh mesh;
  std::optional<ElectrodeLayout> layout;
};

inline MeshText read_mesh_text(std::istream& is) {
  MeshText out;
  detail::expect_token(is, "eitskin-mesh");
  int version = 0;
  if (!(is >> version) || version != 1) throw Error(ErrorKind::Io, "mesh text: unsupported version");
  detail::expect_token(is, "domain");
  is >> out.mesh.width >> out.mesh.height;
  std::size_t n = 0;
  detail::expect_token(is, "nodes");
  is >> n;
  out.mesh.nodes.resize(n);
  for (auto& p : out.mesh.nodes) is >> p.x >> p.y;
  detail::expect_token(is, "elements");
  is >> n;
  out.mesh.elements.resize(n);
  for (auto& t : out.mesh.elements) is >> t[0] >> t[1] >> t[2];
  if (!is) throw Error(ErrorKind::Io, "mesh text: truncated input");
  detail::finalize_mesh(out.mesh);

  std::string token;
  if (is >> token) {
    if (token != "electrodes") throw Error(ErrorKind::Io, "mesh text: unexpected token '" + token + "'");
    ElectrodeLayout layout;
    int E = 0;
    is >> E >> layout.contact_impedance >> layout.electrode_width;
    for (int l = 0; l < E; ++l) {
      Electrode el;
      std::size_t k = 0;
      is >> el.center >> el.start >> el.length >> k;
      el.edges.resize(k);
      for (auto& e : el.edges) is >> e;
      layout.electrodes.push_back(std::move(el));
    }
    if (!is) throw Error(ErrorKind::Io, "mesh text: truncated electrode block");
    out.layout = std::move(layout);
  }
  return out;
}

}  // namespace eitskin
