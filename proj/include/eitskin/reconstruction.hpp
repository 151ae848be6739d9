#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitskin/error.hpp"
#include "eitskin/forward.hpp"
#include "eitskin/mesh.hpp"

namespace eitskin {

inline constexpr double kDefaultLambda = 0.2;
inline constexpr int kRasterSize = 96;

/// Square image grid, row-major, row 0 at the top (y = height) edge.
struct Raster {
  int rows = kRasterSize;
  int cols = kRasterSize;
  std::vector<double> values = std::vector<double>(static_cast<std::size_t>(kRasterSize * kRasterSize), 0.0);

  double& at(int r, int c) { return values[static_cast<std::size_t>(r * cols + c)]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r * cols + c)]; }
  std::size_t size() const { return values.size(); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
  double min() const { return *std::min_element(values.begin(), values.end()); }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Pixel centers in mm; x scales by cols/width and y by rows/height.
inline Point pixel_center(int r, int c, double width, double height, int rows = kRasterSize, int cols = kRasterSize) {
  return {(c + 0.5) * width / cols, height - (r + 0.5) * height / rows};
}

namespace detail {

inline bool contains(const Mesh& mesh, int e, const Point& p, double tol) {
  const auto& t = mesh.elements[e];
  const Point& a = mesh.nodes[t[0]];
  const Point& b = mesh.nodes[t[1]];
  const Point& c = mesh.nodes[t[2]];
  const double area = mesh.element_areas[e];
  const double l0 = signed_area(p, b, c) / area;
  const double l1 = signed_area(a, p, c) / area;
  const double l2 = signed_area(a, b, p) / area;
  return l0 >= -tol && l1 >= -tol && l2 >= -tol;
}

}  // namespace detail

/// Pixel -> element lookup: the lowest-index element containing the pixel center.
inline std::vector<int> build_raster_map(const Mesh& mesh, int rows = kRasterSize, int cols = kRasterSize) {
  std::vector<int> map(static_cast<std::size_t>(rows * cols), -1);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const Point p = pixel_center(r, c, mesh.width, mesh.height, rows, cols);
      for (int e = 0; e < mesh.N(); ++e) {
        if (detail::contains(mesh, e, p, 1e-12)) {
          map[static_cast<std::size_t>(r * cols + c)] = e;
          break;
        }
      }
      require(map[static_cast<std::size_t>(r * cols + c)] >= 0, "raster pixel center lies outside the mesh");
    }
  }
  return map;
}

enum class ReferenceKind { Global, Touch };

inline std::string to_string(ReferenceKind k) { return k == ReferenceKind::Global ? "global" : "touch"; }

struct ReconstructionImage {
  Eigen::VectorXd delta_sigma;  ///< per element, S/m
  Raster raster;
  std::int64_t frame_id = 0;
  ReferenceKind reference = ReferenceKind::Global;
};

/// One-step Gauss-Newton difference reconstructor with a precomputed
/// B = (J^T J + lambda^2 R)^-1 J^T. Immutable after construction.
class Reconstructor {
 public:
  Reconstructor(Eigen::MatrixXd B, double lambda, std::shared_ptr<const Mesh> mesh)
      : B_(std::move(B)), lambda_(lambda), mesh_(std::move(mesh)), raster_map_(build_raster_map(*mesh_)) {}

  const Eigen::MatrixXd& B() const { return B_; }
  double lambda() const { return lambda_; }
  const Mesh& mesh() const { return *mesh_; }
  const std::vector<int>& raster_map() const { return raster_map_; }
  int M() const { return static_cast<int>(B_.cols()); }
  int N() const { return static_cast<int>(B_.rows()); }

  Raster rasterize(const Eigen::VectorXd& element_values) const {
    Raster raster;
    for (std::size_t p = 0; p < raster.size(); ++p) raster.values[p] = element_values[raster_map_[p]];
    return raster;
  }

 private:
  Eigen::MatrixXd B_;
  double lambda_;
  std::shared_ptr<const Mesh> mesh_;
  std::vector<int> raster_map_;
};

inline Reconstructor build_reconstructor(const SensitivityMatrix& sens, double lambda, const RegularizerMatrix& R,
                                         std::shared_ptr<const Mesh> mesh) {
  require(lambda > 0.0, "lambda must be positive");
  require(mesh != nullptr, "reconstructor needs a mesh");
  require(sens.N() == R.diagonal.size() && sens.N() == mesh->N(), "Jacobian, regularizer and mesh sizes disagree");
  const Eigen::MatrixXd& J = sens.J;
  Eigen::MatrixXd normal = J.transpose() * J;
  normal.diagonal() += lambda * lambda * R.floored();
  Eigen::LDLT<Eigen::MatrixXd> ldlt(normal);
  const double min_pivot = ldlt.vectorD().minCoeff();
  if (ldlt.info() != Eigen::Success || !(min_pivot > 0.0)) {
    throw NotPositiveDefiniteError("regularized normal matrix is not positive definite (smallest pivot " +
                                       std::to_string(min_pivot) + ")",
                                   min_pivot);
  }
  Eigen::MatrixXd B = ldlt.solve(Eigen::MatrixXd(J.transpose()));
  return Reconstructor(std::move(B), lambda, std::move(mesh));
}

inline ReconstructionImage reconstruct(const Reconstructor& rec, const MeasurementFrame& frame,
                                       const Eigen::VectorXd& reference, ReferenceKind kind = ReferenceKind::Global) {
  if (frame.voltages.size() != rec.M() || reference.size() != rec.M()) {
    throw Error(ErrorKind::DimensionMismatch, "frame/reference length " + std::to_string(frame.voltages.size()) + "/" +
                                                  std::to_string(reference.size()) + " does not match M=" +
                                                  std::to_string(rec.M()));
  }
  ReconstructionImage img;
  img.delta_sigma = rec.B() * (frame.voltages - reference);
  img.raster = rec.rasterize(img.delta_sigma);
  img.frame_id = frame.frame_id;
  img.reference = kind;
  return img;
}

/// Bend view: negative conductivity changes clipped to zero.
inline ReconstructionImage threshold_nonnegative(const ReconstructionImage& img) {
  ReconstructionImage out = img;
  out.delta_sigma = img.delta_sigma.cwiseMax(0.0);
  for (double& v : out.raster.values) v = std::max(v, 0.0);
  return out;
}

/// Min-max normalization of the nonnegative part onto [0, 1]. Negative
/// side-lobes are clipped first, so the scale is set by the positive peak; a
/// raster with no positive values maps to all zeros.
inline Raster normalize_minmax(const Raster& raster) {
  Raster out = raster;
  for (double& v : out.values) v = std::max(v, 0.0);
  const double lo = out.min();
  const double range = out.max() - lo;
  for (double& v : out.values) v = range > 0.0 ? (v - lo) / range : 0.0;
  return out;
}

inline Raster normalize_and_binarize(const Raster& raster, double threshold = 0.5) {
  Raster out = normalize_minmax(raster);
  for (double& v : out.values) v = v > 0.0 && v >= threshold ? 1.0 : 0.0;
  return out;
}

inline Raster normalize_and_binarize(const ReconstructionImage& img, double threshold = 0.5) {
  return normalize_and_binarize(img.raster, threshold);
}

// ---------------------------------------------------------------------------
// Connected components and touch localization

struct Component {
  int label = 0;
  std::vector<int> pixels;  ///< flat row-major indices
  int min_row = 0, max_row = 0, min_col = 0, max_col = 0;
};

/// 4-connected components of nonzero pixels, labelled in scan order.
inline std::vector<Component> connected_components(const Raster& binary) {
  std::vector<int> label(binary.size(), -1);
  std::vector<Component> comps;
  std::vector<int> stack;
  for (int start = 0; start < static_cast<int>(binary.size()); ++start) {
    if (binary.values[start] == 0.0 || label[start] >= 0) continue;
    Component comp;
    comp.label = static_cast<int>(comps.size());
    comp.min_row = comp.max_row = start / binary.cols;
    comp.min_col = comp.max_col = start % binary.cols;
    label[start] = comp.label;
    stack.assign(1, start);
    while (!stack.empty()) {
      const int p = stack.back();
      stack.pop_back();
      comp.pixels.push_back(p);
      const int r = p / binary.cols;
      const int c = p % binary.cols;
      comp.min_row = std::min(comp.min_row, r);
      comp.max_row = std::max(comp.max_row, r);
      comp.min_col = std::min(comp.min_col, c);
      comp.max_col = std::max(comp.max_col, c);
      const int nbr[4][2] = {{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}};
      for (const auto& rc : nbr) {
        if (rc[0] < 0 || rc[0] >= binary.rows || rc[1] < 0 || rc[1] >= binary.cols) continue;
        const int q = rc[0] * binary.cols + rc[1];
        if (binary.values[q] != 0.0 && label[q] < 0) {
          label[q] = comp.label;
          stack.push_back(q);
        }
      }
    }
    std::sort(comp.pixels.begin(), comp.pixels.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

struct TouchPoint {
  double x = 0.0;  ///< mm
  double y = 0.0;  ///< mm
  double integrated_intensity = 0.0;

  friend bool operator==(const TouchPoint&, const TouchPoint&) = default;
};

struct TouchReport {
  std::vector<TouchPoint> points;  ///< descending integrated intensity

  int count() const { return static_cast<int>(points.size()); }

  friend bool operator==(const TouchReport&, const TouchReport&) = default;
};

inline constexpr int kMinComponentPixels = 5;

/// Centroids of the strongest binarized blobs, intensity-weighted by the
/// normalized raster.
inline TouchReport localize_touches(const ReconstructionImage& img, double width, double height, int max_points = 2,
                                    double threshold = 0.5) {
  const Raster normalized = normalize_minmax(img.raster);
  const Raster binary = normalize_and_binarize(img.raster, threshold);
  struct Candidate {
    double intensity;
    int label;
    TouchPoint point;
  };
  std::vector<Candidate> candidates;
  for (const auto& comp : connected_components(binary)) {
    if (static_cast<int>(comp.pixels.size()) < kMinComponentPixels) continue;
    double total = 0.0, sx = 0.0, sy = 0.0;
    for (int p : comp.pixels) {
      const double w = normalized.values[p];
      const Point c = pixel_center(p / binary.cols, p % binary.cols, width, height, binary.rows, binary.cols);
      total += w;
      sx += w * c.x;
      sy += w * c.y;
    }
    if (total <= 0.0) continue;
    candidates.push_back({total, comp.label, {sx / total, sy / total, total}});
  }
  std::stable_sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.intensity != b.intensity) return a.intensity > b.intensity;
    return a.label < b.label;
  });
  TouchReport report;
  for (std::size_t i = 0; i < candidates.size() && static_cast<int>(i) < max_points; ++i)
    report.points.push_back(candidates[i].point);
  return report;
}

inline TouchReport localize_touches(const Reconstructor& rec, const ReconstructionImage& img, int max_points = 2) {
  return localize_touches(img, rec.mesh().width, rec.mesh().height, max_points);
}

// ---------------------------------------------------------------------------
// Export

/// Binary 16-bit PGM, big-endian samples, min-max scaled to [0, 65535]. The
/// comment line records the physical range.
inline void write_pgm16(std::ostream& os, const Raster& raster) {
  const double lo = raster.min();
  const double hi = raster.max();
  os << "P5\n# min " << detail::format_double(lo) << " max " << detail::format_double(hi) << "\n"
     << raster.cols << ' ' << raster.rows << "\n65535\n";
  for (double v : raster.values) {
    const double t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    const auto s = static_cast<std::uint16_t>(std::lround(t * 65535.0));
    os.put(static_cast<char>(s >> 8));
    os.put(static_cast<char>(s & 0xff));
  }
}

inline void write_raster_csv(std::ostream& os, const Raster& raster) {
  for (int r = 0; r < raster.rows; ++r) {
    for (int c = 0; c < raster.cols; ++c) {
      if (c) os << ',';
      os << detail::format_double(raster.at(r, c));
    }
    os << '\n';
  }
}

/// `touches count=<n> [x<i>=<mm> y<i>=<mm> w<i>=<intensity>]...`
inline std::string format_touch_report(const TouchReport& report) {
  std::string s = "touches count=" + std::to_string(report.count());
  for (int i = 0; i < report.count(); ++i) {
    const auto& p = report.points[i];
    const auto k = std::to_string(i);
    s += " x" + k + "=" + detail::format_double(p.x) + " y" + k + "=" + detail::format_double(p.y) + " w" + k + "=" +
         detail::format_double(p.integrated_intensity);
  }
  return s;
}

}  // namespace eitskin
