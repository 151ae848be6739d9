#pragma once

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "eitskin/error.hpp"
#include "eitskin/forward.hpp"
#include "eitskin/mesh.hpp"
#include "eitskin/phantom.hpp"

namespace eitskin {

inline constexpr int kBendFeatures = 5;
inline constexpr double kBendRidge = 1e-9;

/// Score assigned to channels whose groups separate perfectly (zero within-group
/// variance, nonzero between-group variance).
inline constexpr double kInfiniteScore = std::numeric_limits<double>::max();

/// One-way ANOVA F statistic per column of X. `groups` holds a discrete
/// group key per row (e.g. the calibration angle).
template <class Key>
Eigen::VectorXd anova_f_scores(const Eigen::MatrixXd& X, const std::vector<Key>& groups) {
  require(static_cast<Eigen::Index>(groups.size()) == X.rows(), "one group key per sample is required",
          ErrorKind::DimensionMismatch);
  std::map<Key, std::vector<Eigen::Index>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(static_cast<Eigen::Index>(i));
  const auto k = static_cast<Eigen::Index>(members.size());
  require(k >= 2, "ANOVA needs at least two groups", ErrorKind::InsufficientGroups);
  for (const auto& [key, rows] : members)
    require(rows.size() >= 2, "every ANOVA group needs at least two samples", ErrorKind::InsufficientGroups);
  const Eigen::Index n = X.rows();

  Eigen::VectorXd scores(X.cols());
  for (Eigen::Index c = 0; c < X.cols(); ++c) {
    const double grand = X.col(c).mean();
    double ss_between = 0.0, ss_within = 0.0;
    for (const auto& [key, rows] : members) {
      double mean = 0.0;
      for (auto r : rows) mean += X(r, c);
      mean /= static_cast<double>(rows.size());
      ss_between += static_cast<double>(rows.size()) * (mean - grand) * (mean - grand);
      for (auto r : rows) ss_within += (X(r, c) - mean) * (X(r, c) - mean);
    }
    const double ms_between = ss_between / static_cast<double>(k - 1);
    const double ms_within = ss_within / static_cast<double>(n - k);
    // Relative guards: rounding leaves ~1e-30 residue on constant data.
    const double scale = X.col(c).cwiseAbs().maxCoeff();
    const double tiny = 1e-24 * scale * scale;
    if (ms_between <= tiny) {
      scores[c] = 0.0;
    } else if (ms_within <= tiny * 1e-4) {
      scores[c] = kInfiniteScore;
    } else {
      scores[c] = ms_between / ms_within;
    }
  }
  return scores;
}

/// Indices of the k largest scores, by descending score then ascending index.
inline std::vector<int> select_k_best(const Eigen::VectorXd& scores, int k = kBendFeatures) {
  require(k >= 0 && k <= scores.size(), "k must lie in [0, M]");
  std::vector<int> idx(static_cast<std::size_t>(scores.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores[a] > scores[b]; });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

struct FeatureSelection {
  Eigen::VectorXd scores;
  std::vector<int> selected;
};

/// Affine map from selected voltage changes (mV) to bending angle (degrees).
struct BendModel {
  FeatureSelection selection;
  Eigen::VectorXd weights;  ///< degrees per mV, one per selected channel
  double intercept = 0.0;   ///< degrees
  int M = 0;

  // training metadata
  std::vector<double> angles;
  std::vector<int> samples_per_angle;
  std::uint64_t seed = 0;
  double training_mae = 0.0;

  double apply(const Eigen::VectorXd& selected_dv) const { return weights.dot(selected_dv) + intercept; }

  friend bool operator==(const BendModel& a, const BendModel& b) {
    return a.selection.scores == b.selection.scores && a.selection.selected == b.selection.selected &&
           a.weights == b.weights && a.intercept == b.intercept && a.M == b.M && a.angles == b.angles &&
           a.samples_per_angle == b.samples_per_angle && a.seed == b.seed && a.training_mae == b.training_mae;
  }
};

struct LinearFit {
  Eigen::VectorXd weights;
  double intercept = 0.0;
};

/// Ordinary least squares through the normal equations with a tiny ridge on
/// the slope terms. Throws InvalidArgument when the design is rank deficient.
inline LinearFit fit_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double ridge = kBendRidge) {
  require(X.rows() == y.size(), "one target per sample is required", ErrorKind::DimensionMismatch);
  require(X.rows() >= X.cols() + 1, "least squares needs more samples than unknowns");
  const Eigen::Index p = X.cols() + 1;
  Eigen::MatrixXd A(X.rows(), p);
  A.leftCols(X.cols()) = X;
  A.col(X.cols()).setOnes();

  // Column scaling keeps the rank test meaningful for mV-sized features.
  Eigen::VectorXd scale = A.colwise().norm().transpose();
  for (Eigen::Index j = 0; j < p; ++j)
    if (!(scale[j] > 0.0)) throw Error(ErrorKind::InvalidArgument, "design column " + std::to_string(j) + " is zero");
  const Eigen::MatrixXd As = A * scale.cwiseInverse().asDiagonal();
  Eigen::MatrixXd G = As.transpose() * As;
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(G);
  const auto& sv = svd.singularValues();
  if (sv[p - 1] < 1e-14 * sv[0]) throw Error(ErrorKind::InvalidArgument, "design matrix is rank deficient");
  Eigen::MatrixXd Gr = G;
  for (Eigen::Index j = 0; j + 1 < p; ++j) Gr(j, j) += ridge;
  const auto ldlt = Gr.ldlt();
  const Eigen::VectorXd rhs = As.transpose() * y;
  Eigen::VectorXd beta = ldlt.solve(rhs);
  // One refinement step against the unridged system removes the ridge bias to
  // first order while keeping the ridged factorization.
  beta += ldlt.solve(rhs - G * beta);
  beta = beta.cwiseQuotient(scale);
  return {beta.head(X.cols()), beta[X.cols()]};
}

inline Eigen::MatrixXd gather_columns(const Eigen::MatrixXd& X, const std::vector<int>& cols) {
  Eigen::MatrixXd out(X.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = X.col(cols[j]);
  return out;
}

inline double predict_raw(const BendModel& model, const Eigen::VectorXd& dv) {
  require(dv.size() == model.M, "voltage change length does not match the bend model", ErrorKind::DimensionMismatch);
  Eigen::VectorXd sel(static_cast<Eigen::Index>(model.selection.selected.size()));
  for (std::size_t j = 0; j < model.selection.selected.size(); ++j)
    sel[static_cast<Eigen::Index>(j)] = dv[model.selection.selected[j]];
  return model.apply(sel);
}

/// Bending angle from the change against the global reference, clamped to
/// the calibrated range.
inline double predict_angle(const BendModel& model, const MeasurementFrame& frame, const Eigen::VectorXd& global_ref) {
  require(frame.voltages.size() == model.M && global_ref.size() == model.M,
          "frame length does not match the bend model", ErrorKind::DimensionMismatch);
  return std::clamp(predict_raw(model, frame.voltages - global_ref), 0.0, kMaxBendAngle);
}

/// Select the k most group-discriminative channels of dV (rows = samples)
/// and fit the affine angle map on them.
inline BendModel fit_bend_model(const Eigen::MatrixXd& dV, const std::vector<double>& angles, int k = kBendFeatures,
                                std::uint64_t seed = 0) {
  require(dV.rows() == static_cast<Eigen::Index>(angles.size()), "one angle per sample is required",
          ErrorKind::DimensionMismatch);
  BendModel model;
  model.M = static_cast<int>(dV.cols());
  model.seed = seed;
  model.selection.scores = anova_f_scores(dV, angles);
  model.selection.selected = select_k_best(model.selection.scores, k);
  const Eigen::MatrixXd Xs = gather_columns(dV, model.selection.selected);
  const Eigen::VectorXd y = Eigen::Map<const Eigen::VectorXd>(angles.data(), static_cast<Eigen::Index>(angles.size()));
  const LinearFit fit = fit_linear(Xs, y);
  model.weights = fit.weights;
  model.intercept = fit.intercept;

  std::map<double, int> counts;
  for (double a : angles) ++counts[a];
  for (const auto& [a, c] : counts) {
    model.angles.push_back(a);
    model.samples_per_angle.push_back(c);
  }
  double mae = 0.0;
  for (Eigen::Index i = 0; i < Xs.rows(); ++i)
    mae += std::abs(std::clamp(model.apply(Xs.row(i).transpose()), 0.0, kMaxBendAngle) - y[i]);
  model.training_mae = mae / static_cast<double>(Xs.rows());
  return model;
}

// ---------------------------------------------------------------------------
// Text artifact
//
//   eitskin-bend 1
//   M 40
//   selected 5 i0 i1 i2 i3 i4
//   weights w0 w1 w2 w3 w4
//   intercept b
//   angles n a0 .. / samples n c0 ..
//   seed s
//   training_mae e
//   scores M s0 .. s_{M-1}

inline void write_bend_model(std::ostream& os, const BendModel& m) {
  const auto list = [&](const char* key, const auto& v) {
    os << key << ' ' << v.size();
    for (auto x : v) os << ' ' << detail::format_double(static_cast<double>(x));
    os << '\n';
  };
  os << "eitskin-bend 1\n";
  os << "M " << m.M << '\n';
  os << "selected " << m.selection.selected.size();
  for (int i : m.selection.selected) os << ' ' << i;
  os << '\n';
  os << "weights";
  for (Eigen::Index j = 0; j < m.weights.size(); ++j) os << ' ' << detail::format_double(m.weights[j]);
  os << '\n';
  os << "intercept " << detail::format_double(m.intercept) << '\n';
  list("angles", m.angles);
  list("samples", m.samples_per_angle);
  os << "seed " << m.seed << '\n';
  os << "training_mae " << detail::format_double(m.training_mae) << '\n';
  os << "scores " << m.selection.scores.size();
  for (Eigen::Index j = 0; j < m.selection.scores.size(); ++j)
    os << ' ' << detail::format_double(m.selection.scores[j]);
  os << '\n';
}

inline BendModel read_bend_model(std::istream& is) {
  const auto fail = [](const std::string& what) -> void { throw Error(ErrorKind::Io, "bend model: " + what); };
  std::string tag;
  int version = 0;
  if (!(is >> tag >> version) || tag != "eitskin-bend" || version != 1) fail("bad header");
  const auto expect = [&](const char* key) {
    if (!(is >> tag) || tag != key) fail(std::string("expected '") + key + "'");
  };
  BendModel m;
  expect("M");
  is >> m.M;
  expect("selected");
  std::size_t k = 0;
  is >> k;
  m.selection.selected.resize(k);
  for (auto& i : m.selection.selected) is >> i;
  expect("weights");
  m.weights.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index j = 0; j < m.weights.size(); ++j) is >> m.weights[j];
  expect("intercept");
  is >> m.intercept;
  expect("angles");
  is >> k;
  m.angles.resize(k);
  for (auto& a : m.angles) is >> a;
  expect("samples");
  is >> k;
  m.samples_per_angle.resize(k);
  for (auto& c : m.samples_per_angle) is >> c;
  expect("seed");
  is >> m.seed;
  expect("training_mae");
  is >> m.training_mae;
  expect("scores");
  is >> k;
  m.selection.scores.resize(static_cast<Eigen::Index>(k));
  for (Eigen::Index j = 0; j < m.selection.scores.size(); ++j) is >> m.selection.scores[j];
  if (!is) fail("truncated");
  for (int i : m.selection.selected)
    if (i < 0 || i >= m.M) fail("selected index out of range");
  return m;
}

}  // namespace eitskin
