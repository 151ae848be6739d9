#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "eitskin/bend.hpp"
#include "eitskin/pipeline.hpp"
#include "eitskin/scenario.hpp"

namespace eitskin {

// ---------------------------------------------------------------------------
// Ground truth helpers

inline std::vector<Point> truth_touches(const std::vector<Phantom>& truth) {
  std::vector<Point> pts;
  for (const auto& p : truth)
    if (const auto* t = std::get_if<TouchPhantom>(&p)) pts.push_back(t->center);
  return pts;
}

/// Angle of the (first) bend phantom, if any.
inline std::optional<double> truth_angle(const std::vector<Phantom>& truth) {
  for (const auto& p : truth)
    if (const auto* b = std::get_if<BendPhantom>(&p)) return b->angle;
  return std::nullopt;
}

/// Greedy nearest-pair matching of detections to truth points. Entry i is
/// the error (mm) of truth point i, or nullopt when it got no detection.
inline std::vector<std::optional<double>> match_errors(const std::vector<Point>& truth, const TouchReport& found) {
  struct Pair {
    double d;
    std::size_t t, f;
  };
  std::vector<Pair> pairs;
  for (std::size_t t = 0; t < truth.size(); ++t)
    for (std::size_t f = 0; f < found.points.size(); ++f)
      pairs.push_back({std::hypot(found.points[f].x - truth[t].x, found.points[f].y - truth[t].y), t, f});
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.d < b.d; });
  std::vector<std::optional<double>> err(truth.size());
  std::vector<char> used(found.points.size(), 0);
  for (const auto& p : pairs) {
    if (err[p.t] || used[p.f]) continue;
    err[p.t] = p.d;
    used[p.f] = 1;
  }
  return err;
}

/// Voltage changes against `global_ref` for every bend-only frame (rows) and
/// their angles; the input of the bend calibration.
struct BendSamples {
  Eigen::MatrixXd dV;
  std::vector<double> angles;
};

inline BendSamples bend_samples(const FrameLog& log, const Eigen::VectorXd& global_ref) {
  std::vector<const LoggedFrame*> picked;
  for (const auto& lf : log.frames)
    if (lf.label == Label::Bend) picked.push_back(&lf);
  BendSamples s;
  s.dV.resize(static_cast<Eigen::Index>(picked.size()), global_ref.size());
  for (std::size_t i = 0; i < picked.size(); ++i) {
    const auto& v = picked[i]->frame.voltages;
    require(v.size() == global_ref.size(), "frame length does not match the reference", ErrorKind::DimensionMismatch);
    s.dV.row(static_cast<Eigen::Index>(i)) = (v - global_ref).transpose();
    s.angles.push_back(*truth_angle(picked[i]->truth));
  }
  return s;
}

// ---------------------------------------------------------------------------
// Run report

struct TouchCase {
  std::int64_t frame_id = 0;
  int truth_count = 0;
  int detected = 0;
  std::vector<std::optional<double>> errors;         ///< adaptive reference, per truth point
  std::vector<std::optional<double>> global_errors;  ///< same frame, global reference
};

struct AngleCase {
  std::int64_t frame_id = 0;
  double truth = 0.0;
  std::optional<double> predicted;
};

struct ErrorSummary {
  int cases = 0;
  int missed = 0;
  double mean = 0.0;  ///< over matched points
  double max = 0.0;
};

inline ErrorSummary summarize(const std::vector<std::optional<double>>& errs) {
  ErrorSummary s;
  int n = 0;
  for (const auto& e : errs) {
    ++s.cases;
    if (!e) {
      ++s.missed;
      continue;
    }
    s.mean += *e;
    s.max = std::max(s.max, *e);
    ++n;
  }
  if (n > 0) s.mean /= n;
  return s;
}

/// Everything the report derives from a log and its result stream. Wall-clock
/// timings are deliberately absent, so rewriting a report is bit-identical.
struct RunReport {
  std::string experiment;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> config;
  std::array<std::array<int, 4>, 4> confusion{};  ///< [truth label][reported modality]
  std::vector<TouchCase> touch_cases;
  std::vector<AngleCase> angle_cases;

  std::vector<std::optional<double>> errors(int truth_count, bool global = false) const {
    std::vector<std::optional<double>> out;
    for (const auto& c : touch_cases)
      if (c.truth_count == truth_count) {
        const auto& e = global ? c.global_errors : c.errors;
        out.insert(out.end(), e.begin(), e.end());
      }
    return out;
  }

  /// Two-touch frames whose reported count was exactly 2.
  int two_touch_count_hits() const {
    int n = 0;
    for (const auto& c : touch_cases) n += c.truth_count == 2 && c.detected == 2;
    return n;
  }

  std::map<double, std::vector<double>> angle_errors() const {
    std::map<double, std::vector<double>> out;
    for (const auto& a : angle_cases)
      if (a.predicted) out[a.truth].push_back(std::abs(*a.predicted - a.truth));
    return out;
  }

  std::optional<double> overall_angle_mae() const {
    double s = 0.0;
    int n = 0;
    for (const auto& a : angle_cases)
      if (a.predicted) {
        s += std::abs(*a.predicted - a.truth);
        ++n;
      }
    return n ? std::optional<double>(s / n) : std::nullopt;
  }
};

inline RunReport build_report(std::string experiment, std::uint64_t seed,
                              std::vector<std::pair<std::string, std::string>> config, const FrameLog& log,
                              const std::vector<FrameResult>& results) {
  RunReport rep;
  rep.experiment = std::move(experiment);
  rep.seed = seed;
  rep.config = std::move(config);
  std::map<std::int64_t, const LoggedFrame*> by_id;
  for (const auto& lf : log.frames) by_id[lf.frame.frame_id] = &lf;
  for (const auto& r : results) {
    const auto it = by_id.find(r.frame_id);
    require(it != by_id.end(), "result for frame " + std::to_string(r.frame_id) + " has no logged frame");
    const LoggedFrame& lf = *it->second;
    ++rep.confusion[static_cast<int>(lf.label)][static_cast<int>(r.modality)];
    const auto pts = truth_touches(lf.truth);
    if (!pts.empty()) {
      TouchCase c;
      c.frame_id = r.frame_id;
      c.truth_count = static_cast<int>(pts.size());
      const bool has_touch = r.modality == Label::Touch || r.modality == Label::TouchBend;
      c.detected = has_touch ? r.touches.count() : 0;
      c.errors = match_errors(pts, has_touch ? r.touches : TouchReport{});
      c.global_errors = match_errors(pts, has_touch ? r.global_touches : TouchReport{});
      rep.touch_cases.push_back(std::move(c));
    }
    if (const auto a = truth_angle(lf.truth)) rep.angle_cases.push_back({r.frame_id, *a, r.bend_angle});
  }
  return rep;
}

namespace detail {

inline std::string fixed(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

inline std::string opt_fixed(const std::optional<double>& v, int digits = 3) { return v ? fixed(*v, digits) : "miss"; }

}  // namespace detail

inline void write_report(std::ostream& os, const RunReport& rep) {
  using detail::fixed;
  os << "report " << rep.experiment << "\n";
  os << "seed " << rep.seed << "\n";
  for (const auto& [k, v] : rep.config) os << "config " << k << " " << v << "\n";

  static constexpr std::array<Label, 4> kLabels{Label::Idle, Label::Touch, Label::Bend, Label::TouchBend};
  os << "\n[confusion] rows=truth cols=reported\n";
  os << "truth";
  for (Label l : kLabels) os << " " << to_string(l);
  os << "\n";
  for (Label t : kLabels) {
    os << to_string(t);
    for (Label p : kLabels) os << " " << rep.confusion[static_cast<int>(t)][static_cast<int>(p)];
    os << "\n";
  }

  const auto summary_line = [&](const char* name, const ErrorSummary& s) {
    os << name << " cases=" << s.cases << " missed=" << s.missed << " mean_mm=" << fixed(s.mean)
       << " max_mm=" << fixed(s.max) << "\n";
  };
  os << "\n[touch]\n";
  summary_line("single adaptive", summarize(rep.errors(1)));
  summary_line("single global", summarize(rep.errors(1, true)));
  summary_line("two adaptive", summarize(rep.errors(2)));
  summary_line("two global", summarize(rep.errors(2, true)));
  int two_frames = 0;
  for (const auto& c : rep.touch_cases) two_frames += c.truth_count == 2;
  os << "two count_hits=" << rep.two_touch_count_hits() << "/" << two_frames << "\n";
  for (const auto& c : rep.touch_cases) {
    os << "frame=" << c.frame_id << " truth=" << c.truth_count << " detected=" << c.detected << " err_mm=";
    for (std::size_t i = 0; i < c.errors.size(); ++i) os << (i ? "," : "") << detail::opt_fixed(c.errors[i]);
    os << " global_err_mm=";
    for (std::size_t i = 0; i < c.global_errors.size(); ++i)
      os << (i ? "," : "") << detail::opt_fixed(c.global_errors[i]);
    os << "\n";
  }

  os << "\n[bend]\n";
  const auto mae = rep.overall_angle_mae();
  int missing = 0;
  for (const auto& a : rep.angle_cases) missing += !a.predicted;
  os << "overall cases=" << rep.angle_cases.size() << " missing=" << missing << " mae_deg=" << detail::opt_fixed(mae)
     << "\n";
  for (const auto& [angle, errs] : rep.angle_errors()) {
    double s = 0.0;
    for (double e : errs) s += e;
    os << "angle=" << fixed(angle, 2) << " n=" << errs.size() << " mae_deg=" << fixed(s / static_cast<double>(errs.size()))
       << "\n";
  }
}

}  // namespace eitskin
