#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "eitskin/error.hpp"
#include "eitskin/forward.hpp"
#include "eitskin/mesh.hpp"

namespace eitskin {

/// Indenter footprint radius (15 mm diameter), mm.
inline constexpr double kIndenterRadius = 7.5;
inline constexpr double kDefaultForce = 10.0;
inline constexpr double kMaxBendAngle = 60.0;
inline constexpr double kDefaultSnrDb = 60.0;

struct TouchPhantom {
  Point center;
  double radius = kIndenterRadius;
  double force = kDefaultForce;  ///< N

  friend bool operator==(const TouchPhantom&, const TouchPhantom&) = default;
};

/// Bending as a conductivity signature over an x-band, constant in y.
struct BendPhantom {
  double angle = 0.0;  ///< degrees
  double band_lo = 55.0;
  double band_hi = 95.0;

  friend bool operator==(const BendPhantom&, const BendPhantom&) = default;
};

using Phantom = std::variant<TouchPhantom, BendPhantom>;

/// Conductivity response calibration. Gains are in units of sigma0: a 10 N
/// touch peaks at 0.5 sigma0, a 60 degree bend at 0.3 sigma0 on the band center.
struct PhantomModel {
  double sigma0 = kDefaultSigma0;
  double touch_gain = 0.05;   ///< sigma0 per N
  double bend_gain = 0.005;   ///< sigma0 per degree
  double touch_sign = 1.0;    ///< +1: pressure raises conductivity
  double floor_fraction = 0.05;

  double touch_peak(double force) const { return touch_sign * touch_gain * sigma0 * force; }
};

inline Eigen::VectorXd touch_delta(const TouchPhantom& ph, const Mesh& mesh, const PhantomModel& model = {}) {
  require(ph.center.x >= 0.0 && ph.center.x <= mesh.width && ph.center.y >= 0.0 && ph.center.y <= mesh.height,
          "touch center outside the sensor");
  require(ph.radius > 0.0, "touch radius must be positive");
  require(ph.force >= 0.0, "touch force must be nonnegative");
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(mesh.N());
  const double peak = model.touch_peak(ph.force);
  if (peak == 0.0) return delta;
  const double s = ph.radius / 2.0;
  const double cutoff = 2.0 * ph.radius;
  for (int e = 0; e < mesh.N(); ++e) {
    const Point c = mesh.centroid(e);
    const double d2 = (c.x - ph.center.x) * (c.x - ph.center.x) + (c.y - ph.center.y) * (c.y - ph.center.y);
    if (d2 > cutoff * cutoff) continue;
    delta[e] = peak * std::exp(-d2 / (2.0 * s * s));
  }
  return delta;
}

/// Raised-cosine profile: 1 at the band center, 0 at and beyond its edges.
inline double bend_profile(double x, double band_lo, double band_hi) {
  if (x <= band_lo || x >= band_hi) return 0.0;
  const double mid = 0.5 * (band_lo + band_hi);
  const double half = 0.5 * (band_hi - band_lo);
  return 0.5 * (1.0 + std::cos(M_PI * (x - mid) / half));
}

inline Eigen::VectorXd bend_delta(const BendPhantom& ph, const Mesh& mesh, const PhantomModel& model = {}) {
  require(ph.angle >= 0.0 && ph.angle <= kMaxBendAngle, "bend angle must lie in [0, 60] degrees");
  require(ph.band_hi > ph.band_lo, "bend band is empty");
  Eigen::VectorXd delta = Eigen::VectorXd::Zero(mesh.N());
  const double amplitude = model.bend_gain * model.sigma0 * ph.angle;
  if (amplitude == 0.0) return delta;
  for (int e = 0; e < mesh.N(); ++e) delta[e] = amplitude * bend_profile(mesh.centroid(e).x, ph.band_lo, ph.band_hi);
  return delta;
}

inline Eigen::VectorXd phantom_delta(const Phantom& ph, const Mesh& mesh, const PhantomModel& model = {}) {
  return std::visit(
      [&](const auto& p) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, TouchPhantom>)
          return touch_delta(p, mesh, model);
        else
          return bend_delta(p, mesh, model);
      },
      ph);
}

/// sigma0 + sum of deltas, floored at floor_fraction * sigma0.
inline ConductivityField compose_field(const std::vector<Phantom>& phantoms, const Mesh& mesh,
                                       const PhantomModel& model = {}) {
  ConductivityField field = ConductivityField::homogeneous(mesh.N(), model.sigma0);
  for (const auto& ph : phantoms) field.sigma += phantom_delta(ph, mesh, model);
  field.sigma = field.sigma.cwiseMax(model.floor_fraction * model.sigma0);
  return field;
}

/// Additive white Gaussian noise with std = rms(V) / 10^(snr_db / 20).
/// snr_db = +infinity disables noise.
struct NoiseModel {
  double snr_db = kDefaultSnrDb;

  bool enabled() const { return std::isfinite(snr_db); }
};

/// Deterministic per-frame random stream derived from (seed, frame_id).
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::mt19937_64 frame_rng(std::uint64_t seed, std::int64_t frame_id) {
  return std::mt19937_64(splitmix64(splitmix64(seed) ^ static_cast<std::uint64_t>(frame_id)));
}

inline void add_noise(Eigen::VectorXd& voltages, const NoiseModel& noise, std::mt19937_64& rng) {
  require(!std::isnan(noise.snr_db), "snr_db must not be NaN");
  if (!noise.enabled() || voltages.size() == 0) return;
  const double rms = std::sqrt(voltages.squaredNorm() / static_cast<double>(voltages.size()));
  const double std_dev = rms / std::pow(10.0, noise.snr_db / 20.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (Eigen::Index i = 0; i < voltages.size(); ++i) voltages[i] += std_dev * gauss(rng);
}

/// Full nonlinear forward solve of the composed scene plus measurement noise.
inline MeasurementFrame synthesize_frame(const std::vector<Phantom>& phantoms, const Mesh& mesh,
                                         const ElectrodeLayout& layout, const MeasurementProtocol& protocol,
                                         const NoiseModel& noise, std::mt19937_64& rng, const PhantomModel& model = {},
                                         double thickness_mm = kDefaultThickness) {
  const ConductivityField field = compose_field(phantoms, mesh, model);
  const LinearSystem system = assemble_system(mesh, field, layout, thickness_mm);
  MeasurementFrame frame = solve_forward(system, protocol, protocol.excitation_current);
  add_noise(frame.voltages, noise, rng);
  return frame;
}

}  // namespace eitskin
