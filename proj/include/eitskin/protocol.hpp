#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "eitskin/error.hpp"

namespace eitskin {

enum class ProtocolScheme { Adjacent, AllPairs };

inline std::string to_string(ProtocolScheme s) { return s == ProtocolScheme::Adjacent ? "adjacent" : "all_pairs"; }

inline ProtocolScheme parse_protocol_scheme(const std::string& s) {
  if (s == "adjacent") return ProtocolScheme::Adjacent;
  if (s == "all_pairs") return ProtocolScheme::AllPairs;
  throw Error(ErrorKind::InvalidArgument, "unknown protocol scheme '" + s + "'");
}

/// Ordered electrode pair: current enters at `first` and leaves at `second`;
/// voltages are read as u(first) - u(second).
using ElectrodePair = std::pair<int, int>;

/// Tetrapolar drive/measure schedule. Measurement m of the flattened frame is
/// measure_pairs[d][j] under drive_pairs[d], enumerated drive-major.
struct MeasurementProtocol {
  int E = 0;
  ProtocolScheme scheme = ProtocolScheme::Adjacent;
  std::vector<ElectrodePair> drive_pairs;
  std::vector<std::vector<ElectrodePair>> measure_pairs;
  double excitation_current = 1.0;        ///< mA
  double excitation_frequency_khz = 40.0;  ///< metadata only

  int M() const {
    int m = 0;
    for (const auto& mp : measure_pairs) m += static_cast<int>(mp.size());
    return m;
  }

  /// Flattened (drive, measure) list in frame order.
  std::vector<std::pair<ElectrodePair, ElectrodePair>> combinations() const {
    std::vector<std::pair<ElectrodePair, ElectrodePair>> out;
    for (std::size_t d = 0; d < drive_pairs.size(); ++d)
      for (const auto& m : measure_pairs[d]) out.emplace_back(drive_pairs[d], m);
    return out;
  }
};

namespace detail {

inline bool touches(const ElectrodePair& a, const ElectrodePair& b) {
  return a.first == b.first || a.first == b.second || a.second == b.first || a.second == b.second;
}

inline std::pair<int, int> unordered(const ElectrodePair& p) { return std::minmax(p.first, p.second); }

}  // namespace detail

/// adjacent: drive (i, i+1), measure every adjacent pair clear of the drive,
///   M = E(E-3).
/// all_pairs: every unordered pair {a, b} drives once; its measurement is the
///   first adjacent pair after b that avoids the drive and whose reciprocal
///   combination is not already scheduled. M = E(E-1)/2 for E >= 5.
inline MeasurementProtocol build_protocol(int E, ProtocolScheme scheme) {
  require(E >= 4, "protocol needs at least 4 electrodes");
  MeasurementProtocol p;
  p.E = E;
  p.scheme = scheme;
  if (scheme == ProtocolScheme::Adjacent) {
    for (int i = 0; i < E; ++i) {
      const ElectrodePair drive{i, (i + 1) % E};
      std::vector<ElectrodePair> meas;
      for (int j = 0; j < E; ++j) {
        const ElectrodePair m{j, (j + 1) % E};
        if (!detail::touches(drive, m)) meas.push_back(m);
      }
      p.drive_pairs.push_back(drive);
      p.measure_pairs.push_back(std::move(meas));
    }
    return p;
  }

  std::set<std::pair<std::pair<int, int>, std::pair<int, int>>> scheduled;
  for (int a = 0; a < E; ++a) {
    for (int b = a + 1; b < E; ++b) {
      const ElectrodePair drive{a, b};
      for (int step = 1; step <= E; ++step) {
        const int j = (b + step) % E;
        const ElectrodePair m{j, (j + 1) % E};
        if (detail::touches(drive, m)) continue;
        const auto du = detail::unordered(drive);
        const auto mu = detail::unordered(m);
        if (scheduled.count({mu, du}) != 0 || scheduled.count({du, mu}) != 0) continue;
        scheduled.insert({du, mu});
        p.drive_pairs.push_back(drive);
        p.measure_pairs.push_back({m});
        break;
      }
    }
  }
  return p;
}

}  // namespace eitskin
