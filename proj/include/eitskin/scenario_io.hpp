#pragma once

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <yaml-cpp/yaml.h>

#include "eitskin/error.hpp"
#include "eitskin/scenario.hpp"

namespace eitskin {

// ---------------------------------------------------------------------------
// Scenario files (YAML; JSON is accepted as a subset)
//
//   name: custom
//   seed: 7
//   noise: {snr_db: 60}          # .inf disables noise
//   frames:
//     - {t: 0}
//     - t: 100
//       phantoms:
//         - {type: touch, x: 40, y: 30, force: 10, radius: 7.5}
//         - {type: bend, angle: 30, band: [55, 95]}
//     - {t: 200, repeat: 5, period: 100, phantoms: [{type: bend, angle: 10}]}
//
// `repeat` expands an entry into that many frames spaced `period` ms apart.

namespace detail {

[[noreturn]] inline void scenario_fail(const YAML::Node& node, const std::string& what) {
  const auto mark = node.Mark();
  throw ScenarioError(what, mark.line + 1, mark.column + 1);
}

template <class T>
T scalar(const YAML::Node& parent, const std::string& key, const T& fallback, bool required = false) {
  const YAML::Node node = parent[key];
  if (!node) {
    if (required) scenario_fail(parent, "missing key '" + key + "'");
    return fallback;
  }
  try {
    return node.as<T>();
  } catch (const YAML::Exception&) {
    scenario_fail(node, "bad value for '" + key + "'");
  }
}

inline Phantom parse_phantom(const YAML::Node& node) {
  if (!node.IsMap()) scenario_fail(node, "phantom must be a mapping");
  const auto type = scalar<std::string>(node, "type", "", true);
  if (type == "touch") {
    TouchPhantom t;
    t.center.x = scalar<double>(node, "x", 0.0, true);
    t.center.y = scalar<double>(node, "y", 0.0, true);
    t.force = scalar<double>(node, "force", kDefaultForce);
    t.radius = scalar<double>(node, "radius", kIndenterRadius);
    if (!(t.radius > 0.0) || t.force < 0.0) scenario_fail(node, "touch needs radius > 0 and force >= 0");
    return t;
  }
  if (type == "bend") {
    BendPhantom b;
    b.angle = scalar<double>(node, "angle", 0.0, true);
    if (const YAML::Node band = node["band"]) {
      if (!band.IsSequence() || band.size() != 2) scenario_fail(band, "band must be [lo, hi]");
      b.band_lo = band[0].as<double>();
      b.band_hi = band[1].as<double>();
    }
    if (b.angle < 0.0 || b.angle > kMaxBendAngle) scenario_fail(node, "bend angle must lie in [0, 60]");
    if (!(b.band_hi > b.band_lo)) scenario_fail(node, "bend band is empty");
    return b;
  }
  scenario_fail(node, "unknown phantom type '" + type + "'");
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ScenarioError(e.msg, e.mark.line + 1, e.mark.column + 1);
  }
  if (!root.IsMap()) throw ScenarioError("scenario must be a mapping", 1, 1);
  Scenario s;
  s.name = detail::scalar<std::string>(root, "name", "scenario");
  s.seed = detail::scalar<std::uint64_t>(root, "seed", 0);
  if (const YAML::Node noise = root["noise"]) {
    s.noise.snr_db = detail::scalar<double>(noise, "snr_db", kDefaultSnrDb);
    if (std::isnan(s.noise.snr_db)) detail::scenario_fail(noise, "snr_db must be a number or .inf");
  }
  const YAML::Node frames = root["frames"];
  if (!frames) detail::scenario_fail(root, "missing key 'frames'");
  if (!frames.IsSequence()) detail::scenario_fail(frames, "'frames' must be a list");
  for (const auto& entry : frames) {
    if (!entry.IsMap()) detail::scenario_fail(entry, "frame entry must be a mapping");
    const double t = detail::scalar<double>(entry, "t", 0.0, true);
    const int repeat = detail::scalar<int>(entry, "repeat", 1);
    const double period = detail::scalar<double>(entry, "period", scenarios::kFramePeriodMs);
    if (repeat < 1) detail::scenario_fail(entry, "repeat must be >= 1");
    std::vector<Phantom> phantoms;
    if (const YAML::Node list = entry["phantoms"]) {
      if (!list.IsSequence()) detail::scenario_fail(list, "'phantoms' must be a list");
      for (const auto& p : list) phantoms.push_back(detail::parse_phantom(p));
    }
    for (int r = 0; r < repeat; ++r) {
      const double time = t + r * period;
      if (!s.schedule.empty() && !(time > s.schedule.back().time_ms))
        detail::scenario_fail(entry, "schedule times must be strictly increasing");
      s.schedule.push_back({time, phantoms});
    }
  }
  return s;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScenarioError("cannot open scenario file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

// ---------------------------------------------------------------------------
// Ground truth as compact JSON

inline nlohmann::json truth_to_json(const std::vector<Phantom>& phantoms) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& ph : phantoms) {
    if (const auto* t = std::get_if<TouchPhantom>(&ph)) {
      arr.push_back({{"type", "touch"}, {"x", t->center.x}, {"y", t->center.y}, {"radius", t->radius}, {"force", t->force}});
    } else {
      const auto& b = std::get<BendPhantom>(ph);
      arr.push_back({{"type", "bend"}, {"angle", b.angle}, {"band", {b.band_lo, b.band_hi}}});
    }
  }
  return arr;
}

inline std::vector<Phantom> truth_from_json(const nlohmann::json& arr) {
  std::vector<Phantom> out;
  for (const auto& j : arr) {
    const auto type = j.at("type").get<std::string>();
    if (type == "touch") {
      out.push_back(TouchPhantom{{j.at("x").get<double>(), j.at("y").get<double>()}, j.at("radius").get<double>(),
                                 j.at("force").get<double>()});
    } else if (type == "bend") {
      out.push_back(BendPhantom{j.at("angle").get<double>(), j.at("band").at(0).get<double>(),
                                j.at("band").at(1).get<double>()});
    } else {
      throw Error(ErrorKind::Io, "unknown phantom type in truth_json: " + type);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FrameLog CSV: frame_id,timestamp_ms,label,truth_json,v_0..v_{M-1}
// truth_json is a double-quoted field with embedded quotes doubled; numbers
// use shortest round-trip formatting.

namespace detail {

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw Error(ErrorKind::Io, "bad number '" + s + "'");
  return v;
}

}  // namespace detail

inline void write_frame_log(std::ostream& os, const FrameLog& log, int M) {
  os << "frame_id,timestamp_ms,label,truth_json";
  for (int m = 0; m < M; ++m) os << ",v_" << m;
  os << '\n';
  for (const auto& lf : log.frames) {
    require(lf.frame.voltages.size() == M, "frame length does not match the log width", ErrorKind::DimensionMismatch);
    os << lf.frame.frame_id << ',' << detail::format_double(lf.frame.timestamp_ms) << ',' << to_string(lf.label) << ','
       << detail::csv_quote(truth_to_json(lf.truth).dump());
    for (int m = 0; m < M; ++m) os << ',' << detail::format_double(lf.frame.voltages[m]);
    os << '\n';
  }
}

inline void write_frame_log(std::ostream& os, const FrameLog& log) { write_frame_log(os, log, log.M()); }

inline FrameLog read_frame_log(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw Error(ErrorKind::Io, "frame log is empty");
  const auto header = detail::csv_split(line);
  if (header.size() < 4 || header[0] != "frame_id" || header[1] != "timestamp_ms" || header[2] != "label" ||
      header[3] != "truth_json")
    throw Error(ErrorKind::Io, "frame log header is malformed");
  const int M = static_cast<int>(header.size()) - 4;
  for (int m = 0; m < M; ++m)
    if (header[4 + m] != "v_" + std::to_string(m)) throw Error(ErrorKind::Io, "frame log header is malformed");
  FrameLog log;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = detail::csv_split(line);
    if (static_cast<int>(f.size()) != M + 4)
      throw Error(ErrorKind::Io, "frame log line " + std::to_string(line_no) + " has the wrong field count");
    LoggedFrame lf;
    try {
      lf.frame.frame_id = std::stoll(f[0]);
      lf.frame.timestamp_ms = detail::parse_double(f[1]);
      lf.label = parse_label(f[2]);
      lf.truth = truth_from_json(nlohmann::json::parse(f[3]));
      lf.frame.voltages.resize(M);
      for (int m = 0; m < M; ++m) lf.frame.voltages[m] = detail::parse_double(f[4 + m]);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw Error(ErrorKind::Io, "frame log line " + std::to_string(line_no) + ": " + e.what());
    }
    log.frames.push_back(std::move(lf));
  }
  return log;
}

}  // namespace eitskin
