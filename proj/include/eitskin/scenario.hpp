#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "eitskin/error.hpp"
#include "eitskin/phantom.hpp"
#include "eitskin/world.hpp"

namespace eitskin {

enum class Label { Idle, Touch, Bend, TouchBend };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::Idle: return "idle";
    case Label::Touch: return "touch";
    case Label::Bend: return "bend";
    case Label::TouchBend: return "touch+bend";
  }
  return "idle";
}

inline Label parse_label(const std::string& s) {
  if (s == "idle") return Label::Idle;
  if (s == "touch") return Label::Touch;
  if (s == "bend") return Label::Bend;
  if (s == "touch+bend") return Label::TouchBend;
  throw Error(ErrorKind::Io, "unknown frame label '" + s + "'");
}

inline Label label_of(const std::vector<Phantom>& phantoms) {
  bool touch = false, bend = false;
  for (const auto& p : phantoms) (std::holds_alternative<TouchPhantom>(p) ? touch : bend) = true;
  if (touch && bend) return Label::TouchBend;
  if (touch) return Label::Touch;
  if (bend) return Label::Bend;
  return Label::Idle;
}

struct ScheduleEntry {
  double time_ms = 0.0;
  std::vector<Phantom> phantoms;
};

struct Scenario {
  std::string name;
  std::vector<ScheduleEntry> schedule;
  NoiseModel noise;
  std::uint64_t seed = 0;
};

/// A synthesized frame with the ground truth that produced it.
struct LoggedFrame {
  MeasurementFrame frame;
  Label label = Label::Idle;
  std::vector<Phantom> truth;
};

struct FrameLog {
  std::vector<LoggedFrame> frames;

  std::size_t size() const { return frames.size(); }
  bool empty() const { return frames.empty(); }
  int M() const { return frames.empty() ? 0 : static_cast<int>(frames.front().frame.voltages.size()); }
};

inline void validate_schedule(const Scenario& s) {
  for (std::size_t i = 1; i < s.schedule.size(); ++i) {
    if (!(s.schedule[i].time_ms > s.schedule[i - 1].time_ms)) {
      throw ScenarioError("schedule times must be strictly increasing (entry " + std::to_string(i) + ")");
    }
  }
}

/// One frame per schedule entry; frame i draws its noise from
/// frame_rng(seed, i), so frames are independent of evaluation order.
inline FrameLog run_scenario(const Scenario& s, const World& world) {
  validate_schedule(s);
  FrameLog log;
  log.frames.resize(s.schedule.size());
  parallel_for(s.schedule.size(), [&](std::size_t i) {
    const auto& entry = s.schedule[i];
    auto rng = frame_rng(s.seed, static_cast<std::int64_t>(i));
    LoggedFrame lf;
    lf.frame = world.synthesize(entry.phantoms, s.noise, rng);
    lf.frame.frame_id = static_cast<std::int64_t>(i);
    lf.frame.timestamp_ms = entry.time_ms;
    lf.label = label_of(entry.phantoms);
    lf.truth = entry.phantoms;
    log.frames[i] = std::move(lf);
  });
  return log;
}

// ---------------------------------------------------------------------------
// Builtin scenarios replicating the experimental protocols.

namespace scenarios {

inline constexpr double kFramePeriodMs = 100.0;

/// 6 x 3 indentation grid at 15 mm pitch, centred on the sensor.
inline std::vector<Point> touch_grid_positions() {
  std::vector<Point> pts;
  for (double y : {15.0, 30.0, 45.0})
    for (int i = 0; i < 6; ++i) pts.push_back({37.5 + 15.0 * i, y});
  return pts;
}

/// Touch pairs at least 40 mm apart.
inline std::vector<std::pair<Point, Point>> two_touch_pairs() {
  return {{{37.5, 30.0}, {112.5, 30.0}}, {{45.0, 20.0}, {105.0, 40.0}}, {{52.5, 45.0}, {97.5, 15.0}}};
}

inline void append(Scenario& s, std::vector<Phantom> phantoms) {
  const double t = s.schedule.empty() ? 0.0 : s.schedule.back().time_ms + kFramePeriodMs;
  s.schedule.push_back({t, std::move(phantoms)});
}

inline Scenario touch_grid_18(std::uint64_t seed = 0) {
  Scenario s{"touch-grid-18", {}, NoiseModel{}, seed};
  for (const auto& p : touch_grid_positions()) append(s, {TouchPhantom{p}});
  return s;
}

inline Scenario idle(int frames, std::uint64_t seed = 0) {
  Scenario s{"idle-" + std::to_string(frames), {}, NoiseModel{}, seed};
  for (int i = 0; i < frames; ++i) append(s, {});
  return s;
}

/// 500 idle, then 225 bend (15 angles spanning 0..60 degrees x 15), then 315
/// touch (21 random contact locations x 15).
inline Scenario dataset_1080(std::uint64_t seed = 0) {
  Scenario s{"dataset-1080", {}, NoiseModel{}, seed};
  for (int i = 0; i < 500; ++i) append(s, {});
  for (int a = 0; a < 15; ++a) {
    const double angle = kMaxBendAngle * a / 14.0;
    for (int r = 0; r < 15; ++r) append(s, {BendPhantom{angle}});
  }
  std::mt19937_64 rng(splitmix64(seed ^ 0x746f756368ULL));
  std::uniform_real_distribution<double> ux(10.0, kSensorWidth - 10.0);
  std::uniform_real_distribution<double> uy(10.0, kSensorHeight - 10.0);
  for (int loc = 0; loc < 21; ++loc) {
    const Point p{ux(rng), uy(rng)};
    for (int r = 0; r < 15; ++r) append(s, {TouchPhantom{p}});
  }
  return s;
}

/// Calibration sweep: 15 samples at each of 0, 10, ..., 50 degrees.
inline Scenario bend_calib_90(std::uint64_t seed = 0) {
  Scenario s{"bend-calib-90", {}, NoiseModel{}, seed};
  for (int a = 0; a <= 50; a += 10)
    for (int r = 0; r < 15; ++r) append(s, {BendPhantom{static_cast<double>(a)}});
  return s;
}

/// Evaluation sweep: 5 repeats at 20, 30, 40, 50 degrees.
inline Scenario bend_eval_20(std::uint64_t seed = 0) {
  Scenario s{"bend-eval-20", {}, NoiseModel{}, seed};
  for (int a = 20; a <= 50; a += 10)
    for (int r = 0; r < 5; ++r) append(s, {BendPhantom{static_cast<double>(a)}});
  return s;
}

inline constexpr int kLeadInIdleFrames = 10;
inline constexpr int kBendSettleFrames = 5;

/// Idle lead-in, bend to `angle`, then one single touch per grid position and
/// the two-touch pairs while bent, each touch preceded by a touch-free bent
/// frame.
inline Scenario bend_touch(double angle, std::uint64_t seed = 0) {
  Scenario s{"bend-touch-" + std::to_string(static_cast<int>(std::lround(angle))), {}, NoiseModel{}, seed};
  const BendPhantom bend{angle};
  for (int i = 0; i < kLeadInIdleFrames; ++i) append(s, {});
  for (int i = 0; i < kBendSettleFrames; ++i) append(s, {bend});
  for (const auto& p : touch_grid_positions()) {
    append(s, {bend, TouchPhantom{p}});
    append(s, {bend});
  }
  for (const auto& [a, b] : two_touch_pairs()) {
    append(s, {bend, TouchPhantom{a}, TouchPhantom{b}});
    append(s, {bend});
  }
  return s;
}

/// The four humanoid-elbow interaction cases: rest, slight bend, fingertip
/// touch while slightly bent, larger bend with touch.
inline Scenario robot_demo(std::uint64_t seed = 0) {
  Scenario s{"robot-demo", {}, NoiseModel{}, seed};
  const TouchPhantom fingertip{{46.0, 5.0}};
  for (int i = 0; i < kLeadInIdleFrames; ++i) append(s, {});
  for (int i = 0; i < kBendSettleFrames; ++i) append(s, {BendPhantom{5.0}});
  for (int i = 0; i < kBendSettleFrames; ++i) append(s, {BendPhantom{5.0}, fingertip});
  for (int i = 0; i < kBendSettleFrames; ++i) append(s, {BendPhantom{30.0}});
  for (int i = 0; i < kBendSettleFrames; ++i) append(s, {BendPhantom{30.0}, fingertip});
  return s;
}

inline std::vector<std::string> builtin_names() {
  return {"touch-grid-18", "dataset-1080", "bend-calib-90", "bend-eval-20", "bend-touch-10",
          "bend-touch-20", "bend-touch-30", "robot-demo",    "idle-50"};
}

inline Scenario builtin(const std::string& name, std::uint64_t seed = 0) {
  if (name == "touch-grid-18") return touch_grid_18(seed);
  if (name == "dataset-1080") return dataset_1080(seed);
  if (name == "bend-calib-90") return bend_calib_90(seed);
  if (name == "bend-eval-20") return bend_eval_20(seed);
  if (name == "bend-touch-10") return bend_touch(10.0, seed);
  if (name == "bend-touch-20") return bend_touch(20.0, seed);
  if (name == "bend-touch-30") return bend_touch(30.0, seed);
  if (name == "robot-demo") return robot_demo(seed);
  if (name == "idle-50") return idle(50, seed);
  throw ScenarioError("unknown builtin scenario '" + name + "'");
}

}  // namespace scenarios

}  // namespace eitskin
