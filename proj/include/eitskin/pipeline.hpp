#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "eitskin/bend.hpp"
#include "eitskin/classifier.hpp"
#include "eitskin/error.hpp"
#include "eitskin/reconstruction.hpp"
#include "eitskin/scenario.hpp"

namespace eitskin {

struct ReferenceState {
  Eigen::VectorXd global_ref;
  Eigen::VectorXd touch_ref;
  std::int64_t touch_ref_frame_id = -1;
  double last_bend_angle = 0.0;
  int pending_updates = 0;  ///< consecutive bend frames beyond the update threshold

  int M() const { return static_cast<int>(global_ref.size()); }

  friend bool operator==(const ReferenceState& a, const ReferenceState& b) {
    auto same = [](const Eigen::VectorXd& u, const Eigen::VectorXd& v) { return u.size() == v.size() && u == v; };
    return same(a.global_ref, b.global_ref) && same(a.touch_ref, b.touch_ref) &&
           a.touch_ref_frame_id == b.touch_ref_frame_id && a.last_bend_angle == b.last_bend_angle &&
           a.pending_updates == b.pending_updates;
  }
};

/// Global reference = per-channel mean of undeformed, untouched frames.
inline ReferenceState capture_global_reference(const std::vector<MeasurementFrame>& frames) {
  require(!frames.empty(), "global reference needs at least one frame");
  ReferenceState st;
  // Mean taken about the first frame, so identical frames reproduce it bit for
  // bit; rounding residue would otherwise be stretched by the normalization.
  const Eigen::VectorXd& first = frames.front().voltages;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(first.size());
  for (const auto& f : frames) {
    require(f.voltages.size() == first.size(), "reference frames differ in length", ErrorKind::DimensionMismatch);
    require(f.voltages.allFinite(), "reference frame is not finite");
    offset += f.voltages - first;
    st.touch_ref_frame_id = std::max(st.touch_ref_frame_id, f.frame_id);
  }
  st.global_ref = first + offset / static_cast<double>(frames.size());
  st.touch_ref = st.global_ref;
  return st;
}

inline void reset_touch_reference(ReferenceState& st) {
  st.touch_ref = st.global_ref;
  st.last_bend_angle = 0.0;
  st.pending_updates = 0;
}

enum class ClassifierChoice { Network, Baseline };

struct PipelineConfig {
  double bend_update_threshold = 1.0;  ///< degrees
  int bend_confirm_frames = 2;
  ClassifierChoice classifier = ClassifierChoice::Network;
  int max_touches = 2;

  void validate() const {
    require(bend_update_threshold > 0.0, "bend update threshold must be positive");
    require(bend_confirm_frames >= 1, "bend confirmation needs at least one frame");
    require(max_touches >= 1, "max touches must be at least one");
  }
};

/// Immutable collaborators of the pipeline; shareable between pipelines.
struct PipelineComponents {
  std::shared_ptr<const Reconstructor> reconstructor;
  ModalityClassifier classifier;
  BendModel bend_model;
};

struct FrameResult {
  std::int64_t frame_id = 0;
  double timestamp_ms = 0.0;
  Label modality = Label::Idle;
  std::optional<double> bend_angle;  ///< degrees
  TouchReport touches;
  TouchReport global_touches;  ///< same localization on the pre-reconstruction, for comparison
  Modality label_pre = Modality::Idle;
  Modality label_touch = Modality::Idle;
  bool reference_updated = false;
  bool reference_rolled_back = false;
  std::int64_t touch_ref_frame_id = -1;
  ReconstructionImage pre_image, touch_image, bend_image;
};

/// One step of the adaptive-reference state machine.
inline FrameResult process_frame(ReferenceState& st, const MeasurementFrame& frame, const PipelineComponents& comp,
                                 const PipelineConfig& cfg) {
  cfg.validate();
  require(comp.reconstructor != nullptr, "pipeline needs a reconstructor");
  require(st.M() == comp.reconstructor->M() && st.touch_ref.size() == st.M(),
          "reference length does not match the reconstructor", ErrorKind::DimensionMismatch);
  require((cfg.classifier == ClassifierChoice::Network) == comp.classifier.uses_network(),
          "configured classifier does not match the supplied one");
  const Reconstructor& rec = *comp.reconstructor;
  const double width = rec.mesh().width, height = rec.mesh().height;
  try {
    FrameResult r;
    r.frame_id = frame.frame_id;
    r.timestamp_ms = frame.timestamp_ms;

    // (a), (b)
    r.pre_image = reconstruct(rec, frame, st.global_ref, ReferenceKind::Global);
    r.label_pre = comp.classifier(preprocess(r.pre_image));

    // (c) debounced touch-reference capture
    const ReferenceState before = st;
    std::optional<double> angle;
    if (r.label_pre == Modality::Bend) {
      angle = predict_angle(comp.bend_model, frame, st.global_ref);
      if (std::abs(*angle - st.last_bend_angle) > cfg.bend_update_threshold) {
        if (++st.pending_updates >= cfg.bend_confirm_frames) {
          st.touch_ref = frame.voltages;
          st.touch_ref_frame_id = frame.frame_id;
          st.last_bend_angle = *angle;
          st.pending_updates = 0;
          r.reference_updated = true;
        }
      } else {
        st.pending_updates = 0;
      }
    } else {
      st.pending_updates = 0;
    }

    // (d)
    r.touch_image = reconstruct(rec, frame, st.touch_ref, ReferenceKind::Touch);
    r.label_touch = comp.classifier(preprocess(r.touch_image));
    if (r.reference_updated && r.label_touch == Modality::Touch) {
      st = before;
      st.pending_updates = 0;
      r.reference_updated = false;
      r.reference_rolled_back = true;
      r.touch_image = reconstruct(rec, frame, st.touch_ref, ReferenceKind::Touch);
      r.label_touch = comp.classifier(preprocess(r.touch_image));
    }

    // (e)
    if (r.label_touch == Modality::Touch) {
      r.touches = localize_touches(r.touch_image, width, height, cfg.max_touches);
      r.global_touches = localize_touches(r.pre_image, width, height, cfg.max_touches);
      r.modality = st.last_bend_angle > cfg.bend_update_threshold ? Label::TouchBend : Label::Touch;
      if (r.modality == Label::TouchBend) r.bend_angle = angle ? *angle : predict_angle(comp.bend_model, frame, st.global_ref);
    }

    // (f)
    r.bend_image = threshold_nonnegative(r.pre_image);
    if (r.label_pre == Modality::Bend && r.label_touch != Modality::Touch) {
      r.modality = Label::Bend;
      r.bend_angle = angle;
    }

    // (g) and every remaining combination
    if (r.label_touch != Modality::Touch && r.label_pre != Modality::Bend) r.modality = Label::Idle;
    r.touch_ref_frame_id = st.touch_ref_frame_id;
    return r;
  } catch (const Error& e) {
    throw Error(e.kind(), "frame " + std::to_string(frame.frame_id) + ": " + e.what());
  }
}

/// Convenience owner of the state and its collaborators.
class Pipeline {
 public:
  Pipeline(PipelineComponents comp, PipelineConfig cfg, ReferenceState state)
      : comp_(std::move(comp)), cfg_(cfg), state_(std::move(state)) {
    cfg_.validate();
  }

  FrameResult process(const MeasurementFrame& frame) { return process_frame(state_, frame, comp_, cfg_); }
  void reset_touch_reference() { eitskin::reset_touch_reference(state_); }
  const ReferenceState& state() const { return state_; }
  const PipelineConfig& config() const { return cfg_; }
  const PipelineComponents& components() const { return comp_; }

 private:
  PipelineComponents comp_;
  PipelineConfig cfg_;
  ReferenceState state_;
};

// ---------------------------------------------------------------------------
// Line records: positions in cm, angle with two decimals.

inline std::string format_frame_result(const FrameResult& r) {
  char buf[96];
  std::string s = "frame=" + std::to_string(r.frame_id);
  std::snprintf(buf, sizeof buf, " t_ms=%.0f", r.timestamp_ms);
  s += buf;
  s += " modality=" + to_string(r.modality);
  if (r.bend_angle) {
    std::snprintf(buf, sizeof buf, " angle=%.2f", *r.bend_angle);
    s += buf;
  } else {
    s += " angle=none";
  }
  s += " touches=" + std::to_string(r.touches.count());
  if (r.modality == Label::Touch || r.modality == Label::TouchBend) {
    for (int i = 0; i < r.touches.count(); ++i) {
      std::snprintf(buf, sizeof buf, " p%d=(%.2f,%.2f)", i, r.touches.points[i].x / 10.0, r.touches.points[i].y / 10.0);
      s += buf;
    }
  }
  s += " pre=" + nn::to_string(r.label_pre) + " touch=" + nn::to_string(r.label_touch);
  s += " touch_ref=" + std::to_string(r.touch_ref_frame_id);
  if (r.reference_updated) s += " updated";
  if (r.reference_rolled_back) s += " rolled_back";
  return s;
}

}  // namespace eitskin
