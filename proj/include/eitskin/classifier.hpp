#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "eitskin/error.hpp"
#include "eitskin/nn/network.hpp"
#include "eitskin/nn/train.hpp"
#include "eitskin/reconstruction.hpp"
#include "eitskin/scenario.hpp"
#include "eitskin/world.hpp"

namespace eitskin {

using nn::Modality;

inline constexpr double kSegmentationThreshold = 0.5;

/// Classifier input: the normalized reconstruction thresholded at 0.5.
inline Raster preprocess(const ReconstructionImage& img) { return normalize_and_binarize(img, kSegmentationThreshold); }

/// Rule-based labeller: small activity is idle, a component filling most of
/// the bend band's height inside the band is bend, anything else is touch.
/// "Inside" allows `margin` mm on either side: the reconstruction is piecewise
/// constant per element, so a band edge smears by one element.
struct BaselineRule {
  double width = kSensorWidth;
  double height = kSensorHeight;
  double band_lo = 55.0;
  double band_hi = 95.0;
  double margin = kDefaultElementSize;
  int min_active = 10;
  double span_fraction = 0.8;

  Modality operator()(const Raster& binary) const {
    int active = 0;
    for (double v : binary.values) active += v != 0.0;
    if (active < min_active) return Modality::Idle;
    const auto comps = connected_components(binary);
    const Component* largest = nullptr;
    for (const auto& c : comps)
      if (!largest || c.pixels.size() > largest->pixels.size()) largest = &c;
    const int span = largest->max_row - largest->min_row + 1;
    // band columns: pixels whose centers lie inside [band_lo, band_hi]
    const int col_lo = static_cast<int>(std::ceil((band_lo - margin) * binary.cols / width - 0.5));
    const int col_hi = static_cast<int>(std::floor((band_hi + margin) * binary.cols / width - 0.5));
    const bool inside = largest->min_col >= col_lo && largest->max_col <= col_hi;
    if (inside && span >= span_fraction * binary.rows) return Modality::Bend;
    return Modality::Touch;
  }
};

inline Modality baseline_classify(const Raster& binary, const BaselineRule& rule = {}) { return rule(binary); }

/// Either the trained network or the baseline rule behind one interface.
/// A raster without active pixels is idle for both; the network never sees
/// an empty input in training. Network inference reuses internal buffers, so
/// calls are serialized.
class ModalityClassifier {
 public:
  static ModalityClassifier baseline(BaselineRule rule = {}) {
    ModalityClassifier c;
    c.rule_ = rule;
    return c;
  }

  static ModalityClassifier network(nn::Network<float> net) {
    ModalityClassifier c;
    c.net_ = std::make_shared<nn::Network<float>>(std::move(net));
    c.mutex_ = std::make_shared<std::mutex>();
    return c;
  }

  bool uses_network() const { return net_ != nullptr; }
  std::string name() const { return uses_network() ? "network" : "baseline"; }

  Modality operator()(const Raster& binary) const {
    if (!net_) return rule_(binary);
    if (std::all_of(binary.values.begin(), binary.values.end(), [](double v) { return v == 0.0; })) return Modality::Idle;
    std::lock_guard lock(*mutex_);
    require(binary.rows == net_->input_h() && binary.cols == net_->input_w(),
            "raster size does not match the network input", ErrorKind::DimensionMismatch);
    return static_cast<Modality>(nn::argmax(nn::forward_pass(*net_, binary.values)));
  }

 private:
  BaselineRule rule_;
  std::shared_ptr<nn::Network<float>> net_;
  std::shared_ptr<std::mutex> mutex_;
};

inline int class_index(Label l) {
  switch (l) {
    case Label::Idle: return static_cast<int>(Modality::Idle);
    case Label::Touch: return static_cast<int>(Modality::Touch);
    case Label::Bend: return static_cast<int>(Modality::Bend);
    case Label::TouchBend: return -1;
  }
  return -1;
}

/// Mean of the leading idle frames; the noise-free homogeneous frame when the
/// log does not start idle.
inline Eigen::VectorXd leading_idle_reference(const FrameLog& log, const World& world) {
  if (log.frames.empty() || log.frames.front().label != Label::Idle) return world.homogeneous_frame;
  const Eigen::VectorXd& first = log.frames.front().frame.voltages;
  Eigen::VectorXd offset = Eigen::VectorXd::Zero(world.M());
  int n = 0;
  for (const auto& lf : log.frames) {
    if (lf.label != Label::Idle) break;
    require(lf.frame.voltages.size() == world.M(), "frame length does not match the sensor model",
            ErrorKind::DimensionMismatch);
    offset += lf.frame.voltages - first;
    ++n;
  }
  return first + offset / n;
}

/// Preprocessed pre-reconstructions of every single-modality frame.
/// Composite touch+bend frames have no class and are skipped.
inline nn::Dataset build_dataset(const FrameLog& log, const World& world, const Eigen::VectorXd& global_ref) {
  nn::Dataset data(log.frames.size());
  std::vector<char> keep(log.frames.size(), 0);
  parallel_for(log.frames.size(), [&](std::size_t i) {
    const auto& lf = log.frames[i];
    const int label = class_index(lf.label);
    if (label < 0) return;
    data[i].raster = preprocess(reconstruct(*world.reconstructor, lf.frame, global_ref)).values;
    data[i].label = label;
    keep[i] = 1;
  });
  nn::Dataset out;
  for (std::size_t i = 0; i < data.size(); ++i)
    if (keep[i]) out.push_back(std::move(data[i]));
  return out;
}

}  // namespace eitskin
