#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "eitskin/forward.hpp"
#include "eitskin/mesh.hpp"
#include "eitskin/phantom.hpp"
#include "eitskin/protocol.hpp"
#include "eitskin/reconstruction.hpp"

namespace eitskin {

/// Everything needed to instantiate the simulated sensor and its reconstructor.
struct WorldConfig {
  double width = kSensorWidth;
  double height = kSensorHeight;
  double element_size = kDefaultElementSize;
  int electrodes = kDefaultElectrodeCount;
  double electrode_width = kDefaultElectrodeWidth;
  double contact_impedance = kDefaultContactImpedance;
  ProtocolScheme scheme = ProtocolScheme::Adjacent;
  double sigma0 = kDefaultSigma0;
  double thickness = kDefaultThickness;
  double current = kDefaultCurrent;
  double lambda = kDefaultLambda;
  PhantomModel phantom;

  friend bool operator==(const WorldConfig& a, const WorldConfig& b) {
    return a.width == b.width && a.height == b.height && a.element_size == b.element_size &&
           a.electrodes == b.electrodes && a.electrode_width == b.electrode_width &&
           a.contact_impedance == b.contact_impedance && a.scheme == b.scheme && a.sigma0 == b.sigma0 &&
           a.thickness == b.thickness && a.current == b.current && a.lambda == b.lambda;
  }
};

/// Immutable simulated sensor: geometry, protocol, linearization and the
/// precomputed reconstructor.
struct World {
  WorldConfig config;
  std::shared_ptr<const Mesh> mesh;
  ElectrodeLayout layout;
  MeasurementProtocol protocol;
  SensitivityMatrix jacobian;
  RegularizerMatrix regularizer;
  std::shared_ptr<const Reconstructor> reconstructor;
  Eigen::VectorXd homogeneous_frame;  ///< noise-free voltages at sigma0

  int M() const { return protocol.M(); }
  int N() const { return mesh->N(); }

  MeasurementFrame synthesize(const std::vector<Phantom>& phantoms, const NoiseModel& noise,
                              std::mt19937_64& rng) const {
    return synthesize_frame(phantoms, *mesh, layout, protocol, noise, rng, config.phantom, config.thickness);
  }
};

inline World build_world(const WorldConfig& cfg = {}) {
  World w;
  w.config = cfg;
  w.config.phantom.sigma0 = cfg.sigma0;
  w.mesh = std::make_shared<const Mesh>(build_rect_mesh(cfg.width, cfg.height, cfg.element_size));
  w.layout = place_electrodes(*w.mesh, cfg.electrodes, cfg.electrode_width, cfg.contact_impedance);
  w.protocol = build_protocol(cfg.electrodes, cfg.scheme);
  w.protocol.excitation_current = cfg.current;
  require(w.N() >= 4 * w.M(), "mesh too coarse: need at least 4 elements per measurement (N=" + std::to_string(w.N()) +
                                  ", M=" + std::to_string(w.M()) + ")");
  w.jacobian = compute_jacobian(*w.mesh, w.layout, w.protocol, cfg.sigma0, cfg.thickness);
  w.regularizer = noser_regularizer(w.jacobian);
  w.reconstructor =
      std::make_shared<const Reconstructor>(build_reconstructor(w.jacobian, cfg.lambda, w.regularizer, w.mesh));
  const LinearSystem system =
      assemble_system(*w.mesh, ConductivityField::homogeneous(w.N(), cfg.sigma0), w.layout, cfg.thickness);
  w.homogeneous_frame = solve_forward(system, w.protocol, cfg.current).voltages;
  return w;
}

}  // namespace eitskin
