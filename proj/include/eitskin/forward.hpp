#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "eitskin/error.hpp"
#include "eitskin/mesh.hpp"
#include "eitskin/parallel.hpp"
#include "eitskin/protocol.hpp"

namespace eitskin {

/// Background conductivity of the sensing layer, S/m.
inline constexpr double kDefaultSigma0 = 1.0;
/// Sensing-layer thickness (mm); turns the 2-D model into sheet conductance.
inline constexpr double kDefaultThickness = 5.0;
/// Injected current, mA.
inline constexpr double kDefaultCurrent = 1.0;

struct ConductivityField {
  Eigen::VectorXd sigma;  ///< per element, S/m
  double sigma0 = kDefaultSigma0;

  static ConductivityField homogeneous(int n, double sigma0) {
    return {Eigen::VectorXd::Constant(n, sigma0), sigma0};
  }
};

/// One acquisition sweep, voltages in mV in protocol order.
struct MeasurementFrame {
  Eigen::VectorXd voltages;
  std::int64_t frame_id = 0;
  double timestamp_ms = 0.0;
};

/// Gradients of the three P1 basis functions on each element (1/mm).
struct ElementGradients {
  std::vector<std::array<Eigen::Vector2d, 3>> grad;

  explicit ElementGradients(const Mesh& mesh) : grad(static_cast<std::size_t>(mesh.N())) {
    for (int e = 0; e < mesh.N(); ++e) {
      const auto& t = mesh.elements[e];
      const double two_area = 2.0 * mesh.element_areas[e];
      for (int i = 0; i < 3; ++i) {
        const Point& pj = mesh.nodes[t[(i + 1) % 3]];
        const Point& pk = mesh.nodes[t[(i + 2) % 3]];
        grad[e][i] = Eigen::Vector2d(pj.y - pk.y, pk.x - pj.x) / two_area;
      }
    }
  }

  Eigen::Vector2d field(const Mesh& mesh, int e, const Eigen::VectorXd& u) const {
    const auto& t = mesh.elements[e];
    return u[t[0]] * grad[e][0] + u[t[1]] * grad[e][1] + u[t[2]] * grad[e][2];
  }
};

/// Complete-electrode-model system over [node potentials | electrode potentials].
///
/// `matrix` is the symmetric positive semi-definite CEM operator in siemens; its
/// null space is the constant vector. The factorization is of
/// matrix + w w^T with w the electrode indicator, which pins the sum of the
/// electrode potentials to zero for any current pattern summing to zero.
class LinearSystem {
 public:
  LinearSystem(Eigen::SparseMatrix<double> matrix, int node_count, int electrode_count)
      : matrix_(std::move(matrix)), node_count_(node_count), electrode_count_(electrode_count) {
    Eigen::SparseMatrix<double> grounded = matrix_;
    std::vector<Eigen::Triplet<double>> w;
    for (int a = 0; a < electrode_count_; ++a)
      for (int b = 0; b < electrode_count_; ++b) w.emplace_back(node_count_ + a, node_count_ + b, 1.0);
    Eigen::SparseMatrix<double> ground(dimension(), dimension());
    ground.setFromTriplets(w.begin(), w.end());
    grounded += ground;
    solver_ = std::make_shared<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>>();
    solver_->compute(grounded);
    if (solver_->info() != Eigen::Success)
      throw Error(ErrorKind::Solver, "forward system is singular (disconnected mesh or electrode without contact)");
  }

  int dimension() const { return node_count_ + electrode_count_; }
  int node_count() const { return node_count_; }
  int electrode_count() const { return electrode_count_; }
  const Eigen::SparseMatrix<double>& matrix() const { return matrix_; }

  /// Potentials (mV) for electrode currents (mA, must sum to zero).
  Eigen::VectorXd solve(const Eigen::VectorXd& electrode_currents) const {
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dimension());
    rhs.tail(electrode_count_) = electrode_currents;
    Eigen::VectorXd u = solver_->solve(rhs);
    if (solver_->info() != Eigen::Success || !u.allFinite())
      throw Error(ErrorKind::Solver, "forward solve failed");
    return u;
  }

  Eigen::VectorXd solve_pair(const ElectrodePair& pair, double current) const {
    Eigen::VectorXd I = Eigen::VectorXd::Zero(electrode_count_);
    I[pair.first] += current;
    I[pair.second] -= current;
    return solve(I);
  }

  /// Net current (mA) flowing from each electrode into the domain.
  Eigen::VectorXd electrode_currents(const Eigen::VectorXd& potentials) const {
    return (matrix_ * potentials).tail(electrode_count_);
  }

 private:
  Eigen::SparseMatrix<double> matrix_;
  int node_count_;
  int electrode_count_;
  std::shared_ptr<Eigen::SimplicialLLT<Eigen::SparseMatrix<double>>> solver_;
};

inline LinearSystem assemble_system(const Mesh& mesh, const ConductivityField& field, const ElectrodeLayout& layout,
                                    double thickness_mm = kDefaultThickness) {
  require(field.sigma.size() == mesh.N(), "conductivity field length does not match element count");
  require((field.sigma.array() > 0.0).all() && field.sigma.allFinite(), "conductivity must be strictly positive");
  const int n = mesh.node_count();
  const int E = layout.E();
  const double thickness_m = thickness_mm / 1000.0;
  ElementGradients grads(mesh);

  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(9 * mesh.N() + 16 * E));
  for (int e = 0; e < mesh.N(); ++e) {
    const auto& t = mesh.elements[e];
    const double scale = field.sigma[e] * thickness_m * mesh.element_areas[e];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) trip.emplace_back(t[i], t[j], scale * grads.grad[e][i].dot(grads.grad[e][j]));
  }
  // Contact terms: admittance per unit length t/z (S/mm).
  const double admittance = thickness_mm / layout.contact_impedance;
  for (int l = 0; l < E; ++l) {
    const int slot = n + l;
    double covered = 0.0;
    for (int k : layout.electrodes[l].edges) {
      const auto [a, b] = mesh.boundary_edge(k);
      const double len = mesh.boundary_edge_length(k);
      covered += len;
      const double m_diag = admittance * len / 3.0;
      const double m_off = admittance * len / 6.0;
      trip.emplace_back(a, a, m_diag);
      trip.emplace_back(b, b, m_diag);
      trip.emplace_back(a, b, m_off);
      trip.emplace_back(b, a, m_off);
      const double coupling = -admittance * len / 2.0;
      trip.emplace_back(a, slot, coupling);
      trip.emplace_back(slot, a, coupling);
      trip.emplace_back(b, slot, coupling);
      trip.emplace_back(slot, b, coupling);
    }
    trip.emplace_back(slot, slot, admittance * covered);
  }
  Eigen::SparseMatrix<double> A(n + E, n + E);
  A.setFromTriplets(trip.begin(), trip.end());
  return LinearSystem(std::move(A), n, E);
}

/// Differential voltages (mV) for every protocol measurement.
inline MeasurementFrame solve_forward(const LinearSystem& system, const MeasurementProtocol& protocol, double current) {
  require(protocol.E == system.electrode_count(), "protocol electrode count does not match the system");
  MeasurementFrame frame;
  frame.voltages.resize(protocol.M());
  int m = 0;
  for (std::size_t d = 0; d < protocol.drive_pairs.size(); ++d) {
    const auto& drive = protocol.drive_pairs[d];
    Eigen::VectorXd u;
    try {
      u = system.solve_pair(drive, current);
    } catch (const Error& err) {
      throw Error(ErrorKind::Solver, std::string(err.what()) + " for drive pair (" + std::to_string(drive.first) + "," +
                                         std::to_string(drive.second) + ")");
    }
    const int n = system.node_count();
    for (const auto& meas : protocol.measure_pairs[d]) frame.voltages[m++] = u[n + meas.first] - u[n + meas.second];
  }
  return frame;
}

struct SensitivityMatrix {
  Eigen::MatrixXd J;  ///< M x N, mV per (S/m)
  double sigma0 = kDefaultSigma0;

  int M() const { return static_cast<int>(J.rows()); }
  int N() const { return static_cast<int>(J.cols()); }
};

/// Adjoint-field Jacobian at a homogeneous background:
/// J(m, n) = -t * integral over element n of grad(u_drive) . grad(u_measure),
/// u_drive at the protocol current and u_measure for 1 mA through the measure pair.
inline SensitivityMatrix compute_jacobian(const Mesh& mesh, const ElectrodeLayout& layout,
                                          const MeasurementProtocol& protocol, double sigma0,
                                          double thickness_mm = kDefaultThickness) {
  require(sigma0 > 0.0, "background conductivity must be positive");
  const LinearSystem system = assemble_system(mesh, ConductivityField::homogeneous(mesh.N(), sigma0), layout, thickness_mm);
  const ElementGradients grads(mesh);
  const int N = mesh.N();

  // Fields for every distinct pair: drives at the protocol current, measures at 1 mA.
  std::map<std::pair<ElectrodePair, bool>, int> index;
  std::vector<std::pair<ElectrodePair, double>> jobs;
  auto field_id = [&](const ElectrodePair& p, bool is_drive) {
    const auto key = std::make_pair(p, is_drive);
    auto it = index.find(key);
    if (it != index.end()) return it->second;
    const int id = static_cast<int>(jobs.size());
    index.emplace(key, id);
    jobs.emplace_back(p, is_drive ? protocol.excitation_current : 1.0);
    return id;
  };
  std::vector<std::pair<int, int>> rows;
  for (std::size_t d = 0; d < protocol.drive_pairs.size(); ++d) {
    const int di = field_id(protocol.drive_pairs[d], true);
    for (const auto& meas : protocol.measure_pairs[d]) rows.emplace_back(di, field_id(meas, false));
  }

  // Element-wise field gradients, 2 x N per pair.
  std::vector<Eigen::Matrix2Xd> fields(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t i) {
    const Eigen::VectorXd u = system.solve_pair(jobs[i].first, jobs[i].second);
    Eigen::Matrix2Xd g(2, N);
    for (int e = 0; e < N; ++e) g.col(e) = grads.field(mesh, e, u);
    fields[i] = std::move(g);
  });

  const double thickness_m = thickness_mm / 1000.0;
  SensitivityMatrix out;
  out.sigma0 = sigma0;
  out.J.resize(static_cast<Eigen::Index>(rows.size()), N);
  parallel_for(rows.size(), [&](std::size_t m) {
    const auto& gd = fields[rows[m].first];
    const auto& gm = fields[rows[m].second];
    for (int e = 0; e < N; ++e)
      out.J(static_cast<Eigen::Index>(m), e) = -thickness_m * mesh.element_areas[e] * gd.col(e).dot(gm.col(e));
  });
  require(out.J.allFinite(), "Jacobian has non-finite entries", ErrorKind::Solver);
  return out;
}

/// NOSER prior R = diag(J^T J), stored as its diagonal.
struct RegularizerMatrix {
  Eigen::VectorXd diagonal;
  std::vector<int> zero_columns;  ///< elements with no sensitivity at all

  /// Diagonal with zero-sensitivity entries raised to 1e-12 * max.
  Eigen::VectorXd floored() const {
    const double floor = 1e-12 * (diagonal.size() > 0 ? diagonal.maxCoeff() : 0.0);
    return diagonal.cwiseMax(floor);
  }
};

inline RegularizerMatrix noser_regularizer(const SensitivityMatrix& sens) {
  const auto& J = sens.J;
  require(J.allFinite(), "Jacobian must be finite");
  RegularizerMatrix R;
  R.diagonal.resize(J.cols());
  for (Eigen::Index n = 0; n < J.cols(); ++n) {
    double s = 0.0;
    for (Eigen::Index m = 0; m < J.rows(); ++m) s += J(m, n) * J(m, n);
    R.diagonal[n] = s;
    if (s == 0.0) R.zero_columns.push_back(static_cast<int>(n));
  }
  return R;
}

}  // namespace eitskin
