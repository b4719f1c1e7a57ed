#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "qpat/acoustics.hpp"
#include "qpat/geometry.hpp"
#include "qpat/transport.hpp"

namespace qpat {

/// Everything the optical forward map needs besides the coefficients.
struct OpticalModel {
  const SpatialMesh* mesh = nullptr;
  const AngularGrid* grid = nullptr;
  const ScatteringMatrix* kmat = nullptr;
  std::vector<IlluminationPattern> illuminations;
  TransportOptions transport;
};

/// Misfit between computed heatings h_i and per-illumination targets.
class HeatingFidelity {
 public:
  virtual ~HeatingFidelity() = default;
  virtual int n_illuminations() const = 0;
  /// Residual of illumination i for heating h.
  virtual Eigen::MatrixXd residual(int i, const Eigen::VectorXd& h) const = 0;
  /// Half the squared norm of a residual.
  virtual double value(const Eigen::MatrixXd& residual) const = 0;
  /// Euclidean gradient with respect to the nodal heating: d/dh of value(residual(i, h)).
  virtual Eigen::VectorXd heating_gradient(const Eigen::MatrixXd& residual) const = 0;
};

/// 1/2 ||W h - v||^2 in the detector/time quadrature norm. The operator must outlive this object.
class AcousticFidelity final : public HeatingFidelity {
 public:
  AcousticFidelity(const WaveOperator& wave, std::vector<PressureData> data);
  int n_illuminations() const override { return static_cast<int>(data_.size()); }
  Eigen::MatrixXd residual(int i, const Eigen::VectorXd& h) const override;
  double value(const Eigen::MatrixXd& residual) const override;
  Eigen::VectorXd heating_gradient(const Eigen::MatrixXd& residual) const override;
  const std::vector<PressureData>& data() const { return data_; }

 private:
  const WaveOperator* wave_;
  std::vector<PressureData> data_;
  Eigen::MatrixXd weights_;
};

/// 1/2 ||h - h_target||^2 in the lumped L2(Omega) norm.
class HeatingMisfit final : public HeatingFidelity {
 public:
  HeatingMisfit(const SpatialMesh& mesh, std::vector<Eigen::VectorXd> targets);
  int n_illuminations() const override { return static_cast<int>(targets_.size()); }
  Eigen::MatrixXd residual(int i, const Eigen::VectorXd& h) const override;
  double value(const Eigen::MatrixXd& residual) const override;
  Eigen::VectorXd heating_gradient(const Eigen::MatrixXd& residual) const override;

 private:
  Eigen::VectorXd mass_;
  std::vector<Eigen::VectorXd> targets_;
};

/// Objective value together with the forward solutions it was computed from.
struct ObjectiveState {
  CoefficientPair coeffs;
  double fidelity = 0.0;
  double penalty = 0.0;
  std::vector<Eigen::MatrixXd> residuals;
  std::vector<RadianceField> phi;
  std::vector<Eigen::VectorXd> heating;
  std::shared_ptr<const TransportSystem> system;

  double objective() const { return fidelity + penalty; }
};

/// L2 gradients (lumped-mass Riesz representatives) of the fidelity term.
struct GradientPair {
  Eigen::VectorXd grad_mu;
  Eigen::VectorXd grad_sigma;
};

/// 1/2 mu^T L mu with L the P1 stiffness matrix.
double penalty_value(const Eigen::VectorXd& mu, const Eigen::SparseMatrix<double>& stiffness);

/// Fidelity plus lambda times the gradient penalty, on a fixed optical model.
class Objective {
 public:
  /// The model pointers and the fidelity must outlive the objective.
  Objective(const OpticalModel& model, const HeatingFidelity& fidelity, double lambda);

  ObjectiveState evaluate(const CoefficientPair& coeffs) const;
  /// Adjoint-state gradient of the fidelity at the state's coefficients.
  GradientPair gradient(const ObjectiveState& state) const;

  double lambda() const { return lambda_; }
  const SpatialMesh& mesh() const { return *model_->mesh; }
  const Eigen::SparseMatrix<double>& mass() const { return mass_; }
  const Eigen::SparseMatrix<double>& stiffness() const { return stiffness_; }
  const Eigen::VectorXd& lumped_mass() const { return lumped_; }

 private:
  const OpticalModel* model_;
  const HeatingFidelity* fidelity_;
  double lambda_;
  Eigen::SparseMatrix<double> mass_;
  Eigen::SparseMatrix<double> stiffness_;
  Eigen::VectorXd lumped_;
};

/// Approximate proximity operator of s lambda R followed by projection onto [0, mu_max].
class ProxOperator {
 public:
  ProxOperator(const Eigen::SparseMatrix<double>& mass, const Eigen::SparseMatrix<double>& stiffness);

  /// Solves (M + s_lambda L) mu = M mu_hat, then clips. `clipped` receives the number of clipped nodes.
  Eigen::VectorXd operator()(const Eigen::VectorXd& mu_hat, double s_lambda, double mu_max,
                             int* clipped = nullptr);

 private:
  Eigen::SparseMatrix<double> mass_;
  Eigen::SparseMatrix<double> stiffness_;
  double factored_for_ = -1.0;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
};

Eigen::VectorXd prox_step(const Eigen::VectorXd& mu_hat, double s_lambda, const Eigen::SparseMatrix<double>& mass,
                          const Eigen::SparseMatrix<double>& stiffness, double mu_max);

struct SolverConfig {
  double lambda = 1e-6;
  double step = 0.0;  // 0 selects 1 / (2 L) from a Lipschitz estimate at the initial guess
  bool backtracking = false;
  int max_iters = 40;
  double stagnation_tolerance = 1e-6;
  int stagnation_window = 5;
  int divergence_window = 5;
  bool reconstruct_sigma = false;
  int lipschitz_probes = 5;
  double probe_scale = 1e-4;  // probe length relative to mu_max
  std::uint64_t probe_seed = 7;

  void validate() const;
};

struct IterationRecord {
  int iter = 0;
  double fidelity = 0.0;
  double penalty = 0.0;
  double objective = 0.0;
  double step = 0.0;
  double grad_norm = 0.0;
  int clip_count = 0;
};

struct IterationTrace {
  std::vector<IterationRecord> records;
  std::string stop_reason;
};

void write_trace_csv(std::ostream& out, const IterationTrace& trace);

struct ReconstructionResult {
  CoefficientPair coeffs;
  IterationTrace trace;
};

/// Power iteration on gradient differences; returns an estimate of the Lipschitz constant of grad F.
double estimate_lipschitz(const Objective& objective, const ObjectiveState& state, const GradientPair& grad,
                          const SolverConfig& config);

/// mu_{n+1} = prox_{s lambda R}(mu_n - s grad_mu F(mu_n, sigma)), projected onto the admissible box.
ReconstructionResult run_proximal_gradient(const Objective& objective, const SolverConfig& config,
                                           const CoefficientPair& initial);

/// Single-stage reconstruction directly from pressure data.
ReconstructionResult run_single_stage(const OpticalModel& model, const WaveOperator& wave,
                                      const std::vector<PressureData>& data, const SolverConfig& config,
                                      const CoefficientPair& initial);

/// Two-stage baseline: backprojection to heating estimates, then optical inversion of those.
ReconstructionResult run_two_stage(const OpticalModel& model, const std::vector<PressureData>& data,
                                   const CutoffProfile& cutoff, const SolverConfig& config,
                                   const CoefficientPair& initial);

/// Same as run_two_stage, starting from precomputed heating estimates.
ReconstructionResult run_two_stage_from_heating(const OpticalModel& model, const std::vector<Eigen::VectorXd>& heating,
                                                const SolverConfig& config, const CoefficientPair& initial);

}  // namespace qpat
