#include "qpat/inversion.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>

#include "qpat/error.hpp"
#include "qpat/heating.hpp"

namespace qpat {

AcousticFidelity::AcousticFidelity(const WaveOperator& wave, std::vector<PressureData> data)
    : wave_(&wave), data_(std::move(data)) {
  if (data_.empty()) throw InvalidArgument("no pressure data");
  for (const auto& d : data_)
    if (d.values.rows() != wave.geometry().n_detectors() || d.values.cols() != wave.time().n_times)
      throw InvalidArgument("pressure data does not match the wave operator sampling");
  weights_ = wave.make_data({}).quadrature_weights();
}

Eigen::MatrixXd AcousticFidelity::residual(int i, const Eigen::VectorXd& h) const {
  return wave_->apply(h) - data_.at(i).values;
}

double AcousticFidelity::value(const Eigen::MatrixXd& r) const {
  return 0.5 * (weights_.array() * r.array().square()).sum();
}

Eigen::VectorXd AcousticFidelity::heating_gradient(const Eigen::MatrixXd& r) const {
  return wave_->apply_transpose(weights_.cwiseProduct(r));
}

HeatingMisfit::HeatingMisfit(const SpatialMesh& mesh, std::vector<Eigen::VectorXd> targets)
    : mass_(mesh.lumped_mass()), targets_(std::move(targets)) {
  if (targets_.empty()) throw InvalidArgument("no heating targets");
  for (const auto& t : targets_)
    if (t.size() != mass_.size()) throw InvalidArgument("heating target does not match mesh");
}

Eigen::MatrixXd HeatingMisfit::residual(int i, const Eigen::VectorXd& h) const { return h - targets_.at(i); }

double HeatingMisfit::value(const Eigen::MatrixXd& r) const {
  return 0.5 * (mass_.array() * r.col(0).array().square()).sum();
}

Eigen::VectorXd HeatingMisfit::heating_gradient(const Eigen::MatrixXd& r) const {
  return mass_.cwiseProduct(r.col(0));
}

double penalty_value(const Eigen::VectorXd& mu, const Eigen::SparseMatrix<double>& stiffness) {
  return 0.5 * mu.dot(stiffness * mu);
}

Objective::Objective(const OpticalModel& model, const HeatingFidelity& fidelity, double lambda)
    : model_(&model), fidelity_(&fidelity), lambda_(lambda) {
  if (!model.mesh || !model.grid || !model.kmat) throw InvalidArgument("optical model is incomplete");
  if (static_cast<int>(model.illuminations.size()) != fidelity.n_illuminations())
    throw InvalidArgument("need exactly one data set per illumination");
  if (!(lambda >= 0.0)) throw InvalidArgument("lambda must be nonnegative");
  mass_ = assemble_mass_matrix(*model.mesh);
  stiffness_ = assemble_stiffness_matrix(*model.mesh);
  lumped_ = model.mesh->lumped_mass();
}

ObjectiveState Objective::evaluate(const CoefficientPair& coeffs) const {
  coeffs.validate();
  const auto& m = *model_;
  ObjectiveState s;
  s.coeffs = coeffs;
  s.system = std::make_shared<const TransportSystem>(*m.mesh, *m.grid, coeffs, *m.kmat, m.transport);
  for (int i = 0; i < fidelity_->n_illuminations(); ++i) {
    s.phi.push_back(solve_forward(*s.system, m.illuminations[i]));
    s.heating.push_back(heating(*m.mesh, coeffs, s.phi.back(), *m.grid).values);
    s.residuals.push_back(fidelity_->residual(i, s.heating.back()));
    s.fidelity += fidelity_->value(s.residuals.back());
  }
  s.penalty = lambda_ * penalty_value(coeffs.mu, stiffness_);
  return s;
}

GradientPair Objective::gradient(const ObjectiveState& state) const {
  const auto& grid = *model_->grid;
  const int nv = model_->mesh->n_vertices();
  Eigen::VectorXd g_mu = Eigen::VectorXd::Zero(nv), g_sigma = Eigen::VectorXd::Zero(nv);
  const Eigen::Map<const Eigen::RowVectorXd> w(grid.weights.data(), grid.n_angles);
  for (std::size_t i = 0; i < state.phi.size(); ++i) {
    const Eigen::VectorXd b = fidelity_->heating_gradient(state.residuals[i]);
    // Adjoint load: d h / d Phi applied to b, i.e. w_k mu_v b_v.
    const RadianceField load = state.coeffs.mu.cwiseProduct(b) * w;
    const RadianceField adj = solve_adjoint(*state.system, load);
    const auto [s_mu, s_sigma] = state.system->coefficient_sensitivity(flat(state.phi[i]), flat(adj));
    g_mu += b.cwiseProduct(angular_average(state.phi[i], grid)) - s_mu;
    g_sigma -= s_sigma;
  }
  return {g_mu.cwiseQuotient(lumped_), g_sigma.cwiseQuotient(lumped_)};
}

ProxOperator::ProxOperator(const Eigen::SparseMatrix<double>& mass, const Eigen::SparseMatrix<double>& stiffness)
    : mass_(mass), stiffness_(stiffness) {}

Eigen::VectorXd ProxOperator::operator()(const Eigen::VectorXd& mu_hat, double s_lambda, double mu_max,
                                         int* clipped) {
  if (!(s_lambda >= 0.0)) throw InvalidArgument("prox parameter must be nonnegative");
  Eigen::VectorXd mu;
  if (s_lambda == 0.0) {
    mu = mu_hat;
  } else {
    if (s_lambda != factored_for_) {
      solver_.compute(mass_ + s_lambda * stiffness_);
      if (solver_.info() != Eigen::Success) throw NumericalError("prox system factorization failed");
      factored_for_ = s_lambda;
    }
    mu = solver_.solve(mass_ * mu_hat);
  }
  int count = 0;
  for (Eigen::Index n = 0; n < mu.size(); ++n) {
    const double c = std::clamp(mu[n], 0.0, mu_max);
    if (c != mu[n]) ++count;
    mu[n] = c;
  }
  if (clipped) *clipped = count;
  return mu;
}

Eigen::VectorXd prox_step(const Eigen::VectorXd& mu_hat, double s_lambda, const Eigen::SparseMatrix<double>& mass,
                          const Eigen::SparseMatrix<double>& stiffness, double mu_max) {
  ProxOperator prox(mass, stiffness);
  return prox(mu_hat, s_lambda, mu_max);
}

void SolverConfig::validate() const {
  if (!(lambda > 0.0)) throw InvalidArgument("solver lambda must be positive");
  if (!(step >= 0.0)) throw InvalidArgument("solver step must be positive (or 0 for automatic)");
  if (max_iters < 1) throw InvalidArgument("solver max_iters must be at least 1");
  if (stagnation_window < 1 || divergence_window < 1) throw InvalidArgument("solver windows must be positive");
  if (lipschitz_probes < 1 || !(probe_scale > 0.0)) throw InvalidArgument("invalid Lipschitz probing parameters");
}

void write_trace_csv(std::ostream& out, const IterationTrace& trace) {
  out << "iter,fidelity,penalty,objective,step,grad_norm,clip_count\n";
  out.precision(17);
  for (const auto& r : trace.records)
    out << r.iter << ',' << r.fidelity << ',' << r.penalty << ',' << r.objective << ',' << r.step << ','
        << r.grad_norm << ',' << r.clip_count << '\n';
}

namespace {

double lumped_norm(const Eigen::VectorXd& v, const Eigen::VectorXd& mass) {
  return std::sqrt((mass.array() * v.array().square()).sum());
}

double gradient_norm(const GradientPair& g, const Eigen::VectorXd& mass, bool with_sigma) {
  const double a = lumped_norm(g.grad_mu, mass);
  return with_sigma ? std::hypot(a, lumped_norm(g.grad_sigma, mass)) : a;
}

}  // namespace

double estimate_lipschitz(const Objective& objective, const ObjectiveState& state, const GradientPair& grad,
                          const SolverConfig& config) {
  const auto& mass = objective.lumped_mass();
  const double eps = config.probe_scale * state.coeffs.mu_max;
  std::mt19937_64 rng(config.probe_seed);
  std::normal_distribution<double> normal;
  Eigen::VectorXd dir(mass.size());
  for (Eigen::Index n = 0; n < dir.size(); ++n) dir[n] = normal(rng);
  double estimate = 0.0;
  for (int p = 0; p < config.lipschitz_probes; ++p) {
    const double len = lumped_norm(dir, mass);
    if (!(len > 0.0)) break;
    CoefficientPair probe = state.coeffs;
    probe.mu = (state.coeffs.mu + (eps / len) * dir).cwiseMax(0.0).cwiseMin(state.coeffs.mu_max);
    const Eigen::VectorXd step = probe.mu - state.coeffs.mu;
    const double step_norm = lumped_norm(step, mass);
    if (!(step_norm > 0.0)) break;
    const Eigen::VectorXd diff = objective.gradient(objective.evaluate(probe)).grad_mu - grad.grad_mu;
    estimate = std::max(estimate, lumped_norm(diff, mass) / step_norm);
    dir = diff;
  }
  if (!(estimate > 0.0) || !std::isfinite(estimate))
    throw NumericalError("Lipschitz estimate failed; set solver.step explicitly");
  return estimate;
}

ReconstructionResult run_proximal_gradient(const Objective& objective, const SolverConfig& config,
                                           const CoefficientPair& initial) {
  config.validate();
  const auto& mass = objective.lumped_mass();
  ProxOperator prox(objective.mass(), objective.stiffness());

  ObjectiveState state = objective.evaluate(initial);
  GradientPair grad = objective.gradient(state);
  double step = config.step > 0.0 ? config.step : 0.5 / estimate_lipschitz(objective, state, grad, config);

  ReconstructionResult result;
  auto& trace = result.trace;
  trace.records.push_back({0, state.fidelity, state.penalty, state.objective(), step,
                           gradient_norm(grad, mass, config.reconstruct_sigma), 0});
  trace.stop_reason = "max_iters";

  int increases = 0;
  for (int it = 1; it <= config.max_iters; ++it) {
    ObjectiveState next;
    int clipped = 0;
    bool accepted = false;
    for (int halving = 0; halving <= 40; ++halving) {
      CoefficientPair trial = state.coeffs;
      trial.mu = prox(state.coeffs.mu - step * grad.grad_mu, step * objective.lambda(), state.coeffs.mu_max, &clipped);
      if (config.reconstruct_sigma)
        trial.sigma = (state.coeffs.sigma - step * grad.grad_sigma).cwiseMax(0.0).cwiseMin(state.coeffs.sigma_max);
      next = objective.evaluate(trial);
      if (!config.backtracking) {
        accepted = true;
        break;
      }
      double moved = lumped_norm(trial.mu - state.coeffs.mu, mass);
      if (config.reconstruct_sigma) moved = std::hypot(moved, lumped_norm(trial.sigma - state.coeffs.sigma, mass));
      if (next.objective() <= state.objective() - 1e-4 / step * moved * moved) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      trace.stop_reason = "backtracking failed";
      break;
    }
    // Admissibility holds by construction; checked anyway.
    next.coeffs.validate();

    increases = next.objective() > state.objective() ? increases + 1 : 0;
    state = std::move(next);
    grad = objective.gradient(state);
    trace.records.push_back({it, state.fidelity, state.penalty, state.objective(), step,
                             gradient_norm(grad, mass, config.reconstruct_sigma), clipped});

    if (!config.backtracking && increases >= config.divergence_window)
      throw NumericalError("objective increased for " + std::to_string(increases) +
                           " consecutive iterations; reduce the step size (solver.step)");
    const auto& recs = trace.records;
    if (static_cast<int>(recs.size()) > config.stagnation_window) {
      const double before = recs[recs.size() - 1 - config.stagnation_window].objective;
      if (std::abs(before - state.objective()) <= config.stagnation_tolerance * std::abs(before)) {
        trace.stop_reason = "stagnated";
        break;
      }
    }
  }
  result.coeffs = state.coeffs;
  return result;
}

ReconstructionResult run_single_stage(const OpticalModel& model, const WaveOperator& wave,
                                      const std::vector<PressureData>& data, const SolverConfig& config,
                                      const CoefficientPair& initial) {
  const AcousticFidelity fidelity(wave, data);
  const Objective objective(model, fidelity, config.lambda);
  return run_proximal_gradient(objective, config, initial);
}

ReconstructionResult run_two_stage_from_heating(const OpticalModel& model, const std::vector<Eigen::VectorXd>& heating,
                                                const SolverConfig& config, const CoefficientPair& initial) {
  const HeatingMisfit fidelity(*model.mesh, heating);
  const Objective objective(model, fidelity, config.lambda);
  return run_proximal_gradient(objective, config, initial);
}

ReconstructionResult run_two_stage(const OpticalModel& model, const std::vector<PressureData>& data,
                                   const CutoffProfile& cutoff, const SolverConfig& config,
                                   const CoefficientPair& initial) {
  std::vector<Eigen::VectorXd> heating;
  for (const auto& d : data) heating.push_back(backprojection_inverse(d, *model.mesh, cutoff));
  return run_two_stage_from_heating(model, heating, config, initial);
}

}  // namespace qpat
