// SPDX-License-Identifier: Apache-2.0
#include "dtwin/recovery.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <future>
#include <limits>
#include <numbers>

#include "dtwin/error.hpp"
#include "dtwin/sysmem.hpp"

namespace dtwin {

void RecoveryConfig::validate() const {
  if (epochs < 1)
    throw ArgumentError("epochs must be at least 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
    throw ArgumentError("learning_rate must be finite and non-negative");
  if (theta_learning_rate &&
      (!(*theta_learning_rate >= 0.0) || !std::isfinite(*theta_learning_rate)))
    throw ArgumentError("theta_learning_rate must be finite and non-negative");
  if (!(physics_weight >= 0.0) || !(sparsity_weight >= 0.0))
    throw ArgumentError("loss weights must be non-negative");
  if (!(prune_threshold >= 0.0) || prune_threshold >= 1.0)
    throw ArgumentError("prune_threshold must lie in [0, 1)");
  if (!(final_lr_fraction > 0.0) || final_lr_fraction > 1.0)
    throw ArgumentError("final_lr_fraction must lie in (0, 1]");
  if (!(epsilon > 0.0))
    throw ArgumentError("epsilon must be positive");
  if (substeps == 0)
    throw ArgumentError("substeps must be at least 1");
  if (hidden_dim == 0)
    throw ArgumentError("hidden_dim must be at least 1");
  for (double v : hidden_scale)
    if (!(v > 0.0) || !std::isfinite(v))
      throw ArgumentError("hidden_scale entries must be positive");
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double reconstruction_loss(const Matrix &z, const Trajectory &traj, Matrix *grad) {
  if (z.rows() != traj.states.rows() || z.cols() != traj.states.cols())
    throw StructuralError("prediction shape differs from trajectory shape");
  const std::size_t observed = traj.observed_count();
  if (observed == 0)
    throw ArgumentError("trajectory has no observed channel");
  const double count = static_cast<double>(z.rows()) * static_cast<double>(observed);
  double sum = 0.0;
  if (grad)
    grad->setZero(z.rows(), z.cols());
  for (Eigen::Index j = 0; j < z.cols(); ++j) {
    if (!traj.mask[static_cast<std::size_t>(j)])
      continue;
    const Vector diff = z.col(j) - traj.states.col(j);
    sum += diff.squaredNorm();
    if (grad)
      grad->col(j) = (2.0 / count) * diff;
  }
  return sum / count;
}

double reconstruction_rmse(const Matrix &z, const Trajectory &traj) {
  return std::sqrt(reconstruction_loss(z, traj));
}

std::array<double, 3> central_difference_weights(const Vector &times, Eigen::Index k) {
  if (k <= 0 || k + 1 >= times.size())
    throw ArgumentError("central differences need an interior sample");
  const double h1 = times(k) - times(k - 1);
  const double h2 = times(k + 1) - times(k);
  return {-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))};
}

namespace {

void require_physics_shapes(const Matrix &z, const Trajectory &traj,
                            const Vector &theta, const Model &model) {
  if (z.rows() < 3)
    throw ArgumentError("physics residual needs at least 3 samples");
  if (z.rows() != traj.times.size() || z.rows() != traj.inputs.rows())
    throw StructuralError("prediction length differs from trajectory length");
  if (static_cast<std::size_t>(z.cols()) != model.state_dim())
    throw StructuralError("prediction width differs from model state dimension");
  if (static_cast<std::size_t>(traj.inputs.cols()) != model.input_dim())
    throw StructuralError("trajectory has " + std::to_string(traj.inputs.cols()) +
                          " inputs, model " + model.name() + " expects " +
                          std::to_string(model.input_dim()));
  if (static_cast<std::size_t>(theta.size()) != model.coefficient_count())
    throw StructuralError("theta length differs from model coefficient count");
}

} // namespace

PhysicsTerms physics_residual_terms(const Matrix &z, const Trajectory &traj,
                                    const Vector &theta, const Model &model) {
  require_physics_shapes(z, traj, theta, model);
  const auto big_n = z.rows();
  const double interior = static_cast<double>(big_n - 2);
  PhysicsTerms out;
  out.grad_z = Matrix::Zero(big_n, z.cols());
  out.grad_theta = Vector::Zero(theta.size());
  Vector offset;
  Matrix features;
  for (Eigen::Index k = 1; k + 1 < big_n; ++k) {
    const auto w = central_difference_weights(traj.times, k);
    const Vector zk = z.row(k).transpose();
    const Vector uk = traj.inputs.row(k).transpose();
    const double t = traj.times(k);
    const Vector derivative =
      (w[0] * z.row(k - 1) + w[1] * z.row(k) + w[2] * z.row(k + 1)).transpose();
    model.linear_form(zk, uk, t, offset, features);
    const Vector residual = derivative - offset - features * theta;
    out.value += residual.squaredNorm();
    const Vector scaled = (2.0 / interior) * residual;
    out.grad_z.row(k - 1) += w[0] * scaled.transpose();
    out.grad_z.row(k + 1) += w[2] * scaled.transpose();
    const Matrix jac = model.state_jacobian(zk, uk, t, theta);
    out.grad_z.row(k) += (w[1] * scaled - jac.transpose() * scaled).transpose();
    out.grad_theta.noalias() -= features.transpose() * scaled;
  }
  out.value /= interior;
  return out;
}

double physics_residual(const Matrix &z, const Trajectory &traj, const Vector &theta,
                        const Model &model) {
  require_physics_shapes(z, traj, theta, model);
  const auto big_n = z.rows();
  double sum = 0.0;
  for (Eigen::Index k = 1; k + 1 < big_n; ++k) {
    const auto w = central_difference_weights(traj.times, k);
    const Vector derivative =
      (w[0] * z.row(k - 1) + w[1] * z.row(k) + w[2] * z.row(k + 1)).transpose();
    const Vector rhs = model.rhs(z.row(k).transpose(), traj.inputs.row(k).transpose(),
                                 traj.times(k), theta);
    sum += (derivative - rhs).squaredNorm();
  }
  return sum / static_cast<double>(big_n - 2);
}

double sparsity_penalty(const Vector &theta, const Model *model) {
  double sum = 0.0;
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    if (!model || model->penalized(static_cast<std::size_t>(k)))
      sum += std::abs(theta(k));
  return sum;
}

LossComponents total_loss(const Matrix &z, const Trajectory &traj, const Vector &theta,
                          const Model &model, const RecoveryConfig &config) {
  LossComponents out;
  out.recon = reconstruction_loss(z, traj);
  out.physics = config.physics_weight > 0.0 ? physics_residual(z, traj, theta, model) : 0.0;
  out.sparsity = sparsity_penalty(theta, &model);
  out.total = out.recon + config.physics_weight * out.physics +
              config.sparsity_weight * out.sparsity;
  return out;
}

Vector total_loss_theta_gradient(const Matrix &z, const Trajectory &traj,
                                 const Vector &theta, const Model &model,
                                 const RecoveryConfig &config) {
  Vector grad = Vector::Zero(theta.size());
  if (config.physics_weight > 0.0)
    grad += config.physics_weight * physics_residual_terms(z, traj, theta, model).grad_theta;
  for (Eigen::Index k = 0; k < theta.size(); ++k)
    if (model.penalized(static_cast<std::size_t>(k)) && theta(k) != 0.0)
      grad(k) += config.sparsity_weight * (theta(k) > 0.0 ? 1.0 : -1.0);
  return grad;
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

namespace {

struct TrainingProblem {
  const Trajectory &traj;
  const Model &model;
  Vector z0;
  Matrix flow_inputs; ///< standardised copy of traj.inputs
};

/// Centre and scale every input channel so the GRU gates start unsaturated.
Matrix standardise_inputs(const Matrix &inputs) {
  Matrix out = inputs;
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    const double mean = inputs.col(j).mean();
    const double var = (inputs.col(j).array() - mean).square().mean();
    out.col(j).array() -= mean;
    if (var > 0.0)
      out.col(j) /= std::sqrt(var);
  }
  return out;
}

class Trainer {
public:
  Trainer(const TrainingProblem &problem, const RecoveryConfig &config,
          Channel<ProgressEvent> *progress, std::size_t run)
    : problem_(problem), config_(config), progress_(progress), run_(run) {}

  void initialise(FlowParams flow, Vector theta) {
    flow_ = std::move(flow);
    theta_ = std::move(theta);
    frozen_.assign(static_cast<std::size_t>(theta_.size()), false);
    flow_state_ = {};
    theta_state_ = {};
  }

  /// Runs `epochs` joint updates with the given sparsity weight. The main
  /// pass (`decay` true) follows the warmup and cosine schedules; the refit
  /// holds the final step size and full physics weight.
  void run(std::size_t epochs, double sparsity_weight, bool decay,
           std::vector<LossComponents> &history) {
    const double flow_lr = config_.learning_rate;
    const double theta_lr = config_.theta_learning_rate.value_or(config_.learning_rate);
    StepConfig flow_step{config_.rule, flow_lr};
    StepConfig theta_step{config_.rule, theta_lr};
    const auto &traj = problem_.traj;
    const double floor = config_.final_lr_fraction;
    Matrix dl_dz;
    for (std::size_t e = 0; e < epochs; ++e) {
      double factor = floor;
      double physics_weight = config_.physics_weight;
      if (decay) {
        const double progress = static_cast<double>(e) / static_cast<double>(epochs);
        factor = floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
        if (e < config_.warmup_epochs)
          physics_weight *= static_cast<double>(e + 1) /
                            static_cast<double>(config_.warmup_epochs);
      }
      flow_step.learning_rate = flow_lr * factor;
      theta_step.learning_rate = theta_lr * factor;
      auto forward = flow_forward(flow_, problem_.z0, problem_.flow_inputs, traj.times);
      LossComponents loss;
      loss.recon = reconstruction_loss(forward.z, traj, &dl_dz);
      Vector theta_grad = Vector::Zero(theta_.size());
      if (physics_weight > 0.0) {
        const auto physics =
          physics_residual_terms(forward.z, traj, theta_, problem_.model);
        loss.physics = physics.value;
        dl_dz += physics_weight * physics.grad_z;
        theta_grad += physics_weight * physics.grad_theta;
      }
      loss.sparsity = sparsity_penalty(theta_, &problem_.model);
      for (Eigen::Index k = 0; k < theta_.size(); ++k)
        if (problem_.model.penalized(static_cast<std::size_t>(k)) && theta_(k) != 0.0)
          theta_grad(k) += sparsity_weight * (theta_(k) > 0.0 ? 1.0 : -1.0);
      loss.total = loss.recon + physics_weight * loss.physics +
                   sparsity_weight * loss.sparsity;

      const std::size_t epoch = history.size();
      if (!std::isfinite(loss.total))
        throw TrainingDivergedError("recovery loss became non-finite at epoch " +
                                      std::to_string(epoch),
                                    epoch, last_finite_);
      last_finite_ = loss.total;
      history.push_back(loss);
      if (progress_ && config_.progress_every > 0 && epoch % config_.progress_every == 0)
        progress_->send({run_, epoch, loss, false});

      const FlowGrads flow_grad = flow_backward(flow_, forward.tape, dl_dz);
      for (std::size_t k = 0; k < frozen_.size(); ++k)
        if (frozen_[k])
          theta_grad(static_cast<Eigen::Index>(k)) = 0.0;
      apply_update_in_place(flow_.values(), flow_grad.values(), flow_state_, flow_step);
      apply_update_in_place({theta_.data(), static_cast<std::size_t>(theta_.size())},
                            {theta_grad.data(), static_cast<std::size_t>(theta_grad.size())},
                            theta_state_, theta_step);
      for (std::size_t k = 0; k < frozen_.size(); ++k)
        if (frozen_[k])
          theta_(static_cast<Eigen::Index>(k)) = 0.0;
      if (!flow_.all_finite() || !theta_.allFinite())
        throw TrainingDivergedError("parameters became non-finite at epoch " +
                                      std::to_string(epoch),
                                    epoch, last_finite_);
    }
  }

  /// Zeroes coefficients below threshold * max|theta| and freezes them.
  void prune(double threshold) {
    const double largest = theta_.cwiseAbs().maxCoeff();
    const double cut = threshold * largest;
    for (Eigen::Index k = 0; k < theta_.size(); ++k) {
      if (std::abs(theta_(k)) < cut) {
        theta_(k) = 0.0;
        frozen_[static_cast<std::size_t>(k)] = true;
      }
    }
    theta_state_ = {};
  }

  const FlowParams &flow() const { return flow_; }
  const Vector &theta() const { return theta_; }
  const std::vector<bool> &frozen() const { return frozen_; }

private:
  const TrainingProblem &problem_;
  const RecoveryConfig &config_;
  Channel<ProgressEvent> *progress_;
  std::size_t run_;
  FlowParams flow_;
  Vector theta_;
  std::vector<bool> frozen_;
  OptimizerState flow_state_;
  OptimizerState theta_state_;
  double last_finite_ = std::numeric_limits<double>::quiet_NaN();
};

} // namespace

RecoveryReport recover(const Trajectory &traj, std::shared_ptr<const Model> model,
                       const RecoveryConfig &config, Channel<ProgressEvent> *progress,
                       std::size_t run_index) {
  if (!model)
    throw ArgumentError("null model");
  config.validate();
  traj.validate();
  const auto n = model->state_dim();
  if (traj.state_dim() != n)
    throw StructuralError("trajectory has " + std::to_string(traj.state_dim()) +
                          " states, model " + model->name() + " has " +
                          std::to_string(n));
  if (traj.input_dim() != model->input_dim())
    throw StructuralError("trajectory inputs do not match model " + model->name());
  if (config.physics_weight > 0.0 && traj.samples() < 3)
    throw ArgumentError("recovery with physics needs at least 3 samples");
  if (!config.initial_state.empty() && config.initial_state.size() != n)
    throw StructuralError("initial_state needs one value per state channel");
  if (!config.hidden_scale.empty() && config.hidden_scale.size() != n)
    throw StructuralError("hidden_scale needs one value per state channel");
  if (!config.initial_theta.empty() &&
      config.initial_theta.size() != model->coefficient_count())
    throw StructuralError("initial_theta needs one value per coefficient");

  const auto start = std::chrono::steady_clock::now();

  TrainingProblem problem{traj, *model, Vector::Zero(static_cast<Eigen::Index>(n)),
                          standardise_inputs(traj.inputs)};
  for (std::size_t j = 0; j < n; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    if (traj.mask[j])
      problem.z0(col) = traj.states(0, col);
    else if (!config.initial_state.empty())
      problem.z0(col) = config.initial_state[j];
  }

  FlowShape shape{config.hidden_dim, n, traj.input_dim()};
  FlowParams flow = FlowParams::initialize(shape, config.seed);
  // |Z_k - z0| <= s * tau_k, so s must cover the steepest departure from
  // z0. Very early samples are skipped since noise dominates their slope.
  const auto tau = normalized_times(traj.times);
  for (std::size_t j = 0; j < n; ++j) {
    const auto col = static_cast<Eigen::Index>(j);
    double scale = config.hidden_scale.empty() ? 1.0 : config.hidden_scale[j];
    if (traj.mask[j]) {
      double slope = 0.0;
      for (std::size_t k = 1; k < tau.size(); ++k)
        if (tau[k] >= 0.05)
          slope = std::max(slope, std::abs(traj.states(static_cast<Eigen::Index>(k), col) -
                                           problem.z0(col)) / tau[k]);
      scale = slope > 0.0 ? 1.25 * slope : 1.0;
    }
    flow.log_scale()(col) = std::log(scale);
  }
  Vector theta = Vector::Zero(static_cast<Eigen::Index>(model->coefficient_count()));
  if (!config.initial_theta.empty())
    for (std::size_t k = 0; k < config.initial_theta.size(); ++k)
      theta(static_cast<Eigen::Index>(k)) = config.initial_theta[k];

  RecoveryReport report;
  Trainer trainer(problem, config, progress, run_index);
  trainer.initialise(std::move(flow), std::move(theta));
  trainer.run(config.epochs, config.sparsity_weight, true, report.loss_history);
  trainer.prune(config.prune_threshold);
  trainer.run(config.refit_epochs, 0.0, false, report.loss_history);

  const auto final = flow_forward(trainer.flow(), problem.z0, problem.flow_inputs,
                                  traj.times);
  report.reconstruction = final.z;
  report.reconstruction_error = reconstruction_rmse(final.z, traj);
  report.converged = report.reconstruction_error <= config.epsilon;
  report.theta = model->coefficients(trainer.theta());
  report.coefficient_names = model->coefficient_names();
  report.pruned = trainer.frozen();
  report.flow = trainer.flow();
  report.epochs_run = report.loss_history.size();
  report.wall_time_seconds =
    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.peak_memory_bytes = peak_rss_bytes();
  if (progress)
    progress->send({run_index, report.epochs_run,
                    report.loss_history.empty() ? LossComponents{}
                                                : report.loss_history.back(),
                    true});
  return report;
}

std::vector<RecoveryReport> recover_many(const std::vector<Trajectory> &trajs,
                                         std::shared_ptr<const Model> model,
                                         const RecoveryConfig &config,
                                         std::size_t workers,
                                         Channel<ProgressEvent> *progress) {
  std::vector<RecoveryReport> reports(trajs.size());
  if (trajs.empty())
    return reports;
  workers = std::clamp<std::size_t>(workers, 1, trajs.size());
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> tasks;
  for (std::size_t w = 0; w < workers; ++w) {
    tasks.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < trajs.size(); i = next++)
        reports[i] = recover(trajs[i], model, config, progress, i);
    }));
  }
  for (auto &t : tasks)
    t.get();
  return reports;
}

// ---------------------------------------------------------------------------
// Identifiability
// ---------------------------------------------------------------------------

IdentifiabilityReport check_identifiability(std::shared_ptr<const Model> model,
                                            const Vector &theta,
                                            const InputSignal &input,
                                            const StateVector &x0,
                                            const IdentifiabilityOptions &options) {
  if (!model)
    throw ArgumentError("null model");
  if (!(options.delta > 0.0))
    throw ArgumentError("identifiability perturbation delta must be positive");
  if (!(options.tolerance >= 0.0))
    throw ArgumentError("identifiability tolerance must be non-negative");
  const auto n = model->state_dim();
  std::vector<bool> measured = options.measured;
  if (measured.empty())
    measured.assign(n, true);
  if (measured.size() != n)
    throw StructuralError("measured mask needs one entry per state channel");

  SimulateOptions sim{options.substeps};
  const Trajectory base =
    simulate(model, theta, input, x0, options.horizon, options.samples, sim);
  double scale = 0.0;
  for (std::size_t j = 0; j < n; ++j)
    if (measured[j])
      scale = std::max(scale, base.states.col(static_cast<Eigen::Index>(j)).cwiseAbs().maxCoeff());
  if (scale == 0.0)
    scale = 1.0;

  IdentifiabilityReport report;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Vector perturbed = theta;
    perturbed(i) += options.delta;
    const Trajectory moved =
      simulate(model, perturbed, input, x0, options.horizon, options.samples, sim);
    double deviation = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (!measured[j])
        continue;
      const auto col = static_cast<Eigen::Index>(j);
      deviation = std::max(deviation,
                           (moved.states.col(col) - base.states.col(col)).cwiseAbs().maxCoeff());
    }
    deviation /= scale;
    report.deviation.push_back(deviation);
    report.identifiable.push_back(deviation > options.tolerance);
  }
  return report;
}

} // namespace dtwin
