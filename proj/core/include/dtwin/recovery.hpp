// SPDX-License-Identifier: Apache-2.0
/**
 * @file   recovery.hpp
 * @brief  Sparse model recovery: jointly fit a neural flow and the ODE
 *         coefficients so that the flow matches the measured channels and
 *         obeys dX/dt = h(X, U, theta) on every channel.
 */
#ifndef DTWIN_RECOVERY_HPP
#define DTWIN_RECOVERY_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dtwin/channel.hpp"
#include "dtwin/dynamics.hpp"
#include "dtwin/neuralflow.hpp"
#include "dtwin/trajectory.hpp"

namespace dtwin {

struct RecoveryConfig {
  std::size_t epochs = 2000;
  double learning_rate = 1e-2;
  /// Cosine decay of both step sizes down to this fraction of their start
  /// value over the main pass. The refit runs at the decayed rate.
  double final_lr_fraction = 1.0;
  /// Step size for theta; learning_rate when unset.
  std::optional<double> theta_learning_rate;
  double physics_weight = 1.0;
  /// The physics weight ramps linearly from 0 over this many epochs.
  std::size_t warmup_epochs = 0;
  double sparsity_weight = 1e-3;
  /// Coefficients with |theta_k| < prune_threshold * max|theta| become 0.
  double prune_threshold = 0.05;
  /// Length of the sparsity-free refit pass after pruning.
  std::size_t refit_epochs = 500;
  /// Maximum tolerable reconstruction RMSE on measured channels.
  double epsilon = 1e-2;
  /// RK4 substeps for any simulation the trainer performs.
  std::size_t substeps = 10;
  std::uint64_t seed = 0;
  std::size_t hidden_dim = 16;
  StepRule rule = StepRule::Adam;
  /// Flow starting values for hidden channels (zeros when empty).
  std::vector<double> initial_state;
  /// Head scale for each state channel, used on hidden ones only. Hidden
  /// channels default to 1 when empty. |Z_k - z0| <= scale * tau_k.
  std::vector<double> hidden_scale;
  /// Initial theta; zeros when empty.
  std::vector<double> initial_theta;
  /// Emit a progress message every this many epochs (0 = never).
  std::size_t progress_every = 100;

  void validate() const;
};

struct LossComponents {
  double total = 0.0;
  double recon = 0.0;
  double physics = 0.0;
  double sparsity = 0.0;
};

struct RecoveryReport {
  CoefficientVector theta;
  std::vector<std::string> coefficient_names;
  /// RMSE over measured channels.
  double reconstruction_error = 0.0;
  std::vector<LossComponents> loss_history;
  bool converged = false;
  std::size_t epochs_run = 0;
  double wall_time_seconds = 0.0;
  std::size_t peak_memory_bytes = 0;
  std::vector<bool> pruned;
  Matrix reconstruction; ///< N x n flow output after training
  FlowParams flow;
};

struct ProgressEvent {
  std::size_t run = 0;
  std::size_t epoch = 0;
  LossComponents loss;
  bool finished = false;
};

/// Mean squared error over samples and measured channels. When `grad` is
/// non-null it receives dL/dZ (zero on hidden channels).
double reconstruction_loss(const Matrix &z, const Trajectory &traj,
                           Matrix *grad = nullptr);

/// Root of reconstruction_loss.
double reconstruction_rmse(const Matrix &z, const Trajectory &traj);

/// Three-point derivative weights (previous, centre, next) on a possibly
/// nonuniform grid, for interior sample k.
std::array<double, 3> central_difference_weights(const Vector &times, Eigen::Index k);

struct PhysicsTerms {
  double value = 0.0;
  Matrix grad_z;     ///< N x n
  Vector grad_theta; ///< p
};

/**
 * Mean over interior samples of ||D_t Z_k - h(Z_k, u_k, theta)||^2 on all
 * channels, hidden ones included.
 */
double physics_residual(const Matrix &z, const Trajectory &traj,
                        const Vector &theta, const Model &model);

PhysicsTerms physics_residual_terms(const Matrix &z, const Trajectory &traj,
                                    const Vector &theta, const Model &model);

/// sum of |theta_k| over coefficients the model penalises (all when model is
/// null).
double sparsity_penalty(const Vector &theta, const Model *model);

/// recon + lambda_p * physics + lambda_s * ||theta||_1.
LossComponents total_loss(const Matrix &z, const Trajectory &traj,
                          const Vector &theta, const Model &model,
                          const RecoveryConfig &config);

/// d total_loss / d theta, analytic.
Vector total_loss_theta_gradient(const Matrix &z, const Trajectory &traj,
                                 const Vector &theta, const Model &model,
                                 const RecoveryConfig &config);

/**
 * Trains flow and coefficients, prunes small coefficients to exact zero and
 * refits the survivors without the sparsity term. Deterministic for a given
 * config.seed. Throws TrainingDivergedError if the loss becomes non-finite.
 */
RecoveryReport recover(const Trajectory &traj, std::shared_ptr<const Model> model,
                       const RecoveryConfig &config,
                       Channel<ProgressEvent> *progress = nullptr,
                       std::size_t run_index = 0);

/// Independent runs on worker threads; results keep the input order.
std::vector<RecoveryReport> recover_many(const std::vector<Trajectory> &trajs,
                                         std::shared_ptr<const Model> model,
                                         const RecoveryConfig &config,
                                         std::size_t workers,
                                         Channel<ProgressEvent> *progress = nullptr);

struct IdentifiabilityOptions {
  double horizon = 0.0;
  std::size_t samples = 200;
  double delta = 0.0;
  double tolerance = 1e-6;
  /// Measured channels; all when empty.
  std::vector<bool> measured;
  std::size_t substeps = 10;
};

struct IdentifiabilityReport {
  std::vector<bool> identifiable;
  /// max |X_perturbed - X| / max |X| over time and measured channels.
  std::vector<double> deviation;
};

/// Perturbs each coefficient by delta and flags it identifiable when the
/// measured trajectory moves by more than the tolerance.
IdentifiabilityReport check_identifiability(std::shared_ptr<const Model> model,
                                            const Vector &theta,
                                            const InputSignal &input,
                                            const StateVector &x0,
                                            const IdentifiabilityOptions &options);

} // namespace dtwin

#endif // DTWIN_RECOVERY_HPP
