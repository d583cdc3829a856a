// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <limits>
#include <thread>

#include "dtwin/error.hpp"
#include "dtwin/recovery.hpp"
#include "dtwin/rng.hpp"

using namespace dtwin;

namespace {

std::shared_ptr<LibraryModel> decay_model() {
  return std::make_shared<LibraryModel>(build_library(1, 0, 2), std::vector<std::string>{"x"},
                                        std::vector<std::string>{});
}

Trajectory decay_trajectory(std::size_t samples = 50) {
  Vector theta(3);
  theta << 0.0, -2.0, 0.0;
  return simulate(decay_model(), theta, InputSignal{}, Vector::Ones(1), 2.0, samples, {20});
}

RecoveryConfig quick_config() {
  RecoveryConfig c;
  c.epochs = 1500;
  c.refit_epochs = 300;
  c.theta_learning_rate = 0.1;
  c.sparsity_weight = 1e-4;
  c.warmup_epochs = 300;
  c.final_lr_fraction = 0.01;
  c.seed = 1;
  c.progress_every = 250;
  return c;
}

Trajectory random_instance(std::uint64_t seed, const Model &model, std::size_t samples) {
  Rng rng(seed);
  Trajectory t;
  const auto big_n = static_cast<Eigen::Index>(samples);
  t.times.resize(big_n);
  double clock = 0.0;
  for (Eigen::Index k = 0; k < big_n; ++k) {
    t.times(k) = clock;
    clock += rng.uniform(0.05, 0.3);
  }
  t.states.resize(big_n, static_cast<Eigen::Index>(model.state_dim()));
  t.inputs.resize(big_n, static_cast<Eigen::Index>(model.input_dim()));
  for (auto &v : t.states.reshaped())
    v = rng.uniform(-1.0, 1.0);
  for (auto &v : t.inputs.reshaped())
    v = rng.uniform(0.5, 1.5);
  t.mask.assign(model.state_dim(), true);
  t.mask[0] = false;
  t.state_names = model.state_names();
  t.input_names = model.input_names();
  return t;
}

} // namespace

TEST_CASE("central difference weights are exact on quadratics") {
  Vector t(5);
  t << 0.0, 0.3, 0.4, 1.1, 1.5;
  const auto f = [](double x) { return 3.0 - 2.0 * x + 0.7 * x * x; };
  for (Eigen::Index k = 1; k < 4; ++k) {
    const auto w = central_difference_weights(t, k);
    const double d = w[0] * f(t(k - 1)) + w[1] * f(t(k)) + w[2] * f(t(k + 1));
    CHECK(d == doctest::Approx(-2.0 + 1.4 * t(k)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(central_difference_weights(t, 0), ArgumentError);
  CHECK_THROWS_AS(central_difference_weights(t, 4), ArgumentError);
}

TEST_CASE("reconstruction loss ignores hidden channels") {
  Trajectory t;
  t.times = Vector::LinSpaced(4, 0.0, 1.0);
  t.states = Matrix::Zero(4, 2);
  t.inputs.resize(4, 0);
  t.mask = {true, false};
  t.state_names = {"a", "b"};
  Matrix z = Matrix::Zero(4, 2);
  z.col(1).setConstant(100.0);
  CHECK(reconstruction_loss(z, t) == 0.0);
  z(2, 0) = 2.0;
  Matrix grad;
  CHECK(reconstruction_loss(z, t, &grad) == doctest::Approx(1.0));
  CHECK(grad(2, 0) == doctest::Approx(1.0));
  CHECK(grad.col(1).isZero());
  CHECK(reconstruction_rmse(z, t) == doctest::Approx(1.0));
}

TEST_CASE("physics residual vanishes on exact linear data") {
  const auto model = decay_model();
  Trajectory t;
  t.times.resize(6);
  t.times << 0.0, 0.1, 0.35, 0.5, 0.9, 1.0;
  t.states = (1.0 + 2.0 * t.times.array()).matrix();
  t.inputs.resize(6, 0);
  t.mask = {true};
  t.state_names = {"x"};
  Vector theta(3);
  theta << 2.0, 0.0, 0.0; // dx/dt = 2
  CHECK(physics_residual(t.states, t, theta, *model) < 1e-24);
  theta(1) = 1.0;
  CHECK(physics_residual(t.states, t, theta, *model) > 0.1);
}

TEST_CASE("loss gradients match central differences") {
  const auto bergman = std::make_shared<BergmanModel>();
  const auto lib = std::make_shared<LibraryModel>(build_library(2, 1, 2),
                                                  std::vector<std::string>{"a", "b"},
                                                  std::vector<std::string>{"u"});
  for (const Model *model : {static_cast<const Model *>(bergman.get()),
                             static_cast<const Model *>(lib.get())}) {
    const auto traj = random_instance(3, *model, 9);
    Rng rng(17);
    Matrix z = traj.states;
    for (auto &v : z.reshaped())
      v += rng.uniform(-0.2, 0.2);
    Vector theta(static_cast<Eigen::Index>(model->coefficient_count()));
    for (auto &v : theta)
      v = rng.uniform(-0.5, 0.5);
    RecoveryConfig w;
    w.physics_weight = 0.6;
    w.sparsity_weight = 0.02;

    const auto terms = physics_residual_terms(z, traj, theta, *model);
    const double h = 1e-6;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      Matrix up = z, dn = z;
      up.reshaped()(i) += h;
      dn.reshaped()(i) -= h;
      const double fd = (physics_residual(up, traj, theta, *model) -
                         physics_residual(dn, traj, theta, *model)) / (2.0 * h);
      CHECK(terms.grad_z.reshaped()(i) == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
    const Vector g = total_loss_theta_gradient(z, traj, theta, *model, w);
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      Vector up = theta, dn = theta;
      up(i) += h;
      dn(i) -= h;
      const double fd = (total_loss(z, traj, up, *model, w).total -
                         total_loss(z, traj, dn, *model, w).total) / (2.0 * h);
      CHECK(g(i) == doctest::Approx(fd).epsilon(1e-6).scale(1e-3));
    }
  }
}

TEST_CASE("sparsity penalty skips the constant term") {
  const auto model = decay_model();
  Vector theta(3);
  theta << 5.0, -2.0, 0.5;
  CHECK(sparsity_penalty(theta, model.get()) == doctest::Approx(2.5));
  CHECK(sparsity_penalty(theta, nullptr) == doctest::Approx(7.5));
}

TEST_CASE("config validation") {
  RecoveryConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = RecoveryConfig{};
  c.final_lr_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = RecoveryConfig{};
  c.hidden_scale = {1.0, -1.0};
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = RecoveryConfig{};
  c.epsilon = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);

  const auto traj = decay_trajectory(10);
  RecoveryConfig bad_state;
  bad_state.initial_state = {1.0, 2.0};
  CHECK_THROWS_AS(recover(traj, decay_model(), bad_state), StructuralError);
  CHECK_THROWS_AS(recover(traj, std::make_shared<BergmanModel>(), RecoveryConfig{}),
                  StructuralError);
}

TEST_CASE("sparse recovery of exponential decay") {
  const auto traj = decay_trajectory();
  Channel<ProgressEvent> progress;
  const auto r = recover(traj, decay_model(), quick_config(), &progress);
  progress.close();
  const Vector theta = decay_model()->dense_theta(r.theta);
  CHECK(theta(1) == doctest::Approx(-2.0).epsilon(0.05));
  CHECK(theta(0) == 0.0);
  CHECK(theta(2) == 0.0);
  CHECK(r.pruned == std::vector<bool>{true, false, true});
  CHECK(r.converged);
  CHECK(r.epochs_run == 1800);
  CHECK(r.loss_history.size() == 1800);
  CHECK(r.reconstruction.rows() == 50);
  CHECK(r.reconstruction(0, 0) == traj.states(0, 0));

  std::size_t events = 0;
  bool finished = false;
  while (auto ev = progress.try_receive()) {
    ++events;
    finished = finished || ev->finished;
  }
  CHECK(events > 2);
  CHECK(finished);
}

TEST_CASE("recover_many matches sequential runs for any worker count") {
  std::vector<Trajectory> trajs;
  for (double x0 : {1.0, 0.5, 2.0}) {
    Vector theta(3);
    theta << 0.0, -2.0, 0.0;
    trajs.push_back(simulate(decay_model(), theta, InputSignal{}, Vector::Constant(1, x0), 2.0,
                             30, {10}));
  }
  auto config = quick_config();
  config.epochs = 200;
  config.refit_epochs = 50;
  const auto model = decay_model();
  const auto one = recover_many(trajs, model, config, 1);
  const auto three = recover_many(trajs, model, config, 3);
  REQUIRE(one.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto solo = recover(trajs[i], model, config);
    CHECK(one[i].theta.values == solo.theta.values);
    CHECK(three[i].theta.values == solo.theta.values);
    CHECK(three[i].reconstruction == solo.reconstruction);
  }
}

TEST_CASE("non-finite training raises with the epoch") {
  auto config = quick_config();
  config.initial_theta = {std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0};
  try {
    (void)recover(decay_trajectory(20), decay_model(), config);
    FAIL("expected TrainingDivergedError");
  } catch (const TrainingDivergedError &e) {
    CHECK(e.epoch() == 0);
  }
}

TEST_CASE("identifiability") {
  const auto model = decay_model();
  Vector theta(3);
  theta << 0.0, -2.0, 0.0;
  IdentifiabilityOptions opts;
  opts.horizon = 2.0;
  opts.samples = 50;
  opts.delta = 1e-3;
  opts.tolerance = 1e-6;
  const auto live = check_identifiability(model, theta, InputSignal{}, Vector::Ones(1), opts);
  CHECK(live.identifiable == std::vector<bool>{true, true, true});
  // From rest, only the constant term moves the state.
  const auto rest = check_identifiability(model, theta, InputSignal{}, Vector::Zero(1), opts);
  CHECK(rest.identifiable == std::vector<bool>{true, false, false});
  CHECK(rest.deviation[1] == 0.0);

  opts.delta = 0.0;
  CHECK_THROWS_AS(check_identifiability(model, theta, InputSignal{}, Vector::Ones(1), opts),
                  ArgumentError);
}
