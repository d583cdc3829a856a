// SPDX-License-Identifier: Apache-2.0
#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtwin/error.hpp"
#include "dtwin/recovery.hpp"
#include "dtwin/rng.hpp"

namespace dtwin::cli {

void GradcheckConfig::validate() const {
  if (hidden < 1 || hidden > 32)
    throw ArgumentError("gradcheck hidden must lie in [1, 32]");
  if (state < 1 || state > 6)
    throw ArgumentError("gradcheck state must lie in [1, 6]");
  if (input > 6)
    throw ArgumentError("gradcheck input must be at most 6");
  if (samples < 3 || samples > 64)
    throw ArgumentError("gradcheck samples must lie in [3, 64]");
  if (coordinates < 1 || coordinates > 5000)
    throw ArgumentError("gradcheck coordinates must lie in [1, 5000]");
  if (!(tolerance > 0.0))
    throw ArgumentError("gradcheck tolerance must be positive");
  if (!(step > 0.0) || step > 1e-2)
    throw ArgumentError("gradcheck step must lie in (0, 1e-2]");
}

namespace {

struct Instance {
  std::shared_ptr<LibraryModel> model;
  Trajectory traj;
  Vector z0;
  FlowParams flow;
  Vector theta;
  RecoveryConfig weights;
};

Instance make_instance(const GradcheckConfig &c) {
  Rng rng(c.seed);
  std::vector<std::string> states, inputs;
  for (std::size_t j = 0; j < c.state; ++j)
    states.push_back("x" + std::to_string(j));
  for (std::size_t j = 0; j < c.input; ++j)
    inputs.push_back("u" + std::to_string(j));
  Instance in;
  in.model = std::make_shared<LibraryModel>(build_library(c.state, c.input, 2), states, inputs);

  const auto big_n = static_cast<Eigen::Index>(c.samples);
  const auto n = static_cast<Eigen::Index>(c.state);
  const auto m = static_cast<Eigen::Index>(c.input);
  auto &t = in.traj;
  t.times.resize(big_n);
  double clock = 0.0;
  for (Eigen::Index k = 0; k < big_n; ++k) {
    t.times(k) = clock;
    clock += rng.uniform(0.05, 0.2);
  }
  t.states.resize(big_n, n);
  t.inputs.resize(big_n, m);
  for (Eigen::Index k = 0; k < big_n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j)
      t.states(k, j) = rng.uniform(-1.0, 1.0);
    for (Eigen::Index j = 0; j < m; ++j)
      t.inputs(k, j) = rng.uniform(-1.0, 1.0);
  }
  t.mask.assign(c.state, false);
  t.mask[0] = true;
  t.state_names = states;
  t.input_names = inputs;

  in.z0 = t.states.row(0).transpose();
  in.flow = FlowParams(FlowShape{c.hidden, c.state, c.input});
  for (double &v : in.flow.values())
    v = rng.uniform(-0.5, 0.5);
  in.theta.resize(static_cast<Eigen::Index>(in.model->coefficient_count()));
  for (Eigen::Index k = 0; k < in.theta.size(); ++k)
    in.theta(k) = rng.uniform(-0.5, 0.5);
  in.weights.physics_weight = 0.7;
  in.weights.sparsity_weight = 0.01;
  return in;
}

double loss_at(const Instance &in, const FlowParams &flow, const Vector &theta) {
  const auto z = flow_forward(flow, in.z0, in.traj.inputs, in.traj.times).z;
  return total_loss(z, in.traj, theta, *in.model, in.weights).total;
}

} // namespace

GradcheckResult run_gradcheck(const GradcheckConfig &config) {
  config.validate();
  Instance in = make_instance(config);

  const auto forward = flow_forward(in.flow, in.z0, in.traj.inputs, in.traj.times);
  Matrix dl_dz;
  reconstruction_loss(forward.z, in.traj, &dl_dz);
  dl_dz += in.weights.physics_weight *
           physics_residual_terms(forward.z, in.traj, in.theta, *in.model).grad_z;
  const FlowGrads flow_grad = flow_backward(in.flow, forward.tape, dl_dz);
  const Vector theta_grad =
    total_loss_theta_gradient(forward.z, in.traj, in.theta, *in.model, in.weights);

  const std::size_t flow_count = in.flow.size();
  const std::size_t total = flow_count + static_cast<std::size_t>(in.theta.size());
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng pick(config.seed ^ 0x9e3779b97f4a7c15ULL);
  const std::size_t chosen = std::min(config.coordinates, total);
  for (std::size_t i = 0; i < chosen; ++i)
    std::swap(order[i], order[i + pick.below(total - i)]);
  order.resize(chosen);
  std::sort(order.begin(), order.end());

  GradcheckResult result;
  const double h = config.step;
  for (std::size_t idx : order) {
    GradcheckEntry e;
    double plus = 0.0, minus = 0.0;
    if (idx < flow_count) {
      e.group = "flow";
      e.index = idx;
      e.analytic = flow_grad.values()[idx];
      FlowParams p = in.flow;
      p.values()[idx] += h;
      plus = loss_at(in, p, in.theta);
      p.values()[idx] -= 2.0 * h;
      minus = loss_at(in, p, in.theta);
    } else {
      e.group = "theta";
      e.index = idx - flow_count;
      const auto k = static_cast<Eigen::Index>(e.index);
      e.analytic = theta_grad(k);
      Vector th = in.theta;
      th(k) += h;
      plus = loss_at(in, in.flow, th);
      th(k) -= 2.0 * h;
      minus = loss_at(in, in.flow, th);
    }
    if (config.corrupt_gradient)
      e.analytic = e.analytic * 1.01 + 1e-2;
    e.numeric = (plus - minus) / (2.0 * h);
    e.relative_error = std::abs(e.analytic - e.numeric) /
                       std::max({std::abs(e.analytic), std::abs(e.numeric), 1e-3});
    result.max_relative_error = std::max(result.max_relative_error, e.relative_error);
    result.entries.push_back(std::move(e));
  }
  result.pass = result.max_relative_error <= config.tolerance;
  return result;
}

} // namespace dtwin::cli
