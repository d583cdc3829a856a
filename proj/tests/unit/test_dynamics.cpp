// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "dtwin/dynamics.hpp"
#include "dtwin/error.hpp"
#include "dtwin/rng.hpp"

using namespace dtwin;

namespace {

StateVector integrate(const Rhs &rhs, StateVector x, double horizon, double h) {
  const auto steps = static_cast<std::size_t>(std::llround(horizon / h));
  for (std::size_t k = 0; k < steps; ++k)
    x = rk4_step(rhs, x, static_cast<double>(k) * h, h, k);
  return x;
}

double order_estimate(const Rhs &rhs, const StateVector &x0, double horizon, double h,
                      Eigen::Index channel) {
  const StateVector ref = integrate(rhs, x0, horizon, h / 64.0);
  const double e1 = std::abs(integrate(rhs, x0, horizon, h)(channel) - ref(channel));
  const double e2 = std::abs(integrate(rhs, x0, horizon, h / 2.0)(channel) - ref(channel));
  return std::log2(e1 / e2);
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double d : v)
    out(i++) = d;
  return out;
}

Matrix fd_jacobian(const Model &m, const Vector &x, const Vector &u, double t,
                   const Vector &theta) {
  const double h = 1e-6;
  Matrix j(x.size(), x.size());
  for (Eigen::Index c = 0; c < x.size(); ++c) {
    Vector a = x, b = x;
    a(c) += h;
    b(c) -= h;
    j.col(c) = (m.rhs(a, u, t, theta) - m.rhs(b, u, t, theta)) / (2.0 * h);
  }
  return j;
}

} // namespace

TEST_CASE("library sizes and ordering") {
  CHECK(complete_library_size(1, 2) == 3);
  CHECK(complete_library_size(2, 2) == 6);
  CHECK(complete_library_size(3, 3) == 20);
  const auto lib = build_library(2, 1, 2);
  CHECK(lib.size() == 7);
  const std::vector<std::string> s{"x", "y"}, u{"u"};
  CHECK(lib.term_name(0, s, u) == "1");
  CHECK(lib.term_name(1, s, u) == "x");
  CHECK(lib.term_name(2, s, u) == "y");
  CHECK(lib.term_name(3, s, u) == "x^2");
  CHECK(lib.term_name(4, s, u) == "x*y");
  CHECK(lib.term_name(5, s, u) == "y^2");
  CHECK(lib.term_name(6, s, u) == "u");
  CHECK(lib.order() == 2);
  CHECK_THROWS_AS(build_library(0, 0, 2), ArgumentError);
  CHECK_THROWS_AS(build_library(8, 0, 8, 1000), ArgumentError);
}

TEST_CASE("library rhs matches model rhs and sparse ids") {
  const auto lib = build_library(2, 1, 2);
  LibraryModel model(lib, {"x", "y"}, {"u"});
  CHECK(model.coefficient_count() == 14);
  CoefficientVector sparse{{-2.0, 0.5, 3.0}, {1, 6, 7 + 3}, "library"};
  const Vector x = vec({0.3, -1.2});
  const Vector u = vec({0.7});
  const StateVector a = library_rhs(x, u, sparse, lib);
  const StateVector b = model.rhs(x, u, 0.0, model.dense_theta(sparse));
  CHECK(a(0) == doctest::Approx(-2.0 * 0.3 + 0.5 * 0.7));
  CHECK(a(1) == doctest::Approx(3.0 * 0.09));
  CHECK((a - b).norm() < 1e-14);
  CHECK_FALSE(model.penalized(0));
  CHECK_FALSE(model.penalized(7));
  CHECK(model.penalized(1));

  CoefficientVector bad{{1.0}, {99}, "library"};
  CHECK_THROWS_AS(bad.validate(14), IndexError);
  CoefficientVector dup{{1.0, 2.0}, {3, 3}, "library"};
  CHECK_THROWS_AS(dup.validate(14), ArgumentError);
}

TEST_CASE("linear form and jacobians agree with rhs") {
  Rng rng(3);
  const auto bergman = std::make_shared<BergmanModel>();
  const auto ecg = std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  const auto lib = std::make_shared<LibraryModel>(build_library(2, 1, 3), std::vector<std::string>{"a", "b"},
                                                  std::vector<std::string>{"u"});
  for (const Model *m : {static_cast<const Model *>(bergman.get()),
                         static_cast<const Model *>(ecg.get()),
                         static_cast<const Model *>(lib.get())}) {
    for (int trial = 0; trial < 20; ++trial) {
      Vector x(static_cast<Eigen::Index>(m->state_dim()));
      for (auto &v : x)
        v = rng.uniform(-1.0, 1.0);
      Vector u(static_cast<Eigen::Index>(m->input_dim()));
      for (auto &v : u)
        v = rng.uniform(0.5, 1.5);
      Vector theta(static_cast<Eigen::Index>(m->coefficient_count()));
      for (auto &v : theta)
        v = rng.uniform(-1.0, 1.0);
      const double t = rng.uniform(0.0, 3.0);
      Vector offset;
      Matrix features;
      m->linear_form(x, u, t, offset, features);
      CHECK((offset + features * theta - m->rhs(x, u, t, theta)).norm() < 1e-12);
      const Matrix ja = m->state_jacobian(x, u, t, theta);
      const Matrix jf = fd_jacobian(*m, x, u, t, theta);
      CHECK((ja - jf).cwiseAbs().maxCoeff() < 1e-6 * (1.0 + jf.cwiseAbs().maxCoeff()));
    }
  }
}

TEST_CASE("bergman rhs hand computation") {
  BergmanCoefficients c{0.03, 0.01, 0.02, 0.1, 0.1, 0.5};
  BergmanInputs in{2.0, 4.0, 1.0, 1.0};
  const StateVector x = vec({1.5, 0.2, -3.0});
  const StateVector d = bergman_rhs(x, in, c);
  CHECK(d(0) == doctest::Approx(-0.1 * 1.5 + 0.1 * 2.0));
  CHECK(d(1) == doctest::Approx(-0.03 * 0.2 + 0.01 * (1.5 - 1.0)));
  CHECK(d(2) == doctest::Approx(-0.2 * 1.0 - 0.02 * -3.0 + 4.0 * 0.5));
  CHECK_THROWS_AS(bergman_rhs(vec({1.0, 0.0}), in, c), StructuralError);
}

TEST_CASE("RK4 is fourth order") {
  const Rhs decay = [](double, const StateVector &x) -> StateVector { return -x; };
  const double p = order_estimate(decay, vec({1.0}), 1.0, 0.1, 0);
  CHECK(p >= 3.9);
  CHECK(p <= 4.1);

  const auto ecg = std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  const auto w = ecg_fixture_waveform();
  const Vector theta = Eigen::Map<const Vector>(w.amplitude.data(), 5);
  const Rhs rhs = bind_rhs(ecg, theta, ecg_fixture_inputs());
  const double q = order_estimate(rhs, vec({1.0, 0.0, 0.03}), 1.0, 0.01, 2);
  CHECK(q >= 3.9);
  CHECK(q <= 4.1);
}

TEST_CASE("rk4 reports non-finite stages") {
  const Rhs bad = [](double, const StateVector &x) -> StateVector {
    return x.array() / 0.0 * 0.0;
  };
  try {
    (void)rk4_step(bad, vec({1.0}), 0.0, 0.1, 17);
    FAIL("expected NonFiniteStepError");
  } catch (const NonFiniteStepError &e) {
    CHECK(e.step() == 17);
  }
  CHECK_THROWS_AS(rk4_step(bad, vec({1.0}), 0.0, -0.1), ArgumentError);
}

TEST_CASE("ECG trajectory stays on the unit circle") {
  const auto ecg = std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  const auto w = ecg_fixture_waveform();
  const Vector theta = Eigen::Map<const Vector>(w.amplitude.data(), 5);
  const auto traj =
    simulate(ecg, theta, ecg_fixture_inputs(), vec({1.0, 0.0, 0.03}), 10.0, 2001, {5});
  double worst = 0.0;
  for (Eigen::Index k = 0; k < traj.states.rows(); ++k)
    worst = std::max(worst, std::abs(std::hypot(traj.states(k, 0), traj.states(k, 1)) - 1.0));
  CHECK(worst <= 1e-3);
  // Unscaled ECGSYN output: R peak near 0.05, Q and S dips below zero.
  CHECK(traj.states.col(2).maxCoeff() > 0.03);
  CHECK(traj.states.col(2).minCoeff() < 0.0);
}

TEST_CASE("simulate contract") {
  const auto model = std::make_shared<BergmanModel>();
  const auto c = bergman_fixture_coefficients().as_array();
  const Vector theta = Eigen::Map<const Vector>(c.data(), 6);
  const auto x0 = bergman_fixture_initial_state();
  const auto input = bergman_fixture_inputs();
  const auto traj = simulate(model, theta, input, x0, 995.0, 200);
  CHECK(traj.samples() == 200);
  CHECK(traj.times(1) == doctest::Approx(5.0));
  CHECK(traj.states.row(0).transpose() == x0);
  CHECK(traj.time_unit == TimeUnit::Minutes);
  CHECK(traj.input_dim() == 4);
  const auto again = simulate(model, theta, input, x0, 995.0, 200);
  CHECK(traj.states == again.states);

  CHECK_THROWS_AS(simulate(model, theta, input, x0, 995.0, 1), ArgumentError);
  CHECK_THROWS_AS(simulate(model, theta, input, vec({1.0}), 995.0, 10), StructuralError);
  CHECK_THROWS_AS(simulate(model, theta.head(5), input, x0, 995.0, 10), StructuralError);

  const auto lib = std::make_shared<LibraryModel>(build_library(1, 0, 2),
                                                  std::vector<std::string>{"x"},
                                                  std::vector<std::string>{});
  CHECK_THROWS_AS(simulate(lib, vec({0.0, 0.0, 1.0}), InputSignal{}, vec({1.0}), 3.0, 30),
                  DivergenceError);
}

TEST_CASE("input channels") {
  const auto s = InputChannel::sampled({0.0, 1.0, 2.0}, {0.0, 2.0, 0.0});
  CHECK(s(0.5) == doctest::Approx(1.0));
  CHECK(s(1.5) == doctest::Approx(1.0));
  CHECK_THROWS_AS(s(2.5), DomainError);
  CHECK(s.covers(0.0, 2.0));
  CHECK_FALSE(s.covers(0.0, 3.0));
  CHECK_THROWS_AS(InputChannel::sampled({0.0, 0.0}, {1.0, 1.0}), ArgumentError);

  const auto p = InputChannel::pulses({{1.0, 2.0, 5.0}}, 0.5);
  CHECK(p(0.5) == 0.5);
  CHECK(p(2.0) == 5.5);
  CHECK(p(3.5) == 0.5);

  RrSpectrum spec;
  const auto rr = InputChannel::rr_series(spec, 60.0, 11);
  double lo = 1e9;
  for (double t = 0.0; t <= 60.0; t += 0.05)
    lo = std::min(lo, rr(t));
  CHECK(lo > 0.0);
  CHECK(rr(10.0) == InputChannel::rr_series(spec, 60.0, 11)(10.0));

  InputSignal sig;
  sig.add("a", InputChannel::constant(1.0)).add("b", s);
  CHECK_THROWS_AS(sig.add("a", InputChannel::constant(2.0)), ArgumentError);
  CHECK_THROWS_AS(sig.select({"c"}), ArgumentError);
  CHECK_THROWS_AS(sig.require_coverage(0.0, 5.0), DomainError);
}
