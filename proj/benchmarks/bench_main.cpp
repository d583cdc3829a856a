// SPDX-License-Identifier: Apache-2.0
#include <benchmark/benchmark.h>

#include "dtwin/bench.hpp"
#include "dtwin/dynamics.hpp"
#include "dtwin/neuralflow.hpp"
#include "dtwin/rng.hpp"

using namespace dtwin;

namespace {

struct FlowCase {
  FlowParams params;
  Vector z0;
  Matrix u;
  Vector t;
};

FlowCase make_flow(std::size_t hidden, Eigen::Index samples) {
  const FlowShape shape{hidden, 3, 4};
  FlowCase c{FlowParams::initialize(shape, 5), Vector::Ones(3), Matrix::Zero(samples, 4),
             Vector::LinSpaced(samples, 0.0, 995.0)};
  Rng rng(9);
  for (auto &x : c.u.reshaped())
    x = rng.uniform(0.0, 1.0);
  return c;
}

void BM_FlowForward(benchmark::State &state) {
  const auto c = make_flow(static_cast<std::size_t>(state.range(0)), 200);
  for (auto _ : state)
    benchmark::DoNotOptimize(flow_forward(c.params, c.z0, c.u, c.t).z);
}
BENCHMARK(BM_FlowForward)->Arg(8)->Arg(16)->Arg(32)->Arg(64);

void BM_FlowForwardF32(benchmark::State &state) {
  const auto c = make_flow(static_cast<std::size_t>(state.range(0)), 200);
  for (auto _ : state)
    benchmark::DoNotOptimize(flow_forward_f32(c.params, c.z0, c.u, c.t));
}
BENCHMARK(BM_FlowForwardF32)->Arg(16)->Arg(64);

void BM_FlowBackward(benchmark::State &state) {
  const auto c = make_flow(static_cast<std::size_t>(state.range(0)), 200);
  const auto fwd = flow_forward(c.params, c.z0, c.u, c.t);
  const Matrix seed = Matrix::Ones(fwd.z.rows(), fwd.z.cols());
  for (auto _ : state)
    benchmark::DoNotOptimize(flow_backward(c.params, fwd.tape, seed));
}
BENCHMARK(BM_FlowBackward)->Arg(8)->Arg(16)->Arg(32)->Arg(64);

void BM_Rk4Bergman(benchmark::State &state) {
  const auto model = std::make_shared<BergmanModel>();
  const auto c = bergman_fixture_coefficients().as_array();
  const Vector theta = Eigen::Map<const Vector>(c.data(), 6);
  const auto input = bergman_fixture_inputs();
  const auto x0 = bergman_fixture_initial_state();
  for (auto _ : state)
    benchmark::DoNotOptimize(simulate(model, theta, input, x0, 995.0, 200, {10}).states);
}
BENCHMARK(BM_Rk4Bergman);

void BM_Rk4Ecg(benchmark::State &state) {
  const auto model = std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  const auto w = ecg_fixture_waveform();
  const Vector theta = Eigen::Map<const Vector>(w.amplitude.data(), 5);
  Vector x0(3);
  x0 << 1.0, 0.0, 0.03;
  const auto input = ecg_fixture_inputs();
  for (auto _ : state)
    benchmark::DoNotOptimize(simulate(model, theta, input, x0, 10.0, 2001, {5}).states);
}
BENCHMARK(BM_Rk4Ecg);

void BM_ParetoFront(benchmark::State &state) {
  using bench::Field;
  Rng rng(3);
  std::vector<bench::PlatformSample> s(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = {"p" + std::to_string(i), rng.uniform(1, 10), rng.uniform(1, 10), rng.uniform(1, 10),
            rng.uniform(0, 1)};
  const std::vector<bench::Objective> obj{
    {Field::Runtime}, {Field::Power}, {Field::Dram}, {Field::Error}};
  for (auto _ : state)
    benchmark::DoNotOptimize(bench::pareto_front(s, obj));
}
BENCHMARK(BM_ParetoFront)->Arg(10)->Arg(100)->Arg(1000);

} // namespace

BENCHMARK_MAIN();
