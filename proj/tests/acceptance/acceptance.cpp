// SPDX-License-Identifier: Apache-2.0
// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "cli.hpp"
#include "dtwin/bench.hpp"
#include "dtwin/dynamics.hpp"
#include "dtwin/hlscost.hpp"
#include "dtwin/neuralflow.hpp"
#include "dtwin/recovery.hpp"
#include "dtwin/rng.hpp"
#include "dtwin/signal.hpp"
#include "gradcheck.hpp"

using namespace dtwin;
namespace fs = std::filesystem;

namespace {

const std::string kFixtures = DTWIN_FIXTURE_DIR;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string &what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + std::string("failed: ") + what;
    }
  }
  void note(const std::string &what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

bool near(double v, double target, double tol) { return std::abs(v - target) <= tol; }

int failures = 0;

void criterion(int id, const std::string &title, double limit_s,
               const std::function<void(Verdict &)> &body) {
  Verdict v;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(v);
  } catch (const std::exception &e) {
    v.pass = false;
    v.note(std::string("exception: ") + e.what());
  }
  const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0.0)
    v.require(took < limit_s, "runtime " + fmt(took) + " s >= " + fmt(limit_s) + " s");
  if (!v.pass)
    ++failures;
  std::printf("%s %2d %s (%.3f s) %s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), took,
              v.detail.c_str());
  std::fflush(stdout);
}

const bench::RatioRow &ratio_row(const std::vector<bench::RatioRow> &rows, const std::string &l) {
  for (const auto &r : rows)
    if (r.label == l)
      return r;
  throw std::runtime_error("missing ratio row " + l);
}

std::vector<std::size_t> brute_front(const std::vector<bench::PlatformSample> &s,
                                     const std::vector<bench::Objective> &obj) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < s.size() && !dominated; ++j) {
      if (i == j)
        continue;
      bool no_worse = true, better = false;
      for (const auto &o : obj) {
        const double a = bench::field_value(s[j], o.field);
        const double b = bench::field_value(s[i], o.field);
        no_worse = no_worse && a <= b;
        better = better || a < b;
      }
      dominated = no_worse && better;
    }
    if (!dominated)
      out.push_back(i);
  }
  return out;
}

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

// Cycle-stepped pipeline schedule used as the reference for the cost model.
bool schedule_feasible(const hls::LoopSpec &loop, std::uint64_t ii,
                       const hls::PartitionSpec &part) {
  std::map<std::string, std::uint64_t> per_array;
  for (const auto &a : loop.array_accesses)
    per_array[a.array_id] += a.reads_per_iter + a.writes_per_iter;
  std::map<std::string, std::map<std::uint64_t, std::uint64_t>> used;
  for (std::uint64_t i = 0; i < loop.trip_count; ++i) {
    for (const auto &[id, count] : per_array) {
      const auto p = part.lookup(id);
      if (p.partitioned == hls::Partitioning::Complete)
        continue;
      std::uint64_t left = count;
      for (std::uint64_t c = i * ii; c < (i + 1) * ii && left > 0; ++c) {
        auto &slot = used[id][c];
        const auto take = std::min(left, p.ports_per_bank - slot);
        slot += take;
        left -= take;
      }
      if (left > 0)
        return false;
    }
  }
  for (const auto &d : loop.deps)
    for (std::uint64_t i = 0; i + d.distance < loop.trip_count; ++i)
      if ((i + d.distance) * ii < i * ii + d.latency)
        return false;
  return true;
}

std::shared_ptr<LibraryModel> decay_model() {
  return std::make_shared<LibraryModel>(build_library(1, 0, 2), std::vector<std::string>{"x"},
                                        std::vector<std::string>{});
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

void aid_ratios(Verdict &v) {
  const auto t = bench::read_samples_csv(kFixtures + "/aid_platforms.csv");
  const auto vs_gpu = bench::ratio_report(t, "GPU");
  const auto vs_fpga = bench::ratio_report(t, "FPGA");
  const auto &f = ratio_row(vs_gpu, "FPGA");
  const auto &m = ratio_row(vs_fpga, "MGPU");
  v.require(near(f.speedup, 1.667, 0.005), "FPGA/GPU speedup " + fmt(f.speedup));
  v.require(near(f.dram_reduction, 28.56, 0.05), "FPGA/GPU DRAM " + fmt(f.dram_reduction));
  v.require(f.perf_per_watt_ratio && near(*f.perf_per_watt_ratio, 8.80, 0.05),
            "FPGA/GPU perf/W " + fmt(f.perf_per_watt_ratio.value_or(NAN)));
  v.require(m.perf_per_watt_ratio && near(*m.perf_per_watt_ratio, 1.97, 0.02),
            "MGPU/FPGA perf/W " + fmt(m.perf_per_watt_ratio.value_or(NAN)));
  v.require(near(m.runtime_ratio, 2.22, 0.02), "MGPU/FPGA runtime " + fmt(m.runtime_ratio));
  v.require(near(m.dram_ratio, 10.99, 0.05), "MGPU/FPGA DRAM " + fmt(m.dram_ratio));
  v.note("speedup " + fmt(f.speedup) + ", DRAM " + fmt(f.dram_reduction) + ", perf/W " +
         fmt(*f.perf_per_watt_ratio) + "; MGPU/FPGA perf/W " + fmt(*m.perf_per_watt_ratio) +
         ", runtime " + fmt(m.runtime_ratio) + ", DRAM " + fmt(m.dram_ratio));
}

void ecg_ratios(Verdict &v) {
  const auto t = bench::read_samples_csv(kFixtures + "/ecg_platforms.csv");
  const auto &f = ratio_row(bench::ratio_report(t, "GPU"), "FPGA");
  v.require(near(f.speedup, 4.04, 0.01), "speedup " + fmt(f.speedup));
  v.require(near(f.dram_reduction, 25.57, 0.05), "DRAM " + fmt(f.dram_reduction));
  v.require(f.perf_per_watt_ratio && near(*f.perf_per_watt_ratio, 3.63, 0.02),
            "perf/W " + fmt(f.perf_per_watt_ratio.value_or(NAN)));
  v.note("speedup " + fmt(f.speedup) + ", DRAM " + fmt(f.dram_reduction) + ", perf/W " +
         fmt(f.perf_per_watt_ratio.value_or(NAN)));
}

void pareto(Verdict &v) {
  using bench::Field;
  const auto t = bench::read_samples_csv(kFixtures + "/aid_platforms.csv");
  const std::vector<bench::Objective> three{{Field::Runtime}, {Field::Power}, {Field::Dram}};
  auto four = three;
  four.push_back({Field::Error});
  v.require(bench::pareto_front(t, three) == std::vector<std::size_t>{0}, "3-objective front");
  v.require(bench::pareto_front(t, four) == std::vector<std::size_t>{0, 1, 2},
            "4-objective front");
  Rng rng(12345);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = 1 + rng.below(100);
    std::vector<bench::PlatformSample> s(n);
    const bool coarse = trial % 2 == 0;
    const auto draw = [&] {
      return coarse ? static_cast<double>(1 + rng.below(8)) : rng.uniform(0.1, 10.0);
    };
    for (std::size_t i = 0; i < n; ++i)
      s[i] = {"p" + std::to_string(i), draw(), draw(), draw(), draw()};
    if (bench::pareto_front(s, four) != brute_front(s, four))
      ++mismatches;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " oracle mismatches");
  v.note("front {FPGA} / {FPGA,MGPU,GPU}; 1000 random sets agree with brute force");
}

void roofline(Verdict &v) {
  const auto specs = bench::roofline_specs_from_json(slurp(kFixtures + "/roofline.json"));
  const bench::RooflineSpec *fpga = nullptr, *gpu = nullptr;
  for (const auto &s : specs) {
    if (s.label == "FPGA")
      fpga = &s;
    if (s.label == "GPU")
      gpu = &s;
  }
  if (!fpga || !gpu)
    throw std::runtime_error("roofline fixture lacks FPGA or GPU");
  v.require(fpga->peak_gflops == 1.0 && gpu->peak_gflops == 10.0, "fixture peaks");
  for (const auto *s : {fpga, gpu}) {
    const double ridge = s->ridge_point();
    v.require(ridge == s->peak_gflops / s->bandwidth_gbs, s->label + " ridge");
    v.require(bench::roofline_attainable(*s, ridge) == s->peak_gflops, s->label + " at ridge");
    v.require(bench::roofline_attainable(*s, std::nextafter(ridge, 0.0)) < s->peak_gflops,
              s->label + " below ridge");
  }
  for (double oi : bench::log_space(fpga->ridge_point(), 1e4, 200))
    v.require(bench::roofline_attainable(*fpga, oi) == fpga->peak_gflops,
              "FPGA ceiling at oi=" + fmt(oi));
  for (double bw = 0.05; bw < 20.0; bw += 0.05) {
    bench::RooflineSpec g = *gpu;
    g.bandwidth_gbs = bw;
    const double a = bench::roofline_attainable(g, 0.5);
    v.require(a < g.peak_gflops && a == bw * 0.5, "GPU memory bound at bw=" + fmt(bw));
  }
  v.note("FPGA ridge " + fmt(fpga->ridge_point()) + ", GPU ridge " + fmt(gpu->ridge_point()));
}

void gradients(Verdict &v) {
  cli::GradcheckConfig c;
  c.hidden = 4;
  c.state = 2;
  c.input = 1;
  c.samples = 8;
  c.coordinates = 100;
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    c.seed = seed;
    const auto r = cli::run_gradcheck(c);
    v.require(r.pass, "seed " + std::to_string(seed));
    worst = std::max(worst, r.max_relative_error);
    checked = std::min(checked == 0 ? r.entries.size() : checked, r.entries.size());
  }
  v.require(checked >= 100, "only " + std::to_string(checked) + " coordinates");
  v.require(worst <= 1e-4, "max rel error " + fmt(worst));
  v.note("max rel error " + fmt(worst, 3) + " over 5 seeds, " + std::to_string(checked) +
         " coordinates each");
}

void flow_identity(Verdict &v) {
  Rng rng(77);
  int bad = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const FlowShape shape{1 + rng.below(12), 1 + rng.below(4), rng.below(3)};
    auto params = FlowParams::initialize(shape, rng.next_u64());
    for (double &p : params.values())
      p += rng.uniform(-2.0, 2.0);
    const auto big_n = static_cast<Eigen::Index>(2 + rng.below(20));
    Vector z0(static_cast<Eigen::Index>(shape.state));
    for (auto &x : z0)
      x = rng.uniform(-100.0, 100.0);
    Matrix u(big_n, static_cast<Eigen::Index>(shape.input));
    for (auto &x : u.reshaped())
      x = rng.uniform(-5.0, 5.0);
    Vector t(big_n);
    double clock = rng.uniform(-10.0, 10.0);
    for (Eigen::Index k = 0; k < big_n; ++k) {
      t(k) = clock;
      clock += rng.uniform(1e-3, 2.0);
    }
    const auto z = flow_forward(params, z0, u, t).z;
    for (Eigen::Index j = 0; j < z0.size(); ++j)
      if (std::memcmp(&z(0, j), &z0(j), sizeof(double)) != 0)
        ++bad;
  }
  v.require(bad == 0, std::to_string(bad) + " mismatching entries");
  v.note("Z_0 == z0 bitwise for 1000 draws");
}

void rk4_order(Verdict &v) {
  const Rhs decay = [](double, const StateVector &x) -> StateVector { return -x; };
  const double p = order_estimate(decay, Vector::Ones(1), 1.0, 0.1, 0);
  const auto ecg = std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  const auto w = ecg_fixture_waveform();
  Vector x0(3);
  x0 << 1.0, 0.0, 0.03;
  const Rhs rhs = bind_rhs(ecg, Eigen::Map<const Vector>(w.amplitude.data(), 5),
                           ecg_fixture_inputs());
  const double q = order_estimate(rhs, x0, 1.0, 0.01, 2);
  v.require(p >= 3.9 && p <= 4.1, "decay order " + fmt(p));
  v.require(q >= 3.9 && q <= 4.1, "ECG z order " + fmt(q));
  v.note("decay " + fmt(p) + ", ECG z " + fmt(q));
}

void limit_cycle(Verdict &v) {
  const auto ecg = std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  const auto w = ecg_fixture_waveform();
  Vector x0(3);
  x0 << 1.0, 0.0, 0.03;
  const auto traj = simulate(ecg, Eigen::Map<const Vector>(w.amplitude.data(), 5),
                             ecg_fixture_inputs(), x0, 10.0, 10001, {2});
  double worst = 0.0;
  for (Eigen::Index k = 0; k < traj.states.rows(); ++k)
    worst = std::max(worst, std::abs(std::hypot(traj.states(k, 0), traj.states(k, 1)) - 1.0));
  v.require(worst <= 1e-3, "max radius error " + fmt(worst));
  v.note("max |r - 1| = " + fmt(worst, 3));
}

void sparse_recovery(Verdict &v) {
  const auto model = decay_model();
  Vector truth(3);
  truth << 0.0, -2.0, 0.0;
  const auto traj = simulate(model, truth, InputSignal{}, Vector::Ones(1), 2.0, 50, {20});

  RecoveryConfig c;
  c.epochs = 6000;
  c.refit_epochs = 1500;
  c.learning_rate = 0.01;
  c.theta_learning_rate = 0.1;
  c.sparsity_weight = 1e-4;
  c.warmup_epochs = 1000;
  c.final_lr_fraction = 0.01;
  c.seed = 1;
  const auto r = recover(traj, model, c);
  const Vector th = model->dense_theta(r.theta);

  // Least-squares oracle on finite-difference derivatives of the samples.
  const auto n = traj.times.size();
  Matrix a(n - 2, 3);
  Vector b(n - 2);
  for (Eigen::Index k = 1; k + 1 < n; ++k) {
    const auto cw = central_difference_weights(traj.times, k);
    b(k - 1) = cw[0] * traj.states(k - 1, 0) + cw[1] * traj.states(k, 0) +
               cw[2] * traj.states(k + 1, 0);
    const double x = traj.states(k, 0);
    a.row(k - 1) << 1.0, x, x * x;
  }
  const Vector ls = a.colPivHouseholderQr().solve(b);

  v.require(std::abs(th(1) + 2.0) <= 0.1, "theta_x " + fmt(th(1)));
  v.require(th(0) == 0.0 && th(2) == 0.0, "inactive terms not exactly zero");
  v.require(std::abs(th(1) - ls(1)) <= 0.05 * std::abs(ls(1)),
            "oracle mismatch " + fmt(th(1)) + " vs " + fmt(ls(1)));
  v.note("theta = [" + fmt(th(0)) + ", " + fmt(th(1), 6) + ", " + fmt(th(2)) +
         "], LS oracle x-coefficient " + fmt(ls(1), 6));
}

void hidden_state(Verdict &v) {
  const auto model = std::make_shared<BergmanModel>();
  const auto truth_arr = bergman_fixture_coefficients().as_array();
  const Vector truth = Eigen::Map<const Vector>(truth_arr.data(), 6);
  const auto input = bergman_fixture_inputs(995.0);
  const auto x0 = bergman_fixture_initial_state();
  const auto clean = simulate(model, truth, input, x0, 995.0, 200, {10});
  const auto masked = mask_hidden(clean, {false, false, true});
  NoiseSpec noise;
  noise.snr_db = 30.0;
  noise.seed = 7;
  const auto noisy = corrupt(masked, noise);

  RecoveryConfig c;
  c.epochs = 4000;
  c.refit_epochs = 1000;
  c.learning_rate = 0.01;
  c.theta_learning_rate = 0.01;
  c.sparsity_weight = 1e-4;
  c.warmup_epochs = 1000;
  c.final_lr_fraction = 0.01;
  c.prune_threshold = 0.0;
  c.epsilon = 0.5;
  c.initial_state = {x0(0), x0(1), x0(2)};
  c.seed = 1;
  const auto r = recover(noisy, model, c);

  const Vector g_clean = clean.states.col(2);
  const Vector g_fit = r.reconstruction.col(2);
  const double rms = std::sqrt(g_clean.squaredNorm() / static_cast<double>(g_clean.size()));
  const double err_clean =
    std::sqrt((g_fit - g_clean).squaredNorm() / static_cast<double>(g_clean.size()));
  const double err_noisy = r.reconstruction_error;
  v.require(err_clean <= 0.05 * rms, "RMSE vs clean " + fmt(err_clean / rms * 100) + "%");
  v.require(err_noisy <= 0.05 * rms, "RMSE vs observed " + fmt(err_noisy / rms * 100) + "%");

  IdentifiabilityOptions opts;
  opts.horizon = 995.0;
  opts.samples = 200;
  opts.delta = 1e-3;
  opts.tolerance = 1e-6;
  opts.measured = {false, false, true};
  const auto ident = check_identifiability(model, truth, input, x0, opts);
  const Vector got = model->dense_theta(r.theta);
  std::string signs;
  std::size_t flagged = 0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    if (!ident.identifiable[static_cast<std::size_t>(i)])
      continue;
    ++flagged;
    const bool same = std::signbit(got(i)) == std::signbit(truth(i)) && got(i) != 0.0;
    v.require(same, "sign of " + r.coefficient_names[static_cast<std::size_t>(i)]);
    signs += (signs.empty() ? "" : " ") + r.coefficient_names[static_cast<std::size_t>(i)] + "=" +
             fmt(got(i), 3);
  }
  v.note("RMSE " + fmt(err_clean / rms * 100, 3) + "% of RMS vs clean, " +
         fmt(err_noisy / rms * 100, 3) + "% vs observed; " + std::to_string(flagged) +
         "/6 identifiable, signs match: " + signs);
}

void hls_model(Verdict &v) {
  using namespace hls;
  const auto doc_free = load_cost_document(kFixtures + "/hls/dep_free.json");
  const auto doc2 = load_cost_document(kFixtures + "/hls/latency2.json");
  const auto doc3 = load_cost_document(kFixtures + "/hls/latency3.json");
  v.require(min_feasible_ii(doc_free.loop) == 1, "dep-free II");
  v.require(min_feasible_ii(doc2.loop) == 2 && !hazard_check(doc2.loop, 1).empty(),
            "latency-2 II");
  v.require(min_feasible_ii(doc3.loop) == 3 && !hazard_check(doc3.loop, 2).empty(),
            "latency-3 II");
  LoopSpec l{"", 200, 10, {}, {}};
  v.require(loop_latency(l, 1) == 209, "loop_latency(200, 10, 1)");

  Rng rng(31337);
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    LoopSpec loop;
    loop.trip_count = 1 + rng.below(48);
    loop.depth = 1 + rng.below(16);
    for (std::uint64_t k = rng.below(4); k > 0; --k)
      loop.deps.push_back({rng.below(2) ? DepKind::RAW : DepKind::WAR, 1 + rng.below(9),
                           1 + rng.below(5)});
    for (std::uint64_t k = rng.below(4); k > 0; --k)
      loop.array_accesses.push_back({"m" + std::to_string(rng.below(3)), rng.below(7),
                                     rng.below(3)});
    PartitionSpec part;
    part.default_ports = 1 + rng.below(2);
    if (rng.below(2))
      part.arrays["m0"] = {Partitioning::Complete, 2};
    if (rng.below(2))
      part.arrays["m1"] = {Partitioning::None, 1 + rng.below(3)};
    std::uint64_t oracle_min = 1;
    while (!schedule_feasible(loop, oracle_min, part))
      ++oracle_min;
    bool ok = min_feasible_ii(loop, part) == oracle_min;
    for (std::uint64_t ii = 1; ii <= oracle_min + 2; ++ii)
      ok = ok && hazard_check(loop, ii, part).feasible() == schedule_feasible(loop, ii, part);
    if (!ok)
      ++mismatches;
  }
  v.require(mismatches == 0, std::to_string(mismatches) + " oracle mismatches");
  v.note("II 1/2/3 as expected; latency 209; 1000 random specs agree");
}

void determinism(Verdict &v) {
  const fs::path tmp = fs::temp_directory_path() / "dtwin_acceptance_determinism";
  fs::remove_all(tmp);
  const std::string cfg = kFixtures + "/configs/recover_decay.json";
  std::ostringstream sink;
  for (const char *run : {"a", "b"}) {
    cli::Options o{"recover", cfg, (tmp / run).string(), std::nullopt, false};
    v.require(cli::run(o, sink, sink) == cli::kExitOk, std::string("run ") + run);
  }
  const auto a = slurp(tmp / "a" / "theta.json");
  const auto b = slurp(tmp / "b" / "theta.json");
  v.require(!a.empty() && a == b, "theta.json differs");
  v.note("theta.json byte-identical (" + std::to_string(a.size()) + " bytes)");
  fs::remove_all(tmp);
}

} // namespace

int main() {
  criterion(1, "ratio reproduction, AID platform table", 1.0, aid_ratios);
  criterion(2, "ratio reproduction, cardiac platform table", 1.0, ecg_ratios);
  criterion(3, "Pareto correctness", 5.0, pareto);
  criterion(4, "roofline shape", 1.0, roofline);
  criterion(5, "gradient correctness", 30.0, gradients);
  criterion(6, "flow identity", 5.0, flow_identity);
  criterion(7, "RK4 order", 10.0, rk4_order);
  criterion(8, "ECGSYN limit cycle", 5.0, limit_cycle);
  criterion(9, "sparse recovery oracle", 60.0, sparse_recovery);
  criterion(10, "hidden-state recovery", 600.0, hidden_state);
  criterion(11, "HLS cost model", 10.0, hls_model);
  criterion(12, "determinism", 0.0, determinism);
  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
