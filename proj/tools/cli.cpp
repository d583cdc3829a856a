// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "config.hpp"
#include "dtwin/bench.hpp"
#include "dtwin/hlscost.hpp"
#include "dtwin/recovery.hpp"
#include "dtwin/signal.hpp"
#include "dtwin/textio.hpp"
#include "gradcheck.hpp"

namespace dtwin::cli {

namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

fs::path config_dir(const Options &o) {
  return o.config_path.empty() ? fs::current_path()
                               : fs::absolute(o.config_path).parent_path();
}

std::string resolve(const Options &o, const std::string &path) {
  const fs::path p(path);
  return p.is_absolute() ? path : (config_dir(o) / p).lexically_normal().string();
}

fs::path require_out(const Options &o) {
  if (o.out_dir.empty())
    throw ConfigError("--out <dir> is required for '" + o.command + "'");
  fs::create_directories(o.out_dir);
  return fs::path(o.out_dir);
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error("cannot write '" + path.string() + "'");
  out << text;
  if (!text.empty() && text.back() != '\n')
    out << '\n';
}

json load_config(const Options &o) {
  if (o.config_path.empty())
    throw ConfigError("--config <path> is required for '" + o.command + "'");
  return parse_json_file(o.config_path);
}

void check_version(const Section &root) {
  const auto v = root.count("format_version", kFormatVersion);
  if (v != static_cast<std::uint64_t>(kFormatVersion))
    throw ConfigError("unsupported format_version " + std::to_string(v));
}

std::uint64_t resolve_seed(const Options &o, const Section &root) {
  const auto from_file = root.count("seed", 0);
  return o.seed.value_or(from_file);
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

struct ModelSpec {
  std::string kind = "bergman";
  // library
  std::vector<std::string> states;
  std::vector<std::string> inputs;
  unsigned order = 2;
  std::vector<double> input_values;
  // ecgsyn
  double rr = 1.0;
  double baseline_amplitude = 0.0;
  double resp_hz = 0.25;
};

ModelSpec parse_model(const Section &s) {
  ModelSpec m;
  m.kind = s.text("kind");
  if (m.kind == "bergman") {
  } else if (m.kind == "ecgsyn") {
    m.rr = s.number("rr", m.rr);
    m.baseline_amplitude = s.number("baseline_amplitude", m.baseline_amplitude);
    m.resp_hz = s.number("resp_hz", m.resp_hz);
  } else if (m.kind == "library") {
    m.states = s.texts("states");
    if (m.states.empty())
      throw ConfigError("'" + s.path() + ".states' must name at least one state");
    if (s.has("inputs"))
      m.inputs = s.texts("inputs");
    m.order = static_cast<unsigned>(s.count("order", 2));
    if (m.order < 1)
      throw ConfigError("'" + s.path() + ".order' must be at least 1");
    if (s.has("input_values"))
      m.input_values = s.numbers("input_values");
    else
      m.input_values.assign(m.inputs.size(), 0.0);
    if (m.input_values.size() != m.inputs.size())
      throw ConfigError("'" + s.path() + ".input_values' needs one value per input");
  } else {
    throw ConfigError("'" + s.path() + ".kind' must be bergman, ecgsyn or library");
  }
  s.finish();
  return m;
}

json model_json(const ModelSpec &m) {
  json j = {{"kind", m.kind}};
  if (m.kind == "ecgsyn") {
    j["rr"] = m.rr;
    j["baseline_amplitude"] = m.baseline_amplitude;
    j["resp_hz"] = m.resp_hz;
  } else if (m.kind == "library") {
    j["states"] = m.states;
    j["inputs"] = m.inputs;
    j["order"] = m.order;
    j["input_values"] = m.input_values;
  }
  return j;
}

std::shared_ptr<const Model> make_model(const ModelSpec &m) {
  if (m.kind == "bergman")
    return std::make_shared<BergmanModel>();
  if (m.kind == "ecgsyn")
    return std::make_shared<EcgsynModel>(ecg_fixture_waveform());
  return std::make_shared<LibraryModel>(build_library(m.states.size(), m.inputs.size(), m.order),
                                        m.states, m.inputs);
}

InputSignal make_inputs(const ModelSpec &m, double horizon) {
  if (m.kind == "bergman")
    return bergman_fixture_inputs(horizon);
  InputSignal s;
  if (m.kind == "ecgsyn") {
    s.add("rr", InputChannel::constant(m.rr))
      .add("A_b", InputChannel::constant(m.baseline_amplitude))
      .add("f_resp", InputChannel::constant(m.resp_hz));
    return s;
  }
  for (std::size_t j = 0; j < m.inputs.size(); ++j)
    s.add(m.inputs[j], InputChannel::constant(m.input_values[j]));
  return s;
}

std::vector<double> default_theta(const ModelSpec &m, const Model &model) {
  if (m.kind == "bergman") {
    const auto a = bergman_fixture_coefficients().as_array();
    return {a.begin(), a.end()};
  }
  if (m.kind == "ecgsyn") {
    const auto w = ecg_fixture_waveform();
    return {w.amplitude.begin(), w.amplitude.end()};
  }
  throw ConfigError("library models need an explicit 'theta' of length " +
                    std::to_string(model.coefficient_count()));
}

std::vector<double> default_x0(const ModelSpec &m, const Model &model) {
  if (m.kind == "bergman") {
    const auto x = bergman_fixture_initial_state();
    return {x.data(), x.data() + x.size()};
  }
  if (m.kind == "ecgsyn")
    return {1.0, 0.0, 0.03};
  return std::vector<double>(model.state_dim(), 1.0);
}

double default_horizon(const ModelSpec &m) {
  if (m.kind == "bergman")
    return 995.0;
  if (m.kind == "ecgsyn")
    return 10.0;
  return 1.0;
}

Vector to_vector(const std::vector<double> &v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

// ---------------------------------------------------------------------------
// Recovery config
// ---------------------------------------------------------------------------

RecoveryConfig parse_recovery(const Section &s) {
  RecoveryConfig c;
  c.epochs = s.count("epochs", c.epochs);
  c.refit_epochs = s.count("refit_epochs", c.refit_epochs);
  c.learning_rate = s.number("learning_rate", c.learning_rate);
  c.theta_learning_rate = s.optional_number("theta_learning_rate");
  c.final_lr_fraction = s.number("final_lr_fraction", c.final_lr_fraction);
  c.physics_weight = s.number("physics_weight", c.physics_weight);
  c.warmup_epochs = s.count("warmup_epochs", c.warmup_epochs);
  c.sparsity_weight = s.number("sparsity_weight", c.sparsity_weight);
  c.prune_threshold = s.number("prune_threshold", c.prune_threshold);
  c.epsilon = s.number("epsilon", c.epsilon);
  c.substeps = s.count("substeps", c.substeps);
  c.hidden_dim = s.count("hidden_dim", c.hidden_dim);
  const auto rule = s.text("rule", "adam");
  if (rule == "adam")
    c.rule = StepRule::Adam;
  else if (rule == "gd")
    c.rule = StepRule::GradientDescent;
  else
    throw ConfigError("'" + s.path() + ".rule' must be adam or gd");
  if (s.has("initial_state"))
    c.initial_state = s.numbers("initial_state");
  if (s.has("hidden_scale"))
    c.hidden_scale = s.numbers("hidden_scale");
  if (s.has("initial_theta"))
    c.initial_theta = s.numbers("initial_theta");
  c.progress_every = s.count("progress_every", c.progress_every);
  s.finish();
  try {
    c.validate();
  } catch (const ArgumentError &e) {
    throw ConfigError("'" + s.path() + "': " + e.what());
  }
  return c;
}

json recovery_json(const RecoveryConfig &c) {
  json j = {{"epochs", c.epochs},
            {"refit_epochs", c.refit_epochs},
            {"learning_rate", c.learning_rate},
            {"final_lr_fraction", c.final_lr_fraction},
            {"physics_weight", c.physics_weight},
            {"warmup_epochs", c.warmup_epochs},
            {"sparsity_weight", c.sparsity_weight},
            {"prune_threshold", c.prune_threshold},
            {"epsilon", c.epsilon},
            {"substeps", c.substeps},
            {"hidden_dim", c.hidden_dim},
            {"rule", c.rule == StepRule::Adam ? "adam" : "gd"},
            {"initial_state", c.initial_state},
            {"hidden_scale", c.hidden_scale},
            {"initial_theta", c.initial_theta},
            {"progress_every", c.progress_every}};
  if (c.theta_learning_rate)
    j["theta_learning_rate"] = *c.theta_learning_rate;
  return j;
}

// ---------------------------------------------------------------------------
// Report serialisation
// ---------------------------------------------------------------------------

json loss_json(const LossComponents &l) {
  return {{"total", l.total}, {"recon", l.recon}, {"physics", l.physics}, {"sparsity", l.sparsity}};
}

std::string theta_document(const RecoveryReport &r, const Model &model) {
  const Vector dense = model.dense_theta(r.theta);
  json j = {{"format_version", kFormatVersion},
            {"model", model.name()},
            {"names", r.coefficient_names},
            {"values", std::vector<double>(dense.data(), dense.data() + dense.size())}};
  return j.dump(2);
}

std::string report_document(const RecoveryReport &r, const Model &model, double epsilon) {
  const Vector dense = model.dense_theta(r.theta);
  json coefficients = json::array();
  for (std::size_t k = 0; k < r.coefficient_names.size(); ++k)
    coefficients.push_back({{"name", r.coefficient_names[k]},
                            {"value", dense(static_cast<Eigen::Index>(k))},
                            {"pruned", k < r.pruned.size() && r.pruned[k]}});
  json j = {{"format_version", kFormatVersion},
            {"model", model.name()},
            {"converged", r.converged},
            {"diverged", false},
            {"reconstruction_error", r.reconstruction_error},
            {"epsilon", epsilon},
            {"epochs_run", r.epochs_run},
            {"wall_time_seconds", r.wall_time_seconds},
            {"peak_memory_bytes", r.peak_memory_bytes},
            {"coefficients", coefficients},
            {"final_loss", r.loss_history.empty() ? json(nullptr) : loss_json(r.loss_history.back())}};
  return j.dump(2);
}

std::string loss_csv(const RecoveryReport &r) {
  std::ostringstream out;
  out << "epoch,total,recon,physics,sparsity\n";
  for (std::size_t e = 0; e < r.loss_history.size(); ++e) {
    const auto &l = r.loss_history[e];
    out << e << ',' << format_double(l.total) << ',' << format_double(l.recon) << ','
        << format_double(l.physics) << ',' << format_double(l.sparsity) << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Recover core (shared with bench)
// ---------------------------------------------------------------------------

struct RecoverPlan {
  ModelSpec model_spec;
  std::shared_ptr<const Model> model;
  RecoveryConfig config;
  std::vector<Trajectory> trajectories;
  std::size_t workers = 1;
  json resolved;
};

RecoverPlan plan_recover(const Options &o, const Section &root) {
  RecoverPlan plan;
  check_version(root);
  plan.model_spec = parse_model(root.child("model"));
  plan.model = make_model(plan.model_spec);
  plan.config = parse_recovery(root.has("recovery") ? root.child("recovery")
                                                    : Section(json::object(), "$.recovery"));
  plan.config.seed = resolve_seed(o, root);
  plan.workers = root.count("workers", 1);
  if (plan.workers < 1)
    throw ConfigError("'$.workers' must be at least 1");

  json sources = json::object();
  int given = 0;
  if (root.has("trajectory")) {
    ++given;
    const auto path = root.text("trajectory");
    sources["trajectory"] = resolve(o, path);
    plan.trajectories.push_back(read_trajectory_csv(resolve(o, path)));
  }
  if (root.has("trajectories")) {
    ++given;
    std::vector<std::string> paths;
    for (const auto &p : root.texts("trajectories"))
      paths.push_back(resolve(o, p));
    for (const auto &p : paths)
      plan.trajectories.push_back(read_trajectory_csv(p));
    sources["trajectories"] = paths;
  }
  if (root.has("ohio")) {
    ++given;
    const auto path = root.text("ohio");
    sources["ohio"] = resolve(o, path);
    plan.trajectories = load_ohio_format(resolve(o, path));
  }
  if (given != 1)
    throw ConfigError("exactly one of '$.trajectory', '$.trajectories', '$.ohio' is required");
  if (plan.trajectories.empty())
    throw ConfigError("no trajectories to recover from");

  plan.resolved = {{"format_version", kFormatVersion},
                   {"model", model_json(plan.model_spec)},
                   {"recovery", recovery_json(plan.config)},
                   {"workers", plan.workers},
                   {"seed", plan.config.seed}};
  for (auto &[k, v] : sources.items())
    plan.resolved[k] = v;
  return plan;
}

std::vector<RecoveryReport> execute_recover(const RecoverPlan &plan, bool verbose,
                                            std::ostream &err) {
  Channel<ProgressEvent> progress;
  std::thread printer;
  if (verbose) {
    printer = std::thread([&] {
      while (auto ev = progress.receive()) {
        err << "run " << ev->run << (ev->finished ? " done" : " epoch ") << ev->epoch
            << " loss " << ev->loss.total << " (recon " << ev->loss.recon << ", physics "
            << ev->loss.physics << ")\n";
      }
    });
  }
  auto *channel = verbose ? &progress : nullptr;
  std::vector<RecoveryReport> reports;
  try {
    if (plan.trajectories.size() == 1)
      reports.push_back(recover(plan.trajectories.front(), plan.model, plan.config, channel));
    else
      reports = recover_many(plan.trajectories, plan.model, plan.config, plan.workers, channel);
  } catch (...) {
    progress.close();
    if (printer.joinable())
      printer.join();
    throw;
  }
  progress.close();
  if (printer.joinable())
    printer.join();
  return reports;
}

int write_reports(const fs::path &out, const std::vector<RecoveryReport> &reports,
                  const RecoverPlan &plan, std::ostream &os) {
  bool all = true;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const std::string suffix = reports.size() == 1 ? "" : "_" + std::to_string(i);
    const auto &r = reports[i];
    write_text(out / ("report" + suffix + ".json"),
               report_document(r, *plan.model, plan.config.epsilon));
    write_text(out / ("theta" + suffix + ".json"), theta_document(r, *plan.model));
    write_text(out / ("loss_history" + suffix + ".csv"), loss_csv(r));
    os << "run " << i << ": rmse " << r.reconstruction_error
       << (r.converged ? " converged" : " not converged") << '\n';
    all = all && r.converged;
  }
  return all ? kExitOk : kExitNotConverged;
}

// ---------------------------------------------------------------------------
// Bench helpers
// ---------------------------------------------------------------------------

std::vector<bench::Objective> parse_objectives(const Section &root, const std::string &key,
                                               std::vector<bench::Objective> fallback) {
  if (!root.has(key))
    return fallback;
  std::vector<bench::Objective> out;
  for (const auto &s : root.children(key)) {
    bench::Objective o;
    try {
      o.field = bench::field_from_string(s.text("field"));
    } catch (const ArgumentError &e) {
      throw ConfigError("'" + s.path() + ".field': " + e.what());
    }
    const auto dir = s.text("direction", "minimize");
    if (dir == "minimize")
      o.direction = bench::Direction::Minimize;
    else if (dir == "maximize")
      o.direction = bench::Direction::Maximize;
    else
      throw ConfigError("'" + s.path() + ".direction' must be minimize or maximize");
    s.finish();
    out.push_back(o);
  }
  if (out.empty())
    throw ConfigError("'$." + key + "' must list at least one objective");
  return out;
}

json objectives_json(const std::vector<bench::Objective> &objectives) {
  json arr = json::array();
  for (const auto &o : objectives)
    arr.push_back({{"field", bench::to_string(o.field)},
                   {"direction", o.direction == bench::Direction::Minimize ? "minimize"
                                                                           : "maximize"}});
  return arr;
}

struct RooflinePlan {
  std::vector<bench::RooflineSpec> platforms;
  double oi_min = 0.01;
  double oi_max = 100.0;
  std::size_t points = 41;
  json resolved;
};

RooflinePlan parse_roofline(const Options &o, const Section &s) {
  RooflinePlan plan;
  const auto path = s.text("platforms");
  std::ifstream in(resolve(o, path));
  if (!in)
    throw ConfigError("cannot open roofline platforms '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  plan.platforms = bench::roofline_specs_from_json(buffer.str());
  plan.oi_min = s.number("oi_min", plan.oi_min);
  plan.oi_max = s.number("oi_max", plan.oi_max);
  plan.points = s.count("points", plan.points);
  s.finish();
  if (!(plan.oi_min > 0.0) || !(plan.oi_max > plan.oi_min) || plan.points < 2)
    throw ConfigError("'" + s.path() + "' needs 0 < oi_min < oi_max and points >= 2");
  plan.resolved = {{"platforms", resolve(o, path)},
                   {"oi_min", plan.oi_min},
                   {"oi_max", plan.oi_max},
                   {"points", plan.points}};
  return plan;
}

void write_roofline(const fs::path &out, const RooflinePlan &plan) {
  std::ofstream csv(out / "roofline.csv");
  bench::write_roofline_csv(csv, plan.platforms,
                            bench::log_space(plan.oi_min, plan.oi_max, plan.points));
}

} // namespace

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_simulate(const Options &o, std::ostream &out, std::ostream &) {
  const json doc = load_config(o);
  const Section root(doc, "$");
  check_version(root);
  const auto spec = parse_model(root.child("model"));
  const auto model = make_model(spec);
  const auto seed = resolve_seed(o, root);
  const auto theta = root.has("theta") ? root.numbers("theta") : default_theta(spec, *model);
  const auto x0 = root.has("x0") ? root.numbers("x0") : default_x0(spec, *model);
  const double horizon = root.number("horizon", default_horizon(spec));
  const auto samples = root.count("samples", 200);
  const auto substeps = root.count("substeps", 10);
  if (samples < 2)
    throw ConfigError("'$.samples' must be at least 2");
  if (!(horizon > 0.0))
    throw ConfigError("'$.horizon' must be positive");
  if (substeps < 1)
    throw ConfigError("'$.substeps' must be at least 1");
  if (theta.size() != model->coefficient_count())
    throw ConfigError("'$.theta' needs " + std::to_string(model->coefficient_count()) +
                      " values for model " + model->name());
  if (x0.size() != model->state_dim())
    throw ConfigError("'$.x0' needs " + std::to_string(model->state_dim()) + " values");
  std::vector<bool> observable(model->state_dim(), true);
  if (root.has("observable"))
    observable = root.flags("observable");
  std::optional<NoiseSpec> noise;
  json noise_json = nullptr;
  if (root.has("noise")) {
    const auto s = root.child("noise");
    NoiseSpec n;
    n.snr_db = s.optional_number("snr_db");
    if (s.has("sigma"))
      n.sigma = s.numbers("sigma");
    n.exact_power = s.flag("exact_power", true);
    s.finish();
    n.seed = seed;
    try {
      n.validate(model->state_dim());
    } catch (const Error &e) {
      throw ConfigError(std::string("'$.noise': ") + e.what());
    }
    noise = n;
    noise_json = {{"exact_power", n.exact_power}};
    if (n.snr_db)
      noise_json["snr_db"] = *n.snr_db;
    if (!n.sigma.empty())
      noise_json["sigma"] = n.sigma;
  }
  root.finish();

  const auto dir = require_out(o);
  const InputSignal input = make_inputs(spec, horizon);
  Trajectory traj = simulate(model, to_vector(theta), input, to_vector(x0), horizon, samples,
                             SimulateOptions{substeps});
  try {
    traj = mask_hidden(traj, observable);
  } catch (const Error &e) {
    throw ConfigError(std::string("'$.observable': ") + e.what());
  }
  if (noise)
    traj = corrupt(traj, *noise);

  const json resolved = {{"format_version", kFormatVersion},
                         {"model", model_json(spec)},
                         {"seed", seed},
                         {"theta", theta},
                         {"x0", x0},
                         {"horizon", horizon},
                         {"samples", samples},
                         {"substeps", substeps},
                         {"observable", observable},
                         {"noise", noise_json}};
  write_text(dir / "config.json", resolved.dump(2));
  write_trajectory_csv((dir / "trajectory.csv").string(), traj);
  const json meta = {{"format_version", kFormatVersion},
                     {"command", "simulate"},
                     {"model", model->name()},
                     {"state_names", model->state_names()},
                     {"input_names", model->input_names()},
                     {"coefficient_names", model->coefficient_names()},
                     {"theta", theta},
                     {"time_unit", to_string(model->time_unit())},
                     {"samples", samples},
                     {"horizon", horizon},
                     {"seed", seed}};
  write_text(dir / "metadata.json", meta.dump(2));
  out << "wrote " << samples << " samples to " << (dir / "trajectory.csv").string() << '\n';
  return kExitOk;
}

int cmd_recover(const Options &o, std::ostream &out, std::ostream &err) {
  const json doc = load_config(o);
  const Section root(doc, "$");
  const auto plan = plan_recover(o, root);
  root.finish();
  const auto dir = require_out(o);
  write_text(dir / "config.json", plan.resolved.dump(2));
  try {
    const auto reports = execute_recover(plan, o.verbose, err);
    return write_reports(dir, reports, plan, out);
  } catch (const TrainingDivergedError &e) {
    const json partial = {{"format_version", kFormatVersion},
                          {"model", plan.model->name()},
                          {"converged", false},
                          {"diverged", true},
                          {"epoch", e.epoch()},
                          {"last_finite_loss", std::isfinite(e.last_finite_loss())
                                                 ? json(e.last_finite_loss())
                                                 : json(nullptr)},
                          {"message", e.what()}};
    write_text(dir / "report.json", partial.dump(2));
    throw;
  }
}

int cmd_bench(const Options &o, std::ostream &out, std::ostream &err) {
  const json doc = load_config(o);
  const Section root(doc, "$");
  check_version(root);
  const auto label = root.text("label", "desk");
  const auto recover_section = root.child("recover");
  const auto plan = plan_recover(o, recover_section);
  recover_section.finish();
  const auto power = root.optional_number("avg_power_w");
  const auto results_path = root.text("results_csv", "results.csv");

  std::vector<bench::PlatformSample> reference;
  std::string reference_path, baseline;
  if (root.has("reference")) {
    reference_path = resolve(o, root.text("reference"));
    const auto &resolved_path = reference_path;
    if (!fs::exists(resolved_path))
      throw ArgumentError("reference table '" + reference_path + "' does not exist");
    reference = bench::read_samples_csv(resolved_path);
    baseline = root.text("baseline", reference.empty() ? label : reference.back().label);
  }
  const auto objectives =
    parse_objectives(root, "objectives",
                     {{bench::Field::Runtime}, {bench::Field::Dram}, {bench::Field::Error}});
  std::optional<RooflinePlan> roofline;
  if (root.has("roofline"))
    roofline = parse_roofline(o, root.child("roofline"));
  root.finish();

  const auto dir = require_out(o);
  json resolved = {{"format_version", kFormatVersion},
                   {"label", label},
                   {"recover", plan.resolved},
                   {"avg_power_w", power ? json(*power) : json(nullptr)},
                   {"results_csv", results_path},
                   {"objectives", objectives_json(objectives)}};
  if (!reference_path.empty()) {
    resolved["reference"] = reference_path;
    resolved["baseline"] = baseline;
  }
  if (roofline)
    resolved["roofline"] = roofline->resolved;
  write_text(dir / "config.json", resolved.dump(2));

  std::vector<RecoveryReport> reports;
  const auto m = bench::measure_recovery([&] { reports = execute_recover(plan, o.verbose, err); });
  const int status = write_reports(dir, reports, plan, out);

  bench::PlatformSample desk;
  desk.label = label;
  desk.runtime_s = m.runtime_s;
  desk.avg_power_w = power;
  desk.dram_mb = static_cast<double>(m.peak_memory_bytes) / 1e6;
  double error = 0.0;
  for (const auto &r : reports)
    error += r.reconstruction_error;
  desk.error = error / static_cast<double>(reports.size());
  const auto &first = plan.trajectories.front();
  const auto work = bench::estimate_epoch_work(plan.config.hidden_dim, first.state_dim(),
                                               first.input_dim(), first.samples());
  const double epochs = static_cast<double>(plan.config.epochs + plan.config.refit_epochs) *
                        static_cast<double>(plan.trajectories.size());
  desk.flops = work.flops * epochs;
  desk.bytes_moved = work.bytes * epochs;

  const fs::path results = fs::path(results_path).is_absolute() ? fs::path(results_path)
                                                                 : dir / results_path;
  std::vector<bench::PlatformSample> rows;
  if (fs::exists(results))
    rows = bench::read_samples_csv(results.string());
  rows.push_back(desk);
  {
    std::ofstream csv(results);
    bench::write_samples_csv(csv, rows);
  }

  std::vector<bench::PlatformSample> table = reference;
  table.push_back(desk);
  if (!reference.empty()) {
    write_text(dir / "ratios.json",
               bench::ratio_report_to_json(bench::ratio_report(table, baseline), baseline));
    write_text(dir / "pareto.json", bench::pareto_to_json(table, objectives));
  }
  if (roofline)
    write_roofline(dir, *roofline);
  out << label << ": runtime " << m.runtime_s << " s, peak rss " << desk.dram_mb << " MB\n";
  return status;
}

int cmd_roofline(const Options &o, std::ostream &out, std::ostream &) {
  const json doc = load_config(o);
  const Section root(doc, "$");
  check_version(root);
  const auto plan = parse_roofline(o, root);
  const auto dir = require_out(o);
  json resolved = plan.resolved;
  resolved["format_version"] = kFormatVersion;
  write_text(dir / "config.json", resolved.dump(2));
  write_roofline(dir, plan);
  for (const auto &p : plan.platforms)
    out << p.label << ": ridge at oi = " << p.ridge_point() << '\n';
  return kExitOk;
}

int cmd_pareto(const Options &o, std::ostream &out, std::ostream &) {
  const json doc = load_config(o);
  const Section root(doc, "$");
  check_version(root);
  const auto path = root.text("samples");
  const auto objectives = parse_objectives(root, "objectives", {});
  root.finish();
  const auto resolved_path = resolve(o, path);
  if (!fs::exists(resolved_path))
    throw ArgumentError("samples table '" + path + "' does not exist");
  const auto samples = bench::read_samples_csv(resolved_path);
  const auto dir = require_out(o);
  const json resolved = {{"format_version", kFormatVersion},
                         {"samples", resolved_path},
                         {"objectives", objectives_json(objectives)}};
  write_text(dir / "config.json", resolved.dump(2));
  write_text(dir / "pareto.json", bench::pareto_to_json(samples, objectives));
  out << "front:";
  for (auto i : bench::pareto_front(samples, objectives))
    out << ' ' << samples[i].label;
  out << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options &o, std::ostream &out, std::ostream &) {
  const json doc = o.config_path.empty() ? json::object() : parse_json_file(o.config_path);
  const Section root(doc, "$");
  check_version(root);
  GradcheckConfig c;
  c.hidden = root.count("hidden", c.hidden);
  c.state = root.count("state", c.state);
  c.input = root.count("input", c.input);
  c.samples = root.count("samples", c.samples);
  c.coordinates = root.count("coordinates", c.coordinates);
  c.tolerance = root.number("tolerance", c.tolerance);
  c.step = root.number("step", c.step);
  c.corrupt_gradient = root.flag("corrupt_gradient", false);
  std::vector<std::uint64_t> seeds;
  if (o.seed)
    seeds = {*o.seed};
  if (root.has("seeds")) {
    for (double s : root.numbers("seeds")) {
      if (s < 0 || s != std::floor(s))
        throw ConfigError("'$.seeds' must hold non-negative integers");
      if (!o.seed)
        seeds.push_back(static_cast<std::uint64_t>(s));
    }
  }
  if (seeds.empty())
    seeds = {0, 1, 2, 3, 4};
  root.finish();
  try {
    c.validate();
  } catch (const ArgumentError &e) {
    throw ConfigError(e.what());
  }

  bool pass = true;
  double worst = 0.0;
  json runs = json::array();
  for (auto seed : seeds) {
    c.seed = seed;
    const auto r = run_gradcheck(c);
    pass = pass && r.pass;
    worst = std::max(worst, r.max_relative_error);
    runs.push_back({{"seed", seed},
                    {"pass", r.pass},
                    {"max_relative_error", r.max_relative_error},
                    {"checked", r.entries.size()}});
  }
  const json report = {{"format_version", kFormatVersion},
                       {"pass", pass},
                       {"max_relative_error", worst},
                       {"tolerance", c.tolerance},
                       {"dims",
                        {{"hidden", c.hidden},
                         {"state", c.state},
                         {"input", c.input},
                         {"samples", c.samples}}},
                       {"runs", runs}};
  if (!o.out_dir.empty()) {
    const auto dir = require_out(o);
    json resolved = {{"format_version", kFormatVersion}, {"hidden", c.hidden},
                     {"state", c.state},                 {"input", c.input},
                     {"samples", c.samples},             {"coordinates", c.coordinates},
                     {"tolerance", c.tolerance},         {"step", c.step},
                     {"seeds", seeds},                   {"corrupt_gradient", c.corrupt_gradient}};
    write_text(dir / "config.json", resolved.dump(2));
    write_text(dir / "gradcheck.json", report.dump(2));
  }
  out << report.dump(2) << '\n';
  return pass ? kExitOk : kExitNotConverged;
}

int cmd_hlscost(const Options &o, std::ostream &out, std::ostream &) {
  if (o.config_path.empty())
    throw ConfigError("--config <spec.json> is required for 'hlscost'");
  const auto doc = hls::load_cost_document(o.config_path);
  const auto rows = hls::feasibility_table(doc.loop, doc.partition, doc.clock_mhz);
  const auto min_ii = hls::min_feasible_ii(doc.loop, doc.partition);

  out << "loop " << (doc.loop.name.empty() ? "(unnamed)" : doc.loop.name) << ": trip "
      << doc.loop.trip_count << ", depth " << doc.loop.depth << ", min II " << min_ii << '\n';
  out << "II  feasible  latency_cycles  iter_per_s  violations\n";
  json table = json::array();
  for (const auto &r : rows) {
    std::ostringstream why;
    for (const auto &d : r.hazards.dependencies)
      why << hls::to_string(d.kind) << "(lat " << d.latency << ", dist " << d.distance << ") ";
    for (const auto &p : r.hazards.ports)
      why << "ports(" << p.array_id << ": " << p.accesses << " > " << r.ii << "x" << p.ports
          << ") ";
    out << r.ii << "   " << (r.feasible ? "yes" : "no ") << "       "
        << (r.feasible ? std::to_string(r.latency_cycles) : std::string("-")) << "  "
        << r.throughput << "  " << why.str() << '\n';
    json entry = {{"ii", r.ii},
                  {"feasible", r.feasible},
                  {"throughput_iter_per_s", r.throughput},
                  {"recurrence_violations", r.hazards.dependencies.size()},
                  {"port_violations", r.hazards.ports.size()}};
    entry["latency_cycles"] = r.feasible ? json(r.latency_cycles) : json(nullptr);
    table.push_back(entry);
  }
  if (!o.out_dir.empty()) {
    const auto dir = require_out(o);
    write_text(dir / "config.json", hls::cost_document_to_json(doc));
    const json report = {{"format_version", kFormatVersion},
                         {"min_feasible_ii", min_ii},
                         {"clock_mhz", doc.clock_mhz},
                         {"rows", table}};
    write_text(dir / "hlscost.json", report.dump(2));
  }
  return kExitOk;
}

int run(const Options &o, std::ostream &out, std::ostream &err) {
  try {
    if (o.command == "simulate")
      return cmd_simulate(o, out, err);
    if (o.command == "recover")
      return cmd_recover(o, out, err);
    if (o.command == "bench")
      return cmd_bench(o, out, err);
    if (o.command == "roofline")
      return cmd_roofline(o, out, err);
    if (o.command == "pareto")
      return cmd_pareto(o, out, err);
    if (o.command == "gradcheck")
      return cmd_gradcheck(o, out, err);
    if (o.command == "hlscost")
      return cmd_hlscost(o, out, err);
    err << "error: unknown command '" << o.command << "'\n";
    return kExitValidation;
  } catch (const ArgumentError &e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const ParseError &e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const StructuralError &e) {
    err << "error: " << e.what() << '\n';
    return kExitValidation;
  } catch (const bench::MeasurementError &e) {
    err << "error: " << e.what() << " (after " << e.partial().runtime_s << " s)\n";
    try {
      std::rethrow_exception(e.cause());
    } catch (const ArgumentError &) {
      return kExitValidation;
    } catch (const StructuralError &) {
      return kExitValidation;
    } catch (...) {
      return kExitRuntime;
    }
  } catch (const std::exception &e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

int main_entry(int argc, char **argv) {
  CLI::App app{"dtwin: digital-twin model recovery and platform analysis"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  const std::vector<std::pair<std::string, std::string>> commands = {
    {"simulate", "Integrate a model and write a trajectory"},
    {"recover", "Fit flow and sparse coefficients to trajectories"},
    {"bench", "Measure a recovery run and compare with reference platforms"},
    {"roofline", "Write attainable-performance curves"},
    {"pareto", "Extract the Pareto front of platform samples"},
    {"gradcheck", "Compare analytic and finite-difference gradients"},
    {"hlscost", "Initiation-interval feasibility table for a loop spec"}};
  for (const auto &[name, help] : commands) {
    auto *sub = app.add_subcommand(name, help);
    sub->add_option("--config", o.config_path, "JSON config file");
    sub->add_option("--out", o.out_dir, "Output directory");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--verbose", o.verbose, "Progress on stderr");
    sub->callback([&o, &seed, sub, name = name] {
      o.command = name;
      if (sub->count("--seed"))
        o.seed = seed;
    });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }
  return run(o, std::cout, std::cerr);
}

} // namespace dtwin::cli
