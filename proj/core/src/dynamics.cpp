// SPDX-License-Identifier: Apache-2.0
#include "dtwin/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include "dtwin/error.hpp"
#include "dtwin/rng.hpp"

namespace dtwin {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

void require_finite(double value, const char *symbol) {
  if (!std::isfinite(value))
    throw DomainError(std::string("non-finite value for ") + symbol);
}

void require_state(const StateVector &state, std::size_t n,
                   const char *const *symbols) {
  if (static_cast<std::size_t>(state.size()) != n)
    throw StructuralError("state has length " + std::to_string(state.size()) +
                          ", expected " + std::to_string(n));
  for (std::size_t j = 0; j < n; ++j)
    require_finite(state(static_cast<Eigen::Index>(j)), symbols[j]);
}

double integer_power(double base, unsigned exponent) {
  double out = 1.0;
  for (unsigned i = 0; i < exponent; ++i)
    out *= base;
  return out;
}

} // namespace

// ---------------------------------------------------------------------------
// InputChannel / InputSignal
// ---------------------------------------------------------------------------

InputChannel InputChannel::constant(double value) {
  return InputChannel(Constant{value});
}

InputChannel InputChannel::sampled(std::vector<double> t, std::vector<double> v) {
  if (t.size() != v.size() || t.empty())
    throw ArgumentError("sampled input needs matching, non-empty time/value arrays");
  for (std::size_t k = 1; k < t.size(); ++k)
    if (!(t[k] > t[k - 1]))
      throw ArgumentError("sampled input times must be strictly increasing");
  return InputChannel(Sampled{std::move(t), std::move(v)});
}

InputChannel InputChannel::pulses(std::vector<Pulse> pulses, double baseline) {
  for (const auto &p : pulses)
    if (!(p.duration > 0.0))
      throw ArgumentError("pulse duration must be positive");
  return InputChannel(Pulses{baseline, std::move(pulses)});
}

InputChannel InputChannel::function(std::function<double(double)> fn) {
  if (!fn)
    throw ArgumentError("empty input function");
  return InputChannel(Function{std::move(fn)});
}

InputChannel InputChannel::rr_series(const RrSpectrum &spec, double horizon,
                                     std::uint64_t seed) {
  if (!(spec.mean_s > 0.0) || spec.std_s < 0.0 || spec.components == 0 ||
      !(spec.max_hz > 0.0) || !(spec.lf_width_hz > 0.0) ||
      !(spec.hf_width_hz > 0.0))
    throw ArgumentError("invalid RR spectrum");

  auto bump = [](double f, double centre, double width) {
    const double d = f - centre;
    return std::exp(-d * d / (2.0 * width * width)) /
           std::sqrt(kTwoPi * width * width);
  };

  Rng rng(seed);
  const double df = spec.max_hz / static_cast<double>(spec.components);
  std::vector<double> freq(spec.components), amp(spec.components),
    phase(spec.components);
  double variance = 0.0;
  for (std::size_t k = 0; k < spec.components; ++k) {
    freq[k] = df * static_cast<double>(k + 1);
    const double power = spec.lf_hf_ratio * bump(freq[k], spec.lf_hz, spec.lf_width_hz) +
                         bump(freq[k], spec.hf_hz, spec.hf_width_hz);
    amp[k] = std::sqrt(2.0 * power * df);
    phase[k] = kTwoPi * rng.uniform();
    variance += 0.5 * amp[k] * amp[k];
  }
  const double gain = variance > 0.0 ? spec.std_s / std::sqrt(variance) : 0.0;
  for (auto &a : amp)
    a *= gain;

  auto fn = [mean = spec.mean_s, freq, amp, phase](double t) {
    double value = mean;
    for (std::size_t k = 0; k < freq.size(); ++k)
      value += amp[k] * std::cos(kTwoPi * freq[k] * t + phase[k]);
    return value;
  };

  const std::size_t grid = std::max<std::size_t>(2, static_cast<std::size_t>(horizon / 0.01) + 1);
  for (std::size_t i = 0; i < grid; ++i) {
    const double t = horizon * static_cast<double>(i) / static_cast<double>(grid - 1);
    if (!(fn(t) > 0.0))
      throw DomainError("generated RR series is not positive at t=" +
                        std::to_string(t));
  }
  return InputChannel(Function{std::move(fn)});
}

double InputChannel::operator()(double t) const {
  return std::visit(
    [t](const auto &c) -> double {
      using T = std::decay_t<decltype(c)>;
      if constexpr (std::is_same_v<T, Constant>) {
        return c.value;
      } else if constexpr (std::is_same_v<T, Sampled>) {
        const double span = c.t.back() - c.t.front();
        const double slack = 1e-9 * std::max(1.0, std::abs(span));
        if (t < c.t.front() - slack || t > c.t.back() + slack)
          throw DomainError("sampled input evaluated outside its support at t=" +
                            std::to_string(t));
        if (c.t.size() == 1 || t <= c.t.front())
          return c.v.front();
        if (t >= c.t.back())
          return c.v.back();
        const auto hi = std::upper_bound(c.t.begin(), c.t.end(), t);
        const auto i = static_cast<std::size_t>(hi - c.t.begin());
        const double w = (t - c.t[i - 1]) / (c.t[i] - c.t[i - 1]);
        return (1.0 - w) * c.v[i - 1] + w * c.v[i];
      } else if constexpr (std::is_same_v<T, Pulses>) {
        double value = c.baseline;
        for (const auto &p : c.pulses)
          if (t >= p.start && t < p.start + p.duration)
            value += p.amplitude;
        return value;
      } else {
        return c.fn(t);
      }
    },
    impl_);
}

bool InputChannel::covers(double t0, double t1) const {
  if (const auto *s = std::get_if<Sampled>(&impl_)) {
    const double slack = 1e-9 * std::max(1.0, std::abs(s->t.back() - s->t.front()));
    return s->t.front() <= t0 + slack && t1 <= s->t.back() + slack;
  }
  return true;
}

InputSignal &InputSignal::add(std::string name, InputChannel channel) {
  if (has(name))
    throw ArgumentError("duplicate input channel '" + name + "'");
  names_.push_back(std::move(name));
  channels_.push_back(std::move(channel));
  return *this;
}

bool InputSignal::has(const std::string &name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const InputChannel &InputSignal::channel(const std::string &name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end())
    throw ArgumentError("missing input channel '" + name + "'");
  return channels_[static_cast<std::size_t>(it - names_.begin())];
}

std::vector<std::size_t>
InputSignal::select(const std::vector<std::string> &names) const {
  std::vector<std::size_t> out;
  out.reserve(names.size());
  for (const auto &name : names) {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end())
      throw ArgumentError("missing input channel '" + name + "'");
    out.push_back(static_cast<std::size_t>(it - names_.begin()));
  }
  return out;
}

Vector InputSignal::sample(std::span<const std::size_t> indices, double t) const {
  Vector u(static_cast<Eigen::Index>(indices.size()));
  for (std::size_t i = 0; i < indices.size(); ++i)
    u(static_cast<Eigen::Index>(i)) = channels_.at(indices[i])(t);
  return u;
}

void InputSignal::require_coverage(double t0, double t1) const {
  for (std::size_t i = 0; i < channels_.size(); ++i)
    if (!channels_[i].covers(t0, t1))
      throw DomainError("input channel '" + names_[i] +
                        "' does not cover the integration horizon");
}

// ---------------------------------------------------------------------------
// CoefficientVector
// ---------------------------------------------------------------------------

CoefficientVector CoefficientVector::dense(std::vector<double> values,
                                           std::string tag) {
  CoefficientVector out;
  out.term_ids.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    out.term_ids[i] = i;
  out.values = std::move(values);
  out.model_tag = std::move(tag);
  return out;
}

void CoefficientVector::validate(std::size_t dense_size) const {
  if (values.size() != term_ids.size())
    throw StructuralError("coefficient values and term ids differ in length");
  std::set<std::size_t> seen;
  for (auto id : term_ids) {
    if (id >= dense_size)
      throw IndexError("term id " + std::to_string(id) + " out of range (" +
                       std::to_string(dense_size) + " terms)");
    if (!seen.insert(id).second)
      throw ArgumentError("duplicate term id " + std::to_string(id));
  }
}

Vector CoefficientVector::to_dense(std::size_t dense_size) const {
  validate(dense_size);
  Vector out = Vector::Zero(static_cast<Eigen::Index>(dense_size));
  for (std::size_t i = 0; i < values.size(); ++i)
    out(static_cast<Eigen::Index>(term_ids[i])) = values[i];
  return out;
}

// ---------------------------------------------------------------------------
// TermLibrary
// ---------------------------------------------------------------------------

TermLibrary::TermLibrary(std::size_t state_dim, std::size_t input_dim,
                         std::vector<Exponents> terms)
  : state_dim_(state_dim), input_dim_(input_dim), terms_(std::move(terms)) {
  if (state_dim_ == 0)
    throw ArgumentError("library needs at least one state variable");
  if (terms_.empty())
    throw ArgumentError("library needs at least one term");
  std::set<Exponents> seen;
  for (const auto &t : terms_) {
    if (t.size() != state_dim_ + input_dim_)
      throw StructuralError("term exponent tuple has wrong length");
    if (!seen.insert(t).second)
      throw ArgumentError("duplicate library term");
  }
  if (!is_constant(0))
    throw ArgumentError("library term 0 must be the constant term");
}

unsigned TermLibrary::order() const {
  unsigned best = 0;
  for (const auto &t : terms_) {
    unsigned degree = 0;
    for (std::size_t i = 0; i < state_dim_; ++i)
      degree += t[i];
    best = std::max(best, degree);
  }
  return best;
}

bool TermLibrary::is_constant(std::size_t k) const {
  const auto &t = terms_.at(k);
  return std::all_of(t.begin(), t.end(), [](unsigned e) { return e == 0; });
}

void TermLibrary::evaluate(const Vector &x, const Vector &u, Vector &out) const {
  if (static_cast<std::size_t>(x.size()) != state_dim_ ||
      static_cast<std::size_t>(u.size()) < input_dim_)
    throw StructuralError("library evaluated with wrong state/input size");
  out.resize(static_cast<Eigen::Index>(terms_.size()));
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto &t = terms_[k];
    double value = 1.0;
    for (std::size_t i = 0; i < state_dim_; ++i)
      value *= integer_power(x(static_cast<Eigen::Index>(i)), t[i]);
    for (std::size_t i = 0; i < input_dim_; ++i)
      value *= integer_power(u(static_cast<Eigen::Index>(i)), t[state_dim_ + i]);
    out(static_cast<Eigen::Index>(k)) = value;
  }
}

void TermLibrary::state_gradient(const Vector &x, const Vector &u,
                                 Matrix &out) const {
  out.setZero(static_cast<Eigen::Index>(terms_.size()),
              static_cast<Eigen::Index>(state_dim_));
  for (std::size_t k = 0; k < terms_.size(); ++k) {
    const auto &t = terms_[k];
    double input_part = 1.0;
    for (std::size_t i = 0; i < input_dim_; ++i)
      input_part *= integer_power(u(static_cast<Eigen::Index>(i)), t[state_dim_ + i]);
    for (std::size_t d = 0; d < state_dim_; ++d) {
      if (t[d] == 0)
        continue;
      double value = input_part * static_cast<double>(t[d]) *
                     integer_power(x(static_cast<Eigen::Index>(d)), t[d] - 1);
      for (std::size_t i = 0; i < state_dim_; ++i)
        if (i != d)
          value *= integer_power(x(static_cast<Eigen::Index>(i)), t[i]);
      out(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d)) = value;
    }
  }
}

std::string TermLibrary::term_name(std::size_t k,
                                   const std::vector<std::string> &state_names,
                                   const std::vector<std::string> &input_names) const {
  const auto &t = terms_.at(k);
  std::string out;
  auto append = [&out](const std::string &var, unsigned e) {
    if (e == 0)
      return;
    if (!out.empty())
      out += '*';
    out += var;
    if (e > 1)
      out += '^' + std::to_string(e);
  };
  for (std::size_t i = 0; i < state_dim_; ++i)
    append(i < state_names.size() ? state_names[i] : "x" + std::to_string(i), t[i]);
  for (std::size_t i = 0; i < input_dim_; ++i)
    append(i < input_names.size() ? input_names[i] : "u" + std::to_string(i),
           t[state_dim_ + i]);
  return out.empty() ? "1" : out;
}

std::uint64_t complete_library_size(std::size_t state_dim, unsigned order) {
  // C(order + n, n) computed incrementally; exact for the sizes we allow.
  std::uint64_t result = 1;
  for (std::uint64_t i = 1; i <= state_dim; ++i) {
    result = result * (order + i) / i;
  }
  return result;
}

TermLibrary build_library(std::size_t state_dim, std::size_t input_dim,
                          unsigned order, std::size_t max_terms) {
  if (state_dim == 0 || order == 0)
    throw ArgumentError("build_library needs n >= 1 and M >= 1");
  const auto count = complete_library_size(state_dim, order) + input_dim;
  if (count > max_terms)
    throw ArgumentError("library would have " + std::to_string(count) +
                        " terms, above the cap of " + std::to_string(max_terms));

  std::vector<TermLibrary::Exponents> terms;
  TermLibrary::Exponents current(state_dim + input_dim, 0);
  // Enumerate exponents of total degree `remaining` over variables
  // [index, state_dim), largest exponent on the earliest variable first.
  auto fill = [&](auto &&self, std::size_t index, unsigned remaining) -> void {
    if (index + 1 == state_dim) {
      current[index] = remaining;
      terms.push_back(current);
      current[index] = 0;
      return;
    }
    for (unsigned e = remaining + 1; e-- > 0;) {
      current[index] = e;
      self(self, index + 1, remaining - e);
    }
    current[index] = 0;
  };
  for (unsigned degree = 0; degree <= order; ++degree)
    fill(fill, 0, degree);
  for (std::size_t i = 0; i < input_dim; ++i) {
    TermLibrary::Exponents t(state_dim + input_dim, 0);
    t[state_dim + i] = 1;
    terms.push_back(std::move(t));
  }
  return TermLibrary(state_dim, input_dim, std::move(terms));
}

StateVector library_rhs(const StateVector &state, const Vector &input,
                        const CoefficientVector &theta,
                        const TermLibrary &library) {
  const auto n = library.state_dim();
  const auto terms = library.size();
  theta.validate(n * terms);
  for (Eigen::Index j = 0; j < state.size(); ++j)
    require_finite(state(j), "state");
  Vector monomials;
  library.evaluate(state, input, monomials);
  StateVector out = StateVector::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const auto id = theta.term_ids[i];
    out(static_cast<Eigen::Index>(id / terms)) +=
      theta.values[i] * monomials(static_cast<Eigen::Index>(id % terms));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Bergman
// ---------------------------------------------------------------------------

BergmanCoefficients BergmanCoefficients::from(std::span<const double> v) {
  if (v.size() != 6)
    throw StructuralError("Bergman model takes exactly 6 coefficients, got " +
                          std::to_string(v.size()));
  return {v[0], v[1], v[2], v[3], v[4], v[5]};
}

StateVector bergman_rhs(const StateVector &state, const BergmanInputs &input,
                        const BergmanCoefficients &theta) {
  static const char *const symbols[] = {"di", "dis", "dG"};
  require_state(state, 3, symbols);
  require_finite(theta.p1, "p1");
  require_finite(theta.p2, "p2");
  require_finite(theta.p3, "p3");
  require_finite(theta.p4, "p4");
  require_finite(theta.n, "n");
  require_finite(theta.inv_voi, "inv_voi");
  require_finite(input.u1, "u1");
  require_finite(input.u2, "u2");
  require_finite(input.i_b, "i_b");
  require_finite(input.g_b, "G_b");

  StateVector out(3);
  out(0) = -theta.n * state(0) + theta.p4 * input.u1;
  out(1) = -theta.p1 * state(1) + theta.p2 * (state(0) - input.i_b);
  out(2) = -state(1) * input.g_b - theta.p3 * state(2) + input.u2 * theta.inv_voi;
  return out;
}

StateVector bergman_rhs(const StateVector &state, const InputSignal &input,
                        const CoefficientVector &theta, double t) {
  const Vector dense = theta.to_dense(6);
  const BergmanInputs u{input.channel("u1")(t), input.channel("u2")(t),
                        input.channel("i_b")(t), input.channel("G_b")(t)};
  return bergman_rhs(state, u, BergmanCoefficients::from({dense.data(), 6}));
}

// ---------------------------------------------------------------------------
// ECGSYN
// ---------------------------------------------------------------------------

std::array<double, 15> EcgWaveform::as_array() const {
  std::array<double, 15> out{};
  for (std::size_t i = 0; i < 5; ++i) {
    out[i] = amplitude[i];
    out[5 + i] = width[i];
    out[10 + i] = angle[i];
  }
  return out;
}

EcgWaveform EcgWaveform::from(std::span<const double> v) {
  if (v.size() != 15)
    throw StructuralError("ECGSYN takes exactly 15 waveform coefficients, got " +
                          std::to_string(v.size()));
  EcgWaveform out;
  for (std::size_t i = 0; i < 5; ++i) {
    out.amplitude[i] = v[i];
    out.width[i] = v[5 + i];
    out.angle[i] = v[10 + i];
  }
  return out;
}

double wrap_angle(double angle) {
  double wrapped = std::remainder(angle, kTwoPi); // [-pi, pi]
  if (wrapped <= -std::numbers::pi)
    wrapped += kTwoPi;
  return wrapped;
}

namespace {

constexpr const char *kWaveNames[5] = {"P", "Q", "R", "S", "T"};

void check_waveform(const EcgWaveform &w) {
  for (std::size_t i = 0; i < 5; ++i) {
    require_finite(w.amplitude[i], "a_i");
    require_finite(w.width[i], "b_i");
    require_finite(w.angle[i], "theta_i");
    if (!(w.width[i] > 0.0))
      throw DomainError(std::string("ECGSYN width b_") + kWaveNames[i] +
                        " must be positive");
  }
}

void check_ecg_inputs(const EcgInputs &in) {
  require_finite(in.rr, "r(t)");
  require_finite(in.baseline_amplitude, "A_b");
  require_finite(in.resp_hz, "f_resp");
  if (!(in.rr > 0.0))
    throw DomainError("RR interval r(t) must be positive");
}

// Gaussian-derivative feature of each wave: dz/dt gets -a_i * feature_i.
void ecg_wave_features(double x, double y, const EcgWaveform &shape,
                       std::array<double, 5> &feature,
                       std::array<double, 5> &slope) {
  const double phase = std::atan2(y, x);
  for (std::size_t i = 0; i < 5; ++i) {
    const double d = wrap_angle(phase - shape.angle[i]);
    const double b2 = shape.width[i] * shape.width[i];
    const double g = std::exp(-d * d / (2.0 * b2));
    feature[i] = d * g;
    slope[i] = g * (1.0 - d * d / b2);
  }
}

} // namespace

StateVector ecgsyn_rhs(const StateVector &state, const EcgInputs &input,
                       const EcgWaveform &theta, double t) {
  static const char *const symbols[] = {"x", "y", "z"};
  require_state(state, 3, symbols);
  check_waveform(theta);
  check_ecg_inputs(input);

  const double x = state(0), y = state(1), z = state(2);
  const double radial = 1.0 - std::sqrt(x * x + y * y);
  const double omega = kTwoPi / input.rr;
  const double z0 = input.baseline_amplitude * std::sin(kTwoPi * input.resp_hz * t);

  std::array<double, 5> feature{}, slope{};
  ecg_wave_features(x, y, theta, feature, slope);
  double wave = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    wave += theta.amplitude[i] * feature[i];

  StateVector out(3);
  out(0) = radial * x - omega * y;
  out(1) = radial * y + omega * x;
  out(2) = -wave - (z - z0);
  return out;
}

StateVector ecgsyn_rhs(const StateVector &state, const InputSignal &input,
                       const CoefficientVector &theta, double t) {
  const Vector dense = theta.to_dense(15);
  const EcgInputs u{input.channel("rr")(t), input.channel("A_b")(t),
                    input.channel("f_resp")(t)};
  return ecgsyn_rhs(state, u, EcgWaveform::from({dense.data(), 15}), t);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

Model::Model(std::string name, std::vector<std::string> states,
             std::vector<std::string> inputs, std::vector<std::string> coefficients,
             TimeUnit unit)
  : name_(std::move(name)), state_names_(std::move(states)),
    input_names_(std::move(inputs)), coefficient_names_(std::move(coefficients)),
    time_unit_(unit) {}

StateVector Model::rhs(const StateVector &x, const Vector &u, double t,
                       const Vector &theta) const {
  Vector offset;
  Matrix features;
  linear_form(x, u, t, offset, features);
  return offset + features * theta;
}

Vector Model::dense_theta(const CoefficientVector &theta) const {
  return theta.to_dense(coefficient_count());
}

CoefficientVector Model::coefficients(const Vector &dense) const {
  if (static_cast<std::size_t>(dense.size()) != coefficient_count())
    throw StructuralError("coefficient vector length mismatch for model " + name_);
  return CoefficientVector::dense(std::vector<double>(dense.begin(), dense.end()),
                                  name_);
}

BergmanModel::BergmanModel()
  : Model("bergman", {"di", "dis", "dG"}, {"u1", "u2", "i_b", "G_b"},
          {"p1", "p2", "p3", "p4", "n", "inv_voi"}, TimeUnit::Minutes) {}

void BergmanModel::linear_form(const StateVector &x, const Vector &u, double,
                               Vector &offset, Matrix &features) const {
  offset.setZero(3);
  features.setZero(3, 6);
  offset(2) = -x(1) * u(3);
  features(0, 3) = u(0);
  features(0, 4) = -x(0);
  features(1, 0) = -x(1);
  features(1, 1) = x(0) - u(2);
  features(2, 2) = -x(2);
  features(2, 5) = u(1);
}

Matrix BergmanModel::state_jacobian(const StateVector &, const Vector &u, double,
                                    const Vector &theta) const {
  Matrix jac = Matrix::Zero(3, 3);
  jac(0, 0) = -theta(4);
  jac(1, 0) = theta(1);
  jac(1, 1) = -theta(0);
  jac(2, 1) = -u(3);
  jac(2, 2) = -theta(2);
  return jac;
}

StateVector BergmanModel::rhs(const StateVector &x, const Vector &u, double,
                              const Vector &theta) const {
  return bergman_rhs(x, BergmanInputs{u(0), u(1), u(2), u(3)},
                     BergmanCoefficients::from({theta.data(), 6}));
}

EcgsynModel::EcgsynModel(const EcgWaveform &shape)
  : Model("ecgsyn", {"x", "y", "z"}, {"rr", "A_b", "f_resp"},
          {"a_P", "a_Q", "a_R", "a_S", "a_T"}, TimeUnit::Seconds),
    shape_(shape) {
  check_waveform(shape_);
}

void EcgsynModel::linear_form(const StateVector &state, const Vector &u, double t,
                              Vector &offset, Matrix &features) const {
  const EcgInputs in{u(0), u(1), u(2)};
  check_ecg_inputs(in);
  const double x = state(0), y = state(1), z = state(2);
  const double radial = 1.0 - std::sqrt(x * x + y * y);
  const double omega = kTwoPi / in.rr;
  const double z0 = in.baseline_amplitude * std::sin(kTwoPi * in.resp_hz * t);
  offset.resize(3);
  offset(0) = radial * x - omega * y;
  offset(1) = radial * y + omega * x;
  offset(2) = -(z - z0);
  std::array<double, 5> feature{}, slope{};
  ecg_wave_features(x, y, shape_, feature, slope);
  features.setZero(3, 5);
  for (Eigen::Index i = 0; i < 5; ++i)
    features(2, i) = -feature[static_cast<std::size_t>(i)];
}

Matrix EcgsynModel::state_jacobian(const StateVector &state, const Vector &u,
                                   double, const Vector &theta) const {
  const double x = state(0), y = state(1);
  const double rho2 = x * x + y * y;
  const double rho = std::sqrt(rho2);
  const double omega = kTwoPi / u(0);
  Matrix jac = Matrix::Zero(3, 3);
  if (rho > 1e-150) {
    jac(0, 0) = (1.0 - rho) - x * x / rho;
    jac(0, 1) = -x * y / rho - omega;
    jac(1, 0) = -x * y / rho + omega;
    jac(1, 1) = (1.0 - rho) - y * y / rho;
    std::array<double, 5> feature{}, slope{};
    ecg_wave_features(x, y, shape_, feature, slope);
    double dwave = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      dwave += theta(static_cast<Eigen::Index>(i)) * slope[i];
    jac(2, 0) = dwave * y / rho2;  // -dwave * dphase/dx, dphase/dx = -y/rho^2
    jac(2, 1) = -dwave * x / rho2; // dphase/dy = x/rho^2
  } else {
    jac(0, 0) = 1.0;
    jac(0, 1) = -omega;
    jac(1, 0) = omega;
    jac(1, 1) = 1.0;
  }
  jac(2, 2) = -1.0;
  return jac;
}

namespace {

std::vector<std::string> library_coefficient_names(
  const TermLibrary &library, const std::vector<std::string> &states,
  const std::vector<std::string> &inputs) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < library.state_dim(); ++j)
    for (std::size_t k = 0; k < library.size(); ++k)
      out.push_back("d" + states.at(j) + "/dt:" + library.term_name(k, states, inputs));
  return out;
}

} // namespace

LibraryModel::LibraryModel(TermLibrary library, std::vector<std::string> state_names,
                           std::vector<std::string> input_names, TimeUnit unit)
  : Model("library", state_names, input_names,
          library_coefficient_names(library, state_names, input_names), unit),
    library_(std::move(library)) {
  if (state_names.size() != library_.state_dim() ||
      input_names.size() != library_.input_dim())
    throw StructuralError("library model names disagree with library dimensions");
}

void LibraryModel::linear_form(const StateVector &x, const Vector &u, double,
                               Vector &offset, Matrix &features) const {
  const auto n = static_cast<Eigen::Index>(library_.state_dim());
  const auto terms = static_cast<Eigen::Index>(library_.size());
  Vector monomials;
  library_.evaluate(x, u, monomials);
  offset.setZero(n);
  features.setZero(n, n * terms);
  for (Eigen::Index j = 0; j < n; ++j)
    features.block(j, j * terms, 1, terms) = monomials.transpose();
}

Matrix LibraryModel::state_jacobian(const StateVector &x, const Vector &u, double,
                                    const Vector &theta) const {
  const auto n = static_cast<Eigen::Index>(library_.state_dim());
  const auto terms = static_cast<Eigen::Index>(library_.size());
  Matrix grad;
  library_.state_gradient(x, u, grad);
  Matrix jac(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    jac.row(j) = theta.segment(j * terms, terms).transpose() * grad;
  return jac;
}

bool LibraryModel::penalized(std::size_t k) const {
  return !library_.is_constant(k % library_.size());
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

Rhs bind_rhs(std::shared_ptr<const Model> model, Vector theta,
             const InputSignal &input) {
  if (!model)
    throw ArgumentError("null model");
  if (static_cast<std::size_t>(theta.size()) != model->coefficient_count())
    throw StructuralError("model " + model->name() + " expects " +
                          std::to_string(model->coefficient_count()) +
                          " coefficients, got " + std::to_string(theta.size()));
  auto indices = input.select(model->input_names());
  return [model = std::move(model), theta = std::move(theta), input,
          indices = std::move(indices)](double t, const StateVector &x) {
    return model->rhs(x, input.sample(indices, t), t, theta);
  };
}

StateVector rk4_step(const Rhs &rhs, const StateVector &state, double t, double h,
                     std::size_t step_index) {
  if (!(h > 0.0))
    throw ArgumentError("rk4 step size must be positive");
  auto check = [step_index](const StateVector &v, const char *stage) {
    if (!v.allFinite())
      throw NonFiniteStepError(std::string("non-finite RK4 stage ") + stage +
                                 " at step " + std::to_string(step_index),
                               step_index);
  };
  const StateVector k1 = rhs(t, state);
  check(k1, "k1");
  const StateVector k2 = rhs(t + 0.5 * h, state + 0.5 * h * k1);
  check(k2, "k2");
  const StateVector k3 = rhs(t + 0.5 * h, state + 0.5 * h * k2);
  check(k3, "k3");
  const StateVector k4 = rhs(t + h, state + h * k3);
  check(k4, "k4");
  StateVector next = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  check(next, "update");
  return next;
}

Trajectory simulate(std::shared_ptr<const Model> model, const Vector &theta,
                    const InputSignal &input, const StateVector &x0, double horizon,
                    std::size_t samples, const SimulateOptions &options) {
  if (!model)
    throw ArgumentError("null model");
  if (samples < 2)
    throw ArgumentError("simulate needs at least 2 samples");
  if (!(horizon > 0.0) || !std::isfinite(horizon))
    throw ArgumentError("simulate horizon must be positive and finite");
  if (options.substeps == 0)
    throw ArgumentError("simulate needs at least one substep");
  if (static_cast<std::size_t>(x0.size()) != model->state_dim())
    throw StructuralError("initial state has wrong dimension for model " +
                          model->name());
  if (!x0.allFinite())
    throw DomainError("initial state is not finite");
  input.require_coverage(0.0, horizon);

  const auto indices = input.select(model->input_names());
  const Rhs rhs = bind_rhs(model, theta, input);

  const auto n = static_cast<Eigen::Index>(model->state_dim());
  const auto big_n = static_cast<Eigen::Index>(samples);
  Trajectory traj;
  traj.times.resize(big_n);
  traj.states.resize(big_n, n);
  traj.inputs.resize(big_n, static_cast<Eigen::Index>(indices.size()));
  traj.mask.assign(model->state_dim(), true);
  traj.state_names = model->state_names();
  traj.input_names = model->input_names();
  traj.time_unit = model->time_unit();

  const double denom = static_cast<double>(samples - 1);
  for (Eigen::Index k = 0; k < big_n; ++k)
    traj.times(k) = horizon * static_cast<double>(k) / denom;

  StateVector x = x0;
  traj.states.row(0) = x0.transpose();
  traj.inputs.row(0) = input.sample(indices, 0.0).transpose();
  std::size_t step = 0;
  for (Eigen::Index k = 1; k < big_n; ++k) {
    const double t0 = traj.times(k - 1);
    const double h = (traj.times(k) - t0) / static_cast<double>(options.substeps);
    for (std::size_t s = 0; s < options.substeps; ++s, ++step) {
      const double t = t0 + h * static_cast<double>(s);
      x = rk4_step(rhs, x, t, h, step);
      if (x.cwiseAbs().maxCoeff() > options.blowup_bound) {
        std::ostringstream msg;
        msg << "simulation of " << model->name() << " diverged at t=" << (t + h);
        throw DivergenceError(msg.str(), t + h);
      }
    }
    traj.states.row(k) = x.transpose();
    traj.inputs.row(k) = input.sample(indices, traj.times(k)).transpose();
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

BergmanCoefficients bergman_fixture_coefficients() {
  BergmanCoefficients c;
  c.p1 = 0.03;
  c.p2 = 0.01;
  c.p3 = 0.02;
  c.p4 = 0.1;
  c.n = 0.1;
  c.inv_voi = 0.5;
  return c;
}

BergmanInputs bergman_fixture_basal() {
  BergmanInputs b;
  b.i_b = 1.0;
  b.g_b = 1.0;
  return b;
}

InputSignal bergman_fixture_inputs(double horizon_min) {
  const auto c = bergman_fixture_coefficients();
  const auto basal = bergman_fixture_basal();
  const double basal_rate = c.n * basal.i_b / c.p4;
  std::vector<Pulse> boluses = {{60.0, 30.0, 6.0}, {360.0, 30.0, 8.0},
                                {720.0, 30.0, 5.0}};
  std::vector<Pulse> meals = {{50.0, 60.0, 1.5}, {350.0, 60.0, 2.0},
                              {700.0, 60.0, 1.2}};
  std::erase_if(boluses, [&](const Pulse &p) { return p.start >= horizon_min; });
  std::erase_if(meals, [&](const Pulse &p) { return p.start >= horizon_min; });
  InputSignal signal;
  signal.add("u1", InputChannel::pulses(boluses, basal_rate))
    .add("u2", InputChannel::pulses(meals))
    .add("i_b", InputChannel::constant(basal.i_b))
    .add("G_b", InputChannel::constant(basal.g_b));
  return signal;
}

StateVector bergman_fixture_initial_state() {
  StateVector x0(3);
  x0 << bergman_fixture_basal().i_b, 0.0, 0.0;
  return x0;
}

EcgWaveform ecg_fixture_waveform() {
  constexpr double pi = std::numbers::pi;
  EcgWaveform w;
  w.angle = {-pi / 3.0, -pi / 12.0, 0.0, pi / 12.0, pi / 2.0};
  w.amplitude = {1.2, -5.0, 30.0, -7.5, 0.75};
  w.width = {0.25, 0.1, 0.1, 0.1, 0.4};
  return w;
}

InputSignal ecg_fixture_inputs(double baseline_amplitude, double resp_hz) {
  InputSignal signal;
  signal.add("rr", InputChannel::constant(1.0))
    .add("A_b", InputChannel::constant(baseline_amplitude))
    .add("f_resp", InputChannel::constant(resp_hz));
  return signal;
}

} // namespace dtwin
