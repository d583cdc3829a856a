// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dynamics.hpp
 * @brief  Ground-truth ODE models, sparse term libraries and a fixed-step
 *         RK4 integrator.
 *
 * Every model here is linear in its coefficient vector:
 *
 *     dX/dt = offset(X, U, t) + features(X, U, t) * theta
 *
 * which lets the recovery trainer compute coefficient gradients exactly.
 */
#ifndef DTWIN_DYNAMICS_HPP
#define DTWIN_DYNAMICS_HPP

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dtwin/linalg.hpp"
#include "dtwin/trajectory.hpp"

namespace dtwin {

// ---------------------------------------------------------------------------
// Inputs
// ---------------------------------------------------------------------------

struct Pulse {
  double start = 0.0;
  double duration = 0.0;
  double amplitude = 0.0;
};

/// Power spectrum of the RR-interval generator: two Gaussian bumps
/// (low-frequency Mayer band and high-frequency respiratory band).
struct RrSpectrum {
  double mean_s = 1.0;
  double std_s = 0.05;
  double lf_hz = 0.1;
  double lf_width_hz = 0.01;
  double hf_hz = 0.25;
  double hf_width_hz = 0.01;
  double lf_hf_ratio = 0.5;
  std::size_t components = 256;
  double max_hz = 0.5;
};

/// One scalar input channel u(t).
class InputChannel {
public:
  struct Constant {
    double value;
  };
  struct Sampled {
    std::vector<double> t;
    std::vector<double> v;
  };
  struct Pulses {
    double baseline;
    std::vector<Pulse> pulses;
  };
  struct Function {
    std::function<double(double)> fn;
  };

  static InputChannel constant(double value);
  /// Piecewise-linear interpolation; evaluating outside [t.front(), t.back()]
  /// is a DomainError.
  static InputChannel sampled(std::vector<double> t, std::vector<double> v);
  static InputChannel pulses(std::vector<Pulse> pulses, double baseline = 0.0);
  static InputChannel function(std::function<double(double)> fn);
  /// Sum-of-sinusoids realisation of `spectrum` with seeded random phases.
  /// Throws DomainError if the realisation is not strictly positive on
  /// [0, horizon].
  static InputChannel rr_series(const RrSpectrum &spectrum, double horizon,
                                std::uint64_t seed);

  double operator()(double t) const;

  /// True when the channel is defined on all of [t0, t1].
  bool covers(double t0, double t1) const;

  bool is_constant() const { return std::holds_alternative<Constant>(impl_); }

private:
  using Impl = std::variant<Constant, Sampled, Pulses, Function>;
  explicit InputChannel(Impl impl) : impl_(std::move(impl)) {}
  Impl impl_;
};

/// Named set of input channels U(t).
class InputSignal {
public:
  InputSignal &add(std::string name, InputChannel channel);

  std::size_t size() const { return names_.size(); }
  const std::vector<std::string> &names() const { return names_; }
  bool has(const std::string &name) const;
  const InputChannel &channel(const std::string &name) const;

  /// Channel indices for `names`, in that order. Missing name -> ArgumentError.
  std::vector<std::size_t> select(const std::vector<std::string> &names) const;

  /// Values of the selected channels at time t.
  Vector sample(std::span<const std::size_t> indices, double t) const;

  /// Throws DomainError naming the first channel that does not cover [t0, t1].
  void require_coverage(double t0, double t1) const;

private:
  std::vector<std::string> names_;
  std::vector<InputChannel> channels_;
};

// ---------------------------------------------------------------------------
// Coefficients and term libraries
// ---------------------------------------------------------------------------

/// Sparse coefficient set: values[i] multiplies term term_ids[i].
struct CoefficientVector {
  std::vector<double> values;
  std::vector<std::size_t> term_ids;
  std::string model_tag;

  std::size_t size() const { return values.size(); }

  /// Dense coefficient with ids 0..values.size()-1.
  static CoefficientVector dense(std::vector<double> values, std::string tag);

  /// Checks sizes, id uniqueness and id < dense_size (IndexError).
  void validate(std::size_t dense_size) const;

  /// Scatter into a dense vector of length dense_size.
  Vector to_dense(std::size_t dense_size) const;
};

/**
 * Ordered monomials over n state variables and m input variables.
 *
 * Exponent tuples have length n + m. Index 0 is always the constant term.
 */
class TermLibrary {
public:
  using Exponents = std::vector<unsigned>;

  /// Arbitrary term list. The first term must be the constant.
  TermLibrary(std::size_t state_dim, std::size_t input_dim,
              std::vector<Exponents> terms);

  std::size_t state_dim() const { return state_dim_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t size() const { return terms_.size(); }
  /// Highest total degree over the state variables.
  unsigned order() const;
  const Exponents &term(std::size_t k) const { return terms_.at(k); }
  bool is_constant(std::size_t k) const;

  /// Values of every monomial at (x, u).
  void evaluate(const Vector &x, const Vector &u, Vector &out) const;
  /// d monomial_k / d x_j, size() x state_dim().
  void state_gradient(const Vector &x, const Vector &u, Matrix &out) const;

  std::string term_name(std::size_t k, const std::vector<std::string> &state_names,
                        const std::vector<std::string> &input_names) const;

private:
  std::size_t state_dim_;
  std::size_t input_dim_;
  std::vector<Exponents> terms_;
};

/// binomial(order + n, n) for the state-only complete library.
std::uint64_t complete_library_size(std::size_t state_dim, unsigned order);

/**
 * All state monomials up to total degree `order` in graded lexicographic
 * order (within a degree, larger exponents on earlier variables come first),
 * followed by each input variable as a linear term.
 */
TermLibrary build_library(std::size_t state_dim, std::size_t input_dim,
                          unsigned order, std::size_t max_terms = 100000);

/// dX_j/dt = sum_k theta_{j,k} * monomial_k(X, U), with term id j * L + k.
StateVector library_rhs(const StateVector &state, const Vector &input,
                        const CoefficientVector &theta,
                        const TermLibrary &library);

// ---------------------------------------------------------------------------
// Bergman minimal model
// ---------------------------------------------------------------------------

struct BergmanCoefficients {
  double p1 = 0.0;
  double p2 = 0.0;
  double p3 = 0.0;
  double p4 = 0.0;
  double n = 0.0;
  double inv_voi = 0.0;

  /// Order: p1, p2, p3, p4, n, inv_voi.
  std::array<double, 6> as_array() const { return {p1, p2, p3, p4, n, inv_voi}; }
  static BergmanCoefficients from(std::span<const double> values);
};

struct BergmanInputs {
  double u1 = 0.0;  ///< insulin infusion
  double u2 = 0.0;  ///< glucose appearance rate
  double i_b = 0.0; ///< basal insulin
  double g_b = 0.0; ///< basal glucose
};

/// State [di, dis, dG]; time in minutes.
StateVector bergman_rhs(const StateVector &state, const BergmanInputs &input,
                        const BergmanCoefficients &theta);

/// Reads u1, u2, i_b, G_b from `input` at t.
StateVector bergman_rhs(const StateVector &state, const InputSignal &input,
                        const CoefficientVector &theta, double t);

// ---------------------------------------------------------------------------
// ECGSYN
// ---------------------------------------------------------------------------

/// P, Q, R, S, T waveform terms.
struct EcgWaveform {
  std::array<double, 5> amplitude{};
  std::array<double, 5> width{};
  std::array<double, 5> angle{};

  /// Order: a_P..a_T, b_P..b_T, theta_P..theta_T.
  std::array<double, 15> as_array() const;
  static EcgWaveform from(std::span<const double> values);
};

struct EcgInputs {
  double rr = 1.0;                 ///< RR interval r(t), seconds
  double baseline_amplitude = 0.0; ///< A_b
  double resp_hz = 0.0;            ///< f_resp
};

/// Maps an angle into (-pi, pi].
double wrap_angle(double angle);

/// State [x, y, z]; time in seconds.
StateVector ecgsyn_rhs(const StateVector &state, const EcgInputs &input,
                       const EcgWaveform &theta, double t);

/// Reads rr, A_b, f_resp from `input` at t.
StateVector ecgsyn_rhs(const StateVector &state, const InputSignal &input,
                       const CoefficientVector &theta, double t);

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// An ODE family dX/dt = offset + features * theta.
class Model {
public:
  virtual ~Model() = default;

  const std::string &name() const { return name_; }
  const std::vector<std::string> &state_names() const { return state_names_; }
  const std::vector<std::string> &input_names() const { return input_names_; }
  const std::vector<std::string> &coefficient_names() const { return coefficient_names_; }
  TimeUnit time_unit() const { return time_unit_; }

  std::size_t state_dim() const { return state_names_.size(); }
  std::size_t input_dim() const { return input_names_.size(); }
  std::size_t coefficient_count() const { return coefficient_names_.size(); }

  /// offset: n, features: n x p.
  virtual void linear_form(const StateVector &x, const Vector &u, double t,
                           Vector &offset, Matrix &features) const = 0;

  /// d(rhs)/dx, n x n.
  virtual Matrix state_jacobian(const StateVector &x, const Vector &u, double t,
                                const Vector &theta) const = 0;

  /// Whether the L1 sparsity penalty applies to coefficient k.
  virtual bool penalized(std::size_t) const { return true; }

  virtual StateVector rhs(const StateVector &x, const Vector &u, double t,
                          const Vector &theta) const;

  Vector dense_theta(const CoefficientVector &theta) const;
  CoefficientVector coefficients(const Vector &dense) const;

protected:
  Model(std::string name, std::vector<std::string> states,
        std::vector<std::string> inputs, std::vector<std::string> coefficients,
        TimeUnit unit);

private:
  std::string name_;
  std::vector<std::string> state_names_;
  std::vector<std::string> input_names_;
  std::vector<std::string> coefficient_names_;
  TimeUnit time_unit_;
};

class BergmanModel final : public Model {
public:
  BergmanModel();
  void linear_form(const StateVector &x, const Vector &u, double t,
                   Vector &offset, Matrix &features) const override;
  Matrix state_jacobian(const StateVector &x, const Vector &u, double t,
                        const Vector &theta) const override;
  StateVector rhs(const StateVector &x, const Vector &u, double t,
                  const Vector &theta) const override;
};

/// ECGSYN with fixed widths and angles; the coefficients are the five
/// amplitudes a_P..a_T.
class EcgsynModel final : public Model {
public:
  explicit EcgsynModel(const EcgWaveform &shape);
  const EcgWaveform &shape() const { return shape_; }
  void linear_form(const StateVector &x, const Vector &u, double t,
                   Vector &offset, Matrix &features) const override;
  Matrix state_jacobian(const StateVector &x, const Vector &u, double t,
                        const Vector &theta) const override;

private:
  EcgWaveform shape_;
};

/// Generic sparse library model; coefficient j * L + k multiplies term k in
/// equation j.
class LibraryModel final : public Model {
public:
  LibraryModel(TermLibrary library, std::vector<std::string> state_names,
               std::vector<std::string> input_names,
               TimeUnit unit = TimeUnit::Seconds);
  const TermLibrary &library() const { return library_; }
  void linear_form(const StateVector &x, const Vector &u, double t,
                   Vector &offset, Matrix &features) const override;
  Matrix state_jacobian(const StateVector &x, const Vector &u, double t,
                        const Vector &theta) const override;
  bool penalized(std::size_t k) const override;

private:
  TermLibrary library_;
};

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

using Rhs = std::function<StateVector(double t, const StateVector &x)>;

/// Binds model, coefficients and inputs into a right-hand side.
Rhs bind_rhs(std::shared_ptr<const Model> model, Vector theta,
             const InputSignal &input);

/// Classical fourth-order Runge-Kutta step. `step_index` is reported when an
/// intermediate stage is non-finite.
StateVector rk4_step(const Rhs &rhs, const StateVector &state, double t,
                     double h, std::size_t step_index = 0);

struct SimulateOptions {
  std::size_t substeps = 10;
  double blowup_bound = 1e12;
};

/**
 * Integrates to N uniformly spaced samples over [0, horizon]. Sample 0 is x0
 * exactly. The returned trajectory is fully observed and carries the model
 * inputs sampled at each output time.
 */
Trajectory simulate(std::shared_ptr<const Model> model, const Vector &theta,
                    const InputSignal &input, const StateVector &x0,
                    double horizon, std::size_t samples,
                    const SimulateOptions &options = {});

// ---------------------------------------------------------------------------
// Fixtures
// ---------------------------------------------------------------------------

/// Reference coefficients used to generate the Bergman test data.
BergmanCoefficients bergman_fixture_coefficients();
/// Basal insulin and glucose levels paired with the fixture coefficients.
BergmanInputs bergman_fixture_basal();
/// Three-meal, three-bolus day over `horizon_min` minutes.
InputSignal bergman_fixture_inputs(double horizon_min = 995.0);
/// Equilibrium starting state [i_b, 0, 0].
StateVector bergman_fixture_initial_state();

/// Standard PQRST waveform parameters.
EcgWaveform ecg_fixture_waveform();
/// Constant RR = 1 s and the given baseline wander.
InputSignal ecg_fixture_inputs(double baseline_amplitude = 0.0,
                               double resp_hz = 0.25);

} // namespace dtwin

#endif // DTWIN_DYNAMICS_HPP
