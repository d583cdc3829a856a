// SPDX-License-Identifier: Apache-2.0
/**
 * @file   neuralflow.hpp
 * @brief  GRU + dense neural-flow layer standing in for an ODE-solver cell,
 *         with hand-written backpropagation through time.
 *
 * For samples k = 0..N-1 with normalised time tau_k in [0, 1]:
 *
 *     x_k = [z0; u(t_k); tau_k]
 *     h_k = GRU(h_{k-1}, x_k),                     h_{-1} = 0
 *     Z_k = z0 + tau_k * s (.) tanh(W_out h_k + b_out)
 *
 * so Z_0 = z0 for every parameter value. s = exp(log_scale) is a learnable
 * positive per-channel scale bounding |Z_k - z0| by s.
 */
#ifndef DTWIN_NEURALFLOW_HPP
#define DTWIN_NEURALFLOW_HPP

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "dtwin/linalg.hpp"

namespace dtwin {

struct FlowShape {
  std::size_t hidden = 16;
  std::size_t state = 1;
  std::size_t input = 0;

  /// Width of the per-step input [z0; u; tau].
  std::size_t step_input() const { return state + input + 1; }
  /// Width of [h; x].
  std::size_t concat() const { return hidden + step_input(); }
  /// 3H(H + n + m + 1) + 3H + nH + n: GRU and dense weights and biases.
  std::size_t weight_count() const;
  /// weight_count() plus the n head scales.
  std::size_t parameter_count() const { return weight_count() + state; }

  bool operator==(const FlowShape &) const = default;
};

/// A named contiguous block inside FlowParams storage (column-major).
struct FlowBlock {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  std::size_t offset;
};

class FlowParams {
public:
  using MatrixMap = Eigen::Map<Matrix>;
  using ConstMatrixMap = Eigen::Map<const Matrix>;
  using VectorMap = Eigen::Map<Vector>;
  using ConstVectorMap = Eigen::Map<const Vector>;

  FlowParams() = default;
  /// All weights zero and unit head scale.
  explicit FlowParams(const FlowShape &shape);

  /// Weights uniform in +-1/sqrt(fan_in), biases zero, unit head scale.
  static FlowParams initialize(const FlowShape &shape, std::uint64_t seed);

  const FlowShape &shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  const std::vector<FlowBlock> &blocks() const { return blocks_; }

  MatrixMap w_update() { return matrix(0); }
  MatrixMap w_reset() { return matrix(1); }
  MatrixMap w_cand() { return matrix(2); }
  VectorMap b_update() { return vector(3); }
  VectorMap b_reset() { return vector(4); }
  VectorMap b_cand() { return vector(5); }
  MatrixMap w_out() { return matrix(6); }
  VectorMap b_out() { return vector(7); }
  VectorMap log_scale() { return vector(8); }

  ConstMatrixMap w_update() const { return matrix(0); }
  ConstMatrixMap w_reset() const { return matrix(1); }
  ConstMatrixMap w_cand() const { return matrix(2); }
  ConstVectorMap b_update() const { return vector(3); }
  ConstVectorMap b_reset() const { return vector(4); }
  ConstVectorMap b_cand() const { return vector(5); }
  ConstMatrixMap w_out() const { return matrix(6); }
  ConstVectorMap b_out() const { return vector(7); }
  ConstVectorMap log_scale() const { return vector(8); }

  Vector scale() const { return log_scale().array().exp().matrix(); }

  bool all_finite() const;
  bool operator==(const FlowParams &other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

private:
  MatrixMap matrix(std::size_t block);
  ConstMatrixMap matrix(std::size_t block) const;
  VectorMap vector(std::size_t block);
  ConstVectorMap vector(std::size_t block) const;

  FlowShape shape_;
  std::vector<FlowBlock> blocks_;
  std::vector<double> data_;
};

/// Gradients have exactly the parameter layout.
using FlowGrads = FlowParams;

/// Everything one GRU step needs for its backward pass.
struct GruRecord {
  Vector h_prev;
  Vector x;
  Vector update;
  Vector reset;
  Vector cand;
  Vector h_next;
};

struct FlowTape {
  FlowShape shape;
  Vector z0;
  std::vector<double> tau;
  std::vector<GruRecord> steps;
  Matrix head; ///< N x n, tanh(W_out h_k + b_out)

  std::size_t size() const { return steps.size(); }
  /// Recomputes Z from the recorded head activations.
  Matrix replay(const FlowParams &params) const;
};

struct FlowResult {
  Matrix z; ///< N x n
  FlowTape tape;
};

struct GruStep {
  Vector h_next;
  GruRecord record;
};

/**
 * u = sigma(W_u [h; x] + b_u), r = sigma(W_r [h; x] + b_r),
 * c = tanh(W_c [r (.) h; x] + b_c), h' = (1 - u) (.) h + u (.) c.
 */
GruStep gru_step(const FlowParams &params, const Vector &h_prev, const Vector &x);

/// tau_k = (t_k - t_0) / (t_{N-1} - t_0).
std::vector<double> normalized_times(const Vector &times);

/// inputs is N x m, times has N entries, N >= 2.
FlowResult flow_forward(const FlowParams &params, const Vector &z0,
                        const Matrix &inputs, const Vector &times);

/// Same forward computation in single precision (no tape).
Matrix flow_forward_f32(const FlowParams &params, const Vector &z0,
                        const Matrix &inputs, const Vector &times);

/// Reverse-mode gradient of sum(dL_dZ (.) Z) with respect to every parameter.
FlowGrads flow_backward(const FlowParams &params, const FlowTape &tape,
                        const Matrix &dl_dz);

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

enum class StepRule { GradientDescent, Adam };

struct StepConfig {
  StepRule rule = StepRule::Adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  std::vector<double> first;
  std::vector<double> second;
  std::uint64_t step = 0;

  bool operator==(const OptimizerState &) const = default;
};

struct UpdateResult {
  std::vector<double> params;
  OptimizerState state;
};

/// Pure update. An empty state is sized on first use.
UpdateResult apply_update(std::span<const double> params, std::span<const double> grads,
                          const OptimizerState &state, const StepConfig &config);

/// In-place form used inside training loops.
void apply_update_in_place(std::span<double> params, std::span<const double> grads,
                           OptimizerState &state, const StepConfig &config);

std::pair<FlowParams, OptimizerState> apply_update(const FlowParams &params,
                                                   const FlowGrads &grads,
                                                   const OptimizerState &state,
                                                   const StepConfig &config);

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

inline constexpr int kFlowFormatVersion = 1;

/// JSON document of named arrays with explicit shapes.
std::string flow_params_to_json(const FlowParams &params);
FlowParams flow_params_from_json(const std::string &text);

/// Little-endian binary: magic "DTWFLOW1", u32 version, u64 H, n, m, u64
/// count, then `count` IEEE-754 doubles. Bit-exact round trip.
void write_flow_params_binary(std::ostream &out, const FlowParams &params);
FlowParams read_flow_params_binary(std::istream &in);

} // namespace dtwin

#endif // DTWIN_NEURALFLOW_HPP
