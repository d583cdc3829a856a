// SPDX-License-Identifier: Apache-2.0
#include "dtwin/neuralflow.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

#include <nlohmann/json.hpp>

#include "dtwin/error.hpp"
#include "dtwin/rng.hpp"

namespace dtwin {

std::size_t FlowShape::weight_count() const {
  const std::size_t h = hidden;
  return 3 * h * (h + state + input + 1) + 3 * h + state * h + state;
}

FlowParams::FlowParams(const FlowShape &shape) : shape_(shape) {
  if (shape.hidden == 0 || shape.state == 0)
    throw StructuralError("flow needs hidden >= 1 and state >= 1");
  const std::size_t h = shape.hidden;
  const std::size_t c = shape.concat();
  const std::size_t n = shape.state;
  std::size_t offset = 0;
  auto add = [&](const char *name, std::size_t rows, std::size_t cols) {
    blocks_.push_back({name, rows, cols, offset});
    offset += rows * cols;
  };
  add("w_update", h, c);
  add("w_reset", h, c);
  add("w_cand", h, c);
  add("b_update", h, 1);
  add("b_reset", h, 1);
  add("b_cand", h, 1);
  add("w_out", n, h);
  add("b_out", n, 1);
  add("log_scale", n, 1);
  data_.assign(offset, 0.0);
}

FlowParams FlowParams::initialize(const FlowShape &shape, std::uint64_t seed) {
  FlowParams p(shape);
  Rng rng(seed);
  auto fill = [&rng](auto &&block, double fan_in) {
    const double bound = 1.0 / std::sqrt(fan_in);
    for (Eigen::Index j = 0; j < block.cols(); ++j)
      for (Eigen::Index i = 0; i < block.rows(); ++i)
        block(i, j) = rng.uniform(-bound, bound);
  };
  const auto concat = static_cast<double>(shape.concat());
  fill(p.w_update(), concat);
  fill(p.w_reset(), concat);
  fill(p.w_cand(), concat);
  fill(p.w_out(), static_cast<double>(shape.hidden));
  return p;
}

bool FlowParams::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v))
      return false;
  return true;
}

FlowParams::MatrixMap FlowParams::matrix(std::size_t block) {
  const auto &b = blocks_.at(block);
  return MatrixMap(data_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                   static_cast<Eigen::Index>(b.cols));
}

FlowParams::ConstMatrixMap FlowParams::matrix(std::size_t block) const {
  const auto &b = blocks_.at(block);
  return ConstMatrixMap(data_.data() + b.offset, static_cast<Eigen::Index>(b.rows),
                        static_cast<Eigen::Index>(b.cols));
}

FlowParams::VectorMap FlowParams::vector(std::size_t block) {
  const auto &b = blocks_.at(block);
  return VectorMap(data_.data() + b.offset, static_cast<Eigen::Index>(b.rows));
}

FlowParams::ConstVectorMap FlowParams::vector(std::size_t block) const {
  const auto &b = blocks_.at(block);
  return ConstVectorMap(data_.data() + b.offset, static_cast<Eigen::Index>(b.rows));
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace {

template <typename V> auto sigmoid(const V &a) {
  return (1.0 / (1.0 + (-a.array()).exp())).matrix();
}

void require_step_shapes(const FlowShape &shape, const Vector &h_prev,
                         const Vector &x) {
  if (static_cast<std::size_t>(h_prev.size()) != shape.hidden)
    throw StructuralError("hidden state has length " + std::to_string(h_prev.size()) +
                          ", expected " + std::to_string(shape.hidden));
  if (static_cast<std::size_t>(x.size()) != shape.step_input())
    throw StructuralError("step input has length " + std::to_string(x.size()) +
                          ", expected " + std::to_string(shape.step_input()));
}

void require_sequence(const FlowShape &shape, const Vector &z0, const Matrix &inputs,
                      const Vector &times) {
  if (times.size() < 2)
    throw ArgumentError("flow_forward needs at least 2 samples");
  if (static_cast<std::size_t>(z0.size()) != shape.state)
    throw StructuralError("z0 has length " + std::to_string(z0.size()) +
                          ", expected " + std::to_string(shape.state));
  if (inputs.rows() != times.size() ||
      static_cast<std::size_t>(inputs.cols()) != shape.input)
    throw StructuralError("flow inputs must be N x " + std::to_string(shape.input));
}

} // namespace

GruStep gru_step(const FlowParams &params, const Vector &h_prev, const Vector &x) {
  const auto &shape = params.shape();
  require_step_shapes(shape, h_prev, x);
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto d = static_cast<Eigen::Index>(shape.step_input());

  Vector concat(h + d);
  concat << h_prev, x;
  GruStep out;
  auto &rec = out.record;
  rec.h_prev = h_prev;
  rec.x = x;
  rec.update = sigmoid(params.w_update() * concat + params.b_update());
  rec.reset = sigmoid(params.w_reset() * concat + params.b_reset());
  concat.head(h) = rec.reset.cwiseProduct(h_prev);
  rec.cand = (params.w_cand() * concat + params.b_cand()).array().tanh().matrix();
  rec.h_next = (Vector::Ones(h) - rec.update).cwiseProduct(h_prev) +
               rec.update.cwiseProduct(rec.cand);
  out.h_next = rec.h_next;
  return out;
}

std::vector<double> normalized_times(const Vector &times) {
  const auto big_n = times.size();
  if (big_n < 2)
    throw ArgumentError("need at least 2 times");
  const double t0 = times(0);
  const double span = times(big_n - 1) - t0;
  if (!(span > 0.0))
    throw ArgumentError("time span must be positive");
  std::vector<double> tau(static_cast<std::size_t>(big_n));
  for (Eigen::Index k = 0; k < big_n; ++k)
    tau[static_cast<std::size_t>(k)] = (times(k) - t0) / span;
  tau.front() = 0.0;
  tau.back() = 1.0;
  return tau;
}

FlowResult flow_forward(const FlowParams &params, const Vector &z0,
                        const Matrix &inputs, const Vector &times) {
  const auto &shape = params.shape();
  require_sequence(shape, z0, inputs, times);
  const auto big_n = times.size();
  const auto n = static_cast<Eigen::Index>(shape.state);
  const auto m = static_cast<Eigen::Index>(shape.input);

  FlowResult out;
  auto &tape = out.tape;
  tape.shape = shape;
  tape.z0 = z0;
  tape.tau = normalized_times(times);
  tape.steps.reserve(static_cast<std::size_t>(big_n));
  tape.head.resize(big_n, n);
  out.z.resize(big_n, n);

  const Vector scale = params.scale();
  Vector hidden = Vector::Zero(static_cast<Eigen::Index>(shape.hidden));
  Vector x(n + m + 1);
  for (Eigen::Index k = 0; k < big_n; ++k) {
    const double tau = tape.tau[static_cast<std::size_t>(k)];
    x << z0, inputs.row(k).transpose(), tau;
    auto step = gru_step(params, hidden, x);
    hidden = step.h_next;
    tape.steps.push_back(std::move(step.record));
    const Vector head =
      (params.w_out() * hidden + params.b_out()).array().tanh().matrix();
    tape.head.row(k) = head.transpose();
    if (tau == 0.0)
      out.z.row(k) = z0.transpose();
    else
      out.z.row(k) = (z0 + tau * scale.cwiseProduct(head)).transpose();
  }
  return out;
}

Matrix FlowTape::replay(const FlowParams &params) const {
  if (!(params.shape() == shape))
    throw StructuralError("tape and parameters have different shapes");
  const Vector scale = params.scale();
  Matrix z(head.rows(), head.cols());
  for (Eigen::Index k = 0; k < head.rows(); ++k) {
    const double t = tau[static_cast<std::size_t>(k)];
    if (t == 0.0)
      z.row(k) = z0.transpose();
    else
      z.row(k) = (z0 + t * scale.cwiseProduct(head.row(k).transpose())).transpose();
  }
  return z;
}

Matrix flow_forward_f32(const FlowParams &params, const Vector &z0,
                        const Matrix &inputs, const Vector &times) {
  const auto &shape = params.shape();
  require_sequence(shape, z0, inputs, times);
  using Vf = Eigen::VectorXf;
  using Mf = Eigen::MatrixXf;
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto n = static_cast<Eigen::Index>(shape.state);
  const auto m = static_cast<Eigen::Index>(shape.input);
  const Mf wu = params.w_update().cast<float>();
  const Mf wr = params.w_reset().cast<float>();
  const Mf wc = params.w_cand().cast<float>();
  const Vf bu = params.b_update().cast<float>();
  const Vf br = params.b_reset().cast<float>();
  const Vf bc = params.b_cand().cast<float>();
  const Mf wo = params.w_out().cast<float>();
  const Vf bo = params.b_out().cast<float>();
  const Vf scale = params.scale().cast<float>();
  const Vf z0f = z0.cast<float>();
  const auto tau = normalized_times(times);

  Matrix z(times.size(), n);
  Vf hidden = Vf::Zero(h);
  Vf concat(h + n + m + 1);
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    const auto t = static_cast<float>(tau[static_cast<std::size_t>(k)]);
    concat << hidden, z0f, inputs.row(k).transpose().cast<float>(), t;
    const Vf u = (1.0f / (1.0f + (-(wu * concat + bu).array()).exp())).matrix();
    const Vf r = (1.0f / (1.0f + (-(wr * concat + br).array()).exp())).matrix();
    concat.head(h) = r.cwiseProduct(hidden);
    const Vf c = (wc * concat + bc).array().tanh().matrix();
    hidden = (Vf::Ones(h) - u).cwiseProduct(hidden) + u.cwiseProduct(c);
    const Vf head = (wo * hidden + bo).array().tanh().matrix();
    if (tau[static_cast<std::size_t>(k)] == 0.0)
      z.row(k) = z0.transpose();
    else
      z.row(k) = (z0f + t * scale.cwiseProduct(head)).cast<double>().transpose();
  }
  return z;
}

// ---------------------------------------------------------------------------
// Backward
// ---------------------------------------------------------------------------

FlowGrads flow_backward(const FlowParams &params, const FlowTape &tape,
                        const Matrix &dl_dz) {
  const auto &shape = params.shape();
  if (!(tape.shape == shape))
    throw StructuralError("tape was recorded with a different flow shape");
  const auto big_n = static_cast<Eigen::Index>(tape.steps.size());
  const auto n = static_cast<Eigen::Index>(shape.state);
  if (dl_dz.rows() != big_n || dl_dz.cols() != n || tape.head.rows() != big_n ||
      tape.tau.size() != tape.steps.size())
    throw StructuralError("gradient seed must be " + std::to_string(big_n) + " x " +
                          std::to_string(n) + " to match the tape");
  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const auto d = static_cast<Eigen::Index>(shape.step_input());

  FlowGrads grads(shape);
  auto gw_u = grads.w_update();
  auto gw_r = grads.w_reset();
  auto gw_c = grads.w_cand();
  auto gb_u = grads.b_update();
  auto gb_r = grads.b_reset();
  auto gb_c = grads.b_cand();
  auto gw_o = grads.w_out();
  auto gb_o = grads.b_out();
  auto gls = grads.log_scale();

  const auto w_u = params.w_update();
  const auto w_r = params.w_reset();
  const auto w_c = params.w_cand();
  const auto w_o = params.w_out();
  const Vector scale = params.scale();

  Vector dh_next = Vector::Zero(h);
  Vector concat(h + d);
  for (Eigen::Index k = big_n - 1; k >= 0; --k) {
    const auto &rec = tape.steps[static_cast<std::size_t>(k)];
    const double tau = tape.tau[static_cast<std::size_t>(k)];
    Vector dh = dh_next;
    if (tau != 0.0) {
      const Vector g = dl_dz.row(k).transpose();
      const Vector y = tape.head.row(k).transpose();
      const Vector dy = tau * scale.cwiseProduct(g);
      gls += tau * y.cwiseProduct(g).cwiseProduct(scale);
      const Vector da = dy.cwiseProduct((Vector::Ones(n) - y.cwiseProduct(y)));
      gw_o.noalias() += da * rec.h_next.transpose();
      gb_o += da;
      dh.noalias() += w_o.transpose() * da;
    }

    // h' = (1 - u) h + u c
    const Vector dc = dh.cwiseProduct(rec.update);
    const Vector du = dh.cwiseProduct(rec.cand - rec.h_prev);
    Vector dh_prev = dh.cwiseProduct(Vector::Ones(h) - rec.update);

    // c = tanh(W_c [r h; x] + b_c)
    const Vector dpc = dc.cwiseProduct(Vector::Ones(h) - rec.cand.cwiseProduct(rec.cand));
    concat << rec.reset.cwiseProduct(rec.h_prev), rec.x;
    gw_c.noalias() += dpc * concat.transpose();
    gb_c += dpc;
    const Vector drh = w_c.leftCols(h).transpose() * dpc;
    const Vector dr = drh.cwiseProduct(rec.h_prev);
    dh_prev += drh.cwiseProduct(rec.reset);

    // gates over [h; x]
    concat << rec.h_prev, rec.x;
    const Vector dpu =
      du.cwiseProduct(rec.update.cwiseProduct(Vector::Ones(h) - rec.update));
    const Vector dpr =
      dr.cwiseProduct(rec.reset.cwiseProduct(Vector::Ones(h) - rec.reset));
    gw_u.noalias() += dpu * concat.transpose();
    gb_u += dpu;
    gw_r.noalias() += dpr * concat.transpose();
    gb_r += dpr;
    dh_prev.noalias() += w_u.leftCols(h).transpose() * dpu;
    dh_prev.noalias() += w_r.leftCols(h).transpose() * dpr;
    dh_next = dh_prev;
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Optimisation
// ---------------------------------------------------------------------------

void apply_update_in_place(std::span<double> params, std::span<const double> grads,
                           OptimizerState &state, const StepConfig &config) {
  if (params.size() != grads.size())
    throw StructuralError("parameter and gradient sizes differ");
  const double lr = config.learning_rate;
  if (config.rule == StepRule::GradientDescent) {
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i] -= lr * grads[i];
    ++state.step;
    return;
  }
  if (state.first.empty() && state.second.empty()) {
    state.first.assign(params.size(), 0.0);
    state.second.assign(params.size(), 0.0);
  }
  if (state.first.size() != params.size() || state.second.size() != params.size())
    throw StructuralError("optimizer state does not match parameter size");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    state.first[i] = config.beta1 * state.first[i] + (1.0 - config.beta1) * g;
    state.second[i] = config.beta2 * state.second[i] + (1.0 - config.beta2) * g * g;
    const double m_hat = state.first[i] / c1;
    const double v_hat = state.second[i] / c2;
    params[i] -= lr * m_hat / (std::sqrt(v_hat) + config.epsilon);
  }
}

UpdateResult apply_update(std::span<const double> params, std::span<const double> grads,
                          const OptimizerState &state, const StepConfig &config) {
  UpdateResult out{std::vector<double>(params.begin(), params.end()), state};
  apply_update_in_place(out.params, grads, out.state, config);
  return out;
}

std::pair<FlowParams, OptimizerState> apply_update(const FlowParams &params,
                                                   const FlowGrads &grads,
                                                   const OptimizerState &state,
                                                   const StepConfig &config) {
  if (!(params.shape() == grads.shape()))
    throw StructuralError("gradient shape differs from parameter shape");
  FlowParams next = params;
  OptimizerState next_state = state;
  apply_update_in_place(next.values(), grads.values(), next_state, config);
  return {std::move(next), std::move(next_state)};
}

// ---------------------------------------------------------------------------
// Serialisation
// ---------------------------------------------------------------------------

std::string flow_params_to_json(const FlowParams &params) {
  nlohmann::ordered_json doc;
  doc["format_version"] = kFlowFormatVersion;
  doc["kind"] = "flow_params";
  doc["shape"] = {{"hidden", params.shape().hidden},
                  {"state", params.shape().state},
                  {"input", params.shape().input}};
  auto arrays = nlohmann::ordered_json::array();
  const auto values = params.values();
  for (const auto &b : params.blocks()) {
    arrays.push_back({{"name", b.name},
                      {"shape", {b.rows, b.cols}},
                      {"data", std::vector<double>(values.begin() + b.offset,
                                                   values.begin() + b.offset +
                                                     b.rows * b.cols)}});
  }
  doc["arrays"] = std::move(arrays);
  return doc.dump(2);
}

FlowParams flow_params_from_json(const std::string &text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("flow params JSON: ") + e.what());
  }
  try {
    if (doc.at("format_version").get<int>() != kFlowFormatVersion)
      throw ParseError("unsupported flow params format_version");
    if (doc.at("kind").get<std::string>() != "flow_params")
      throw ParseError("document is not flow_params");
    FlowShape shape;
    shape.hidden = doc.at("shape").at("hidden").get<std::size_t>();
    shape.state = doc.at("shape").at("state").get<std::size_t>();
    shape.input = doc.at("shape").at("input").get<std::size_t>();
    FlowParams params(shape);
    const auto &arrays = doc.at("arrays");
    if (arrays.size() != params.blocks().size())
      throw ParseError("flow params JSON has wrong number of arrays");
    auto values = params.values();
    for (std::size_t i = 0; i < arrays.size(); ++i) {
      const auto &b = params.blocks()[i];
      const auto &a = arrays[i];
      if (a.at("name").get<std::string>() != b.name)
        throw ParseError("expected array '" + b.name + "'");
      const auto dims = a.at("shape").get<std::vector<std::size_t>>();
      if (dims.size() != 2 || dims[0] != b.rows || dims[1] != b.cols)
        throw ParseError("array '" + b.name + "' has the wrong shape");
      const auto data = a.at("data").get<std::vector<double>>();
      if (data.size() != b.rows * b.cols)
        throw ParseError("array '" + b.name + "' has the wrong element count");
      std::copy(data.begin(), data.end(), values.begin() + b.offset);
    }
    return params;
  } catch (const nlohmann::json::exception &e) {
    throw ParseError(std::string("flow params JSON: ") + e.what());
  }
}

namespace {

constexpr char kMagic[8] = {'D', 'T', 'W', 'F', 'L', 'O', 'W', '1'};

void put_u64(std::ostream &out, std::uint64_t v) {
  char bytes[8];
  for (int i = 0; i < 8; ++i)
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
  out.write(bytes, 8);
}

std::uint64_t get_u64(std::istream &in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char *>(bytes), 8))
    throw ParseError("truncated flow params binary");
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i)
    v = (v << 8) | bytes[i];
  return v;
}

} // namespace

void write_flow_params_binary(std::ostream &out, const FlowParams &params) {
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t version = kFlowFormatVersion;
  for (int i = 0; i < 4; ++i)
    out.put(static_cast<char>((version >> (8 * i)) & 0xffu));
  put_u64(out, params.shape().hidden);
  put_u64(out, params.shape().state);
  put_u64(out, params.shape().input);
  put_u64(out, params.size());
  for (double v : params.values())
    put_u64(out, std::bit_cast<std::uint64_t>(v));
}

FlowParams read_flow_params_binary(std::istream &in) {
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not a flow params binary file");
  unsigned char vb[4];
  if (!in.read(reinterpret_cast<char *>(vb), 4))
    throw ParseError("truncated flow params binary");
  const std::uint32_t version = vb[0] | (vb[1] << 8) | (vb[2] << 16) |
                                (static_cast<std::uint32_t>(vb[3]) << 24);
  if (version != kFlowFormatVersion)
    throw ParseError("unsupported flow params binary version");
  FlowShape shape;
  shape.hidden = get_u64(in);
  shape.state = get_u64(in);
  shape.input = get_u64(in);
  const auto count = get_u64(in);
  FlowParams params(shape);
  if (count != params.size())
    throw ParseError("flow params binary element count disagrees with shape");
  for (auto &v : params.values())
    v = std::bit_cast<double>(get_u64(in));
  return params;
}

} // namespace dtwin
