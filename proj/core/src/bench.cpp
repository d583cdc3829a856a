// SPDX-License-Identifier: Apache-2.0
#include "dtwin/bench.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dtwin/sysmem.hpp"
#include "dtwin/textio.hpp"

namespace dtwin::bench {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Measurement
// ---------------------------------------------------------------------------

namespace {

std::mutex &measure_mutex() {
  static std::mutex m;
  return m;
}

} // namespace

Measurement measure_recovery(const std::function<void()> &run,
                             const MeasureOptions &options) {
  if (!(options.sample_hz >= 10.0))
    throw ArgumentError("memory sampling rate must be at least 10 Hz");
  std::lock_guard serial(measure_mutex());

  Measurement m;
  m.baseline_memory_bytes = current_rss_bytes();
  const bool hwm_reset = reset_peak_rss();
  const std::size_t hwm_start = peak_rss_bytes();

  std::atomic<std::size_t> peak{m.baseline_memory_bytes};
  std::atomic<std::size_t> taken{0};
  std::mutex stop_mutex;
  std::condition_variable stop_cv;
  bool stop = false;
  const auto period = std::chrono::duration<double>(1.0 / options.sample_hz);
  std::thread sampler([&] {
    std::unique_lock lock(stop_mutex);
    while (true) {
      const auto rss = current_rss_bytes();
      if (rss > peak.load())
        peak.store(rss);
      taken.fetch_add(1);
      if (stop_cv.wait_for(lock, period, [&] { return stop; }))
        break;
    }
  });

  const auto start = std::chrono::steady_clock::now();
  std::exception_ptr failure;
  try {
    run();
  } catch (...) {
    failure = std::current_exception();
  }
  m.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  {
    std::lock_guard lock(stop_mutex);
    stop = true;
  }
  stop_cv.notify_all();
  sampler.join();

  m.peak_memory_bytes = std::max(peak.load(), current_rss_bytes());
  // The kernel high-water mark catches spikes shorter than the sampling period.
  const std::size_t hwm_end = peak_rss_bytes();
  if (hwm_reset || hwm_end > hwm_start)
    m.peak_memory_bytes = std::max(m.peak_memory_bytes, hwm_end);
  m.samples_taken = taken.load();

  if (failure) {
    std::string what = "measured run failed";
    try {
      std::rethrow_exception(failure);
    } catch (const std::exception &e) {
      what += std::string(": ") + e.what();
    } catch (...) {
    }
    throw MeasurementError(what, m, failure);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Platform samples
// ---------------------------------------------------------------------------

void PlatformSample::validate() const {
  if (label.empty())
    throw ArgumentError("platform sample needs a label");
  if (!(runtime_s > 0.0))
    throw ArgumentError("sample '" + label + "': runtime_s must be positive");
  if (!(dram_mb > 0.0))
    throw ArgumentError("sample '" + label + "': dram_mb must be positive");
  if (avg_power_w && !(*avg_power_w > 0.0))
    throw ArgumentError("sample '" + label + "': avg_power_w must be positive when given");
  if (freq_mhz && !(*freq_mhz > 0.0))
    throw ArgumentError("sample '" + label + "': freq_mhz must be positive when given");
}

namespace {

const std::vector<std::string> kColumns = {"label",   "runtime_s", "avg_power_w",
                                           "dram_mb", "error",     "freq_mhz",
                                           "flops",   "bytes_moved"};

std::string optional_field(const std::optional<double> &v) {
  return v ? format_double(*v) : std::string();
}

} // namespace

std::vector<PlatformSample> read_samples_csv(std::istream &in) {
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::vector<PlatformSample> out;
  while (std::getline(in, line)) {
    ++line_no;
    const auto text = trim(line);
    if (text.empty() || text[0] == '#')
      continue;
    auto fields = split_csv_line(text);
    for (auto &f : fields)
      f = trim(f);
    if (header.empty()) {
      header = fields;
      if (header != kColumns)
        throw ParseError("platform CSV header must be label,runtime_s,avg_power_w,"
                         "dram_mb,error,freq_mhz,flops,bytes_moved",
                         line_no);
      continue;
    }
    if (fields.size() != kColumns.size())
      throw ParseError("expected " + std::to_string(kColumns.size()) + " fields, got " +
                         std::to_string(fields.size()),
                       line_no);
    PlatformSample s;
    s.label = fields[0];
    s.runtime_s = parse_double(fields[1], line_no);
    s.avg_power_w = parse_optional_double(fields[2], line_no);
    s.dram_mb = parse_double(fields[3], line_no);
    s.error = parse_double(fields[4], line_no);
    s.freq_mhz = parse_optional_double(fields[5], line_no);
    s.flops = parse_optional_double(fields[6], line_no);
    s.bytes_moved = parse_optional_double(fields[7], line_no);
    try {
      s.validate();
    } catch (const ArgumentError &e) {
      throw ParseError(e.what(), line_no);
    }
    out.push_back(std::move(s));
  }
  if (header.empty())
    throw ParseError("empty platform CSV", line_no);
  return out;
}

std::vector<PlatformSample> read_samples_csv(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw ArgumentError("cannot open '" + path + "'");
  return read_samples_csv(in);
}

void write_samples_csv(std::ostream &out, const std::vector<PlatformSample> &samples) {
  for (std::size_t c = 0; c < kColumns.size(); ++c)
    out << (c ? "," : "") << kColumns[c];
  out << '\n';
  for (const auto &s : samples) {
    out << s.label << ',' << format_double(s.runtime_s) << ',' << optional_field(s.avg_power_w)
        << ',' << format_double(s.dram_mb) << ',' << format_double(s.error) << ','
        << optional_field(s.freq_mhz) << ',' << optional_field(s.flops) << ','
        << optional_field(s.bytes_moved) << '\n';
  }
}

namespace {

json optional_json(const std::optional<double> &v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json &j, const char *key) {
  if (!j.contains(key) || j.at(key).is_null())
    return std::nullopt;
  return j.at(key).get<double>();
}

json sample_json(const PlatformSample &s) {
  return {{"label", s.label},
          {"runtime_s", s.runtime_s},
          {"avg_power_w", optional_json(s.avg_power_w)},
          {"dram_mb", s.dram_mb},
          {"error", s.error},
          {"freq_mhz", optional_json(s.freq_mhz)},
          {"flops", optional_json(s.flops)},
          {"bytes_moved", optional_json(s.bytes_moved)}};
}

} // namespace

std::string samples_to_json(const std::vector<PlatformSample> &samples) {
  json arr = json::array();
  for (const auto &s : samples)
    arr.push_back(sample_json(s));
  return json{{"format_version", 1}, {"samples", arr}}.dump(2);
}

std::vector<PlatformSample> samples_from_json(const std::string &text) {
  std::vector<PlatformSample> out;
  try {
    const auto j = json::parse(text);
    for (const auto &e : j.at("samples")) {
      for (const auto &[key, _] : e.items())
        if (std::find(kColumns.begin(), kColumns.end(), key) == kColumns.end())
          throw ParseError("unknown platform sample key '" + key + "'");
      PlatformSample s;
      s.label = e.at("label").get<std::string>();
      s.runtime_s = e.at("runtime_s").get<double>();
      s.avg_power_w = optional_from(e, "avg_power_w");
      s.dram_mb = e.at("dram_mb").get<double>();
      s.error = e.value("error", 0.0);
      s.freq_mhz = optional_from(e, "freq_mhz");
      s.flops = optional_from(e, "flops");
      s.bytes_moved = optional_from(e, "bytes_moved");
      s.validate();
      out.push_back(std::move(s));
    }
  } catch (const json::exception &e) {
    throw ParseError(std::string("malformed platform JSON: ") + e.what());
  }
  return out;
}

const PlatformSample &find_sample(const std::vector<PlatformSample> &samples,
                                  const std::string &label) {
  for (const auto &s : samples)
    if (s.label == label)
      return s;
  throw ArgumentError("no platform sample labelled '" + label + "'");
}

// ---------------------------------------------------------------------------
// Ratios
// ---------------------------------------------------------------------------

std::optional<double> perf_per_watt(const PlatformSample &sample) {
  sample.validate();
  if (!sample.avg_power_w)
    return std::nullopt;
  return sample.runtime_s / *sample.avg_power_w;
}

std::vector<RatioRow> ratio_report(const std::vector<PlatformSample> &samples,
                                   const std::string &baseline_label) {
  const auto &base = find_sample(samples, baseline_label);
  base.validate();
  const auto base_ppw = perf_per_watt(base);
  std::vector<RatioRow> rows;
  for (const auto &s : samples) {
    s.validate();
    RatioRow r{s.label,
               base.runtime_s / s.runtime_s,
               s.runtime_s / base.runtime_s,
               base.dram_mb / s.dram_mb,
               s.dram_mb / base.dram_mb,
               std::nullopt};
    const auto ppw = perf_per_watt(s);
    if (ppw && base_ppw)
      r.perf_per_watt_ratio = *ppw / *base_ppw;
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string ratio_report_to_json(const std::vector<RatioRow> &rows,
                                 const std::string &baseline_label) {
  json arr = json::array();
  for (const auto &r : rows)
    arr.push_back({{"label", r.label},
                   {"speedup", r.speedup},
                   {"runtime_ratio", r.runtime_ratio},
                   {"dram_reduction", r.dram_reduction},
                   {"dram_ratio", r.dram_ratio},
                   {"perf_per_watt_ratio", optional_json(r.perf_per_watt_ratio)}});
  return json{{"format_version", 1},
              {"baseline", baseline_label},
              {"perf_per_watt_convention", kPerfPerWattConvention},
              {"rows", arr}}
    .dump(2);
}

// ---------------------------------------------------------------------------
// Roofline
// ---------------------------------------------------------------------------

void RooflineSpec::validate() const {
  if (!(peak_gflops > 0.0) || !std::isfinite(peak_gflops))
    throw ArgumentError("roofline '" + label + "': peak_gflops must be positive");
  if (!(bandwidth_gbs > 0.0) || !std::isfinite(bandwidth_gbs))
    throw ArgumentError("roofline '" + label + "': bandwidth_gbs must be positive");
}

double roofline_attainable(const RooflineSpec &spec, double oi) {
  spec.validate();
  if (!(oi > 0.0))
    throw ArgumentError("operational intensity must be positive");
  return std::min(spec.peak_gflops, spec.bandwidth_gbs * oi);
}

std::vector<double> log_space(double lo, double hi, std::size_t points) {
  if (!(lo > 0.0) || !(hi >= lo))
    throw ArgumentError("log_space needs 0 < lo <= hi");
  if (points < 2)
    throw ArgumentError("log_space needs at least 2 points");
  std::vector<double> out(points);
  const double a = std::log10(lo);
  const double b = std::log10(hi);
  for (std::size_t i = 0; i < points; ++i)
    out[i] = std::pow(10.0, a + (b - a) * static_cast<double>(i) /
                                  static_cast<double>(points - 1));
  out.front() = lo;
  out.back() = hi;
  return out;
}

void write_roofline_csv(std::ostream &out, const std::vector<RooflineSpec> &specs,
                        const std::vector<double> &intensities) {
  out << "oi";
  for (const auto &s : specs) {
    s.validate();
    out << ',' << s.label;
  }
  out << '\n';
  for (double oi : intensities) {
    out << format_double(oi);
    for (const auto &s : specs)
      out << ',' << format_double(roofline_attainable(s, oi));
    out << '\n';
  }
}

std::vector<RooflineSpec> roofline_specs_from_json(const std::string &text) {
  std::vector<RooflineSpec> out;
  try {
    const auto j = json::parse(text);
    for (const auto &e : j.at("platforms")) {
      for (const auto &[key, _] : e.items())
        if (key != "label" && key != "peak_gflops" && key != "bandwidth_gbs" && key != "note")
          throw ParseError("unknown roofline key '" + key + "'");
      RooflineSpec s{e.at("label").get<std::string>(), e.at("peak_gflops").get<double>(),
                     e.at("bandwidth_gbs").get<double>()};
      s.validate();
      out.push_back(std::move(s));
    }
  } catch (const json::exception &e) {
    throw ParseError(std::string("malformed roofline JSON: ") + e.what());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pareto
// ---------------------------------------------------------------------------

std::string to_string(Field field) {
  switch (field) {
  case Field::Runtime: return "runtime_s";
  case Field::Power: return "avg_power_w";
  case Field::Dram: return "dram_mb";
  case Field::Error: return "error";
  case Field::Freq: return "freq_mhz";
  case Field::Flops: return "flops";
  case Field::BytesMoved: return "bytes_moved";
  }
  return "?";
}

Field field_from_string(const std::string &text) {
  for (Field f : {Field::Runtime, Field::Power, Field::Dram, Field::Error, Field::Freq,
                  Field::Flops, Field::BytesMoved})
    if (to_string(f) == text)
      return f;
  throw ArgumentError("unknown sample field '" + text + "'");
}

double field_value(const PlatformSample &sample, Field field) {
  std::optional<double> v;
  switch (field) {
  case Field::Runtime: v = sample.runtime_s; break;
  case Field::Power: v = sample.avg_power_w; break;
  case Field::Dram: v = sample.dram_mb; break;
  case Field::Error: v = sample.error; break;
  case Field::Freq: v = sample.freq_mhz; break;
  case Field::Flops: v = sample.flops; break;
  case Field::BytesMoved: v = sample.bytes_moved; break;
  }
  if (!v)
    throw ArgumentError("sample '" + sample.label + "' has no " + to_string(field));
  return *v;
}

bool dominates(const PlatformSample &a, const PlatformSample &b,
               const std::vector<Objective> &objectives) {
  bool strictly = false;
  for (const auto &o : objectives) {
    double x = field_value(a, o.field);
    double y = field_value(b, o.field);
    if (o.direction == Direction::Maximize)
      std::swap(x, y);
    if (x > y)
      return false;
    if (x < y)
      strictly = true;
  }
  return strictly;
}

std::vector<std::size_t> pareto_front(const std::vector<PlatformSample> &samples,
                                      const std::vector<Objective> &objectives) {
  if (objectives.empty())
    throw ArgumentError("pareto_front needs at least one objective");
  for (const auto &s : samples)
    for (const auto &o : objectives)
      field_value(s, o.field);
  std::vector<std::size_t> front;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < samples.size() && !dominated; ++j)
      dominated = j != i && dominates(samples[j], samples[i], objectives);
    if (!dominated)
      front.push_back(i);
  }
  return front;
}

std::vector<std::vector<bool>> dominance_matrix(const std::vector<PlatformSample> &samples,
                                                const std::vector<Objective> &objectives) {
  std::vector<std::vector<bool>> m(samples.size(), std::vector<bool>(samples.size(), false));
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t j = 0; j < samples.size(); ++j)
      m[i][j] = i != j && dominates(samples[i], samples[j], objectives);
  return m;
}

std::string pareto_to_json(const std::vector<PlatformSample> &samples,
                           const std::vector<Objective> &objectives) {
  const auto front = pareto_front(samples, objectives);
  json obj = json::array();
  for (const auto &o : objectives)
    obj.push_back({{"field", to_string(o.field)},
                   {"direction", o.direction == Direction::Minimize ? "minimize" : "maximize"}});
  json members = json::array();
  for (auto i : front)
    members.push_back(sample_json(samples[i]));
  json labels = json::array();
  for (const auto &s : samples)
    labels.push_back(s.label);
  json matrix = json::array();
  for (const auto &row : dominance_matrix(samples, objectives))
    matrix.push_back(row);
  return json{{"format_version", 1},
              {"objectives", obj},
              {"front", members},
              {"labels", labels},
              {"dominates", matrix}}
    .dump(2);
}

// ---------------------------------------------------------------------------
// Work estimate
// ---------------------------------------------------------------------------

WorkEstimate estimate_epoch_work(std::size_t hidden, std::size_t state, std::size_t input,
                                 std::size_t samples) {
  const double h = static_cast<double>(hidden);
  const double n = static_cast<double>(state);
  const double c = h + n + static_cast<double>(input) + 1.0;
  // Three gate mat-vecs plus element-wise gate algebra and the dense head.
  const double forward = 3.0 * 2.0 * h * c + 12.0 * h + 2.0 * n * h + 6.0 * n;
  const double params = 3.0 * h * c + 3.0 * h + n * h + 2.0 * n;
  const double activations = 6.0 * h + c + 2.0 * n;
  WorkEstimate w;
  w.flops = 3.0 * forward * static_cast<double>(samples);
  w.bytes = 8.0 * (2.0 * params + 2.0 * activations * static_cast<double>(samples));
  return w;
}

} // namespace dtwin::bench
