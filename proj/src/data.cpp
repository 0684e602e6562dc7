#include "fsgpt/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "fsgpt/rng.hpp"

namespace fsgpt {

namespace {

constexpr double kPi = 3.14159265358979323846;

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double_strict(const std::string& s, const char* what) {
  double out = 0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ContractError(cat(what, ": not a number: '", s, "'"));
  }
  return out;
}

size_t parse_size_strict(const std::string& s, const char* what) {
  size_t out = 0;
  const char* begin = s.data();
  const char* end = begin + s.size();
  auto res = std::from_chars(begin, end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw ContractError(cat(what, ": not a non-negative integer: '", s, "'"));
  }
  return out;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return cells;
}

// Population standard deviation.
double series_std(const std::vector<double>& x) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  return std::sqrt(var);
}

struct SinusoidBank {
  std::vector<double> freq;  // cycles per sample
};

SinusoidBank make_bank(uint64_t seed) {
  Rng rng(derive_seed(seed, "bank"));
  SinusoidBank bank;
  for (int i = 0; i < 4; ++i) {
    // log-uniform periods between 250 and 3000 samples
    const double log_p = rng.uniform(std::log(250.0), std::log(3000.0));
    bank.freq.push_back(1.0 / std::exp(log_p));
  }
  return bank;
}

// One covariate channel: weighted fleet sinusoids + AR(1) noise + drift,
// then an affine map into physical units.
std::vector<double> generate_covariate(const SinusoidBank& bank, size_t num_points,
                                       uint64_t chan_seed) {
  Rng rng(chan_seed);
  const size_t n_sin = 2 + rng.integer(3);
  std::vector<double> amp(bank.freq.size(), 0.0), phase(bank.freq.size(), 0.0);
  for (size_t s = 0; s < n_sin; ++s) {
    const size_t k = rng.integer(bank.freq.size());
    amp[k] += rng.uniform(0.6, 1.4);
    phase[k] = rng.uniform(0.0, 2.0 * kPi);
  }
  double det_power = 0.0;
  for (double a : amp) det_power += 0.5 * a * a;
  const double det_rms = std::sqrt(std::max(det_power, 1e-12));

  const double ar_phi = 0.9;
  const double ar_std = 0.15 * det_rms;
  const double ar_innov = ar_std * std::sqrt(1.0 - ar_phi * ar_phi);

  const double drift_amp = 0.25 * det_rms;
  const double drift_period = 8192.0;
  const double drift_phase = rng.uniform(0.0, 2.0 * kPi);
  const double slope = rng.uniform(-0.5, 0.5) * det_rms / static_cast<double>(num_points);

  const double scale = rng.uniform(1.0, 8.0);
  const double offset = rng.uniform(-20.0, 20.0);

  std::vector<double> out(num_points);
  double ar = 0.0;
  for (size_t t = 0; t < num_points; ++t) {
    double v = 0.0;
    for (size_t k = 0; k < bank.freq.size(); ++k) {
      if (amp[k] != 0.0) v += amp[k] * std::sin(2.0 * kPi * bank.freq[k] * t + phase[k]);
    }
    ar = ar_phi * ar + rng.normal(0.0, ar_innov);
    v += ar;
    v += drift_amp * std::sin(2.0 * kPi * t / drift_period + drift_phase);
    v += slope * static_cast<double>(t);
    out[t] = offset + scale * v;
  }
  return out;
}

}  // namespace

std::string fault_type_name(FaultType t) {
  switch (t) {
    case FaultType::under_pressure: return "under_pressure";
    case FaultType::over_pressure: return "over_pressure";
    case FaultType::over_temperature: return "over_temperature";
  }
  throw ContractError("unknown fault type tag");
}

FaultType parse_fault_type(const std::string& s) {
  if (s == "under_pressure") return FaultType::under_pressure;
  if (s == "over_pressure") return FaultType::over_pressure;
  if (s == "over_temperature") return FaultType::over_temperature;
  throw ContractError("unknown fault type " + s);
}

void FleetSpec::validate() {
  if (fleet_id.empty()) throw ContractError("FleetSpec: empty fleet_id");
  if (num_channels < 2) throw ContractError("FleetSpec: need at least 2 channels");
  if (!(sample_freq_hz > 0)) throw ContractError("FleetSpec: sample_freq_hz must be positive");
  if (baseline_channel >= num_channels) {
    throw ContractError(cat("FleetSpec: baseline_channel ", baseline_channel,
                            " out of range for ", num_channels, " channels"));
  }
  if (anomaly_rate < 0.0 || anomaly_rate > 1.0) {
    throw ContractError("FleetSpec: anomaly_rate must be in [0, 1]");
  }
  if (channel_names.empty()) {
    const bool thermal = fault_type == FaultType::over_temperature;
    for (size_t c = 0; c < num_channels; ++c) {
      if (c == baseline_channel) {
        channel_names.push_back(thermal ? "duct_temp" : "bleed_pressure");
        channel_units.push_back(thermal ? "degC" : "psi");
      } else {
        channel_names.push_back("sensor_" + std::to_string(c));
        channel_units.push_back("au");
      }
    }
  }
  if (channel_names.size() != num_channels ||
      channel_units.size() != num_channels) {
    throw ContractError("FleetSpec: channel names/units must match num_channels");
  }
}

FleetSpec desk_fleet_a() {
  FleetSpec s;
  s.fleet_id = "fleetA";
  s.num_channels = 8;
  s.sample_freq_hz = 0.2;
  s.fault_type = FaultType::under_pressure;
  s.anomaly_rate = 0.0;
  s.validate();
  return s;
}

FleetSpec desk_fleet_b() {
  FleetSpec s;
  s.fleet_id = "fleetB";
  s.num_channels = 6;
  s.sample_freq_hz = 1.0;
  s.fault_type = FaultType::over_pressure;
  s.anomaly_rate = 0.0;
  s.validate();
  return s;
}

FleetSpec desk_fleet_c() {
  FleetSpec s;
  s.fleet_id = "fleetC";
  s.num_channels = 4;
  s.sample_freq_hz = 0.25;
  s.fault_type = FaultType::over_temperature;
  s.anomaly_rate = 0.4;
  s.validate();
  return s;
}

FleetSpec desk_fleet(const std::string& name) {
  if (name == "fleetA") return desk_fleet_a();
  if (name == "fleetB") return desk_fleet_b();
  if (name == "fleetC") return desk_fleet_c();
  throw ContractError("unknown fleet spec " + name + " (expected fleetA, fleetB, or fleetC)");
}

Dataset generate_fleet(const FleetSpec& spec_in, size_t num_points, uint64_t seed,
                       size_t window_len) {
  FleetSpec spec = spec_in;
  spec.validate();
  if (window_len == 0) throw ContractError("generate_fleet: window_len must be positive");
  if (num_points < window_len) {
    throw ContractError(cat("generate_fleet: num_points ", num_points,
                            " shorter than one window of ", window_len));
  }
  Dataset ds;
  ds.spec = spec;
  ds.seed = seed;
  ds.values.resize(spec.num_channels);

  const SinusoidBank bank = make_bank(seed);
  for (size_t c = 0; c < spec.num_channels; ++c) {
    if (c == spec.baseline_channel) continue;
    ds.values[c] =
        generate_covariate(bank, num_points, derive_seed(seed, "chan." + std::to_string(c)));
  }

  // Baseline channel: smooth, mostly linear map of up to three standardized
  // covariates, plus small noise, into its own physical units.
  std::vector<size_t> cov;
  for (size_t c = 0; c < spec.num_channels && cov.size() < 3; ++c) {
    if (c != spec.baseline_channel) cov.push_back(c);
  }
  Rng brng(derive_seed(seed, "baseline"));
  std::vector<double> w(cov.size()), cmean(cov.size()), cstd(cov.size());
  for (size_t i = 0; i < cov.size(); ++i) {
    w[i] = (brng.uniform() < 0.5 ? -1.0 : 1.0) * brng.uniform(0.4, 1.0);
    const auto& x = ds.values[cov[i]];
    double m = 0;
    for (double v : x) m += v;
    m /= static_cast<double>(num_points);
    cmean[i] = m;
    cstd[i] = std::max(series_std(x), 1e-12);
  }
  const double bend = brng.uniform(0.2, 0.4);
  double wpow = bend * bend;
  for (double wi : w) wpow += wi * wi;
  const double det_rms = std::sqrt(wpow);
  const double noise_std = 0.15 * det_rms;
  // Offset keeps the channel away from zero so relative errors stay stable.
  const double bscale = brng.uniform(1.0, 3.0);
  const double boffset = brng.uniform(40.0, 80.0);

  auto& y = ds.values[spec.baseline_channel];
  y.resize(num_points);
  for (size_t t = 0; t < num_points; ++t) {
    double v = 0.0;
    for (size_t i = 0; i < cov.size(); ++i) {
      v += w[i] * (ds.values[cov[i]][t] - cmean[i]) / cstd[i];
    }
    const double z0 = (ds.values[cov[0]][t] - cmean[0]) / cstd[0];
    v += bend * std::tanh(z0);
    v += brng.normal(0.0, noise_std);
    y[t] = boffset + bscale * v;
  }
  ds.clean_baseline = y;

  if (spec.anomaly_rate > 0.0) {
    ds.labels.assign(num_points, 0);
    const size_t windows = num_points / window_len;
    const size_t faulted =
        static_cast<size_t>(std::llround(spec.anomaly_rate * static_cast<double>(windows)));
    Rng frng(derive_seed(seed, "faults"));
    auto chosen = frng.sample_indices(windows, std::min(faulted, windows));
    for (size_t widx : chosen) {
      SignalWindow win;
      win.fleet_id = spec.fleet_id;
      win.start = widx * window_len;
      win.values.resize(spec.num_channels);
      for (size_t c = 0; c < spec.num_channels; ++c) {
        win.values[c].assign(ds.values[c].begin() + win.start,
                             ds.values[c].begin() + win.start + window_len);
      }
      inject_fault(win, spec.fault_type, spec.baseline_channel,
                   derive_seed(seed, "fault." + std::to_string(widx)));
      std::copy(win.values[spec.baseline_channel].begin(),
                win.values[spec.baseline_channel].end(),
                ds.values[spec.baseline_channel].begin() + win.start);
      std::copy(win.labels.begin(), win.labels.end(), ds.labels.begin() + win.start);
    }
  }
  return ds;
}

void inject_fault(SignalWindow& window, FaultType type, size_t baseline_channel, uint64_t seed) {
  const size_t L = window.length();
  if (L == 0) throw ContractError("inject_fault: empty window");
  if (baseline_channel >= window.channels()) {
    throw ContractError("inject_fault: baseline channel out of range");
  }
  if (window.labeled() && window.any_anomaly()) {
    throw ContractError("inject_fault: window already carries anomalies");
  }
  Rng rng(seed);
  const size_t lo = std::max<size_t>(1, (L * 5 + 99) / 100);
  const size_t hi = std::max(lo, L * 30 / 100);
  const size_t seg_len = lo + rng.integer(hi - lo + 1);
  const size_t start = rng.integer(L - seg_len + 1);

  auto& ch = window.values[baseline_channel];
  const double sigma = std::max(series_std(ch), 1e-12);
  window.labels.assign(L, 0);
  switch (type) {
    case FaultType::under_pressure: {
      const double delta = -rng.uniform(2.0, 5.0) * sigma;
      for (size_t i = 0; i < seg_len; ++i) ch[start + i] += delta;
      break;
    }
    case FaultType::over_pressure: {
      const double delta = rng.uniform(2.0, 5.0) * sigma;
      for (size_t i = 0; i < seg_len; ++i) ch[start + i] += delta;
      break;
    }
    case FaultType::over_temperature: {
      // Ramp onsets at the 2-sigma detectability floor every labeled sample
      // must clear, then climbs to its peak across the segment.
      const double peak = rng.uniform(3.0, 6.0) * sigma;
      const double onset = 2.0 * sigma;
      for (size_t i = 0; i < seg_len; ++i) {
        ch[start + i] +=
            onset + (peak - onset) * static_cast<double>(i + 1) / static_cast<double>(seg_len);
      }
      break;
    }
  }
  for (size_t i = 0; i < seg_len; ++i) window.labels[start + i] = 1;
}

namespace {

void append_block_windows(const Dataset& ds, size_t lo, size_t hi, size_t L, size_t stride,
                          std::vector<SignalWindow>& out) {
  if (hi < lo || hi - lo < L) return;
  for (size_t start = lo; start + L <= hi; start += stride) {
    SignalWindow w;
    w.fleet_id = ds.spec.fleet_id;
    w.start = start;
    w.values.resize(ds.channels());
    for (size_t c = 0; c < ds.channels(); ++c) {
      w.values[c].assign(ds.values[c].begin() + start, ds.values[c].begin() + start + L);
    }
    if (ds.labeled()) {
      w.labels.assign(ds.labels.begin() + start, ds.labels.begin() + start + L);
    }
    out.push_back(std::move(w));
  }
}

}  // namespace

WindowSet make_windows(const Dataset& ds, size_t window_len, size_t stride) {
  if (window_len == 0 || stride == 0) {
    throw ContractError("make_windows: window_len and stride must be positive");
  }
  const size_t n = ds.num_points();
  if (n < window_len) {
    throw ContractError(cat("make_windows: dataset of ", n, " points shorter than window ",
                            window_len));
  }
  const size_t b1 = n * 70 / 100;
  const size_t b2 = n * 85 / 100;
  WindowSet set;
  append_block_windows(ds, 0, b1, window_len, stride, set.train);
  append_block_windows(ds, b1, b2, window_len, stride, set.val);
  append_block_windows(ds, b2, n, window_len, stride, set.test);
  return set;
}

double baseline_ols_r2(const Dataset& ds) {
  const size_t M = ds.channels();
  const size_t n = ds.num_points();
  const size_t b = ds.spec.baseline_channel;
  std::vector<size_t> cov;
  for (size_t c = 0; c < M; ++c) {
    if (c != b) cov.push_back(c);
  }
  const size_t k = cov.size() + 1;  // intercept first

  std::vector<double> xtx(k * k, 0.0), xty(k, 0.0);
  double ysum = 0.0, ysq = 0.0;
  size_t used = 0;
  std::vector<double> row(k);
  for (size_t t = 0; t < n; ++t) {
    if (ds.labeled() && ds.labels[t]) continue;
    row[0] = 1.0;
    for (size_t i = 0; i < cov.size(); ++i) row[i + 1] = ds.values[cov[i]][t];
    const double y = ds.values[b][t];
    for (size_t i = 0; i < k; ++i) {
      for (size_t j = 0; j < k; ++j) xtx[i * k + j] += row[i] * row[j];
      xty[i] += row[i] * y;
    }
    ysum += y;
    ysq += y * y;
    ++used;
  }
  if (used < k + 1) throw ContractError("baseline_ols_r2: not enough normal samples");

  // Gaussian elimination with partial pivoting on the normal equations.
  std::vector<double> a(xtx);
  std::vector<double> beta(xty);
  for (size_t col = 0; col < k; ++col) {
    size_t pivot = col;
    for (size_t r = col + 1; r < k; ++r) {
      if (std::fabs(a[r * k + col]) > std::fabs(a[pivot * k + col])) pivot = r;
    }
    if (std::fabs(a[pivot * k + col]) < 1e-12) {
      throw ContractError("baseline_ols_r2: singular design matrix");
    }
    if (pivot != col) {
      for (size_t j = 0; j < k; ++j) std::swap(a[col * k + j], a[pivot * k + j]);
      std::swap(beta[col], beta[pivot]);
    }
    for (size_t r = col + 1; r < k; ++r) {
      const double f = a[r * k + col] / a[col * k + col];
      for (size_t j = col; j < k; ++j) a[r * k + j] -= f * a[col * k + j];
      beta[r] -= f * beta[col];
    }
  }
  for (size_t col = k; col-- > 0;) {
    for (size_t j = col + 1; j < k; ++j) beta[col] -= a[col * k + j] * beta[j];
    beta[col] /= a[col * k + col];
  }

  double ss_res = 0.0;
  const double ymean = ysum / static_cast<double>(used);
  double ss_tot = ysq - static_cast<double>(used) * ymean * ymean;
  for (size_t t = 0; t < n; ++t) {
    if (ds.labeled() && ds.labels[t]) continue;
    double pred = beta[0];
    for (size_t i = 0; i < cov.size(); ++i) pred += beta[i + 1] * ds.values[cov[i]][t];
    const double r = ds.values[b][t] - pred;
    ss_res += r * r;
  }
  if (ss_tot <= 0.0) return 1.0;
  return 1.0 - ss_res / ss_tot;
}

std::string manifest_text(const Dataset& ds) {
  std::ostringstream out;
  out << "fleet_id=" << ds.spec.fleet_id << "\n";
  out << "num_channels=" << ds.spec.num_channels << "\n";
  out << "sample_freq_hz=" << format_double(ds.spec.sample_freq_hz) << "\n";
  out << "fault_type=" << fault_type_name(ds.spec.fault_type) << "\n";
  out << "baseline_channel=" << ds.spec.baseline_channel << "\n";
  out << "anomaly_rate=" << format_double(ds.spec.anomaly_rate) << "\n";
  out << "has_labels=" << (ds.labeled() ? 1 : 0) << "\n";
  out << "num_points=" << ds.num_points() << "\n";
  out << "seed=" << ds.seed << "\n";
  if (!ds.config_hash.empty()) out << "config_hash=" << ds.config_hash << "\n";
  for (size_t c = 0; c < ds.spec.num_channels; ++c) {
    out << "channel." << c << ".name=" << ds.spec.channel_names[c] << "\n";
    out << "channel." << c << ".unit=" << ds.spec.channel_units[c] << "\n";
  }
  return out.str();
}

void write_dataset(const Dataset& ds, const std::string& csv_path,
                   const std::string& manifest_path) {
  {
    std::ofstream mf(manifest_path, std::ios::binary);
    if (!mf) throw ContractError("cannot write manifest " + manifest_path);
    mf << manifest_text(ds);
  }
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw ContractError("cannot write CSV " + csv_path);
  std::string buf;
  buf.reserve(1 << 20);
  buf += "t";
  for (const auto& name : ds.spec.channel_names) {
    buf += ',';
    buf += name;
  }
  if (ds.labeled()) buf += ",ad_label";
  buf += '\n';
  const size_t n = ds.num_points();
  char num[32];
  for (size_t t = 0; t < n; ++t) {
    auto res = std::to_chars(num, num + sizeof(num), t);
    buf.append(num, res.ptr);
    for (size_t c = 0; c < ds.channels(); ++c) {
      buf += ',';
      auto r = std::to_chars(num, num + sizeof(num), ds.values[c][t]);
      buf.append(num, r.ptr);
    }
    if (ds.labeled()) {
      buf += ',';
      buf += ds.labels[t] ? '1' : '0';
    }
    buf += '\n';
    if (buf.size() > (1 << 20) - 512) {
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      buf.clear();
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw ContractError("write failed for " + csv_path);
}

namespace {

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError(path + ": expected key=value, got '" + line + "'");
    }
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

const std::string& kv_require(const std::map<std::string, std::string>& kv,
                              const std::string& key, const std::string& path) {
  auto it = kv.find(key);
  if (it == kv.end()) throw ContractError(path + ": missing key " + key);
  return it->second;
}

}  // namespace

Dataset load_csv(const std::string& csv_path, const std::string& manifest_path) {
  auto kv = parse_kv_file(manifest_path);
  Dataset ds;
  ds.spec.fleet_id = kv_require(kv, "fleet_id", manifest_path);
  ds.spec.num_channels = parse_size_strict(kv_require(kv, "num_channels", manifest_path),
                                            "num_channels");
  ds.spec.sample_freq_hz =
      parse_double_strict(kv_require(kv, "sample_freq_hz", manifest_path), "sample_freq_hz");
  ds.spec.fault_type = parse_fault_type(kv_require(kv, "fault_type", manifest_path));
  ds.spec.baseline_channel =
      parse_size_strict(kv_require(kv, "baseline_channel", manifest_path), "baseline_channel");
  if (kv.count("anomaly_rate")) {
    ds.spec.anomaly_rate = parse_double_strict(kv.at("anomaly_rate"), "anomaly_rate");
  }
  const bool has_labels =
      parse_size_strict(kv_require(kv, "has_labels", manifest_path), "has_labels") != 0;
  if (kv.count("seed")) ds.seed = parse_size_strict(kv.at("seed"), "seed");
  if (kv.count("config_hash")) ds.config_hash = kv.at("config_hash");
  for (size_t c = 0; c < ds.spec.num_channels; ++c) {
    ds.spec.channel_names.push_back(
        kv_require(kv, cat("channel.", c, ".name"), manifest_path));
    ds.spec.channel_units.push_back(
        kv_require(kv, cat("channel.", c, ".unit"), manifest_path));
  }
  ds.spec.validate();

  std::ifstream in(csv_path, std::ios::binary);
  if (!in) throw ContractError("cannot open " + csv_path);
  std::string line;
  if (!std::getline(in, line)) throw ContractError(csv_path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto header = split_csv_line(line);
  const size_t M = ds.spec.num_channels;
  const size_t want_cols = 1 + M + (has_labels ? 1 : 0);
  if (header.size() != want_cols || header[0] != "t") {
    throw ContractError(cat(csv_path, ": header does not match manifest (want ", want_cols,
                            " columns starting with t, got ", header.size(), ")"));
  }
  for (size_t c = 0; c < M; ++c) {
    if (header[c + 1] != ds.spec.channel_names[c]) {
      throw ContractError(cat(csv_path, ": header column ", c + 1, " is '", header[c + 1],
                              "', manifest says '", ds.spec.channel_names[c], "'"));
    }
  }
  if (has_labels && header.back() != "ad_label") {
    throw ContractError(csv_path + ": expected trailing ad_label column");
  }

  ds.values.assign(M, {});
  size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++rows;
    auto cells = split_csv_line(line);
    if (cells.size() != want_cols) {
      throw ContractError(cat(csv_path, ": row ", rows, " has ", cells.size(),
                              " cells, expected ", want_cols));
    }
    for (size_t c = 0; c < M; ++c) {
      double v = 0;
      const std::string& cell = cells[c + 1];
      auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
      if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) {
        throw ContractError(cat(csv_path, ": row ", rows, " column ", c + 1,
                                ": non-numeric cell '", cell, "'"));
      }
      ds.values[c].push_back(v);
    }
    if (has_labels) {
      const std::string& cell = cells.back();
      if (cell == "0") {
        ds.labels.push_back(0);
      } else if (cell == "1") {
        ds.labels.push_back(1);
      } else {
        throw ContractError(cat(csv_path, ": row ", rows, ": label must be 0 or 1, got '",
                                cell, "'"));
      }
    }
  }
  if (rows == 0) throw ContractError(csv_path + ": no data rows");
  if (kv.count("num_points")) {
    const size_t expect = parse_size_strict(kv.at("num_points"), "num_points");
    if (expect != rows) {
      throw ContractError(cat(csv_path, ": manifest says ", expect, " points, file has ", rows));
    }
  }
  return ds;
}

}  // namespace fsgpt
