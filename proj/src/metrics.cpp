#include "fsgpt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "fsgpt/common.hpp"

namespace fsgpt {

BpMetrics bp_metrics(const std::vector<double>& y, const std::vector<double>& y_hat) {
  if (y.size() != y_hat.size()) throw ShapeError("bp_metrics: length mismatch");
  if (y.empty()) throw ContractError("bp_metrics: no samples");
  BpMetrics m;
  m.count = y.size();
  double mae = 0, mse = 0, mape = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    const double diff = y[i] - y_hat[i];
    mae += std::fabs(diff);
    mse += diff * diff;
    mape += std::fabs(diff) / std::max(std::fabs(y[i]), 1e-8);
  }
  const double n = static_cast<double>(y.size());
  m.mae = mae / n;
  m.mse = mse / n;
  m.mape = mape / n;
  return m;
}

AdCounts ad_metrics(const std::vector<uint8_t>& labels, const std::vector<double>& scores,
                    double threshold) {
  if (labels.size() != scores.size()) throw ShapeError("ad_metrics: length mismatch");
  AdCounts c;
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw ContractError("ad_metrics: labels must be 0 or 1");
    const bool pred = scores[i] >= threshold;
    if (labels[i]) {
      pred ? ++c.tp : ++c.fn;
    } else {
      pred ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

std::optional<double> precision(const AdCounts& c) {
  const uint64_t den = c.tp + c.fp;
  if (den == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(den);
}

std::optional<double> recall(const AdCounts& c) {
  const uint64_t den = c.tp + c.fn;
  if (den == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(den);
}

std::optional<double> f1_score(const AdCounts& c) {
  auto p = precision(c);
  auto r = recall(c);
  if (!p || !r || *p + *r == 0.0) return std::nullopt;
  return 2.0 * *p * *r / (*p + *r);
}

std::string metric_str(const std::optional<double>& v) {
  if (!v) return "None";
  std::ostringstream out;
  out.precision(17);
  out << *v;
  return out.str();
}

PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  if (points.size() < 3) throw ContractError("fit_power_law: need at least 3 points");
  for (const auto& [n, l] : points) {
    if (!(n > 0.0) || !(l > 0.0)) throw ContractError("fit_power_law: inputs must be positive");
  }
  // A flat loss curve carries no slope information: alpha is exactly 0 and
  // N_c is undefined. Detect it before OLS so rounding in the sums cannot
  // turn "no trend" into a spurious tiny exponent.
  bool flat = true;
  for (const auto& [N, L] : points) {
    if (std::log(L) != std::log(points.front().second)) {
      flat = false;
      break;
    }
  }
  if (flat) {
    PowerLawFit fit;
    fit.alpha = 0.0;
    fit.n_c = std::numeric_limits<double>::quiet_NaN();
    fit.r2 = 1.0;
    return fit;
  }

  // log L = a + b log N with alpha = -b, N_c = exp(a / alpha)
  const double n = static_cast<double>(points.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [N, L] : points) {
    const double x = std::log(N), y = std::log(L);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = n * sxx - sx * sx;
  if (std::fabs(denom) < 1e-12) throw ContractError("fit_power_law: degenerate N values");
  const double b = (n * sxy - sx * sy) / denom;
  const double a = (sy - b * sx) / n;

  PowerLawFit fit;
  fit.alpha = -b;
  fit.n_c = fit.alpha == 0.0 ? std::numeric_limits<double>::quiet_NaN()
                             : std::exp(a / fit.alpha);
  double ss_res = 0, ss_tot = 0;
  const double ymean = sy / n;
  for (const auto& [N, L] : points) {
    const double y = std::log(L);
    const double pred = a + b * std::log(N);
    ss_res += (y - pred) * (y - pred);
    ss_tot += (y - ymean) * (y - ymean);
  }
  fit.r2 = ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
  return fit;
}

std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "fleet_id=" << r.fleet_id << "\n";
  out << "windows=" << r.windows << "\n";
  out << "seed=" << r.seed << "\n";
  out << "config_hash=" << r.config_hash << "\n";
  out << "bp.samples=" << r.bp.count << "\n";
  out << "bp.mae=" << r.bp.mae << "\n";
  out << "bp.mse=" << r.bp.mse << "\n";
  out << "bp.mape=" << r.bp.mape << "\n";
  out << "bp.no_normal_support=" << (r.no_normal_support ? 1 : 0) << "\n";
  out << "ad.counting=per_timestep\n";
  out << "ad.tp=" << r.ad.tp << "\n";
  out << "ad.fp=" << r.ad.fp << "\n";
  out << "ad.tn=" << r.ad.tn << "\n";
  out << "ad.fn=" << r.ad.fn << "\n";
  out << "ad.precision=" << metric_str(precision(r.ad)) << "\n";
  out << "ad.recall=" << metric_str(recall(r.ad)) << "\n";
  out << "ad.f1=" << metric_str(f1_score(r.ad)) << "\n";
  if (r.trainable_ratio >= 0.0) out << "trainable_ratio=" << r.trainable_ratio << "\n";
  return out.str();
}

std::string counts_csv(const AdCounts& c) {
  std::ostringstream out;
  out << "tp,fp,tn,fn\n" << c.tp << "," << c.fp << "," << c.tn << "," << c.fn << "\n";
  return out.str();
}

void write_report(const EvalReport& r, const std::string& text_path,
                  const std::string& csv_path) {
  std::ofstream txt(text_path, std::ios::binary);
  if (!txt) throw ContractError("cannot write report " + text_path);
  txt << report_text(r);
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw ContractError("cannot write counts " + csv_path);
  csv << counts_csv(r.ad);
}

}  // namespace fsgpt
