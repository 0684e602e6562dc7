#pragma once

// Evaluation metrics: regression errors, per-timestep detection counts with
// the undefined-on-zero-denominator convention, and power-law scaling fits.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fsgpt {

struct BpMetrics {
  double mae = 0.0;
  double mse = 0.0;
  double mape = 0.0;
  size_t count = 0;
};

// mape divides by max(|y|, 1e-8) per sample.
BpMetrics bp_metrics(const std::vector<double>& y, const std::vector<double>& y_hat);

struct AdCounts {
  uint64_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(const AdCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
  }
  uint64_t total() const { return tp + fp + tn + fn; }
};

// score >= threshold counts as a positive prediction, per timestep.
AdCounts ad_metrics(const std::vector<uint8_t>& labels, const std::vector<double>& scores,
                    double threshold);

// Undefined (no value) when the denominator is zero.
std::optional<double> precision(const AdCounts& c);
std::optional<double> recall(const AdCounts& c);
std::optional<double> f1_score(const AdCounts& c);

// "None" for undefined metrics.
std::string metric_str(const std::optional<double>& v);

struct PowerLawFit {
  double n_c = 0.0;    // NaN when alpha == 0 (scale is unidentifiable)
  double alpha = 0.0;
  double r2 = 0.0;
};

// Least squares of log L = alpha * (log N_c - log N) over (N, L) points.
// Needs at least 3 points, all positive.
PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points);

struct EvalReport {
  std::string fleet_id;
  BpMetrics bp;          // over normal timesteps
  AdCounts ad;
  size_t windows = 0;
  std::string config_hash;
  uint64_t seed = 0;
  double trainable_ratio = -1.0;  // negative when not applicable
  bool no_normal_support = false;
};

std::string report_text(const EvalReport& r);
std::string counts_csv(const AdCounts& c);
void write_report(const EvalReport& r, const std::string& text_path,
                  const std::string& csv_path);

}  // namespace fsgpt
