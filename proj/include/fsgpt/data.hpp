#pragma once

// Synthetic fleet telemetry: multichannel signal generation with seeded
// fault injection, CSV/manifest serialization, and windowing with
// leakage-free contiguous train/val/test splits.

#include <cstdint>
#include <string>
#include <vector>

#include "fsgpt/common.hpp"

namespace fsgpt {

enum class FaultType : uint8_t { under_pressure = 0, over_pressure = 1, over_temperature = 2 };

std::string fault_type_name(FaultType t);
FaultType parse_fault_type(const std::string& s);

struct FleetSpec {
  std::string fleet_id;
  size_t num_channels = 2;
  double sample_freq_hz = 1.0;
  FaultType fault_type = FaultType::under_pressure;
  size_t baseline_channel = 0;
  double anomaly_rate = 0.0;  // fraction of windows that receive a fault
  std::vector<std::string> channel_names;  // filled by validate() if empty
  std::vector<std::string> channel_units;

  void validate();
};

// Desk-scale trio: two unlabeled pretraining fleets and one labeled
// fine-tuning target, heterogeneous in channel count, rate, and fault mode.
FleetSpec desk_fleet_a();  // 8 channels, 0.2 Hz, under_pressure, unlabeled
FleetSpec desk_fleet_b();  // 6 channels, 1 Hz, over_pressure, unlabeled
FleetSpec desk_fleet_c();  // 4 channels, 0.25 Hz, over_temperature, 40% faulted
FleetSpec desk_fleet(const std::string& name);

struct SignalWindow {
  std::string fleet_id;
  size_t start = 0;  // sample index into the source series
  std::string phase = "cruise";
  std::vector<std::vector<double>> values;  // [M][L], physical units
  std::vector<uint8_t> labels;              // [L], 0 normal / 1 anomalous; empty if unlabeled

  size_t channels() const { return values.size(); }
  size_t length() const { return values.empty() ? 0 : values[0].size(); }
  bool labeled() const { return !labels.empty(); }
  bool any_anomaly() const {
    for (uint8_t v : labels) {
      if (v) return true;
    }
    return false;
  }
};

struct Dataset {
  FleetSpec spec;
  uint64_t seed = 0;
  std::vector<std::vector<double>> values;  // [M][num_points]
  std::vector<uint8_t> labels;              // [num_points] or empty
  // Pre-injection baseline-channel values, kept in memory for generator
  // self-checks; not serialized.
  std::vector<double> clean_baseline;
  std::string config_hash;  // embedded in the manifest when written by the CLI

  size_t num_points() const { return values.empty() ? 0 : values[0].size(); }
  size_t channels() const { return values.size(); }
  bool labeled() const { return !labels.empty(); }
};

// Deterministic per (spec, seed). Channels share a fleet-seeded bank of
// slow sinusoids plus AR(1) noise and drift; the baseline channel is a
// smooth function of three covariate channels plus small noise. When
// spec.anomaly_rate > 0, faults are injected into that fraction of
// non-overlapping windows of length window_len and labels are attached.
Dataset generate_fleet(const FleetSpec& spec, size_t num_points, uint64_t seed,
                       size_t window_len);

// Injects one fault into the window's baseline channel: a contiguous
// segment (5% to 30% of the window) is level-shifted or ramped by a
// multiple of the channel's pre-fault standard deviation. Labels are set
// to 1 exactly on the segment. The window must not already carry anomalies.
void inject_fault(SignalWindow& window, FaultType type, size_t baseline_channel, uint64_t seed);

struct WindowSet {
  std::vector<SignalWindow> train, val, test;
  size_t total() const { return train.size() + val.size() + test.size(); }
};

// Sliding windows of length window_len with the given stride, split into
// contiguous 70/15/15 time blocks. No window crosses a block boundary, so
// no test timestep ever appears in a training window.
WindowSet make_windows(const Dataset& ds, size_t window_len, size_t stride);

// R^2 of an ordinary-least-squares fit of the baseline channel on its
// covariate channels over normal samples. The generator must keep this
// high enough that baseline prediction is learnable.
double baseline_ols_r2(const Dataset& ds);

// ---- serialization ----------------------------------------------------
// CSV: header `t,<ch_0>,...,<ch_{M-1}>[,ad_label]`, one row per tick,
// doubles in shortest round-trip form. Manifest: key=value text.

void write_dataset(const Dataset& ds, const std::string& csv_path,
                   const std::string& manifest_path);
Dataset load_csv(const std::string& csv_path, const std::string& manifest_path);

std::string manifest_text(const Dataset& ds);

}  // namespace fsgpt
