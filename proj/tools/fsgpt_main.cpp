// Command-line frontend: data generation, pretraining, fine-tuning,
// evaluation, gradient checking, stride sweeps, scaling fits, and feature
// export. Exit codes: 0 success, 1 operation failed, 2 usage error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fsgpt/gradcheck.hpp"

namespace {

using namespace fsgpt;

struct ConfigCli {
  std::string profile = "desk";
  std::string file;
  std::vector<std::string> sets;
};

void add_config_flags(CLI::App* cmd, ConfigCli& c) {
  cmd->add_option("--profile", c.profile, "base configuration profile")
      ->check(CLI::IsMember({"desk", "paper"}))
      ->capture_default_str();
  cmd->add_option("--config", c.file, "key=value configuration file")
      ->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "single override, e.g. --set model.dim=64");
}

// Layering: profile (or checkpoint text) <- config file <- --set flags.
RunConfig resolve_config(const ConfigCli& c, const std::string* base_text = nullptr) {
  RunConfig cfg = base_text ? parse_config_text(*base_text) : profile_by_name(c.profile);
  if (!c.file.empty()) load_config_file(cfg, c.file);
  for (const auto& kv : c.sets) apply_config_line(cfg, kv);
  cfg.validate();
  return cfg;
}

template <typename Fn>
int with_precision(const RunConfig& cfg, Fn&& fn) {
  if (cfg.precision == Precision::f64) return fn(static_cast<double*>(nullptr));
  return fn(static_cast<float*>(nullptr));
}

FleetData load_fleet(const std::string& dir, const std::string& fleet, const RunConfig& cfg) {
  Dataset ds = load_csv(dir + "/" + fleet + ".csv", dir + "/" + fleet + ".manifest");
  FleetData fd;
  fd.spec = ds.spec;
  fd.windows = make_windows(ds, cfg.window_len, cfg.effective_window_stride());
  return fd;
}

const std::vector<SignalWindow>& split_windows(const FleetData& fd, const std::string& split) {
  if (split == "train") return fd.windows.train;
  if (split == "val") return fd.windows.val;
  if (split == "test") return fd.windows.test;
  throw ContractError("unknown split " + split);
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ContractError("cannot write " + path);
  out << text;
}

std::vector<std::string> split_commas(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ===== gen-data =============================================================

struct GenDataOpts {
  std::string out;
  std::string fleet = "all";
  size_t num_points = 131072;
  size_t window_len = 2048;
  uint64_t seed = 7;
};

int run_gen_data(const GenDataOpts& o) {
  std::filesystem::create_directories(o.out);
  std::vector<std::string> names =
      o.fleet == "all" ? std::vector<std::string>{"fleetA", "fleetB", "fleetC"}
                       : std::vector<std::string>{o.fleet};
  for (const auto& name : names) {
    FleetSpec spec = desk_fleet(name);
    Dataset ds = generate_fleet(spec, o.num_points, derive_seed(o.seed, name), o.window_len);
    write_dataset(ds, o.out + "/" + name + ".csv", o.out + "/" + name + ".manifest");
    std::cout << name << ": points=" << o.num_points << " channels=" << spec.num_channels
              << " baseline_fit_r2=" << baseline_ols_r2(ds) << "\n";
  }
  return 0;
}

// ===== pretrain =============================================================

struct PretrainOpts {
  std::string data;
  std::string fleets = "fleetA,fleetB,fleetC";
  std::string out;
  bool quiet = false;
  ConfigCli cfg;
};

template <typename T>
int do_pretrain(const RunConfig& cfg, const PretrainOpts& o) {
  std::vector<FleetData> data;
  std::vector<FleetSpec> specs;
  for (const auto& f : split_commas(o.fleets)) {
    data.push_back(load_fleet(o.data, f, cfg));
    specs.push_back(data.back().spec);
  }
  System<T> sys = build_system<T>(cfg, specs);
  set_pretrain_trainable(sys.store);
  AdamConfig ac;
  ac.lr = cfg.lr;
  Adam<T> opt(ac);
  if (!o.quiet) std::cout << "epoch,fleet,step,loss\n";
  auto epochs = run_pretrain(sys, data, opt, o.quiet ? nullptr : &std::cout);
  for (size_t e = 0; e < epochs.size(); ++e) {
    std::cerr << "epoch " << e << " mean_loss=" << epochs[e].mean_loss;
    for (const auto& [fleet, loss] : epochs[e].fleet_mean_loss) {
      std::cerr << " " << fleet << "=" << loss;
    }
    std::cerr << "\n";
  }
  save_checkpoint(o.out, sys.store, &opt, config_echo(cfg), cfg.seed, opt.steps());
  std::cerr << "saved " << o.out << " (config " << config_hash_hex(cfg) << ", step "
            << opt.steps() << ")\n";
  return 0;
}

// ===== finetune =============================================================

struct FinetuneOpts {
  std::string data;
  std::string fleet = "fleetC";
  std::string out;
  std::string checkpoint;  // empty: train heads on a freshly initialized backbone
  double fraction = 1.0;
  bool quiet = false;
  ConfigCli cfg;
};

template <typename T>
int do_finetune(const RunConfig& cfg, const FinetuneOpts& o) {
  FleetData fd = load_fleet(o.data, o.fleet, cfg);
  System<T> sys = build_system<T>(cfg, {fd.spec});
  if (!o.checkpoint.empty()) {
    LoadedCheckpoint<T> loaded = load_checkpoint<T>(o.checkpoint);
    adopt_tensors(sys.store, loaded.store);
  }
  auto train_windows = select_finetune_windows(fd, o.fraction, cfg.seed);
  const FreezePlan freeze = finetune_freeze_plan();
  AdamConfig ac;
  ac.lr = cfg.effective_finetune_lr();
  Adam<T> opt(ac);
  if (!o.quiet) std::cout << "epoch,fleet,step,loss\n";
  FinetuneResult res = finetune_run(sys, fd, train_windows, opt, freeze,
                                    default_joint_config(fd.spec, cfg),
                                    o.quiet ? nullptr : &std::cout);
  std::cerr << "trainable_ratio=" << res.trainable_ratio << " steps=" << res.steps
            << " windows=" << train_windows.size();
  if (res.no_normal_support_seen) std::cerr << " no_normal_support=1";
  std::cerr << "\n";
  save_checkpoint(o.out, sys.store, &opt, config_echo(cfg), cfg.seed, opt.steps());
  std::cerr << "saved " << o.out << "\n";
  return 0;
}

// ===== eval / export-features ==============================================

struct EvalOpts {
  std::string checkpoint;
  std::string data;
  std::string fleet = "fleetC";
  std::string split = "test";
  std::string report_path;
  std::string counts_path;
  ConfigCli cfg;
};

template <typename T>
int do_eval(const RunConfig& cfg, const EvalOpts& o) {
  FleetData fd = load_fleet(o.data, o.fleet, cfg);
  System<T> sys = build_system<T>(cfg, {fd.spec});
  LoadedCheckpoint<T> loaded = load_checkpoint<T>(o.checkpoint);
  adopt_tensors(sys.store, loaded.store);
  EvalReport report =
      evaluate(sys, fd, split_windows(fd, o.split), default_joint_config(fd.spec, cfg));
  const std::string text = report_text(report);
  std::cout << text;
  if (!o.report_path.empty()) write_text(o.report_path, text);
  if (!o.counts_path.empty()) write_text(o.counts_path, counts_csv(report.ad));
  return 0;
}

struct ExportOpts {
  std::string checkpoint;
  std::string data;
  std::string fleet = "fleetC";
  std::string split = "test";
  std::string out;
  ConfigCli cfg;
};

template <typename T>
int do_export(const RunConfig& cfg, const ExportOpts& o) {
  FleetData fd = load_fleet(o.data, o.fleet, cfg);
  System<T> sys = build_system<T>(cfg, {fd.spec});
  LoadedCheckpoint<T> loaded = load_checkpoint<T>(o.checkpoint);
  adopt_tensors(sys.store, loaded.store);
  std::ofstream out(o.out, std::ios::trunc);
  if (!out) throw ContractError("cannot write " + o.out);
  export_features(sys, fd, split_windows(fd, o.split), out);
  std::cerr << "wrote " << o.out << "\n";
  return 0;
}

// ===== gradcheck ============================================================

struct GradcheckOpts {
  uint64_t seed = 5;
  double tolerance = 1e-4;
};

int run_gradcheck_cmd(const GradcheckOpts& o) {
  auto entries = run_all_gradchecks(o.seed);
  bool ok = true;
  std::printf("%-28s %10s %14s  %s\n", "check", "elements", "max_err", "status");
  for (const auto& e : entries) {
    const bool pass = e.max_err <= o.tolerance;
    ok = ok && pass;
    std::printf("%-28s %10zu %14.3e  %s\n", e.name.c_str(), e.elements, e.max_err,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

// ===== sweep-stride =========================================================

struct SweepOpts {
  std::string data;
  std::string pretrain_fleets = "fleetA,fleetB";
  std::string fleet = "fleetC";
  std::string values = "32,64,128,256";
  std::string split = "val";
  std::string out;
  double fraction = 1.0;
  ConfigCli cfg;
};

template <typename T>
int do_sweep(const RunConfig& base, const SweepOpts& o) {
  std::ostringstream csv;
  csv << "stride,patches,mae,mse\n";
  for (const auto& tok : split_commas(o.values)) {
    RunConfig cfg = base;
    cfg.patch_len = detail::parse_size("stride sweep value", tok);
    cfg.stride = cfg.patch_len;
    cfg.validate();
    std::vector<FleetData> pre;
    for (const auto& f : split_commas(o.pretrain_fleets)) pre.push_back(load_fleet(o.data, f, cfg));
    FleetData target = load_fleet(o.data, o.fleet, cfg);
    PipelineOutcome res = run_pipeline<T>(cfg, pre, target, true, o.fraction,
                                          split_windows(target, o.split));
    csv << cfg.stride << "," << patch_count(cfg.window_len, cfg.patch_len, cfg.stride) << ","
        << res.report.bp.mae << "," << res.report.bp.mse << "\n";
    std::cerr << "stride " << cfg.stride << ": mae=" << res.report.bp.mae << "\n";
  }
  std::cout << csv.str();
  if (!o.out.empty()) write_text(o.out, csv.str());
  return 0;
}

// ===== fit-scaling ==========================================================

struct FitOpts {
  std::string csv;
  std::string points;
  std::string out;
};

int run_fit(const FitOpts& o) {
  std::vector<std::pair<double, double>> pts;
  auto add_point = [&](const std::string& n, const std::string& l) {
    pts.emplace_back(detail::parse_double("fit point size", n), detail::parse_double("fit point loss", l));
  };
  if (!o.points.empty()) {
    for (const auto& item : split_commas(o.points)) {
      const size_t colon = item.find(':');
      if (colon == std::string::npos) throw ContractError("fit point must be <size>:<loss>");
      add_point(item.substr(0, colon), item.substr(colon + 1));
    }
  } else if (!o.csv.empty()) {
    std::ifstream in(o.csv);
    if (!in) throw ContractError("cannot open " + o.csv);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const size_t comma = line.find(',');
      if (comma == std::string::npos) throw ContractError("fit CSV rows must be <size>,<loss>");
      if (first && line.find_first_not_of("0123456789.,+-eE \t") != std::string::npos) {
        first = false;  // header row
        continue;
      }
      first = false;
      add_point(line.substr(0, comma), line.substr(comma + 1));
    }
  } else {
    throw ContractError("fit-scaling needs --points or --csv");
  }
  PowerLawFit fit = fit_power_law(pts);
  std::ostringstream text;
  text.precision(17);
  text << "points=" << pts.size() << "\n"
       << "alpha=" << fit.alpha << "\n"
       << "n_c=" << fit.n_c << "\n"
       << "r2=" << fit.r2 << "\n";
  std::cout << text.str();
  if (!o.out.empty()) write_text(o.out, text.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cross-fleet telemetry diagnostics: baseline prediction and anomaly detection"};
  app.require_subcommand(1);
  int rc = 0;

  GenDataOpts gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic fleet telemetry");
  gen_cmd->add_option("--out", gen.out, "output directory")->required();
  gen_cmd->add_option("--fleet", gen.fleet, "fleetA, fleetB, fleetC, or all")
      ->capture_default_str();
  gen_cmd->add_option("--num-points", gen.num_points, "samples per channel")
      ->capture_default_str();
  gen_cmd->add_option("--window-len", gen.window_len, "window used for fault placement")
      ->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "generator seed")->capture_default_str();
  gen_cmd->callback([&] { rc = run_gen_data(gen); });

  PretrainOpts pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "masked-reconstruction pretraining");
  pre_cmd->add_option("--data", pre.data, "dataset directory")->required();
  pre_cmd->add_option("--fleets", pre.fleets, "comma-separated fleet ids")
      ->capture_default_str();
  pre_cmd->add_option("--out", pre.out, "checkpoint to write")->required();
  pre_cmd->add_flag("--quiet", pre.quiet, "suppress per-step progress");
  add_config_flags(pre_cmd, pre.cfg);
  pre_cmd->callback([&] {
    const RunConfig cfg = resolve_config(pre.cfg);
    rc = with_precision(cfg, [&](auto* tag) {
      using T = std::remove_pointer_t<decltype(tag)>;
      return do_pretrain<T>(cfg, pre);
    });
  });

  FinetuneOpts ft;
  auto* ft_cmd = app.add_subcommand("finetune", "joint BP+AD head training, backbone frozen");
  ft_cmd->add_option("--data", ft.data, "dataset directory")->required();
  ft_cmd->add_option("--fleet", ft.fleet, "target fleet id")->capture_default_str();
  ft_cmd->add_option("--out", ft.out, "checkpoint to write")->required();
  ft_cmd->add_option("--checkpoint", ft.checkpoint,
                     "pretrained checkpoint (omit to start from random init)");
  ft_cmd->add_option("--train-fraction", ft.fraction, "fraction of training windows used")
      ->capture_default_str();
  ft_cmd->add_flag("--quiet", ft.quiet, "suppress per-step progress");
  add_config_flags(ft_cmd, ft.cfg);
  ft_cmd->callback([&] {
    RunConfig cfg;
    if (!ft.checkpoint.empty()) {
      const CheckpointHeader head = peek_checkpoint(ft.checkpoint);
      cfg = resolve_config(ft.cfg, &head.config_text);
      require_config_compatible(cfg, parse_config_text(head.config_text));
    } else {
      cfg = resolve_config(ft.cfg);
    }
    rc = with_precision(cfg, [&](auto* tag) {
      using T = std::remove_pointer_t<decltype(tag)>;
      return do_finetune<T>(cfg, ft);
    });
  });

  EvalOpts ev;
  auto* ev_cmd = app.add_subcommand("eval", "evaluate a checkpoint on one fleet split");
  ev_cmd->add_option("--checkpoint", ev.checkpoint, "checkpoint to evaluate")->required();
  ev_cmd->add_option("--data", ev.data, "dataset directory")->required();
  ev_cmd->add_option("--fleet", ev.fleet, "fleet id")->capture_default_str();
  ev_cmd->add_option("--split", ev.split, "train, val, or test")->capture_default_str();
  ev_cmd->add_option("--report", ev.report_path, "write the text report here");
  ev_cmd->add_option("--counts", ev.counts_path, "write tp,fp,tn,fn CSV here");
  add_config_flags(ev_cmd, ev.cfg);
  ev_cmd->callback([&] {
    const CheckpointHeader head = peek_checkpoint(ev.checkpoint);
    const RunConfig cfg = resolve_config(ev.cfg, &head.config_text);
    require_config_compatible(cfg, parse_config_text(head.config_text));
    rc = with_precision(cfg, [&](auto* tag) {
      using T = std::remove_pointer_t<decltype(tag)>;
      return do_eval<T>(cfg, ev);
    });
  });

  ExportOpts ex;
  auto* ex_cmd = app.add_subcommand("export-features", "pooled encoder features per window");
  ex_cmd->add_option("--checkpoint", ex.checkpoint, "checkpoint to read")->required();
  ex_cmd->add_option("--data", ex.data, "dataset directory")->required();
  ex_cmd->add_option("--fleet", ex.fleet, "fleet id")->capture_default_str();
  ex_cmd->add_option("--split", ex.split, "train, val, or test")->capture_default_str();
  ex_cmd->add_option("--out", ex.out, "feature CSV to write")->required();
  add_config_flags(ex_cmd, ex.cfg);
  ex_cmd->callback([&] {
    const CheckpointHeader head = peek_checkpoint(ex.checkpoint);
    const RunConfig cfg = resolve_config(ex.cfg, &head.config_text);
    require_config_compatible(cfg, parse_config_text(head.config_text));
    rc = with_precision(cfg, [&](auto* tag) {
      using T = std::remove_pointer_t<decltype(tag)>;
      return do_export<T>(cfg, ex);
    });
  });

  GradcheckOpts gc;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--seed", gc.seed, "input seed")->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.tolerance, "max allowed relative error")
      ->capture_default_str();
  gc_cmd->callback([&] { rc = run_gradcheck_cmd(gc); });

  SweepOpts sw;
  auto* sw_cmd = app.add_subcommand("sweep-stride", "train and evaluate across patch strides");
  sw_cmd->add_option("--data", sw.data, "dataset directory")->required();
  sw_cmd->add_option("--pretrain-fleets", sw.pretrain_fleets, "fleets for pretraining")
      ->capture_default_str();
  sw_cmd->add_option("--fleet", sw.fleet, "target fleet id")->capture_default_str();
  sw_cmd->add_option("--values", sw.values, "comma-separated stride values")
      ->capture_default_str();
  sw_cmd->add_option("--split", sw.split, "evaluation split")->capture_default_str();
  sw_cmd->add_option("--train-fraction", sw.fraction, "fine-tuning window fraction")
      ->capture_default_str();
  sw_cmd->add_option("--out", sw.out, "also write the CSV here");
  add_config_flags(sw_cmd, sw.cfg);
  sw_cmd->callback([&] {
    const RunConfig cfg = resolve_config(sw.cfg);
    rc = with_precision(cfg, [&](auto* tag) {
      using T = std::remove_pointer_t<decltype(tag)>;
      return do_sweep<T>(cfg, sw);
    });
  });

  FitOpts fit;
  auto* fit_cmd = app.add_subcommand("fit-scaling", "fit a power law to (size, loss) points");
  fit_cmd->add_option("--points", fit.points, "inline points: <size>:<loss>,...");
  fit_cmd->add_option("--csv", fit.csv, "CSV file of size,loss rows");
  fit_cmd->add_option("--out", fit.out, "also write the fit summary here");
  fit_cmd->callback([&] { rc = run_fit(fit); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
