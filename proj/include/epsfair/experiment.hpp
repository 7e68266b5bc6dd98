#pragma once

// Experiment commands behind the CLI. Every command returns an exit code:
// 0 success, 1 verification or run failure, 2 config error, 3 I/O error.

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "epsfair/config.hpp"
#include "epsfair/oracles.hpp"
#include "epsfair/train.hpp"

namespace epsfair {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitIo = 3 };

namespace exp_detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

inline std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed for " + path);
}

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace exp_detail

/// Runs a command body and maps exceptions onto exit codes.
template <typename F>
int guarded(F&& body, std::ostream& err = std::cerr) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IdxError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

// ---------------------------------------------------------------------------
// Building blocks

inline DatasetPair make_dataset(const ExperimentConfig& cfg) {
  if (cfg.dataset == DatasetKind::kBlobs) return gen_biased_blobs(cfg.blobs);
  return gen_biased_mnist(cfg.mnist);
}

inline std::string dataset_echo(const ExperimentConfig& cfg) {
  return cfg.dataset == DatasetKind::kBlobs ? cfg.blobs.describe() : cfg.mnist.describe();
}

inline TrainConfig train_config(const ExperimentConfig& cfg) {
  TrainConfig tc;
  tc.encoder = cfg.model;
  tc.encoder.input_dim = 0;
  tc.optim = cfg.optim;
  tc.loss = cfg.loss;
  tc.reg = cfg.reg;
  tc.alpha = cfg.alpha;
  tc.lambda = cfg.lambda;
  tc.seed = cfg.seed;
  tc.probe = cfg.probe;
  tc.probe_every = cfg.probe_every;
  tc.record_wall_time = cfg.record_wall_time;
  tc.bias_confidence = cfg.bias_confidence;
  tc.hist_samples = cfg.hist_samples;
  std::size_t e = cfg.optim.epochs;
  tc.hist_epochs = {1, (e + 1) / 2, e};
  return tc;
}

inline const char* kSummaryEcho =
    "dataset,rho,variant,epsilon,temperature,reg_kind,alpha,lambda,seed,epochs,batch_size,lr";

inline std::string summary_echo(const ExperimentConfig& cfg) {
  using exp_detail::fmt;
  std::ostringstream os;
  os << to_string(cfg.dataset) << "," << fmt(cfg.rho()) << "," << to_string(cfg.loss.variant) << ","
     << fmt(cfg.loss.epsilon) << "," << fmt(cfg.loss.temperature) << "," << to_string(cfg.reg.kind)
     << "," << fmt(cfg.alpha) << "," << fmt(cfg.lambda) << "," << cfg.seed << "," << cfg.optim.epochs
     << "," << cfg.optim.batch_size << "," << fmt(cfg.optim.lr);
  return os.str();
}

struct RunOutcome {
  bool ok = false;
  std::string error;
  std::optional<TrainResult> result;
};

/// Trains one configuration and writes its artifacts into cfg.output_dir:
/// config.resolved.ini, metrics.csv, summary.csv, timing.csv,
/// hist_epoch_<k>.csv, model.bin, or a FAILED marker on divergence.
inline RunOutcome run_training(const ExperimentConfig& cfg, const DatasetPair* data = nullptr) {
  using exp_detail::join_path;
  const std::string& dir = cfg.output_dir;
  exp_detail::ensure_dir(dir);
  write_resolved_config(cfg, join_path(dir, "config.resolved.ini"));
  std::error_code ec;
  std::filesystem::remove(join_path(dir, "FAILED"), ec);
  std::optional<DatasetPair> owned;
  if (!data) {
    owned = make_dataset(cfg);
    data = &*owned;
  }
  RunOutcome out;
  try {
    out.result = train(data->train, data->test, train_config(cfg));
  } catch (const DivergenceError& e) {
    std::ostringstream os;
    os << e.what() << "\nepoch=" << e.epoch() << "\nlast_finite_loss=" << exp_detail::fmt(e.last_finite_loss())
       << "\n";
    exp_detail::write_text(join_path(dir, "FAILED"), os.str());
    out.error = e.what();
    return out;
  }
  const TrainResult& r = *out.result;
  write_metrics_csv(r.history, join_path(dir, "metrics.csv"));
  {
    std::ostringstream os;
    os << kMetricsHeader << "," << kSummaryEcho << "\n"
       << metrics_line(r.history.back()) << "," << summary_echo(cfg) << "\n";
    exp_detail::write_text(join_path(dir, "summary.csv"), os.str());
  }
  {
    std::ostringstream os;
    os << "epoch,wall_ms\n";
    for (std::size_t i = 0; i < r.epoch_ms.size(); ++i) os << i + 1 << "," << exp_detail::fmt(r.epoch_ms[i]) << "\n";
    exp_detail::write_text(join_path(dir, "timing.csv"), os.str());
  }
  for (const auto& [epoch, h] : r.histograms) {
    write_histogram_csv(h, join_path(dir, "hist_epoch_" + std::to_string(epoch) + ".csv"));
  }
  r.encoder.save(join_path(dir, "model.bin"), dataset_echo(cfg));
  out.ok = true;
  return out;
}

// ---------------------------------------------------------------------------
// Commands

inline int cmd_verify(const std::string& output_dir, bool inject_kl_sign_error = false,
                      std::ostream& os = std::cout) {
  OracleOptions opt;
  if (inject_kl_sign_error) opt.kl = &mutation::gaussian_kl_sign_error;
  std::vector<OracleReport> reports = run_oracles(opt);
  exp_detail::ensure_dir(output_dir);
  write_oracle_report(reports, exp_detail::join_path(output_dir, "oracle_report.csv"));
  for (const OracleReport& r : reports) {
    os << (r.pass ? "PASS " : "FAIL ") << r.name << " trials=" << r.trials
       << " max_abs_err=" << r.max_abs_err << " max_rel_err=" << r.max_rel_err << "\n";
  }
  bool ok = all_pass(reports);
  os << (ok ? "all oracles passed" : "oracle failure") << "\n";
  return ok ? kExitOk : kExitFailure;
}

inline int cmd_gen_data(const ExperimentConfig& cfg, std::ostream& os = std::cout) {
  using exp_detail::join_path;
  DatasetPair data = make_dataset(cfg);
  exp_detail::ensure_dir(cfg.output_dir);
  write_resolved_config(cfg, join_path(cfg.output_dir, "config.resolved.ini"));
  save_dataset(data.train, join_path(cfg.output_dir, "train.bin"));
  save_dataset(data.test, join_path(cfg.output_dir, "test.bin"));
  write_manifest(data, dataset_echo(cfg), join_path(cfg.output_dir, "manifest.txt"));
  os << "train rows=" << data.train.size() << " aligned=" << data.train.aligned_count()
     << " conflicting=" << data.train.conflicting_count() << "\n"
     << "test rows=" << data.test.size() << " aligned=" << data.test.aligned_count()
     << " conflicting=" << data.test.conflicting_count() << "\n";
  return kExitOk;
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& os = std::cout) {
  RunOutcome out = run_training(cfg);
  if (!out.ok) {
    os << "run failed: " << out.error << "\n";
    return kExitFailure;
  }
  const ProbeResult& p = out.result->final_probe;
  os << "acc_overall=" << p.acc_overall << " acc_aligned=" << p.acc_aligned
     << " acc_conflicting=" << p.acc_conflicting << "\n";
  return kExitOk;
}

enum class ProbeFeatures { kModel, kRaw, kRandom };

inline ProbeFeatures parse_probe_features(std::string_view s) {
  if (s == "model") return ProbeFeatures::kModel;
  if (s == "raw") return ProbeFeatures::kRaw;
  if (s == "random") return ProbeFeatures::kRandom;
  throw ConfigError("unknown probe features '" + std::string(s) + "' (model, raw, random)");
}

/// Linear probe on trained-model, raw-input or untrained-encoder features.
inline ProbeResult probe_features(const ExperimentConfig& cfg, const DatasetPair& data,
                                  ProbeFeatures which, const std::string& model_path = "") {
  if (which == ProbeFeatures::kRaw) {
    return linear_probe(data.train.features, data.train, data.test.features, data.test, cfg.probe);
  }
  EncoderSpec spec = cfg.model;
  spec.input_dim = data.train.dim();
  Encoder enc(spec, cfg.seed);
  if (which == ProbeFeatures::kModel) {
    if (model_path.empty()) throw ConfigError("probe: --model is required for model features");
    enc.load_values(model_path);
  }
  return probe_encoder(enc, data.train, data.test, cfg.probe);
}

inline int cmd_probe(const ExperimentConfig& cfg, ProbeFeatures which, const std::string& model_path,
                     std::ostream& os = std::cout) {
  DatasetPair data = make_dataset(cfg);
  ProbeResult p = probe_features(cfg, data, which, model_path);
  exp_detail::ensure_dir(cfg.output_dir);
  std::ostringstream csv;
  csv << "features,acc_train,acc_overall,acc_aligned,acc_conflicting,epochs_run,final_grad_norm,degenerate\n";
  const char* name = which == ProbeFeatures::kModel ? "model" : which == ProbeFeatures::kRaw ? "raw" : "random";
  csv << name << "," << exp_detail::fmt(p.acc_train) << "," << exp_detail::fmt(p.acc_overall) << ","
      << exp_detail::fmt(p.acc_aligned) << "," << exp_detail::fmt(p.acc_conflicting) << ","
      << p.epochs_run << "," << exp_detail::fmt(p.final_grad_norm) << "," << (p.degenerate ? 1 : 0)
      << "\n";
  exp_detail::write_text(exp_detail::join_path(cfg.output_dir, std::string("probe_") + name + ".csv"),
                         csv.str());
  if (p.degenerate) os << "warning: embeddings are degenerate (all rows identical)\n";
  os << "features=" << name << " acc_train=" << p.acc_train << " acc_overall=" << p.acc_overall
     << " acc_aligned=" << p.acc_aligned << " acc_conflicting=" << p.acc_conflicting << "\n";
  return kExitOk;
}

/// Similarity histograms of an untrained encoder, or of a saved model.
inline int cmd_hist(const ExperimentConfig& cfg, const std::string& model_path,
                    std::ostream& os = std::cout) {
  DatasetPair data = make_dataset(cfg);
  EncoderSpec spec = cfg.model;
  spec.input_dim = data.train.dim();
  Encoder enc(spec, cfg.seed);
  if (!model_path.empty()) enc.load_values(model_path);
  SimilarityHistogram h =
      similarity_histograms(enc, data.train, 0, cfg.loss.temperature, cfg.hist_samples);
  exp_detail::ensure_dir(cfg.output_dir);
  std::string name = model_path.empty() ? "hist_untrained.csv" : "hist_model.csv";
  write_histogram_csv(h, exp_detail::join_path(cfg.output_dir, name));
  os << "pairs=" << h.total() << " aligned_mean=" << h.aligned_mean << " aligned_var=" << h.aligned_var
     << " conflicting_mean=" << h.conflicting_mean << " conflicting_var=" << h.conflicting_var
     << " ks=" << histogram_ks(h) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Sweeps

struct SweepPoint {
  double epsilon = 0.0;
  double alpha = 1.0;
  double lambda = 0.0;
  double rho = 0.0;
};

struct SweepRun {
  std::size_t point = 0;
  std::uint64_t seed = 0;
  std::string dir;
  bool ok = false;
  std::string error;
  ProbeResult probe;
};

struct SweepRow {
  SweepPoint point;
  std::size_t runs = 0;
  std::size_t failed = 0;
  double overall_mean = NAN, overall_std = NAN;
  double aligned_mean = NAN, aligned_std = NAN;
  double conflicting_mean = NAN, conflicting_std = NAN;
};

inline std::vector<SweepPoint> sweep_grid(const ExperimentConfig& cfg) {
  auto or_base = [](const std::vector<double>& xs, double base) {
    return xs.empty() ? std::vector<double>{base} : xs;
  };
  std::vector<SweepPoint> grid;
  for (double r : or_base(cfg.sweep.rho, cfg.rho())) {
    for (double e : or_base(cfg.sweep.epsilon, cfg.loss.epsilon)) {
      for (double a : or_base(cfg.sweep.alpha, cfg.alpha)) {
        for (double l : or_base(cfg.sweep.lambda, cfg.lambda)) grid.push_back({e, a, l, r});
      }
    }
  }
  return grid;
}

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {NAN, NAN};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(xs.size() - 1))};
}

inline const char* kSweepHeader =
    "epsilon,alpha,lambda,rho,runs,failed,acc_overall_mean,acc_overall_std,acc_aligned_mean,"
    "acc_aligned_std,acc_conflicting_mean,acc_conflicting_std";

inline std::string sweep_line(const SweepRow& r) {
  using exp_detail::fmt;
  auto f = [](double v) { return std::isnan(v) ? std::string() : fmt(v); };
  return fmt(r.point.epsilon) + "," + fmt(r.point.alpha) + "," + fmt(r.point.lambda) + "," +
         fmt(r.point.rho) + "," + std::to_string(r.runs) + "," + std::to_string(r.failed) + "," +
         f(r.overall_mean) + "," + f(r.overall_std) + "," + f(r.aligned_mean) + "," +
         f(r.aligned_std) + "," + f(r.conflicting_mean) + "," + f(r.conflicting_std);
}

/// One run per grid point and seed on a pool of cfg.sweep.workers threads.
/// Failed runs are counted and the sweep carries on.
inline std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, std::vector<SweepRun>* runs_out = nullptr) {
  std::vector<SweepPoint> grid = sweep_grid(cfg);
  std::vector<std::uint64_t> seeds = cfg.sweep.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed}
                                                             : cfg.sweep.seeds;
  std::vector<SweepRun> runs;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    for (std::uint64_t s : seeds) {
      SweepRun r;
      r.point = p;
      r.seed = s;
      r.dir = exp_detail::join_path(cfg.output_dir,
                                    "point_" + std::to_string(p) + "_seed_" + std::to_string(s));
      runs.push_back(r);
    }
  }
  exp_detail::ensure_dir(cfg.output_dir);
  std::atomic<std::size_t> next{0};
  std::mutex log_mu;
  auto worker = [&] {
    for (std::size_t i = next++; i < runs.size(); i = next++) {
      SweepRun& r = runs[i];
      const SweepPoint& pt = grid[r.point];
      ExperimentConfig c = cfg;
      c.sweep = SweepSpec{};
      c.loss.epsilon = pt.epsilon;
      c.alpha = pt.alpha;
      c.lambda = pt.lambda;
      c.set_rho(pt.rho);
      c.set_seed(r.seed);
      c.output_dir = r.dir;
      c.probe_every = 0;
      try {
        c.validate();
        RunOutcome out = run_training(c);
        r.ok = out.ok;
        r.error = out.error;
        if (out.ok) r.probe = out.result->final_probe;
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
      std::lock_guard<std::mutex> lock(log_mu);
      logging::info("sweep run " + r.dir + (r.ok ? " done" : " failed: " + r.error));
    }
  };
  std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.sweep.workers, runs.size()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<SweepRow> rows;
  for (std::size_t p = 0; p < grid.size(); ++p) {
    SweepRow row;
    row.point = grid[p];
    std::vector<double> o, a, c;
    for (const SweepRun& r : runs) {
      if (r.point != p) continue;
      ++row.runs;
      if (!r.ok) {
        ++row.failed;
        continue;
      }
      o.push_back(r.probe.acc_overall);
      a.push_back(r.probe.acc_aligned);
      c.push_back(r.probe.acc_conflicting);
    }
    std::tie(row.overall_mean, row.overall_std) = mean_std(o);
    std::tie(row.aligned_mean, row.aligned_std) = mean_std(a);
    std::tie(row.conflicting_mean, row.conflicting_std) = mean_std(c);
    rows.push_back(row);
  }
  std::ostringstream csv;
  csv << kSweepHeader << "\n";
  for (const SweepRow& r : rows) csv << sweep_line(r) << "\n";
  exp_detail::write_text(exp_detail::join_path(cfg.output_dir, "sweep.csv"), csv.str());
  std::ostringstream runs_csv;
  runs_csv << "point,seed,ok,acc_overall,acc_aligned,acc_conflicting,error\n";
  for (const SweepRun& r : runs) {
    runs_csv << r.point << "," << r.seed << "," << (r.ok ? 1 : 0) << ","
             << (r.ok ? exp_detail::fmt(r.probe.acc_overall) : "") << ","
             << (r.ok ? exp_detail::fmt(r.probe.acc_aligned) : "") << ","
             << (r.ok ? exp_detail::fmt(r.probe.acc_conflicting) : "") << ",\"" << r.error << "\"\n";
  }
  exp_detail::write_text(exp_detail::join_path(cfg.output_dir, "runs.csv"), runs_csv.str());
  if (runs_out) *runs_out = std::move(runs);
  return rows;
}

inline int cmd_sweep(const ExperimentConfig& cfg, std::ostream& os = std::cout) {
  exp_detail::ensure_dir(cfg.output_dir);
  write_resolved_config(cfg, exp_detail::join_path(cfg.output_dir, "config.resolved.ini"));
  std::vector<SweepRow> rows = run_sweep(cfg);
  os << kSweepHeader << "\n";
  std::size_t failed = 0;
  for (const SweepRow& r : rows) {
    os << sweep_line(r) << "\n";
    failed += r.failed;
  }
  if (failed) os << failed << " run(s) failed, see runs.csv\n";
  return kExitOk;
}

}  // namespace epsfair
