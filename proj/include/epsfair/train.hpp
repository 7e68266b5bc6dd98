#pragma once

// Training loop over alpha * loss + lambda * FairKL with label-stratified
// batches, per-epoch linear-probe metrics and similarity histograms.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "epsfair/datagen.hpp"
#include "epsfair/encoder.hpp"
#include "epsfair/fairkl.hpp"
#include "epsfair/log.hpp"
#include "epsfair/losses.hpp"
#include "epsfair/optim.hpp"
#include "epsfair/probe.hpp"

namespace epsfair {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, double last_finite_loss, std::size_t epoch)
      : std::runtime_error(what), last_finite_loss_(last_finite_loss), epoch_(epoch) {}
  double last_finite_loss() const { return last_finite_loss_; }
  std::size_t epoch() const { return epoch_; }

 private:
  double last_finite_loss_;
  std::size_t epoch_;
};

struct TrainConfig {
  EncoderSpec encoder;  // input_dim is taken from the data when 0
  OptimSpec optim;
  LossConfig loss;
  RegularizerConfig reg;
  double alpha = 1.0;
  double lambda = 0.0;
  std::uint64_t seed = 0;
  ProbeSpec probe;
  std::size_t probe_every = 1;  // 0 probes after the last epoch only
  bool record_wall_time = false;
  double bias_confidence = 1.0;  // oracle score confidence in continuous mode
  std::size_t hist_samples = 1000;
  std::set<std::size_t> hist_epochs;  // 1-based
};

struct MetricsRow {
  std::size_t epoch = 0;
  double loss = 0.0;
  double reg = 0.0;
  std::size_t skipped = 0;
  std::optional<double> acc_overall;
  std::optional<double> acc_aligned;
  std::optional<double> acc_conflicting;
  double wall_ms = 0.0;
};

/// Counts of positive-pair similarities (cos / tau) split by whether the
/// pair shares its bias attribute.
struct SimilarityHistogram {
  std::size_t epoch = 0;
  double lo = -10.0;
  double hi = 10.0;
  std::vector<std::size_t> aligned;
  std::vector<std::size_t> conflicting;
  double aligned_mean = 0.0;
  double aligned_var = 0.0;
  double conflicting_mean = 0.0;
  double conflicting_var = 0.0;

  std::size_t total() const {
    std::size_t n = 0;
    for (std::size_t c : aligned) n += c;
    for (std::size_t c : conflicting) n += c;
    return n;
  }
};

struct TrainResult {
  Encoder encoder;
  std::vector<MetricsRow> history;
  std::vector<double> epoch_ms;
  ProbeResult final_probe;
  std::map<std::size_t, SimilarityHistogram> histograms;
};

// ---------------------------------------------------------------------------
// Batching

/// Label-stratified batch order for one epoch. Each class is shuffled and
/// its members spread evenly over the epoch, so every batch carries classes
/// in proportion to their frequency. A trailing batch below 4 samples is
/// dropped.
inline std::vector<std::vector<std::size_t>> stratified_batches(const std::vector<int>& labels,
                                                                std::size_t batch_size,
                                                                std::mt19937_64& rng) {
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<std::pair<double, std::size_t>> keyed;
  keyed.reserve(labels.size());
  for (auto& [cls, members] : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    double n = static_cast<double>(members.size());
    for (std::size_t r = 0; r < members.size(); ++r) {
      keyed.emplace_back((static_cast<double>(r) + u(rng)) / n, members[r]);
    }
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t s = 0; s < keyed.size(); s += batch_size) {
    std::size_t e = std::min(keyed.size(), s + batch_size);
    if (e - s < 4) break;
    std::vector<std::size_t> b;
    for (std::size_t k = s; k < e; ++k) b.push_back(keyed[k].second);
    batches.push_back(std::move(b));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Histograms

inline SimilarityHistogram similarity_histograms(const Encoder& enc, const Dataset& ds,
                                                 std::size_t epoch, double temperature,
                                                 std::size_t max_samples = 1000,
                                                 std::size_t bins = 50) {
  std::size_t n = std::min(ds.size(), max_samples);
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = i;
  Tensor z = enc.embed(ds.rows(rows));
  SimilarityHistogram h;
  h.epoch = epoch;
  h.lo = -1.0 / temperature;
  h.hi = 1.0 / temperature;
  h.aligned.assign(bins, 0);
  h.conflicting.assign(bins, 0);
  double sa = 0, sa2 = 0, sc = 0, sc2 = 0;
  std::size_t na = 0, nc = 0;
  std::size_t d = z.cols();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (ds.labels[i] != ds.labels[j]) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += z.at(i, k) * z.at(j, k);
      double s = dot / temperature;
      auto bin = static_cast<long>(std::floor((s - h.lo) / (h.hi - h.lo) * static_cast<double>(bins)));
      bin = std::clamp(bin, 0L, static_cast<long>(bins) - 1);
      if (ds.bias_attrs[i] == ds.bias_attrs[j]) {
        ++h.aligned[static_cast<std::size_t>(bin)];
        sa += s;
        sa2 += s * s;
        ++na;
      } else {
        ++h.conflicting[static_cast<std::size_t>(bin)];
        sc += s;
        sc2 += s * s;
        ++nc;
      }
    }
  }
  auto finish = [](double s, double s2, std::size_t k, double& mean, double& var) {
    if (k == 0) return;
    mean = s / static_cast<double>(k);
    var = k > 1 ? (s2 - s * mean) / static_cast<double>(k - 1) : 0.0;
  };
  finish(sa, sa2, na, h.aligned_mean, h.aligned_var);
  finish(sc, sc2, nc, h.conflicting_mean, h.conflicting_var);
  return h;
}

/// Largest gap between the two normalized cumulative histograms.
inline double histogram_ks(const SimilarityHistogram& h) {
  double ta = 0, tc = 0;
  for (std::size_t c : h.aligned) ta += static_cast<double>(c);
  for (std::size_t c : h.conflicting) tc += static_cast<double>(c);
  if (ta == 0 || tc == 0) return 1.0;
  double ca = 0, cc = 0, best = 0;
  for (std::size_t b = 0; b < h.aligned.size(); ++b) {
    ca += static_cast<double>(h.aligned[b]) / ta;
    cc += static_cast<double>(h.conflicting[b]) / tc;
    best = std::max(best, std::abs(ca - cc));
  }
  return best;
}

// ---------------------------------------------------------------------------
// CSV output

namespace detail {

inline std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

}  // namespace detail

inline const char* kMetricsHeader = "epoch,loss,reg,skipped,acc_overall,acc_aligned,acc_conflicting,wall_ms";

inline std::string metrics_line(const MetricsRow& r) {
  return std::to_string(r.epoch) + "," + detail::fmt(r.loss) + "," + detail::fmt(r.reg) + "," +
         std::to_string(r.skipped) + "," + detail::fmt_opt(r.acc_overall) + "," +
         detail::fmt_opt(r.acc_aligned) + "," + detail::fmt_opt(r.acc_conflicting) + "," +
         detail::fmt(r.wall_ms);
}

inline void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << kMetricsHeader << "\n";
  for (const MetricsRow& r : rows) out << metrics_line(r) << "\n";
  if (!out) throw IoError("write failed for " + path);
}

inline void write_histogram_csv(const SimilarityHistogram& h, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "bin,lo,hi,aligned,conflicting\n";
  std::size_t bins = h.aligned.size();
  double w = (h.hi - h.lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    out << b << "," << detail::fmt(h.lo + w * static_cast<double>(b)) << ","
        << detail::fmt(h.lo + w * static_cast<double>(b + 1)) << "," << h.aligned[b] << ","
        << h.conflicting[b] << "\n";
  }
  if (!out) throw IoError("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Training

inline ProbeResult probe_encoder(const Encoder& enc, const Dataset& train, const Dataset& test,
                                 const ProbeSpec& spec) {
  return linear_probe(enc.embed(train.features), train, enc.embed(test.features), test, spec);
}

inline TrainResult train(const Dataset& train_set, const Dataset& test_set, TrainConfig cfg) {
  using Clock = std::chrono::steady_clock;
  if (train_set.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.encoder.input_dim == 0) cfg.encoder.input_dim = train_set.dim();
  if (cfg.encoder.input_dim != train_set.dim()) {
    throw ShapeError("train: encoder input_dim does not match the data");
  }
  cfg.optim.validate();
  cfg.loss.validate();
  cfg.reg.validate();
  if (!(cfg.alpha > 0.0)) throw std::invalid_argument("alpha must be > 0");
  if (!(cfg.lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
  bool continuous = cfg.reg.bias_mode == BiasMode::kContinuous;
  BiasScoreProvider scores;
  if (continuous) scores = oracle_bias_scores(train_set, cfg.bias_confidence);

  TrainResult res;
  res.encoder = Encoder(cfg.encoder, cfg.seed);
  Optimizer opt(cfg.optim, res.encoder.params());
  std::mt19937_64 order_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  double last_finite = std::nan("");
  std::size_t epochs = cfg.optim.epochs;

  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    auto t0 = Clock::now();
    double lr = cfg.optim.lr_at(epoch - 1);
    auto batches = stratified_batches(train_set.labels, cfg.optim.batch_size, order_rng);
    double loss_sum = 0.0;
    double reg_sum = 0.0;
    std::size_t used = 0;
    MetricsRow row;
    row.epoch = epoch;
    for (const auto& idx : batches) {
      std::vector<int> labels(idx.size());
      std::vector<int> bias(idx.size());
      for (std::size_t k = 0; k < idx.size(); ++k) {
        labels[k] = train_set.labels[idx[k]];
        bias[k] = train_set.bias_attrs[idx[k]];
      }
      BatchPartition part =
          BatchPartition::build(labels, continuous ? std::nullopt : std::optional(bias));
      std::optional<Tensor> batch_scores;
      if (continuous) batch_scores = scores(idx);
      Graph g;
      double loss_value = 0.0;
      double reg_value = 0.0;
      try {
        EncoderVars vars = res.encoder.bind(g);
        Var z = res.encoder.forward(vars, g.constant(train_set.rows(idx)));
        GraphView view = graph_view(z, part, cfg.loss.temperature,
                                    batch_scores ? &*batch_scores : nullptr);
        ObjectiveOutput obj = combined_objective(view, cfg.loss, cfg.reg, cfg.alpha, cfg.lambda);
        loss_value = obj.loss.item();
        reg_value = obj.penalty ? obj.penalty->item() : 0.0;
        row.skipped += obj.skipped_anchors;
        g.backward(obj.value);
        opt.step(res.encoder.params(), res.encoder.grads(g, vars), lr);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what(), last_finite, epoch);
      } catch (const DegenerateBatchError&) {
        continue;
      } catch (const DomainError& e) {
        logging::debug(std::string("skipping batch: ") + e.what());
        continue;
      }
      last_finite = loss_value;
      for (const Tensor& p : res.encoder.params()) {
        if (!p.all_finite()) {
          throw DivergenceError("training diverged: non-finite parameters", last_finite, epoch);
        }
      }
      loss_sum += loss_value;
      reg_sum += reg_value;
      ++used;
    }
    if (used == 0) throw std::invalid_argument("train: every batch was degenerate");
    row.loss = loss_sum / static_cast<double>(used);
    row.reg = reg_sum / static_cast<double>(used);
    bool probe_now = (cfg.probe_every > 0 && epoch % cfg.probe_every == 0) || epoch == epochs;
    if (probe_now) {
      ProbeResult pr = probe_encoder(res.encoder, train_set, test_set, cfg.probe);
      row.acc_overall = pr.acc_overall;
      row.acc_aligned = pr.acc_aligned;
      row.acc_conflicting = pr.acc_conflicting;
      if (epoch == epochs) res.final_probe = pr;
    }
    if (cfg.hist_epochs.count(epoch)) {
      res.histograms[epoch] = similarity_histograms(res.encoder, train_set, epoch,
                                                    cfg.loss.temperature, cfg.hist_samples);
    }
    double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
    res.epoch_ms.push_back(ms);
    row.wall_ms = cfg.record_wall_time ? ms : 0.0;
    logging::info("epoch " + std::to_string(epoch) + " loss " + detail::fmt(row.loss) + " reg " +
                  detail::fmt(row.reg) +
                  (row.acc_overall ? " acc " + detail::fmt(*row.acc_overall) : std::string()));
    res.history.push_back(row);
  }
  return res;
}

}  // namespace epsfair
