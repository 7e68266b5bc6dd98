#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>

#include "epsfair/epsfair.hpp"

using namespace epsfair;

namespace {

struct RunArgs {
  std::string config;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
};

void add_run_args(CLI::App* sub, RunArgs& args) {
  sub->add_option("-c,--config", args.config, "experiment config file")->required();
  sub->add_option("-o,--output-dir", args.output_dir, "override output_dir");
  sub->add_option("-s,--seed", args.seed, "override seed");
}

ExperimentConfig load(const RunArgs& args) {
  ExperimentConfig cfg = load_config(args.config);
  if (args.seed) cfg.set_seed(*args.seed);
  if (!args.output_dir.empty()) cfg.output_dir = args.output_dir;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epsfair: eps-margin contrastive losses and FairKL debiasing"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "log progress");
  app.add_flag("-q,--quiet", quiet, "log errors only");

  std::string verify_dir = "verify";
  bool mutate = false;
  auto* verify = app.add_subcommand("verify", "run the oracle suite, write oracle_report.csv");
  verify->add_option("-o,--output-dir", verify_dir, "report directory");
  verify->add_flag("--inject-kl-sign-error", mutate, "use a deliberately broken Gaussian KL");

  RunArgs gen_args, train_args, probe_args, sweep_args, hist_args;
  auto* gen = app.add_subcommand("gen-data", "generate and serialize a dataset");
  add_run_args(gen, gen_args);
  auto* trn = app.add_subcommand("train", "train an encoder and write metrics");
  add_run_args(trn, train_args);

  auto* prb = app.add_subcommand("probe", "linear probe on model, raw or random features");
  add_run_args(prb, probe_args);
  std::string probe_model;
  std::string probe_features_name = "model";
  prb->add_option("-m,--model", probe_model, "model.bin from a train run");
  prb->add_option("-f,--features", probe_features_name, "model, raw or random")
      ->check(CLI::IsMember({"model", "raw", "random"}));

  auto* swp = app.add_subcommand("sweep", "grid over epsilon/alpha/lambda/rho and seeds");
  add_run_args(swp, sweep_args);

  auto* hst = app.add_subcommand("hist", "positive-pair similarity histograms");
  add_run_args(hst, hist_args);
  std::string hist_model;
  hst->add_option("-m,--model", hist_model, "model.bin (untrained encoder if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  logging::set_level(quiet ? logging::Level::kError : verbose ? logging::Level::kInfo : logging::Level::kWarn);

  if (*verify) return guarded([&] { return cmd_verify(verify_dir, mutate); });
  if (*gen) return guarded([&] { return cmd_gen_data(load(gen_args)); });
  if (*trn) return guarded([&] { return cmd_train(load(train_args)); });
  if (*prb) {
    return guarded([&] {
      return cmd_probe(load(probe_args), parse_probe_features(probe_features_name), probe_model);
    });
  }
  if (*swp) return guarded([&] { return cmd_sweep(load(sweep_args)); });
  if (*hst) return guarded([&] { return cmd_hist(load(hist_args), hist_model); });
  return kExitConfig;
}
