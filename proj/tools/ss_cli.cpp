#include <CLI11.hpp>
#include <fmt/core.h>

#include <fstream>
#include <iostream>
#include <string>

#include "ss/ss.hpp"

#ifndef SS_VERSION
#define SS_VERSION "dev"
#endif

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kNumericFailure = 3;

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "results";
  std::size_t jobs = 1;
};

int run(const std::string& experiment, const Options& opt) {
  std::ifstream in(opt.config);
  if (!in) throw ss::ConfigError("cannot open '" + opt.config + "'", "--config");
  ss::KeyValues kv = ss::KeyValues::parse(in);
  if (opt.seed) kv.set("seed", std::to_string(*opt.seed));
  const ss::ExperimentConfig cfg = ss::parse_config(std::move(kv), experiment);

  ss::RunContext ctx;
  ctx.out_dir = opt.out;
  ctx.jobs = opt.jobs;
  ctx.version = SS_VERSION;
  const ss::RunResult r = ss::run_experiment(cfg, ctx);
  fmt::print("{}: {} output file(s) in {}\n", experiment, r.outputs.size(), opt.out);
  if (r.failed_points > 0) {
    fmt::print(stderr, "{} of {} point(s) failed numerically; see status columns\n", r.failed_points, r.total_points);
    return kNumericFailure;
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"springs-and-sticks simulator"};
  app.set_version_flag("--version", std::string(SS_VERSION));
  app.require_subcommand(1);

  Options opt;
  const std::pair<const char*, const char*> commands[] = {
      {"fit", "train one system (and optional MLP baselines) on one dataset"},
      {"scale-sweep", "loss and free energy across stiffness values"},
      {"tlb-expressivity", "barrier height against stick count"},
      {"tlb-heatmap", "barrier height over friction and temperature"},
      {"error-scaling", "approximation error against stick count"},
      {"entropy", "entropy production of the relaxing system"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config, "key = value config file")->required();
    sub->add_option("--seed", opt.seed, "override the config seed");
    sub->add_option("--out", opt.out, "output directory")->capture_default_str();
    sub->add_option("--jobs", opt.jobs, "worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  const std::string experiment = app.get_subcommands().front()->get_name();
  try {
    return run(experiment, opt);
  } catch (const ss::ConfigError& e) {
    fmt::print(stderr, "config error: {}\n", e.what());
    return kConfigError;
  } catch (const ss::NumericError& e) {
    fmt::print(stderr, "numeric failure: {}\n", e.what());
    return kNumericFailure;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
}
