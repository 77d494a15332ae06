#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "diffsense/runner.hpp"
#include "diffsense/version.hpp"

// diffsense: simulation and estimation runs for differential phase sensing
// with a pair of atom interferometers under full-range common phase noise.
//
// Exit codes: 0 success, 2 config error, 3 partial grid failures,
// 4 internal error.

namespace {

using diffsense::runner::Kind;

struct CliOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  bool paper_scale = false;
  std::optional<unsigned> workers;
};

void print_config_error(const diffsense::runner::config_error& e) {
  diffsense::runner::json err;
  err["error"] = "config";
  err["details"] = e.details;
  std::fputs((err.dump(2) + "\n").c_str(), stderr);
}

int run_kind(Kind kind, const CliOptions& cli) {
  diffsense::runner::RunConfig cfg;
  try {
    cfg = diffsense::runner::load_config(cli.config_path, kind, cli.paper_scale);
    if (cli.seed) cfg.seed = *cli.seed;
    if (!cli.out_dir.empty()) cfg.out_dir = cli.out_dir;
    if (cli.workers) cfg.workers = *cli.workers;
  } catch (const diffsense::runner::config_error& e) {
    print_config_error(e);
    return 2;
  }
  try {
    const auto result = diffsense::runner::execute(cfg);
    std::fprintf(stderr, "done in %.1f s -> %s\n", result.seconds,
                 cfg.out_dir.c_str());
    return result.partial_failures ? 3 : 0;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 4;
  }
}

int run_validate(const CliOptions& cli) {
  try {
    auto cfg = diffsense::runner::load_config(cli.config_path, std::nullopt,
                                              cli.paper_scale);
    if (cli.seed) cfg.seed = *cli.seed;
    if (!cli.out_dir.empty()) cfg.out_dir = cli.out_dir;
    if (cli.workers) cfg.workers = *cli.workers;
    diffsense::runner::json out;
    out["config"] = cfg.to_json();
    out["applied_defaults"] = cfg.applied_defaults;
    std::fputs((out.dump(2) + "\n").c_str(), stdout);
    return 0;
  } catch (const diffsense::runner::config_error& e) {
    print_config_error(e);
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 4;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "differential phase sensing: probes, sampling, estimators, campaigns"};
  app.set_version_flag("--version", diffsense::version_string);
  app.require_subcommand(1);

  CliOptions cli;
  std::optional<Kind> selected;
  bool validate_only = false;

  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", cli.config_path, "config file (JSON)")
        ->required();
    sub->add_option("--seed", cli.seed, "override the master seed");
    sub->add_option("--out", cli.out_dir, "override the output directory");
    sub->add_flag("--paper-scale", cli.paper_scale,
                  "apply the config's paper_scale overrides");
    sub->add_option("--workers", cli.workers, "worker thread count");
  };

  for (Kind k : {Kind::probe_table, Kind::sample, Kind::fit, Kind::campaign,
                 Kind::scan_tau, Kind::scan_dphi, Kind::scan_n,
                 Kind::scan_shots, Kind::fisher, Kind::hybrid_compare}) {
    auto* sub = app.add_subcommand(diffsense::runner::kind_name(k), "");
    add_common(sub);
    sub->callback([&selected, k] { selected = k; });
  }
  auto* val = app.add_subcommand("validate", "check and normalize a config");
  add_common(val);
  val->callback([&validate_only] { validate_only = true; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help/--version
    diffsense::runner::json err;
    err["error"] = "usage";
    err["details"] = {std::string(e.what())};
    std::fputs((err.dump(2) + "\n").c_str(), stderr);
    return 2;
  }

  if (validate_only) return run_validate(cli);
  if (selected) return run_kind(*selected, cli);
  return 2;
}
