#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "closed_form.hpp"
#include "fringe.hpp"
#include "io.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "rng.hpp"
#include "spin_state.hpp"
#include "stats.hpp"
#include "version.hpp"

// Declarative experiment configs -> deterministic artifacts. A run writes a
// manifest (resolved config + provenance) and one CSV per result kind; the
// same config and seed always reproduce byte-identical CSV content.

namespace diffsense::runner {

using json = nlohmann::json;

struct config_error : std::runtime_error {
  std::vector<std::string> details;
  explicit config_error(std::vector<std::string> d)
      : std::runtime_error(d.empty() ? "invalid config" : d.front()),
        details(std::move(d)) {}
};

enum class Kind {
  probe_table,
  sample,
  fit,
  campaign,
  scan_tau,
  scan_dphi,
  scan_n,
  scan_shots,
  fisher,
  hybrid_compare,
};

inline const char* kind_name(Kind k) {
  switch (k) {
    case Kind::probe_table: return "probe-table";
    case Kind::sample: return "sample";
    case Kind::fit: return "fit";
    case Kind::campaign: return "campaign";
    case Kind::scan_tau: return "scan-tau";
    case Kind::scan_dphi: return "scan-dphi";
    case Kind::scan_n: return "scan-N";
    case Kind::scan_shots: return "scan-shots";
    case Kind::fisher: return "fisher";
    case Kind::hybrid_compare: return "hybrid-compare";
  }
  return "?";
}

inline std::optional<Kind> kind_from_name(const std::string& s) {
  for (Kind k : {Kind::probe_table, Kind::sample, Kind::fit, Kind::campaign,
                 Kind::scan_tau, Kind::scan_dphi, Kind::scan_n,
                 Kind::scan_shots, Kind::fisher, Kind::hybrid_compare})
    if (s == kind_name(k)) return k;
  return std::nullopt;
}

// how a probe's twisting strength is specified; resolution may depend on N
struct TauSpec {
  enum class Form { absolute, tau_tilde, tau_star_multiple } form = Form::absolute;
  double value = 0.0;

  double resolve(int n_atoms, closed_form::TauStarMethod method) const {
    switch (form) {
      case Form::absolute: return value;
      case Form::tau_tilde: return value * closed_form::tau_ref(n_atoms);
      case Form::tau_star_multiple:
        return value == 0.0 ? 0.0 : value * closed_form::tau_star(n_atoms, method);
    }
    return value;
  }

  json to_json() const {
    switch (form) {
      case Form::absolute: return json(value);
      case Form::tau_tilde: return json{{"tau_tilde", value}};
      case Form::tau_star_multiple:
        if (value == 1.0) return json("tau_star");
        return json{{"tau_star_multiple", value}};
    }
    return json(value);
  }
};

struct ProbeConfig {
  TauSpec tau;
  std::string mode = "auto";  // exact | gaussian | auto (exact when N fits)
  bool nu_auto = true;
  double nu = 0.0;

  spin::ProbeSpec resolve(int n_atoms, closed_form::TauStarMethod method) const {
    spin::ProbeSpec s;
    s.n_atoms = n_atoms;
    s.tau = tau.resolve(n_atoms, method);
    s.nu_auto = nu_auto;
    s.nu = nu;
    if (mode == "gaussian")
      s.mode = spin::ProbeSpec::Mode::gaussian;
    else if (mode == "exact")
      s.mode = spin::ProbeSpec::Mode::exact;
    else
      s.mode = n_atoms <= spin::exact_mode_cap ? spin::ProbeSpec::Mode::exact
                                               : spin::ProbeSpec::Mode::gaussian;
    return s;
  }

  json to_json() const {
    json j;
    j["tau"] = tau.to_json();
    j["mode"] = mode;
    j["nu"] = nu_auto ? json("auto") : json(nu);
    return j;
  }
};

struct RunConfig {
  Kind kind = Kind::campaign;
  std::uint64_t seed = 0;
  std::vector<int> n_grid;
  ProbeConfig probe_a, probe_b;
  bool probe_b_given = false;
  closed_form::TauStarMethod tau_star_method =
      closed_form::TauStarMethod::exact_balance;
  std::vector<double> dphi_grid;
  std::vector<double> tau_grid;        // absolute, for scan-tau
  std::vector<double> tau_tilde_grid;  // in units of tau_ref, for scan-tau
  std::vector<long> shots_grid;
  std::vector<std::string> probe_variants;  // scan-N: coherent | tau_star
  long shots = 1000;
  long n_ellipses = 200;
  std::vector<stats::Method> methods;
  double sigma_corr = 0.0;
  bool record_phase = false;
  bool contrast_free = false;
  int phase_grid = 4096;
  std::string sampler = "table";  // table | exact
  unsigned workers = 0;           // 0 = available parallelism
  double ellipse_dphi = 1.0;      // hybrid comparison, conventional for fringes
  double fit_n_min = 300, fit_n_max = 1000;
  std::string input;  // sample CSV for the fit kind
  std::string out_dir = "out";

  std::vector<std::string> applied_defaults;

  json to_json() const;
};

namespace detail {

inline void expect_fields(const json& j, std::vector<std::string>& errors) {
  static const std::vector<std::string> known = {
      "kind", "seed", "n_atoms", "n_grid", "probe", "probe_b",
      "tau_star_method", "dphi", "dphi_grid", "tau_grid", "tau_tilde_grid",
      "shots_grid", "probe_variants", "shots", "n_ellipses", "methods",
      "sigma_corr", "record_phase", "contrast_free", "phase_grid", "sampler",
      "workers", "ellipse_dphi", "fit_n_min", "fit_n_max", "input", "out",
      "paper_scale"};
  for (const auto& [key, val] : j.items()) {
    (void)val;
    bool ok = false;
    for (const auto& k : known)
      if (key == k) ok = true;
    if (!ok) errors.push_back("unknown config field: " + key);
  }
}

inline TauSpec parse_tau_spec(const json& j, const std::string& where,
                              std::vector<std::string>& errors) {
  TauSpec t;
  if (j.is_number()) {
    t.form = TauSpec::Form::absolute;
    t.value = j.get<double>();
    if (!(t.value >= 0)) errors.push_back(where + ": tau must be >= 0");
  } else if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "tau_star") {
      t.form = TauSpec::Form::tau_star_multiple;
      t.value = 1.0;
    } else if (s == "coherent") {
      t.form = TauSpec::Form::absolute;
      t.value = 0.0;
    } else {
      errors.push_back(where + ": unrecognized tau string '" + s + "'");
    }
  } else if (j.is_object()) {
    if (j.contains("tau_tilde")) {
      t.form = TauSpec::Form::tau_tilde;
      t.value = j["tau_tilde"].get<double>();
    } else if (j.contains("tau_star_multiple")) {
      t.form = TauSpec::Form::tau_star_multiple;
      t.value = j["tau_star_multiple"].get<double>();
    } else {
      errors.push_back(where + ": tau object needs tau_tilde or tau_star_multiple");
    }
  } else {
    errors.push_back(where + ": tau must be a number, string, or object");
  }
  return t;
}

inline ProbeConfig parse_probe(const json& j, const std::string& where,
                               std::vector<std::string>& errors) {
  ProbeConfig p;
  if (!j.is_object()) {
    errors.push_back(where + ": probe must be an object");
    return p;
  }
  if (j.contains("tau")) p.tau = parse_tau_spec(j["tau"], where, errors);
  if (j.contains("mode")) {
    p.mode = j["mode"].get<std::string>();
    if (p.mode != "exact" && p.mode != "gaussian" && p.mode != "auto")
      errors.push_back(where + ": mode must be exact, gaussian, or auto");
  }
  if (j.contains("nu")) {
    if (j["nu"].is_string() && j["nu"].get<std::string>() == "auto") {
      p.nu_auto = true;
    } else if (j["nu"].is_number()) {
      p.nu_auto = false;
      p.nu = j["nu"].get<double>();
    } else {
      errors.push_back(where + ": nu must be a number or \"auto\"");
    }
  }
  return p;
}

}  // namespace detail

inline json RunConfig::to_json() const {
  json j;
  j["kind"] = kind_name(kind);
  j["seed"] = seed;
  j["n_grid"] = n_grid;
  j["probe"] = probe_a.to_json();
  if (probe_b_given) j["probe_b"] = probe_b.to_json();
  j["tau_star_method"] =
      tau_star_method == closed_form::TauStarMethod::exact_balance
          ? "exact-balance"
          : "formula";
  if (!dphi_grid.empty()) j["dphi_grid"] = dphi_grid;
  if (!tau_grid.empty()) j["tau_grid"] = tau_grid;
  if (!tau_tilde_grid.empty()) j["tau_tilde_grid"] = tau_tilde_grid;
  if (!shots_grid.empty()) j["shots_grid"] = shots_grid;
  if (!probe_variants.empty()) j["probe_variants"] = probe_variants;
  j["shots"] = shots;
  j["n_ellipses"] = n_ellipses;
  std::vector<std::string> ms;
  for (auto m : methods) ms.emplace_back(stats::method_name(m));
  j["methods"] = ms;
  j["sigma_corr"] = sigma_corr;
  j["record_phase"] = record_phase;
  j["contrast_free"] = contrast_free;
  j["phase_grid"] = phase_grid;
  j["sampler"] = sampler;
  j["workers"] = workers;
  j["ellipse_dphi"] = ellipse_dphi;
  if (kind == Kind::scan_n) {
    j["fit_n_min"] = fit_n_min;
    j["fit_n_max"] = fit_n_max;
  }
  if (!input.empty()) j["input"] = input;
  j["out"] = out_dir;
  return j;
}

// Parses and normalizes a config object. Incomplete fields get documented
// defaults (each one reported); contradictions collect into a single error.
inline RunConfig validate_config(const json& raw,
                                 std::optional<Kind> cli_kind = std::nullopt,
                                 bool paper_scale = false) {
  std::vector<std::string> errors;
  json j = raw;

  // a manifest can stand in for its config
  if (j.contains("tool") && j.contains("config")) j = j["config"];

  if (paper_scale && j.contains("paper_scale")) {
    for (const auto& [key, val] : j["paper_scale"].items()) j[key] = val;
  }
  detail::expect_fields(j, errors);

  RunConfig cfg;

  if (j.contains("kind")) {
    const auto k = kind_from_name(j["kind"].get<std::string>());
    if (!k)
      errors.push_back("unknown kind: " + j["kind"].get<std::string>());
    else
      cfg.kind = *k;
    if (k && cli_kind && *k != *cli_kind)
      errors.push_back(std::string("config kind '") + kind_name(*k) +
                       "' contradicts the requested subcommand '" +
                       kind_name(*cli_kind) + "'");
  } else if (cli_kind) {
    cfg.kind = *cli_kind;
  } else {
    errors.push_back("kind is required");
  }

  if (j.contains("seed")) {
    if (j["seed"].is_number_unsigned() || j["seed"].is_number_integer())
      cfg.seed = j["seed"].get<std::uint64_t>();
    else
      errors.push_back("seed must be an unsigned integer");
  } else {
    errors.push_back("seed is required (runs never seed from the clock)");
  }

  if (j.contains("n_atoms") && j.contains("n_grid"))
    errors.push_back("give n_atoms or n_grid, not both");
  if (j.contains("n_atoms")) cfg.n_grid = {j["n_atoms"].get<int>()};
  if (j.contains("n_grid")) cfg.n_grid = j["n_grid"].get<std::vector<int>>();
  for (int n : cfg.n_grid)
    if (n < 2) errors.push_back("atom numbers must be >= 2");

  if (j.contains("probe"))
    cfg.probe_a = detail::parse_probe(j["probe"], "probe", errors);
  if (j.contains("probe_b")) {
    cfg.probe_b = detail::parse_probe(j["probe_b"], "probe_b", errors);
    cfg.probe_b_given = true;
  } else {
    cfg.probe_b = cfg.probe_a;
  }

  if (j.contains("tau_star_method")) {
    const auto s = j["tau_star_method"].get<std::string>();
    if (s == "exact-balance")
      cfg.tau_star_method = closed_form::TauStarMethod::exact_balance;
    else if (s == "formula")
      cfg.tau_star_method = closed_form::TauStarMethod::formula;
    else
      errors.push_back("tau_star_method must be exact-balance or formula");
  }

  if (j.contains("dphi") && j.contains("dphi_grid"))
    errors.push_back("give dphi or dphi_grid, not both");
  if (j.contains("dphi")) cfg.dphi_grid = {j["dphi"].get<double>()};
  if (j.contains("dphi_grid"))
    cfg.dphi_grid = j["dphi_grid"].get<std::vector<double>>();

  if (j.contains("tau_grid") && j.contains("tau_tilde_grid"))
    errors.push_back("give tau_grid or tau_tilde_grid, not both");
  if (j.contains("tau_grid"))
    cfg.tau_grid = j["tau_grid"].get<std::vector<double>>();
  if (j.contains("tau_tilde_grid"))
    cfg.tau_tilde_grid = j["tau_tilde_grid"].get<std::vector<double>>();
  if (j.contains("shots_grid"))
    cfg.shots_grid = j["shots_grid"].get<std::vector<long>>();
  if (j.contains("probe_variants")) {
    cfg.probe_variants = j["probe_variants"].get<std::vector<std::string>>();
    for (const auto& v : cfg.probe_variants)
      if (v != "coherent" && v != "tau_star")
        errors.push_back("probe_variants entries must be coherent or tau_star");
  }

  if (j.contains("shots")) cfg.shots = j["shots"].get<long>();
  if (j.contains("n_ellipses")) cfg.n_ellipses = j["n_ellipses"].get<long>();
  if (cfg.shots < 5) errors.push_back("shots must be >= 5");

  if (j.contains("methods")) {
    for (const auto& s : j["methods"]) {
      const auto m = stats::method_from_name(s.get<std::string>());
      if (!m)
        errors.push_back("unknown method: " + s.get<std::string>());
      else
        cfg.methods.push_back(*m);
    }
  }
  if (cfg.methods.empty() && cfg.kind != Kind::probe_table &&
      cfg.kind != Kind::sample && cfg.kind != Kind::fisher &&
      cfg.kind != Kind::hybrid_compare) {
    cfg.methods = {stats::Method::trace, stats::Method::ellipse_specific,
                   stats::Method::geometric, stats::Method::one_param};
    cfg.applied_defaults.push_back(
        "methods = trace, ellipse_specific, geometric, one_param");
  }

  if (j.contains("sigma_corr")) cfg.sigma_corr = j["sigma_corr"].get<double>();
  if (cfg.sigma_corr < 0) errors.push_back("sigma_corr must be >= 0");
  if (j.contains("record_phase")) cfg.record_phase = j["record_phase"].get<bool>();
  if (j.contains("contrast_free")) cfg.contrast_free = j["contrast_free"].get<bool>();

  if (j.contains("phase_grid")) {
    cfg.phase_grid = j["phase_grid"].get<int>();
  } else {
    cfg.applied_defaults.push_back("phase_grid = 4096");
  }
  if (j.contains("sampler")) {
    cfg.sampler = j["sampler"].get<std::string>();
    if (cfg.sampler != "table" && cfg.sampler != "exact")
      errors.push_back("sampler must be table or exact");
  }
  if (j.contains("workers")) cfg.workers = j["workers"].get<unsigned>();
  if (j.contains("ellipse_dphi")) {
    cfg.ellipse_dphi = j["ellipse_dphi"].get<double>();
  } else if (cfg.kind == Kind::hybrid_compare) {
    cfg.applied_defaults.push_back("ellipse_dphi = 1 rad for the ellipse arm");
  }
  if (j.contains("fit_n_min")) cfg.fit_n_min = j["fit_n_min"].get<double>();
  if (j.contains("fit_n_max")) cfg.fit_n_max = j["fit_n_max"].get<double>();
  if (j.contains("input")) cfg.input = j["input"].get<std::string>();
  if (j.contains("out")) cfg.out_dir = j["out"].get<std::string>();

  // per-kind requirements
  const bool needs_n = cfg.kind != Kind::fit;
  if (needs_n && cfg.n_grid.empty())
    errors.push_back("n_atoms (or n_grid) is required");
  if (cfg.kind == Kind::scan_tau && cfg.tau_grid.empty() &&
      cfg.tau_tilde_grid.empty())
    errors.push_back("scan-tau needs tau_grid or tau_tilde_grid");
  if (cfg.kind == Kind::scan_dphi && cfg.dphi_grid.empty())
    errors.push_back("scan-dphi needs dphi_grid");
  if (cfg.kind == Kind::scan_shots && cfg.shots_grid.empty())
    errors.push_back("scan-shots needs shots_grid");
  if (cfg.kind == Kind::scan_n && cfg.n_grid.size() < 2)
    errors.push_back("scan-N needs an n_grid with at least 2 entries");
  if (cfg.kind == Kind::fit && cfg.input.empty())
    errors.push_back("fit needs an input sample CSV");
  if (cfg.kind == Kind::fit && cfg.n_grid.empty())
    errors.push_back("fit needs n_atoms to fix the model contrast");

  if (cfg.dphi_grid.empty() && (cfg.kind == Kind::campaign ||
                                cfg.kind == Kind::scan_tau ||
                                cfg.kind == Kind::scan_n ||
                                cfg.kind == Kind::scan_shots ||
                                cfg.kind == Kind::fisher ||
                                cfg.kind == Kind::sample)) {
    cfg.dphi_grid = {1.0};
    cfg.applied_defaults.push_back("dphi = 1 rad");
  }

  // exact-only operations
  const bool wants_gaussian =
      cfg.probe_a.mode == "gaussian" || cfg.probe_b.mode == "gaussian";
  if (cfg.kind == Kind::fisher && wants_gaussian)
    errors.push_back(
        "fisher needs exact-mode probes: the information sum runs over the "
        "exact joint outcome distribution, which the moment-level gaussian "
        "approximation does not provide");
  if (cfg.kind == Kind::probe_table && wants_gaussian && cfg.sampler == "exact")
    errors.push_back("probe-table with sampler=exact needs exact-mode probes");
  for (int n : cfg.n_grid) {
    if (n > spin::exact_mode_cap &&
        (cfg.probe_a.mode == "exact" || cfg.probe_b.mode == "exact"))
      errors.push_back("exact mode caps at " +
                       std::to_string(spin::exact_mode_cap) + " atoms; N=" +
                       std::to_string(n) + " needs gaussian or auto");
    if (n > spin::exact_mode_cap && cfg.kind == Kind::fisher)
      errors.push_back("fisher caps at " + std::to_string(spin::exact_mode_cap) +
                       " atoms (exact mode only)");
  }
  if (cfg.probe_a.mode == "auto" || cfg.probe_b.mode == "auto") {
    bool any_exact = false, any_gauss = false;
    for (int n : cfg.n_grid)
      (n <= spin::exact_mode_cap ? any_exact : any_gauss) = true;
    if (any_exact)
      cfg.applied_defaults.push_back("mode = exact for N <= " +
                                     std::to_string(spin::exact_mode_cap));
    if (any_gauss)
      cfg.applied_defaults.push_back("mode = gaussian for N > " +
                                     std::to_string(spin::exact_mode_cap));
  }

  if (!errors.empty()) throw config_error(std::move(errors));
  return cfg;
}

inline RunConfig load_config(const std::string& path,
                             std::optional<Kind> cli_kind = std::nullopt,
                             bool paper_scale = false) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::parse_error& e) {
    throw config_error({std::string("config parse error: ") + e.what()});
  }
  return validate_config(j, cli_kind, paper_scale);
}

// ---- execution ----

struct ExecResult {
  bool partial_failures = false;
  std::vector<std::string> artifacts;
  double seconds = 0;
};

namespace detail {

inline std::string fd(double x) { return io::format_double(x); }

struct CampaignRowSink {
  io::CsvTable table;

  CampaignRowSink() {
    table.header = {"N",      "tau_a",       "tau_b", "dphi",  "shots",
                    "n_ellipses", "method", "kept",  "rejected",
                    "mean",   "bias",        "stderr_bias", "sigma",
                    "sigma_eff", "sql",      "gain",  "status"};
  }

  void add(const stats::CampaignReport& rep) {
    for (const auto& st : rep.methods) {
      std::vector<std::string> row;
      row.push_back(std::to_string(rep.n_atoms_a));
      row.push_back(fd(rep.tau_a));
      row.push_back(fd(rep.tau_b));
      row.push_back(fd(rep.dphi));
      row.push_back(std::to_string(rep.shots));
      row.push_back(std::to_string(rep.n_ellipses));
      row.push_back(stats::method_name(st.method));
      row.push_back(std::to_string(st.kept));
      row.push_back(std::to_string(st.rejected));
      if (st.failed) {
        for (int i = 0; i < 7; ++i) row.emplace_back();
        row.push_back("failed:all-rejected");
      } else {
        row.push_back(fd(st.mean));
        row.push_back(fd(st.bias));
        row.push_back(fd(st.stderr_bias));
        row.push_back(fd(st.sigma));
        row.push_back(fd(st.sigma_eff));
        const double sql = closed_form::sql(rep.n_atoms_a, rep.shots);
        row.push_back(fd(sql));
        row.push_back(fd(st.sigma_eff > 0 ? rep.sql_single_shot / st.sigma_eff : 0.0));
        row.push_back("ok");
      }
      table.rows.push_back(std::move(row));
    }
  }

  void add_failure(int n, double tau_a, double tau_b, double dphi, long shots,
                   long n_ell, const std::vector<stats::Method>& methods,
                   const std::string& reason) {
    for (auto m : methods) {
      std::vector<std::string> row;
      row.push_back(std::to_string(n));
      row.push_back(fd(tau_a));
      row.push_back(fd(tau_b));
      row.push_back(fd(dphi));
      row.push_back(std::to_string(shots));
      row.push_back(std::to_string(n_ell));
      row.push_back(stats::method_name(m));
      row.push_back("0");
      row.push_back("0");
      for (int i = 0; i < 7; ++i) row.emplace_back();
      row.push_back("failed:" + reason);
      table.rows.push_back(std::move(row));
    }
  }
};

inline stats::CampaignOptions campaign_options(const RunConfig& cfg) {
  stats::CampaignOptions o;
  o.sampler_mode = cfg.sampler == "exact" ? noise::PairSampler::Mode::exact
                                          : noise::PairSampler::Mode::table;
  o.table_nodes = cfg.phase_grid;
  o.workers = cfg.workers == 0 ? default_workers() : cfg.workers;
  return o;
}

inline noise::NoiseModel noise_model(const RunConfig& cfg) {
  noise::NoiseModel m;
  m.kind = noise::NoiseModel::Kind::uniform_full;
  m.correlation_error_sigma = cfg.sigma_corr;
  m.record_readout = cfg.record_phase;
  return m;
}

inline void progress(const std::string& line) {
  std::fputs((line + "\n").c_str(), stderr);
}

}  // namespace detail

// Runs a validated config, writing CSV artifacts plus a manifest into
// cfg.out_dir. Grid-point failures become tagged rows; the run continues.
inline ExecResult execute(const RunConfig& cfg) {
  namespace fs = std::filesystem;
  const auto t0 = std::chrono::steady_clock::now();
  ExecResult result;
  fs::create_directories(cfg.out_dir);
  const auto out_path = [&](const std::string& name) {
    return (fs::path(cfg.out_dir) / name).string();
  };
  const auto emit = [&](const std::string& name, const std::string& content) {
    io::write_file(out_path(name), content);
    result.artifacts.push_back(name);
  };
  const auto opts = detail::campaign_options(cfg);

  switch (cfg.kind) {
    case Kind::probe_table: {
      // fringe view of the probe: outcome moments on the phase grid
      const auto spec = cfg.probe_a.resolve(cfg.n_grid.front(), cfg.tau_star_method);
      io::CsvTable t;
      t.header = {"node", "phi", "mean_z", "var_z", "mean_closed", "var_closed"};
      std::vector<double> phis(cfg.phase_grid);
      for (int k = 0; k < cfg.phase_grid; ++k)
        phis[k] = 2.0 * std::numbers::pi * k / cfg.phase_grid;
      for (int k = 0; k < cfg.phase_grid; ++k) {
        const auto dist = spin::outcome_distribution(spec, phis[k]);
        const auto [mu, var] = spin::distribution_moments(dist);
        t.rows.push_back({std::to_string(k), detail::fd(phis[k]),
                          detail::fd(mu), detail::fd(var),
                          detail::fd(closed_form::mean_z(spec.n_atoms, spec.tau,
                                                         phis[k])),
                          detail::fd(closed_form::var_phi(spec.n_atoms, spec.tau,
                                                          phis[k]))});
      }
      emit("probe_table.csv", t.to_string());
      break;
    }

    case Kind::sample: {
      const int n = cfg.n_grid.front();
      const auto specA = cfg.probe_a.resolve(n, cfg.tau_star_method);
      const auto specB = cfg.probe_b.resolve(n, cfg.tau_star_method);
      const noise::PairSampler sampler(specA, specB, cfg.dphi_grid.front(),
                                       detail::noise_model(cfg),
                                       opts.sampler_mode, cfg.phase_grid);
      const auto sample = sampler.sample_ellipse(cfg.shots, cfg.seed);
      emit("samples.csv", noise::sample_to_csv(sample));
      break;
    }

    case Kind::fit: {
      const auto sample = noise::sample_from_csv(io::read_file(cfg.input));
      const int n = cfg.n_grid.front();
      const auto specA = cfg.probe_a.resolve(n, cfg.tau_star_method);
      const auto specB = cfg.probe_b.resolve(n, cfg.tau_star_method);
      const double CA = closed_form::contrast(specA.n_atoms, specA.tau);
      const double CB = closed_form::contrast(specB.n_atoms, specB.tau);
      io::CsvTable t;
      t.header = {"method", "dphi_est", "n_points", "status"};
      for (auto m : cfg.methods) {
        std::vector<std::string> row{stats::method_name(m)};
        try {
          std::optional<double> est;
          if (m == stats::Method::fringe) {
            est = fringe::fringe_fit(
                      sample, cfg.contrast_free
                                  ? std::nullopt
                                  : std::optional<std::array<double, 2>>(
                                        {{CA, CB}}))
                      .dphi_est;
          } else {
            est = stats::estimate_dphi(sample.points, m, CA, CB);
          }
          if (est) {
            row.push_back(detail::fd(*est));
            row.push_back(std::to_string(sample.points.size()));
            row.push_back("ok");
          } else {
            row.emplace_back();
            row.push_back(std::to_string(sample.points.size()));
            row.push_back("failed:rejected");
            result.partial_failures = true;
          }
        } catch (const std::exception& e) {
          row.emplace_back();
          row.push_back(std::to_string(sample.points.size()));
          row.push_back(std::string("failed:") + e.what());
          result.partial_failures = true;
        }
        t.rows.push_back(std::move(row));
      }
      emit("fit.csv", t.to_string());
      break;
    }

    case Kind::campaign:
    case Kind::scan_tau:
    case Kind::scan_dphi:
    case Kind::scan_n:
    case Kind::scan_shots: {
      // unified grid of (N, tau spec, dphi, shots) campaign points
      struct Point {
        int n;
        TauSpec tau;
        double dphi;
        long shots;
        std::string variant;  // labels scan-N probe variants
      };
      std::vector<Point> grid;
      const auto base_tau = cfg.probe_a.tau;
      switch (cfg.kind) {
        case Kind::campaign:
          for (double d : cfg.dphi_grid)
            grid.push_back({cfg.n_grid.front(), base_tau, d, cfg.shots, ""});
          break;
        case Kind::scan_tau:
          for (double d : cfg.dphi_grid) {
            if (!cfg.tau_grid.empty())
              for (double tv : cfg.tau_grid)
                grid.push_back({cfg.n_grid.front(),
                                {TauSpec::Form::absolute, tv}, d, cfg.shots, ""});
            else
              for (double tv : cfg.tau_tilde_grid)
                grid.push_back({cfg.n_grid.front(),
                                {TauSpec::Form::tau_tilde, tv}, d, cfg.shots, ""});
          }
          break;
        case Kind::scan_dphi:
          for (double d : cfg.dphi_grid)
            grid.push_back({cfg.n_grid.front(), base_tau, d, cfg.shots, ""});
          break;
        case Kind::scan_n: {
          std::vector<std::pair<std::string, TauSpec>> variants;
          if (cfg.probe_variants.empty()) {
            variants.emplace_back("", base_tau);
          } else {
            for (const auto& v : cfg.probe_variants)
              variants.emplace_back(
                  v, v == "coherent"
                         ? TauSpec{TauSpec::Form::absolute, 0.0}
                         : TauSpec{TauSpec::Form::tau_star_multiple, 1.0});
          }
          for (const auto& [label, tspec] : variants)
            for (int n : cfg.n_grid)
              for (double d : cfg.dphi_grid)
                grid.push_back({n, tspec, d, cfg.shots, label});
          break;
        }
        case Kind::scan_shots:
          for (long s : cfg.shots_grid)
            for (double d : cfg.dphi_grid)
              grid.push_back({cfg.n_grid.front(), base_tau, d, s, ""});
          break;
        default: break;
      }

      detail::CampaignRowSink sink;
      const bool label_variants =
          cfg.kind == Kind::scan_n && !cfg.probe_variants.empty();
      if (label_variants) sink.table.header.push_back("variant");

      std::vector<stats::CampaignReport> reports(grid.size());
      std::vector<std::string> failures(grid.size());
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto& pt = grid[g];
        detail::progress("[" + std::to_string(g + 1) + "/" +
                         std::to_string(grid.size()) + "] " +
                         kind_name(cfg.kind) + " N=" + std::to_string(pt.n) +
                         " dphi=" + detail::fd(pt.dphi));
        try {
          auto pa = cfg.probe_a;
          pa.tau = pt.tau;
          auto pb = cfg.probe_b_given ? cfg.probe_b : pa;
          if (!cfg.probe_b_given) pb.tau = pt.tau;
          const auto specA = pa.resolve(pt.n, cfg.tau_star_method);
          const auto specB = pb.resolve(pt.n, cfg.tau_star_method);
          reports[g] = stats::run_campaign(
              specA, specB, pt.dphi, detail::noise_model(cfg), pt.shots,
              cfg.n_ellipses, cfg.methods, rng::derive_stream(cfg.seed, g),
              opts);
        } catch (const std::exception& e) {
          failures[g] = e.what();
          result.partial_failures = true;
        }
      }
      for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto& pt = grid[g];
        const std::size_t before = sink.table.rows.size();
        if (failures[g].empty()) {
          sink.add(reports[g]);
          for (const auto& st : reports[g].methods)
            if (st.failed) result.partial_failures = true;
        } else {
          double ta = 0, tb = 0;
          try {
            ta = pt.tau.resolve(pt.n, cfg.tau_star_method);
            tb = ta;
          } catch (...) {
          }
          sink.add_failure(pt.n, ta, tb, pt.dphi, pt.shots, cfg.n_ellipses,
                           cfg.methods, failures[g]);
        }
        if (label_variants)
          for (std::size_t r = before; r < sink.table.rows.size(); ++r)
            sink.table.rows[r].push_back(pt.variant.empty() ? "-" : pt.variant);
      }
      emit("campaign.csv", sink.table.to_string());

      if (cfg.kind == Kind::scan_n) {
        // power-law summaries of |bias| and sigma_eff against N
        io::CsvTable sc;
        sc.header = {"quantity", "method",  "alpha",       "beta",
                     "n_used",   "n_rejected", "residual_rms", "status"};
        std::vector<std::string> variants = cfg.probe_variants;
        if (variants.empty()) variants.emplace_back("");
        for (const auto& variant : variants) {
          for (auto m : cfg.methods) {
            for (const std::string quantity : {"bias", "sigma_eff"}) {
              std::vector<std::pair<double, double>> pts;
              for (std::size_t g = 0; g < grid.size(); ++g) {
                if (grid[g].variant != variant || !failures[g].empty()) continue;
                for (const auto& st : reports[g].methods)
                  if (st.method == m && !st.failed)
                    pts.emplace_back(double(grid[g].n),
                                     quantity == std::string("bias")
                                         ? std::abs(st.bias)
                                         : st.sigma_eff);
              }
              const std::string label =
                  variant.empty() ? quantity : quantity + ":" + variant;
              std::vector<std::string> row{label, stats::method_name(m)};
              try {
                const auto fit =
                    stats::power_law_fit(pts, cfg.fit_n_min, cfg.fit_n_max);
                row.push_back(detail::fd(fit.alpha));
                row.push_back(detail::fd(fit.beta));
                row.push_back(std::to_string(fit.n_used));
                row.push_back(std::to_string(fit.n_rejected));
                row.push_back(detail::fd(fit.residual_rms));
                row.push_back("ok");
              } catch (const std::exception& e) {
                for (int i = 0; i < 5; ++i) row.emplace_back();
                row.push_back(std::string("failed:") + e.what());
                result.partial_failures = true;
              }
              sc.rows.push_back(std::move(row));
            }
          }
        }
        emit("scaling.csv", sc.to_string());
      }
      break;
    }

    case Kind::fisher: {
      io::CsvTable t;
      t.header = {"N",         "tau",          "dphi",        "nodes",
                  "fisher",    "crb_single",   "crb_shots",   "skipped_cells",
                  "skipped_mass", "status"};
      std::size_t g = 0;
      for (int n : cfg.n_grid)
        for (double d : cfg.dphi_grid) {
          detail::progress("[" + std::to_string(++g) + "] fisher N=" +
                           std::to_string(n));
          const auto spec = cfg.probe_a.resolve(n, cfg.tau_star_method);
          const auto specB = (cfg.probe_b_given ? cfg.probe_b : cfg.probe_a)
                                 .resolve(n, cfg.tau_star_method);
          std::vector<std::string> row{std::to_string(n), detail::fd(spec.tau),
                                       detail::fd(d)};
          try {
            const auto f = stats::fisher_information(spec, specB, d);
            row.push_back(std::to_string(f.nodes));
            row.push_back(detail::fd(f.fisher));
            row.push_back(detail::fd(stats::cramer_rao_bound(f.fisher, 1)));
            row.push_back(
                detail::fd(stats::cramer_rao_bound(f.fisher, double(cfg.shots))));
            row.push_back(std::to_string(f.skipped_cells));
            row.push_back(detail::fd(f.skipped_mass));
            row.push_back("ok");
          } catch (const std::exception& e) {
            for (int i = 0; i < 6; ++i) row.emplace_back();
            row.push_back(std::string("failed:") + e.what());
            result.partial_failures = true;
          }
          t.rows.push_back(std::move(row));
        }
      emit("fisher.csv", t.to_string());
      break;
    }

    case Kind::hybrid_compare: {
      io::CsvTable t;
      t.header = {"N",     "tau",   "dphi",      "shots", "n_ellipses",
                  "arm",   "kept",  "rejected",  "bias",  "stderr_bias",
                  "sigma_eff", "sql", "gain",    "sigma_ratio", "status"};
      for (std::size_t g = 0; g < cfg.n_grid.size(); ++g) {
        const int n = cfg.n_grid[g];
        detail::progress("[" + std::to_string(g + 1) + "/" +
                         std::to_string(cfg.n_grid.size()) +
                         "] hybrid-compare N=" + std::to_string(n));
        const auto spec = cfg.probe_a.resolve(n, cfg.tau_star_method);
        try {
          const auto rep = fringe::compare_methods(
              n, spec.tau, cfg.shots, cfg.n_ellipses,
              rng::derive_stream(cfg.seed, g), cfg.ellipse_dphi, opts.workers);
          const auto arm_row = [&](const char* arm, const stats::MethodStats& st,
                                   double dphi, double gain) {
            std::vector<std::string> row{
                std::to_string(n),        detail::fd(rep.tau),
                detail::fd(dphi),         std::to_string(rep.shots),
                std::to_string(rep.n_ellipses), arm,
                std::to_string(st.kept),  std::to_string(st.rejected)};
            if (st.failed) {
              for (int i = 0; i < 6; ++i) row.emplace_back();
              row.push_back("failed:all-rejected");
              result.partial_failures = true;
            } else {
              row.push_back(detail::fd(st.bias));
              row.push_back(detail::fd(st.stderr_bias));
              row.push_back(detail::fd(st.sigma_eff));
              row.push_back(detail::fd(rep.sql_single_shot));
              row.push_back(detail::fd(gain));
              row.push_back(detail::fd(rep.sigma_ratio));
              row.push_back("ok");
            }
            t.rows.push_back(std::move(row));
          };
          arm_row("ellipse", rep.ellipse, rep.ellipse_dphi, rep.gain_ellipse);
          arm_row("fringe", rep.fringe, 0.0, rep.gain_fringe);
        } catch (const std::exception& e) {
          for (const char* arm : {"ellipse", "fringe"}) {
            std::vector<std::string> row{std::to_string(n), detail::fd(spec.tau),
                                         "", std::to_string(cfg.shots),
                                         std::to_string(cfg.n_ellipses), arm,
                                         "0", "0"};
            for (int i = 0; i < 6; ++i) row.emplace_back();
            row.push_back(std::string("failed:") + e.what());
            t.rows.push_back(std::move(row));
          }
          result.partial_failures = true;
        }
      }
      emit("hybrid.csv", t.to_string());
      break;
    }
  }

  const auto t1 = std::chrono::steady_clock::now();
  result.seconds = std::chrono::duration<double>(t1 - t0).count();

  json manifest;
  manifest["tool"] = "diffsense";
  manifest["version"] = version_string;
  manifest["kind"] = kind_name(cfg.kind);
  manifest["seed"] = cfg.seed;
  manifest["config"] = cfg.to_json();
  manifest["applied_defaults"] = cfg.applied_defaults;
  manifest["artifacts"] = result.artifacts;
  manifest["timing_seconds"] = result.seconds;
  io::write_file(out_path("manifest.json"), manifest.dump(2) + "\n");
  return result;
}

}  // namespace diffsense::runner
