#pragma once

#include <json.hpp>

#include "conic_fit.hpp"
#include "noise.hpp"
#include "stats.hpp"

// JSON records for samples and fit results. Doubles stay JSON numbers: the
// serializer emits shortest round-trip decimals, so values survive a
// write/read cycle bit-exactly.

namespace diffsense::serialize {

using json = nlohmann::json;

inline json to_json(const noise::EllipseSample& s) {
  json j;
  j["record"] = "ellipse_sample";
  j["shots"] = s.points.size();
  j["true_dphi"] = s.true_dphi;
  j["seed"] = s.seed;
  json pts = json::array();
  for (const auto& p : s.points) pts.push_back({p[0], p[1]});
  j["points"] = std::move(pts);
  if (s.phase_record) j["phase_record"] = *s.phase_record;
  return j;
}

inline noise::EllipseSample ellipse_sample_from_json(const json& j) {
  noise::EllipseSample s;
  s.true_dphi = j.at("true_dphi").get<double>();
  s.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& p : j.at("points"))
    s.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
  if (j.contains("phase_record"))
    s.phase_record = j["phase_record"].get<std::vector<double>>();
  return s;
}

inline json to_json(const conic::ConicCoefficients& c) {
  json j;
  j["coefficients"] = {c.a(), c.b(), c.c(), c.d(), c.e(), c.f()};
  switch (c.constraint) {
    case conic::Constraint::trace: j["constraint"] = "trace"; break;
    case conic::Constraint::ellipse_specific:
      j["constraint"] = "ellipse_specific";
      break;
    case conic::Constraint::unconstrained:
      j["constraint"] = "unconstrained";
      break;
  }
  return j;
}

inline json to_json(const conic::PhaseEstimate& e) {
  json j;
  j["record"] = "fit_result";
  j["method"] = e.method;
  j["dphi_est"] = e.dphi_est;
  j["converged"] = e.converged;
  j["clamped"] = e.clamped;
  j["iterations"] = e.iterations;
  j["residual"] = e.residual;
  return j;
}

inline json to_json(const conic::PhaseEstimate& e,
                    const conic::ConicCoefficients& c) {
  json j = to_json(e);
  j["conic"] = to_json(c);
  return j;
}

inline json to_json(const stats::MethodStats& s) {
  json j;
  j["method"] = stats::method_name(s.method);
  j["kept"] = s.kept;
  j["rejected"] = s.rejected;
  j["failed"] = s.failed;
  if (!s.failed) {
    j["mean"] = s.mean;
    j["bias"] = s.bias;
    j["sigma"] = s.sigma;
    j["stderr_bias"] = s.stderr_bias;
    j["sigma_eff"] = s.sigma_eff;
  }
  return j;
}

inline json to_json(const stats::CampaignReport& r) {
  json j;
  j["record"] = "campaign";
  j["digest"] = r.digest;
  j["n_atoms_a"] = r.n_atoms_a;
  j["n_atoms_b"] = r.n_atoms_b;
  j["tau_a"] = r.tau_a;
  j["tau_b"] = r.tau_b;
  j["dphi"] = r.dphi;
  j["shots"] = r.shots;
  j["n_ellipses"] = r.n_ellipses;
  j["sql_single_shot"] = r.sql_single_shot;
  j["methods"] = json::array();
  for (const auto& m : r.methods) j["methods"].push_back(to_json(m));
  return j;
}

}  // namespace diffsense::serialize
