#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "closed_form.hpp"
#include "conic_fit.hpp"
#include "io.hpp"
#include "noise.hpp"
#include "parallel.hpp"
#include "rng.hpp"

// Campaign-level statistics: estimator bias/variance over ensembles of
// correlated samples, Fisher information of the noise-averaged joint
// distribution, the Cramer-Rao bound, gain and scaling fits.

namespace diffsense::stats {

enum class Method { trace, ellipse_specific, geometric, one_param, fringe };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::trace: return "trace";
    case Method::ellipse_specific: return "ellipse_specific";
    case Method::geometric: return "geometric";
    case Method::one_param: return "one_param";
    case Method::fringe: return "fringe";
  }
  return "?";
}

inline std::optional<Method> method_from_name(const std::string& s) {
  if (s == "trace") return Method::trace;
  if (s == "ellipse_specific" || s == "ellipse-specific") return Method::ellipse_specific;
  if (s == "geometric") return Method::geometric;
  if (s == "one_param" || s == "one-param") return Method::one_param;
  if (s == "fringe") return Method::fringe;
  return std::nullopt;
}

struct MethodStats {
  Method method = Method::trace;
  long kept = 0;
  long rejected = 0;
  double mean = 0;
  double bias = 0;
  double sigma = 0;        // std dev of the per-sample estimates
  double stderr_bias = 0;  // sigma / sqrt(kept)
  double sigma_eff = 0;    // sqrt(shots) * sigma
  bool failed = false;     // every sample rejected
};

struct CampaignReport {
  std::string digest;
  int n_atoms_a = 0, n_atoms_b = 0;
  double tau_a = 0, tau_b = 0;
  double dphi = 0;
  long shots = 0;
  long n_ellipses = 0;
  double sql_single_shot = 0;  // SQL at one shot for the probe atom number
  std::vector<MethodStats> methods;

  const MethodStats& method(Method m) const {
    for (const auto& s : methods)
      if (s.method == m) return s;
    throw std::out_of_range("method not part of this campaign");
  }
};

struct CampaignOptions {
  noise::PairSampler::Mode sampler_mode = noise::PairSampler::Mode::table;
  int table_nodes = 4096;
  unsigned workers = 1;
  std::size_t memory_budget_bytes = std::size_t(4) << 30;
};

// single-sample application of one estimator; empty optional = rejected
inline std::optional<double> estimate_dphi(const std::vector<conic::Point>& pts,
                                           Method method, double contrastA,
                                           double contrastB) {
  try {
    switch (method) {
      case Method::trace: {
        const auto fit = conic::fit_trace(pts);
        if (!fit.is_ellipse) return std::nullopt;
        return conic::phase_from_conic(fit.conic, "trace").dphi_est;
      }
      case Method::ellipse_specific: {
        const auto fit = conic::fit_ellipse_specific(pts);
        return conic::phase_from_conic(fit, "ellipse_specific").dphi_est;
      }
      case Method::geometric: {
        conic::ConicCoefficients init;
        const auto tr = conic::fit_trace(pts);
        if (tr.is_ellipse)
          init = tr.conic;
        else
          init = conic::fit_ellipse_specific(pts);
        const auto geo = conic::fit_geometric(pts, init);
        return conic::phase_from_conic(geo.conic, "geometric").dphi_est;
      }
      case Method::one_param:
        return conic::fit_one_parameter(pts, contrastA, contrastB).dphi_est;
      case Method::fringe:
        throw std::logic_error("fringe estimation needs a phase record");
    }
  } catch (const conic::degenerate_data_error&) {
    return std::nullopt;
  } catch (const conic::root_range_error&) {
    return std::nullopt;
  } catch (const std::invalid_argument&) {
    return std::nullopt;
  }
  return std::nullopt;
}

// per-sample estimates (empty optional = rejection) -> campaign statistics,
// accumulated in sample order so results do not depend on scheduling
inline MethodStats aggregate_estimates(const std::vector<std::optional<double>>& est,
                                       Method tag, double dphi, long shots) {
  MethodStats st;
  st.method = tag;
  double sum = 0;
  for (const auto& v : est) {
    if (v) {
      ++st.kept;
      sum += *v;
    } else {
      ++st.rejected;
    }
  }
  if (st.kept == 0) {
    st.failed = true;
    return st;
  }
  st.mean = sum / st.kept;
  double ssq = 0;
  for (const auto& v : est)
    if (v) {
      const double d = *v - st.mean;
      ssq += d * d;
    }
  st.bias = st.mean - dphi;
  st.sigma = st.kept > 1 ? std::sqrt(ssq / (st.kept - 1)) : 0.0;
  st.stderr_bias = st.sigma / std::sqrt(double(st.kept));
  st.sigma_eff = std::sqrt(double(shots)) * st.sigma;
  return st;
}

inline CampaignReport run_campaign(const spin::ProbeSpec& specA,
                                   const spin::ProbeSpec& specB, double dphi,
                                   const noise::NoiseModel& model, long shots,
                                   long n_ellipses,
                                   const std::vector<Method>& methods,
                                   std::uint64_t seed,
                                   const CampaignOptions& opts = {}) {
  if (n_ellipses < 2) throw std::invalid_argument("need at least 2 ellipses");
  if (methods.empty()) throw std::invalid_argument("no estimation method requested");
  for (Method m : methods)
    if (m == Method::fringe)
      throw std::invalid_argument("fringe runs through its own campaign");

  const noise::PairSampler sampler(specA, specB, dphi, model, opts.sampler_mode,
                                   opts.table_nodes, opts.memory_budget_bytes);
  const double CA = closed_form::contrast(specA.n_atoms, specA.tau);
  const double CB = closed_form::contrast(specB.n_atoms, specB.tau);

  const std::size_t n_methods = methods.size();
  std::vector<std::vector<std::optional<double>>> est(
      n_ellipses, std::vector<std::optional<double>>(n_methods));

  parallel_for(std::size_t(n_ellipses), opts.workers, [&](std::size_t e) {
    const auto sample =
        sampler.sample_ellipse(shots, rng::derive_stream(seed, e));
    for (std::size_t m = 0; m < n_methods; ++m)
      est[e][m] = estimate_dphi(sample.points, methods[m], CA, CB);
  });

  CampaignReport report;
  report.n_atoms_a = specA.n_atoms;
  report.n_atoms_b = specB.n_atoms;
  report.tau_a = specA.tau;
  report.tau_b = specB.tau;
  report.dphi = dphi;
  report.shots = shots;
  report.n_ellipses = n_ellipses;
  report.sql_single_shot = closed_form::sql(specA.n_atoms, 1);
  report.digest = "N=" + std::to_string(specA.n_atoms) + "/" +
                  std::to_string(specB.n_atoms) +
                  ";tau=" + io::format_double(specA.tau) + "/" +
                  io::format_double(specB.tau) +
                  ";dphi=" + io::format_double(dphi) +
                  ";shots=" + std::to_string(shots) +
                  ";n_ell=" + std::to_string(n_ellipses) +
                  ";seed=" + std::to_string(seed);

  std::vector<std::optional<double>> column(n_ellipses);
  for (std::size_t m = 0; m < n_methods; ++m) {
    for (long e = 0; e < n_ellipses; ++e) column[e] = est[e][m];
    report.methods.push_back(
        aggregate_estimates(column, methods[m], dphi, shots));
  }
  return report;
}

// ---- Fisher information ----

struct FisherResult {
  double fisher = 0;
  double skipped_mass = 0;  // probability excluded by the P > 1e-300 cut
  long skipped_cells = 0;
  int nodes = 0;            // quadrature nodes at convergence
};

struct FisherOptions {
  int start_nodes = 256;
  int max_nodes = 65536;
  double rel_tol = 1e-8;
  bool verify = true;       // finite-difference + Richardson cross-check
  double fd_step = 1e-4;
};

namespace detail {

// noise-averaged joint distribution (and optionally its dphi-derivative) on
// K uniform phase nodes, accumulated in node chunks to bound memory
inline void joint_grids(const spin::ProbeSpec& specA, const spin::ProbeSpec& specB,
                        double dphi, int K, bool want_derivative,
                        Eigen::MatrixXd& P, Eigen::MatrixXd* dP) {
  P.setZero(specA.n_atoms + 1, specB.n_atoms + 1);
  if (dP) dP->setZero(specA.n_atoms + 1, specB.n_atoms + 1);
  const int chunk = 2048;
  for (int k0 = 0; k0 < K; k0 += chunk) {
    const int kn = std::min(chunk, K - k0);
    std::vector<double> phisA(kn), phisB(kn);
    for (int k = 0; k < kn; ++k) {
      const double phi = 2.0 * std::numbers::pi * (k0 + k) / K;
      phisA[k] = phi + dphi / 2.0;
      phisB[k] = phi - dphi / 2.0;
    }
    const auto A = spin::batch_distributions(specA, phisA, want_derivative);
    const auto B = spin::batch_distributions(specB, phisB, want_derivative);
    P.noalias() += A.P.transpose() * B.P;
    if (dP) {
      // d/d(dphi) shifts the two arms oppositely by half
      dP->noalias() += 0.5 * (A.dP.transpose() * B.P - A.P.transpose() * B.dP);
    }
  }
  P /= double(K);
  if (dP) *dP /= double(K);
}

inline double fisher_sum(const Eigen::MatrixXd& P, const Eigen::MatrixXd& dP,
                         double* skipped_mass, long* skipped_cells) {
  double F = 0, mass = 0;
  long cells = 0;
  for (int i = 0; i < P.rows(); ++i)
    for (int j = 0; j < P.cols(); ++j) {
      const double p = P(i, j);
      if (p > 1e-300) {
        F += dP(i, j) * dP(i, j) / p;
      } else {
        mass += std::max(p, 0.0);
        ++cells;
      }
    }
  if (skipped_mass) *skipped_mass = mass;
  if (skipped_cells) *skipped_cells = cells;
  return F;
}

}  // namespace detail

// Fisher information of the differential phase carried by the joint outcome
// distribution under full-range common phase noise. The derivative is
// analytic (generator applied to the state); a central-difference Richardson
// reconstruction at the converged node count guards against derivative bugs.
inline FisherResult fisher_information(const spin::ProbeSpec& specA,
                                       const spin::ProbeSpec& specB, double dphi,
                                       const FisherOptions& opts = {}) {
  if (specA.mode != spin::ProbeSpec::Mode::exact ||
      specB.mode != spin::ProbeSpec::Mode::exact)
    throw std::invalid_argument("Fisher information requires exact-mode probes");

  FisherResult out;
  Eigen::MatrixXd P, dP;
  double prev = -1;
  bool converged = false;
  for (int K = opts.start_nodes; K <= opts.max_nodes; K *= 2) {
    detail::joint_grids(specA, specB, dphi, K, true, P, &dP);
    out.fisher = detail::fisher_sum(P, dP, &out.skipped_mass, &out.skipped_cells);
    out.nodes = K;
    if (prev >= 0 &&
        std::abs(out.fisher - prev) <= opts.rel_tol * std::max(out.fisher, 1e-300)) {
      converged = true;
      break;
    }
    prev = out.fisher;
  }
  if (!converged)
    throw std::runtime_error("Fisher quadrature did not converge");

  if (opts.verify) {
    const double h = opts.fd_step;
    Eigen::MatrixXd Pp, Pm, Pp2, Pm2;
    detail::joint_grids(specA, specB, dphi + h, out.nodes, false, Pp, nullptr);
    detail::joint_grids(specA, specB, dphi - h, out.nodes, false, Pm, nullptr);
    detail::joint_grids(specA, specB, dphi + h / 2, out.nodes, false, Pp2, nullptr);
    detail::joint_grids(specA, specB, dphi - h / 2, out.nodes, false, Pm2, nullptr);
    const Eigen::MatrixXd d1 = (Pp - Pm) / (2.0 * h);
    const Eigen::MatrixXd d2 = (Pp2 - Pm2) / h;
    const Eigen::MatrixXd richardson = (4.0 * d2 - d1) / 3.0;
    const double f_check = detail::fisher_sum(P, richardson, nullptr, nullptr);
    if (std::abs(f_check - out.fisher) > 1e-6 * std::max(out.fisher, 1e-300))
      throw std::runtime_error(
          "Fisher derivative inconsistency: analytic " +
          io::format_double(out.fisher) + " vs finite-difference " +
          io::format_double(f_check));
  }
  return out;
}

inline double cramer_rao_bound(double fisher, double shots) {
  if (!(fisher > 0)) throw std::invalid_argument("Fisher information must be positive");
  if (!(shots >= 1)) throw std::invalid_argument("need at least one shot");
  return 1.0 / std::sqrt(shots * fisher);
}

inline double gain(double sql_value, double sigma_eff) {
  return sql_value / sigma_eff;
}

// decibel gap between a measured sensitivity and a reference, on the
// decade convention 10*log10(sigma / reference)
inline double sensitivity_gap_db(double sigma_eff, double reference) {
  return 10.0 * std::log10(sigma_eff / reference);
}

// ---- power-law scaling fits ----

struct ScalingFit {
  double alpha = 0;  // log10 intercept
  double beta = 0;   // decay exponent: log10 y = alpha - beta log10 x
  double x_min = 0, x_max = 0;
  int n_used = 0;
  int n_rejected = 0;  // out of range or non-positive
  double residual_rms = 0;
};

inline ScalingFit power_law_fit(const std::vector<std::pair<double, double>>& pts,
                                double x_min, double x_max) {
  ScalingFit fit;
  fit.x_min = x_min;
  fit.x_max = x_max;
  std::vector<std::pair<double, double>> logs;
  for (const auto& [x, y] : pts) {
    if (x < x_min || x > x_max || !(y > 0)) {
      ++fit.n_rejected;
      continue;
    }
    logs.emplace_back(std::log10(x), std::log10(y));
  }
  fit.n_used = int(logs.size());
  if (fit.n_used < 3)
    throw std::invalid_argument("power-law fit needs at least 3 admissible points");

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [X, Y] : logs) {
    sx += X;
    sy += Y;
    sxx += X * X;
    sxy += X * Y;
  }
  const double n = double(fit.n_used);
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  fit.alpha = (sy - slope * sx) / n;
  fit.beta = -slope;
  double ss = 0;
  for (const auto& [X, Y] : logs) {
    const double r = Y - (fit.alpha + slope * X);
    ss += r * r;
  }
  fit.residual_rms = std::sqrt(ss / n);
  return fit;
}

// ---- analytic statistics of the one-parameter fit ----

struct OneParamAnalytic {
  double mean = 0;
  double variance = 0;
};

namespace detail {

inline double root_by_quality(const std::array<double, 4>& G) {
  const auto roots = conic::solve_cubic_real(G[0], G[1], G[2], G[3]);
  auto quality = [&](double h) {
    return ((G[3] * h / 4.0 + G[2] / 3.0) * h + G[1] / 2.0) * h * h + G[0] * h;
  };
  double best = 0, best_q = -std::numeric_limits<double>::infinity();
  double nearest = 0, nearest_excess = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int i = 0; i < roots.count; ++i) {
    const double h = roots.roots[i];
    if (std::abs(h) <= 1.0 + 1e-12) {
      const double hc = std::clamp(h, -1.0, 1.0);
      if (const double q = quality(hc); !found || q > best_q) {
        best = hc;
        best_q = q;
        found = true;
      }
    }
    if (const double ex = std::max(0.0, std::abs(h) - 1.0); ex < nearest_excess) {
      nearest_excess = ex;
      nearest = h;
    }
  }
  if (!found)
    throw conic::root_range_error("mean-point cubic has no root in [-1, 1]", nearest);
  return best;
}

inline double root_nearest_to(const std::array<double, 4>& G, double target) {
  const auto roots = conic::solve_cubic_real(G[0], G[1], G[2], G[3]);
  double best = roots.roots[0];
  for (int i = 1; i < roots.count; ++i)
    if (std::abs(roots.roots[i] - target) < std::abs(best - target))
      best = roots.roots[i];
  return std::clamp(best, -1.0, 1.0);
}

}  // namespace detail

// Large-sample mean and variance of the one-parameter estimator from the
// coefficient moments: mean through the cubic root at the mean coefficients,
// variance by first-order propagation with finite-difference sensitivities.
inline OneParamAnalytic one_param_analytic_stats(
    const closed_form::GCoefficientMoments& moments, double shots) {
  if (!(shots >= 100))
    throw std::invalid_argument("analytic statistics need at least 100 shots");

  const std::array<double, 4>& G = moments.g_means;
  const double h_star = detail::root_by_quality(G);

  OneParamAnalytic out;
  out.mean = std::acos(h_star);

  std::array<double, 4> grad{};
  for (int l = 0; l < 4; ++l) {
    const double step = 1e-6 * std::max(std::abs(G[l]), 1e-3);
    std::array<double, 4> gp = G, gm = G;
    gp[l] += step;
    gm[l] -= step;
    const double fp = std::acos(detail::root_nearest_to(gp, h_star));
    const double fm = std::acos(detail::root_nearest_to(gm, h_star));
    grad[l] = (fp - fm) / (2.0 * step);
  }
  double var = 0;
  for (int j = 0; j < 4; ++j)
    for (int l = 0; l < 4; ++l)
      var += grad[j] * moments.g_cov(j, l) * grad[l];
  out.variance = var / (shots / moments.sample_size);
  return out;
}

}  // namespace diffsense::stats
