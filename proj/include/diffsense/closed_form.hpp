#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

#include "spin_state.hpp"

// Closed-form characterization of the twisted probe and of the differential
// estimation problem: fringe contrast, variance extrema, optimal squeezing
// strengths, sensitivity laws, the cubic-coefficient moments used by the
// one-parameter ellipse fit, and the compact analytic bias approximation.

namespace diffsense::closed_form {

inline double contrast(int n_atoms, double tau) {
  if (n_atoms < 1) throw std::invalid_argument("contrast needs N >= 1");
  return spin::detail::contrast(n_atoms, tau);
}

inline void require_profile_domain(int n_atoms, double tau) {
  if (n_atoms < 2) throw std::invalid_argument("variance closed forms need N >= 2");
  if (!(tau >= 0.0)) throw std::invalid_argument("squeezing strength must be >= 0");
}

inline double k1(int n_atoms, double tau) {
  require_profile_domain(n_atoms, tau);
  return spin::detail::k1(n_atoms, tau);
}

inline double k2(int n_atoms, double tau) {
  require_profile_domain(n_atoms, tau);
  return spin::detail::k2(n_atoms, tau);
}

inline double var_mid_fringe(int n_atoms, double tau) {
  require_profile_domain(n_atoms, tau);
  return spin::detail::var_mid(n_atoms, tau);
}

inline double var_quadrature(int n_atoms, double tau) {
  require_profile_domain(n_atoms, tau);
  return spin::detail::var_quad(n_atoms, tau);
}

inline double var_phi(int n_atoms, double tau, double phi) {
  require_profile_domain(n_atoms, tau);
  return spin::detail::var_phi(n_atoms, tau, phi);
}

inline double mean_z(int n_atoms, double tau, double phi) {
  return -contrast(n_atoms, tau) * std::sin(phi);
}

struct SqueezingProfile {
  int n_atoms;
  double tau;
  double contrast;
  double var_mid_fringe;
  double var_quadrature;
  double k1;
  double k2;
  double nu;
};

inline SqueezingProfile profile(int n_atoms, double tau) {
  require_profile_domain(n_atoms, tau);
  return SqueezingProfile{
      n_atoms,
      tau,
      contrast(n_atoms, tau),
      var_mid_fringe(n_atoms, tau),
      var_quadrature(n_atoms, tau),
      k1(n_atoms, tau),
      k2(n_atoms, tau),
      spin::resolve_nu(n_atoms, tau),
  };
}

// squeezing strength minimizing the mid-fringe variance
inline double tau_ref(int n_atoms) {
  if (n_atoms < 2) throw std::invalid_argument("tau_ref needs N >= 2");
  return std::pow(3.0, 1.0 / 6.0) * std::pow(double(n_atoms), -2.0 / 3.0);
}

enum class TauStarMethod { exact_balance, formula };

// Squeezing strength where the mid-fringe and quadrature variances balance.
// The asymptotic formula (2/N^5)^{1/6} is exposed for figure reproduction;
// the default resolves the balance condition exactly.
inline double tau_star(int n_atoms, TauStarMethod method = TauStarMethod::exact_balance) {
  if (n_atoms < 2) throw std::invalid_argument("tau_star needs N >= 2");
  const double formula = std::pow(2.0 / std::pow(double(n_atoms), 5), 1.0 / 6.0);
  if (method == TauStarMethod::formula) return formula;

  auto f = [&](double tau) {
    return spin::detail::var_mid(n_atoms, tau) - spin::detail::var_quad(n_atoms, tau);
  };
  double lo = 1e-9, hi = 2.0 * formula;
  double flo = f(lo), fhi = f(hi);
  if (!(flo > 0.0) || !(fhi < 0.0))
    throw std::runtime_error("variance balance bracket failed for N = " +
                             std::to_string(n_atoms));
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// standard quantum limit of the differential scheme
inline double sql(int n_atoms, double shots) {
  if (n_atoms < 1 || shots < 1) throw std::invalid_argument("sql needs N >= 1, shots >= 1");
  return std::sqrt(2.0) / std::sqrt(shots * double(n_atoms));
}

enum class Regime { tau_ref_mid_fringe, tau_star_mid_fringe };

// per-shot asymptotic sensitivities of the two optimized squeezing regimes
inline double sensitivity_closed_form(int n_atoms, Regime regime) {
  if (n_atoms < 2) throw std::invalid_argument("sensitivity law needs N >= 2");
  if (regime == Regime::tau_ref_mid_fringe)
    return std::pow(3.0, 1.0 / 3.0) * std::pow(double(n_atoms), -5.0 / 6.0);
  return std::pow(2.0, 1.0 / 3.0) * std::pow(double(n_atoms), -2.0 / 3.0);
}

// single-interferometer phase sensitivity by error propagation on the fringe
inline double error_propagation_sensitivity(const SqueezingProfile& p,
                                            double phi, double shots) {
  const double slope = p.contrast * std::abs(std::cos(phi));
  if (slope < 1e-12)
    throw std::domain_error("fringe slope vanishes at this operating point");
  const double var = spin::detail::var_phi(p.n_atoms, p.tau, phi);
  return std::sqrt(var / shots) / slope;
}

// implicit-conic residual of the differential ellipse at a data point
inline double average_ellipse_residual(double zA, double zB, double contrastA,
                                       double contrastB, double dphi) {
  if (!(contrastA > 0.0 && contrastA <= 1.0 && contrastB > 0.0 && contrastB <= 1.0))
    throw std::invalid_argument("contrasts must lie in (0, 1]");
  const double h = std::cos(dphi);
  const double a = zA / contrastA, b = zB / contrastB;
  return a * a + b * b - 2.0 * a * b * h - (1.0 - h * h);
}

// Large-N closed forms of the noise-averaged cubic coefficients <g_0..3>
// for equal squeezing in both interferometers.
inline std::array<double, 4> g_means_closed_form(int n_atoms, double tau, double dphi) {
  if (n_atoms < 50)
    throw std::invalid_argument("closed-form coefficient means are large-N only (N >= 50)");
  require_profile_domain(n_atoms, tau);
  const double h = std::cos(dphi);
  const double C = spin::detail::contrast(n_atoms, tau);
  const double C2 = std::pow(std::cos(2.0 * tau), n_atoms - 1);
  const double C3 = std::pow(std::cos(3.0 * tau), n_atoms - 1);
  const double s0 = spin::detail::var_mid(n_atoms, tau);
  const double sq = spin::detail::var_quad(n_atoms, tau);
  const double nu = spin::resolve_nu(n_atoms, tau);
  const double cn = std::cos(nu), sn = std::sin(nu);

  const double sigma1 = (C3 + 3.0 * C) / 4.0;
  const double sigma2 =
      -3.0 * (cn * cn * std::sin(tau) * std::sin(tau) * C +
              sn * sn * (C3 - C) / 4.0 -
              sn * cn * std::sin(2.0 * tau) * C2);

  const double C_pow3 = C * C * C;
  const double g0 = C_pow3 *
                    (-C_pow3 / 2.0 + 3.0 * C / (4.0 * n_atoms) +
                     (3.0 * sigma1 + sigma2) / 4.0) *
                    h;
  const double ds = s0 - sq;
  const double g1 = -(std::pow(C, 4) / 4.0 + C * C * (5.0 * s0 + 3.0 * sq) / 2.0 +
                      ds * ds / 4.0 - 2.0 * s0 * sq +
                      (std::pow(C, 4) / 2.0 - C * C * ds + ds * ds / 2.0) * h * h) *
                    C * C;
  const double g2 = 1.5 * std::pow(C, 6) * h;
  const double g3 = -std::pow(C, 6);
  return {g0, g1, g2, g3};
}

struct GCoefficientMoments {
  std::array<double, 4> g_means;
  Eigen::Matrix4d g_cov;   // per-shot covariance; divide by shots for G_l
  double sample_size = 1;  // scaling already applied to g_cov (1 = per shot)
};

// First and second moments of the cubic fit coefficients under the exact
// joint outcome distribution, by trapezoid quadrature over the common phase
// (periodic integrand, node count doubled until stationary).
inline GCoefficientMoments g_moments_numeric(const spin::ProbeSpec& specA,
                                             const spin::ProbeSpec& specB,
                                             double dphi) {
  const double CA = contrast(specA.n_atoms, specA.tau);
  const double CB = contrast(specB.n_atoms, specB.tau);

  struct Term {
    int pA, pB;
    double coeff;
  };
  const std::array<std::array<Term, 4>, 4> terms = {{
      {{{3, 1, CB * CB}, {1, 3, CA * CA}, {1, 1, -CA * CA * CB * CB}, {0, 0, 0.0}}},
      {{{2, 0, -CA * CB * CB * CB},
        {0, 2, -CA * CA * CA * CB},
        {2, 2, -2.0 * CA * CB},
        {0, 0, CA * CA * CA * CB * CB * CB}}},
      {{{1, 1, 3.0 * CA * CA * CB * CB}, {0, 0, 0.0}, {0, 0, 0.0}, {0, 0, 0.0}}},
      {{{0, 0, -CA * CA * CA * CB * CB * CB}, {0, 0, 0.0}, {0, 0, 0.0}, {0, 0, 0.0}}},
  }};

  auto z_powers = [](int n_atoms) {
    Eigen::MatrixXd zp(n_atoms + 1, 7);
    for (int i = 0; i <= n_atoms; ++i) {
      const double z = double(2 * i - n_atoms) / n_atoms;
      zp(i, 0) = 1.0;
      for (int p = 1; p < 7; ++p) zp(i, p) = zp(i, p - 1) * z;
    }
    return zp;
  };
  const Eigen::MatrixXd zpA = z_powers(specA.n_atoms);
  const Eigen::MatrixXd zpB = z_powers(specB.n_atoms);

  std::array<double, 4> mean{};
  Eigen::Matrix4d second = Eigen::Matrix4d::Zero();
  std::array<double, 4> prev_mean{};
  Eigen::Matrix4d prev_second;
  bool have_prev = false;

  for (int K = 256; K <= 65536; K *= 2) {
    std::vector<double> phisA(K), phisB(K);
    for (int k = 0; k < K; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / K;
      phisA[k] = phi + dphi / 2.0;
      phisB[k] = phi - dphi / 2.0;
    }
    const Eigen::MatrixXd MA = spin::batch_distributions(specA, phisA).P * zpA;
    const Eigen::MatrixXd MB = spin::batch_distributions(specB, phisB).P * zpB;

    mean.fill(0.0);
    second.setZero();
    for (int k = 0; k < K; ++k) {
      for (int j = 0; j < 4; ++j) {
        double ej = 0;
        for (const auto& t : terms[j])
          if (t.coeff != 0.0) ej += t.coeff * MA(k, t.pA) * MB(k, t.pB);
        mean[j] += ej;
        for (int l = j; l < 4; ++l) {
          double ejl = 0;
          for (const auto& t : terms[j])
            for (const auto& s : terms[l])
              if (t.coeff != 0.0 && s.coeff != 0.0)
                ejl += t.coeff * s.coeff * MA(k, t.pA + s.pA) * MB(k, t.pB + s.pB);
          second(j, l) += ejl;
        }
      }
    }
    for (int j = 0; j < 4; ++j) mean[j] /= K;
    second /= double(K);
    for (int j = 0; j < 4; ++j)
      for (int l = j + 1; l < 4; ++l) second(l, j) = second(j, l);

    if (have_prev) {
      double rel = 0;
      for (int j = 0; j < 4; ++j) {
        const double scale = std::max(std::abs(mean[j]), 1e-12);
        rel = std::max(rel, std::abs(mean[j] - prev_mean[j]) / scale);
        for (int l = 0; l < 4; ++l) {
          const double s2 = std::max(std::abs(second(j, l)), 1e-12);
          rel = std::max(rel, std::abs(second(j, l) - prev_second(j, l)) / s2);
        }
      }
      if (rel < 1e-8) {
        GCoefficientMoments out;
        out.g_means = mean;
        // g3 is a constant: pin its exact value and null covariance
        out.g_means[3] = -std::pow(CA, 3) * std::pow(CB, 3);
        out.g_cov = second;
        for (int j = 0; j < 4; ++j)
          for (int l = 0; l < 4; ++l)
            out.g_cov(j, l) -= mean[j] * mean[l];
        out.g_cov.row(3).setZero();
        out.g_cov.col(3).setZero();
        out.sample_size = 1;
        return out;
      }
    }
    prev_mean = mean;
    prev_second = second;
    have_prev = true;
  }
  throw std::runtime_error("coefficient-moment quadrature did not converge");
}

// normally-ordered generating function of the coherent probe
inline std::complex<double> generating_function(int n_atoms,
                                                std::complex<double> alpha,
                                                std::complex<double> beta,
                                                std::complex<double> gamma) {
  const std::complex<double> inner =
      std::exp(beta / 2.0) +
      std::exp(-beta / 2.0) * (alpha + 1.0) * (gamma + 1.0);
  return std::pow(inner / 2.0, n_atoms);
}

enum class BiasRegime { coherent, tau_star };

// Compact analytic estimate of the trace-fit bias. The quadratic-coefficient
// pair (H0, H2) is exact for the coherent probe; at the balanced squeezing
// point only the proportionality H0 ~ var_z is known, so the prefactor is a
// calibration parameter (default continues the coherent value -7/4).
inline double bias_approximation(int n_atoms, BiasRegime regime, double dphi,
                                 double h0_coeff = -1.75) {
  if (!(dphi > 1e-3 && dphi < std::numbers::pi - 1e-3))
    throw std::domain_error("bias approximation needs dphi away from 0 and pi");
  if (n_atoms < 2) throw std::invalid_argument("bias approximation needs N >= 2");
  const double h = std::cos(dphi);
  double H0, H2;
  if (regime == BiasRegime::coherent) {
    H0 = -7.0 / (4.0 * n_atoms);
    H2 = 1.0 / double(n_atoms);
  } else {
    const double ts = tau_star(n_atoms, TauStarMethod::exact_balance);
    H0 = h0_coeff * spin::detail::var_mid(n_atoms, ts);
    H2 = 0.0;
  }
  return -4.0 * (h / std::sin(dphi)) * (H0 + H2 * h * h) / (1.0 + 2.0 * h * h);
}

}  // namespace diffsense::closed_form
