#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

// Exact collective-spin simulation of one interferometer: symmetric N-atom
// states in the Dicke basis, one-axis-twisting evolution, collective
// rotations, and population-imbalance outcome distributions.
//
// Basis convention: amplitudes[n] with n = number of atoms in mode 2,
// J_z eigenvalue m = (N - 2n)/2, imbalance z = 2m/N = (N - 2n)/N.

namespace diffsense::spin {

using complexd = std::complex<double>;

// largest atom number handled by the exact state-vector path
inline constexpr int exact_mode_cap = 2000;

struct sizing_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Closed-form moment laws for the one-axis-twisted, variance-aligned probe.
// They live here (not in the closed-form module) so the large-N gaussian
// sampling path can use them without a header cycle.
inline double contrast(int n_atoms, double tau) {
  return std::pow(std::cos(tau), n_atoms - 1);
}

inline double k1(int n_atoms, double tau) {
  return 1.0 - std::pow(std::cos(2.0 * tau), n_atoms - 2);
}

inline double k2(int n_atoms, double tau) {
  return 4.0 * std::sin(tau) * std::pow(std::cos(tau), n_atoms - 2);
}

// imbalance variance on the fringe side (phi = 0)
inline double var_mid(int n_atoms, double tau) {
  const double K1 = k1(n_atoms, tau);
  const double K2 = k2(n_atoms, tau);
  const double h = std::hypot(K1, K2);
  // K1 - hypot(K1,K2) without cancellation
  const double d = (K1 + h) > 0.0 ? -(K2 * K2) / (K1 + h) : 0.0;
  return 1.0 / n_atoms + (n_atoms - 1) * d / (4.0 * n_atoms);
}

// imbalance variance in quadrature (phi = pi/2)
inline double var_quad(int n_atoms, double tau) {
  const double C = contrast(n_atoms, tau);
  return (1.0 - C * C) - (n_atoms - 1) * k1(n_atoms, tau) / (2.0 * n_atoms);
}

inline double var_phi(int n_atoms, double tau, double phi) {
  const double c = std::cos(phi), s = std::sin(phi);
  return c * c * var_mid(n_atoms, tau) + s * s * var_quad(n_atoms, tau);
}

inline double mean_z(int n_atoms, double tau, double phi) {
  return -contrast(n_atoms, tau) * std::sin(phi);
}

// wrap into [0, 2*pi)
inline double wrap_2pi(double phi) {
  const double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(phi, two_pi);
  if (w < 0.0) w += two_pi;
  if (w >= two_pi) w = 0.0;
  return w;
}

}  // namespace detail

struct CollectiveSpinState {
  int n_atoms = 0;
  std::vector<complexd> amplitudes;  // index n = atoms in mode 2

  double norm_sq() const {
    double s = 0;
    for (const auto& a : amplitudes) s += std::norm(a);
    return s;
  }
};

inline void check_exact_size(int n_atoms) {
  if (n_atoms < 1)
    throw sizing_error("atom number must be at least 1");
  if (n_atoms > exact_mode_cap)
    throw sizing_error("atom number " + std::to_string(n_atoms) +
                       " exceeds the exact-mode cap " +
                       std::to_string(exact_mode_cap) +
                       "; use the gaussian mode");
}

// |psi_x> : all atoms in the symmetric superposition, amplitudes
// 2^{-N/2} sqrt(binom(N,n)), evaluated in log space.
inline CollectiveSpinState make_coherent(int n_atoms) {
  check_exact_size(n_atoms);
  CollectiveSpinState st;
  st.n_atoms = n_atoms;
  st.amplitudes.resize(n_atoms + 1);
  const double l2 = -0.5 * n_atoms * std::numbers::ln2;
  for (int n = 0; n <= n_atoms; ++n)
    st.amplitudes[n] = std::exp(l2 + 0.5 * detail::log_binom(n_atoms, n));
  return st;
}

// one-axis twisting exp(-i tau Jz^2): diagonal phases exp(-i tau m^2)
inline CollectiveSpinState apply_twisting(const CollectiveSpinState& st, double tau) {
  if (!std::isfinite(tau)) throw std::invalid_argument("twisting strength must be finite");
  CollectiveSpinState out = st;
  for (int n = 0; n <= st.n_atoms; ++n) {
    const double m = 0.5 * (st.n_atoms - 2 * n);
    out.amplitudes[n] *= std::exp(complexd(0.0, -tau * m * m));
  }
  return out;
}

// Eigendecomposition of Jx (real symmetric tridiagonal); cached per N.
struct RotationKernel {
  int n_atoms;
  Eigen::VectorXd lambda;   // Jx eigenvalues
  Eigen::MatrixXd vectors;  // orthogonal, columns = eigenvectors
  Eigen::VectorXd m;        // Jz eigenvalue per basis index n

  static std::shared_ptr<const RotationKernel> get(int n_atoms) {
    check_exact_size(n_atoms);
    static std::mutex mtx;
    static std::map<int, std::shared_ptr<const RotationKernel>> cache;
    std::lock_guard lock(mtx);
    auto it = cache.find(n_atoms);
    if (it != cache.end()) return it->second;

    auto k = std::make_shared<RotationKernel>();
    k->n_atoms = n_atoms;
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n_atoms + 1);
    Eigen::VectorXd sub(n_atoms);
    for (int n = 1; n <= n_atoms; ++n)
      sub[n - 1] = 0.5 * std::sqrt(double(n) * double(n_atoms - n + 1));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(diag, sub);
    if (es.info() != Eigen::Success)
      throw std::runtime_error("rotation kernel eigendecomposition failed");
    k->lambda = es.eigenvalues();
    k->vectors = es.eigenvectors();
    k->m.resize(n_atoms + 1);
    for (int n = 0; n <= n_atoms; ++n) k->m[n] = 0.5 * (n_atoms - 2 * n);
    cache.emplace(n_atoms, k);
    return k;
  }
};

enum class Axis { x, y, z };

namespace detail {

inline Eigen::VectorXcd to_eigen(const CollectiveSpinState& st) {
  return Eigen::Map<const Eigen::VectorXcd>(st.amplitudes.data(),
                                            st.amplitudes.size());
}

inline CollectiveSpinState from_eigen(int n_atoms, const Eigen::VectorXcd& v) {
  CollectiveSpinState st;
  st.n_atoms = n_atoms;
  st.amplitudes.assign(v.data(), v.data() + v.size());
  return st;
}

inline Eigen::VectorXcd rot_x_vec(const RotationKernel& k,
                                  const Eigen::VectorXcd& psi, double angle) {
  Eigen::VectorXcd t = k.vectors.transpose() * psi;
  for (int i = 0; i < t.size(); ++i)
    t[i] *= std::exp(complexd(0.0, -angle * k.lambda[i]));
  return k.vectors * t;
}

inline Eigen::VectorXcd rot_z_vec(const RotationKernel& k,
                                  const Eigen::VectorXcd& psi, double angle) {
  Eigen::VectorXcd out = psi;
  for (int i = 0; i < out.size(); ++i)
    out[i] *= std::exp(complexd(0.0, -angle * k.m[i]));
  return out;
}

}  // namespace detail

// exp(-i angle J_axis). The y rotation is composed as
// R_x(+pi/2) R_z(angle) R_x(-pi/2) so only the tridiagonal x kernel is needed.
inline CollectiveSpinState apply_rotation(const CollectiveSpinState& st,
                                          Axis axis, double angle) {
  if (!std::isfinite(angle)) throw std::invalid_argument("rotation angle must be finite");
  if (angle == 0.0) return st;
  auto kernel = RotationKernel::get(st.n_atoms);
  Eigen::VectorXcd psi = detail::to_eigen(st);
  switch (axis) {
    case Axis::x:
      psi = detail::rot_x_vec(*kernel, psi, angle);
      break;
    case Axis::z:
      psi = detail::rot_z_vec(*kernel, psi, angle);
      break;
    case Axis::y:
      psi = detail::rot_x_vec(*kernel, psi, std::numbers::pi / 2);
      psi = detail::rot_z_vec(*kernel, psi, angle);
      psi = detail::rot_x_vec(*kernel, psi, -std::numbers::pi / 2);
      break;
  }
  return detail::from_eigen(st.n_atoms, psi);
}

// interferometer phase accumulation exp(-i phi Jy)
inline CollectiveSpinState apply_interferometer(const CollectiveSpinState& st,
                                                double phi) {
  return apply_rotation(st, Axis::y, phi);
}

// mean and variance of the imbalance z = 2 Jz / N in the measurement basis
inline std::pair<double, double> z_mean_var(const CollectiveSpinState& st) {
  double mu = 0, m2 = 0;
  for (int n = 0; n <= st.n_atoms; ++n) {
    const double z = double(st.n_atoms - 2 * n) / st.n_atoms;
    const double p = std::norm(st.amplitudes[n]);
    mu += p * z;
    m2 += p * z * z;
  }
  return {mu, m2 - mu * mu};
}

// Alignment angle of the squeezing ellipse: the x-rotation angle that
// minimizes the Jz variance of the twisted state. Found from the closed-form
// candidates 0.5*atan2(K2,K1) + k*pi/2 refined by golden-section search on
// the exact state. Cached per (N, tau).
inline double resolve_nu(int n_atoms, double tau) {
  if (tau == 0.0) return 0.0;
  if (n_atoms < 2) throw std::invalid_argument("variance alignment needs at least 2 atoms");
  check_exact_size(n_atoms);

  static std::mutex mtx;
  static std::map<std::pair<int, double>, double> cache;
  {
    std::lock_guard lock(mtx);
    auto it = cache.find({n_atoms, tau});
    if (it != cache.end()) return it->second;
  }

  auto kernel = RotationKernel::get(n_atoms);
  const Eigen::VectorXcd base =
      detail::to_eigen(apply_twisting(make_coherent(n_atoms), tau));
  auto var_at = [&](double nu) {
    const Eigen::VectorXcd rot = detail::rot_x_vec(*kernel, base, nu);
    double mu = 0, m2 = 0;
    for (int n = 0; n <= n_atoms; ++n) {
      const double z = double(n_atoms - 2 * n) / n_atoms;
      const double p = std::norm(rot[n]);
      mu += p * z;
      m2 += p * z * z;
    }
    return m2 - mu * mu;
  };

  // the closed-form optimum is -0.5*atan2(K2,K1); probe both signs and the
  // pi/2-shifted branches, then refine on the exact variance
  const double half = 0.5 * std::atan2(detail::k2(n_atoms, tau),
                                       detail::k1(n_atoms, tau));
  double best = -half, best_val = var_at(-half);
  for (const double cand :
       {half, half - std::numbers::pi / 2, half + std::numbers::pi / 2,
        -half - std::numbers::pi / 2, -half + std::numbers::pi / 2}) {
    const double v = var_at(cand);
    if (v < best_val) { best = cand; best_val = v; }
  }

  // golden-section refinement around the best candidate
  double a = best - 0.3, b = best + 0.3;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = var_at(c), fd = var_at(d);
  while (b - a > 1e-10) {
    if (fc < fd) {
      b = d; d = c; fd = fc;
      c = b - gr * (b - a); fc = var_at(c);
    } else {
      a = c; c = d; fc = fd;
      d = a + gr * (b - a); fd = var_at(d);
    }
  }
  double nu = 0.5 * (a + b);
  // canonical representative in (-pi/2, pi/2] (variance is pi-periodic in nu)
  while (nu > std::numbers::pi / 2) nu -= std::numbers::pi;
  while (nu <= -std::numbers::pi / 2) nu += std::numbers::pi;

  std::lock_guard lock(mtx);
  cache.emplace(std::make_pair(n_atoms, tau), nu);
  return nu;
}

struct ProbeSpec {
  int n_atoms = 2;
  double tau = 0.0;
  bool nu_auto = true;   // minimize the Jz variance numerically
  double nu = 0.0;       // used when nu_auto is false
  enum class Mode { exact, gaussian } mode = Mode::exact;
};

inline double probe_nu(const ProbeSpec& spec) {
  if (spec.tau == 0.0) return spec.nu_auto ? 0.0 : spec.nu;
  return spec.nu_auto ? resolve_nu(spec.n_atoms, spec.tau) : spec.nu;
}

// twisted-and-aligned squeezed probe: R_x(nu) exp(-i tau Jz^2) |psi_x>
inline CollectiveSpinState make_squeezed(const ProbeSpec& spec) {
  if (spec.mode != ProbeSpec::Mode::exact)
    throw std::invalid_argument("state vectors exist only in exact mode");
  check_exact_size(spec.n_atoms);
  if (spec.tau == 0.0) return make_coherent(spec.n_atoms);
  CollectiveSpinState st = apply_twisting(make_coherent(spec.n_atoms), spec.tau);
  return apply_rotation(st, Axis::x, probe_nu(spec));
}

// Probability distribution of the measured imbalance after the probe picks up
// interferometer phase phi. Index i runs over z ascending: z_i = (2i - N)/N.
struct OutcomeDistribution {
  int n_atoms = 0;
  double phase = 0;
  std::vector<double> probabilities;

  double z_at(int i) const { return double(2 * i - n_atoms) / n_atoms; }
};

namespace detail {

// exact coherent-probe distribution: binomial with q = (1 - sin phi)/2,
// evaluated in log space; valid for phi in [0, pi)
inline std::vector<double> binomial_row(int n_atoms, double phi) {
  const double s = std::sin(phi);
  const double q = 0.5 * (1.0 - s);        // success = +z side, mean z = -sin
  std::vector<double> p(n_atoms + 1, 0.0);
  if (q <= 0.0) { p[0] = 1.0; return p; }  // z pinned at -1
  if (q >= 1.0) { p[n_atoms] = 1.0; return p; }
  const double lq = std::log(q);
  const double l1q = std::log1p(-q);
  // z_i = (2i - N)/N with i ~ Binom(N, q)
  for (int i = 0; i <= n_atoms; ++i)
    p[i] = std::exp(log_binom(n_atoms, i) + i * lq + (n_atoms - i) * l1q);
  return p;
}

inline std::vector<double> gaussian_row(int n_atoms, double tau, double phi) {
  const double mu = mean_z(n_atoms, tau, phi);
  const double var = var_phi(n_atoms, tau, phi);
  std::vector<double> p(n_atoms + 1, 0.0);
  double sum = 0;
  for (int i = 0; i <= n_atoms; ++i) {
    const double z = double(2 * i - n_atoms) / n_atoms;
    const double d = z - mu;
    p[i] = std::exp(-0.5 * d * d / var);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace detail

// Evaluates the outcome distribution with the phase canonicalized to [0, pi):
// P(z | phi + pi) is the exact index reversal of P(z | phi), and computing it
// that way makes the antipodal symmetry bit-exact.
inline OutcomeDistribution outcome_distribution(const ProbeSpec& spec, double phi) {
  if (!std::isfinite(phi)) throw std::invalid_argument("phase must be finite");
  double w = detail::wrap_2pi(phi);
  bool flip = false;
  if (w >= std::numbers::pi) {
    w -= std::numbers::pi;  // exact: both representable, Sterbenz regime
    flip = true;
  }

  OutcomeDistribution out;
  out.n_atoms = spec.n_atoms;
  out.phase = phi;
  if (spec.mode == ProbeSpec::Mode::gaussian) {
    out.probabilities = detail::gaussian_row(spec.n_atoms, spec.tau, w);
  } else if (spec.tau == 0.0) {
    out.probabilities = detail::binomial_row(spec.n_atoms, w);
  } else {
    const CollectiveSpinState st =
        apply_interferometer(make_squeezed(spec), w);
    out.probabilities.resize(spec.n_atoms + 1);
    for (int i = 0; i <= spec.n_atoms; ++i)
      out.probabilities[i] = std::norm(st.amplitudes[spec.n_atoms - i]);
  }
  if (flip) std::reverse(out.probabilities.begin(), out.probabilities.end());
  return out;
}

inline std::pair<double, double> distribution_moments(const OutcomeDistribution& d) {
  double mu = 0, m2 = 0;
  for (int i = 0; i < static_cast<int>(d.probabilities.size()); ++i) {
    const double z = d.z_at(i);
    mu += d.probabilities[i] * z;
    m2 += d.probabilities[i] * z * z;
  }
  return {mu, m2 - mu * mu};
}

// Outcome distributions at many phases at once (optionally with the exact
// analytic d/dphi), via two dense multiplications against the x-rotation
// eigenbasis. Row k of P corresponds to phis[k]; column i to z ascending.
struct DistributionBatch {
  Eigen::MatrixXd P;
  Eigen::MatrixXd dP;  // empty unless requested
};

inline DistributionBatch batch_distributions(const ProbeSpec& spec,
                                             const std::vector<double>& phis,
                                             bool want_derivative = false) {
  const int N = spec.n_atoms;
  const int K = static_cast<int>(phis.size());
  DistributionBatch out;

  if (spec.mode == ProbeSpec::Mode::gaussian || (spec.tau == 0.0 && !want_derivative)) {
    if (want_derivative)
      throw std::invalid_argument("analytic derivatives require exact mode");
    out.P.resize(K, N + 1);
    for (int k = 0; k < K; ++k) {
      const auto row = outcome_distribution(spec, phis[k]);
      for (int i = 0; i <= N; ++i) out.P(k, i) = row.probabilities[i];
    }
    return out;
  }

  auto kernel = RotationKernel::get(N);
  const Eigen::MatrixXd& V = kernel->vectors;
  const Eigen::ArrayXd lam = kernel->lambda.array();
  const Eigen::ArrayXd m = kernel->m.array();

  const CollectiveSpinState probe = make_squeezed(spec);
  const Eigen::VectorXcd xi = detail::rot_x_vec(
      *kernel, detail::to_eigen(probe), std::numbers::pi / 2);

  Eigen::MatrixXd Xre(N + 1, K), Xim(N + 1, K);
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n <= N; ++n) {
      const complexd v = xi[n] * std::exp(complexd(0.0, -phis[k] * m[n]));
      Xre(n, k) = v.real();
      Xim(n, k) = v.imag();
    }
  }

  const Eigen::ArrayXd cr = (std::numbers::pi / 2 * lam).cos();
  const Eigen::ArrayXd ci = (std::numbers::pi / 2 * lam).sin();

  // applies V * diag(exp(+i pi/2 lambda)) * V^T to the columns of (re, im)
  auto finish_rotation = [&](Eigen::MatrixXd& re, Eigen::MatrixXd& im) {
    Eigen::MatrixXd tr = V.transpose() * re;
    Eigen::MatrixXd ti = V.transpose() * im;
    Eigen::MatrixXd ur = (tr.array().colwise() * cr - ti.array().colwise() * ci).matrix();
    Eigen::MatrixXd ui = (tr.array().colwise() * ci + ti.array().colwise() * cr).matrix();
    re.noalias() = V * ur;
    im.noalias() = V * ui;
  };

  Eigen::MatrixXd Are = Xre, Aim = Xim;
  finish_rotation(Are, Aim);
  out.P.resize(K, N + 1);
  for (int k = 0; k < K; ++k)
    for (int i = 0; i <= N; ++i) {
      const int n = N - i;
      out.P(k, i) = Are(n, k) * Are(n, k) + Aim(n, k) * Aim(n, k);
    }

  if (want_derivative) {
    // d/dphi of the pre-rotation column is (-i m) elementwise
    Eigen::MatrixXd Dre = (Xim.array().colwise() * m).matrix();
    Eigen::MatrixXd Dim = (-(Xre.array().colwise() * m)).matrix();
    finish_rotation(Dre, Dim);
    out.dP.resize(K, N + 1);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i <= N; ++i) {
        const int n = N - i;
        out.dP(k, i) = 2.0 * (Are(n, k) * Dre(n, k) + Aim(n, k) * Dim(n, k));
      }
  }
  return out;
}

}  // namespace diffsense::spin
