#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "diffsense/closed_form.hpp"
#include "diffsense/spin_state.hpp"

using namespace diffsense;
using Catch::Approx;
using std::numbers::pi;

namespace {

double norm_sq(const spin::CollectiveSpinState& st) {
  double s = 0;
  for (const auto& a : st.amplitudes) s += std::norm(a);
  return s;
}

// independent rotation oracle: dense matrix exponential of the collective
// spin generator in the same basis (index n = atoms in mode 2, m = (N-2n)/2)
Eigen::MatrixXcd dense_generator(int n, spin::Axis axis) {
  const int dim = n + 1;
  Eigen::MatrixXcd J = Eigen::MatrixXcd::Zero(dim, dim);
  auto m_of = [&](int k) { return 0.5 * (n - 2 * k); };
  if (axis == spin::Axis::z) {
    for (int k = 0; k < dim; ++k) J(k, k) = m_of(k);
    return J;
  }
  // J- lowers m by 1 (index k -> k+1): <m-1|J-|m> = sqrt(j(j+1) - m(m-1))
  const double j = 0.5 * n;
  Eigen::MatrixXcd Jm = Eigen::MatrixXcd::Zero(dim, dim);
  for (int k = 0; k + 1 < dim; ++k) {
    const double m = m_of(k);
    Jm(k + 1, k) = std::sqrt(j * (j + 1) - m * (m - 1));
  }
  const Eigen::MatrixXcd Jp = Jm.adjoint();
  if (axis == spin::Axis::x) return 0.5 * (Jp + Jm);
  return std::complex<double>(0, -0.5) * (Jp - Jm);
}

spin::CollectiveSpinState dense_rotation(const spin::CollectiveSpinState& st,
                                         spin::Axis axis, double angle) {
  const int dim = st.n_atoms + 1;
  const Eigen::MatrixXcd J = dense_generator(st.n_atoms, axis);
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(J);
  Eigen::VectorXcd phases(dim);
  for (int k = 0; k < dim; ++k)
    phases[k] = std::exp(std::complex<double>(0, -angle) * es.eigenvalues()[k]);
  Eigen::VectorXcd v(dim);
  for (int k = 0; k < dim; ++k) v[k] = st.amplitudes[k];
  const Eigen::MatrixXcd& V = es.eigenvectors();
  const Eigen::VectorXcd out =
      V * (phases.asDiagonal() * (V.inverse() * v));
  spin::CollectiveSpinState r;
  r.n_atoms = st.n_atoms;
  r.amplitudes.assign(out.data(), out.data() + dim);
  return r;
}

double state_distance(const spin::CollectiveSpinState& a,
                      const spin::CollectiveSpinState& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.amplitudes.size(); ++i)
    d = std::max(d, std::abs(a.amplitudes[i] - b.amplitudes[i]));
  return d;
}

}  // namespace

TEST_CASE("coherent state amplitudes and normalization") {
  const auto s1 = spin::make_coherent(1);
  REQUIRE(s1.amplitudes.size() == 2);
  CHECK(s1.amplitudes[0].real() == Approx(0.7071067811865476).epsilon(1e-12));
  CHECK(s1.amplitudes[1].real() == Approx(0.7071067811865476).epsilon(1e-12));

  const auto s2 = spin::make_coherent(2);
  REQUIRE(s2.amplitudes.size() == 3);
  CHECK(s2.amplitudes[0].real() == Approx(0.5).epsilon(1e-12));
  CHECK(s2.amplitudes[1].real() == Approx(0.7071067811865476).epsilon(1e-12));
  CHECK(s2.amplitudes[2].real() == Approx(0.5).epsilon(1e-12));

  for (int n : {1, 2, 17, 100, 501, 2000}) {
    const auto st = spin::make_coherent(n);
    CHECK(st.amplitudes.size() == std::size_t(n + 1));
    CHECK(norm_sq(st) == Approx(1.0).margin(1e-10));
    for (const auto& a : st.amplitudes) {
      CHECK(a.imag() == 0.0);
      CHECK(a.real() >= 0.0);
    }
  }
}

TEST_CASE("coherent state size limits") {
  CHECK_THROWS_AS(spin::make_coherent(0), spin::sizing_error);
  CHECK_THROWS_AS(spin::make_coherent(spin::exact_mode_cap + 1),
                  spin::sizing_error);
}

TEST_CASE("one-axis twisting applies the diagonal quadratic phase") {
  const auto st = spin::make_coherent(2);
  const auto same = spin::apply_twisting(st, 0.0);
  CHECK(state_distance(st, same) == 0.0);

  // m in {1, 0, -1}: phases exp(-i pi m^2) = (-1, 1, -1)
  const auto tw = spin::apply_twisting(st, pi);
  CHECK(tw.amplitudes[0].real() == Approx(-0.5).epsilon(1e-12));
  CHECK(std::abs(tw.amplitudes[0].imag()) < 1e-12);
  CHECK(tw.amplitudes[1].real() == Approx(0.7071067811865476).epsilon(1e-12));
  CHECK(tw.amplitudes[2].real() == Approx(-0.5).epsilon(1e-12));

  for (double tau : {0.01, 0.3, 2.0}) {
    const auto t = spin::apply_twisting(spin::make_coherent(200), tau);
    CHECK(norm_sq(t) == Approx(1.0).margin(1e-12));
  }
}

TEST_CASE("rotations match a dense matrix-exponential oracle at small N") {
  for (int n : {1, 2, 3, 5}) {
    auto st = spin::apply_twisting(spin::make_coherent(n), 0.37);
    for (auto axis : {spin::Axis::x, spin::Axis::y, spin::Axis::z}) {
      for (double angle : {0.3, pi / 2, 2.5, -1.1}) {
        const auto fast = spin::apply_rotation(st, axis, angle);
        const auto slow = dense_rotation(st, axis, angle);
        INFO("N=" << n << " axis=" << int(axis) << " angle=" << angle);
        CHECK(state_distance(fast, slow) < 1e-10);
      }
    }
  }
}

TEST_CASE("rotation basics: identity, diagonality, unitarity, additivity") {
  const auto st = spin::apply_twisting(spin::make_coherent(50), 0.05);

  const auto id = spin::apply_rotation(st, spin::Axis::y, 0.0);
  CHECK(state_distance(st, id) == 0.0);

  // z-rotation leaves measurement probabilities unchanged
  const auto rz = spin::apply_rotation(st, spin::Axis::z, 1.234);
  for (std::size_t i = 0; i < st.amplitudes.size(); ++i)
    CHECK(std::norm(rz.amplitudes[i]) ==
          Approx(std::norm(st.amplitudes[i])).margin(1e-14));

  for (auto axis : {spin::Axis::x, spin::Axis::y, spin::Axis::z}) {
    const auto r = spin::apply_rotation(st, axis, 0.77);
    CHECK(norm_sq(r) == Approx(1.0).margin(1e-10));
    const auto two = spin::apply_rotation(
        spin::apply_rotation(st, axis, 0.41), axis, 0.36);
    CHECK(state_distance(r, two) < 1e-9);
  }

  CHECK_THROWS_AS(
      spin::apply_rotation(st, spin::Axis::x,
                           std::numeric_limits<double>::quiet_NaN()),
      std::invalid_argument);
}

TEST_CASE("spin-1/2 y-rotation by pi/2 splits evenly") {
  spin::CollectiveSpinState up;
  up.n_atoms = 1;
  up.amplitudes = {1.0, 0.0};
  const auto r = spin::apply_rotation(up, spin::Axis::y, pi / 2);
  CHECK(std::abs(r.amplitudes[0]) == Approx(std::cos(pi / 4)).margin(1e-12));
  CHECK(std::abs(r.amplitudes[1]) == Approx(std::sin(pi / 4)).margin(1e-12));
}

TEST_CASE("squeezed probe: tau=0 is exactly coherent") {
  spin::ProbeSpec spec;
  spec.n_atoms = 40;
  spec.tau = 0.0;
  const auto st = spin::make_squeezed(spec);
  CHECK(state_distance(st, spin::make_coherent(40)) == 0.0);
}

TEST_CASE("auto-resolved alignment angle matches a dense scan") {
  const int n = 60;
  const double tau = 0.03;
  spin::ProbeSpec spec;
  spec.n_atoms = n;
  spec.tau = tau;
  const auto [mu_auto, var_auto] = spin::z_mean_var(spin::make_squeezed(spec));
  (void)mu_auto;

  const auto tw = spin::apply_twisting(spin::make_coherent(n), tau);
  auto var_at = [&](double nu) {
    return spin::z_mean_var(spin::apply_rotation(tw, spin::Axis::x, nu)).second;
  };
  // dense scan plus golden refinement as the ground-truth minimizer
  double best_nu = 0, best = std::numeric_limits<double>::infinity();
  const int grid = 721;
  for (int k = 0; k < grid; ++k) {
    const double nu = -pi / 2 + pi * k / grid;
    if (const double v = var_at(nu); v < best) {
      best = v;
      best_nu = nu;
    }
  }
  double a = best_nu - pi / grid, b = best_nu + pi / grid;
  const double gr = (std::sqrt(5.0) - 1) / 2;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  for (int it = 0; it < 120; ++it) {
    if (var_at(c) < var_at(d)) {
      b = d; d = c; c = b - gr * (b - a);
    } else {
      a = c; c = d; d = a + gr * (b - a);
    }
  }
  const double var_scan = var_at(0.5 * (a + b));
  CHECK(var_auto == Approx(var_scan).epsilon(1e-8));

  // and the squeezed mid-fringe variance obeys the closed form
  CHECK(var_auto ==
        Approx(spin::detail::var_mid(n, tau)).epsilon(1e-8));
}

TEST_CASE("squeezing reduces the mid-fringe variance below shot noise") {
  const int n = 100;
  spin::ProbeSpec spec;
  spec.n_atoms = n;
  spec.tau = closed_form::tau_ref(n);
  const auto [mu, var] = spin::z_mean_var(spin::make_squeezed(spec));
  (void)mu;
  CHECK(var < 1.0 / n);
}

TEST_CASE("interferometer: identity at zero phase, mean fringe law") {
  const auto st = spin::make_coherent(80);
  CHECK(state_distance(st, spin::apply_interferometer(st, 0.0)) == 0.0);

  for (double phi : {0.0, 0.3, 1.2, pi / 2, 2.9}) {
    const auto [mu, var] =
        spin::z_mean_var(spin::apply_interferometer(st, phi));
    (void)var;
    CHECK(mu == Approx(-std::sin(phi)).margin(1e-9));
  }
}

TEST_CASE("fringe and variance laws across the squeezing range") {
  for (int n : {50, 100, 200}) {
    const double tau_hi =
        3.0 * closed_form::tau_star(n, closed_form::TauStarMethod::formula);
    for (double frac : {0.0, 0.2, 0.5, 1.0}) {
      const double tau = frac * tau_hi;
      spin::ProbeSpec spec;
      spec.n_atoms = n;
      spec.tau = tau;
      const double C = spin::detail::contrast(n, tau);
      for (int k = 0; k < 64; ++k) {
        const double phi = 2 * pi * k / 64;
        const auto dist = spin::outcome_distribution(spec, phi);
        const auto [mu, var] = spin::distribution_moments(dist);
        INFO("N=" << n << " tau=" << tau << " phi=" << phi);
        CHECK(std::abs(mu + C * std::sin(phi)) < 1e-9);
        const double want = spin::detail::var_phi(n, tau, phi);
        CHECK(std::abs(var - want) < 1e-8 * std::max(want, 1e-6));
      }
    }
  }
}

TEST_CASE("outcome distributions are normalized and non-negative") {
  for (double tau : {0.0, 0.01, 0.1}) {
    spin::ProbeSpec spec;
    spec.n_atoms = 120;
    spec.tau = tau;
    for (double phi : {0.0, 0.4, pi / 2, 3.0, 5.5}) {
      const auto d = spin::outcome_distribution(spec, phi);
      double sum = 0;
      for (double p : d.probabilities) {
        CHECK(p >= 0.0);
        sum += p;
      }
      CHECK(sum == Approx(1.0).margin(1e-9));
    }
  }
}

TEST_CASE("antipodal phases mirror the distribution exactly") {
  for (double tau : {0.0, 0.02}) {
    spin::ProbeSpec spec;
    spec.n_atoms = 90;
    spec.tau = tau;
    for (double phi : {0.1, 1.0, 2.7, 4.4, -0.6}) {
      const auto d0 = spin::outcome_distribution(spec, phi);
      const auto d1 = spin::outcome_distribution(spec, phi + pi);
      for (int i = 0; i <= 90; ++i)
        REQUIRE(d1.probabilities[i] ==
                Approx(d0.probabilities[90 - i]).margin(1e-13).epsilon(1e-12));
    }
  }
}

TEST_CASE("coherent distribution pins to the pole at quarter fringe") {
  spin::ProbeSpec spec;
  spec.n_atoms = 2;
  spec.tau = 0.0;
  const auto d = spin::outcome_distribution(spec, pi / 2);
  // mean -sin(pi/2) = -1: all mass on z = -1, which is index 0
  CHECK(d.probabilities[0] == Approx(1.0).margin(1e-12));
  CHECK(d.probabilities[1] == Approx(0.0).margin(1e-12));
  CHECK(d.probabilities[2] == Approx(0.0).margin(1e-12));
}

TEST_CASE("coherent moments: mid-fringe shot noise, cosine-squared variance") {
  spin::ProbeSpec spec;
  spec.n_atoms = 250;
  spec.tau = 0.0;
  const auto mid = spin::distribution_moments(spin::outcome_distribution(spec, 0.0));
  CHECK(std::abs(mid.first) < 1e-12);
  CHECK(mid.second == Approx(1.0 / 250).epsilon(1e-10));
  for (double phi : {0.3, 1.0, pi / 2}) {
    const auto m = spin::distribution_moments(spin::outcome_distribution(spec, phi));
    const double want = std::cos(phi) * std::cos(phi) / 250;
    CHECK(std::abs(m.second - want) < 1e-10);
  }
}

TEST_CASE("balanced squeezing flattens the variance near the predicted level") {
  const int n = 500;
  spin::ProbeSpec spec;
  spec.n_atoms = n;
  spec.tau = closed_form::tau_star(n, closed_form::TauStarMethod::exact_balance);
  const double predicted = std::pow(2.0, -1.0 / 3.0) * std::pow(double(n), -4.0 / 3.0);
  for (double phi : {0.0, 0.7, pi / 2}) {
    const auto m = spin::distribution_moments(spin::outcome_distribution(spec, phi));
    CHECK(m.second == Approx(predicted).epsilon(0.10));
  }
}

TEST_CASE("gaussian mode approaches the exact distribution as N grows") {
  struct Dist {
    double tv;   // half L1 distance
    double sup;  // largest per-node probability gap
  };
  auto distance = [](int n, double tau, double phi) {
    spin::ProbeSpec ex, ga;
    ex.n_atoms = ga.n_atoms = n;
    ex.tau = ga.tau = tau;
    ga.mode = spin::ProbeSpec::Mode::gaussian;
    const auto de = spin::outcome_distribution(ex, phi);
    const auto dg = spin::outcome_distribution(ga, phi);
    Dist out{0, 0};
    for (int i = 0; i <= n; ++i) {
      const double d = std::abs(de.probabilities[i] - dg.probabilities[i]);
      out.tv += d;
      out.sup = std::max(out.sup, d);
    }
    out.tv /= 2;
    return out;
  };

  // mid-fringe: the exact distribution has no skewness, so the
  // moment-matched normal nails it
  const double tau500 =
      closed_form::tau_star(500, closed_form::TauStarMethod::exact_balance);
  CHECK(distance(500, tau500, 0.0).tv < 0.01);

  // off mid-fringe the sphere curvature skews the exact law (skewness
  // ~ -0.3 here); a two-moment normal cannot remove that, so the L1 gap
  // saturates near 4% while per-node errors still shrink with N
  const Dist at500 = distance(500, tau500, 0.3);
  CHECK(at500.tv < 0.06);
  CHECK(at500.sup < 0.01);

  const double scale = std::pow(2.0, 1.0 / 6.0);  // tau * N^{5/6} held fixed
  const double s100 = distance(100, scale * std::pow(100.0, -5.0 / 6.0), 0.3).sup;
  const double s200 = distance(200, scale * std::pow(200.0, -5.0 / 6.0), 0.3).sup;
  const double s500 = distance(500, scale * std::pow(500.0, -5.0 / 6.0), 0.3).sup;
  CHECK(s100 > s200);
  CHECK(s200 > s500);
}

TEST_CASE("batched distributions agree with one-at-a-time evaluation") {
  spin::ProbeSpec spec;
  spec.n_atoms = 70;
  spec.tau = 0.015;
  std::vector<double> phis;
  for (int k = 0; k < 9; ++k) phis.push_back(0.1 + 0.7 * k);
  const auto batch = spin::batch_distributions(spec, phis);
  for (std::size_t k = 0; k < phis.size(); ++k) {
    const auto single = spin::outcome_distribution(spec, phis[k]);
    for (int i = 0; i <= 70; ++i)
      CHECK(std::abs(batch.P(int(k), i) - single.probabilities[i]) < 1e-13);
  }
}

TEST_CASE("analytic phase derivative matches finite differences") {
  spin::ProbeSpec spec;
  spec.n_atoms = 100;
  spec.tau = 0.02;
  const std::vector<double> phis = {0.3, 1.1, 2.2};
  const auto batch = spin::batch_distributions(spec, phis, true);
  const double h = 1e-5;
  for (std::size_t k = 0; k < phis.size(); ++k) {
    std::vector<double> up{phis[k] + h}, dn{phis[k] - h};
    const auto bu = spin::batch_distributions(spec, up);
    const auto bd = spin::batch_distributions(spec, dn);
    double worst = 0, scale = 0;
    for (int i = 0; i <= 100; ++i) {
      const double fd = (bu.P(0, i) - bd.P(0, i)) / (2 * h);
      worst = std::max(worst, std::abs(batch.dP(int(k), i) - fd));
      scale = std::max(scale, std::abs(fd));
    }
    CHECK(worst < 1e-6 * std::max(scale, 1.0));
  }
}

TEST_CASE("gaussian mode works beyond the exact-mode cap") {
  spin::ProbeSpec spec;
  spec.n_atoms = 5000;
  spec.tau = 1e-4;
  spec.mode = spin::ProbeSpec::Mode::gaussian;
  const auto d = spin::outcome_distribution(spec, 0.4);
  double sum = 0;
  for (double p : d.probabilities) sum += p;
  CHECK(sum == Approx(1.0).margin(1e-9));
  CHECK_THROWS_AS(spin::make_squeezed(spec), std::invalid_argument);
}
