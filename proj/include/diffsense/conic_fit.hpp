#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

// Differential-phase estimators: algebraic conic fits (trace-constrained and
// ellipse-specific), the orthogonal-distance geometric fit, and the analytic
// one-parameter fit, plus the phase extraction shared by all of them.

namespace diffsense::conic {

using Point = std::array<double, 2>;

struct degenerate_data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// thrown by the one-parameter fit when no admissible root exists
struct root_range_error : std::runtime_error {
  double nearest_root;
  root_range_error(const std::string& what, double nearest)
      : std::runtime_error(what), nearest_root(nearest) {}
};

enum class Constraint { trace, ellipse_specific, unconstrained };

struct ConicCoefficients {
  // a zA^2 + b zA zB + c zB^2 + d zA + e zB + f = 0
  Eigen::Matrix<double, 6, 1> v = Eigen::Matrix<double, 6, 1>::Zero();
  Constraint constraint = Constraint::unconstrained;

  double a() const { return v[0]; }
  double b() const { return v[1]; }
  double c() const { return v[2]; }
  double d() const { return v[3]; }
  double e() const { return v[4]; }
  double f() const { return v[5]; }
  double discriminant() const { return b() * b() - 4.0 * a() * c(); }
};

struct ScatterMatrices {
  Eigen::MatrixXd design;                 // rows (zA^2, zA zB, zB^2, zA, zB, 1)
  Eigen::Matrix<double, 6, 6> scatter;    // design^T design
};

inline ScatterMatrices build_scatter(const std::vector<Point>& pts) {
  ScatterMatrices out;
  out.design.resize(pts.size(), 6);
  for (std::size_t j = 0; j < pts.size(); ++j) {
    const double x = pts[j][0], y = pts[j][1];
    out.design.row(j) << x * x, x * y, y * y, x, y, 1.0;
  }
  out.scatter = out.design.transpose() * out.design;
  return out;
}

struct TraceFit {
  ConicCoefficients conic;
  bool is_ellipse = false;  // false means the sample must be rejected
};

// Algebraic fit under the linear constraint a + c = 1: the minimizer of
// v^T S v is S^{-1} w rescaled to the constraint (w picks out a + c).
inline TraceFit fit_trace(const std::vector<Point>& pts) {
  if (pts.size() < 6) throw std::invalid_argument("trace fit needs at least 6 points");
  const auto S = build_scatter(pts).scatter;
  Eigen::Matrix<double, 6, 1> w;
  w << 1, 0, 1, 0, 0, 0;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 6, 6>> es(S);
  const auto& lam = es.eigenvalues();  // ascending
  const double tol = 1e-12 * std::max(lam[5], 1e-300);

  TraceFit out;
  out.conic.constraint = Constraint::trace;
  if (lam[0] <= tol) {
    // data lie exactly on a conic: the null vector is the answer
    if (lam[1] <= tol)
      throw degenerate_data_error("points satisfy more than one conic");
    Eigen::Matrix<double, 6, 1> q = es.eigenvectors().col(0);
    const double trace = q[0] + q[2];
    if (std::abs(trace) <= 1e-10)
      throw degenerate_data_error("exact conic through the data has zero trace");
    out.conic.v = q / trace;
  } else {
    // S x = w through the eigenbasis (S is well-conditioned here)
    const Eigen::Matrix<double, 6, 1> proj = es.eigenvectors().transpose() * w;
    const Eigen::Matrix<double, 6, 1> x =
        es.eigenvectors() * (proj.array() / lam.array()).matrix();
    const double trace = x[0] + x[2];
    if (!(trace > 0))
      throw degenerate_data_error("scatter matrix is numerically singular");
    out.conic.v = x / trace;
  }
  out.is_ellipse = out.conic.discriminant() < 0.0;
  return out;
}

// Algebraic fit under the quadratic constraint 4ac - b^2 = 1, via the block
// reduction of the scatter matrix to a regular 3x3 eigenproblem.
inline ConicCoefficients fit_ellipse_specific(const std::vector<Point>& pts) {
  if (pts.size() < 6)
    throw std::invalid_argument("ellipse-specific fit needs at least 6 points");
  const std::size_t n = pts.size();
  Eigen::MatrixXd D1(n, 3), D2(n, 3);
  for (std::size_t j = 0; j < n; ++j) {
    const double x = pts[j][0], y = pts[j][1];
    D1.row(j) << x * x, x * y, y * y;
    D2.row(j) << x, y, 1.0;
  }
  const Eigen::Matrix3d S1 = D1.transpose() * D1;
  const Eigen::Matrix3d S2 = D1.transpose() * D2;
  const Eigen::Matrix3d S3 = D2.transpose() * D2;

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> chk(S3);
  if (chk.eigenvalues()[0] <= 1e-12 * std::max(chk.eigenvalues()[2], 1e-300))
    throw degenerate_data_error("linear block of the scatter matrix is singular");

  const Eigen::Matrix3d T = -S3.ldlt().solve(S2.transpose());
  const Eigen::Matrix3d M0 = S1 + S2 * T;
  Eigen::Matrix3d M;
  M.row(0) = M0.row(2) / 2.0;   // C1^{-1} with C1 = [[0,0,2],[0,-1,0],[2,0,0]]
  M.row(1) = -M0.row(1);
  M.row(2) = M0.row(0) / 2.0;

  Eigen::EigenSolver<Eigen::Matrix3d> es(M);
  double best_cond = 0;
  Eigen::Vector3d best = Eigen::Vector3d::Zero();
  for (int i = 0; i < 3; ++i) {
    const auto lam = es.eigenvalues()[i];
    if (std::abs(lam.imag()) > 1e-8 * (1.0 + std::abs(lam.real()))) continue;
    Eigen::Vector3d a1 = es.eigenvectors().col(i).real();
    const double cond = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
    if (cond > best_cond) {
      best_cond = cond;
      best = a1;
    }
  }
  if (best_cond <= 0)
    throw degenerate_data_error("no ellipse-admissible eigenvector");

  if (best[0] + best[2] < 0) best = -best;
  best /= std::sqrt(best_cond);  // enforce 4ac - b^2 = 1
  const Eigen::Vector3d a2 = T * best;

  ConicCoefficients out;
  out.constraint = Constraint::ellipse_specific;
  out.v << best[0], best[1], best[2], a2[0], a2[1], a2[2];
  return out;
}

struct EllipseParams {
  double cx, cy;      // center
  double ra, rb;      // semi-axes (ra along theta)
  double theta;       // tilt
};

// geometric parameters of a real ellipse; throws for non-ellipse conics
inline EllipseParams conic_to_params(const ConicCoefficients& k) {
  const double a = k.a(), b = k.b(), c = k.c(), d = k.d(), e = k.e(), f = k.f();
  const double det = 4.0 * a * c - b * b;
  if (!(det > 0)) throw std::invalid_argument("conic is not an ellipse");
  EllipseParams p{};
  p.cx = (b * e - 2.0 * c * d) / det;
  p.cy = (b * d - 2.0 * a * e) / det;
  // conic value at the center
  const double fc = f + 0.5 * (d * p.cx + e * p.cy);
  const double theta = 0.5 * std::atan2(b, a - c);
  const double ct = std::cos(theta), st = std::sin(theta);
  const double a1 = a * ct * ct + b * ct * st + c * st * st;
  const double c1 = a * st * st - b * ct * st + c * ct * ct;
  if (!(-fc / a1 > 0.0) || !(-fc / c1 > 0.0))
    throw std::invalid_argument("conic is an imaginary ellipse");
  p.theta = theta;
  p.ra = std::sqrt(-fc / a1);
  p.rb = std::sqrt(-fc / c1);
  return p;
}

inline ConicCoefficients params_to_conic(const EllipseParams& p) {
  const double ct = std::cos(p.theta), st = std::sin(p.theta);
  const double ia = 1.0 / (p.ra * p.ra), ib = 1.0 / (p.rb * p.rb);
  const double a = ct * ct * ia + st * st * ib;
  const double c = st * st * ia + ct * ct * ib;
  const double b = 2.0 * ct * st * (ia - ib);
  ConicCoefficients out;
  out.constraint = Constraint::unconstrained;
  out.v << a, b, c, -2.0 * a * p.cx - b * p.cy, -b * p.cx - 2.0 * c * p.cy,
      a * p.cx * p.cx + b * p.cx * p.cy + c * p.cy * p.cy - 1.0;
  return out;
}

namespace detail {

// Distance from (y0, y1) with y0, y1 >= 0 to the axis-aligned ellipse with
// semi-axes e0 >= e1 > 0 (first-quadrant canonical form), by bisection on
// the orthogonality condition.
inline double canonical_ellipse_distance(double e0, double e1, double y0, double y1) {
  if (e0 == e1) return std::abs(std::hypot(y0, y1) - e0);
  if (y1 == 0.0) {
    const double crit = (e0 * e0 - e1 * e1) / e0;
    if (y0 < crit) {
      const double x0 = e0 * e0 * y0 / (e0 * e0 - e1 * e1);
      const double x1 = e1 * std::sqrt(std::max(0.0, 1.0 - (x0 / e0) * (x0 / e0)));
      return std::hypot(x0 - y0, x1);
    }
    return std::abs(y0 - e0);
  }
  if (y0 == 0.0) return std::abs(y1 - e1);

  auto F = [&](double t) {
    const double u = e0 * y0 / (t + e0 * e0);
    const double v = e1 * y1 / (t + e1 * e1);
    return u * u + v * v - 1.0;
  };
  double lo = -e1 * e1 + e1 * y1;                                   // F >= 0
  double hi = -e1 * e1 + std::sqrt(e0 * e0 * y0 * y0 + e1 * e1 * y1 * y1);  // F <= 0
  for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo) + std::abs(hi));
       ++it) {
    const double mid = 0.5 * (lo + hi);
    if (F(mid) > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  const double t = 0.5 * (lo + hi);
  const double x0 = e0 * e0 * y0 / (t + e0 * e0);
  const double x1 = e1 * e1 * y1 / (t + e1 * e1);
  return std::hypot(x0 - y0, x1 - y1);
}

// dense angular fallback used if the bisection bracket ever fails
inline double angular_scan_distance(const EllipseParams& p, double u, double v) {
  double best = std::numeric_limits<double>::infinity();
  double tbest = 0;
  for (int k = 0; k < 720; ++k) {
    const double t = 2.0 * std::numbers::pi * k / 720;
    const double du = p.ra * std::cos(t) - u, dv = p.rb * std::sin(t) - v;
    const double d = du * du + dv * dv;
    if (d < best) { best = d; tbest = t; }
  }
  double a = tbest - 0.01, b = tbest + 0.01;
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  auto val = [&](double t) {
    const double du = p.ra * std::cos(t) - u, dv = p.rb * std::sin(t) - v;
    return du * du + dv * dv;
  };
  double c = b - gr * (b - a), d2 = a + gr * (b - a);
  double fc = val(c), fd = val(d2);
  for (int it = 0; it < 80; ++it) {
    if (fc < fd) { b = d2; d2 = c; fd = fc; c = b - gr * (b - a); fc = val(c); }
    else { a = c; c = d2; fc = fd; d2 = a + gr * (b - a); fd = val(d2); }
  }
  return std::sqrt(val(0.5 * (a + b)));
}

}  // namespace detail

// unsigned orthogonal distance from a point to the ellipse boundary
inline double ellipse_point_distance(const EllipseParams& p, const Point& pt) {
  const double dx = pt[0] - p.cx, dy = pt[1] - p.cy;
  const double ct = std::cos(p.theta), st = std::sin(p.theta);
  double u = ct * dx + st * dy;
  double v = -st * dx + ct * dy;
  double e0 = p.ra, e1 = p.rb, y0 = std::abs(u), y1 = std::abs(v);
  if (e1 > e0) {
    std::swap(e0, e1);
    std::swap(y0, y1);
  }
  if (!(e1 > 0)) throw std::invalid_argument("degenerate ellipse axes");
  const double d = detail::canonical_ellipse_distance(e0, e1, y0, y1);
  if (std::isfinite(d)) return d;
  return detail::angular_scan_distance(p, u, v);
}

struct GeometricFitResult {
  EllipseParams params;
  ConicCoefficients conic;
  bool converged = false;
  int iterations = 0;
  double objective = 0;
  double initial_objective = 0;
};

// Orthogonal-distance (geometric) fit: damped least squares over
// (center, axes, tilt), distances recomputed exactly per iterate.
inline GeometricFitResult fit_geometric(const std::vector<Point>& pts,
                                        const ConicCoefficients& init,
                                        int max_iterations = 200) {
  EllipseParams p = conic_to_params(init);

  auto objective = [&](const EllipseParams& q) {
    double s = 0;
    for (const auto& pt : pts) {
      const double d = ellipse_point_distance(q, pt);
      s += d * d;
    }
    return s;
  };
  auto residuals = [&](const EllipseParams& q, Eigen::VectorXd& r) {
    for (std::size_t j = 0; j < pts.size(); ++j)
      r[j] = ellipse_point_distance(q, pts[j]);
  };
  auto pack = [](const EllipseParams& q) {
    Eigen::Matrix<double, 5, 1> x;
    x << q.cx, q.cy, q.ra, q.rb, q.theta;
    return x;
  };
  auto unpack = [](const Eigen::Matrix<double, 5, 1>& x) {
    return EllipseParams{x[0], x[1], x[2], x[3], x[4]};
  };

  GeometricFitResult out;
  out.params = p;
  out.initial_objective = objective(p);
  out.objective = out.initial_objective;
  if (out.objective == 0.0) {
    out.converged = true;
    out.conic = params_to_conic(p);
    return out;
  }

  const std::size_t n = pts.size();
  Eigen::VectorXd r(n), rp(n);
  Eigen::MatrixXd J(n, 5);
  double lambda = 1e-3;
  Eigen::Matrix<double, 5, 1> x = pack(p);
  residuals(p, r);

  for (int iter = 0; iter < max_iterations; ++iter) {
    out.iterations = iter + 1;
    for (int i = 0; i < 5; ++i) {
      const double h = 1e-6 * std::max(std::abs(x[i]), 1e-2);
      Eigen::Matrix<double, 5, 1> xp = x;
      xp[i] += h;
      residuals(unpack(xp), rp);
      J.col(i) = (rp - r) / h;
    }
    const Eigen::Matrix<double, 5, 5> H = J.transpose() * J;
    const Eigen::Matrix<double, 5, 1> g = J.transpose() * r;

    bool accepted = false;
    for (int damp = 0; damp < 16; ++damp) {
      Eigen::Matrix<double, 5, 5> Hd = H;
      for (int i = 0; i < 5; ++i) Hd(i, i) += lambda * std::max(H(i, i), 1e-12);
      const Eigen::Matrix<double, 5, 1> delta = Hd.ldlt().solve(-g);
      const Eigen::Matrix<double, 5, 1> xt = x + delta;
      if (xt[2] > 0 && xt[3] > 0) {
        const EllipseParams pt = unpack(xt);
        const double ot = objective(pt);
        if (ot < out.objective) {
          const double rel_drop = (out.objective - ot) / std::max(out.objective, 1e-300);
          x = xt;
          out.params = pt;
          out.objective = ot;
          residuals(pt, r);
          lambda = std::max(lambda * 0.3, 1e-12);
          accepted = true;
          if (rel_drop < 1e-10) out.converged = true;
          break;
        }
      }
      lambda *= 4.0;
    }
    if (!accepted) {
      out.converged = true;  // no descent direction left at machine precision
      break;
    }
    if (out.converged) break;
  }
  out.conic = params_to_conic(out.params);
  return out;
}

struct PhaseEstimate {
  double dphi_est = 0;     // in [0, pi]
  const char* method = "";
  bool converged = true;
  bool clamped = false;
  int iterations = 0;
  double residual = 0;
};

// dphi = arccos(-b / (2 sqrt(ac))), the phase encoded in the quadratic part
inline PhaseEstimate phase_from_conic(const ConicCoefficients& k,
                                      const char* method = "conic") {
  if (!(k.a() > 0.0) || !(k.c() > 0.0))
    throw std::invalid_argument("phase extraction requires a > 0 and c > 0");
  double arg = -k.b() / (2.0 * std::sqrt(k.a() * k.c()));
  PhaseEstimate out;
  out.method = method;
  if (std::abs(arg) > 1.0 + 1e-9) out.clamped = true;
  arg = std::clamp(arg, -1.0, 1.0);
  out.dphi_est = std::acos(arg);
  return out;
}

struct CubicRoots {
  int count = 0;
  std::array<double, 3> roots{};
};

// All real roots of c0 + c1 h + c2 h^2 + c3 h^3 = 0, with stable branches
// and one Newton polish per root.
inline CubicRoots solve_cubic_real(double c0, double c1, double c2, double c3) {
  const double scale = std::max({std::abs(c0), std::abs(c1), std::abs(c2), std::abs(c3)});
  if (scale == 0.0) throw std::invalid_argument("all cubic coefficients are zero");

  auto polish = [&](double h) {
    for (int it = 0; it < 2; ++it) {
      const double f = ((c3 * h + c2) * h + c1) * h + c0;
      const double fp = (3.0 * c3 * h + 2.0 * c2) * h + c1;
      if (std::abs(fp) <= 1e-14 * scale) break;
      const double step = f / fp;
      if (!std::isfinite(step)) break;
      h -= step;
    }
    return h;
  };

  CubicRoots out;
  if (std::abs(c3) <= 1e-14 * scale) {
    // quadratic (or linear) degradation
    if (std::abs(c2) <= 1e-14 * scale) {
      if (std::abs(c1) <= 1e-14 * scale)
        throw std::invalid_argument("cubic has no variable dependence");
      out.roots[out.count++] = -c0 / c1;
      return out;
    }
    const double disc = c1 * c1 - 4.0 * c2 * c0;
    if (disc < 0) return out;
    const double sq = std::sqrt(disc);
    const double q = -0.5 * (c1 + (c1 >= 0 ? sq : -sq));
    out.roots[out.count++] = polish(q / c2);
    if (q != 0.0) out.roots[out.count++] = polish(c0 / q);
    return out;
  }

  const double b = c2 / c3, c = c1 / c3, d = c0 / c3;
  // depressed form t^3 + p t + q with h = t - b/3
  const double p = c - b * b / 3.0;
  const double q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
  const double shift = -b / 3.0;

  const double p_scale = std::abs(c) + b * b / 3.0 + 1e-300;
  const double q_scale =
      2.0 * std::abs(b * b * b) / 27.0 + std::abs(b * c) / 3.0 + std::abs(d) + 1e-300;
  if (std::abs(p) <= 1e-13 * p_scale && std::abs(q) <= 1e-13 * q_scale) {
    out.roots[out.count++] = shift;  // triple root
    return out;
  }

  const double disc = 0.25 * q * q + p * p * p / 27.0;
  if (disc > 0) {
    // one real root; avoid cancellation by expanding the dominant branch
    const double s = std::sqrt(disc);
    const double w = -0.5 * q - std::copysign(s, q);
    const double u = std::cbrt(w);
    const double t = (u == 0.0) ? 0.0 : u - p / (3.0 * u);
    out.roots[out.count++] = polish(t + shift);
    return out;
  }
  if (disc == 0.0) {
    const double t1 = 3.0 * q / p;        // simple root
    const double t2 = -1.5 * q / p;       // double root
    out.roots[out.count++] = polish(t1 + shift);
    out.roots[out.count++] = polish(t2 + shift);
    return out;
  }
  // three distinct real roots (trigonometric branch)
  const double m = 2.0 * std::sqrt(-p / 3.0);
  const double arg = std::clamp(3.0 * q / (p * m), -1.0, 1.0);
  const double theta = std::acos(arg) / 3.0;
  for (int k = 0; k < 3; ++k) {
    const double t = m * std::cos(theta - 2.0 * std::numbers::pi * k / 3.0);
    out.roots[out.count++] = polish(t + shift);
  }
  return out;
}

// Analytic one-parameter fit: averages the cubic coefficients over the data
// and solves for h = cos(dphi). Root selection maximizes the antiderivative
// of the fit objective's descent direction, which is equivalent to picking
// the in-range root of least squared residual.
inline PhaseEstimate fit_one_parameter(const std::vector<Point>& pts,
                                       double contrastA, double contrastB) {
  if (pts.empty()) throw std::invalid_argument("one-parameter fit needs data");
  if (!(contrastA > 0 && contrastA <= 1 && contrastB > 0 && contrastB <= 1))
    throw std::invalid_argument("contrasts must lie in (0, 1]");

  double s11 = 0, s31 = 0, s13 = 0, s20 = 0, s02 = 0, s22 = 0;
  for (const auto& pt : pts) {
    const double x = pt[0], y = pt[1];
    const double xy = x * y;
    s11 += xy;
    s31 += x * x * xy;
    s13 += y * y * xy;
    s20 += x * x;
    s02 += y * y;
    s22 += xy * xy;
  }
  const double n = double(pts.size());
  const double CA = contrastA, CB = contrastB;
  const double CA2 = CA * CA, CB2 = CB * CB;
  const double G0 = (CB2 * s31 + CA2 * s13 - CA2 * CB2 * s11) / n;
  const double G1 = (-CA * CB2 * CB * s20 - CA2 * CA * CB * s02 - 2.0 * CA * CB * s22) / n +
                    CA2 * CA * CB2 * CB;
  const double G2 = 3.0 * CA2 * CB2 * s11 / n;
  const double G3 = -CA2 * CA * CB2 * CB;

  const CubicRoots roots = solve_cubic_real(G0, G1, G2, G3);
  auto quality = [&](double h) {
    return ((G3 * h / 4.0 + G2 / 3.0) * h + G1 / 2.0) * h * h + G0 * h;
  };

  double best = 0, best_q = -std::numeric_limits<double>::infinity();
  double nearest = 0, nearest_excess = std::numeric_limits<double>::infinity();
  bool found = false;
  for (int i = 0; i < roots.count; ++i) {
    const double h = roots.roots[i];
    if (std::abs(h) <= 1.0 + 1e-12) {
      const double hc = std::clamp(h, -1.0, 1.0);
      const double qv = quality(hc);
      if (!found || qv > best_q) {
        best = hc;
        best_q = qv;
        found = true;
      }
    }
    const double excess = std::max(0.0, std::abs(h) - 1.0);
    if (excess < nearest_excess) {
      nearest_excess = excess;
      nearest = h;
    }
  }
  if (!found)
    throw root_range_error("no cubic root within [-1, 1]", nearest);

  PhaseEstimate out;
  out.method = "one_param";
  out.dphi_est = std::acos(best);
  out.residual = std::abs(((G3 * best + G2) * best + G1) * best + G0);
  return out;
}

}  // namespace diffsense::conic
