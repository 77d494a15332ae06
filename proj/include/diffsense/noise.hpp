#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "io.hpp"
#include "rng.hpp"
#include "spin_state.hpp"

// Common-mode phase-noise models, the noise-averaged joint outcome
// distribution, and reproducible correlated-pair Monte Carlo sampling.

namespace diffsense::noise {

struct NoiseModel {
  enum class Kind { uniform_full, fixed, recorded };
  Kind kind = Kind::uniform_full;
  double phi0 = 0.0;                  // fixed kind
  std::vector<double> recorded;       // recorded kind: true phase sequence
  double correlation_error_sigma = 0; // width of the normal readout error
  bool record_readout = false;        // append per-shot phase readouts
};

// joint probability of the two imbalances after averaging over the noise,
// P(z_A, z_B | dphi); indices ascending in z on both axes
struct JointDistributionGrid {
  int n_atoms_a = 0, n_atoms_b = 0;
  double dphi = 0;
  Eigen::MatrixXd p;  // (N_A+1) x (N_B+1)

  double z_a(int i) const { return double(2 * i - n_atoms_a) / n_atoms_a; }
  double z_b(int j) const { return double(2 * j - n_atoms_b) / n_atoms_b; }
};

// Trapezoid quadrature over the full-range uniform common phase (periodic
// integrand), doubling the node count until the grid is stationary.
inline JointDistributionGrid joint_distribution(const spin::ProbeSpec& specA,
                                                const spin::ProbeSpec& specB,
                                                double dphi) {
  JointDistributionGrid out;
  out.n_atoms_a = specA.n_atoms;
  out.n_atoms_b = specB.n_atoms;
  out.dphi = dphi;

  Eigen::MatrixXd prev;
  for (int K = 256; K <= 65536; K *= 2) {
    std::vector<double> phisA(K), phisB(K);
    for (int k = 0; k < K; ++k) {
      const double phi = 2.0 * std::numbers::pi * k / K;
      phisA[k] = phi + dphi / 2.0;
      phisB[k] = phi - dphi / 2.0;
    }
    const Eigen::MatrixXd PA = spin::batch_distributions(specA, phisA).P;
    const Eigen::MatrixXd PB = spin::batch_distributions(specB, phisB).P;
    out.p.noalias() = PA.transpose() * PB;
    out.p /= double(K);
    if (prev.size() && (out.p - prev).cwiseAbs().sum() < 1e-9) return out;
    prev = out.p;
  }
  throw std::runtime_error("joint-distribution quadrature did not converge");
}

struct JointMoments {
  double mean_a, mean_b, var_a, var_b, cov;
};

inline JointMoments joint_moments(const JointDistributionGrid& g) {
  JointMoments m{0, 0, 0, 0, 0};
  double maa = 0, mbb = 0, mab = 0;
  for (int i = 0; i < g.p.rows(); ++i)
    for (int j = 0; j < g.p.cols(); ++j) {
      const double w = g.p(i, j), za = g.z_a(i), zb = g.z_b(j);
      m.mean_a += w * za;
      m.mean_b += w * zb;
      maa += w * za * za;
      mbb += w * zb * zb;
      mab += w * za * zb;
    }
  m.var_a = maa - m.mean_a * m.mean_a;
  m.var_b = mbb - m.mean_b * m.mean_b;
  m.cov = mab - m.mean_a * m.mean_b;
  return m;
}

// Inverse-CDF tables of the outcome distribution on a uniform grid of phase
// nodes. Rows for the second half-circle are exact index reversals of the
// first half (antipodal parity), halving the build cost and making the
// parity bit-exact.
class SamplerTable {
 public:
  SamplerTable(const spin::ProbeSpec& spec, int nodes = 4096,
               std::size_t memory_budget_bytes = std::size_t(4) << 30)
      : n_atoms_(spec.n_atoms), nodes_(nodes) {
    if (nodes < 256 || (nodes & (nodes - 1)) != 0)
      throw std::invalid_argument("phase-node count must be a power of two >= 256");
    const std::size_t bytes =
        std::size_t(nodes) * std::size_t(n_atoms_ + 1) * sizeof(double);
    if (bytes > memory_budget_bytes)
      throw spin::sizing_error(
          "sampler table needs " + std::to_string(bytes) +
          " bytes, over the budget of " + std::to_string(memory_budget_bytes));

    const int half = nodes / 2;
    const int w = n_atoms_ + 1;
    cdf_.resize(std::size_t(nodes) * w);

    std::vector<std::vector<double>> pmf(half);
    if (spec.mode == spin::ProbeSpec::Mode::exact && spec.tau == 0.0) {
      for (int k = 0; k < half; ++k)
        pmf[k] = spin::detail::binomial_row(n_atoms_,
                                            2.0 * std::numbers::pi * k / nodes);
    } else {
      std::vector<double> phis(half);
      for (int k = 0; k < half; ++k) phis[k] = 2.0 * std::numbers::pi * k / nodes;
      const Eigen::MatrixXd P = spin::batch_distributions(spec, phis).P;
      for (int k = 0; k < half; ++k) {
        pmf[k].resize(w);
        for (int i = 0; i < w; ++i) pmf[k][i] = std::max(P(k, i), 0.0);
      }
    }

    row_sum_error_ = 0;
    for (int k = 0; k < half; ++k) {
      double sum = 0;
      for (double v : pmf[k]) sum += v;
      row_sum_error_ = std::max(row_sum_error_, std::abs(sum - 1.0));
      // forward row at node k, mirrored row at node k + half
      double acc_f = 0;
      for (int i = 0; i < w; ++i) {
        acc_f += pmf[k][i] / sum;
        cdf_[std::size_t(k) * w + i] = acc_f;
      }
      double acc_m = 0;
      for (int i = 0; i < w; ++i) {
        acc_m += pmf[k][w - 1 - i] / sum;
        cdf_[std::size_t(k + half) * w + i] = acc_m;
      }
      cdf_[std::size_t(k) * w + (w - 1)] = 1.0;
      cdf_[std::size_t(k + half) * w + (w - 1)] = 1.0;
    }
  }

  int nodes() const { return nodes_; }
  int n_atoms() const { return n_atoms_; }
  double row_sum_error() const { return row_sum_error_; }

  int nearest_node(double phi) const {
    const double step = 2.0 * std::numbers::pi / nodes_;
    const long long k = std::llround(spin::detail::wrap_2pi(phi) / step);
    return static_cast<int>(k % nodes_);
  }

  // inverse CDF at node k: smallest index i with cdf(i) > u
  int sample_index(int node, double u) const {
    const int w = n_atoms_ + 1;
    const double* row = cdf_.data() + std::size_t(node) * w;
    const int i = static_cast<int>(std::upper_bound(row, row + w, u) - row);
    return std::min(i, n_atoms_);
  }

  double z_of(int index) const {
    return double(2 * index - n_atoms_) / n_atoms_;
  }

  double cdf_at(int node, int index) const {
    return cdf_[std::size_t(node) * (n_atoms_ + 1) + index];
  }

  double node_mean(int node) const {
    double mu = 0, prev = 0;
    for (int i = 0; i <= n_atoms_; ++i) {
      const double c = cdf_at(node, i);
      mu += (c - prev) * z_of(i);
      prev = c;
    }
    return mu;
  }

 private:
  int n_atoms_;
  int nodes_;
  double row_sum_error_ = 0;
  std::vector<double> cdf_;
};

// one correlated measurement record of the two interferometers
struct EllipseSample {
  std::vector<std::array<double, 2>> points;  // (z_A, z_B) per shot
  double true_dphi = 0;
  std::uint64_t seed = 0;
  std::optional<std::vector<double>> phase_record;  // noisy readouts if recorded
};

// Draws correlated (z_A, z_B) shots for a probe pair under a noise model.
// Fixed per-shot draw order -- common phase, z_A, z_B, then the readout
// error pair -- so streams stay aligned across configurations.
class PairSampler {
 public:
  enum class Mode { table, exact };

  PairSampler(const spin::ProbeSpec& specA, const spin::ProbeSpec& specB,
              double dphi, NoiseModel model, Mode mode = Mode::table,
              int table_nodes = 4096,
              std::size_t memory_budget_bytes = std::size_t(4) << 30)
      : spec_a_(specA), spec_b_(specB), dphi_(dphi), model_(std::move(model)),
        mode_(mode) {
    const bool gaussian_a = specA.mode == spin::ProbeSpec::Mode::gaussian;
    const bool gaussian_b = specB.mode == spin::ProbeSpec::Mode::gaussian;
    if (mode_ == Mode::table) {
      if (!gaussian_a)
        table_a_.emplace(specA, table_nodes, memory_budget_bytes);
      if (!gaussian_b) {
        if (!gaussian_a && specA.n_atoms == specB.n_atoms &&
            specA.tau == specB.tau && specA.nu_auto == specB.nu_auto &&
            specA.nu == specB.nu)
          table_b_shared_ = true;
        else
          table_b_.emplace(specB, table_nodes, memory_budget_bytes);
      }
    }
  }

  struct Shot {
    double z_a, z_b;
    double phi;           // true common phase of this shot
    double readout;       // noisy phase readout (valid if has_readout)
    bool has_readout = false;
  };

  Shot sample_shot(rng::Stream& stream, std::size_t shot_index) const {
    Shot s{};
    switch (model_.kind) {
      case NoiseModel::Kind::uniform_full:
        s.phi = stream.next_angle();
        break;
      case NoiseModel::Kind::fixed:
        s.phi = model_.phi0;
        break;
      case NoiseModel::Kind::recorded:
        if (shot_index >= model_.recorded.size())
          throw std::invalid_argument("recorded phase sequence shorter than the run");
        s.phi = model_.recorded[shot_index];
        break;
    }
    s.z_a = draw_z(spec_a_, table_a_ ? &*table_a_ : nullptr, s.phi + dphi_ / 2.0, stream);
    const SamplerTable* tb =
        table_b_shared_ ? (table_a_ ? &*table_a_ : nullptr)
                        : (table_b_ ? &*table_b_ : nullptr);
    s.z_b = draw_z(spec_b_, tb, s.phi - dphi_ / 2.0, stream);
    if (model_.record_readout) {
      // the normal pair is always consumed while recording, so runs that
      // differ only in sigma_corr share every other draw
      const double err = stream.next_normal();
      s.readout = s.phi + model_.correlation_error_sigma * err;
      s.has_readout = true;
    }
    return s;
  }

  EllipseSample sample_ellipse(long shots, std::uint64_t seed) const {
    if (shots < 1) throw std::invalid_argument("need at least one shot");
    EllipseSample out;
    out.true_dphi = dphi_;
    out.seed = seed;
    out.points.resize(shots);
    if (model_.record_readout) out.phase_record.emplace(shots);
    for (long j = 0; j < shots; ++j) {
      rng::Stream stream(rng::derive_stream(seed, std::uint64_t(j)));
      const Shot s = sample_shot(stream, std::size_t(j));
      out.points[j] = {s.z_a, s.z_b};
      if (out.phase_record) (*out.phase_record)[j] = s.readout;
    }
    return out;
  }

  double dphi() const { return dphi_; }
  const NoiseModel& model() const { return model_; }
  const SamplerTable* table_a() const { return table_a_ ? &*table_a_ : nullptr; }
  const SamplerTable* table_b() const {
    return table_b_shared_ ? table_a() : (table_b_ ? &*table_b_ : nullptr);
  }

 private:
  double draw_z(const spin::ProbeSpec& spec, const SamplerTable* table,
                double phi, rng::Stream& stream) const {
    if (spec.mode == spin::ProbeSpec::Mode::gaussian) {
      const double mu = spin::detail::mean_z(spec.n_atoms, spec.tau, phi);
      const double sd = std::sqrt(spin::detail::var_phi(spec.n_atoms, spec.tau, phi));
      return mu + sd * stream.next_normal();
    }
    const double u = stream.next_unit();
    if (mode_ == Mode::table) {
      const int node = table->nearest_node(phi);
      return table->z_of(table->sample_index(node, u));
    }
    // exact mode: fresh distribution at the true phase, linear CDF scan
    const auto dist = spin::outcome_distribution(spec, phi);
    double acc = 0;
    for (int i = 0; i <= spec.n_atoms; ++i) {
      acc += dist.probabilities[i];
      if (u < acc) return dist.z_at(i);
    }
    return dist.z_at(spec.n_atoms);
  }

  spin::ProbeSpec spec_a_, spec_b_;
  double dphi_;
  NoiseModel model_;
  Mode mode_;
  std::optional<SamplerTable> table_a_, table_b_;
  bool table_b_shared_ = false;
};

// ---- CSV persistence of raw samples (bit-exact round trip) ----

inline std::string sample_to_csv(const EllipseSample& s) {
  std::string out = s.phase_record ? "shot_index,z_A,z_B,phi_cn_readout\n"
                                   : "shot_index,z_A,z_B\n";
  for (std::size_t j = 0; j < s.points.size(); ++j) {
    out += std::to_string(j);
    out += ',';
    out += io::format_double(s.points[j][0]);
    out += ',';
    out += io::format_double(s.points[j][1]);
    if (s.phase_record) {
      out += ',';
      out += io::format_double((*s.phase_record)[j]);
    }
    out += '\n';
  }
  return out;
}

inline EllipseSample sample_from_csv(const std::string& csv) {
  EllipseSample s;
  std::size_t pos = 0;
  bool first = true;
  bool has_readout = false;
  while (pos < csv.size()) {
    std::size_t end = csv.find('\n', pos);
    if (end == std::string::npos) end = csv.size();
    const std::string_view line(csv.data() + pos, end - pos);
    pos = end + 1;
    if (line.empty()) continue;
    const auto fields = io::split(line, ',');
    if (first) {
      if (fields.size() == 4)
        has_readout = true;
      else if (fields.size() != 3)
        throw std::runtime_error("unexpected sample CSV header");
      if (has_readout) s.phase_record.emplace();
      first = false;
      continue;
    }
    if (fields.size() != (has_readout ? 4u : 3u))
      throw std::runtime_error("ragged sample CSV row");
    s.points.push_back({io::parse_double(fields[1]), io::parse_double(fields[2])});
    if (has_readout) s.phase_record->push_back(io::parse_double(fields[3]));
  }
  return s;
}

}  // namespace diffsense::noise
