#pragma once

// Forward execution of a DR event: per-unit Monte Carlo transitions under
// assigned policies (exact mode) and the Gaussian mean-field approximation
// of the ensemble state (approximate mode), with power and cost trajectory
// aggregation.
//
// Determinism contract: the transition draw of (unit n, stage l) comes from
// a stream derived from (seed, n, l), so serial and parallel execution give
// identical trajectories.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "drce/core.hpp"
#include "drce/rng.hpp"
#include "drce/solver.hpp"

namespace drce {

// Power level of each Markov state, kW.
struct StatePowerMap {
  std::vector<double> power;

  std::size_t states() const { return power.size(); }
};

inline void validate_power_map(const StatePowerMap& map) {
  if (map.power.empty()) throw std::invalid_argument("StatePowerMap: empty");
  for (double p : map.power)
    if (!std::isfinite(p) || p < 0.0)
      throw std::invalid_argument("StatePowerMap: power must be finite, >= 0");
}

struct NoiseModel {
  enum class Kind { exact_multinomial, gaussian_clt, none };
  Kind kind = Kind::none;
  std::size_t N = 1;  // ensemble size driving the noise scale
};

// One simulated event. Exact mode fills `joint`; both modes fill the
// ensemble states. All per-stage series have length L.
struct Trajectory {
  std::vector<JointState> joint;                 // empty in approximate mode
  std::vector<std::vector<double>> ensemble;     // x per stage
  std::vector<double> mean_power_kw;             // per stage
  std::vector<double> std_power_kw;              // across units, per stage
  std::vector<double> realized_cost_usd;         // per stage (terminal at L-1)

  std::size_t stages() const { return ensemble.size(); }
};

/// Inverse-CDF draw: returns the state s with xi in
/// [sum_{j<s} row_j, sum_{j<=s} row_j); the last state absorbs roundoff.
inline std::size_t sample_unit_transition(std::span<const double> row,
                                          double xi) {
  if (row.empty())
    throw std::invalid_argument("sample_unit_transition: empty row");
  if (!(xi >= 0.0) || !(xi < 1.0))
    throw std::invalid_argument("sample_unit_transition: xi outside [0, 1)");
  double cum = 0.0;
  for (std::size_t j = 0; j + 1 < row.size(); ++j) {
    cum += row[j];
    if (xi < cum) return j;
  }
  return row.size() - 1;
}

/// Occupancy fractions x_i = N_i / N of a joint state.
inline EnsembleState ensemble_state_of(const JointState& joint,
                                       std::size_t S) {
  validate_joint(joint, S);
  std::vector<double> x(S, 0.0);
  const double inv = 1.0 / static_cast<double>(joint.units());
  for (std::size_t s : joint.states) x[s] += inv;
  return SimplexPoint::unchecked(std::move(x));
}

/// Stage-wise mean power sum_i x_i power_i for a sequence of ensemble states.
inline std::vector<double> mean_power(
    const std::vector<std::vector<double>>& ensemble,
    const StatePowerMap& map) {
  validate_power_map(map);
  std::vector<double> out;
  out.reserve(ensemble.size());
  for (const auto& x : ensemble) {
    if (x.size() != map.states())
      throw std::invalid_argument("mean_power: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * map.power[i];
    out.push_back(acc);
  }
  return out;
}

/// Diagonal covariance of the Gaussian ensemble-noise model:
///   cov_j = (1/N) sum_i x_i^2 (p_ij - p_ij^2)
inline std::vector<double> clt_covariance_diag(std::span<const double> x,
                                               const StochasticMatrix& P,
                                               std::size_t N) {
  const std::size_t S = P.size();
  if (x.size() != S)
    throw std::invalid_argument("clt_covariance_diag: dimension mismatch");
  if (N == 0) throw std::invalid_argument("clt_covariance_diag: N == 0");
  std::vector<double> cov(S, 0.0);
  const double inv_n = 1.0 / static_cast<double>(N);
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) {
      const double p = P(i, j);
      cov[j] += inv_n * x[i] * x[i] * (p - p * p);
    }
  return cov;
}

/// One-step ensemble propagation x -> P^T x plus model noise:
///   none             — the noiseless mean;
///   gaussian_clt     — adds zero-mean Gaussian noise with the diagonal
///                      covariance above, then re-projects to the simplex;
///   exact_multinomial — ground truth: N units allocated to states by
///                      largest remainder, each group transitioning
///                      multinomially.
inline EnsembleState propagate_gaussian(const EnsembleState& x,
                                        const StochasticMatrix& P,
                                        const NoiseModel& noise,
                                        std::uint64_t seed = 0) {
  const std::size_t S = P.size();
  if (x.size() != S)
    throw std::invalid_argument("propagate_gaussian: dimension mismatch");
  std::vector<double> mean(S, 0.0);
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j) mean[j] += P(i, j) * x[i];

  switch (noise.kind) {
    case NoiseModel::Kind::none:
      return SimplexPoint::unchecked(std::move(mean));
    case NoiseModel::Kind::gaussian_clt: {
      const auto cov = clt_covariance_diag(x, P, noise.N);
      Rng rng(derive_seed(seed, 0x6a55));
      for (std::size_t j = 0; j < S; ++j)
        mean[j] += std::sqrt(cov[j]) * rng.normal();
      return project_to_simplex(mean);
    }
    case NoiseModel::Kind::exact_multinomial: {
      if (noise.N == 0)
        throw std::invalid_argument("propagate_gaussian: N == 0");
      // Allocate N units to states by largest remainder, then transition
      // each group by repeated inverse-CDF draws.
      std::vector<std::size_t> counts(S, 0);
      std::vector<std::pair<double, std::size_t>> rema(S);
      std::size_t assigned = 0;
      for (std::size_t i = 0; i < S; ++i) {
        const double exact = x[i] * static_cast<double>(noise.N);
        counts[i] = static_cast<std::size_t>(exact);
        assigned += counts[i];
        rema[i] = {exact - std::floor(exact), i};
      }
      std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
        return a.first > b.first || (a.first == b.first && a.second < b.second);
      });
      for (std::size_t k = 0; assigned < noise.N; ++k, ++assigned)
        counts[rema[k % S].second] += 1;

      Rng rng(derive_seed(seed, 0x3a17));
      std::vector<double> next(S, 0.0);
      const double inv_n = 1.0 / static_cast<double>(noise.N);
      for (std::size_t i = 0; i < S; ++i)
        for (std::size_t c = 0; c < counts[i]; ++c)
          next[sample_unit_transition(P.row(i), rng.uniform01())] += inv_n;
      return SimplexPoint::unchecked(std::move(next));
    }
  }
  throw std::logic_error("propagate_gaussian: unknown noise kind");
}

namespace detail {

inline const StochasticMatrix& stack_for_unit(
    const std::vector<PolicyStack>& stacks, std::size_t unit,
    std::size_t stage) {
  return stacks.size() == 1 ? stacks[0][stage] : stacks[unit][stage];
}

inline void power_moments(const std::vector<double>& x,
                          const StatePowerMap& map, double& mean,
                          double& stddev) {
  mean = 0.0;
  double second = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mean += x[i] * map.power[i];
    second += x[i] * map.power[i] * map.power[i];
  }
  const double var = std::max(second - mean * mean, 0.0);
  stddev = std::sqrt(var);
}

}  // namespace detail

/// Exact Monte Carlo execution: every unit transitions independently by
/// inverse CDF each stage. `stacks` holds either one shared stack or one per
/// unit. Stage costs follow the multistage convention: current-state tariff
/// plus the KL discomfort of the row being executed; the terminal stage
/// charges the terminal tariff row only.
inline Trajectory simulate_exact(const std::vector<UnitProfile>& units,
                                 const std::vector<PolicyStack>& stacks,
                                 const JointState& initial,
                                 const StageCosts& costs,
                                 const StatePowerMap& power_map,
                                 std::uint64_t seed) {
  detail::check_units(units);
  validate_power_map(power_map);
  const std::size_t N = units.size();
  const std::size_t S = units.front().states();
  const std::size_t L = costs.L;
  validate_joint(initial, S);
  if (initial.units() != N)
    throw std::invalid_argument("simulate_exact: joint/unit mismatch");
  if (stacks.size() != 1 && stacks.size() != N)
    throw std::invalid_argument("simulate_exact: need 1 or N policy stacks");
  for (const auto& st : stacks)
    if (st.size() != L - 1)
      throw std::invalid_argument("simulate_exact: stack/horizon mismatch");
  if (power_map.states() != S || costs.S != S)
    throw std::invalid_argument("simulate_exact: dimension mismatch");

  Trajectory traj;
  traj.joint.resize(L);
  traj.ensemble.resize(L);
  traj.mean_power_kw.resize(L);
  traj.std_power_kw.resize(L);
  traj.realized_cost_usd.resize(L);

  JointState current = initial;
  const double inv_n = 1.0 / static_cast<double>(N);
  for (std::size_t l = 0; l < L; ++l) {
    traj.joint[l] = current;
    const EnsembleState x = ensemble_state_of(current, S);
    traj.ensemble[l] = x.vec();
    detail::power_moments(traj.ensemble[l], power_map, traj.mean_power_kw[l],
                          traj.std_power_kw[l]);
    double cost = 0.0;
    if (l + 1 < L) {
      for (std::size_t n = 0; n < N; ++n) {
        const std::size_t i = current.states[n];
        const auto row = detail::stack_for_unit(stacks, n, l).row(i);
        cost += inv_n *
                (costs.at(l, i) + units[n].gamma[l][i] *
                                      kl_divergence(row, units[n].defaults[l].row(i)));
      }
      JointState next;
      next.states.resize(N);
      for (std::size_t n = 0; n < N; ++n) {
        Rng rng(derive_seed(seed, n, l));
        const std::size_t i = current.states[n];
        next.states[n] = sample_unit_transition(
            detail::stack_for_unit(stacks, n, l).row(i), rng.uniform01());
      }
      current = std::move(next);
    } else {
      for (std::size_t n = 0; n < N; ++n)
        cost += inv_n * costs.at(L - 1, current.states[n]);
    }
    traj.realized_cost_usd[l] = cost;
  }
  return traj;
}

/// Mean-field execution from an ensemble state under a single shared stack,
/// propagating with the chosen noise model. Costs are the exact expected
/// stage costs at the realized ensemble states.
inline Trajectory simulate_approximate(const std::vector<UnitProfile>& units,
                                       const PolicyStack& stack,
                                       const EnsembleState& x0,
                                       const StageCosts& costs,
                                       const StatePowerMap& power_map,
                                       const NoiseModel& noise,
                                       std::uint64_t seed) {
  detail::check_units(units);
  validate_power_map(power_map);
  const std::size_t S = units.front().states();
  const std::size_t L = costs.L;
  if (stack.size() != L - 1 || x0.size() != S || power_map.states() != S ||
      costs.S != S)
    throw std::invalid_argument("simulate_approximate: dimension mismatch");

  Trajectory traj;
  traj.ensemble.resize(L);
  traj.mean_power_kw.resize(L);
  traj.std_power_kw.resize(L);
  traj.realized_cost_usd.resize(L);

  EnsembleState x = x0;
  const double inv_n = 1.0 / static_cast<double>(units.size());
  for (std::size_t l = 0; l < L; ++l) {
    traj.ensemble[l] = x.vec();
    detail::power_moments(traj.ensemble[l], power_map, traj.mean_power_kw[l],
                          traj.std_power_kw[l]);
    double cost = 0.0;
    if (l + 1 < L) {
      for (std::size_t i = 0; i < S; ++i) {
        double discomfort = 0.0;
        for (const auto& u : units)
          discomfort += inv_n * u.gamma[l][i] *
                        kl_divergence(stack[l].row(i), u.defaults[l].row(i));
        cost += x[i] * (costs.at(l, i) + discomfort);
      }
      x = propagate_gaussian(x, stack[l], noise, derive_seed(seed, 0xa992, l));
    } else {
      for (std::size_t i = 0; i < S; ++i) cost += x[i] * costs.at(L - 1, i);
    }
    traj.realized_cost_usd[l] = cost;
  }
  return traj;
}

}  // namespace drce
