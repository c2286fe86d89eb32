#pragma once

// Closed-form consensus policies and value functions for KL-control of load
// ensembles. Four coupling schemes are covered:
//
//   * posterior (groupwise) consensus  — units agree within same-state groups
//     using the realized joint state; solve_myopic_posterior.
//   * prior consensus                  — every unit adopts one state-conditioned
//     policy matrix; solve_myopic_prior and, over a horizon,
//     backward_recursion_consensus.
//   * trivial consensus                — one state-independent distribution
//     shared by all units; solve_trivial.
//   * stagewise (local) consensus      — per-unit value tables computed without
//     communication (unit_value_table) feeding a per-stage myopic solve
//     (local_stage_solve).
//
// Cost conventions: the myopic solvers charge the landing state (sum_j p_ij
// q_j); the multistage recursion charges the current state and carries the
// future through the next-stage value row. All exponentials are max-shifted
// and value recursions work in log space.

#include <cstddef>
#include <limits>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "drce/core.hpp"

namespace drce {

// One controllable load: per-stage default transition matrices (interior)
// and per-stage, per-state discomfort prices in $/nat.
struct UnitProfile {
  int id = 0;
  std::vector<StochasticMatrix> defaults;     // length L-1
  std::vector<std::vector<double>> gamma;     // [stage][state], length L-1

  std::size_t stages() const { return defaults.size(); }  // L-1
  std::size_t states() const {
    return defaults.empty() ? 0 : defaults.front().size();
  }
};

/// Throws unless the profile is well-formed: interior defaults, positive
/// discomfort weights, consistent dimensions.
inline void validate_unit(const UnitProfile& u, double interior_eps = 1e-12) {
  if (u.defaults.empty())
    throw std::invalid_argument("UnitProfile: no stages");
  if (u.gamma.size() != u.defaults.size())
    throw std::invalid_argument("UnitProfile: gamma/defaults stage mismatch");
  const std::size_t S = u.defaults.front().size();
  for (std::size_t l = 0; l < u.defaults.size(); ++l) {
    if (u.defaults[l].size() != S || u.gamma[l].size() != S)
      throw std::invalid_argument("UnitProfile: inconsistent state count");
    if (!validate_stochastic(u.defaults[l], {}, true, interior_eps).pass)
      throw std::invalid_argument(
          "UnitProfile: default matrix not interior stochastic");
    for (double g : u.gamma[l])
      if (!(g > 0.0))
        throw std::invalid_argument("UnitProfile: gamma must be > 0");
  }
}

// Dollar cost per state per stage, including the terminal row. Row-major
// L x S with stage index 0..L-1.
struct StageCosts {
  std::size_t L = 0;
  std::size_t S = 0;
  std::vector<double> q;  // L * S

  StageCosts() = default;
  StageCosts(std::size_t stages, std::size_t states, double fill = 0.0)
      : L(stages), S(states), q(stages * states, fill) {
    if (stages < 2) throw std::invalid_argument("StageCosts: L must be >= 2");
  }

  double& at(std::size_t stage, std::size_t state) {
    return q[stage * S + state];
  }
  double at(std::size_t stage, std::size_t state) const {
    return q[stage * S + state];
  }
  std::span<const double> stage_row(std::size_t stage) const {
    return {q.data() + stage * S, S};
  }
  std::span<double> stage_row(std::size_t stage) {
    return {q.data() + stage * S, S};
  }
};

// Realized states of every unit, 0-based indices into {0..S-1}.
struct JointState {
  std::vector<std::size_t> states;

  std::size_t units() const { return states.size(); }
};

inline void validate_joint(const JointState& joint, std::size_t S) {
  if (joint.states.empty())
    throw std::invalid_argument("JointState: empty");
  for (std::size_t s : joint.states)
    if (s >= S) throw std::invalid_argument("JointState: state out of range");
}

// Across-unit averages for one stage: gamma_bar[i] of the discomfort prices
// and mu_bar[i][j] of gamma-weighted log-defaults.
struct ConsensusAggregates {
  std::vector<double> gamma_bar;        // S
  std::vector<std::vector<double>> mu_bar;  // S x S
};

// Value function over states x stages; `owner` < 0 marks the consensus
// table, otherwise the owning unit id. Row L-1 always equals the terminal
// cost row.
struct ValueTable {
  std::size_t L = 0;
  std::size_t S = 0;
  int owner = -1;
  std::vector<double> v;  // L * S

  double& at(std::size_t stage, std::size_t state) {
    return v[stage * S + state];
  }
  double at(std::size_t stage, std::size_t state) const {
    return v[stage * S + state];
  }
  std::span<const double> stage_row(std::size_t stage) const {
    return {v.data() + stage * S, S};
  }
};

// Policy matrices for stages 0..L-2.
struct PolicyStack {
  std::vector<StochasticMatrix> stages;

  std::size_t size() const { return stages.size(); }
  StochasticMatrix& operator[](std::size_t l) { return stages[l]; }
  const StochasticMatrix& operator[](std::size_t l) const { return stages[l]; }

  friend bool operator==(const PolicyStack&, const PolicyStack&) = default;
};

namespace detail {

inline void check_units(const std::vector<UnitProfile>& units) {
  if (units.empty()) throw std::invalid_argument("empty unit list");
  const std::size_t S = units.front().states();
  const std::size_t stages = units.front().stages();
  for (const auto& u : units) {
    if (u.states() != S || u.stages() != stages)
      throw std::invalid_argument("units have inconsistent dimensions");
  }
}

// Max-shifted softmax; returns the distribution and ln sum_j exp(w_j).
inline std::pair<std::vector<double>, double> softmax(
    std::span<const double> w) {
  const double logz = log_sum_exp(w);
  std::vector<double> p(w.size());
  for (std::size_t j = 0; j < w.size(); ++j) p[j] = std::exp(w[j] - logz);
  return {std::move(p), logz};
}

}  // namespace detail

/// Expected one-stage cost of a unit at `state` under `policy_row`:
/// sum_j p_j next_costs_j + gamma * KL(p || default row). `next_costs` is
/// the landing-state cost row (myopic) or the next-stage value row
/// (multistage).
inline double unit_stage_cost(const UnitProfile& unit, std::size_t stage,
                              std::size_t state,
                              std::span<const double> policy_row,
                              std::span<const double> next_costs) {
  if (stage >= unit.stages())
    throw std::invalid_argument("unit_stage_cost: stage out of range");
  if (state >= unit.states())
    throw std::invalid_argument("unit_stage_cost: state out of range");
  if (policy_row.size() != unit.states() ||
      next_costs.size() != unit.states())
    throw std::invalid_argument("unit_stage_cost: dimension mismatch");
  double expected = 0.0;
  for (std::size_t j = 0; j < policy_row.size(); ++j)
    expected += policy_row[j] * next_costs[j];
  return expected + unit.gamma[stage][state] *
                        kl_divergence(policy_row, unit.defaults[stage].row(state));
}

/// Across-unit aggregates for one stage:
///   gamma_bar_i = (1/N) sum_n gamma_i^(n)
///   mu_bar_ij   = (1/N) sum_n gamma_i^(n) ln pbar_ij^(n)
inline ConsensusAggregates prior_aggregates(
    const std::vector<UnitProfile>& units, std::size_t stage) {
  detail::check_units(units);
  if (stage >= units.front().stages())
    throw std::invalid_argument("prior_aggregates: stage out of range");
  const std::size_t S = units.front().states();
  const double inv_n = 1.0 / static_cast<double>(units.size());
  ConsensusAggregates agg;
  agg.gamma_bar.assign(S, 0.0);
  agg.mu_bar.assign(S, std::vector<double>(S, 0.0));
  for (const auto& u : units) {
    for (std::size_t i = 0; i < S; ++i) {
      const double g = u.gamma[stage][i];
      agg.gamma_bar[i] += inv_n * g;
      for (std::size_t j = 0; j < S; ++j)
        agg.mu_bar[i][j] += inv_n * g * std::log(u.defaults[stage](i, j));
    }
  }
  return agg;
}

struct MyopicSolution {
  StochasticMatrix policy;
  // value_coeffs_i = -gamma_bar_i ln Z_i; the optimal expected cost at
  // ensemble state x is sum_i x_i value_coeffs_i.
  std::vector<double> value_coeffs;
};

namespace detail {

// Shared softmax step: rows p_ij ∝ exp((mu_bar_ij - next_j) / gamma_bar_i)
// plus the per-state value coefficient -gamma_bar_i ln Z_i.
inline MyopicSolution solve_from_aggregates(const ConsensusAggregates& agg,
                                            std::span<const double> next) {
  const std::size_t S = agg.gamma_bar.size();
  if (next.size() != S)
    throw std::invalid_argument("solver: cost row dimension mismatch");
  MyopicSolution out;
  out.policy = StochasticMatrix(S);
  out.value_coeffs.assign(S, 0.0);
  std::vector<double> w(S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j)
      w[j] = (agg.mu_bar[i][j] - next[j]) / agg.gamma_bar[i];
    auto [row, logz] = softmax(w);
    std::copy(row.begin(), row.end(), out.policy.row(i).begin());
    out.value_coeffs[i] = -agg.gamma_bar[i] * logz;
  }
  return out;
}

}  // namespace detail

/// Prior-consensus myopic optimum: one policy matrix shared by all units,
/// independent of the ensemble state.
inline MyopicSolution solve_myopic_prior(const std::vector<UnitProfile>& units,
                                         std::span<const double> q_next,
                                         std::size_t stage = 0) {
  return detail::solve_from_aggregates(prior_aggregates(units, stage), q_next);
}

struct PosteriorSolution {
  std::vector<std::size_t> occupied;          // sorted occupied states
  std::vector<std::vector<double>> rows;      // parallel to `occupied`
  double optimal_cost = 0.0;                  // ensemble-average cost

  std::span<const double> row_for(std::size_t state) const {
    for (std::size_t k = 0; k < occupied.size(); ++k)
      if (occupied[k] == state) return rows[k];
    throw std::invalid_argument("PosteriorSolution: state not occupied");
  }
};

/// Groupwise (posterior) myopic optimum given the realized joint state.
/// Same-state units share a row built from per-group means of gamma and
/// gamma-weighted log-defaults.
inline PosteriorSolution solve_myopic_posterior(
    const std::vector<UnitProfile>& units, const JointState& joint,
    std::span<const double> q_next, std::size_t stage = 0) {
  detail::check_units(units);
  const std::size_t S = units.front().states();
  validate_joint(joint, S);
  if (joint.units() != units.size())
    throw std::invalid_argument("solve_myopic_posterior: joint/unit mismatch");
  if (q_next.size() != S)
    throw std::invalid_argument("solve_myopic_posterior: cost row mismatch");

  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t n = 0; n < units.size(); ++n)
    groups[joint.states[n]].push_back(n);

  PosteriorSolution out;
  const double inv_total = 1.0 / static_cast<double>(units.size());
  std::vector<double> w(S);
  for (const auto& [state, members] : groups) {
    const double inv_group = 1.0 / static_cast<double>(members.size());
    double gamma_hat = 0.0;
    std::vector<double> mu_hat(S, 0.0);
    for (std::size_t n : members) {
      const auto& u = units[n];
      const double g = u.gamma[stage][state];
      gamma_hat += inv_group * g;
      for (std::size_t j = 0; j < S; ++j)
        mu_hat[j] += inv_group * g * std::log(u.defaults[stage](state, j));
    }
    for (std::size_t j = 0; j < S; ++j)
      w[j] = (mu_hat[j] - q_next[j]) / gamma_hat;
    auto [row, logz] = detail::softmax(w);
    out.occupied.push_back(state);
    out.rows.push_back(std::move(row));
    out.optimal_cost += static_cast<double>(members.size()) * inv_total *
                        (-gamma_hat * logz);
  }
  return out;
}

/// Trivial-consensus myopic optimum: the single state-independent
/// distribution all units implement, given the realized joint state.
inline SimplexPoint solve_trivial(const std::vector<UnitProfile>& units,
                                  const JointState& joint,
                                  std::span<const double> q_next,
                                  std::size_t stage = 0) {
  detail::check_units(units);
  const std::size_t S = units.front().states();
  validate_joint(joint, S);
  if (joint.units() != units.size())
    throw std::invalid_argument("solve_trivial: joint/unit mismatch");
  if (q_next.size() != S)
    throw std::invalid_argument("solve_trivial: cost row mismatch");

  const double inv_n = 1.0 / static_cast<double>(units.size());
  double gamma_tilde = 0.0;
  std::vector<double> mu_tilde(S, 0.0);
  for (std::size_t n = 0; n < units.size(); ++n) {
    const auto& u = units[n];
    const std::size_t i = joint.states[n];
    const double g = u.gamma[stage][i];
    gamma_tilde += inv_n * g;
    for (std::size_t j = 0; j < S; ++j)
      mu_tilde[j] += inv_n * g * std::log(u.defaults[stage](i, j));
  }
  std::vector<double> w(S);
  for (std::size_t j = 0; j < S; ++j)
    w[j] = (mu_tilde[j] - q_next[j]) / gamma_tilde;
  auto [row, logz] = detail::softmax(w);
  (void)logz;
  return SimplexPoint::unchecked(std::move(row));
}

struct ConsensusPlan {
  PolicyStack policy;   // stages 0..L-2
  ValueTable values;    // L x S, owner = consensus
};

/// Full-horizon prior-consensus optimum by backward recursion:
///   v_{i,L-1} = q_{i,L-1}
///   p*_{ij,l} ∝ exp((mu_bar_ij,l - v_{j,l+1}) / gamma_bar_i,l)
///   v_{i,l}   = q_{i,l} - gamma_bar_i,l ln Z_i,l
/// The policy never depends on the ensemble state; evaluate_value is the
/// only state-dependent surface.
inline ConsensusPlan backward_recursion_consensus(
    const std::vector<UnitProfile>& units, const StageCosts& costs) {
  detail::check_units(units);
  const std::size_t S = units.front().states();
  const std::size_t L = costs.L;
  if (L < 2) throw std::invalid_argument("backward_recursion: L must be >= 2");
  if (costs.S != S || units.front().stages() != L - 1)
    throw std::invalid_argument("backward_recursion: dimension mismatch");

  ConsensusPlan plan;
  plan.values.L = L;
  plan.values.S = S;
  plan.values.owner = -1;
  plan.values.v.assign(L * S, 0.0);
  plan.policy.stages.assign(L - 1, StochasticMatrix(S));

  for (std::size_t i = 0; i < S; ++i)
    plan.values.at(L - 1, i) = costs.at(L - 1, i);

  for (std::size_t l = L - 1; l-- > 0;) {
    const auto agg = prior_aggregates(units, l);
    const MyopicSolution sol =
        detail::solve_from_aggregates(agg, plan.values.stage_row(l + 1));
    plan.policy.stages[l] = sol.policy;
    for (std::size_t i = 0; i < S; ++i)
      plan.values.at(l, i) = costs.at(l, i) + sol.value_coeffs[i];
  }
  return plan;
}

/// Per-unit value table, computable without any communication:
///   v_{i,L-1} = q_{i,L-1}
///   v_{i,l}   = q_{i,l} - gamma ln sum_j pbar_ij exp(-v_{j,l+1} / gamma)
/// (the desirability form; evaluated through log_sum_exp).
inline ValueTable unit_value_table(const UnitProfile& unit,
                                   const StageCosts& costs) {
  const std::size_t S = unit.states();
  const std::size_t L = costs.L;
  if (L < 2) throw std::invalid_argument("unit_value_table: L must be >= 2");
  if (costs.S != S || unit.stages() != L - 1)
    throw std::invalid_argument("unit_value_table: dimension mismatch");

  ValueTable table;
  table.L = L;
  table.S = S;
  table.owner = unit.id;
  table.v.assign(L * S, 0.0);
  for (std::size_t i = 0; i < S; ++i)
    table.at(L - 1, i) = costs.at(L - 1, i);

  std::vector<double> w(S);
  for (std::size_t l = L - 1; l-- > 0;) {
    for (std::size_t i = 0; i < S; ++i) {
      const double g = unit.gamma[l][i];
      for (std::size_t j = 0; j < S; ++j)
        w[j] = std::log(unit.defaults[l](i, j)) - table.at(l + 1, j) / g;
      table.at(l, i) = costs.at(l, i) - g * log_sum_exp(w);
    }
  }
  return table;
}

/// Across-unit mean of per-unit value tables.
inline ValueTable mean_value_table(const std::vector<ValueTable>& tables) {
  if (tables.empty()) throw std::invalid_argument("mean_value_table: empty");
  ValueTable out = tables.front();
  out.owner = -1;
  for (std::size_t t = 1; t < tables.size(); ++t) {
    if (tables[t].L != out.L || tables[t].S != out.S)
      throw std::invalid_argument("mean_value_table: dimension mismatch");
    for (std::size_t k = 0; k < out.v.size(); ++k) out.v[k] += tables[t].v[k];
  }
  const double inv = 1.0 / static_cast<double>(tables.size());
  for (double& x : out.v) x *= inv;
  return out;
}

/// Stage-l optimum of the stagewise consensus problem, using the across-unit
/// mean of per-unit next-stage values:
///   p*_{ij,l} ∝ exp((mu_bar_ij,l - vbar_{j,l+1}) / gamma_bar_i,l)
inline StochasticMatrix local_stage_solve(
    const std::vector<ValueTable>& unit_tables,
    const std::vector<UnitProfile>& units, std::size_t stage) {
  detail::check_units(units);
  if (unit_tables.size() != units.size())
    throw std::invalid_argument("local_stage_solve: table/unit mismatch");
  const ValueTable vbar = mean_value_table(unit_tables);
  if (stage + 1 >= vbar.L)
    throw std::invalid_argument("local_stage_solve: stage out of range");
  const auto agg = prior_aggregates(units, stage);
  return detail::solve_from_aggregates(agg, vbar.stage_row(stage + 1)).policy;
}

/// The stack a converged decentralized negotiation targets: every stage
/// solved with the mean of locally computed unit value tables. Coincides
/// with backward_recursion_consensus for homogeneous ensembles.
inline PolicyStack decentralized_reference_stack(
    const std::vector<UnitProfile>& units, const StageCosts& costs) {
  detail::check_units(units);
  std::vector<ValueTable> tables;
  tables.reserve(units.size());
  for (const auto& u : units) tables.push_back(unit_value_table(u, costs));
  PolicyStack stack;
  stack.stages.reserve(costs.L - 1);
  for (std::size_t l = 0; l + 1 < costs.L; ++l)
    stack.stages.push_back(local_stage_solve(tables, units, l));
  return stack;
}

/// Linear value read-out: sum_i x_i v_{i,stage}.
inline double evaluate_value(const ValueTable& table, std::size_t stage,
                             const EnsembleState& x) {
  if (stage >= table.L)
    throw std::invalid_argument("evaluate_value: stage out of range");
  if (x.size() != table.S)
    throw std::invalid_argument("evaluate_value: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < table.S; ++i) acc += x[i] * table.at(stage, i);
  return acc;
}

/// Ensemble-average myopic cost of an explicit per-unit row assignment at
/// the realized joint state: (1/N) sum_n c^(n)(row_n; i_n).
inline double realized_ensemble_cost(
    const std::vector<std::vector<double>>& rows,
    const std::vector<UnitProfile>& units, const JointState& joint,
    std::span<const double> q_next, std::size_t stage = 0) {
  detail::check_units(units);
  validate_joint(joint, units.front().states());
  if (rows.size() != units.size() || joint.units() != units.size())
    throw std::invalid_argument("realized_ensemble_cost: size mismatch");
  double acc = 0.0;
  for (std::size_t n = 0; n < units.size(); ++n)
    acc += unit_stage_cost(units[n], stage, joint.states[n], rows[n], q_next);
  return acc / static_cast<double>(units.size());
}

/// Exact expected total cost of executing an arbitrary stack from ensemble
/// state x0 under the noiseless mean-field dynamics x_{l+1} = P_l^T x_l,
/// charging the current-state tariff plus the ensemble-average KL discomfort
/// each stage and the terminal row at the horizon.
inline double policy_stack_expected_cost(const PolicyStack& stack,
                                         const std::vector<UnitProfile>& units,
                                         const StageCosts& costs,
                                         const EnsembleState& x0) {
  detail::check_units(units);
  const std::size_t S = units.front().states();
  if (stack.size() != costs.L - 1 || x0.size() != S)
    throw std::invalid_argument("policy_stack_expected_cost: size mismatch");
  std::vector<double> x(x0.vec());
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(units.size());
  for (std::size_t l = 0; l < stack.size(); ++l) {
    const auto& P = stack[l];
    for (std::size_t i = 0; i < S; ++i) {
      double discomfort = 0.0;
      for (const auto& u : units)
        discomfort += inv_n * u.gamma[l][i] *
                      kl_divergence(P.row(i), u.defaults[l].row(i));
      total += x[i] * (costs.at(l, i) + discomfort);
    }
    std::vector<double> next(S, 0.0);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) next[j] += P(i, j) * x[i];
    x = std::move(next);
  }
  for (std::size_t i = 0; i < S; ++i) total += x[i] * costs.at(costs.L - 1, i);
  return total;
}

}  // namespace drce
