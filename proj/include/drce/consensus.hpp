#pragma once

// Decentralized negotiation. Units maintain policy matrices, mix them over a
// gossip network and take projected-gradient steps on their private stage
// objectives; with diminishing steps the ensemble converges to the shared
// optimum of the averaged objective.
//
// Two modes:
//   synchronous  — every round each unit mixes with all peers (weight column)
//                  and steps; unit updates within a round read an immutable
//                  snapshot of the previous round.
//   asynchronous — a Poisson clock fires pairwise share events; the receiver
//                  mixes with the sharer only, then steps. Events are replayed
//                  in schedule order, so runs are deterministic given a seed.

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "drce/core.hpp"
#include "drce/rng.hpp"
#include "drce/solver.hpp"

namespace drce {

// Peer-exchange weights g(m, n) = probability that unit m shares with unit n,
// plus the per-unit Poisson activation rate.
struct GossipNetwork {
  std::size_t N = 0;
  std::vector<double> weights;  // N x N row-major
  double rate = 1.0;

  double g(std::size_t m, std::size_t n) const { return weights[m * N + n]; }
  std::span<const double> row(std::size_t m) const {
    return {weights.data() + m * N, N};
  }
};

enum class Topology { uniform, metropolis_complete };

inline void validate_gossip(const GossipNetwork& net, double tol = 1e-9) {
  if (net.N < 2) throw std::invalid_argument("GossipNetwork: N must be >= 2");
  if (!(net.rate > 0.0))
    throw std::invalid_argument("GossipNetwork: rate must be > 0");
  if (net.weights.size() != net.N * net.N)
    throw std::invalid_argument("GossipNetwork: weight matrix must be N x N");
  for (std::size_t m = 0; m < net.N; ++m) {
    double sum = 0.0;
    for (std::size_t n = 0; n < net.N; ++n) {
      const double w = net.g(m, n);
      if (!(w > 0.0) || !(w < 1.0))
        throw std::invalid_argument(
            "GossipNetwork: weights must lie strictly in (0, 1)");
      sum += w;
    }
    if (std::fabs(sum - 1.0) > tol)
      throw std::invalid_argument("GossipNetwork: rows must sum to 1");
  }
}

inline bool is_doubly_stochastic(const GossipNetwork& net, double tol = 1e-9) {
  for (std::size_t n = 0; n < net.N; ++n) {
    double col = 0.0;
    for (std::size_t m = 0; m < net.N; ++m) col += net.g(m, n);
    if (std::fabs(col - 1.0) > tol) return false;
  }
  return true;
}

/// Builds a named topology. `uniform` is g = 1/N everywhere;
/// `metropolis_complete` is the lazy symmetric walk on the complete graph
/// (1/2 self weight, 1/(2(N-1)) to each peer). Both are doubly stochastic
/// with strictly interior entries.
inline GossipNetwork build_gossip_network(std::size_t N, Topology topology,
                                          double rate = 1.0) {
  if (N < 2) throw std::invalid_argument("build_gossip_network: N must be >= 2");
  GossipNetwork net;
  net.N = N;
  net.rate = rate;
  net.weights.assign(N * N, 0.0);
  switch (topology) {
    case Topology::uniform: {
      const double w = 1.0 / static_cast<double>(N);
      net.weights.assign(N * N, w);
      break;
    }
    case Topology::metropolis_complete: {
      const double off = 1.0 / (2.0 * static_cast<double>(N - 1));
      for (std::size_t m = 0; m < N; ++m)
        for (std::size_t n = 0; n < N; ++n)
          net.weights[m * N + n] = (m == n) ? 0.5 : off;
      break;
    }
  }
  validate_gossip(net);
  return net;
}

/// Wraps custom weights, rejecting anything that violates the invariants.
inline GossipNetwork build_gossip_network(std::size_t N,
                                          std::vector<double> weights,
                                          double rate = 1.0) {
  GossipNetwork net{N, std::move(weights), rate};
  validate_gossip(net);
  return net;
}

struct GossipEvent {
  double time = 0.0;
  std::size_t sharer = 0;
  std::size_t receiver = 0;
};

/// Samples the pairwise share events on [0, horizon]: superposed Poisson
/// arrivals with rate N * r, sharer uniform, receiver drawn from the
/// sharer's weight row. Deterministic given the seed.
inline std::vector<GossipEvent> poisson_schedule(const GossipNetwork& net,
                                                 double horizon,
                                                 std::uint64_t seed) {
  validate_gossip(net);
  if (!(horizon > 0.0))
    throw std::invalid_argument("poisson_schedule: horizon must be > 0");
  Rng rng(derive_seed(seed, 0x9055));
  const double total_rate = static_cast<double>(net.N) * net.rate;
  std::vector<GossipEvent> events;
  double t = 0.0;
  for (;;) {
    t += rng.exponential(total_rate);
    if (t > horizon) break;
    GossipEvent e;
    e.time = t;
    e.sharer = rng.index(net.N);
    e.receiver = rng.categorical(net.row(e.sharer));
    events.push_back(e);
  }
  return events;
}

// Diminishing step sizes alpha_k = a / (k + b), k >= 1. Both kinds satisfy
// alpha_k -> 0 and sum alpha_k = infinity.
struct StepSchedule {
  enum class Kind { harmonic, scaled_harmonic };
  Kind kind = Kind::harmonic;
  double a = 1.0;
  double b = 0.0;

  static StepSchedule harmonic() { return {}; }
  static StepSchedule scaled(double a_, double b_) {
    return {Kind::scaled_harmonic, a_, b_};
  }

  double alpha(std::size_t k) const {
    return a / (static_cast<double>(k) + b);
  }
};

inline void check_schedule(const StepSchedule& s) {
  if (!(s.a > 0.0) || !(s.b >= 0.0))
    throw std::invalid_argument("StepSchedule: need a > 0 and b >= 0");
}

enum class ConsensusMode { synchronous, asynchronous };

struct ConsensusControls {
  StepSchedule schedule{};
  ConsensusMode mode = ConsensusMode::synchronous;
  double threshold = 0.01;       // stop when disagreement <= threshold
  std::size_t max_iterations = 10000;
  std::uint64_t seed = 0;
  double interior_eps = 1e-9;    // every iterate stays in the eps-interior
};

struct ConsensusRunReport {
  std::size_t iterations = 0;
  bool converged = false;
  std::vector<PolicyStack> final_policies;   // one stack per unit
  std::vector<double> disagreement_trace;    // per iteration
  std::vector<double> error_trace;           // per iteration, empty w/o reference
  std::vector<double> alpha_trace;
  std::vector<double> event_times;           // async only
  double final_disagreement = std::numeric_limits<double>::infinity();
  double final_error = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
  std::size_t payload_doubles_per_event = 0;
  bool weights_doubly_stochastic = false;
  double max_mixing_row_error = 0.0;         // worst |row sum - 1| seen in mixing
};

/// Analytic gradient of a unit's stage objective at policy Q:
///   d/dQ_ij = gamma_i (ln(Q_ij / pbar_ij) + 1) + next_values_j
/// Row-major S x S. Q must be strictly interior.
inline std::vector<double> unit_gradient(const UnitProfile& unit,
                                         const StochasticMatrix& Q,
                                         std::span<const double> next_values,
                                         std::size_t stage) {
  const std::size_t S = unit.states();
  if (stage >= unit.stages())
    throw std::invalid_argument("unit_gradient: stage out of range");
  if (Q.size() != S || next_values.size() != S)
    throw std::invalid_argument("unit_gradient: dimension mismatch");
  std::vector<double> grad(S * S);
  for (std::size_t i = 0; i < S; ++i) {
    const double g = unit.gamma[stage][i];
    for (std::size_t j = 0; j < S; ++j) {
      const double qij = Q(i, j);
      if (!(qij > 0.0) || !(qij < 1.0))
        throw std::invalid_argument("unit_gradient: boundary policy entry");
      grad[i * S + j] =
          g * (std::log(qij / unit.defaults[stage](i, j)) + 1.0) +
          next_values[j];
    }
  }
  return grad;
}

/// Max over units of the Frobenius distance to the across-unit mean stack.
/// The practical stopping rule: units can evaluate it without knowing the
/// centralized optimum.
inline double disagreement_metric(std::span<const PolicyStack> policies) {
  if (policies.empty())
    throw std::invalid_argument("disagreement_metric: empty");
  const std::size_t stages = policies.front().size();
  const std::size_t S = stages ? policies.front()[0].size() : 0;
  std::vector<double> mean(stages * S * S, 0.0);
  const double inv_n = 1.0 / static_cast<double>(policies.size());
  for (const auto& stack : policies) {
    if (stack.size() != stages)
      throw std::invalid_argument("disagreement_metric: stack size mismatch");
    for (std::size_t l = 0; l < stages; ++l) {
      const auto& d = stack[l].data();
      for (std::size_t k = 0; k < d.size(); ++k)
        mean[l * S * S + k] += inv_n * d[k];
    }
  }
  double worst = 0.0;
  for (const auto& stack : policies) {
    double acc = 0.0;
    for (std::size_t l = 0; l < stages; ++l) {
      const auto& d = stack[l].data();
      for (std::size_t k = 0; k < d.size(); ++k) {
        const double diff = d[k] - mean[l * S * S + k];
        acc += diff * diff;
      }
    }
    worst = std::max(worst, std::sqrt(acc));
  }
  return worst;
}

/// Max over units of || vec(P^(n) - P*) ||_2.
inline double error_to_reference(std::span<const PolicyStack> policies,
                                 const PolicyStack& reference) {
  if (policies.empty())
    throw std::invalid_argument("error_to_reference: empty");
  double worst = 0.0;
  for (const auto& stack : policies) {
    if (stack.size() != reference.size())
      throw std::invalid_argument("error_to_reference: shape mismatch");
    double acc = 0.0;
    for (std::size_t l = 0; l < stack.size(); ++l) {
      if (stack[l].size() != reference[l].size())
        throw std::invalid_argument("error_to_reference: shape mismatch");
      const double d = frobenius_distance(stack[l], reference[l]);
      acc += d * d;
    }
    worst = std::max(worst, std::sqrt(acc));
  }
  return worst;
}

/// Across-unit mean stack (the artifact a converged negotiation exports).
inline PolicyStack mean_stack(std::span<const PolicyStack> policies) {
  if (policies.empty()) throw std::invalid_argument("mean_stack: empty");
  PolicyStack out = policies.front();
  for (std::size_t p = 1; p < policies.size(); ++p) {
    for (std::size_t l = 0; l < out.size(); ++l) {
      auto& acc = out[l].data();
      const auto& d = policies[p][l].data();
      for (std::size_t k = 0; k < acc.size(); ++k) acc[k] += d[k];
    }
  }
  const double inv = 1.0 / static_cast<double>(policies.size());
  for (std::size_t l = 0; l < out.size(); ++l)
    for (auto& x : out[l].data()) x *= inv;
  return out;
}

namespace detail {

using Stack = std::vector<StochasticMatrix>;

// Shared core of the synchronous/asynchronous negotiation. The "slots" are
// the stages being negotiated: all of 0..L-2 for the whole-horizon scheme,
// a single stage for the stagewise scheme.
class GossipOptimizer {
 public:
  GossipOptimizer(const std::vector<UnitProfile>& units,
                  std::vector<std::size_t> stage_ids,
                  std::vector<std::vector<std::vector<double>>> next_values,
                  const GossipNetwork& net, const ConsensusControls& controls,
                  const PolicyStack* reference)
      : units_(units),
        stage_ids_(std::move(stage_ids)),
        next_values_(std::move(next_values)),
        net_(net),
        controls_(controls),
        reference_(reference),
        N_(units.size()),
        S_(units.front().states()) {
    validate_gossip(net_);
    check_schedule(controls_.schedule);
    if (net_.N != N_)
      throw std::invalid_argument("consensus: network size != unit count");

    // Initial policies: each unit's own defaults for the negotiated stages.
    stacks_.resize(N_);
    log_defaults_.resize(N_);
    for (std::size_t n = 0; n < N_; ++n) {
      stacks_[n].reserve(stage_ids_.size());
      log_defaults_[n].reserve(stage_ids_.size());
      for (std::size_t slot = 0; slot < stage_ids_.size(); ++slot) {
        const auto& d = units_[n].defaults[stage_ids_[slot]];
        stacks_[n].push_back(d);
        std::vector<double> logs(S_ * S_);
        for (std::size_t k = 0; k < logs.size(); ++k)
          logs[k] = std::log(d.data()[k]);
        log_defaults_[n].push_back(std::move(logs));
      }
    }
    uniform_weights_ = true;
    for (double w : net_.weights)
      if (w != net_.weights.front()) {
        uniform_weights_ = false;
        break;
      }
  }

  ConsensusRunReport run() {
    const auto t0 = std::chrono::steady_clock::now();
    ConsensusRunReport report;
    report.payload_doubles_per_event = stage_ids_.size() * S_ * S_;
    report.weights_doubly_stochastic = is_doubly_stochastic(net_);

    Rng rng(derive_seed(controls_.seed, 0xc0de));
    const double total_rate = static_cast<double>(N_) * net_.rate;
    double t = 0.0;

    std::size_t k = 0;
    while (k < controls_.max_iterations) {
      ++k;
      const double alpha = controls_.schedule.alpha(k);
      if (controls_.mode == ConsensusMode::synchronous) {
        sync_round(alpha, report);
      } else {
        t += rng.exponential(total_rate);
        const std::size_t sharer = rng.index(N_);
        const std::size_t receiver = rng.categorical(net_.row(sharer));
        async_event(sharer, receiver, alpha);
        report.event_times.push_back(t);
      }
      const double dis = disagreement();
      report.disagreement_trace.push_back(dis);
      report.alpha_trace.push_back(alpha);
      if (reference_ != nullptr)
        report.error_trace.push_back(
            error_to_reference(std::span<const PolicyStack>(ref_view()),
                               *reference_));
      if (dis <= controls_.threshold) {
        report.converged = true;
        break;
      }
    }

    report.iterations = k;
    report.final_disagreement = report.disagreement_trace.empty()
                                    ? 0.0
                                    : report.disagreement_trace.back();
    if (!report.error_trace.empty())
      report.final_error = report.error_trace.back();
    report.final_policies.reserve(N_);
    for (auto& s : stacks_) {
      PolicyStack ps;
      ps.stages = s;
      report.final_policies.push_back(std::move(ps));
    }
    report.max_mixing_row_error = max_mixing_row_error_;
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return report;
  }

 private:
  // One synchronous round: mix from the round-k snapshot, then step.
  void sync_round(double alpha, ConsensusRunReport& report) {
    (void)report;
    if (uniform_weights_) {
      // All units see the same mixed stack (the mean); compute it and its
      // entry logs once.
      Stack mixed = mean_of_stacks();
      fix_rows(mixed);
      auto log_mixed = logs_of(mixed);
      for (std::size_t n = 0; n < N_; ++n)
        step_unit(n, mixed, log_mixed, alpha);
      return;
    }
    // General column-weight mixing from an immutable snapshot.
    std::vector<Stack> snapshot = stacks_;
    for (std::size_t n = 0; n < N_; ++n) {
      Stack mixed = zero_stack();
      for (std::size_t m = 0; m < N_; ++m) {
        const double w = net_.g(m, n);
        for (std::size_t slot = 0; slot < mixed.size(); ++slot) {
          auto& acc = mixed[slot].data();
          const auto& src = snapshot[m][slot].data();
          for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += w * src[e];
        }
      }
      fix_rows(mixed);
      auto log_mixed = logs_of(mixed);
      step_unit(n, mixed, log_mixed, alpha);
    }
  }

  // One pairwise event: the receiver mixes with the sharer and steps.
  void async_event(std::size_t sharer, std::size_t receiver, double alpha) {
    const double w = net_.g(sharer, receiver);
    Stack mixed = stacks_[receiver];
    for (std::size_t slot = 0; slot < mixed.size(); ++slot) {
      auto& acc = mixed[slot].data();
      const auto& src = stacks_[sharer][slot].data();
      for (std::size_t e = 0; e < acc.size(); ++e)
        acc[e] = (1.0 - w) * acc[e] + w * src[e];
    }
    fix_rows(mixed);
    auto log_mixed = logs_of(mixed);
    step_unit(receiver, mixed, log_mixed, alpha);
  }

  // Projected-gradient step of one unit from the mixed stack.
  void step_unit(std::size_t n, const Stack& mixed,
                 const std::vector<std::vector<double>>& log_mixed,
                 double alpha) {
    std::vector<double> shifted(S_);
    for (std::size_t slot = 0; slot < stage_ids_.size(); ++slot) {
      const std::size_t stage = stage_ids_[slot];
      const auto& Q = mixed[slot];
      const auto& logQ = log_mixed[slot];
      const auto& logP = log_defaults_[n][slot];
      const auto& nv = next_values_[n][slot];
      auto& target = stacks_[n][slot];
      for (std::size_t i = 0; i < S_; ++i) {
        const double g = units_[n].gamma[stage][i];
        for (std::size_t j = 0; j < S_; ++j) {
          const std::size_t e = i * S_ + j;
          const double grad = g * (logQ[e] - logP[e] + 1.0) + nv[j];
          shifted[j] = Q(i, j) - alpha * grad;
        }
        SimplexPoint p =
            project_to_interior_simplex(shifted, controls_.interior_eps);
        std::copy(p.vec().begin(), p.vec().end(), target.row(i).begin());
      }
    }
  }

  Stack zero_stack() const {
    return Stack(stage_ids_.size(), StochasticMatrix(S_));
  }

  Stack mean_of_stacks() const {
    Stack mean = zero_stack();
    const double inv = 1.0 / static_cast<double>(N_);
    for (std::size_t n = 0; n < N_; ++n)
      for (std::size_t slot = 0; slot < mean.size(); ++slot) {
        auto& acc = mean[slot].data();
        const auto& src = stacks_[n][slot].data();
        for (std::size_t e = 0; e < acc.size(); ++e) acc[e] += inv * src[e];
      }
    return mean;
  }

  // Convex mixes of interior stochastic rows are interior stochastic up to
  // roundoff; with merely row-stochastic custom weights the mix can leave
  // the simplex, in which case the row is re-projected before the gradient
  // reads it. The worst deviation seen is reported.
  void fix_rows(Stack& stack) {
    for (auto& M : stack) {
      for (std::size_t i = 0; i < S_; ++i) {
        auto row = M.row(i);
        double sum = 0.0, lo = 1.0;
        for (double x : row) {
          sum += x;
          lo = std::min(lo, x);
        }
        max_mixing_row_error_ =
            std::max(max_mixing_row_error_, std::fabs(sum - 1.0));
        if (std::fabs(sum - 1.0) > 1e-12 || lo < controls_.interior_eps) {
          SimplexPoint p =
              project_to_interior_simplex(row, controls_.interior_eps);
          std::copy(p.vec().begin(), p.vec().end(), row.begin());
        }
      }
    }
  }

  std::vector<std::vector<double>> logs_of(const Stack& stack) const {
    std::vector<std::vector<double>> out(stack.size());
    for (std::size_t slot = 0; slot < stack.size(); ++slot) {
      const auto& d = stack[slot].data();
      out[slot].resize(d.size());
      for (std::size_t e = 0; e < d.size(); ++e)
        out[slot][e] = std::log(d[e]);
    }
    return out;
  }

  double disagreement() const {
    const auto view = ref_view();
    return disagreement_metric(std::span<const PolicyStack>(view));
  }

  // Cheap PolicyStack view of the internal stacks for the metric helpers.
  const std::vector<PolicyStack>& ref_view() const {
    view_.resize(stacks_.size());
    for (std::size_t n = 0; n < stacks_.size(); ++n)
      view_[n].stages = stacks_[n];
    return view_;
  }

  const std::vector<UnitProfile>& units_;
  std::vector<std::size_t> stage_ids_;
  std::vector<std::vector<std::vector<double>>> next_values_;  // [n][slot][j]
  const GossipNetwork& net_;
  ConsensusControls controls_;
  const PolicyStack* reference_;
  std::size_t N_;
  std::size_t S_;
  std::vector<Stack> stacks_;
  std::vector<std::vector<std::vector<double>>> log_defaults_;  // [n][slot][e]
  bool uniform_weights_ = false;
  double max_mixing_row_error_ = 0.0;
  mutable std::vector<PolicyStack> view_;
};

}  // namespace detail

/// Whole-horizon negotiation: each unit precomputes its own value table,
/// initializes with its own defaults and negotiates all stages at once.
/// Supply `reference` (e.g. decentralized_reference_stack) to record the
/// error trace.
inline ConsensusRunReport run_global_consensus(
    const std::vector<UnitProfile>& units, const StageCosts& costs,
    const GossipNetwork& net, const ConsensusControls& controls,
    const PolicyStack* reference = nullptr) {
  detail::check_units(units);
  const std::size_t stages = costs.L - 1;
  if (units.front().stages() != stages)
    throw std::invalid_argument("run_global_consensus: stage mismatch");

  std::vector<std::size_t> stage_ids(stages);
  for (std::size_t l = 0; l < stages; ++l) stage_ids[l] = l;

  std::vector<std::vector<std::vector<double>>> next_values(units.size());
  for (std::size_t n = 0; n < units.size(); ++n) {
    const ValueTable table = unit_value_table(units[n], costs);
    next_values[n].resize(stages);
    for (std::size_t l = 0; l < stages; ++l) {
      const auto row = table.stage_row(l + 1);
      next_values[n][l].assign(row.begin(), row.end());
    }
  }
  detail::GossipOptimizer opt(units, std::move(stage_ids),
                              std::move(next_values), net, controls,
                              reference);
  return opt.run();
}

/// Single-stage negotiation: each unit brings its own next-stage value row
/// from its locally computed table. `reference` is the stage matrix to track
/// (e.g. from local_stage_solve).
inline ConsensusRunReport run_local_consensus(
    const std::vector<UnitProfile>& units, std::size_t stage,
    const std::vector<ValueTable>& unit_tables, const GossipNetwork& net,
    const ConsensusControls& controls,
    const StochasticMatrix* reference = nullptr) {
  detail::check_units(units);
  if (unit_tables.size() != units.size())
    throw std::invalid_argument("run_local_consensus: table/unit mismatch");
  for (const auto& t : unit_tables)
    if (stage + 1 >= t.L)
      throw std::invalid_argument("run_local_consensus: stage out of range");

  std::vector<std::vector<std::vector<double>>> next_values(units.size());
  for (std::size_t n = 0; n < units.size(); ++n) {
    const auto row = unit_tables[n].stage_row(stage + 1);
    next_values[n].assign(1, std::vector<double>(row.begin(), row.end()));
  }
  PolicyStack ref_stack;
  const PolicyStack* ref_ptr = nullptr;
  if (reference != nullptr) {
    ref_stack.stages.push_back(*reference);
    ref_ptr = &ref_stack;
  }
  detail::GossipOptimizer opt(units, {stage}, std::move(next_values), net,
                              controls, ref_ptr);
  return opt.run();
}

struct LocalPipelineResult {
  std::vector<ConsensusRunReport> stage_reports;  // index = stage
  PolicyStack consensus_stack;                    // across-unit mean per stage
  bool all_converged = true;
};

/// Runs the stagewise negotiation for every stage of the horizon. Value
/// tables are computed locally once; stages are independent given them.
inline LocalPipelineResult run_local_pipeline(
    const std::vector<UnitProfile>& units, const StageCosts& costs,
    const GossipNetwork& net, const ConsensusControls& controls,
    const PolicyStack* reference = nullptr) {
  detail::check_units(units);
  std::vector<ValueTable> tables;
  tables.reserve(units.size());
  for (const auto& u : units) tables.push_back(unit_value_table(u, costs));

  LocalPipelineResult out;
  out.consensus_stack.stages.reserve(costs.L - 1);
  for (std::size_t l = 0; l + 1 < costs.L; ++l) {
    ConsensusControls stage_controls = controls;
    stage_controls.seed = derive_seed(controls.seed, 0x10ca1, l);
    const StochasticMatrix* ref_l =
        reference != nullptr ? &(*reference)[l] : nullptr;
    ConsensusRunReport rep =
        run_local_consensus(units, l, tables, net, stage_controls, ref_l);
    out.all_converged = out.all_converged && rep.converged;
    // Mean of the per-unit single-stage matrices becomes this stage's entry.
    StochasticMatrix mean(units.front().states());
    const double inv = 1.0 / static_cast<double>(rep.final_policies.size());
    for (const auto& ps : rep.final_policies) {
      const auto& src = ps[0].data();
      auto& acc = mean.data();
      for (std::size_t e = 0; e < src.size(); ++e) acc[e] += inv * src[e];
    }
    out.consensus_stack.stages.push_back(std::move(mean));
    out.stage_reports.push_back(std::move(rep));
  }
  return out;
}

}  // namespace drce
