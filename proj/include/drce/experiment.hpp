#pragma once

// End-to-end experiment orchestration: ingest -> ensemble -> per-scheme
// policies (closed form and negotiated) -> Monte Carlo replicas -> artifact
// bundle. This is the engine behind the CLI's `run` subcommand.
//
// Artifact bundle (under config.out_dir):
//   model.json, ensemble.json
//   policy_<scheme>.json            one per requested scheme
//   trace_<scheme>.csv              global/local schemes only
//   trajectory_<scheme>_r<K>.csv    one per scheme per replica
//   summary.json                    costs, deviations, convergence flags
//
// All randomness flows from one recorded master seed. Replicas share their
// transition draws across schemes (streams keyed by replica/unit/stage, not
// by scheme), so scheme comparisons are paired.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "drce/consensus.hpp"
#include "drce/core.hpp"
#include "drce/ingest.hpp"
#include "drce/io.hpp"
#include "drce/simulator.hpp"
#include "drce/solver.hpp"

namespace drce {

/// Malformed configuration (maps to CLI exit code 1).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::size_t S = 20;
  std::size_t L = 20;
  std::size_t N = 100;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> schemes = {"centralized", "global", "local"};

  // consensus settings
  double threshold = 0.01;
  StepSchedule schedule{};
  ConsensusMode mode = ConsensusMode::synchronous;
  Topology topology = Topology::uniform;
  double gossip_rate = 1.0;
  std::size_t max_iterations = 20000;

  // ensemble synthesis
  double noise_magnitude = 0.05;
  double gamma_lo = 16.0;
  double gamma_hi = 24.0;

  TariffSchedule tariff{{0.25}, 0.25};

  // model input: exactly one of the two
  std::string power_csv;
  std::string model_json;
  Binning binning = Binning::equal_width;
  double smoothing_alpha = 1.0;

  std::optional<std::size_t> initial_state;  // 1-based; default: stationary
  std::size_t replicas = 1;
  std::string out_dir = "out";
};

inline void validate_config(const ExperimentConfig& config) {
  static const std::set<std::string> known = {"centralized", "global", "local",
                                              "trivial"};
  if (config.schemes.empty()) throw ConfigError("config: schemes is empty");
  for (const auto& s : config.schemes)
    if (!known.count(s)) throw ConfigError("config: unknown scheme `" + s + "`");
  if (!(config.threshold > 0.0))
    throw ConfigError("config: threshold must be > 0");
  if (config.replicas < 1) throw ConfigError("config: replicas must be >= 1");
  if (config.S < 2 || config.L < 2 || config.N < 1)
    throw ConfigError("config: need S >= 2, L >= 2, N >= 1");
  if (config.power_csv.empty() == config.model_json.empty())
    throw ConfigError("config: provide exactly one of power_csv / model");
  if (config.initial_state &&
      (*config.initial_state < 1 || *config.initial_state > config.S))
    throw ConfigError("config: initial_state must lie in 1..S");
  validate_tariff(config.tariff, config.L);
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  ExperimentConfig config;
  try {
    config.S = j.value("S", config.S);
    config.L = j.value("L", config.L);
    config.N = j.value("N", config.N);
    if (j.contains("seed") && !j.at("seed").is_null())
      config.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("schemes"))
      config.schemes = j.at("schemes").get<std::vector<std::string>>();
    if (j.contains("consensus")) {
      const auto& c = j.at("consensus");
      config.threshold = c.value("threshold", config.threshold);
      config.max_iterations = c.value("max_iterations", config.max_iterations);
      config.gossip_rate = c.value("rate", config.gossip_rate);
      const std::string mode = c.value("mode", "sync");
      if (mode == "sync")
        config.mode = ConsensusMode::synchronous;
      else if (mode == "async")
        config.mode = ConsensusMode::asynchronous;
      else
        throw ConfigError("config: mode must be sync|async");
      const std::string topology = c.value("topology", "uniform");
      if (topology == "uniform")
        config.topology = Topology::uniform;
      else if (topology == "metropolis-complete")
        config.topology = Topology::metropolis_complete;
      else
        throw ConfigError("config: topology must be uniform|metropolis-complete");
      if (c.contains("schedule")) {
        const auto& s = c.at("schedule");
        const std::string kind = s.value("kind", "harmonic");
        if (kind == "harmonic") {
          config.schedule = StepSchedule::harmonic();
        } else if (kind == "scaled-harmonic") {
          config.schedule =
              StepSchedule::scaled(s.value("a", 1.0), s.value("b", 0.0));
        } else {
          throw ConfigError("config: schedule kind must be harmonic|scaled-harmonic");
        }
      }
    }
    if (j.contains("ensemble")) {
      const auto& e = j.at("ensemble");
      config.noise_magnitude = e.value("noise_magnitude", config.noise_magnitude);
      if (e.contains("gamma_range")) {
        const auto range = e.at("gamma_range").get<std::vector<double>>();
        if (range.size() != 2) throw ConfigError("config: gamma_range is [lo, hi]");
        config.gamma_lo = range[0];
        config.gamma_hi = range[1];
      }
    }
    if (j.contains("tariff")) {
      const auto& t = j.at("tariff");
      const auto& rate = t.at("rate_usd_per_kwh");
      if (rate.is_number())
        config.tariff.rate_usd_per_kwh = {rate.get<double>()};
      else
        config.tariff.rate_usd_per_kwh = rate.get<std::vector<double>>();
      config.tariff.stage_duration_h =
          t.value("stage_duration_h", config.tariff.stage_duration_h);
    }
    config.power_csv = j.value("power_csv", "");
    config.model_json = j.value("model", "");
    const std::string binning = j.value("binning", "equal-width");
    if (binning == "equal-width")
      config.binning = Binning::equal_width;
    else if (binning == "quantile")
      config.binning = Binning::quantile;
    else
      throw ConfigError("config: binning must be equal-width|quantile");
    config.smoothing_alpha = j.value("smoothing_alpha", 1.0);
    if (j.contains("initial_state") && !j.at("initial_state").is_null())
      config.initial_state = j.at("initial_state").get<std::size_t>();
    config.replicas = j.value("replicas", config.replicas);
    config.out_dir = j.value("out_dir", config.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate_config(config);
  return config;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

namespace detail {

inline std::size_t thread_budget(std::size_t tasks) {
  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("DR_ENSEMBLE_THREADS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed >= 1) hw = static_cast<std::size_t>(parsed);
  }
  return std::min(hw, std::max<std::size_t>(tasks, 1));
}

// Runs fn(0..n-1), possibly in parallel; results land in pre-sized slots so
// the outcome is independent of the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = thread_budget(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::vector<std::future<void>> futures;
  futures.reserve(workers);
  std::atomic<std::size_t> cursor{0};
  for (std::size_t w = 0; w < workers; ++w) {
    futures.push_back(std::async(std::launch::async, [&] {
      for (;;) {
        const std::size_t k = cursor.fetch_add(1);
        if (k >= n) return;
        fn(k);
      }
    }));
  }
  for (auto& f : futures) f.get();
}

inline std::vector<double> stationary_distribution(const StochasticMatrix& P,
                                                   std::size_t iters = 200000,
                                                   double tol = 1e-14) {
  const std::size_t S = P.size();
  std::vector<double> x(S, 1.0 / static_cast<double>(S));
  std::vector<double> next(S);
  for (std::size_t it = 0; it < iters; ++it) {
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t i = 0; i < S; ++i)
      for (std::size_t j = 0; j < S; ++j) next[j] += P(i, j) * x[i];
    double delta = 0.0;
    for (std::size_t j = 0; j < S; ++j)
      delta = std::max(delta, std::fabs(next[j] - x[j]));
    x.swap(next);
    if (delta < tol) break;
  }
  return x;
}

}  // namespace detail

struct ExperimentResult {
  int exit_code = 0;
  nlohmann::json summary;
};

/// Runs the full experiment and writes the artifact bundle. Returns exit
/// code 0 on success, 2 when a requested negotiation failed to converge
/// (artifacts are still written, with the failure flagged in the summary).
/// Configuration errors throw ConfigError (CLI exit code 1).
inline ExperimentResult run_experiment(const ExperimentConfig& config) {
  validate_config(config);
  namespace fs = std::filesystem;
  fs::create_directories(config.out_dir);
  const auto out_path = [&](const std::string& name) {
    return (fs::path(config.out_dir) / name).string();
  };

  // Master seed: recorded for replay when the config omits one.
  const std::uint64_t master =
      config.seed ? *config.seed : std::random_device{}();

  // Ingest (or load) the Markov model.
  io::Model model;
  if (!config.model_json.empty()) {
    model = io::read_model_json(config.model_json);
    if (model.S != config.S)
      throw ConfigError("config: model S != config S");
  } else {
    const PowerSeries series = io::read_power_csv(config.power_csv);
    const DiscretizedSeries disc =
        discretize_power(series, config.S, config.binning);
    model.S = config.S;
    model.power_map = disc.power_map;
    model.default_matrix = estimate_transition_matrix(disc.states, config.S,
                                                      config.smoothing_alpha);
  }
  io::write_model_json(out_path("model.json"), model);

  // Synthesize the heterogeneous ensemble.
  EnsembleSpec spec;
  spec.N = config.N;
  spec.noise_magnitude = config.noise_magnitude;
  spec.gamma_lo = config.gamma_lo;
  spec.gamma_hi = config.gamma_hi;
  spec.seed = derive_seed(master, 0xe15);
  const std::vector<UnitProfile> units =
      generate_ensemble(model.default_matrix, spec, config.L);
  io::write_ensemble_json(out_path("ensemble.json"), units, config.L);

  const StageCosts costs =
      build_stage_costs(model.power_map, config.tariff, config.L);

  // Initial joint states, one per replica, shared by every scheme.
  const std::vector<double> stationary =
      detail::stationary_distribution(model.default_matrix);
  std::vector<JointState> initials(config.replicas);
  for (std::size_t r = 0; r < config.replicas; ++r) {
    initials[r].states.resize(config.N);
    if (config.initial_state) {
      std::fill(initials[r].states.begin(), initials[r].states.end(),
                *config.initial_state - 1);
    } else {
      Rng rng(derive_seed(master, 0x171, r));
      for (std::size_t n = 0; n < config.N; ++n)
        initials[r].states[n] = rng.categorical(stationary);
    }
  }

  ConsensusControls controls;
  controls.schedule = config.schedule;
  controls.mode = config.mode;
  controls.threshold = config.threshold;
  controls.max_iterations = config.max_iterations;
  controls.interior_eps = 1e-9;

  nlohmann::json summary;
  summary["seed"] = master;
  summary["S"] = config.S;
  summary["L"] = config.L;
  summary["N"] = config.N;
  summary["replicas"] = config.replicas;
  summary["threshold"] = config.threshold;
  summary["schemes"] = config.schemes;

  // Reference closed forms.
  const ConsensusPlan centralized_plan =
      backward_recursion_consensus(units, costs);
  const PolicyStack reference_stack =
      decentralized_reference_stack(units, costs);

  bool all_converged = true;
  std::vector<std::pair<std::string, PolicyStack>> solved;

  for (const auto& scheme : config.schemes) {
    if (scheme == "centralized") {
      solved.emplace_back(scheme, centralized_plan.policy);
    } else if (scheme == "global") {
      ConsensusControls c = controls;
      c.seed = derive_seed(master, 0x91);
      const ConsensusRunReport report = run_global_consensus(
          units, costs, build_gossip_network(config.N, config.topology,
                                             config.gossip_rate),
          c, &reference_stack);
      all_converged = all_converged && report.converged;
      io::write_trace_csv(out_path("trace_global.csv"), report);
      summary["consensus"]["global"] = {
          {"converged", report.converged},
          {"iterations", report.iterations},
          {"final_disagreement", report.final_disagreement},
          {"final_error_to_reference", report.final_error}};
      solved.emplace_back(
          scheme, mean_stack(std::span<const PolicyStack>(report.final_policies)));
    } else if (scheme == "local") {
      ConsensusControls c = controls;
      c.seed = derive_seed(master, 0x10c);
      const LocalPipelineResult pipeline = run_local_pipeline(
          units, costs, build_gossip_network(config.N, config.topology,
                                             config.gossip_rate),
          c, &reference_stack);
      all_converged = all_converged && pipeline.all_converged;
      io::write_trace_csv(out_path("trace_local.csv"), pipeline);
      std::size_t total_iters = 0;
      double worst_disagreement = 0.0;
      for (const auto& rep : pipeline.stage_reports) {
        total_iters += rep.iterations;
        worst_disagreement =
            std::max(worst_disagreement, rep.final_disagreement);
      }
      summary["consensus"]["local"] = {
          {"converged", pipeline.all_converged},
          {"iterations", total_iters},
          {"final_disagreement", worst_disagreement}};
      solved.emplace_back(scheme, pipeline.consensus_stack);
    } else if (scheme == "trivial") {
      // Stagewise myopic extension: one state-independent row per stage,
      // anchored at the replica-0 initial joint state, landing-state costs
      // from the next stage's tariff row.
      PolicyStack stack;
      stack.stages.reserve(config.L - 1);
      for (std::size_t l = 0; l + 1 < config.L; ++l) {
        const SimplexPoint row =
            solve_trivial(units, initials[0], costs.stage_row(l + 1), l);
        StochasticMatrix M(config.S);
        for (std::size_t i = 0; i < config.S; ++i)
          std::copy(row.vec().begin(), row.vec().end(), M.row(i).begin());
        stack.stages.push_back(std::move(M));
      }
      solved.emplace_back(scheme, std::move(stack));
    }
  }

  for (const auto& [scheme, stack] : solved)
    io::write_policy_json(out_path("policy_" + scheme + ".json"), stack, scheme);

  // Monte Carlo replicas; transition streams are keyed by (replica, unit,
  // stage) only, so schemes are compared under common random numbers.
  std::vector<std::vector<Trajectory>> trajectories(
      solved.size(), std::vector<Trajectory>(config.replicas));
  detail::parallel_for(solved.size() * config.replicas, [&](std::size_t task) {
    const std::size_t s = task / config.replicas;
    const std::size_t r = task % config.replicas;
    trajectories[s][r] =
        simulate_exact(units, {solved[s].second}, initials[r], costs,
                       model.power_map, derive_seed(master, 0x51a, r));
  });

  for (std::size_t s = 0; s < solved.size(); ++s)
    for (std::size_t r = 0; r < config.replicas; ++r)
      io::write_trajectory_csv(
          out_path("trajectory_" + solved[s].first + "_r" + std::to_string(r) +
                   ".csv"),
          trajectories[s][r], solved[s].first);

  // Per-scheme aggregates.
  const EnsembleState x0 = ensemble_state_of(initials[0], config.S);
  std::vector<std::vector<double>> mean_traj(solved.size());
  for (std::size_t s = 0; s < solved.size(); ++s) {
    mean_traj[s].assign(config.L, 0.0);
    double total_cost = 0.0;
    for (std::size_t r = 0; r < config.replicas; ++r) {
      for (std::size_t l = 0; l < config.L; ++l) {
        mean_traj[s][l] +=
            trajectories[s][r].mean_power_kw[l] / config.replicas;
        total_cost += trajectories[s][r].realized_cost_usd[l];
      }
    }
    total_cost /= static_cast<double>(config.replicas);
    summary["cost"][solved[s].first] = {
        {"realized_total_usd", total_cost},
        {"expected_total_usd",
         policy_stack_expected_cost(solved[s].second, units, costs, x0)}};
  }

  // Deviations from the centralized trajectory (relative L-infinity).
  std::ptrdiff_t cent = -1;
  for (std::size_t s = 0; s < solved.size(); ++s)
    if (solved[s].first == "centralized") cent = static_cast<std::ptrdiff_t>(s);
  if (cent >= 0) {
    double cent_peak = 0.0;
    for (double p : mean_traj[cent]) cent_peak = std::max(cent_peak, p);
    for (std::size_t s = 0; s < solved.size(); ++s) {
      double dev = 0.0;
      for (std::size_t l = 0; l < config.L; ++l)
        dev = std::max(dev, std::fabs(mean_traj[s][l] - mean_traj[cent][l]));
      summary["power_deviation_vs_centralized"][solved[s].first] =
          cent_peak > 0.0 ? dev / cent_peak : 0.0;
    }
  }

  // Gap between the two decentralized stacks, when both are present.
  std::ptrdiff_t gi = -1, li = -1;
  for (std::size_t s = 0; s < solved.size(); ++s) {
    if (solved[s].first == "global") gi = static_cast<std::ptrdiff_t>(s);
    if (solved[s].first == "local") li = static_cast<std::ptrdiff_t>(s);
  }
  if (gi >= 0 && li >= 0) {
    double gap = 0.0;
    for (std::size_t l = 0; l + 1 < config.L; ++l)
      gap = std::max(gap, max_abs_difference(solved[gi].second[l].data(),
                                             solved[li].second[l].data()));
    summary["global_local_gap"] = gap;
  }

  summary["all_converged"] = all_converged;

  ExperimentResult result;
  result.exit_code = all_converged ? 0 : 2;
  result.summary = summary;
  io::write_file(out_path("summary.json"), summary.dump(2) + "\n");
  return result;
}

}  // namespace drce
