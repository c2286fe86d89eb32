#pragma once

// Data pipeline: power time series -> discretized Markov model, synthetic
// heterogeneous ensemble generation, tariff -> per-stage dollar costs.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "drce/core.hpp"
#include "drce/rng.hpp"
#include "drce/simulator.hpp"
#include "drce/solver.hpp"

namespace drce {

// Metered power, kW, at strictly increasing instants (epoch seconds).
struct PowerSeries {
  std::vector<std::int64_t> timestamps;
  std::vector<double> power_kw;

  std::size_t size() const { return power_kw.size(); }
};

inline void validate_series(const PowerSeries& series) {
  if (series.timestamps.size() != series.power_kw.size())
    throw std::invalid_argument("PowerSeries: array length mismatch");
  for (std::size_t k = 0; k + 1 < series.timestamps.size(); ++k)
    if (series.timestamps[k] >= series.timestamps[k + 1])
      throw std::invalid_argument(
          "PowerSeries: timestamps must be strictly increasing");
  for (double p : series.power_kw)
    if (!std::isfinite(p) || p < 0.0)
      throw std::invalid_argument("PowerSeries: power must be finite, >= 0");
}

// $/kWh per stage (or one constant rate) and the stage length in hours.
struct TariffSchedule {
  std::vector<double> rate_usd_per_kwh;  // length 1 (constant) or L
  double stage_duration_h = 0.25;

  double rate_at(std::size_t stage) const {
    return rate_usd_per_kwh.size() == 1 ? rate_usd_per_kwh[0]
                                        : rate_usd_per_kwh[stage];
  }
};

inline void validate_tariff(const TariffSchedule& tariff, std::size_t L) {
  if (tariff.rate_usd_per_kwh.empty())
    throw std::invalid_argument("TariffSchedule: no rates");
  if (tariff.rate_usd_per_kwh.size() != 1 &&
      tariff.rate_usd_per_kwh.size() != L)
    throw std::invalid_argument("TariffSchedule: need 1 or L rates");
  for (double r : tariff.rate_usd_per_kwh)
    if (!std::isfinite(r) || r < 0.0)
      throw std::invalid_argument("TariffSchedule: rates must be >= 0");
  if (!(tariff.stage_duration_h > 0.0))
    throw std::invalid_argument("TariffSchedule: stage duration must be > 0");
}

// Recipe for a synthetic heterogeneous ensemble built around one base model.
struct EnsembleSpec {
  std::size_t N = 1;
  double noise_magnitude = 0.05;      // uniform perturbation upper bound
  double gamma_lo = 16.0;             // $/nat
  double gamma_hi = 24.0;
  std::uint64_t seed = 0;
  bool resample_gamma_per_stage = false;
};

inline void validate_spec(const EnsembleSpec& spec) {
  if (spec.N < 1) throw std::invalid_argument("EnsembleSpec: N must be >= 1");
  if (!(spec.noise_magnitude >= 0.0) || !(spec.noise_magnitude < 1.0))
    throw std::invalid_argument("EnsembleSpec: noise_magnitude in [0, 1)");
  if (!(spec.gamma_lo > 0.0) || !(spec.gamma_hi >= spec.gamma_lo))
    throw std::invalid_argument("EnsembleSpec: need 0 < gamma_lo <= gamma_hi");
}

enum class Binning { equal_width, quantile };

struct DiscretizedSeries {
  std::vector<std::size_t> states;  // 0-based bin index per sample
  StatePowerMap power_map;          // bin centers (equal width) or medians
};

/// Bins a power series into S states. Equal-width bins span [min, max];
/// quantile bins split at the k/S sample quantiles and map to bin medians.
inline DiscretizedSeries discretize_power(const PowerSeries& series,
                                          std::size_t S,
                                          Binning binning = Binning::equal_width) {
  validate_series(series);
  if (series.size() < 2)
    throw std::invalid_argument("discretize_power: need at least 2 samples");
  if (S < 2) throw std::invalid_argument("discretize_power: S must be >= 2");

  DiscretizedSeries out;
  out.states.resize(series.size());
  out.power_map.power.assign(S, 0.0);

  if (binning == Binning::equal_width) {
    const auto [lo_it, hi_it] =
        std::minmax_element(series.power_kw.begin(), series.power_kw.end());
    const double lo = *lo_it, hi = *hi_it;
    if (!(hi > lo))
      throw std::invalid_argument(
          "discretize_power: constant series gives degenerate equal-width bins");
    const double width = (hi - lo) / static_cast<double>(S);
    for (std::size_t k = 0; k < series.size(); ++k) {
      auto bin = static_cast<std::size_t>((series.power_kw[k] - lo) / width);
      out.states[k] = std::min(bin, S - 1);
    }
    for (std::size_t i = 0; i < S; ++i)
      out.power_map.power[i] = lo + width * (static_cast<double>(i) + 0.5);
    return out;
  }

  // Quantile binning: edges at the k/S linearly interpolated sample
  // quantiles; empty bins fall back to the midpoint of their edges.
  std::vector<double> sorted(series.power_kw);
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&sorted](double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto idx = static_cast<std::size_t>(pos);
    if (idx + 1 >= sorted.size()) return sorted.back();
    const double frac = pos - static_cast<double>(idx);
    return sorted[idx] * (1.0 - frac) + sorted[idx + 1] * frac;
  };
  std::vector<double> edges(S - 1);
  for (std::size_t k = 0; k + 1 < S; ++k)
    edges[k] = quantile(static_cast<double>(k + 1) / static_cast<double>(S));

  std::vector<std::vector<double>> members(S);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const double v = series.power_kw[k];
    std::size_t bin = 0;
    while (bin < edges.size() && v >= edges[bin]) ++bin;
    out.states[k] = bin;
    members[bin].push_back(v);
  }
  for (std::size_t i = 0; i < S; ++i) {
    if (!members[i].empty()) {
      auto& m = members[i];
      std::sort(m.begin(), m.end());
      const std::size_t mid = m.size() / 2;
      out.power_map.power[i] =
          m.size() % 2 ? m[mid] : 0.5 * (m[mid - 1] + m[mid]);
    } else {
      const double left = i == 0 ? sorted.front() : edges[i - 1];
      const double right = i == S - 1 ? sorted.back() : edges[i];
      out.power_map.power[i] = 0.5 * (left + right);
    }
  }
  return out;
}

/// Laplace-smoothed transition counts:
///   p_ij = (count(i -> j) + alpha) / (count(i -> .) + alpha S)
/// alpha > 0 keeps every entry strictly inside (0, 1).
inline StochasticMatrix estimate_transition_matrix(
    const std::vector<std::size_t>& states, std::size_t S,
    double alpha = 1.0) {
  if (!(alpha > 0.0))
    throw std::invalid_argument("estimate_transition_matrix: alpha must be > 0");
  if (S < 1) throw std::invalid_argument("estimate_transition_matrix: S < 1");
  for (std::size_t s : states)
    if (s >= S)
      throw std::invalid_argument("estimate_transition_matrix: state >= S");

  std::vector<double> counts(S * S, 0.0);
  std::vector<double> totals(S, 0.0);
  for (std::size_t k = 0; k + 1 < states.size(); ++k) {
    counts[states[k] * S + states[k + 1]] += 1.0;
    totals[states[k]] += 1.0;
  }
  StochasticMatrix M(S);
  const double aS = alpha * static_cast<double>(S);
  for (std::size_t i = 0; i < S; ++i)
    for (std::size_t j = 0; j < S; ++j)
      M(i, j) = (counts[i * S + j] + alpha) / (totals[i] + aS);
  return M;
}

/// Adds independent U[0, magnitude] noise to every entry, then projects each
/// row back to the interior simplex. magnitude == 0 returns the base as is.
inline StochasticMatrix perturb_default(const StochasticMatrix& base,
                                        double noise_magnitude,
                                        std::uint64_t seed,
                                        double interior_eps = 1e-9) {
  if (!(noise_magnitude >= 0.0))
    throw std::invalid_argument("perturb_default: negative noise magnitude");
  if (noise_magnitude == 0.0) return base;
  Rng rng(derive_seed(seed, 0x9e27));
  const std::size_t S = base.size();
  StochasticMatrix out(S);
  std::vector<double> row(S);
  for (std::size_t i = 0; i < S; ++i) {
    for (std::size_t j = 0; j < S; ++j)
      row[j] = base(i, j) + rng.uniform(0.0, noise_magnitude);
    SimplexPoint p = project_to_interior_simplex(row, interior_eps);
    std::copy(p.vec().begin(), p.vec().end(), out.row(i).begin());
  }
  return out;
}

/// Synthesizes N unit profiles around a base default matrix: one perturbed
/// matrix per unit reused across all stages, discomfort weights i.i.d.
/// uniform on [gamma_lo, gamma_hi] per (unit, state), reused across stages
/// unless resampling is requested.
inline std::vector<UnitProfile> generate_ensemble(const StochasticMatrix& base,
                                                  const EnsembleSpec& spec,
                                                  std::size_t L) {
  validate_spec(spec);
  if (L < 2) throw std::invalid_argument("generate_ensemble: L must be >= 2");
  const std::size_t S = base.size();
  std::vector<UnitProfile> units;
  units.reserve(spec.N);
  for (std::size_t n = 0; n < spec.N; ++n) {
    UnitProfile u;
    u.id = static_cast<int>(n);
    const StochasticMatrix defaults = perturb_default(
        base, spec.noise_magnitude, derive_seed(spec.seed, 0xd234, n));
    u.defaults.assign(L - 1, defaults);
    u.gamma.assign(L - 1, std::vector<double>(S, 0.0));
    Rng rng(derive_seed(spec.seed, 0x5a3a, n));
    if (spec.resample_gamma_per_stage) {
      for (std::size_t l = 0; l + 1 < L; ++l)
        for (std::size_t i = 0; i < S; ++i)
          u.gamma[l][i] = rng.uniform(spec.gamma_lo, spec.gamma_hi);
    } else {
      std::vector<double> per_state(S);
      for (std::size_t i = 0; i < S; ++i)
        per_state[i] = rng.uniform(spec.gamma_lo, spec.gamma_hi);
      for (std::size_t l = 0; l + 1 < L; ++l) u.gamma[l] = per_state;
    }
    units.push_back(std::move(u));
  }
  return units;
}

/// q_{i,l} = power_i * rate_l * stage_duration, for every stage including
/// the terminal row.
inline StageCosts build_stage_costs(const StatePowerMap& power_map,
                                    const TariffSchedule& tariff,
                                    std::size_t L) {
  validate_power_map(power_map);
  validate_tariff(tariff, L);
  if (L < 2) throw std::invalid_argument("build_stage_costs: L must be >= 2");
  StageCosts costs(L, power_map.states());
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t i = 0; i < power_map.states(); ++i)
      costs.at(l, i) =
          power_map.power[i] * tariff.rate_at(l) * tariff.stage_duration_h;
  return costs;
}

}  // namespace drce
