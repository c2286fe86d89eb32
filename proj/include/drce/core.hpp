#pragma once

// Core numeric primitives shared by the whole library: probability-simplex
// geometry, Kullback-Leibler divergence, stabilized log-sum-exp and
// row-stochastic matrix diagnostics.
//
// Everything here is pure and stateless; unrestricted concurrent use is fine.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace drce {

/// Thrown when KL(p || q) hits p_j > 0 on a zero of q.
class DivergenceUndefined : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct Tolerance {
  double abs = 1e-9;
  double rel = 1e-9;
};

inline void check_tolerance(const Tolerance& tol) {
  if (!(tol.abs > 0.0) || !(tol.rel > 0.0))
    throw std::invalid_argument("Tolerance: abs and rel must be > 0");
}

namespace detail {

inline void require_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw std::invalid_argument(std::string(what) + ": non-finite entry");
  }
}

}  // namespace detail

// A probability vector: entries >= 0, summing to 1 within `sum_tol`.
// The checked constructor enforces the invariant; `unchecked` is for values
// that are feasible by construction (e.g. projection output).
class SimplexPoint {
 public:
  SimplexPoint() = default;

  explicit SimplexPoint(std::vector<double> entries, double sum_tol = 1e-9)
      : p_(std::move(entries)) {
    if (p_.empty()) throw std::invalid_argument("SimplexPoint: empty");
    double sum = 0.0;
    for (double x : p_) {
      if (!std::isfinite(x) || x < 0.0)
        throw std::invalid_argument(
            "SimplexPoint: entries must be finite and >= 0");
      sum += x;
    }
    if (std::fabs(sum - 1.0) > sum_tol)
      throw std::invalid_argument("SimplexPoint: entries must sum to 1");
  }

  static SimplexPoint unchecked(std::vector<double> entries) {
    SimplexPoint s;
    s.p_ = std::move(entries);
    return s;
  }

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  const std::vector<double>& vec() const { return p_; }
  operator std::span<const double>() const { return {p_.data(), p_.size()}; }

 private:
  std::vector<double> p_;
};

// Occupancy distribution of an ensemble over states (fractions of units).
using EnsembleState = SimplexPoint;

/// Euclidean projection onto the probability simplex (sort-based, exact in
/// O(S log S)). Idempotent and nonexpansive.
inline SimplexPoint project_to_simplex(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("project_to_simplex: empty input");
  detail::require_finite(v, "project_to_simplex");

  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumulative = 0.0;
  double tau = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) {
    cumulative += u[k];
    const double t = (cumulative - 1.0) / static_cast<double>(k + 1);
    if (u[k] - t > 0.0) tau = t;
  }
  std::vector<double> p(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) p[j] = std::max(v[j] - tau, 0.0);
  return SimplexPoint::unchecked(std::move(p));
}

/// Euclidean projection onto the eps-interior simplex {p : p_j >= eps,
/// sum p = 1}, realized by projecting the affinely shifted point onto the
/// plain simplex. Keeps KL gradients finite after projection.
inline SimplexPoint project_to_interior_simplex(std::span<const double> v,
                                                double eps = 1e-9) {
  const auto S = static_cast<double>(v.size());
  if (v.empty())
    throw std::invalid_argument("project_to_interior_simplex: empty input");
  if (!(eps > 0.0) || !(eps < 1.0 / S))
    throw std::invalid_argument(
        "project_to_interior_simplex: eps must lie in (0, 1/S)");
  detail::require_finite(v, "project_to_interior_simplex");

  const double scale = 1.0 - S * eps;
  std::vector<double> shifted(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) shifted[j] = (v[j] - eps) / scale;
  SimplexPoint inner = project_to_simplex(shifted);
  std::vector<double> p(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) p[j] = eps + scale * inner[j];
  return SimplexPoint::unchecked(std::move(p));
}

/// KL divergence sum_j p_j ln(p_j / q_j), with the 0 ln 0 := 0 convention.
inline double kl_divergence(std::span<const double> p,
                            std::span<const double> q) {
  if (p.empty() || p.size() != q.size())
    throw std::invalid_argument("kl_divergence: dimension mismatch");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double pj = p[j];
    if (!std::isfinite(pj) || pj < 0.0)
      throw std::invalid_argument("kl_divergence: p must be finite and >= 0");
    if (pj == 0.0) continue;
    if (!(q[j] > 0.0))
      throw DivergenceUndefined("kl_divergence: q_j == 0 where p_j > 0");
    acc += pj * std::log(pj / q[j]);
  }
  // Scrub the tiny negatives that cancellation can leave when p ~ q.
  if (acc < 0.0 && acc > -1e-9) acc = 0.0;
  return acc;
}

/// ln sum_j exp(v_j), max-shifted so values up to ~1e6 cannot overflow.
inline double log_sum_exp(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("log_sum_exp: empty input");
  detail::require_finite(values, "log_sum_exp");
  const double m = *std::max_element(values.begin(), values.end());
  double acc = 0.0;
  for (double v : values) acc += std::exp(v - m);
  return m + std::log(acc);
}

// Square row-major matrix whose rows are meant to be probability vectors.
// The container itself does not enforce stochasticity (intermediate states
// during estimation/mixing are legitimately infeasible); validate_stochastic
// is the diagnostic.
class StochasticMatrix {
 public:
  StochasticMatrix() = default;
  explicit StochasticMatrix(std::size_t S, double fill = 0.0)
      : S_(S), a_(S * S, fill) {}

  static StochasticMatrix uniform(std::size_t S) {
    if (S == 0) throw std::invalid_argument("StochasticMatrix: S == 0");
    return StochasticMatrix(S, 1.0 / static_cast<double>(S));
  }

  static StochasticMatrix from_rows(
      const std::vector<std::vector<double>>& rows) {
    StochasticMatrix m(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size())
        throw std::invalid_argument("StochasticMatrix: rows must be S x S");
      std::copy(rows[i].begin(), rows[i].end(), m.row(i).begin());
    }
    return m;
  }

  std::size_t size() const { return S_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * S_ + j]; }
  double operator()(std::size_t i, std::size_t j) const {
    return a_[i * S_ + j];
  }
  std::span<double> row(std::size_t i) { return {a_.data() + i * S_, S_}; }
  std::span<const double> row(std::size_t i) const {
    return {a_.data() + i * S_, S_};
  }
  std::vector<double>& data() { return a_; }
  const std::vector<double>& data() const { return a_; }

  friend bool operator==(const StochasticMatrix& a,
                         const StochasticMatrix& b) = default;

 private:
  std::size_t S_ = 0;
  std::vector<double> a_;
};

// Pass/fail report of validate_stochastic. `issues` is human-readable, one
// line per violation.
struct StochasticCheck {
  bool pass = true;
  std::vector<double> row_sum_error;  // |sum(row) - 1| per row
  std::vector<std::string> issues;

  explicit operator bool() const { return pass; }
};

/// Diagnostic check that every row of M is a probability vector; with
/// `interior` set, additionally that every entry lies in (eps, 1 - eps).
/// Never throws: violations are reported, not raised.
inline StochasticCheck validate_stochastic(const StochasticMatrix& M,
                                           Tolerance tol = {},
                                           bool interior = false,
                                           double interior_eps = 1e-9) {
  check_tolerance(tol);
  StochasticCheck out;
  const std::size_t S = M.size();
  out.row_sum_error.resize(S, 0.0);
  const double sum_tol = std::max(tol.abs, tol.rel);
  for (std::size_t i = 0; i < S; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < S; ++j) {
      const double e = M(i, j);
      sum += e;
      std::ostringstream msg;
      if (!std::isfinite(e)) {
        msg << "row " << i << " col " << j << ": non-finite entry";
      } else if (e < 0.0) {
        msg << "row " << i << " col " << j << ": negative entry " << e;
      } else if (interior && (e <= interior_eps || e >= 1.0 - interior_eps)) {
        msg << "row " << i << " col " << j << ": boundary entry " << e;
      }
      if (!msg.str().empty()) {
        out.pass = false;
        out.issues.push_back(msg.str());
      }
    }
    out.row_sum_error[i] = std::fabs(sum - 1.0);
    if (out.row_sum_error[i] > sum_tol) {
      std::ostringstream msg;
      msg << "row " << i << ": sum " << sum << " deviates from 1 by "
          << out.row_sum_error[i];
      out.pass = false;
      out.issues.push_back(msg.str());
    }
  }
  return out;
}

/// Per-row interior projection of a whole matrix.
inline StochasticMatrix project_rows_to_interior(const StochasticMatrix& M,
                                                 double eps = 1e-9) {
  StochasticMatrix out(M.size());
  for (std::size_t i = 0; i < M.size(); ++i) {
    SimplexPoint p = project_to_interior_simplex(M.row(i), eps);
    std::copy(p.vec().begin(), p.vec().end(), out.row(i).begin());
  }
  return out;
}

inline double l2_distance(std::span<const double> a,
                          std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("l2_distance: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

inline double frobenius_distance(const StochasticMatrix& a,
                                 const StochasticMatrix& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("frobenius_distance: dimension mismatch");
  return l2_distance(a.data(), b.data());
}

inline double max_abs_difference(std::span<const double> a,
                                 std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("max_abs_difference: dimension mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace drce
