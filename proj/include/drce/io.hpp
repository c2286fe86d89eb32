#pragma once

// File formats.
//
//   power CSV      header `timestamp,power_kw`, ISO-8601 timestamps, kW.
//   ensemble JSON  { "S", "L", "units": [ { "id", "default": [[...]],
//                    "gamma": [[...]] } ] }, matrices row-major;
//                  "default" is S x S, "gamma" is (L-1) x S.
//   tariff JSON    { "rate_usd_per_kwh": number | [numbers],
//                    "stage_duration_h": 0.25 }
//   model JSON     { "S", "power_map_kw": [...], "default": [[...]] }
//   policy JSON    { "S", "L", "scheme", "stages": [ [[...]] x (L-1) ] }
//   trace CSV      `k,disagreement,error_to_reference,alpha`
//   trajectory CSV `stage,scheme,mean_power_kw,std_power_kw,realized_cost_usd`
//
// Doubles are printed with %.17g so a re-read reproduces the exact value and
// identical runs produce identical bytes.

#include <cinttypes>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "drce/consensus.hpp"
#include "drce/core.hpp"
#include "drce/ingest.hpp"
#include "drce/simulator.hpp"
#include "drce/solver.hpp"

namespace drce {

namespace io {

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << body;
}

// --- ISO-8601 (UTC, second resolution) ------------------------------------

// Days since 1970-01-01 from a civil date (Gregorian, proleptic).
inline std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  const int got = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d,
                              &sep, &h, &mi, &s);
  if (got < 3 || mo < 1 || mo > 12 || d < 1 || d > 31)
    throw std::runtime_error("bad ISO-8601 timestamp: " + text);
  if (got >= 4 && sep != 'T' && sep != ' ')
    throw std::runtime_error("bad ISO-8601 timestamp: " + text);
  return days_from_civil(y, static_cast<unsigned>(mo),
                         static_cast<unsigned>(d)) *
             86400 +
         h * 3600 + mi * 60 + s;
}

inline std::string format_iso8601(std::int64_t epoch_s) {
  std::int64_t days = epoch_s / 86400;
  std::int64_t rem = epoch_s % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  // Civil date from days (inverse of days_from_civil).
  std::int64_t z = days + 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const auto doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  const unsigned d = doy - (153 * mp + 2) / 5 + 1;
  const unsigned m = mp + (mp < 10 ? 3 : -9);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04" PRId64 "-%02u-%02uT%02u:%02u:%02u",
                y + (m <= 2), m, d, static_cast<unsigned>(rem / 3600),
                static_cast<unsigned>((rem % 3600) / 60),
                static_cast<unsigned>(rem % 60));
  return buf;
}

// --- power CSV -------------------------------------------------------------

inline PowerSeries read_power_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error(path + ": empty file");
  if (line.rfind("timestamp,power_kw", 0) != 0)
    throw std::runtime_error(path + ": expected header `timestamp,power_kw`");
  PowerSeries series;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw std::runtime_error(path + ": malformed line " +
                               std::to_string(lineno));
    series.timestamps.push_back(parse_iso8601(line.substr(0, comma)));
    series.power_kw.push_back(std::stod(line.substr(comma + 1)));
  }
  validate_series(series);
  return series;
}

inline void write_power_csv(const std::string& path,
                            const PowerSeries& series) {
  std::ostringstream out;
  out << "timestamp,power_kw\n";
  for (std::size_t k = 0; k < series.size(); ++k)
    out << format_iso8601(series.timestamps[k]) << ','
        << fmt_double(series.power_kw[k]) << '\n';
  write_file(path, out.str());
}

// --- JSON helpers ----------------------------------------------------------

inline nlohmann::json matrix_to_json(const StochasticMatrix& M) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < M.size(); ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t j = 0; j < M.size(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline StochasticMatrix matrix_from_json(const nlohmann::json& rows) {
  std::vector<std::vector<double>> m;
  for (const auto& row : rows) m.push_back(row.get<std::vector<double>>());
  return StochasticMatrix::from_rows(m);
}

// --- model JSON (ingest output) ---------------------------------------------

struct Model {
  std::size_t S = 0;
  StatePowerMap power_map;
  StochasticMatrix default_matrix;
};

inline void write_model_json(const std::string& path, const Model& model) {
  nlohmann::json j;
  j["S"] = model.S;
  j["power_map_kw"] = model.power_map.power;
  j["default"] = matrix_to_json(model.default_matrix);
  write_file(path, j.dump(2) + "\n");
}

inline Model read_model_json(const std::string& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  Model model;
  model.S = j.at("S").get<std::size_t>();
  model.power_map.power = j.at("power_map_kw").get<std::vector<double>>();
  model.default_matrix = matrix_from_json(j.at("default"));
  if (model.default_matrix.size() != model.S ||
      model.power_map.states() != model.S)
    throw std::runtime_error(path + ": inconsistent model dimensions");
  return model;
}

// --- ensemble JSON -----------------------------------------------------------

inline void write_ensemble_json(const std::string& path,
                                const std::vector<UnitProfile>& units,
                                std::size_t L) {
  if (units.empty()) throw std::invalid_argument("write_ensemble_json: empty");
  nlohmann::json j;
  j["S"] = units.front().states();
  j["L"] = L;
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& u : units) {
    nlohmann::json ju;
    ju["id"] = u.id;
    ju["default"] = matrix_to_json(u.defaults.front());
    nlohmann::json gamma = nlohmann::json::array();
    for (const auto& row : u.gamma) gamma.push_back(row);
    ju["gamma"] = std::move(gamma);
    arr.push_back(std::move(ju));
  }
  j["units"] = std::move(arr);
  write_file(path, j.dump(2) + "\n");
}

struct EnsembleFile {
  std::size_t S = 0;
  std::size_t L = 0;
  std::vector<UnitProfile> units;
};

inline EnsembleFile read_ensemble_json(const std::string& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  EnsembleFile out;
  out.S = j.at("S").get<std::size_t>();
  out.L = j.at("L").get<std::size_t>();
  if (out.L < 2) throw std::runtime_error(path + ": L must be >= 2");
  for (const auto& ju : j.at("units")) {
    UnitProfile u;
    u.id = ju.at("id").get<int>();
    const StochasticMatrix defaults = matrix_from_json(ju.at("default"));
    if (defaults.size() != out.S)
      throw std::runtime_error(path + ": default matrix size != S");
    u.defaults.assign(out.L - 1, defaults);
    u.gamma.clear();
    for (const auto& row : ju.at("gamma"))
      u.gamma.push_back(row.get<std::vector<double>>());
    if (u.gamma.size() == 1 && out.L > 2)
      u.gamma.assign(out.L - 1, u.gamma.front());  // broadcast constant row
    if (u.gamma.size() != out.L - 1)
      throw std::runtime_error(path + ": gamma must have L-1 (or 1) rows");
    for (const auto& row : u.gamma)
      if (row.size() != out.S)
        throw std::runtime_error(path + ": gamma row size != S");
    validate_unit(u);
    out.units.push_back(std::move(u));
  }
  if (out.units.empty()) throw std::runtime_error(path + ": no units");
  return out;
}

// --- tariff JSON --------------------------------------------------------------

inline TariffSchedule read_tariff_json(const std::string& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  TariffSchedule tariff;
  const auto& rate = j.at("rate_usd_per_kwh");
  if (rate.is_number()) {
    tariff.rate_usd_per_kwh = {rate.get<double>()};
  } else {
    tariff.rate_usd_per_kwh = rate.get<std::vector<double>>();
  }
  tariff.stage_duration_h = j.value("stage_duration_h", 0.25);
  return tariff;
}

inline void write_tariff_json(const std::string& path,
                              const TariffSchedule& tariff) {
  nlohmann::json j;
  if (tariff.rate_usd_per_kwh.size() == 1)
    j["rate_usd_per_kwh"] = tariff.rate_usd_per_kwh[0];
  else
    j["rate_usd_per_kwh"] = tariff.rate_usd_per_kwh;
  j["stage_duration_h"] = tariff.stage_duration_h;
  write_file(path, j.dump(2) + "\n");
}

// --- policy JSON ----------------------------------------------------------------

inline void write_policy_json(const std::string& path, const PolicyStack& stack,
                              const std::string& scheme) {
  if (stack.size() == 0) throw std::invalid_argument("write_policy_json: empty");
  nlohmann::json j;
  j["S"] = stack[0].size();
  j["L"] = stack.size() + 1;
  j["scheme"] = scheme;
  nlohmann::json stages = nlohmann::json::array();
  for (std::size_t l = 0; l < stack.size(); ++l)
    stages.push_back(matrix_to_json(stack[l]));
  j["stages"] = std::move(stages);
  write_file(path, j.dump(2) + "\n");
}

struct PolicyFile {
  std::size_t S = 0;
  std::size_t L = 0;
  std::string scheme;
  PolicyStack stack;
};

inline PolicyFile read_policy_json(const std::string& path) {
  const auto j = nlohmann::json::parse(read_file(path));
  PolicyFile out;
  out.S = j.at("S").get<std::size_t>();
  out.L = j.at("L").get<std::size_t>();
  out.scheme = j.value("scheme", "");
  for (const auto& stage : j.at("stages"))
    out.stack.stages.push_back(matrix_from_json(stage));
  if (out.stack.size() != out.L - 1)
    throw std::runtime_error(path + ": stages must have L-1 entries");
  for (const auto& M : out.stack.stages)
    if (M.size() != out.S)
      throw std::runtime_error(path + ": stage matrix size != S");
  return out;
}

// --- trace CSV -------------------------------------------------------------------

inline void write_trace_csv(const std::string& path,
                            const ConsensusRunReport& report) {
  std::ostringstream out;
  out << "k,disagreement,error_to_reference,alpha\n";
  for (std::size_t k = 0; k < report.disagreement_trace.size(); ++k) {
    out << (k + 1) << ',' << fmt_double(report.disagreement_trace[k]) << ',';
    if (k < report.error_trace.size())
      out << fmt_double(report.error_trace[k]);
    out << ',' << fmt_double(report.alpha_trace[k]) << '\n';
  }
  write_file(path, out.str());
}

/// Concatenates the per-stage reports of a stagewise pipeline into one trace
/// (k restarts at 1 for each stage, matching the per-stage step schedule).
inline void write_trace_csv(const std::string& path,
                            const LocalPipelineResult& pipeline) {
  std::ostringstream out;
  out << "k,disagreement,error_to_reference,alpha\n";
  for (const auto& report : pipeline.stage_reports) {
    for (std::size_t k = 0; k < report.disagreement_trace.size(); ++k) {
      out << (k + 1) << ',' << fmt_double(report.disagreement_trace[k]) << ',';
      if (k < report.error_trace.size())
        out << fmt_double(report.error_trace[k]);
      out << ',' << fmt_double(report.alpha_trace[k]) << '\n';
    }
  }
  write_file(path, out.str());
}

// --- trajectory CSV -----------------------------------------------------------------

inline void write_trajectory_csv(const std::string& path,
                                 const Trajectory& traj,
                                 const std::string& scheme) {
  std::ostringstream out;
  out << "stage,scheme,mean_power_kw,std_power_kw,realized_cost_usd\n";
  for (std::size_t l = 0; l < traj.stages(); ++l) {
    out << (l + 1) << ',' << scheme << ',' << fmt_double(traj.mean_power_kw[l])
        << ',' << fmt_double(traj.std_power_kw[l]) << ','
        << fmt_double(traj.realized_cost_usd[l]) << '\n';
  }
  write_file(path, out.str());
}

struct TrajectoryRow {
  std::size_t stage = 0;
  std::string scheme;
  double mean_power_kw = 0.0;
  double std_power_kw = 0.0;
  double realized_cost_usd = 0.0;
};

inline std::vector<TrajectoryRow> read_trajectory_csv(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "stage,scheme,mean_power_kw,std_power_kw,realized_cost_usd")
    throw std::runtime_error(path + ": bad trajectory header");
  std::vector<TrajectoryRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    TrajectoryRow row;
    std::getline(ss, field, ',');
    row.stage = std::stoul(field);
    std::getline(ss, row.scheme, ',');
    std::getline(ss, field, ',');
    row.mean_power_kw = std::stod(field);
    std::getline(ss, field, ',');
    row.std_power_kw = std::stod(field);
    std::getline(ss, field, ',');
    row.realized_cost_usd = std::stod(field);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace io

}  // namespace drce
