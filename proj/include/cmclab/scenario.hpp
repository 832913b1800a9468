#pragma once

#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "cmclab/core.hpp"
#include "cmclab/io_util.hpp"
#include "cmclab/models.hpp"
#include "cmclab/oracle.hpp"
#include "cmclab/simulate.hpp"

namespace cmclab {

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ContinuousScenario {
  std::string name;
  std::size_t states = 2;
  TimeGrid grid;
  FactorDriverSpec driver;
  InitialLawSpec initial_law;
  std::shared_ptr<const IntensityModel> model;
  Matrix reference;
  double factor_cut = 0.0;
  std::string hash;
};

struct LoadedScenario {
  enum class Kind { kContinuous, kDiscrete };
  Kind kind = Kind::kContinuous;
  ContinuousScenario continuous;
  oracle::DiscreteScenario discrete;
};

namespace detail {

using nlohmann::json;

inline const json& need(const json& j, const char* key, const char* ctx) {
  if (!j.is_object() || !j.contains(key))
    throw SchemaError(std::string(ctx) + ": missing \"" + key + "\"");
  return j.at(key);
}

inline double need_num(const json& j, const char* key, const char* ctx) {
  const json& v = need(j, key, ctx);
  if (!v.is_number())
    throw SchemaError(std::string(ctx) + ": \"" + key + "\" must be a number");
  return v.get<double>();
}

inline std::size_t need_uint(const json& j, const char* key, const char* ctx) {
  const json& v = need(j, key, ctx);
  if (!v.is_number_unsigned())
    throw SchemaError(std::string(ctx) + ": \"" + key +
                      "\" must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::string need_str(const json& j, const char* key, const char* ctx) {
  const json& v = need(j, key, ctx);
  if (!v.is_string())
    throw SchemaError(std::string(ctx) + ": \"" + key + "\" must be a string");
  return v.get<std::string>();
}

inline std::vector<double> need_vec(const json& j, const char* key,
                                    const char* ctx, std::size_t len) {
  const json& v = need(j, key, ctx);
  if (!v.is_array() || v.size() != len)
    throw SchemaError(std::string(ctx) + ": \"" + key + "\" must be an array of " +
                      std::to_string(len) + " numbers");
  std::vector<double> out;
  for (const json& e : v) {
    if (!e.is_number())
      throw SchemaError(std::string(ctx) + ": \"" + key + "\" must be numeric");
    out.push_back(e.get<double>());
  }
  return out;
}

inline Matrix need_matrix(const json& j, const char* key, const char* ctx,
                          std::size_t d) {
  const json& v = need(j, key, ctx);
  if (!v.is_array() || v.size() != d)
    throw SchemaError(std::string(ctx) + ": \"" + key + "\" must be a " +
                      std::to_string(d) + "x" + std::to_string(d) + " matrix");
  Matrix m(d);
  for (std::size_t i = 0; i < d; ++i) {
    const json& row = v.at(i);
    if (!row.is_array() || row.size() != d)
      throw SchemaError(std::string(ctx) + ": \"" + key + "\" row " +
                        std::to_string(i) + " has wrong length");
    for (std::size_t c = 0; c < d; ++c) {
      if (!row.at(c).is_number())
        throw SchemaError(std::string(ctx) + ": \"" + key + "\" must be numeric");
      m(i, c) = row.at(c).get<double>();
    }
  }
  return m;
}

inline Matrix need_generator(const json& j, const char* key, const char* ctx,
                             std::size_t d) {
  Matrix m = need_matrix(j, key, ctx, d);
  if (const auto rep = validate_generator(m); !rep.ok) {
    const auto& v = rep.violations.front();
    throw SchemaError(std::string(ctx) + ": \"" + key + "\" is not a generator (" +
                      v.what + " at row " + std::to_string(v.row + 1) + ")");
  }
  return m;
}

inline FactorDriverSpec parse_driver(const json& j) {
  FactorDriverSpec spec;
  const std::string kind = need_str(j, "driver", "$.factor");
  if (kind == "constant") {
    spec.kind = DriverKind::kConstant;
    spec.constant_value = need_num(j, "value", "$.factor");
  } else if (kind == "brownian") {
    spec.kind = DriverKind::kBrownian;
    spec.brownian_start = need_num(j, "start", "$.factor");
    spec.brownian_vol = need_num(j, "volatility", "$.factor");
    if (!(spec.brownian_vol > 0.0))
      throw SchemaError("$.factor: volatility must be > 0");
  } else if (kind == "telegraph") {
    spec.kind = DriverKind::kTelegraph;
    spec.telegraph_levels = need_vec(j, "levels", "$.factor", 2);
    if (spec.telegraph_levels[0] == spec.telegraph_levels[1])
      throw SchemaError("$.factor: telegraph levels must differ");
    spec.telegraph_rate = need_num(j, "switch_rate", "$.factor");
    if (!(spec.telegraph_rate > 0.0))
      throw SchemaError("$.factor: switch_rate must be > 0");
    spec.telegraph_start_probs = need_vec(j, "start_probs", "$.factor", 2);
    check_probability_vector(spec.telegraph_start_probs,
                             "$.factor.start_probs");
  } else {
    throw SchemaError("$.factor: unknown driver \"" + kind + "\"");
  }
  return spec;
}

inline InitialLawSpec parse_initial_law(const json& j, std::size_t d) {
  InitialLawSpec law;
  const std::string kind = need_str(j, "law", "$.initial_law");
  if (kind == "vector") {
    law.kind = InitialLawKind::kVector;
    law.probs = need_vec(j, "probs", "$.initial_law", d);
    check_probability_vector(law.probs, "$.initial_law.probs");
  } else if (kind == "factor_sign") {
    law.kind = InitialLawKind::kFactorSign;
    law.negative = need_vec(j, "negative", "$.initial_law", d);
    law.positive = need_vec(j, "positive", "$.initial_law", d);
    check_probability_vector(law.negative, "$.initial_law.negative");
    check_probability_vector(law.positive, "$.initial_law.positive");
    law.cut = need_num(j, "cut", "$.initial_law");
  } else {
    throw SchemaError("$.initial_law: unknown law \"" + kind + "\"");
  }
  return law;
}

inline std::shared_ptr<const IntensityModel> parse_model(const json& j,
                                                         std::size_t d) {
  const std::string kind = need_str(j, "model", "$.intensity");
  try {
    if (kind == "constant")
      return std::make_shared<ConstantIntensity>(
          need_generator(j, "matrix", "$.intensity", d));
    if (kind == "logistic_scale")
      return std::make_shared<LogisticScaleIntensity>(
          need_generator(j, "base", "$.intensity", d),
          need_num(j, "scale_min", "$.intensity"),
          need_num(j, "scale_max", "$.intensity"),
          need_num(j, "slope", "$.intensity"),
          need_num(j, "center", "$.intensity"));
    if (kind == "threshold")
      return std::make_shared<ThresholdIntensity>(
          need_generator(j, "low", "$.intensity", d),
          need_generator(j, "high", "$.intensity", d),
          need_num(j, "cut", "$.intensity"));
    if (kind == "time_switch")
      return std::make_shared<TimeSwitchIntensity>(
          need_generator(j, "before", "$.intensity", d),
          need_generator(j, "after", "$.intensity", d),
          need_uint(j, "switch_node", "$.intensity"));
  } catch (const std::invalid_argument& ex) {
    throw SchemaError(std::string("$.intensity: ") + ex.what());
  }
  throw SchemaError("$.intensity: unknown model \"" + kind + "\"");
}

inline ContinuousScenario parse_continuous(const json& j, std::string hash) {
  ContinuousScenario sc;
  sc.hash = std::move(hash);
  sc.name = need_str(j, "name", "$");
  sc.states = need_uint(j, "states", "$");
  if (sc.states < 2 || sc.states > 20)
    throw SchemaError("$.states: need 2 <= states <= 20");
  const json& grid = need(j, "grid", "$");
  const double horizon = need_num(grid, "horizon", "$.grid");
  const std::size_t steps = need_uint(grid, "steps", "$.grid");
  if (!(horizon > 0.0) || steps < 1)
    throw SchemaError("$.grid: need horizon > 0 and steps >= 1");
  sc.grid = TimeGrid(horizon, steps);
  sc.driver = parse_driver(need(j, "factor", "$"));
  sc.initial_law = parse_initial_law(need(j, "initial_law", "$"), sc.states);
  sc.model = parse_model(need(j, "intensity", "$"), sc.states);
  try {
    sc.reference =
        checked_reference(need_matrix(need(j, "reference", "$"), "matrix",
                                      "$.reference", sc.states));
  } catch (const std::invalid_argument& ex) {
    throw SchemaError(std::string("$.reference: ") + ex.what());
  }
  sc.factor_cut = sc.driver.default_cut();
  if (j.contains("diagnostics"))
    sc.factor_cut = need_num(j.at("diagnostics"), "factor_cut", "$.diagnostics");
  if (!(sc.model->lambda_max() < std::numeric_limits<double>::infinity()))
    throw SchemaError("$.intensity: model must declare a finite rate bound");
  return sc;
}

inline oracle::DiscreteScenario parse_discrete(const json& j,
                                               std::string hash) {
  oracle::DiscreteScenario sc;
  sc.hash = std::move(hash);
  sc.name = need_str(j, "name", "$");
  sc.states = need_uint(j, "states", "$");
  sc.steps = need_uint(j, "steps", "$");
  sc.dt = need_num(j, "dt", "$");
  sc.initial_law = need_vec(j, "initial_law", "$", sc.states);
  check_probability_vector(sc.initial_law, "$.initial_law");
  try {
    sc.reference = checked_reference(
        need_matrix(need(j, "reference", "$"), "matrix", "$.reference",
                    sc.states));
  } catch (const std::invalid_argument& ex) {
    throw SchemaError(std::string("$.reference: ") + ex.what());
  }
  const json& intensity = need(j, "intensity", "$");
  const std::string kind = need_str(intensity, "model", "$.intensity");
  if (kind == "constant") {
    sc.bit0 = need_generator(intensity, "matrix", "$.intensity", sc.states);
    sc.bit1 = sc.bit0;
    sc.bit_index = 0;
  } else if (kind == "bit_modulated") {
    sc.bit0 = need_generator(intensity, "bit0", "$.intensity", sc.states);
    sc.bit1 = need_generator(intensity, "bit1", "$.intensity", sc.states);
    const json& bi = need(intensity, "bit_index", "$.intensity");
    if (bi.is_string() && bi.get<std::string>() == "current")
      sc.bit_index = 0;
    else if (bi.is_number_unsigned() && bi.get<std::size_t>() >= 1)
      sc.bit_index = bi.get<std::size_t>();
    else
      throw SchemaError("$.intensity.bit_index: \"current\" or integer >= 1");
  } else {
    throw SchemaError("$.intensity: unknown discrete model \"" + kind + "\"");
  }
  if (j.contains("tamper")) {
    const json& t = j.at("tamper");
    const std::string tk = need_str(t, "kind", "$.tamper");
    if (tk == "non_markov_step") {
      sc.tamper = oracle::Tamper::kNonMarkovStep;
      sc.tamper_matrix = need_generator(t, "matrix", "$.tamper", sc.states);
      if (sc.steps < 2)
        throw SchemaError("$.tamper: non_markov_step needs steps >= 2");
    } else if (tk == "future_bit_initial") {
      sc.tamper = oracle::Tamper::kFutureBitInitial;
      sc.tamper_mu0 = need_vec(t, "mu0", "$.tamper", sc.states);
      sc.tamper_mu1 = need_vec(t, "mu1", "$.tamper", sc.states);
      check_probability_vector(sc.tamper_mu0, "$.tamper.mu0");
      check_probability_vector(sc.tamper_mu1, "$.tamper.mu1");
    } else {
      throw SchemaError("$.tamper: unknown kind \"" + tk + "\"");
    }
  }
  try {
    oracle::validate_discrete(sc);
    oracle::step_matrix(sc.bit0, sc.dt);
    oracle::step_matrix(sc.bit1, sc.dt);
    if (sc.tamper == oracle::Tamper::kNonMarkovStep)
      oracle::step_matrix(sc.tamper_matrix, sc.dt);
    const Matrix ref_step = oracle::step_matrix(sc.reference, sc.dt);
    for (std::size_t i = 0; i < sc.states; ++i)
      if (!(ref_step(i, i) > 0.0))
        throw std::invalid_argument("reference stay probability must be > 0");
  } catch (const std::invalid_argument& ex) {
    throw SchemaError(std::string("$: ") + ex.what());
  }
  return sc;
}

}  // namespace detail

/// Parses a scenario document. The content hash (fnv1a64 of the canonical
/// re-serialisation) identifies the scenario in ensemble manifests.
inline LoadedScenario parse_scenario(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("invalid JSON: ") + ex.what());
  }
  std::string hash;
  try {
    hash = hex64(fnv1a64(j.dump()));
    LoadedScenario out;
    const std::string kind = detail::need_str(j, "kind", "$");
    if (kind == "continuous") {
      out.kind = LoadedScenario::Kind::kContinuous;
      out.continuous = detail::parse_continuous(j, hash);
    } else if (kind == "discrete") {
      out.kind = LoadedScenario::Kind::kDiscrete;
      out.discrete = detail::parse_discrete(j, hash);
    } else {
      throw SchemaError("$.kind: must be \"continuous\" or \"discrete\"");
    }
    return out;
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError(std::string("schema violation: ") + ex.what());
  } catch (const std::invalid_argument& ex) {
    // shared validators (probability vectors, generator rows, model
    // constructors) reject bad values; inside a parse that is a document
    // problem, not a caller problem
    throw SchemaError(ex.what());
  }
}

inline LoadedScenario load_scenario(const std::string& path) {
  return parse_scenario(read_text_file(path));
}

inline WeightedEnsemble build_ensemble(const ContinuousScenario& sc,
                                       std::size_t n, std::uint64_t seed) {
  return build_weighted_ensemble(*sc.model, sc.driver, sc.initial_law,
                                 sc.reference, sc.grid, n, seed, sc.hash);
}

inline DirectEnsemble build_direct(const ContinuousScenario& sc, std::size_t n,
                                   std::uint64_t seed) {
  return build_direct_ensemble(*sc.model, sc.driver, sc.initial_law, sc.grid,
                               n, seed);
}

}  // namespace cmclab
