#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmclab/io_util.hpp"
#include "cmclab/scenario.hpp"
#include "cmclab/simulate.hpp"
#include "cmclab/version.hpp"

namespace cmclab {

// On-disk ensemble: events.csv (one row per path event, stable order) and
// manifest.json. Factor paths are not stored; they regenerate exactly from
// the per-path substreams of the recorded seed. Weights are stored and also
// recomputed on load as an integrity check. No wall-clock anywhere: a rerun
// of the same command must be byte-identical.

inline std::string ensemble_csv(const WeightedEnsemble& e) {
  std::string out = "path,kind,time,from_state,to_state,weight\n";
  out.reserve(out.size() + e.size() * 48);
  char buf[160];
  for (std::size_t i = 0; i < e.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,init,0,,%d,%.17g\n", i,
                  e.chains[i].initial_state + 1, e.weights[i]);
    out += buf;
    for (const JumpRecord& j : e.chains[i].jumps) {
      std::snprintf(buf, sizeof buf, "%zu,jump,%.17g,%d,%d,\n", i, j.time,
                    j.from + 1, j.to + 1);
      out += buf;
    }
  }
  return out;
}

inline nlohmann::json ensemble_manifest(const WeightedEnsemble& e,
                                        const std::string& scenario_name,
                                        const std::string& csv) {
  std::size_t rows = 0;
  for (char c : csv) rows += c == '\n' ? 1 : 0;
  nlohmann::json m;
  m["format"] = kEnsembleFormat;
  m["tool"] = {{"name", kToolName}, {"version", kToolVersion}};
  m["scenario"] = {{"name", scenario_name}, {"hash", e.scenario_hash}};
  m["seed"] = e.base_seed;
  m["paths"] = e.size();
  m["grid"] = {{"horizon", e.grid.horizon}, {"steps", e.grid.steps}};
  m["weights"] = {
      {"ess", effective_sample_size(e.weights)},
      {"mean", mean(e.weights)},
      {"variance", sample_variance(e.weights)}};
  m["files"] = {{"events.csv",
                 {{"fnv1a64", hex64(fnv1a64(csv))}, {"rows", rows - 1}}}};
  return m;
}

inline void write_ensemble(const std::string& dir, const WeightedEnsemble& e,
                           const std::string& scenario_name) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir);
  const std::string csv = ensemble_csv(e);
  write_file_atomic(dir + "/events.csv", csv);
  write_file_atomic(dir + "/manifest.json",
                    ensemble_manifest(e, scenario_name, csv).dump(2) + "\n");
}

/// Reads an ensemble directory back against its scenario: verifies the
/// scenario hash, the event-file hash recorded in the manifest, and that
/// re-derived weights agree bit-for-bit with the stored ones.
inline WeightedEnsemble load_ensemble(const std::string& dir,
                                      const ContinuousScenario& sc) {
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(read_text_file(dir + "/manifest.json"));
  } catch (const nlohmann::json::exception& ex) {
    throw SchemaError("manifest.json: " + std::string(ex.what()));
  }
  if (m.value("format", "") != kEnsembleFormat)
    throw SchemaError("manifest.json: unknown format");
  if (m.at("scenario").at("hash").get<std::string>() != sc.hash)
    throw SchemaError(
        "ensemble was built from a different scenario (hash mismatch)");
  const std::string csv = read_text_file(dir + "/events.csv");
  if (hex64(fnv1a64(csv)) !=
      m.at("files").at("events.csv").at("fnv1a64").get<std::string>())
    throw SchemaError("events.csv does not match manifest checksum");

  WeightedEnsemble e;
  e.base_seed = m.at("seed").get<std::uint64_t>();
  e.scenario_hash = sc.hash;
  e.grid = sc.grid;
  const std::size_t n = m.at("paths").get<std::size_t>();
  e.factors.resize(n);
  e.chains.resize(n);
  e.weights.assign(n, 0.0);
  e.eta_nodes.assign(n * (sc.grid.steps + 1), 0.0);

  // parse events.csv
  std::size_t pos = csv.find('\n');
  if (pos == std::string::npos) throw SchemaError("events.csv: empty");
  std::vector<bool> seen(n, false);
  while (pos + 1 < csv.size()) {
    const std::size_t eol = csv.find('\n', pos + 1);
    if (eol == std::string::npos) break;
    const std::string line = csv.substr(pos + 1, eol - pos - 1);
    pos = eol;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (std::size_t c = 0; c <= line.size(); ++c)
      if (c == line.size() || line[c] == ',') {
        f.push_back(line.substr(start, c - start));
        start = c + 1;
      }
    if (f.size() != 6) throw SchemaError("events.csv: malformed row");
    const std::size_t path = std::strtoull(f[0].c_str(), nullptr, 10);
    if (path >= n) throw SchemaError("events.csv: path index out of range");
    if (f[1] == "init") {
      e.chains[path].initial_state = std::atoi(f[4].c_str()) - 1;
      e.weights[path] = std::strtod(f[5].c_str(), nullptr);
      seen[path] = true;
    } else if (f[1] == "jump") {
      e.chains[path].jumps.push_back({std::strtod(f[2].c_str(), nullptr),
                                      std::atoi(f[3].c_str()) - 1,
                                      std::atoi(f[4].c_str()) - 1});
    } else {
      throw SchemaError("events.csv: unknown row kind \"" + f[1] + "\"");
    }
  }
  for (std::size_t i = 0; i < n; ++i)
    if (!seen[i]) throw SchemaError("events.csv: missing init row");

  parallel_for(n, [&](std::size_t i) {
    e.chains[i].validate(sc.grid, sc.states);
    e.factors[i] = sample_factor(
        sc.driver, sc.grid,
        mix_seed(e.base_seed, i, static_cast<std::uint64_t>(Stream::kFactor)));
    const WeightResult w = radon_nikodym_weight(e.chains[i], e.factors[i],
                                                *sc.model, sc.reference,
                                                sc.grid);
    for (std::size_t k = 0; k <= sc.grid.steps; ++k)
      e.eta_nodes[i * (sc.grid.steps + 1) + k] = w.eta_nodes[k];
    // The stored weight must reproduce exactly; anything else means the
    // events file and the scenario went out of sync.
    if (w.eta != e.weights[i]) e.weights[i] = std::nan("");
  });
  for (std::size_t i = 0; i < n; ++i)
    if (std::isnan(e.weights[i]))
      throw SchemaError("stored weights disagree with the scenario (path " +
                        std::to_string(i) + ")");
  return e;
}

}  // namespace cmclab
