#pragma once

// Search artifacts: history CSV and population document.

#include <cstdio>
#include <string>

#include <json.hpp>

#include "mstar/search/engine.hpp"

namespace mstar {

inline std::string hex64(std::uint64_t v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

inline std::string history_csv(const std::vector<HistoryRow>& rows) {
  std::string s = "iteration,candidate,provenance,mean,std,ei,chosen,raw_label,normalized_label\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%s,%.17g,%.17g,%.17g,%d,", r.iteration, r.candidate,
                  provenance_name(r.provenance), r.mean, r.std, r.ei, r.chosen ? 1 : 0);
    s += buf;
    if (r.label) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.label);
      s += buf;
    }
    s += ',';
    if (r.normalized) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.normalized);
      s += buf;
    }
    s += '\n';
  }
  return s;
}

inline nlohmann::json population_to_json(const Population& pop) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : pop.entries()) {
    nlohmann::json j;
    j["id"] = e.id;
    j["label"] = e.label;
    j["normalized_label"] = pop.normalizer()(e.label);
    j["provenance"] = provenance_name(e.provenance);
    j["parent"] = e.parent ? nlohmann::json(*e.parent) : nlohmann::json(nullptr);
    j["iteration"] = e.iteration;
    j["cell"] = cell_to_json(e.matrix);
    entries.push_back(std::move(j));
  }
  return {{"size", pop.size()}, {"hash", hex64(pop.hash())}, {"higher_is_better", pop.higher_is_better}, {"entries", entries}};
}

inline Population population_from_json(const nlohmann::json& j, const SpaceConfig& space = {}) {
  Population pop;
  try {
    pop.higher_is_better = j.value("higher_is_better", true);
    for (const auto& e : j.at("entries")) {
      PopulationEntry p;
      p.matrix = cell_from_json(e.at("cell"), space);
      p.label = e.at("label").get<double>();
      p.provenance = e.value("provenance", std::string("random")) == "mutated" ? Provenance::Mutated : Provenance::Random;
      if (e.contains("parent") && !e.at("parent").is_null()) p.parent = e.at("parent").get<std::size_t>();
      p.iteration = e.value("iteration", std::size_t{0});
      pop.insert(std::move(p));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("population: ") + e.what());
  }
  pop.refresh_normalizer();
  return pop;
}

}  // namespace mstar
