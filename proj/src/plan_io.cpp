#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "hscp/error.hpp"
#include "hscp/plan.hpp"

namespace hscp {

std::int64_t ChannelSpec::clusters_for(const std::string& node, std::int64_t channels) const {
  std::int64_t k = channels;
  if (auto it = per_node.find(node); it != per_node.end()) {
    k = it->second;
  } else if (keep_ratio) {
    k = std::max<std::int64_t>(1, std::llround(*keep_ratio * static_cast<double>(channels)));
  }
  if (k < 1 || k > channels) {
    throw ValidationError("channel cluster count " + std::to_string(k) + " for '" + node + "' outside [1, " +
                          std::to_string(channels) + "]");
  }
  return k;
}

PruningPlan identity_plan(const ModelGraph& graph) {
  PruningPlan plan;
  plan.graph_sha256 = graph_sha256(graph);
  for (const auto& id : prunable_units(graph)) {
    plan.layer_stage.clusters.push_back({id});
    plan.layer_stage.retained.push_back(id);
  }
  for (const auto& id : channel_prunable_nodes(graph)) {
    std::vector<std::int64_t> all(static_cast<std::size_t>(graph.find(id)->out_channels));
    std::iota(all.begin(), all.end(), 0);
    plan.channel_stage[id] = std::move(all);
  }
  plan.metadata.k = static_cast<std::int64_t>(plan.layer_stage.clusters.size());
  plan.metadata.channel_spec = ChannelSpec::ratio(1.0);
  return plan;
}

void validate_plan(const ModelGraph& graph, const PruningPlan& plan) {
  const auto units = prunable_units(graph);
  const std::set<std::string> unit_set(units.begin(), units.end());
  const LayerStage& ls = plan.layer_stage;

  std::map<std::string, std::size_t> cluster_of;
  for (std::size_t c = 0; c < ls.clusters.size(); ++c) {
    if (ls.clusters[c].empty()) throw ValidationError("layer cluster " + std::to_string(c) + " is empty");
    for (const auto& id : ls.clusters[c]) {
      if (!unit_set.count(id)) throw ValidationError("layer cluster references unknown unit '" + id + "'");
      if (!cluster_of.emplace(id, c).second) throw ValidationError("unit '" + id + "' appears in two clusters");
    }
  }
  if (cluster_of.size() != unit_set.size()) throw ValidationError("layer clusters do not cover every prunable unit");
  if (plan.metadata.k != static_cast<std::int64_t>(ls.clusters.size())) {
    throw ValidationError("metadata k differs from the number of layer clusters");
  }

  std::vector<int> retained_per_cluster(ls.clusters.size(), 0);
  std::set<std::string> seen;
  for (const auto& id : ls.retained) {
    if (!unit_set.count(id)) throw ValidationError("retained unit '" + id + "' is not prunable");
    if (!seen.insert(id).second) throw ValidationError("unit '" + id + "' listed twice");
    ++retained_per_cluster[cluster_of.at(id)];
  }
  for (const auto& id : ls.removed) {
    if (!unit_set.count(id)) throw ValidationError("removed unit '" + id + "' is not prunable");
    if (!seen.insert(id).second) throw ValidationError("unit '" + id + "' is both retained and removed");
  }
  if (seen.size() != unit_set.size()) throw ValidationError("retained and removed do not partition the units");
  for (std::size_t c = 0; c < retained_per_cluster.size(); ++c) {
    if (retained_per_cluster[c] != 1) {
      throw ValidationError("layer cluster " + std::to_string(c) + " must retain exactly one unit");
    }
  }
  for (const auto& m : ls.reinitialized) {
    if (m.scheme != "kaiming") throw ValidationError("unsupported reinit scheme '" + m.scheme + "'");
  }

  const GraphIndex index(graph);
  std::set<std::string> removed_members;
  for (const auto& id : ls.removed) {
    for (std::size_t m : index.unit_members(id)) removed_members.insert(graph.nodes[m].id);
  }
  for (const auto& [id, kept] : plan.channel_stage) {
    if (removed_members.count(id)) {
      throw ValidationError("channel stage lists '" + id + "', which belongs to a removed unit");
    }
  }
  apply_plan(graph, plan);
}

nlohmann::json plan_to_json(const PruningPlan& plan) {
  nlohmann::json reinit = nlohmann::json::array();
  for (const auto& m : plan.layer_stage.reinitialized) {
    reinit.push_back({{"id", m.id},
                      {"scheme", m.scheme},
                      {"input_shape", {m.input_shape.c, m.input_shape.h, m.input_shape.w}}});
  }
  nlohmann::json spec = nlohmann::json::object();
  if (plan.metadata.channel_spec.keep_ratio) spec["keep_ratio"] = *plan.metadata.channel_spec.keep_ratio;
  if (!plan.metadata.channel_spec.per_node.empty()) spec["per_node"] = plan.metadata.channel_spec.per_node;
  return {
      {"version", 1},
      {"graph_sha256", plan.graph_sha256},
      {"layer_stage",
       {{"clusters", plan.layer_stage.clusters},
        {"retained", plan.layer_stage.retained},
        {"removed", plan.layer_stage.removed},
        {"reinitialized", std::move(reinit)}}},
      {"channel_stage", plan.channel_stage},
      {"metadata", {{"k", plan.metadata.k}, {"channel_spec", std::move(spec)}, {"seed", plan.metadata.seed}}},
  };
}

PruningPlan plan_from_json(const nlohmann::json& doc) {
  try {
    if (doc.at("version").get<int>() != 1) throw ValidationError("unsupported plan version");
    PruningPlan plan;
    plan.graph_sha256 = doc.at("graph_sha256").get<std::string>();
    const auto& ls = doc.at("layer_stage");
    plan.layer_stage.clusters = ls.at("clusters").get<std::vector<std::vector<std::string>>>();
    plan.layer_stage.retained = ls.at("retained").get<std::vector<std::string>>();
    plan.layer_stage.removed = ls.at("removed").get<std::vector<std::string>>();
    for (const auto& jm : ls.at("reinitialized")) {
      ReinitMarker m;
      m.id = jm.at("id").get<std::string>();
      m.scheme = jm.at("scheme").get<std::string>();
      const auto& s = jm.at("input_shape");
      m.input_shape = {s.at(0).get<std::int64_t>(), s.at(1).get<std::int64_t>(), s.at(2).get<std::int64_t>()};
      plan.layer_stage.reinitialized.push_back(std::move(m));
    }
    plan.channel_stage = doc.at("channel_stage").get<std::map<std::string, std::vector<std::int64_t>>>();
    const auto& meta = doc.at("metadata");
    plan.metadata.k = meta.at("k").get<std::int64_t>();
    plan.metadata.seed = meta.at("seed").get<std::uint64_t>();
    const auto& spec = meta.at("channel_spec");
    if (spec.contains("keep_ratio")) plan.metadata.channel_spec.keep_ratio = spec.at("keep_ratio").get<double>();
    if (spec.contains("per_node")) {
      plan.metadata.channel_spec.per_node = spec.at("per_node").get<std::map<std::string, std::int64_t>>();
    }
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("plan schema violation: ") + e.what());
  }
}

std::string serialize_plan(const PruningPlan& plan) { return plan_to_json(plan).dump(2) + "\n"; }

void write_plan(const PruningPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write plan file " + path.string());
  out << serialize_plan(plan);
  if (!out) throw IoError("failed writing plan file " + path.string());
}

PruningPlan read_plan(const std::filesystem::path& path, const ModelGraph& graph) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + path.string() + ": " + e.what());
  }
  PruningPlan plan = plan_from_json(doc);
  const std::string expected = graph_sha256(graph);
  if (plan.graph_sha256 != expected) {
    throw ValidationError("graph hash mismatch: plan was generated for graph " + plan.graph_sha256 +
                          ", given graph is " + expected);
  }
  validate_plan(graph, plan);
  return plan;
}

}  // namespace hscp
