#include "hscp/pruning.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "hscp/error.hpp"
#include "hscp/log.hpp"
#include "hscp/rng.hpp"

namespace hscp {
namespace {

/// Channel-prunable nodes of `graph` grouped by coupling, ordered by the
/// topological rank of each group's earliest member.
std::vector<std::vector<std::string>> channel_jobs(const ModelGraph& graph) {
  const GraphIndex index(graph);
  std::set<std::string> grouped;
  std::vector<std::vector<std::string>> jobs;
  for (const auto& group : graph.coupling_groups) {
    jobs.push_back(group);
    grouped.insert(group.begin(), group.end());
  }
  for (const auto& id : channel_prunable_nodes(graph)) {
    if (!grouped.count(id)) jobs.push_back({id});
  }
  auto rank = [&](const std::string& id) { return index.topological_rank(index.index_of(id)); };
  for (auto& job : jobs) std::sort(job.begin(), job.end(), [&](auto& a, auto& b) { return rank(a) < rank(b); });
  std::sort(jobs.begin(), jobs.end(), [&](auto& a, auto& b) { return rank(a.front()) < rank(b.front()); });
  return jobs;
}

void require_coverage(const ActivationSet& set, const ModelGraph& graph, const std::vector<std::string>& ids,
                      const std::string& what) {
  std::string missing;
  for (const auto& id : ids) {
    if (!set.contains(id)) missing += (missing.empty() ? "" : ", ") + id;
  }
  if (!missing.empty()) throw ValidationError("activation coverage gap (" + what + "): " + missing);
  for (const auto& id : ids) {
    const Node* node = graph.find(id);
    if (node && set.at(id).channels() != node->out_channels) {
      throw ValidationError("activations of '" + id + "' have " + std::to_string(set.at(id).channels()) +
                            " channels, graph declares " + std::to_string(node->out_channels));
    }
  }
}

ChannelDecision decide_channels(const ActivationSet& set, const std::vector<std::string>& nodes,
                                std::int64_t channel_count, const ChannelSpec& spec, std::uint64_t seed,
                                const PlanOptions& options, std::vector<std::int64_t>& degenerate) {
  ChannelDecision d{nodes, channel_count, {}, {}};
  std::int64_t requested = channel_count;
  for (const auto& id : nodes) {
    if (spec.per_node.count(id) || spec.keep_ratio) {
      requested = spec.clusters_for(id, channel_count);
      break;
    }
  }
  if (requested == channel_count) {
    d.channels.resize(static_cast<std::size_t>(channel_count));
    std::iota(d.channels.begin(), d.channels.end(), 0);
    d.assignments = d.channels;
    return d;
  }
  SimilarityMatrix s;
  try {
    s = group_channel_similarity(set, nodes, &degenerate, options.par);
  } catch (const DegenerateError& e) {
    log::warn(std::string(e.what()));
    return d;
  }
  d.channels = s.channels;
  const auto live = static_cast<std::int64_t>(s.size());
  const std::int64_t k = std::min(requested, live);
  if (k == live) {
    d.assignments.resize(static_cast<std::size_t>(live));
    std::iota(d.assignments.begin(), d.assignments.end(), 0);
    return d;
  }
  d.assignments = spectral_cluster(s, static_cast<std::size_t>(k), seed, options.kmeans).assignments;
  return d;
}

}  // namespace

LayerStage plan_layers(const ModelGraph& graph, const Clustering& clustering, const std::vector<std::string>& unit_ids) {
  if (clustering.assignments.size() != unit_ids.size()) {
    throw ValidationError("clustering has " + std::to_string(clustering.assignments.size()) + " assignments for " +
                          std::to_string(unit_ids.size()) + " units");
  }
  const auto units = prunable_units(graph);
  const std::set<std::string> unit_set(units.begin(), units.end());
  for (const auto& id : unit_ids) {
    if (!unit_set.count(id)) throw ValidationError("'" + id + "' is not a prunable unit");
  }
  // Clusters ordered by their earliest member; members keep unit_ids order.
  std::map<std::int64_t, std::size_t> slot;
  LayerStage stage;
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    auto [it, fresh] = slot.emplace(clustering.assignments[i], stage.clusters.size());
    if (fresh) {
      stage.clusters.emplace_back();
      stage.retained.push_back(unit_ids[i]);
    } else {
      stage.removed.push_back(unit_ids[i]);
    }
    stage.clusters[it->second].push_back(unit_ids[i]);
  }
  for (const auto& t : remove_units(graph, stage.removed).reinit) {
    stage.reinitialized.push_back({t.id, "kaiming", t.input_shape});
  }
  return stage;
}

std::map<std::string, std::vector<std::int64_t>> plan_channels(const ModelGraph& pruned,
                                                               const std::vector<ChannelDecision>& decisions) {
  std::map<std::string, std::vector<std::int64_t>> kept;
  for (const auto& d : decisions) {
    if (d.nodes.empty()) throw ValidationError("channel decision names no node");
    if (d.channels.size() != d.assignments.size()) {
      throw ValidationError("channel decision for '" + d.nodes.front() + "' has mismatched rows and assignments");
    }
    std::map<std::int64_t, std::int64_t> leader;
    for (std::size_t r = 0; r < d.channels.size(); ++r) {
      if (d.channels[r] < 0 || d.channels[r] >= d.channel_count) {
        throw ValidationError("channel index " + std::to_string(d.channels[r]) + " out of range for '" +
                              d.nodes.front() + "'");
      }
      auto [it, fresh] = leader.emplace(d.assignments[r], d.channels[r]);
      if (!fresh) it->second = std::min(it->second, d.channels[r]);
    }
    std::vector<std::int64_t> indices;
    for (const auto& [cluster, index] : leader) indices.push_back(index);
    std::sort(indices.begin(), indices.end());
    if (indices.empty()) indices.push_back(0);
    for (const auto& id : d.nodes) {
      const Node* node = pruned.find(id);
      if (node == nullptr) throw ValidationError("channel decision names unknown node '" + id + "'");
      if (node->out_channels != d.channel_count) {
        throw ValidationError("channel decision for '" + id + "' assumes " + std::to_string(d.channel_count) +
                              " channels, node has " + std::to_string(node->out_channels));
      }
      if (!kept.emplace(id, indices).second) throw ValidationError("node '" + id + "' decided twice");
    }
  }
  for (const auto& id : channel_prunable_nodes(pruned)) {
    if (!kept.count(id)) throw ValidationError("no channel decision for '" + id + "'");
  }
  return kept;
}

PruningPlan hierarchical_plan(const ModelGraph& graph, const ActivationSet& activations, std::int64_t k,
                              const ChannelSpec& channel_spec, std::uint64_t seed, const PlanOptions& options,
                              PlanDiagnostics* diagnostics) {
  const auto units = prunable_units(graph);
  const auto l = static_cast<std::int64_t>(units.size());
  if (l == 0) throw ValidationError("graph has no prunable units");
  if (k < 1 || k > l) throw ValidationError("k = " + std::to_string(k) + " outside [1, " + std::to_string(l) + "]");
  require_coverage(activations, graph, units, "prunable units");
  const auto prunable = channel_prunable_nodes(graph);
  for (const auto& [id, kc] : channel_spec.per_node) {
    if (std::find(prunable.begin(), prunable.end(), id) == prunable.end()) {
      throw ValidationError("channel spec names '" + id + "', which is not a channel-prunable node");
    }
  }

  PruningPlan plan;
  plan.graph_sha256 = graph_sha256(graph);
  plan.metadata = {k, channel_spec, seed};

  SimilarityMatrix s = layer_similarity(activations, units, options.par);
  Clustering layers = spectral_cluster(s, static_cast<std::size_t>(k), seed, options.kmeans);
  plan.layer_stage = plan_layers(graph, layers, units);
  const ModelGraph pruned = remove_units(graph, plan.layer_stage.removed).graph;

  const ActivationSet& stage2 = options.stage2 ? *options.stage2 : activations;
  const auto jobs = channel_jobs(pruned);
  std::vector<std::string> needed;
  for (const auto& job : jobs) needed.insert(needed.end(), job.begin(), job.end());
  require_coverage(stage2, pruned, needed, "channel-prunable nodes");

  std::vector<ChannelDecision> decisions;
  std::map<std::string, std::vector<std::int64_t>> degenerate;
  for (const auto& job : jobs) {
    std::vector<std::int64_t> bad;
    const std::int64_t c = pruned.find(job.front())->out_channels;
    decisions.push_back(
        decide_channels(stage2, job, c, channel_spec, derive_seed(seed, job.front()), options, bad));
    if (!bad.empty()) {
      log::info("'" + job.front() + "': " + std::to_string(bad.size()) + " degenerate channel(s) dropped");
      for (const auto& id : job) degenerate[id] = bad;
    }
  }
  plan.channel_stage = plan_channels(pruned, decisions);

  validate_plan(graph, plan);
  if (diagnostics) {
    diagnostics->layer_eigengap = eigengap(laplacian(s));
    diagnostics->layer_similarity = std::move(s);
    diagnostics->layer_clustering = std::move(layers);
    diagnostics->degenerate_channels = std::move(degenerate);
  }
  return plan;
}

}  // namespace hscp
