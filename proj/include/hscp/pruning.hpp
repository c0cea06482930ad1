#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hscp/activations.hpp"
#include "hscp/graph.hpp"
#include "hscp/plan.hpp"
#include "hscp/spectral.hpp"

namespace hscp {

/// Retains the earliest unit of each cluster (unit_ids must be in topological
/// order) and marks retained layers whose input changed for re-initialization.
LayerStage plan_layers(const ModelGraph& graph, const Clustering& clustering, const std::vector<std::string>& unit_ids);

/// Clustering of the output channels shared by `nodes` (one node, or a coupling group).
struct ChannelDecision {
  std::vector<std::string> nodes;
  std::int64_t channel_count = 0;
  std::vector<std::int64_t> channels;     // original index of each clustered row
  std::vector<std::int64_t> assignments;  // cluster id per row; empty means keep channel 0 only
};

/// Kept channels per node: the smallest original index of every cluster.
/// Decisions must cover each channel-prunable node of `pruned` exactly once,
/// with coupling groups decided jointly.
std::map<std::string, std::vector<std::int64_t>> plan_channels(const ModelGraph& pruned,
                                                               const std::vector<ChannelDecision>& decisions);

struct PlanOptions {
  Parallelism par{};
  KMeansOptions kmeans{};
  // Activations recorded from the layer-pruned model; the original dump is used when null.
  const ActivationSet* stage2 = nullptr;
};

struct PlanDiagnostics {
  SimilarityMatrix layer_similarity;
  Clustering layer_clustering;
  std::map<std::string, std::vector<std::int64_t>> degenerate_channels;
  EigengapReport layer_eigengap;
};

/// Layer stage, then channel stage on the layer-pruned graph. The returned
/// plan has passed validate_plan.
PruningPlan hierarchical_plan(const ModelGraph& graph, const ActivationSet& activations, std::int64_t k,
                              const ChannelSpec& channel_spec, std::uint64_t seed, const PlanOptions& options = {},
                              PlanDiagnostics* diagnostics = nullptr);

}  // namespace hscp
