#pragma once

#include <vector>

#include "hscp/graph.hpp"

namespace hscp::detail {

/// Kinds whose output width is a node parameter rather than a function of the input.
inline bool owns_width(NodeKind kind) {
  return kind == NodeKind::conv2d || kind == NodeKind::linear || kind == NodeKind::classifier ||
         kind == NodeKind::slice;
}

inline bool has_weights(NodeKind kind) {
  return kind == NodeKind::conv2d || kind == NodeKind::depthwise_conv2d ||
         kind == NodeKind::linear || kind == NodeKind::classifier;
}

/// Output shape implied by the node's parameters and its inputs. Checks only
/// constraints that do not involve the stored width of derived-width kinds.
Shape infer_shape(const Node& node, const std::vector<Shape>& inputs);

/// Shape propagation that rewrites derived widths (and depthwise groups) in
/// place instead of checking them, then resizes adaptive projections so that
/// every add sees equal widths. Returns per-node output shapes.
std::vector<Shape> rewrite_widths(ModelGraph& graph);

}  // namespace hscp::detail
