#include <stdexcept>

#include "graph_internal.hpp"
#include "hscp/graph.hpp"

namespace hscp {

CostReport count_cost(const ModelGraph& graph, const Shape& input) {
  const GraphIndex index(graph);
  const std::vector<Shape> shapes = propagate_shapes(graph, input);

  CostReport report;
  report.per_node.reserve(graph.nodes.size());
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const Node& node = graph.nodes[i];
    const Shape in = index.producers(i).empty() ? input : shapes[index.producers(i).front()];
    const Shape& out = shapes[i];
    NodeCost cost{node.id, 0, 0};
    switch (node.kind) {
      case NodeKind::conv2d:
      case NodeKind::depthwise_conv2d: {
        const std::int64_t groups = node.kind == NodeKind::depthwise_conv2d ? in.c : node.groups;
        const std::int64_t per_output = (in.c / groups) * node.kernel.h * node.kernel.w;
        cost.params = out.c * per_output + (node.has_bias ? out.c : 0);
        cost.flops = out.c * out.h * out.w * per_output;
        break;
      }
      case NodeKind::linear:
      case NodeKind::classifier: {
        const std::int64_t in_features = in.elements();
        cost.params = in_features * out.c + (node.has_bias ? out.c : 0);
        cost.flops = in_features * out.c;
        break;
      }
      case NodeKind::batch_norm:
        cost.params = 2 * out.c;
        break;
      default:
        break;
    }
    report.params += cost.params;
    report.flops += cost.flops;
    report.per_node.push_back(std::move(cost));
  }
  return report;
}

}  // namespace hscp
