#include "hscp/graph.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include "graph_internal.hpp"
#include "hscp/error.hpp"

namespace hscp {
namespace {

constexpr std::array<std::pair<NodeKind, std::string_view>, 12> kKindNames{{
    {NodeKind::conv2d, "conv2d"},
    {NodeKind::depthwise_conv2d, "depthwise_conv2d"},
    {NodeKind::linear, "linear"},
    {NodeKind::batch_norm, "batch_norm"},
    {NodeKind::relu, "relu"},
    {NodeKind::add, "add"},
    {NodeKind::concat, "concat"},
    {NodeKind::pool, "pool"},
    {NodeKind::global_pool, "global_pool"},
    {NodeKind::channel_shuffle, "channel_shuffle"},
    {NodeKind::classifier, "classifier"},
    {NodeKind::slice, "slice"},
}};

Extent2 extent_from_json(const nlohmann::json& node, const char* key, Extent2 fallback) {
  if (!node.contains(key)) return fallback;
  const auto& v = node.at(key);
  if (v.is_number_integer()) return {v.get<std::int64_t>(), v.get<std::int64_t>()};
  if (!v.is_array() || v.size() != 2) {
    throw ValidationError(std::string("field '") + key + "' must be [h, w]");
  }
  return {v.at(0).get<std::int64_t>(), v.at(1).get<std::int64_t>()};
}

std::int64_t spatial_out(std::int64_t in, std::int64_t k, std::int64_t s, std::int64_t p) {
  const std::int64_t span = in + 2 * p - k;
  if (span < 0) return 0;
  return span / s + 1;
}

void check_stored_width(const Node& node, const Shape& derived) {
  if (!detail::owns_width(node.kind) && node.out_channels != derived.c) {
    throw ValidationError("node '" + node.id + "' declares out_channels " +
                          std::to_string(node.out_channels) + " but its inputs give " +
                          std::to_string(derived.c));
  }
  if (node.kind == NodeKind::depthwise_conv2d && node.groups != derived.c) {
    throw ValidationError("depthwise node '" + node.id + "' must have groups == in_channels == out_channels");
  }
}

std::vector<Shape> gather_inputs(const GraphIndex& index, const ModelGraph& graph,
                                 const std::vector<Shape>& shapes, std::size_t node,
                                 const Shape& input) {
  const auto& producers = index.producers(node);
  if (producers.empty()) return {input};
  std::vector<Shape> inputs;
  inputs.reserve(producers.size());
  for (std::size_t p : producers) inputs.push_back(shapes[p]);
  (void)graph;
  return inputs;
}

}  // namespace

std::string_view to_string(NodeKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

NodeKind node_kind_from_string(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  throw ValidationError("unknown node kind '" + std::string(name) + "'");
}

std::string to_string(const Shape& shape) {
  return "(" + std::to_string(shape.c) + "," + std::to_string(shape.h) + "," + std::to_string(shape.w) + ")";
}

const Node* ModelGraph::find(std::string_view id) const {
  auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
  return it == nodes.end() ? nullptr : &*it;
}

Node* ModelGraph::find(std::string_view id) {
  auto it = std::find_if(nodes.begin(), nodes.end(), [&](const Node& n) { return n.id == id; });
  return it == nodes.end() ? nullptr : &*it;
}

GraphIndex::GraphIndex(const ModelGraph& graph) : graph_(&graph) {
  const std::size_t n = graph.nodes.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (!ids_.emplace(graph.nodes[i].id, i).second) {
      throw ValidationError("duplicate node id '" + graph.nodes[i].id + "'");
    }
  }
  producers_.resize(n);
  consumers_.resize(n);
  for (const Edge& e : graph.edges) {
    auto from = ids_.find(e.from);
    auto to = ids_.find(e.to);
    if (from == ids_.end() || to == ids_.end()) {
      throw ValidationError("edge [" + e.from + ", " + e.to + "] references unknown node '" +
                            (from == ids_.end() ? e.from : e.to) + "'");
    }
    if (from->second == to->second) throw ValidationError("self-loop on node '" + e.from + "'");
    producers_[to->second].push_back(from->second);
    consumers_[from->second].push_back(to->second);
  }

  // Kahn with a min-heap on declaration index for a stable order.
  std::vector<std::size_t> indegree(n);
  for (std::size_t i = 0; i < n; ++i) indegree[i] = producers_[i].size();
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < n; ++i) {
    if (indegree[i] == 0) ready.push(i);
  }
  rank_.assign(n, 0);
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    rank_[i] = order_.size();
    order_.push_back(i);
    for (std::size_t c : consumers_[i]) {
      if (--indegree[c] == 0) ready.push(c);
    }
  }
  if (order_.size() != n) throw ValidationError("graph contains a cycle");
}

std::size_t GraphIndex::index_of(std::string_view id) const {
  auto it = ids_.find(id);
  if (it == ids_.end()) throw ValidationError("unknown node id '" + std::string(id) + "'");
  return it->second;
}

bool GraphIndex::contains(std::string_view id) const { return ids_.find(id) != ids_.end(); }

std::vector<std::size_t> GraphIndex::unit_members(std::string_view unit_id) const {
  std::vector<std::size_t> members;
  for (std::size_t i = 0; i < graph_->nodes.size(); ++i) {
    const Node& n = graph_->nodes[i];
    if (n.unit == unit_id || n.id == unit_id) members.push_back(i);
  }
  return members;
}

namespace detail {

Shape infer_shape(const Node& node, const std::vector<Shape>& inputs) {
  auto fail = [&](const std::string& what) -> ValidationError {
    return ValidationError("node '" + node.id + "': " + what);
  };
  auto single = [&]() -> const Shape& {
    if (inputs.size() != 1) throw fail("expects exactly one input, got " + std::to_string(inputs.size()));
    return inputs.front();
  };

  switch (node.kind) {
    case NodeKind::conv2d:
    case NodeKind::depthwise_conv2d:
    case NodeKind::pool: {
      const Shape& in = single();
      const std::int64_t oh = spatial_out(in.h, node.kernel.h, node.stride.h, node.padding.h);
      const std::int64_t ow = spatial_out(in.w, node.kernel.w, node.stride.w, node.padding.w);
      if (oh < 1 || ow < 1) {
        throw fail("shape propagation failure: kernel " + std::to_string(node.kernel.h) + "x" +
                   std::to_string(node.kernel.w) + " does not fit input " + to_string(in));
      }
      if (node.kind == NodeKind::pool) return {in.c, oh, ow};
      if (node.kind == NodeKind::depthwise_conv2d) return {in.c, oh, ow};
      if (in.c % node.groups != 0 || node.out_channels % node.groups != 0) {
        throw fail("groups " + std::to_string(node.groups) + " must divide in_channels " +
                   std::to_string(in.c) + " and out_channels " + std::to_string(node.out_channels));
      }
      return {node.out_channels, oh, ow};
    }
    case NodeKind::linear:
    case NodeKind::classifier:
      single();
      return {node.out_channels, 1, 1};
    case NodeKind::batch_norm:
    case NodeKind::relu:
      return single();
    case NodeKind::channel_shuffle: {
      const Shape& in = single();
      if (in.c % node.groups != 0) {
        throw fail("shuffle groups " + std::to_string(node.groups) + " do not divide " + std::to_string(in.c));
      }
      return in;
    }
    case NodeKind::global_pool: {
      const Shape& in = single();
      return {in.c, 1, 1};
    }
    case NodeKind::slice: {
      const Shape& in = single();
      if (node.offset < 0 || node.offset + node.out_channels > in.c) {
        throw fail("slice [" + std::to_string(node.offset) + ", " +
                   std::to_string(node.offset + node.out_channels) + ") exceeds input width " +
                   std::to_string(in.c));
      }
      return {node.out_channels, in.h, in.w};
    }
    case NodeKind::add: {
      if (inputs.size() < 2) throw fail("add needs at least two inputs");
      for (const Shape& s : inputs) {
        if (!(s == inputs.front())) {
          throw fail("add inputs disagree: " + to_string(inputs.front()) + " vs " + to_string(s));
        }
      }
      return inputs.front();
    }
    case NodeKind::concat: {
      if (inputs.empty()) throw fail("concat needs inputs");
      Shape out{0, inputs.front().h, inputs.front().w};
      for (const Shape& s : inputs) {
        if (s.h != out.h || s.w != out.w) {
          throw fail("concat inputs disagree spatially: " + to_string(inputs.front()) + " vs " + to_string(s));
        }
        out.c += s.c;
      }
      return out;
    }
  }
  throw fail("unhandled kind");
}

std::vector<Shape> rewrite_widths(ModelGraph& graph) {
  // Each pass either completes or resizes one adaptive projection, so the
  // number of passes is bounded by the number of nodes.
  for (std::size_t pass = 0; pass <= graph.nodes.size(); ++pass) {
    GraphIndex index(graph);
    std::vector<Shape> shapes(graph.nodes.size());
    bool restarted = false;
    for (std::size_t i : index.topological_order()) {
      Node& node = graph.nodes[i];
      auto inputs = gather_inputs(index, graph, shapes, i, graph.input_shape);
      if (node.kind == NodeKind::add) {
        // Resize an adaptive producer chain to the width of the fixed paths.
        std::optional<std::int64_t> fixed;
        std::vector<std::size_t> adaptive_roots;
        for (std::size_t p : index.producers(i)) {
          std::size_t cur = p;
          while (!graph.nodes[cur].adaptive &&
                 (graph.nodes[cur].kind == NodeKind::batch_norm || graph.nodes[cur].kind == NodeKind::relu) &&
                 index.producers(cur).size() == 1) {
            cur = index.producers(cur).front();
          }
          if (graph.nodes[cur].adaptive) {
            adaptive_roots.push_back(cur);
          } else if (!fixed) {
            fixed = shapes[p].c;
          }
        }
        if (fixed) {
          for (std::size_t root : adaptive_roots) {
            if (graph.nodes[root].out_channels != *fixed) {
              graph.nodes[root].out_channels = *fixed;
              restarted = true;
            }
          }
          if (restarted) break;
        }
      }
      Shape out = infer_shape(node, inputs);
      if (!owns_width(node.kind)) node.out_channels = out.c;
      if (node.kind == NodeKind::depthwise_conv2d) node.groups = out.c;
      shapes[i] = out;
    }
    if (!restarted) return shapes;
  }
  throw ValidationError("width propagation did not settle");
}

}  // namespace detail

std::vector<Shape> propagate_shapes(const ModelGraph& graph, const Shape& input) {
  GraphIndex index(graph);
  std::vector<Shape> shapes(graph.nodes.size());
  for (std::size_t i : index.topological_order()) {
    const Node& node = graph.nodes[i];
    auto inputs = gather_inputs(index, graph, shapes, i, input);
    Shape out = detail::infer_shape(node, inputs);
    check_stored_width(node, out);
    shapes[i] = out;
  }
  return shapes;
}

ModelGraph graph_from_json(const nlohmann::json& doc) {
  try {
    ModelGraph g;
    g.version = doc.at("version").get<int>();
    const auto& shape = doc.at("input_shape");
    if (!shape.is_array() || shape.size() != 3) throw ValidationError("input_shape must be [c, h, w]");
    g.input_shape = {shape.at(0).get<std::int64_t>(), shape.at(1).get<std::int64_t>(),
                     shape.at(2).get<std::int64_t>()};
    g.class_count = doc.at("class_count").get<std::int64_t>();
    for (const auto& jn : doc.at("nodes")) {
      Node n;
      n.id = jn.at("id").get<std::string>();
      n.kind = node_kind_from_string(jn.at("kind").get<std::string>());
      n.out_channels = jn.at("out_channels").get<std::int64_t>();
      n.kernel = extent_from_json(jn, "kernel", {1, 1});
      n.stride = extent_from_json(jn, "stride", {1, 1});
      n.padding = extent_from_json(jn, "padding", {0, 0});
      n.groups = jn.value("groups", std::int64_t{1});
      n.offset = jn.value("offset", std::int64_t{0});
      n.has_bias = jn.value("has_bias", false);
      n.prunable = jn.value("prunable", false);
      n.channel_prunable = jn.value("channel_prunable", false);
      n.unit = jn.value("unit", std::string{});
      n.reinit = jn.value("reinit", std::string{});
      n.adaptive = jn.value("adaptive", false);
      g.nodes.push_back(std::move(n));
    }
    for (const auto& je : doc.at("edges")) {
      if (!je.is_array() || je.size() != 2) throw ValidationError("edges must be [from, to] pairs");
      g.edges.push_back({je.at(0).get<std::string>(), je.at(1).get<std::string>()});
    }
    if (doc.contains("coupling_groups")) {
      for (const auto& jg : doc.at("coupling_groups")) g.coupling_groups.push_back(jg.get<std::vector<std::string>>());
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("graph schema violation: ") + e.what());
  }
}

nlohmann::json graph_to_json(const ModelGraph& graph) {
  nlohmann::json doc;
  doc["version"] = graph.version;
  doc["input_shape"] = {graph.input_shape.c, graph.input_shape.h, graph.input_shape.w};
  doc["class_count"] = graph.class_count;
  auto nodes = nlohmann::json::array();
  for (const Node& n : graph.nodes) {
    nlohmann::json jn{
        {"id", n.id},
        {"kind", std::string(to_string(n.kind))},
        {"out_channels", n.out_channels},
        {"kernel", {n.kernel.h, n.kernel.w}},
        {"stride", {n.stride.h, n.stride.w}},
        {"padding", {n.padding.h, n.padding.w}},
        {"groups", n.groups},
        {"has_bias", n.has_bias},
        {"prunable", n.prunable},
        {"channel_prunable", n.channel_prunable},
    };
    if (n.kind == NodeKind::slice) jn["offset"] = n.offset;
    if (!n.unit.empty()) jn["unit"] = n.unit;
    if (!n.reinit.empty()) jn["reinit"] = n.reinit;
    if (n.adaptive) jn["adaptive"] = true;
    nodes.push_back(std::move(jn));
  }
  doc["nodes"] = std::move(nodes);
  auto edges = nlohmann::json::array();
  for (const Edge& e : graph.edges) edges.push_back({e.from, e.to});
  doc["edges"] = std::move(edges);
  doc["coupling_groups"] = graph.coupling_groups;
  return doc;
}

ModelGraph load_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open graph file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("parse error in " + path.string() + ": " + e.what());
  }
  ModelGraph g = graph_from_json(doc);
  validate(g);
  return g;
}

void save_graph(const ModelGraph& graph, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write graph file " + path.string());
  out << graph_to_json(graph).dump(1) << '\n';
}

void validate(const ModelGraph& g) {
  if (g.nodes.empty()) throw ValidationError("no source node");
  if (g.version != 1) throw ValidationError("unsupported graph version " + std::to_string(g.version));
  if (g.class_count <= 0) throw ValidationError("class_count must be positive");
  if (g.input_shape.c <= 0 || g.input_shape.h <= 0 || g.input_shape.w <= 0) {
    throw ValidationError("input_shape must be positive");
  }
  GraphIndex index(g);

  std::vector<std::size_t> sources, sinks;
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (index.producers(i).empty()) sources.push_back(i);
    if (index.consumers(i).empty()) sinks.push_back(i);
  }
  if (sources.empty()) throw ValidationError("no source node");
  if (sources.size() > 1) {
    throw ValidationError("multiple source nodes: '" + g.nodes[sources[0]].id + "' and '" +
                          g.nodes[sources[1]].id + "'");
  }
  if (sinks.size() != 1) throw ValidationError("graph must have exactly one sink, found " + std::to_string(sinks.size()));
  const Node& sink = g.nodes[sinks.front()];
  if (sink.kind != NodeKind::classifier) throw ValidationError("sink node '" + sink.id + "' is not a classifier");
  if (sink.out_channels != g.class_count) {
    throw ValidationError("classifier '" + sink.id + "' width differs from class_count");
  }

  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& n = g.nodes[i];
    auto fail = [&](const std::string& what) { return ValidationError("node '" + n.id + "': " + what); };
    if (n.id.empty()) throw ValidationError("node with empty id");
    if (n.out_channels <= 0) throw fail("out_channels must be positive");
    if (n.kernel.h <= 0 || n.kernel.w <= 0 || n.stride.h <= 0 || n.stride.w <= 0) {
      throw fail("kernel and stride must be positive");
    }
    if (n.padding.h < 0 || n.padding.w < 0) throw fail("padding must be nonnegative");
    if (n.groups <= 0) throw fail("groups must be positive");
    if (n.kind == NodeKind::classifier) {
      if (i != sinks.front()) throw fail("classifier must be the sink");
      if (n.prunable || n.channel_prunable) throw fail("classifier is never prunable");
    }
    if (n.channel_prunable && !(n.kind == NodeKind::linear || (n.kind == NodeKind::conv2d && n.groups == 1))) {
      throw fail("only ungrouped conv2d and linear nodes can be channel_prunable");
    }
    if (!n.unit.empty()) {
      const Node* owner = g.find(n.unit);
      if (owner == nullptr || !owner->prunable) throw fail("unit '" + n.unit + "' is not a prunable node");
      if (!owner->unit.empty() && owner->unit != owner->id) {
        throw fail("unit '" + n.unit + "' belongs to another unit");
      }
    }
  }

  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const Node& out = g.nodes[i];
    if (!out.prunable) continue;
    if (!out.unit.empty() && out.unit != out.id) {
      throw ValidationError("prunable node '" + out.id + "' must be the output of its own unit");
    }
    const auto members = index.unit_members(out.id);
    const std::set<std::size_t> member_set(members.begin(), members.end());
    std::set<std::size_t> entries;
    for (std::size_t m : members) {
      if (index.producers(m).empty()) throw ValidationError("unit '" + out.id + "' contains the source node");
      for (std::size_t p : index.producers(m)) {
        if (!member_set.count(p)) entries.insert(p);
      }
      if (m != i) {
        for (std::size_t c : index.consumers(m)) {
          if (!member_set.count(c)) {
            throw ValidationError("unit '" + out.id + "' leaks node '" + g.nodes[m].id + "' to '" +
                                  g.nodes[c].id + "'; only the unit output may feed outside nodes");
          }
        }
      }
    }
    if (entries.size() != 1) {
      throw ValidationError("unit '" + out.id + "' must have exactly one entry producer, found " +
                            std::to_string(entries.size()));
    }
    if (index.consumers(i).empty()) throw ValidationError("unit '" + out.id + "' output has no consumers");
  }

  for (const auto& group : g.coupling_groups) {
    if (group.size() < 2) throw ValidationError("coupling group needs at least two nodes");
    std::set<std::string> seen;
    const Node* first = nullptr;
    for (const auto& id : group) {
      const Node* n = g.find(id);
      if (n == nullptr) throw ValidationError("coupling group references unknown node '" + id + "'");
      if (!seen.insert(id).second) throw ValidationError("coupling group repeats node '" + id + "'");
      if (!detail::owns_width(n->kind) || n->kind == NodeKind::slice) {
        throw ValidationError("coupling group member '" + id + "' must be a conv2d or linear node");
      }
      if (first != nullptr && first->out_channels != n->out_channels) {
        throw ValidationError("coupling group members '" + first->id + "' and '" + id +
                              "' have unequal out_channels");
      }
      first = first ? first : n;
    }
  }

  propagate_shapes(g, g.input_shape);
}

std::string graph_sha256(const ModelGraph& graph) {
  const std::string canonical = graph_to_json(graph).dump();
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int length = 0;
  if (EVP_Digest(canonical.data(), canonical.size(), digest.data(), &length, EVP_sha256(), nullptr) != 1) {
    throw NumericalError("SHA-256 computation failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(length * 2);
  for (unsigned int i = 0; i < length; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0xF]);
  }
  return hex;
}

std::vector<std::string> prunable_units(const ModelGraph& graph) {
  GraphIndex index(graph);
  std::vector<std::string> ids;
  for (std::size_t i : index.topological_order()) {
    if (graph.nodes[i].prunable) ids.push_back(graph.nodes[i].id);
  }
  return ids;
}

std::vector<std::string> channel_prunable_nodes(const ModelGraph& graph) {
  GraphIndex index(graph);
  std::vector<std::string> ids;
  for (std::size_t i : index.topological_order()) {
    if (graph.nodes[i].channel_prunable) ids.push_back(graph.nodes[i].id);
  }
  return ids;
}

}  // namespace hscp
