#include <doctest.h>

#include <fstream>

#include "hscp/error.hpp"
#include "hscp/graph.hpp"
#include "hscp/plan.hpp"
#include "support/support.hpp"

using namespace hscp;
using nlohmann::json;

namespace {

json node(const std::string& id, const std::string& kind, std::int64_t out, json extra = json::object()) {
  json n{{"id", id}, {"kind", kind}, {"out_channels", out}};
  for (auto& [k, v] : extra.items()) n[k] = v;
  return n;
}

/// stem conv -> two identical 3x3 conv blocks -> global pool -> classifier.
json stacked_blocks() {
  json conv3{{"kernel", {3, 3}}, {"padding", {1, 1}}};
  json nodes = json::array({
      node("stem", "conv2d", 4, conv3),
      node("a.conv", "conv2d", 4, {{"kernel", {3, 3}}, {"padding", {1, 1}}, {"unit", "a"}, {"channel_prunable", true}}),
      node("a", "relu", 4, {{"unit", "a"}, {"prunable", true}}),
      node("b.conv", "conv2d", 4, {{"kernel", {3, 3}}, {"padding", {1, 1}}, {"unit", "b"}, {"channel_prunable", true}}),
      node("b", "relu", 4, {{"unit", "b"}, {"prunable", true}}),
      node("gap", "global_pool", 4),
      node("fc", "classifier", 7, {{"has_bias", true}}),
  });
  json edges = json::array({{"stem", "a.conv"}, {"a.conv", "a"}, {"a", "b.conv"}, {"b.conv", "b"}, {"b", "gap"}, {"gap", "fc"}});
  return {{"version", 1}, {"input_shape", {3, 8, 8}}, {"class_count", 7}, {"nodes", nodes}, {"edges", edges},
          {"coupling_groups", json::array()}};
}

ModelGraph parse(const json& doc) {
  ModelGraph g = graph_from_json(doc);
  validate(g);
  return g;
}

}  // namespace

TEST_CASE("bundled ResNet18 graph loads with 8 prunable blocks") {
  const ModelGraph g = load_graph(test::graph_path("resnet18_7class.json"));
  CHECK(g.class_count == 7);
  CHECK(prunable_units(g).size() == 8);
  CHECK(g.input_shape == Shape{3, 102, 389});
}

TEST_CASE("bundled graphs match the reference parameter and MAC counts") {
  // Reference values from forward-hook counting on the torchvision definitions
  // with a 7-class head at input 3x102x389.
  struct Case {
    const char* file;
    std::int64_t params, flops;
  };
  for (const Case& c : {Case{"resnet18_7class.json", 11'180'103, 1'606'464'704},
                        Case{"mobilenet_v2_7class.json", 2'232'839, 270'402'384},
                        Case{"shufflenet_v2_x1_7class.json", 1'260'779, 132'305'280}}) {
    CAPTURE(c.file);
    const CostReport r = count_cost(load_graph(test::graph_path(c.file)));
    CHECK(r.params == c.params);
    CHECK(r.flops == c.flops);
  }
}

TEST_CASE("single 3x3 conv cost is closed form") {
  json doc{{"version", 1},
           {"input_shape", {3, 8, 8}},
           {"class_count", 16},
           {"nodes", json::array({node("conv", "conv2d", 16, {{"kernel", {3, 3}}, {"padding", {1, 1}}, {"has_bias", true}}),
                                  node("fc", "classifier", 16)})},
           {"edges", json::array({{"conv", "fc"}})}};
  const ModelGraph g = parse(doc);
  const CostReport r = count_cost(g);
  CHECK(r.per_node[0].params == 448);
  CHECK(r.per_node[0].flops == 27'648);
  std::int64_t p = 0, f = 0;
  for (const auto& n : r.per_node) {
    p += n.params;
    f += n.flops;
  }
  CHECK(p == r.params);
  CHECK(f == r.flops);
}

TEST_CASE("validation rejects malformed graphs") {
  SUBCASE("empty node list") {
    json doc = stacked_blocks();
    doc["nodes"] = json::array();
    doc["edges"] = json::array();
    CHECK_THROWS_WITH_AS(parse(doc), doctest::Contains("no source node"), ValidationError);
  }
  SUBCASE("add with unequal producer widths") {
    json doc = stacked_blocks();
    doc["nodes"][3]["out_channels"] = 6;  // b.conv
    doc["nodes"][4]["out_channels"] = 6;
    doc["nodes"][5]["out_channels"] = 6;
    doc["nodes"].push_back(node("sum", "add", 6));
    doc["edges"] = json::array({{"stem", "a.conv"}, {"a.conv", "a"}, {"a", "b.conv"}, {"b.conv", "b"}, {"b", "sum"},
                                {"a", "sum"}, {"sum", "gap"}, {"gap", "fc"}});
    CHECK_THROWS_AS(parse(doc), ValidationError);
  }
  SUBCASE("dangling edge") {
    json doc = stacked_blocks();
    doc["edges"].push_back({"b", "ghost"});
    CHECK_THROWS_WITH_AS(parse(doc), doctest::Contains("ghost"), ValidationError);
  }
  SUBCASE("prunable classifier") {
    json doc = stacked_blocks();
    doc["nodes"][6]["prunable"] = true;
    CHECK_THROWS_AS(parse(doc), ValidationError);
  }
  SUBCASE("coupling group with a single node") {
    json doc = stacked_blocks();
    doc["coupling_groups"] = json::array({json::array({"a.conv"})});
    CHECK_THROWS_AS(parse(doc), ValidationError);
  }
  SUBCASE("kernel larger than the input") {
    json doc = stacked_blocks();
    doc["nodes"][0]["kernel"] = {9, 9};
    doc["nodes"][0]["padding"] = {0, 0};
    CHECK_THROWS_WITH_AS(parse(doc), doctest::Contains("stem"), ValidationError);
  }
  SUBCASE("cycle") {
    json doc = stacked_blocks();
    doc["edges"].push_back({"b", "a.conv"});
    CHECK_THROWS_AS(parse(doc), ValidationError);
  }
}

TEST_CASE("load_graph distinguishes missing files from bad content") {
  test::TempDir dir("graph");
  CHECK_THROWS_AS(load_graph(dir / "absent.json"), IoError);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS_AS(load_graph(dir / "bad.json"), ValidationError);
}

TEST_CASE("graph JSON round trip and stable hash") {
  for (const char* f : {"resnet18_7class.json", "mobilenet_v2_7class.json", "shufflenet_v2_x1_7class.json"}) {
    const ModelGraph g = load_graph(test::graph_path(f));
    test::TempDir dir("roundtrip");
    save_graph(g, dir / "g.json");
    const ModelGraph back = load_graph(dir / "g.json");
    CHECK(back == g);
    CHECK(graph_sha256(back) == graph_sha256(g));
    CHECK(graph_sha256(g).size() == 64);
  }
  ModelGraph a = parse(stacked_blocks());
  ModelGraph b = a;
  b.nodes[1].out_channels = 3;
  CHECK(graph_sha256(a) != graph_sha256(b));
}

TEST_CASE("identity plan leaves the graph unchanged") {
  for (const char* f : {"toy_resnet.json", "toy_mobilenet.json", "toy_shufflenet.json"}) {
    const ModelGraph g = load_graph(test::fixture_path(f));
    const ModelGraph out = apply_plan(g, identity_plan(g));
    CHECK(out == g);
    CHECK(apply_plan(out, identity_plan(out)) == out);
  }
}

TEST_CASE("removing one of two identical stacked blocks halves that stage") {
  const ModelGraph g = parse(stacked_blocks());
  const UnitRemoval r = remove_units(g, {"b"});
  CHECK(r.reinit.empty());
  CHECK(r.graph.find("b") == nullptr);
  CHECK(r.graph.find("b.conv") == nullptr);
  const CostReport before = count_cost(g), after = count_cost(r.graph);
  const std::int64_t block = 4 * 4 * 9;
  CHECK(before.params - after.params == block);
  CHECK(after.per_node.size() == before.per_node.size() - 2);
}

TEST_CASE("keeping channels {0,2} narrows the downstream conv input") {
  const ModelGraph g = parse(stacked_blocks());
  const ModelGraph out = apply_channel_stage(g, {{"a.conv", {0, 2}}});
  CHECK(out.find("a.conv")->out_channels == 2);
  const CostReport r = count_cost(out);
  for (const auto& n : r.per_node) {
    if (n.id == "b.conv") CHECK(n.params == 4 * 2 * 9);
  }
  CHECK(count_cost(out).params < count_cost(g).params);
}

TEST_CASE("channel stage rejects bad kept sets") {
  const ModelGraph g = load_graph(test::fixture_path("toy_resnet.json"));
  CHECK_THROWS_AS(apply_channel_stage(g, {{"layer1.0.conv1", {}}}), ValidationError);
  CHECK_THROWS_AS(apply_channel_stage(g, {{"layer1.0.conv1", {2, 1}}}), ValidationError);
  CHECK_THROWS_AS(apply_channel_stage(g, {{"layer1.0.conv1", {0, 99}}}), ValidationError);
  CHECK_THROWS_AS(apply_channel_stage(g, {{"ghost", {0}}}), ValidationError);
  CHECK_THROWS_AS(apply_channel_stage(g, {{"conv1", {0}}}), ValidationError);
  CHECK_THROWS_WITH_AS(apply_channel_stage(g, {{"layer2.0.conv2", {0, 1}},
                                                {"layer2.0.downsample.0", {0, 1}},
                                                {"layer2.1.conv2", {0, 2}}}),
                       doctest::Contains("coupling violation"), ValidationError);
  CHECK_THROWS_WITH_AS(apply_channel_stage(g, {{"layer2.0.conv2", {0, 1}}}), doctest::Contains("coupling violation"),
                       ValidationError);
  const ModelGraph ok = apply_channel_stage(
      g, {{"layer2.0.conv2", {0, 1}}, {"layer2.0.downsample.0", {0, 1}}, {"layer2.1.conv2", {0, 1}}});
  CHECK(ok.find("layer2.0.conv2")->out_channels == 2);
  CHECK(ok.find("layer2.1.conv2")->out_channels == 2);
}

TEST_CASE("removing a stride-2 ResNet block marks its successor for re-initialization") {
  const ModelGraph g = load_graph(test::fixture_path("toy_resnet.json"));
  const UnitRemoval r = remove_units(g, {"layer2.0"});
  validate(r.graph);
  REQUIRE(r.reinit.size() == 1);
  CHECK(r.reinit[0].id == "layer2.1");
  // layer2.1 now receives the layer1 output directly.
  const auto shapes = propagate_shapes(g, g.input_shape);
  const GraphIndex index(g);
  CHECK(r.reinit[0].input_shape == shapes[index.index_of("layer1.1")]);
  // The downstream interface is unchanged.
  const auto after = propagate_shapes(r.graph, r.graph.input_shape);
  const GraphIndex idx2(r.graph);
  CHECK(after[idx2.index_of("layer2.1")] == shapes[index.index_of("layer2.1")]);
  CHECK(count_cost(r.graph).params < count_cost(g).params);
}

TEST_CASE("any subset of removed units yields a valid graph with no cost increase") {
  for (const char* f : {"toy_resnet.json", "toy_mobilenet.json", "toy_shufflenet.json"}) {
    CAPTURE(f);
    const ModelGraph g = load_graph(test::fixture_path(f));
    const auto units = prunable_units(g);
    const CostReport base = count_cost(g);
    for (std::uint64_t mask = 0; mask < (1ULL << units.size()); ++mask) {
      std::vector<std::string> removed;
      for (std::size_t i = 0; i < units.size(); ++i) {
        if (mask >> i & 1ULL) removed.push_back(units[i]);
      }
      if (removed.size() == units.size()) continue;
      CAPTURE(mask);
      const UnitRemoval r = remove_units(g, removed);
      CHECK_NOTHROW(validate(r.graph));
      const CostReport c = count_cost(r.graph);
      CHECK(c.params <= base.params);
      CHECK(c.flops <= base.flops);
      CHECK(r.graph.nodes.back().out_channels == g.class_count);
      for (const auto& group : r.graph.coupling_groups) {
        CHECK(group.size() >= 2);
        for (const auto& id : group) CHECK(r.graph.find(id)->out_channels == r.graph.find(group.front())->out_channels);
      }
    }
  }
}
