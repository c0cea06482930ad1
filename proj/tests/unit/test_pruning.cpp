#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "hscp/error.hpp"
#include "hscp/pruning.hpp"
#include "support/support.hpp"

using namespace hscp;

namespace {

Clustering labels(std::vector<std::int64_t> a) {
  Clustering c;
  c.assignments = std::move(a);
  return c;
}

ActivationSet with_duplicate(const ModelGraph& g, const std::string& from, const std::string& to, std::uint64_t seed) {
  return test::duplicate_unit(test::synthetic_activations(g, 16, seed, 0.3), from, to);
}

}  // namespace

TEST_CASE("plan_layers keeps the first unit of each cluster") {
  const ModelGraph g = load_graph(test::fixture_path("toy_shufflenet.json"));
  const auto units = prunable_units(g);
  REQUIRE(units.size() == 4);
  const LayerStage s = plan_layers(g, labels({0, 0, 1, 1}), units);
  CHECK(s.retained == std::vector<std::string>{units[0], units[2]});
  CHECK(s.removed == std::vector<std::string>{units[1], units[3]});
  CHECK(s.clusters == std::vector<std::vector<std::string>>{{units[0], units[1]}, {units[2], units[3]}});

  const LayerStage one = plan_layers(g, labels({3, 3, 3, 3}), units);
  CHECK(one.retained == std::vector<std::string>{units[0]});
  CHECK(one.removed.size() == 3);

  CHECK_THROWS_AS(plan_layers(g, labels({0, 1}), units), ValidationError);
  CHECK_THROWS_AS(plan_layers(g, labels({0, 1}), {"conv1", "fc"}), ValidationError);
}

TEST_CASE("plan_layers marks the successor of a removed stride-2 block") {
  const ModelGraph g = load_graph(test::fixture_path("toy_resnet.json"));
  const auto units = prunable_units(g);
  // layer1.1 and layer2.0 co-cluster; layer2.0 (stride 2) goes.
  const LayerStage s = plan_layers(g, labels({0, 1, 1, 2, 3, 4, 5, 6}), units);
  CHECK(s.removed == std::vector<std::string>{"layer2.0"});
  REQUIRE(s.reinitialized.size() == 1);
  CHECK(s.reinitialized[0].id == "layer2.1");
  CHECK(s.reinitialized[0].scheme == "kaiming");
  // Shape-propagation oracle: the successor now sees layer1's output.
  const auto shapes = propagate_shapes(g, g.input_shape);
  CHECK(s.reinitialized[0].input_shape == shapes[GraphIndex(g).index_of("layer1.1")]);
}

TEST_CASE("plan_channels keeps the leading channel of each cluster") {
  const ModelGraph g = load_graph(test::fixture_path("toy_shufflenet.json"));
  const auto nodes = channel_prunable_nodes(g);
  std::vector<ChannelDecision> decisions;
  for (const auto& id : nodes) {
    const std::int64_t c = g.find(id)->out_channels;
    ChannelDecision d{{id}, c, {}, {}};
    d.channels.resize(static_cast<std::size_t>(c));
    std::iota(d.channels.begin(), d.channels.end(), 0);
    d.assignments = d.channels;
    decisions.push_back(d);
  }
  // First node: clusters {0,1},{2,3},... over its channels, listed out of order.
  auto& first = decisions[0];
  for (std::size_t r = 0; r < first.channels.size(); ++r) first.assignments[r] = static_cast<std::int64_t>(7 - r / 2);
  const auto kept = plan_channels(g, decisions);
  std::vector<std::int64_t> evens;
  for (std::int64_t i = 0; i < first.channel_count; i += 2) evens.push_back(i);
  CHECK(kept.at(nodes[0]) == evens);
  CHECK(kept.at(nodes[1]).size() == static_cast<std::size_t>(g.find(nodes[1])->out_channels));

  auto missing = decisions;
  missing.pop_back();
  CHECK_THROWS_AS(plan_channels(g, missing), ValidationError);
  auto wrong = decisions;
  wrong[0].channel_count += 1;
  CHECK_THROWS_AS(plan_channels(g, wrong), ValidationError);
  auto empty = decisions;
  empty[0].channels.clear();
  empty[0].assignments.clear();
  CHECK(plan_channels(g, empty).at(nodes[0]) == std::vector<std::int64_t>{0});
}

TEST_CASE("duplicate channels collapse to one") {
  const ModelGraph g = load_graph(test::fixture_path("toy_shufflenet.json"));
  ActivationSet base = test::synthetic_activations(g, 24, 5, 0.3);
  const std::string node = "stage2.0.branch2.0";
  Tensor t = base.at(node);
  const auto hw = static_cast<std::size_t>(t.spatial());
  const auto c = static_cast<std::size_t>(t.channels());
  for (std::size_t n = 0; n < 24; ++n) {
    std::copy_n(&t.data[n * c * hw], hw, &t.data[(n * c + 1) * hw]);  // channel 1 := channel 0
  }
  ActivationSet set(24);
  for (const auto& [id, tensor] : base.entries()) set.insert(id, id == node ? t : tensor);
  ChannelSpec spec;
  spec.per_node[node] = static_cast<std::int64_t>(c) - 1;
  const auto units = prunable_units(g);
  const PruningPlan p = hierarchical_plan(g, set, static_cast<std::int64_t>(units.size()), spec, 42);
  const auto& kept = p.channel_stage.at(node);
  CHECK(kept.size() == c - 1);
  CHECK(std::count(kept.begin(), kept.end(), 0) == 1);
  CHECK(std::count(kept.begin(), kept.end(), 1) == 0);
}

TEST_CASE("k = l with full channels is the identity plan") {
  for (const char* f : {"toy_resnet.json", "toy_mobilenet.json", "toy_shufflenet.json"}) {
    CAPTURE(f);
    const ModelGraph g = load_graph(test::fixture_path(f));
    const ActivationSet set = test::synthetic_activations(g, 12, 3);
    const auto l = static_cast<std::int64_t>(prunable_units(g).size());
    const PruningPlan p = hierarchical_plan(g, set, l, ChannelSpec::ratio(1.0), 42);
    const PruningPlan id = identity_plan(g);
    CHECK(p.layer_stage == id.layer_stage);
    CHECK(p.channel_stage == id.channel_stage);
    CHECK(apply_plan(g, p) == g);
    const CostReport a = count_cost(g), b = count_cost(apply_plan(g, p));
    CHECK(a.params == b.params);
    CHECK(a.flops == b.flops);
  }
}

TEST_CASE("duplicated blocks are co-clustered and one is removed") {
  const ModelGraph g = load_graph(test::fixture_path("toy_resnet.json"));
  const auto l = static_cast<std::int64_t>(prunable_units(g).size());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    CAPTURE(seed);
    const ActivationSet set = with_duplicate(g, "layer3.0", "layer3.1", seed + 100);
    PlanDiagnostics diag;
    const PruningPlan p = hierarchical_plan(g, set, l - 1, ChannelSpec::ratio(1.0), seed, {}, &diag);
    CHECK(diag.layer_similarity.values(4, 5) == 1.0);
    CHECK(p.layer_stage.removed == std::vector<std::string>{"layer3.1"});
    const auto& a = diag.layer_clustering.assignments;
    CHECK(a[4] == a[5]);
  }
}

TEST_CASE("random settings always yield valid plans with monotone cost") {
  std::mt19937_64 rng(2024);
  for (const char* f : {"toy_resnet.json", "toy_mobilenet.json", "toy_shufflenet.json"}) {
    const ModelGraph g = load_graph(test::fixture_path(f));
    const ActivationSet set = test::synthetic_activations(g, 12, 8);
    const auto l = static_cast<std::int64_t>(prunable_units(g).size());
    const CostReport base = count_cost(g);
    for (int trial = 0; trial < 6; ++trial) {
      const std::int64_t k = std::uniform_int_distribution<std::int64_t>(1, l)(rng);
      const double ratio = std::uniform_real_distribution<double>(0.1, 1.0)(rng);
      CAPTURE(f);
      CAPTURE(k);
      CAPTURE(ratio);
      const PruningPlan p = hierarchical_plan(g, set, k, ChannelSpec::ratio(ratio), rng());
      CHECK(p.layer_stage.retained.size() == static_cast<std::size_t>(k));
      const ModelGraph out = apply_plan(g, p);
      CHECK_NOTHROW(validate(out));
      const CostReport c = count_cost(out);
      CHECK(c.params <= base.params);
      CHECK(c.flops <= base.flops);
      for (const auto& id : p.layer_stage.removed) {
        for (const auto& [node, kept] : p.channel_stage) CHECK(g.find(node)->unit != id);
      }
    }
  }
}

TEST_CASE("coverage gaps and bad k are reported") {
  const ModelGraph g = load_graph(test::fixture_path("toy_resnet.json"));
  const ActivationSet full = test::synthetic_activations(g, 8, 1);
  CHECK_THROWS_AS(hierarchical_plan(g, full, 0, ChannelSpec::ratio(1.0), 1), ValidationError);
  CHECK_THROWS_AS(hierarchical_plan(g, full, 9, ChannelSpec::ratio(1.0), 1), ValidationError);
  ActivationSet partial(8);
  for (const auto& [id, t] : full.entries()) {
    if (id != "layer2.1" && id != "layer4.0.conv1") partial.insert(id, t);
  }
  CHECK_THROWS_WITH_AS(hierarchical_plan(g, partial, 4, ChannelSpec::ratio(1.0), 1), doctest::Contains("layer2.1"),
                       ValidationError);
}

TEST_CASE("re-exported activations drive the channel stage") {
  const ModelGraph g = load_graph(test::fixture_path("toy_mobilenet.json"));
  const ActivationSet a = test::synthetic_activations(g, 12, 1);
  const ActivationSet b = test::synthetic_activations(g, 12, 2);
  PlanOptions reuse, reexport;
  reexport.stage2 = &b;
  const auto spec = ChannelSpec::ratio(0.5);
  const PruningPlan pa = hierarchical_plan(g, a, 3, spec, 5, reuse);
  const PruningPlan pb = hierarchical_plan(g, a, 3, spec, 5, reexport);
  CHECK(pa.layer_stage == pb.layer_stage);
  const PruningPlan pc = hierarchical_plan(g, b, 3, spec, 5, reuse);
  // Channel decisions follow the stage-2 set whenever the layer stages agree.
  if (pc.layer_stage == pb.layer_stage) CHECK(pc.channel_stage == pb.channel_stage);
}

TEST_CASE("plans are identical across thread counts") {
  const ModelGraph g = load_graph(test::fixture_path("toy_resnet.json"));
  const ActivationSet set = test::synthetic_activations(g, 16, 6);
  PlanOptions one, many;
  many.par = Parallelism{4};
  many.kmeans.par = Parallelism{4};
  const auto spec = ChannelSpec::ratio(0.4);
  CHECK(serialize_plan(hierarchical_plan(g, set, 5, spec, 9, one)) ==
        serialize_plan(hierarchical_plan(g, set, 5, spec, 9, many)));
}
