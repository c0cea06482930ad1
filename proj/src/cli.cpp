#include "hscp/cli.hpp"

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hscp/activations.hpp"
#include "hscp/dataset.hpp"
#include "hscp/error.hpp"
#include "hscp/graph.hpp"
#include "hscp/log.hpp"
#include "hscp/plan.hpp"
#include "hscp/pruning.hpp"
#include "hscp/similarity.hpp"
#include "hscp/spectral.hpp"

namespace hscp {
namespace {

struct GlobalOptions {
  std::uint64_t seed = 42;
  unsigned threads = 0;  // 0: all hardware threads
  bool quiet = false;

  Parallelism par() const { return threads == 0 ? Parallelism::max() : Parallelism{threads}; }
};

std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

double reduction_pct(std::int64_t base, std::int64_t pruned) {
  return base == 0 ? 0.0 : 100.0 * (1.0 - static_cast<double>(pruned) / static_cast<double>(base));
}

void print_cost_table(std::ostream& out, const CostReport& base, const CostReport* pruned) {
  out << "model\tParams (M)\tΔParams (%)\tFLOPs (M)\tΔFLOPs (%)\n";
  auto row = [&](const char* name, const CostReport& c) {
    out << name << '\t' << fixed(static_cast<double>(c.params) / 1e6, 2) << '\t'
        << fixed(reduction_pct(base.params, c.params), 2) << '\t' << fixed(static_cast<double>(c.flops) / 1e6, 2)
        << '\t' << fixed(reduction_pct(base.flops, c.flops), 2) << '\n';
  };
  row("base", base);
  if (pruned) row("pruned", *pruned);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream s(text);
  for (std::string item; std::getline(s, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_similarity(const SimilarityMatrix& s, const std::string& prefix) {
  const std::filesystem::path base(prefix);
  if (base.has_parent_path()) std::filesystem::create_directories(base.parent_path());
  const std::size_t n = s.size();
  {
    std::ofstream csv(prefix + ".csv");
    if (!csv) throw IoError("cannot write " + prefix + ".csv");
    csv << std::setprecision(17);
    for (const auto& label : s.labels) csv << ',' << label;
    csv << '\n';
    for (std::size_t i = 0; i < n; ++i) {
      csv << s.labels[i];
      for (std::size_t j = 0; j < n; ++j) csv << ',' << s.values(i, j);
      csv << '\n';
    }
  }
  {
    std::ofstream bin(prefix + ".f64", std::ios::binary);
    if (!bin) throw IoError("cannot write " + prefix + ".f64");
    static_assert(std::endian::native == std::endian::little, "binary matrix output assumes a little-endian host");
    bin.write(reinterpret_cast<const char*>(s.values.data.data()),
              static_cast<std::streamsize>(s.values.data.size() * sizeof(double)));
  }
  nlohmann::json sidecar{{"version", 1},
                         {"kind", s.kind == SimilarityKind::layer ? "layer" : "channel"},
                         {"rows", n},
                         {"cols", n},
                         {"dtype", "f64"},
                         {"byte_order", "le"},
                         {"file", base.filename().string() + ".f64"},
                         {"labels", s.labels}};
  std::ofstream js(prefix + ".json");
  if (!js) throw IoError("cannot write " + prefix + ".json");
  js << sidecar.dump(2) << '\n';
}

ChannelSpec read_channel_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open channel spec " + path.string());
  try {
    const auto doc = nlohmann::json::parse(in);
    ChannelSpec spec;
    if (doc.contains("keep_ratio")) spec.keep_ratio = doc.at("keep_ratio").get<double>();
    const auto& nodes = doc.contains("per_node") ? doc.at("per_node") : doc;
    for (const auto& [id, k] : nodes.items()) {
      if (id == "keep_ratio") continue;
      spec.per_node[id] = k.get<std::int64_t>();
    }
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("channel spec " + path.string() + ": " + e.what());
  }
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::io:
      return 2;
    case ErrorKind::validation:
      return 3;
    case ErrorKind::numerical:
      return 4;
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Similarity-driven hierarchical pruning planner and RF spectrogram preprocessor", "hscp"};
  app.require_subcommand(1);
  GlobalOptions global;
  app.add_option("--seed", global.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", global.threads, "Worker threads (0 = all cores)")->capture_default_str();
  app.add_flag("--quiet", global.quiet, "Suppress informational messages");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Turn raw IQ recordings into labeled spectrogram datasets");
  std::string pre_input, pre_output, pre_labels, snr_train = "0:10", snr_test = "-5:20:5";
  PreprocessConfig pcfg;
  pre->add_option("--input", pre_input, "Directory of raw complex64 files")->required();
  pre->add_option("--output", pre_output, "Output directory")->required();
  pre->add_option("--labels", pre_labels, "Labels CSV (default <input>/labels.csv)");
  pre->add_option("--snr-train", snr_train, "Training SNR values, a:b[:step] dB")->capture_default_str();
  pre->add_option("--snr-test", snr_test, "Test SNR values, a:b[:step] dB")->capture_default_str();
  pre->add_option("--mixup-alpha", pcfg.mixup_alpha, "Mixup Beta parameter (0 disables)")->capture_default_str();
  pre->add_option("--test-fraction", pcfg.test_fraction, "Test share for rows without a split column")
      ->capture_default_str();
  pre->add_option("--first-bin", pcfg.first_bin, "First fftshifted frequency bin kept")->capture_default_str();
  pre->add_option("--bins", pcfg.bins, "Number of frequency bins kept")->capture_default_str();

  // similarity
  auto* sim = app.add_subcommand("similarity", "Compute a CKA similarity matrix");
  std::string sim_acts, sim_graph, sim_units, sim_mode = "layer", sim_output;
  std::vector<std::string> sim_nodes;
  sim->add_option("--activations", sim_acts, "Activation manifest")->required();
  sim->add_option("--graph", sim_graph, "Graph whose prunable units form the layer list");
  sim->add_option("--units", sim_units, "Comma-separated unit ids (layer mode)");
  sim->add_option("--mode", sim_mode, "layer or channel")->check(CLI::IsMember({"layer", "channel"}))->capture_default_str();
  sim->add_option("--node", sim_nodes, "Node id (channel mode); repeat for a coupled group");
  sim->add_option("--output", sim_output, "Output prefix for .csv, .f64 and .json")->required();

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "Compute a two-stage pruning plan");
  std::string plan_graph, plan_acts, plan_stage2, plan_spec, plan_output;
  std::int64_t plan_k = 0;
  double keep_ratio = 1.0;
  plan_cmd->add_option("--graph", plan_graph, "Model graph JSON")->required();
  plan_cmd->add_option("--activations", plan_acts, "Activation manifest of the original model")->required();
  plan_cmd->add_option("--k", plan_k, "Number of layer clusters")->required();
  auto* ratio_opt = plan_cmd->add_option("--keep-ratio", keep_ratio, "Channel clusters per node as a share of its width");
  auto* spec_opt = plan_cmd->add_option("--channel-spec", plan_spec, "JSON file of per-node channel cluster counts");
  ratio_opt->excludes(spec_opt);
  plan_cmd->add_option("--reexport", plan_stage2,
                       "Activation manifest recorded from the layer-pruned model for the channel stage");
  plan_cmd->add_option("--output", plan_output, "Plan JSON path")->required();

  // report
  auto* rep = app.add_subcommand("report", "Print parameter and FLOP counts");
  std::string rep_graph, rep_plan;
  rep->add_option("--graph", rep_graph, "Model graph JSON")->required();
  rep->add_option("--plan", rep_plan, "Plan to apply before counting");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }

  log::set_quiet(global.quiet);
  try {
    if (pre->parsed()) {
      pcfg.input_dir = pre_input;
      pcfg.output_dir = pre_output;
      pcfg.labels_csv = pre_labels;
      pcfg.snr_train = parse_snr_range(snr_train);
      pcfg.snr_test = parse_snr_range(snr_test);
      pcfg.seed = global.seed;
      pcfg.par = global.par();
      const PreprocessSummary s = preprocess(pcfg);
      out << "split\tsnr_db\tsamples\n";
      for (const auto& [split, counts] : s.per_snr) {
        for (const auto& [snr, n] : counts) out << split << '\t' << (std::isinf(snr) ? std::string("clean") : fixed(snr, 1)) << '\t' << n << '\n';
      }
      out << "mixup\t-\t" << s.mixup_samples << '\n';
      out << "skipped\t-\t" << s.skipped.size() << '\n';
    } else if (sim->parsed()) {
      const ActivationSet set = read_activations(sim_acts);
      SimilarityMatrix s;
      std::vector<std::int64_t> degenerate;
      if (sim_mode == "layer") {
        std::vector<std::string> units = split_list(sim_units);
        if (units.empty() && !sim_graph.empty()) units = prunable_units(load_graph(sim_graph));
        if (units.empty()) throw ValidationError("layer mode needs --units or --graph");
        s = layer_similarity(set, units, global.par());
      } else {
        if (sim_nodes.empty()) throw ValidationError("channel mode needs --node");
        s = group_channel_similarity(set, sim_nodes, &degenerate, global.par());
      }
      write_similarity(s, sim_output);
      out << "kind\tsize\tdegenerate\n"
          << sim_mode << '\t' << s.size() << '\t' << degenerate.size() << '\n';
      const auto gap = eigengap(laplacian(s));
      log::info("eigengap advisory: largest gap " + fixed(gap.largest_gap, 6) + " after eigenvalue " +
                std::to_string(gap.suggested_k) + " (k = " + std::to_string(gap.suggested_k) + ")");
    } else if (plan_cmd->parsed()) {
      const ModelGraph graph = load_graph(plan_graph);
      const ActivationSet set = read_activations(plan_acts);
      ChannelSpec spec = plan_spec.empty() ? ChannelSpec::ratio(keep_ratio) : read_channel_spec(plan_spec);
      if (spec.keep_ratio && !(*spec.keep_ratio > 0.0 && *spec.keep_ratio <= 1.0)) {
        throw ValidationError("keep ratio must lie in (0, 1]");
      }
      std::optional<ActivationSet> stage2;
      PlanOptions options;
      options.par = global.par();
      options.kmeans.par = options.par;
      if (!plan_stage2.empty()) {
        stage2 = read_activations(plan_stage2);
        options.stage2 = &*stage2;
      }
      PlanDiagnostics diag;
      const PruningPlan plan = hierarchical_plan(graph, set, plan_k, spec, global.seed, options, &diag);
      write_plan(plan, plan_output);
      log::info("eigengap advisory: largest layer gap after eigenvalue " + std::to_string(diag.layer_eigengap.suggested_k));
      const CostReport base = count_cost(graph);
      const CostReport pruned = count_cost(apply_plan(graph, plan));
      print_cost_table(out, base, &pruned);
      out << "layers\tretained " << plan.layer_stage.retained.size() << "\tremoved " << plan.layer_stage.removed.size()
          << "\treinitialized " << plan.layer_stage.reinitialized.size() << '\n';
    } else if (rep->parsed()) {
      const ModelGraph graph = load_graph(rep_graph);
      const CostReport base = count_cost(graph);
      if (rep_plan.empty()) {
        print_cost_table(out, base, nullptr);
      } else {
        const PruningPlan plan = read_plan(rep_plan, graph);
        const CostReport pruned = count_cost(apply_plan(graph, plan));
        print_cost_table(out, base, &pruned);
      }
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hscp
