// hyem: command-line driver for the ontology retrieval pipeline.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "hyem/hyem.hpp"

namespace {

using namespace hyem;
namespace fs = std::filesystem;

struct Globals {
  std::string config;
  std::string out;
  std::vector<std::string> sets;
  int threads = 0;
  bool force = false;
  std::optional<long long> seed;
};

pipeline::PipelineConfig make_config(const Globals& g, std::vector<std::string> extra) {
  std::vector<std::string> sets = g.sets;
  if (!g.out.empty()) sets.push_back("paths.out_dir=" + g.out);
  if (g.threads > 0) sets.push_back("run.threads=" + std::to_string(g.threads));
  if (g.seed) sets.push_back("seed.master=" + std::to_string(*g.seed));
  for (auto& e : extra) sets.push_back(std::move(e));
  std::optional<fs::path> file;
  if (!g.config.empty()) file = g.config;
  return pipeline::PipelineConfig::load(file, sets);
}

pipeline::Pipeline make_pipeline(const Globals& g, std::vector<std::string> extra) {
  return pipeline::Pipeline(make_config(g, std::move(extra)), pipeline::RunOptions{g.force, &std::cerr});
}

// Adds `--name` bound to `slot`; when given, it becomes a config override.
struct Overrides {
  std::vector<std::pair<std::string, std::string>> bound;
  std::vector<std::unique_ptr<std::string>> slots;

  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    slots.push_back(std::make_unique<std::string>());
    bound.emplace_back(key, "");
    const std::size_t i = slots.size() - 1;
    return app->add_option(flag, *slots[i], help + " (" + key + ")");
  }
  std::vector<std::string> collect() const {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (!slots[i]->empty()) out.push_back(bound[i].first + "=" + *slots[i]);
    return out;
  }
};

int run_theory(double kappa_R, int depth, double branching, int dim, double L_R, int L_k, bool tables,
               const Globals& g) {
  (void)make_config(g, {});
  bool any = false;
  if (kappa_R >= 0) {
    std::printf("kappa(%g) = %.4f\n", kappa_R, geometry::kappa(kappa_R));
    any = true;
  }
  if (L_R >= 0) {
    std::printf("L_th(R=%g, k=%d) = %zu\n", L_R, L_k,
                geometry::oversampling_threshold(L_R, static_cast<std::size_t>(L_k)));
    any = true;
  }
  if (depth > 0) {
    std::printf("required radius (lower-bound heuristic) for depth %d, branching %g, d=%d: %.4f\n", depth,
                branching, dim, geometry::required_radius(depth, branching, dim));
    any = true;
  }
  if (tables || !any) make_pipeline(g, {}).theory_tables();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperbolic ontology embedding and mixed-geometry retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "INI config file")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory (paths.out_dir)");
  app.add_option("--set", g.sets, "config override section.key=value (repeatable)");
  app.add_option("--threads", g.threads, "worker threads for queries and sweeps");
  app.add_option("--seed", g.seed, "master seed");
  app.add_flag("--force", g.force, "re-run stages even when up to date");

  Overrides ov;

  auto* ingest = app.add_subcommand("ingest", "parse an OBO file into ontology.jsonl");
  ov.add(ingest, "--ontology", "paths.ontology", "OBO file");
  auto* subset = app.add_subcommand("subset", "sample a connected subset into graph.jsonl");
  ov.add(subset, "--target", "subset.target", "node count");
  auto* synth = app.add_subcommand("synth", "generate a synthetic ontology into graph.jsonl");
  ov.add(synth, "--depth", "synth.depth", "b-ary tree depth");
  ov.add(synth, "--branch", "synth.branch", "b-ary tree branching");
  ov.add(synth, "--nodes", "synth.nodes", "taxonomy node count");
  ov.add(synth, "--target", "subset.target", "subset size");
  auto* gen = app.add_subcommand("gen-queries", "generate the query benchmark");
  auto* train = app.add_subcommand("train", "train hyperbolic entity embeddings and the adapter");
  ov.add(train, "--epochs", "train.epochs", "epochs");
  ov.add(train, "--dim", "train.dim", "tangent dimension");
  ov.add(train, "--radius", "train.radius", "radius budget");
  ov.add(train, "--adapter", "train.adapter", "linear|two-layer");
  auto* gate = app.add_subcommand("gate-train", "train the routing gate");
  ov.add(gate, "--variant", "gate.variant", "rule|linear|two-layer");
  auto* build = app.add_subcommand("build-index", "build tangent and text indexes");
  ov.add(build, "--M", "index.M", "graph degree");
  ov.add(build, "--kind", "index.kind", "graph|exact");
  auto* query = app.add_subcommand("query", "retrieve entities for queries");
  std::string query_text, query_id = "query", split = "test", output;
  std::size_t limit = 0;
  query->add_option("--text", query_text, "ad hoc query text");
  query->add_option("--id", query_id, "key for the ad hoc query (precomputed encoders)");
  query->add_option("--split", split, "benchmark split to run when --text is absent");
  query->add_option("--limit", limit, "maximum number of benchmark queries");
  query->add_option("--output", output, "write JSON lines here instead of stdout");
  ov.add(query, "--mode", "retrieval.mode", "euclidean-only|hyperbolic-only|no-gate|hard-route|soft-mix");
  ov.add(query, "--k", "retrieval.k", "results per query");
  ov.add(query, "--pool", "retrieval.pool", "pool text candidates (true|false)");
  auto* evaluate = app.add_subcommand("evaluate", "score the test split into reports/");
  ov.add(evaluate, "--mode", "retrieval.mode", "retrieval mode");
  auto* stress = app.add_subcommand("stress-test", "tangent oversampling sweep");
  ov.add(stress, "--L", "stress.L", "comma-separated candidate budgets");
  ov.add(stress, "--queries", "stress.queries", "query cap");
  auto* ablate = app.add_subcommand("ablate", "ablation, gate, noise, routing and efficiency reports");
  auto* theory = app.add_subcommand("theory", "distortion and radius calculators");
  double kappa_R = -1, L_R = -1, branching = 5;
  int depth = 0, dim = 32, L_k = 10;
  bool tables = false;
  theory->add_option("--kappa", kappa_R, "print sinh(R)/R");
  theory->add_option("--L", L_R, "print the oversampling threshold for radius R");
  theory->add_option("--k", L_k, "k for --L");
  theory->add_option("--depth", depth, "depth for the required radius");
  theory->add_option("--branching", branching, "branching for the required radius");
  theory->add_option("--dim", dim, "dimension for the required radius");
  theory->add_flag("--tables", tables, "write kappa.csv and radius.csv");
  auto* reproduce = app.add_subcommand("reproduce", "run every stage on the synthetic fixture");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto extra = ov.collect();
    if (theory->parsed()) return run_theory(kappa_R, depth, branching, dim, L_R, L_k, tables, g);
    auto p = make_pipeline(g, extra);
    if (ingest->parsed()) p.ingest();
    else if (subset->parsed()) p.subset();
    else if (synth->parsed()) p.synth();
    else if (gen->parsed()) p.gen_queries();
    else if (train->parsed()) p.train();
    else if (gate->parsed()) p.gate_train();
    else if (build->parsed()) p.build_index();
    else if (evaluate->parsed()) p.evaluate();
    else if (stress->parsed()) p.stress_test();
    else if (ablate->parsed()) p.ablate();
    else if (reproduce->parsed()) p.reproduce();
    else if (query->parsed()) {
      auto a = pipeline::load_artifacts(p.cfg, p.L());
      auto rc = pipeline::configured_retrieval(p.cfg, a);
      rc.validate(a.graph.size());
      std::vector<retrieval::RankedResult> results;
      if (!query_text.empty()) {
        retrieval::Query q{query_id, query_text, a.encoder->encode(query_id, query_text)};
        results.push_back(retrieval::retrieve(q, rc, a.context()));
      } else {
        auto qs = pipeline::split_queries(a.bench, benchmark::split_from_string(split));
        if (limit > 0 && qs.size() > limit) qs.resize(limit);
        results = pipeline::run_queries(qs, rc, a.context(), *a.encoder, p.cfg.threads());
      }
      if (output.empty()) {
        retrieval::write_results_jsonl(results, std::cout);
      } else {
        pipeline::write_with(output, [&](std::ostream& o) { retrieval::write_results_jsonl(results, o); });
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
