#pragma once

/// End-to-end pipeline: configuration (INI file, HYEM_<SECTION>_<KEY>
/// environment overrides, command-line overrides), per-stage manifests with
/// checksum-based skipping, and one function per pipeline stage.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "hyem/benchmark.hpp"
#include "hyem/encoding.hpp"
#include "hyem/error.hpp"
#include "hyem/evaluation.hpp"
#include "hyem/geometry.hpp"
#include "hyem/index.hpp"
#include "hyem/ontology.hpp"
#include "hyem/retrieval.hpp"
#include "hyem/training.hpp"
#include "hyem/util.hpp"

namespace hyem::pipeline {

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration

inline pt::ptree default_tree() {
  pt::ptree t;
  auto set = [&](const std::string& key, const std::string& value) { t.put(key, value); };
  set("paths.ontology", "");
  set("paths.entity_embeddings", "");
  set("paths.query_embeddings", "");
  set("paths.out_dir", "out");
  set("seed.master", "0");
  set("synth.nodes", "8000");
  set("synth.max_depth", "12");
  set("synth.extra_parent_rate", "0.1");
  set("synth.preference", "0.5");
  set("synth.depth", "0");
  set("synth.branch", "0");
  set("subset.target", "5000");
  set("encoder.kind", "hash");
  set("encoder.dim", "128");
  set("train.dim", "32");
  set("train.radius", "3.0");
  set("train.lambda_hier", "1.0");
  set("train.lambda_text", "1.0");
  set("train.lambda_radius", "10.0");
  set("train.margin", "0.1");
  set("train.negatives", "5");
  set("train.learning_rate", "0.05");
  set("train.epochs", "300");
  set("train.clip", "true");
  set("train.hard_negatives", "false");
  set("train.adapter", "linear");
  set("gate.variant", "linear");
  set("gate.epochs", "300");
  set("gate.learning_rate", "2.0");
  set("gate.hidden", "16");
  set("benchmark.split", "0.8,0.1,0.1");
  set("benchmark.buckets", "4");
  set("benchmark.bucket_bounds", "");
  set("benchmark.qe_synonym", "1");
  set("benchmark.qe_template", "1");
  set("benchmark.qh_each", "1");
  set("benchmark.qm", "1");
  set("index.kind", "graph");
  set("index.M", "16");
  set("index.ef_construction", "200");
  set("index.ef_search", "0");
  set("retrieval.k", "10");
  set("retrieval.L_H", "50");
  set("retrieval.L_E", "50");
  set("retrieval.mode", "soft-mix");
  set("retrieval.pool", "true");
  set("retrieval.calibrate", "true");
  set("stress.L", "10,20,34,50,68,100,200");
  set("stress.k", "10");
  set("stress.queries", "1000");
  set("ablate.noise", "0,0.1,0.2,0.3");
  set("ablate.kg_epochs", "100");
  set("ablate.latency_queries", "1000");
  set("run.threads", "1");
  return t;
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

class PipelineConfig {
 public:
  PipelineConfig() : tree_(default_tree()) {}

  /// Layers: defaults, then `file` (if any), then environment, then
  /// `overrides` of the form section.key=value. Unknown keys are errors.
  static PipelineConfig load(const std::optional<fs::path>& file,
                             const std::vector<std::string>& overrides,
                             const std::function<const char*(const char*)>& getenv_fn =
                                 [](const char* k) { return std::getenv(k); }) {
    PipelineConfig c;
    if (file) {
      if (!fs::exists(*file)) throw Error("config file not found: " + file->string());
      pt::ptree loaded;
      try {
        pt::read_ini(file->string(), loaded);
      } catch (const pt::ini_parser_error& e) {
        throw Error(std::string("config: ") + e.what());
      }
      for (const auto& [section, body] : loaded)
        for (const auto& [key, value] : body) c.set(section + "." + key, value.data());
    }
    for (const auto& [section, body] : default_tree())
      for (const auto& [key, value] : body) {
        std::string env = "HYEM_" + section + "_" + key;
        for (char& ch : env) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (const char* v = getenv_fn(env.c_str())) c.set(section + "." + key, v);
      }
    for (const auto& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos) throw Error("override must be section.key=value: " + o);
      c.set(o.substr(0, eq), o.substr(eq + 1));
    }
    c.validate();
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (!default_tree().get_child_optional(pt::ptree::path_type(key, '.')))
      throw Error("unknown config key: " + key);
    tree_.put(key, value);
  }

  std::string str(const std::string& key) const { return tree_.get<std::string>(key); }
  double num(const std::string& key) const {
    try {
      return std::stod(str(key));
    } catch (const std::exception&) {
      throw Error("config " + key + ": expected a number, got '" + str(key) + "'");
    }
  }
  long long integer(const std::string& key) const {
    try {
      std::size_t pos = 0;
      const std::string s = str(key);
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument("trailing");
      return v;
    } catch (const std::exception&) {
      throw Error("config " + key + ": expected an integer, got '" + str(key) + "'");
    }
  }
  bool flag(const std::string& key) const {
    const std::string s = str(key);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw Error("config " + key + ": expected a boolean, got '" + s + "'");
  }
  std::vector<double> numbers(const std::string& key) const {
    std::vector<double> out;
    for (const auto& s : split_list(str(key))) out.push_back(std::stod(s));
    return out;
  }

  std::uint64_t master_seed() const { return static_cast<std::uint64_t>(integer("seed.master")); }
  std::uint64_t seed(std::string_view stage) const { return derive_seed(master_seed(), stage); }
  fs::path out_dir() const { return fs::path(str("paths.out_dir")); }
  std::size_t threads() const { return static_cast<std::size_t>(std::max(1LL, integer("run.threads"))); }

  training::TrainConfig train() const {
    training::TrainConfig t;
    t.dim = static_cast<int>(integer("train.dim"));
    t.radius_budget = num("train.radius");
    t.lambda_hier = num("train.lambda_hier");
    t.lambda_text = num("train.lambda_text");
    t.lambda_radius = num("train.lambda_radius");
    t.margin = num("train.margin");
    t.negatives_per_edge = static_cast<int>(integer("train.negatives"));
    t.learning_rate = num("train.learning_rate");
    t.epochs = static_cast<int>(integer("train.epochs"));
    t.clip_after_step = flag("train.clip");
    t.hard_negatives = flag("train.hard_negatives");
    t.adapter = encoding::adapter_variant_from_string(str("train.adapter"));
    t.seed = seed("train");
    return t;
  }

  training::GateTrainConfig gate() const {
    training::GateTrainConfig g;
    g.variant = training::gate_variant_from_string(str("gate.variant"));
    g.epochs = static_cast<int>(integer("gate.epochs"));
    g.learning_rate = num("gate.learning_rate");
    g.hidden = static_cast<int>(integer("gate.hidden"));
    g.seed = seed("gate-train");
    return g;
  }

  benchmark::GenerationConfig generation() const {
    benchmark::GenerationConfig g;
    g.seed = seed("gen-queries");
    const auto r = numbers("benchmark.split");
    if (r.size() != 3) throw Error("benchmark.split needs three ratios");
    if (r[0] < 0 || r[1] < 0 || r[2] < 0 || std::abs(r[0] + r[1] + r[2] - 1.0) > 1e-9)
      throw Error("benchmark.split ratios must be non-negative and sum to 1");
    g.split_ratios = {r[0], r[1], r[2]};
    g.bucket_count = static_cast<std::size_t>(integer("benchmark.buckets"));
    for (double b : numbers("benchmark.bucket_bounds")) g.bucket_bounds.push_back(static_cast<int>(b));
    g.caps.qe_synonym = static_cast<int>(integer("benchmark.qe_synonym"));
    g.caps.qe_template = static_cast<int>(integer("benchmark.qe_template"));
    g.caps.qh_each = static_cast<int>(integer("benchmark.qh_each"));
    g.caps.qm = static_cast<int>(integer("benchmark.qm"));
    return g;
  }

  index::IndexParams index_params(index::Metric metric) const {
    index::IndexParams p;
    p.kind = index::index_kind_from_string(str("index.kind"));
    p.metric = metric;
    p.M = static_cast<std::uint32_t>(integer("index.M"));
    p.ef_construction = static_cast<std::uint32_t>(integer("index.ef_construction"));
    p.ef_search = static_cast<std::uint32_t>(integer("index.ef_search"));
    p.seed = seed("build-index");
    return p;
  }

  retrieval::RetrievalConfig retrieval() const {
    retrieval::RetrievalConfig r;
    r.k = static_cast<std::size_t>(integer("retrieval.k"));
    r.L_H = static_cast<std::size_t>(integer("retrieval.L_H"));
    r.L_E = static_cast<std::size_t>(integer("retrieval.L_E"));
    r.mode = retrieval::mode_from_string(str("retrieval.mode"));
    r.pool_text_candidates = flag("retrieval.pool");
    r.ef_search = static_cast<std::size_t>(integer("index.ef_search"));
    return r;
  }

  void validate() const {
    train().validate();
    (void)gate();
    (void)generation();
    (void)index_params(index::Metric::l2);
    (void)retrieval();
    const std::string enc = str("encoder.kind");
    if (enc != "hash" && enc != "precomputed") throw Error("encoder.kind must be hash or precomputed");
    if (integer("encoder.dim") < 8) throw Error("encoder.dim must be >= 8");
  }

  /// Stable hash of the listed sections plus the master seed.
  std::string section_hash(const std::vector<std::string>& sections) const {
    std::string s = "seed=" + str("seed.master") + ";";
    for (const auto& sec : sections) {
      auto child = tree_.get_child_optional(sec);
      if (!child) continue;
      for (const auto& [k, v] : *child) s += sec + "." + k + "=" + v.data() + ";";
    }
    return hex64(fnv1a64(s));
  }

  void write_ini(std::ostream& out) const { pt::write_ini(out, tree_); }

 private:
  pt::ptree tree_;
};

// ---------------------------------------------------------------------------
// Files and manifests

struct Layout {
  fs::path out;
  fs::path at(const std::string& name) const { return out / name; }
  fs::path manifests() const { return out / "manifests"; }
  fs::path reports() const { return out / "reports"; }
};

inline void write_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << content;
    if (!out) throw Error("write failed: " + path.string());
  }
  fs::rename(tmp, path);
}

template <typename Fn>
void write_with(const fs::path& path, Fn&& fn) {
  std::ostringstream s;
  fn(s);
  write_file(path, s.str());
}

inline std::ifstream open_input(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("missing input: expected " + path.string());
  return in;
}

inline std::string slurp(const fs::path& path) {
  auto in = open_input(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct RunOptions {
  bool force = false;
  std::ostream* log = &std::cerr;
};

enum class StageStatus { ran, skipped };

class StageRunner {
 public:
  StageRunner(Layout layout, RunOptions opts) : layout_(std::move(layout)), opts_(opts) {}

  const Layout& layout() const noexcept { return layout_; }
  std::ostream& log() const { return *opts_.log; }

  /// Runs `body` unless the stage's previous manifest matches the current
  /// inputs, config hash and outputs. Inputs written by another stage must
  /// still match that stage's manifest, otherwise the artifact is stale.
  StageStatus run(const std::string& stage, const std::vector<fs::path>& inputs,
                  const std::vector<fs::path>& outputs, const std::string& config_hash,
                  const std::function<void()>& body) {
    json recorded_inputs = json::object();
    for (const auto& in : inputs) {
      if (!fs::exists(in)) throw Error("stage " + stage + ": missing input, expected " + in.string());
      const std::string sum = file_checksum(in.string());
      check_not_stale(stage, in, sum);
      recorded_inputs[key_of(in)] = sum;
    }
    const fs::path manifest_path = layout_.manifests() / (stage + ".json");
    if (!opts_.force && fs::exists(manifest_path)) {
      try {
        const json m = json::parse(read_file(manifest_path.string()));
        bool fresh = m.at("config") == config_hash && m.at("inputs") == recorded_inputs;
        for (const auto& out : outputs) {
          if (!fresh) break;
          fresh = fs::exists(out) && m.at("outputs").contains(key_of(out)) &&
                  m["outputs"][key_of(out)] == file_checksum(out.string());
        }
        if (fresh) {
          log() << "stage " << stage << ": up to date (use --force to re-run)\n";
          return StageStatus::skipped;
        }
      } catch (const json::exception&) {
        // Unreadable manifest: fall through and re-run.
      }
    }
    log() << "stage " << stage << ": running\n";
    body();
    json recorded_outputs = json::object();
    for (const auto& out : outputs) {
      if (!fs::exists(out)) throw Error("stage " + stage + " did not produce " + out.string());
      recorded_outputs[key_of(out)] = file_checksum(out.string());
    }
    write_file(manifest_path, json{{"stage", stage},
                                   {"config", config_hash},
                                   {"inputs", recorded_inputs},
                                   {"outputs", recorded_outputs}}
                                  .dump(2) +
                                  "\n");
    return StageStatus::ran;
  }

 private:
  std::string key_of(const fs::path& p) const {
    const auto rel = fs::relative(fs::absolute(p), fs::absolute(layout_.out));
    const std::string r = rel.generic_string();
    if (!rel.empty() && r.rfind("..", 0) != 0) return r;
    return fs::absolute(p).lexically_normal().generic_string();
  }

  fs::path path_of(const std::string& key) const {
    const fs::path p(key);
    return p.is_absolute() ? p : layout_.out / p;
  }

  /// Manifests keyed by the artifacts they list as outputs, newest first
  /// (ingest+subset and synth both write graph.jsonl).
  std::map<std::string, std::vector<json>> producers() const {
    std::vector<std::pair<fs::file_time_type, json>> found;
    if (!fs::exists(layout_.manifests())) return {};
    for (const auto& entry : fs::directory_iterator(layout_.manifests())) {
      if (entry.path().extension() != ".json") continue;
      json m;
      try {
        m = json::parse(read_file(entry.path().string()));
      } catch (const json::exception&) {
        continue;
      }
      if (!m.contains("outputs") || !m["outputs"].is_object()) continue;
      if (!m.contains("stage")) m["stage"] = entry.path().stem().string();
      found.emplace_back(entry.last_write_time(), std::move(m));
    }
    std::stable_sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::map<std::string, std::vector<json>> out;
    for (const auto& [time, m] : found)
      for (const auto& [key, sum] : m["outputs"].items()) out[key].push_back(m);
    return out;
  }

  /// An input is stale when it differs from its producer's recorded output,
  /// or when any artifact upstream of it changed after it was produced.
  void check_not_stale(const std::string& stage, const fs::path& input, const std::string& sum) const {
    const auto by_output = producers();
    std::map<std::string, std::string> sums{{key_of(input), sum}};
    auto current = [&](const std::string& key) -> std::optional<std::string> {
      if (auto it = sums.find(key); it != sums.end()) return it->second;
      const auto p = path_of(key);
      if (!fs::exists(p)) return std::nullopt;
      return sums[key] = file_checksum(p.string());
    };
    std::set<std::string> seen;
    std::vector<std::string> todo{key_of(input)};
    while (!todo.empty()) {
      const std::string key = todo.back();
      todo.pop_back();
      if (!seen.insert(key).second) continue;
      auto it = by_output.find(key);
      if (it == by_output.end()) continue;
      const auto now = current(key);
      const json* match = &it->second.front();
      for (const auto& m : it->second)
        if (now && m["outputs"][key] == *now) {
          match = &m;
          break;
        }
      const json& m = *match;
      const std::string producer = m["stage"].get<std::string>();
      if (producer == stage) continue;
      if (!now || m["outputs"][key] != *now)
        throw Error("stale artifact " + path_of(key).string() + ": it no longer matches the output of stage '" +
                    producer + "'; re-run " + producer + " (needed by " + stage + ")");
      if (!m.contains("inputs")) continue;
      for (const auto& [in_key, in_sum] : m["inputs"].items()) {
        const auto in_now = current(in_key);
        if (!in_now || in_sum != *in_now)
          throw Error("stale artifact " + path_of(key).string() + ": input " + in_key +
                      " changed after stage '" + producer + "' ran; re-run " + producer + " (needed by " +
                      stage + ")");
        todo.push_back(in_key);
      }
    }
  }

  Layout layout_;
  RunOptions opts_;
};

// ---------------------------------------------------------------------------
// Artifact helpers

inline ontology::OntologyGraph load_graph(const fs::path& p) {
  auto in = open_input(p);
  return ontology::read_graph_jsonl(in);
}

inline std::unique_ptr<encoding::TextEncoder> make_encoder(const PipelineConfig& cfg) {
  if (cfg.str("encoder.kind") == "hash")
    return std::make_unique<encoding::HashEncoder>(static_cast<int>(cfg.integer("encoder.dim")),
                                                   cfg.seed("encoder"));
  encoding::EmbeddingTable merged;
  for (const char* key : {"paths.entity_embeddings", "paths.query_embeddings"}) {
    const std::string path = cfg.str(key);
    if (path.empty()) throw Error("precomputed encoder needs " + std::string(key));
    auto in = open_input(path);
    auto table = encoding::load_embeddings(in);
    for (std::size_t i = 0; i < table.size(); ++i) merged.add(table.ids()[i], table.row(i));
  }
  return std::make_unique<encoding::PrecomputedEncoder>(std::move(merged));
}

inline std::vector<fs::path> encoder_inputs(const PipelineConfig& cfg) {
  if (cfg.str("encoder.kind") == "hash") return {};
  return {cfg.str("paths.entity_embeddings"), cfg.str("paths.query_embeddings")};
}

inline retrieval::Query make_query(const benchmark::QueryRecord& q, const encoding::TextEncoder& enc) {
  return {q.query_id, q.text, enc.encode(q.query_id, q.text)};
}

inline training::Checkpoint load_embeddings_for(const fs::path& p, const ontology::OntologyGraph& g) {
  auto in = open_input(p);
  auto cp = training::load_checkpoint(in);
  if (cp.embeddings.size() != g.size())
    throw Error("stale artifact " + p.string() + ": entity count differs from the graph; re-run train");
  for (ontology::NodeIndex i = 0; i < g.size(); ++i)
    if (cp.embeddings.ids()[i] != g.node(i).id)
      throw Error("stale artifact " + p.string() + ": ids differ from the graph; re-run train");
  return cp;
}

inline encoding::AdapterParams load_adapter(const fs::path& p) {
  return encoding::adapter_from_json(json::parse(slurp(p)));
}

inline training::GateParams load_gate(const fs::path& p) {
  return training::gate_from_json(json::parse(slurp(p)));
}

inline index::VectorIndex load_index(const fs::path& p) {
  auto in = open_input(p);
  return index::VectorIndex::load(in);
}

inline std::vector<std::uint32_t> identity_keys(std::size_t n) {
  std::vector<std::uint32_t> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = static_cast<std::uint32_t>(i);
  return k;
}

/// Everything a retrieval run over the benchmark needs.
struct Artifacts {
  ontology::OntologyGraph graph;
  benchmark::Benchmark bench;
  training::Checkpoint checkpoint;
  encoding::AdapterParams adapter;
  std::optional<training::GateParams> gate;
  index::VectorIndex tangent;
  index::VectorIndex text;
  retrieval::TextCorpus corpus;
  retrieval::Temperatures temps;
  std::unique_ptr<encoding::TextEncoder> encoder;

  retrieval::RetrievalContext context() const {
    return {&checkpoint.embeddings, &tangent, &text, &corpus, &adapter, gate ? &*gate : nullptr};
  }
};

inline Artifacts load_artifacts(const PipelineConfig& cfg, const Layout& L) {
  Artifacts a;
  a.graph = load_graph(L.at("graph.jsonl"));
  {
    auto in = open_input(L.at("queries.jsonl"));
    a.bench = benchmark::read_benchmark(in, a.graph);
  }
  a.checkpoint = load_embeddings_for(L.at("embeddings.hyemb"), a.graph);
  a.adapter = load_adapter(L.at("adapter.json"));
  if (fs::exists(L.at("gate.json"))) a.gate = load_gate(L.at("gate.json"));
  a.tangent = load_index(L.at("tangent.hyix"));
  a.text = load_index(L.at("text.hyix"));
  a.encoder = make_encoder(cfg);
  a.corpus = retrieval::make_text_corpus(a.graph, *a.encoder, true);
  if (a.tangent.size() != a.graph.size() || a.text.size() != a.corpus.rows())
    throw Error("stale artifact: indexes do not match the graph; re-run build-index");
  const json cal = json::parse(slurp(L.at("calibration.json")));
  a.temps.tau_E = cal.at("tau_E").get<double>();
  a.temps.tau_H = cal.at("tau_H").get<double>();
  a.temps.defaulted = cal.value("defaulted", false);
  return a;
}

inline std::vector<const benchmark::QueryRecord*> split_queries(const benchmark::Benchmark& bm,
                                                                benchmark::Split split) {
  std::vector<const benchmark::QueryRecord*> out;
  for (const auto& q : bm.queries)
    if (q.split == split) out.push_back(&q);
  return out;
}

/// Ranked entity lists for each query, computed in parallel but stored by
/// query position.
inline std::vector<retrieval::RankedResult> run_queries(
    const std::vector<const benchmark::QueryRecord*>& qs, const retrieval::RetrievalConfig& rc,
    const retrieval::RetrievalContext& ctx, const encoding::TextEncoder& enc, std::size_t threads) {
  std::vector<retrieval::RankedResult> out(qs.size());
  parallel_for(qs.size(), threads, [&](std::size_t i) {
    out[i] = retrieval::retrieve(make_query(*qs[i], enc), rc, ctx);
  });
  return out;
}

inline void add_to_report(evaluation::MetricReport& rep, const std::string& method,
                          const benchmark::Benchmark& bm,
                          const std::vector<const benchmark::QueryRecord*>& qs,
                          const std::vector<std::vector<std::uint32_t>>& ranked) {
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const auto& q = *qs[i];
    const std::vector<std::uint32_t> none;
    rep.add(method, benchmark::to_string(q.family), bm.buckets.label(static_cast<std::size_t>(q.depth_bucket)),
            ranked[i], q.truth, q.family == benchmark::Family::qh_ancestor ? q.truth : none);
  }
}

inline std::vector<std::vector<std::uint32_t>> entity_lists(const std::vector<retrieval::RankedResult>& rs) {
  std::vector<std::vector<std::uint32_t>> out;
  out.reserve(rs.size());
  for (const auto& r : rs) out.push_back(r.entities());
  return out;
}

/// Configured retrieval with calibrated temperatures applied.
inline retrieval::RetrievalConfig configured_retrieval(const PipelineConfig& cfg, const Artifacts& a) {
  auto rc = cfg.retrieval();
  rc.tau_E = a.temps.tau_E;
  rc.tau_H = a.temps.tau_H;
  return rc;
}

/// The text-only baseline: cosine ranking over text-index candidates.
inline retrieval::RetrievalConfig euclidean_baseline(retrieval::RetrievalConfig rc) {
  rc.mode = retrieval::Mode::euclidean_only;
  rc.L_H = 0;
  rc.pool_text_candidates = true;
  return rc;
}

inline json gate_metrics_json(const evaluation::GateMetrics& m) {
  return {{"accuracy", evaluation::MetricReport::round6(m.accuracy)},
          {"precision", evaluation::MetricReport::round6(m.precision)},
          {"recall", evaluation::MetricReport::round6(m.recall)},
          {"auc", m.auc ? json(evaluation::MetricReport::round6(*m.auc)) : json(nullptr)},
          {"count", m.count}};
}

inline evaluation::GateMetrics evaluate_gate(const training::GateParams& gate,
                                             const std::vector<const benchmark::QueryRecord*>& qs,
                                             const encoding::TextEncoder& enc, double sigma = 0.0,
                                             std::uint64_t noise_seed = 0) {
  std::vector<double> alphas;
  std::vector<bool> labels;
  for (const auto* q : qs) {
    if (q->gate_label == benchmark::GateLabel::none) continue;
    auto e = enc.encode(q->query_id, q->text);
    e = benchmark::perturb_embedding(e, sigma, derive_seed(noise_seed, q->query_id));
    alphas.push_back(training::gate_alpha(gate, e.coords, q->text));
    labels.push_back(q->gate_label == benchmark::GateLabel::h);
  }
  return evaluation::gate_metrics(alphas, labels);
}

// ---------------------------------------------------------------------------
// Stages

struct Pipeline {
  PipelineConfig cfg;
  StageRunner runner;

  Pipeline(PipelineConfig c, RunOptions opts)
      : cfg(std::move(c)), runner(Layout{cfg.out_dir()}, opts) {
    fs::create_directories(cfg.out_dir());
    write_with(cfg.out_dir() / "config.resolved.ini", [&](std::ostream& o) { cfg.write_ini(o); });
  }

  const Layout& L() const { return runner.layout(); }
  std::ostream& log() const { return runner.log(); }

  static json stats_json(const ontology::OntologyGraph& g) {
    return ontology::stats_to_json(ontology::graph_stats(g));
  }

  StageStatus ingest() {
    const std::string src = cfg.str("paths.ontology");
    if (src.empty()) throw Error("ingest: set paths.ontology (or --ontology) to an OBO file");
    return runner.run("ingest", {src}, {L().at("ontology.jsonl")}, cfg.section_hash({}), [&] {
      auto in = open_input(src);
      auto g = ontology::parse_obo(in);
      const auto s = ontology::graph_stats(g);
      log() << "  parsed " << s.node_count << " terms, " << s.edge_count << " is-a edges, "
            << g.dangling().size() << " dangling targets, " << s.unreachable_count
            << " unreachable\n";
      write_with(L().at("ontology.jsonl"), [&](std::ostream& o) { ontology::write_graph_jsonl(g, o); });
    });
  }

  StageStatus subset() {
    return runner.run("subset", {L().at("ontology.jsonl")}, {L().at("graph.jsonl")},
                      cfg.section_hash({"subset"}), [&] {
                        auto g = load_graph(L().at("ontology.jsonl"));
                        const auto target = std::min<std::size_t>(
                            g.size(), static_cast<std::size_t>(cfg.integer("subset.target")));
                        auto sub = ontology::sample_subset(g, target, cfg.seed("subset"));
                        log() << "  subset " << stats_json(sub).dump() << "\n";
                        write_with(L().at("graph.jsonl"),
                                   [&](std::ostream& o) { ontology::write_graph_jsonl(sub, o); });
                      });
  }

  StageStatus synth() {
    return runner.run(
        "synth", {}, {L().at("synthetic.obo"), L().at("graph.jsonl")},
        cfg.section_hash({"synth", "subset"}), [&] {
          const int depth = static_cast<int>(cfg.integer("synth.depth"));
          const int branch = static_cast<int>(cfg.integer("synth.branch"));
          ontology::OntologyGraph full;
          if (depth > 0 || branch > 0) {
            full = ontology::synth_bary(depth, branch, cfg.seed("synth"));
          } else {
            ontology::TaxonomyParams tp;
            tp.node_count = static_cast<std::size_t>(cfg.integer("synth.nodes"));
            tp.max_depth = static_cast<int>(cfg.integer("synth.max_depth"));
            tp.extra_parent_rate = cfg.num("synth.extra_parent_rate");
            tp.preference = cfg.num("synth.preference");
            tp.seed = cfg.seed("synth");
            full = ontology::synth_taxonomy(tp);
          }
          std::ostringstream obo;
          ontology::write_obo(full, obo);
          write_file(L().at("synthetic.obo"), obo.str());
          // Round-trip through the OBO parser so the synthetic path matches ingest.
          auto parsed = ontology::parse_obo(obo.str());
          const auto target = std::min<std::size_t>(
              parsed.size(), static_cast<std::size_t>(cfg.integer("subset.target")));
          auto g = ontology::sample_subset(parsed, target, cfg.seed("subset"));
          log() << "  graph " << stats_json(g).dump() << "\n";
          write_with(L().at("graph.jsonl"), [&](std::ostream& o) { ontology::write_graph_jsonl(g, o); });
        });
  }

  StageStatus gen_queries() {
    return runner.run("gen-queries", {L().at("graph.jsonl")}, {L().at("queries.jsonl")},
                      cfg.section_hash({"benchmark"}), [&] {
                        auto g = load_graph(L().at("graph.jsonl"));
                        auto bm = benchmark::gen_queries(g, cfg.generation());
                        log() << "  " << bm.queries.size() << " queries\n";
                        write_with(L().at("queries.jsonl"),
                                   [&](std::ostream& o) { benchmark::write_benchmark(bm, g, o); });
                      });
  }

  StageStatus train() {
    std::vector<fs::path> inputs{L().at("graph.jsonl")};
    for (auto& p : encoder_inputs(cfg)) inputs.push_back(p);
    return runner.run(
        "train", inputs,
        {L().at("embeddings.hyemb"), L().at("adapter.json"), L().at("train_diagnostics.json")},
        cfg.section_hash({"train", "encoder"}), [&] {
          auto g = load_graph(L().at("graph.jsonl"));
          auto enc = make_encoder(cfg);
          auto table = training::encode_entities(g, *enc);
          auto texts = training::align_texts(g, table);
          const auto tc = cfg.train();
          training::TrainResult res;
          try {
            res = training::train_embeddings(g, texts, tc);
          } catch (const training::TrainingAborted& e) {
            write_file(L().at("train_diagnostics.json"), e.diagnostics().to_json().dump(2) + "\n");
            throw;
          }
          log() << "  max radius " << res.embeddings.max_radius() << ", final loss "
                << (res.diagnostics.epoch_loss.empty() ? 0.0 : res.diagnostics.epoch_loss.back())
                << "\n";
          write_with(L().at("embeddings.hyemb"), [&](std::ostream& o) {
            training::save_checkpoint(res.embeddings, tc.radius_budget, o);
          });
          write_file(L().at("adapter.json"), encoding::adapter_to_json(res.adapter).dump() + "\n");
          write_file(L().at("train_diagnostics.json"), res.diagnostics.to_json().dump(2) + "\n");
        });
  }

  static std::vector<training::GateExample> gate_examples(
      const std::vector<const benchmark::QueryRecord*>& qs, const encoding::TextEncoder& enc) {
    std::vector<training::GateExample> out;
    for (const auto* q : qs) {
      if (q->gate_label == benchmark::GateLabel::none) continue;
      out.push_back({enc.encode(q->query_id, q->text).coords, q->text,
                     q->gate_label == benchmark::GateLabel::h});
    }
    return out;
  }

  StageStatus gate_train() {
    std::vector<fs::path> inputs{L().at("graph.jsonl"), L().at("queries.jsonl")};
    for (auto& p : encoder_inputs(cfg)) inputs.push_back(p);
    return runner.run("gate-train", inputs, {L().at("gate.json")}, cfg.section_hash({"gate", "encoder"}),
                      [&] {
                        auto g = load_graph(L().at("graph.jsonl"));
                        auto in = open_input(L().at("queries.jsonl"));
                        auto bm = benchmark::read_benchmark(in, g);
                        auto enc = make_encoder(cfg);
                        auto data = gate_examples(split_queries(bm, benchmark::Split::train), *enc);
                        auto gate = training::train_gate(data, cfg.gate());
                        const auto m = evaluate_gate(gate, split_queries(bm, benchmark::Split::train), *enc);
                        log() << "  training accuracy " << m.accuracy << " on " << m.count << " queries\n";
                        write_file(L().at("gate.json"), training::gate_to_json(gate).dump() + "\n");
                      });
  }

  StageStatus build_index() {
    std::vector<fs::path> inputs{L().at("graph.jsonl"), L().at("embeddings.hyemb")};
    const bool calibrate = cfg.flag("retrieval.calibrate");
    if (calibrate) inputs.push_back(L().at("queries.jsonl"));
    for (auto& p : encoder_inputs(cfg)) inputs.push_back(p);
    return runner.run(
        "build-index", inputs,
        {L().at("tangent.hyix"), L().at("text.hyix"), L().at("calibration.json")},
        cfg.section_hash({"index", "encoder", "retrieval"}), [&] {
          auto g = load_graph(L().at("graph.jsonl"));
          auto cp = load_embeddings_for(L().at("embeddings.hyemb"), g);
          const auto& emb = cp.embeddings;
          auto tangent = index::VectorIndex::build(identity_keys(g.size()), emb.tangent_data(),
                                                   static_cast<std::size_t>(emb.dim()),
                                                   cfg.index_params(index::Metric::l2));
          auto enc = make_encoder(cfg);
          auto corpus = retrieval::make_text_corpus(g, *enc, true);
          auto text = index::VectorIndex::build(corpus.keys(), corpus.flat,
                                                static_cast<std::size_t>(corpus.dim),
                                                cfg.index_params(index::Metric::cosine));
          write_with(L().at("tangent.hyix"), [&](std::ostream& o) { tangent.save(o); });
          write_with(L().at("text.hyix"), [&](std::ostream& o) { text.save(o); });
          retrieval::Temperatures t;
          std::size_t pairs = 0;
          if (calibrate) {
            auto in = open_input(L().at("queries.jsonl"));
            auto bm = benchmark::read_benchmark(in, g);
            std::vector<std::pair<std::size_t, std::size_t>> val;
            for (auto [c, p] : g.edges())
              if (bm.splits[c] == benchmark::Split::val) val.emplace_back(p, c);
            pairs = val.size();
            t = retrieval::calibrate_temperatures(val, emb);
            if (t.defaulted) log() << "  warning: no usable validation pairs, temperatures (1, 1)\n";
          }
          log() << "  tangent index " << tangent.byte_size() << " bytes, text index "
                << text.byte_size() << " bytes, tau_H " << t.tau_H << "\n";
          write_file(L().at("calibration.json"),
                     json{{"tau_E", t.tau_E}, {"tau_H", t.tau_H}, {"defaulted", t.defaulted},
                          {"pairs", pairs}}
                             .dump(2) + "\n");
        });
  }

  std::vector<fs::path> retrieval_inputs() const {
    std::vector<fs::path> in{L().at("graph.jsonl"),  L().at("queries.jsonl"), L().at("embeddings.hyemb"),
                             L().at("adapter.json"), L().at("tangent.hyix"),   L().at("text.hyix"),
                             L().at("calibration.json")};
    if (fs::exists(L().at("gate.json"))) in.push_back(L().at("gate.json"));
    for (auto& p : encoder_inputs(cfg)) in.push_back(p);
    return in;
  }

  StageStatus evaluate() {
    const fs::path csv = L().reports() / "metrics.csv";
    const fs::path summary = L().reports() / "summary.json";
    const fs::path results = L().reports() / "results.jsonl";
    return runner.run(
        "evaluate", retrieval_inputs(), {csv, summary, results},
        cfg.section_hash({"retrieval", "encoder"}), [&] {
          auto a = load_artifacts(cfg, L());
          const auto rc = configured_retrieval(cfg, a);
          rc.validate(a.graph.size());
          const auto ctx = a.context();
          const auto test = split_queries(a.bench, benchmark::Split::test);
          evaluation::MetricReport rep;
          const std::string method = retrieval::to_string(rc.mode);
          auto res = run_queries(test, rc, ctx, *a.encoder, cfg.threads());
          add_to_report(rep, method, a.bench, test, entity_lists(res));
          auto base = run_queries(test, euclidean_baseline(rc), ctx, *a.encoder, cfg.threads());
          add_to_report(rep, "euclidean-text", a.bench, test, entity_lists(base));
          if (auto r = rep.retention(method, "euclidean-text", "QE"))
            rep.set_extra("qe_retention", evaluation::MetricReport::round6(*r));
          if (a.gate) rep.set_extra("gate", gate_metrics_json(evaluate_gate(*a.gate, test, *a.encoder)));
          rep.set_extra("temperatures", {{"tau_E", a.temps.tau_E}, {"tau_H", a.temps.tau_H}});
          rep.set_extra("test_queries", test.size());
          std::size_t empty = 0;
          for (const auto& r : res) empty += r.empty_pool ? 1 : 0;
          if (empty) log() << "  warning: " << empty << " queries had an empty candidate pool\n";
          write_with(csv, [&](std::ostream& o) { rep.write_csv(o); });
          write_file(summary, rep.to_json().dump(2) + "\n");
          write_with(results, [&](std::ostream& o) { retrieval::write_results_jsonl(res, o); });
          log() << "  " << method << " QE hits@10 " << rep.value(method, "QE", "hits@10") << "\n";
        });
  }

  /// Tangent query points: adapted test-split benchmark queries when a
  /// benchmark and adapter exist, otherwise the entity points themselves.
  std::vector<std::vector<double>> stress_queries(const ontology::OntologyGraph& g,
                                                  const training::EmbeddingTable& emb,
                                                  std::string& source) const {
    const auto cap = static_cast<std::size_t>(cfg.integer("stress.queries"));
    std::vector<std::vector<double>> out;
    if (fs::exists(L().at("queries.jsonl")) && fs::exists(L().at("adapter.json"))) {
      auto in = open_input(L().at("queries.jsonl"));
      auto bm = benchmark::read_benchmark(in, g);
      auto adapter = load_adapter(L().at("adapter.json"));
      auto enc = make_encoder(cfg);
      for (const auto* q : split_queries(bm, benchmark::Split::test)) {
        if (out.size() >= cap) break;
        out.push_back(encoding::adapter_tangent(adapter, enc->encode(q->query_id, q->text).coords));
      }
      source = "adapted test queries";
    }
    if (out.empty()) {
      for (std::size_t i = 0; i < emb.size() && out.size() < cap; ++i)
        out.emplace_back(emb.tangent(i).begin(), emb.tangent(i).end());
      source = "entity points";
    }
    return out;
  }

  StageStatus stress_test() {
    std::vector<fs::path> inputs{L().at("graph.jsonl"), L().at("embeddings.hyemb")};
    for (const char* opt : {"queries.jsonl", "adapter.json"})
      if (fs::exists(L().at(opt))) inputs.push_back(L().at(opt));
    const fs::path csv = L().reports() / "stress_sweep.csv";
    const fs::path summary = L().reports() / "stress_summary.json";
    return runner.run(
        "stress-test", inputs, {csv, summary}, cfg.section_hash({"stress", "index", "encoder"}), [&] {
          auto g = load_graph(L().at("graph.jsonl"));
          auto cp = load_embeddings_for(L().at("embeddings.hyemb"), g);
          const auto& emb = cp.embeddings;
          std::string source;
          auto qs = stress_queries(g, emb, source);
          index::IndexParams exact_p;
          exact_p.kind = index::IndexKind::exact;
          const auto d = static_cast<std::size_t>(emb.dim());
          auto exact = index::VectorIndex::build(identity_keys(emb.size()), emb.tangent_data(), d, exact_p);
          auto graph_p = cfg.index_params(index::Metric::l2);
          graph_p.kind = index::IndexKind::graph;
          auto graph = index::VectorIndex::build(identity_keys(emb.size()), emb.tangent_data(), d, graph_p);
          std::vector<std::size_t> Ls;
          for (double l : cfg.numbers("stress.L")) Ls.push_back(static_cast<std::size_t>(l));
          Ls.push_back(emb.size());
          const auto k = std::min<std::size_t>(static_cast<std::size_t>(cfg.integer("stress.k")), emb.size());
          const double R = cp.radius_budget > 0 ? cp.radius_budget : std::max(emb.max_radius(), 1e-9);
          auto sweep = evaluation::stress_sweep(emb, qs, R, Ls, k, exact, &graph, cfg.threads());
          write_with(csv, [&](std::ostream& o) { sweep.write_csv(o); });
          json rows = json::array();
          for (const auto& r : sweep.rows)
            if (r.source == "exact")
              rows.push_back({{"L", r.L}, {"recall", evaluation::MetricReport::round6(r.recall)}});
          write_file(summary, json{{"R", R},
                                   {"d", emb.dim()},
                                   {"k", k},
                                   {"L_th", sweep.L_th},
                                   {"kappa", geometry::kappa(R)},
                                   {"queries", qs.size()},
                                   {"query_source", source},
                                   {"max_radius", emb.max_radius()},
                                   {"recall", rows}}
                                  .dump(2) + "\n");
          for (const auto& r : sweep.rows)
            if (r.source == "exact") log() << "  L=" << r.L << " recall@" << k << " " << r.recall << "\n";
        });
  }

  StageStatus ablate();

  void theory_tables() {
    write_with(L().reports() / "kappa.csv", [](std::ostream& o) { evaluation::write_kappa_table(o); });
    write_with(L().reports() / "radius.csv", [](std::ostream& o) { evaluation::write_radius_table(o); });
    log() << "wrote " << (L().reports() / "kappa.csv").string() << " and "
          << (L().reports() / "radius.csv").string() << "\n";
  }

  /// Synthetic fixture end to end.
  void reproduce() {
    synth();
    gen_queries();
    train();
    gate_train();
    build_index();
    evaluate();
    stress_test();
    ablate();
    theory_tables();
  }
};

// ---------------------------------------------------------------------------
// Ablations

namespace detail {

/// Retrieval by L2 to the text-mapped query in the flat KG space.
inline std::vector<std::uint32_t> kg_rank(const training::KgModel& m, std::span<const double> e_q,
                                          std::size_t k) {
  const auto t = encoding::adapter_tangent(m.text_map, e_q);
  std::vector<std::pair<double, std::uint32_t>> d(m.ids.size());
  for (std::size_t i = 0; i < m.ids.size(); ++i) {
    double s = 0.0;
    auto z = m.vec(i);
    for (std::size_t j = 0; j < t.size(); ++j) s += (z[j] - t[j]) * (z[j] - t[j]);
    d[i] = {s, static_cast<std::uint32_t>(i)};
  }
  const std::size_t take = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), d.end());
  std::vector<std::uint32_t> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = d[i].second;
  return out;
}

}  // namespace detail

inline StageStatus Pipeline::ablate() {
  const fs::path R = L().reports();
  const std::vector<fs::path> outputs{R / "ablation.csv", R / "pooling.csv", R / "adapter.csv",
                                      R / "noise.csv",    R / "gate.csv",    R / "routing.csv",
                                      R / "ablation_summary.json"};
  return runner.run(
      "ablate", retrieval_inputs(), outputs,
      cfg.section_hash({"ablate", "retrieval", "train", "gate", "index", "encoder"}), [&] {
        auto a = load_artifacts(cfg, L());
        if (!a.gate) throw Error("ablate: missing input, expected " + L().at("gate.json").string());
        const auto rc = configured_retrieval(cfg, a);
        const auto ctx = a.context();
        const auto test = split_queries(a.bench, benchmark::Split::test);
        const std::size_t threads = cfg.threads();
        const std::size_t d = static_cast<std::size_t>(a.checkpoint.embeddings.dim());
        json summary;

        auto table = training::encode_entities(a.graph, *a.encoder);
        auto texts = training::align_texts(a.graph, table);

        // Mode matrix.
        evaluation::MetricReport modes;
        auto run_mode = [&](const std::string& name, retrieval::RetrievalConfig c,
                            const retrieval::RetrievalContext& cx) {
          auto res = run_queries(test, c, cx, *a.encoder, threads);
          add_to_report(modes, name, a.bench, test, entity_lists(res));
          return res;
        };
        auto eu = run_mode("euclidean-text", euclidean_baseline(rc), ctx);
        {
          auto c = rc;
          c.mode = retrieval::Mode::hyperbolic_only;
          run_mode("hyperbolic-only", c, ctx);
        }
        for (auto m : {retrieval::Mode::no_gate, retrieval::Mode::hard_route, retrieval::Mode::soft_mix}) {
          auto c = rc;
          c.mode = m;
          run_mode(retrieval::to_string(m), c, ctx);
        }
        log() << "  mode matrix done\n";
        {
          training::KgConfig kc;
          kc.dim = static_cast<int>(d);
          kc.epochs = static_cast<int>(cfg.integer("ablate.kg_epochs"));
          kc.seed = cfg.seed("ablate-kg");
          auto kg = training::train_kg_baseline(a.graph, texts, kc);
          std::vector<std::vector<std::uint32_t>> ranked(test.size());
          parallel_for(test.size(), threads, [&](std::size_t i) {
            ranked[i] = detail::kg_rank(kg, a.encoder->encode(test[i]->query_id, test[i]->text).coords, rc.k);
          });
          add_to_report(modes, "kg-euclidean", a.bench, test, ranked);
          log() << "  kg baseline done\n";
        }
        {
          auto tc = cfg.train();
          tc.lambda_radius = 0.0;
          tc.clip_after_step = false;
          auto nr = training::train_embeddings(a.graph, texts, tc);
          auto idx = index::VectorIndex::build(identity_keys(a.graph.size()), nr.embeddings.tangent_data(), d,
                                               cfg.index_params(index::Metric::l2));
          retrieval::RetrievalContext cx = ctx;
          cx.embeddings = &nr.embeddings;
          cx.tangent_index = &idx;
          cx.adapter = &nr.adapter;
          auto c = rc;
          c.mode = retrieval::Mode::no_gate;
          run_mode("no-radius", c, cx);
          summary["no_radius_max_radius"] = nr.embeddings.max_radius();
          summary["radius_budget"] = cfg.train().radius_budget;
          summary["max_radius"] = a.checkpoint.embeddings.max_radius();
          log() << "  no-radius model done\n";
        }
        if (auto r = modes.retention("soft-mix", "euclidean-text", "QE"))
          summary["qe_retention_soft_mix"] = evaluation::MetricReport::round6(*r);
        write_with(R / "ablation.csv", [&](std::ostream& o) { modes.write_csv(o); });

        // Pooling ablation.
        {
          evaluation::MetricReport pool;
          auto on = rc;
          on.mode = retrieval::Mode::soft_mix;
          on.pool_text_candidates = true;
          auto off = on;
          off.pool_text_candidates = false;
          add_to_report(pool, "pooled", a.bench, test, entity_lists(run_queries(test, on, ctx, *a.encoder, threads)));
          add_to_report(pool, "tangent-only", a.bench, test, entity_lists(run_queries(test, off, ctx, *a.encoder, threads)));
          std::ostringstream o;
          o << "family,hits@10_pooled,hits@10_tangent_only,relative_change\n";
          for (auto f : benchmark::kFamilies) {
            const auto fam = benchmark::to_string(f);
            const auto* p = pool.cell("pooled", fam);
            const auto* t = pool.cell("tangent-only", fam);
            if (!p || !t) continue;
            const double hp = p->get("hits@10"), ht = t->get("hits@10");
            o << fam << "," << evaluation::MetricReport::format_value(hp) << ","
              << evaluation::MetricReport::format_value(ht) << ","
              << (ht > 0 ? evaluation::MetricReport::format_value((hp - ht) / ht) : std::string("inf")) << "\n";
            if (f == benchmark::Family::qe)
              summary["pooling_qe_hits10"] = {{"pooled", hp}, {"tangent_only", ht}};
          }
          write_file(R / "pooling.csv", o.str());
        }

        // Adapter ablation.
        {
          evaluation::MetricReport ad;
          add_to_report(ad, "linear", a.bench, test, entity_lists(run_queries(test, rc, ctx, *a.encoder, threads)));
          auto tc = cfg.train();
          tc.adapter = encoding::AdapterVariant::two_layer;
          auto tl = training::train_embeddings(a.graph, texts, tc);
          auto idx = index::VectorIndex::build(identity_keys(a.graph.size()), tl.embeddings.tangent_data(), d,
                                               cfg.index_params(index::Metric::l2));
          retrieval::RetrievalContext cx = ctx;
          cx.embeddings = &tl.embeddings;
          cx.tangent_index = &idx;
          cx.adapter = &tl.adapter;
          add_to_report(ad, "two-layer", a.bench, test, entity_lists(run_queries(test, rc, cx, *a.encoder, threads)));
          write_with(R / "adapter.csv", [&](std::ostream& o) { ad.write_csv(o); });
          log() << "  adapter ablation done\n";
        }

        // Gate variants and noise.
        {
          std::ostringstream o;
          o << "gate,accuracy,precision,recall,auc\n";
          auto train_q = split_queries(a.bench, benchmark::Split::train);
          auto data = Pipeline::gate_examples(train_q, *a.encoder);
          json gates;
          for (auto v : {training::GateVariant::rule, training::GateVariant::linear,
                         training::GateVariant::two_layer}) {
            auto gc = cfg.gate();
            gc.variant = v;
            auto gate = v == a.gate->variant ? *a.gate : training::train_gate(data, gc);
            const auto m = evaluate_gate(gate, test, *a.encoder);
            o << training::to_string(v) << "," << evaluation::MetricReport::format_value(m.accuracy) << ","
              << evaluation::MetricReport::format_value(m.precision) << ","
              << evaluation::MetricReport::format_value(m.recall) << ","
              << (m.auc ? evaluation::MetricReport::format_value(*m.auc) : std::string("")) << "\n";
            gates[training::to_string(v)] = gate_metrics_json(m);
          }
          write_file(R / "gate.csv", o.str());
          summary["gates"] = gates;

          std::ostringstream n;
          n << "sigma,accuracy,auc\n";
          json noise = json::array();
          for (double s : cfg.numbers("ablate.noise")) {
            const auto m = evaluate_gate(*a.gate, test, *a.encoder, s, cfg.seed("ablate-noise"));
            n << evaluation::MetricReport::format_value(s) << ","
              << evaluation::MetricReport::format_value(m.accuracy) << ","
              << (m.auc ? evaluation::MetricReport::format_value(*m.auc) : std::string("")) << "\n";
            noise.push_back({{"sigma", s}, {"accuracy", evaluation::MetricReport::round6(m.accuracy)}});
          }
          write_file(R / "noise.csv", n.str());
          summary["noise"] = noise;
        }

        // Hard-routing risk decomposition with loss 1 - RR.
        {
          auto ch = rc;
          ch.mode = retrieval::Mode::hyperbolic_only;
          auto hres = run_queries(test, ch, ctx, *a.encoder, threads);
          std::vector<evaluation::RoutingCase> cases;
          for (std::size_t i = 0; i < test.size(); ++i) {
            if (test[i]->gate_label == benchmark::GateLabel::none) continue;
            auto rr = [&](const retrieval::RankedResult& r) {
              auto m = evaluation::hits_mrr_ndcg(r.entities(), test[i]->truth, rc.k);
              return m ? m->rr : 0.0;
            };
            evaluation::RoutingCase c;
            c.loss_E = 1.0 - rr(eu[i]);
            c.loss_H = 1.0 - rr(hres[i]);
            c.latent = c.loss_H <= c.loss_E ? evaluation::Geometry::H : evaluation::Geometry::E;
            const auto q = make_query(*test[i], *a.encoder);
            c.routed = retrieval::resolve_alpha(q, retrieval::Mode::hard_route, &*a.gate) >= 0.5
                           ? evaluation::Geometry::H
                           : evaluation::Geometry::E;
            cases.push_back(c);
          }
          std::ostringstream o;
          o << "routed,oracle,regret_H,regret_E,misroute_H,misroute_E,residual\n";
          if (!cases.empty()) {
            const auto r = evaluation::routing_risk_check(cases);
            o << evaluation::MetricReport::format_value(r.routed) << ","
              << evaluation::MetricReport::format_value(r.oracle) << ","
              << evaluation::MetricReport::format_value(r.regret_H) << ","
              << evaluation::MetricReport::format_value(r.regret_E) << ","
              << evaluation::MetricReport::format_value(r.misroute_H) << ","
              << evaluation::MetricReport::format_value(r.misroute_E) << "," << r.residual << "\n";
            summary["routing_residual"] = r.residual;
          }
          write_file(R / "routing.csv", o.str());
        }

        // Efficiency: sizes and latency (hardware dependent, kept out of the
        // deterministic reports).
        {
          json eff;
          eff["tangent_index_bytes"] = fs::file_size(L().at("tangent.hyix"));
          eff["text_index_bytes"] = fs::file_size(L().at("text.hyix"));
          const std::size_t n = std::min<std::size_t>(
              test.size(), static_cast<std::size_t>(cfg.integer("ablate.latency_queries")));
          const std::size_t warm = std::min<std::size_t>(100, n / 10);
          std::vector<retrieval::Query> qs;
          for (std::size_t i = 0; i < n; ++i) qs.push_back(make_query(*test[i], *a.encoder));
          for (auto m : {retrieval::Mode::euclidean_only, retrieval::Mode::no_gate,
                         retrieval::Mode::hard_route, retrieval::Mode::soft_mix}) {
            for (bool pooled : {true, false}) {
              auto c = m == retrieval::Mode::euclidean_only ? euclidean_baseline(rc) : rc;
              c.mode = m;
              c.pool_text_candidates = m == retrieval::Mode::euclidean_only ? true : pooled;
              if (m == retrieval::Mode::euclidean_only && !pooled) continue;
              const auto s = evaluation::measure_latency(n, warm, [&](std::size_t i) {
                (void)retrieval::retrieve(qs[i], c, ctx);
              });
              eff["latency_ms"][retrieval::to_string(m) + (pooled ? "" : "-no-pool")] = {
                  {"median", s.median_ms}, {"p90", s.p90_ms}, {"queries", s.measured}};
            }
          }
          write_file(R / "efficiency.json", eff.dump(2) + "\n");
        }
        write_file(R / "ablation_summary.json", summary.dump(2) + "\n");
      });
}

}  // namespace hyem::pipeline
