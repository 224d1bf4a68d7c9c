#pragma once

/// Template-generated query benchmark over an ontology: entity-centric
/// (Q-E), taxonomy-navigation (Q-H) and mixed-intent (Q-M) families,
/// entity-level splits, depth buckets and query-embedding noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "hyem/encoding.hpp"
#include "hyem/error.hpp"
#include "hyem/ontology.hpp"
#include "hyem/util.hpp"

namespace hyem::benchmark {

using ontology::NodeIndex;
using ontology::OntologyGraph;

enum class Family { qe, qh_parent, qh_children, qh_ancestor, qh_descendant, qm };
enum class Split { train, val, test };
enum class GateLabel { h, e, none };

inline constexpr std::array<Family, 6> kFamilies = {Family::qe,          Family::qh_parent,
                                                    Family::qh_children, Family::qh_ancestor,
                                                    Family::qh_descendant, Family::qm};

inline std::string to_string(Family f) {
  switch (f) {
    case Family::qe: return "QE";
    case Family::qh_parent: return "QH-parent";
    case Family::qh_children: return "QH-children";
    case Family::qh_ancestor: return "QH-ancestor";
    case Family::qh_descendant: return "QH-descendant";
    case Family::qm: return "QM";
  }
  return "?";
}
inline std::string to_string(Split s) {
  return s == Split::train ? "train" : s == Split::val ? "val" : "test";
}
inline std::string to_string(GateLabel g) {
  return g == GateLabel::h ? "H" : g == GateLabel::e ? "E" : "none";
}
inline Family family_from_string(std::string_view s) {
  for (Family f : kFamilies)
    if (s == to_string(f)) return f;
  throw Error("unknown query family: " + std::string(s));
}
inline Split split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error("unknown split: " + std::string(s));
}
inline GateLabel gate_label_from_string(std::string_view s) {
  if (s == "H") return GateLabel::h;
  if (s == "E") return GateLabel::e;
  if (s == "none") return GateLabel::none;
  throw Error("unknown gate label: " + std::string(s));
}
inline bool is_hierarchical(Family f) { return f != Family::qe && f != Family::qm; }

struct QueryRecord {
  std::string query_id;
  std::string text;
  Family family = Family::qe;
  NodeIndex source = 0;
  std::vector<NodeIndex> truth;  // ascending
  int depth_bucket = 0;
  Split split = Split::train;
  GateLabel gate_label = GateLabel::none;
};

// ---------------------------------------------------------------------------
// Splits and buckets

using SplitMap = std::vector<Split>;

/// Seeded uniform split: shuffled indices, the first round(r0 n) train, the
/// next round(r1 n) validation, the rest test.
inline SplitMap split_entities(std::size_t n, std::array<double, 3> ratios, std::uint64_t seed) {
  for (double r : ratios)
    if (r < 0.0) throw Error("split ratios must be non-negative");
  if (std::abs(ratios[0] + ratios[1] + ratios[2] - 1.0) > 1e-9)
    throw Error("split ratios must sum to 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(ratios[0] * static_cast<double>(n))));
  const auto n_val = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(ratios[1] * static_cast<double>(n))));
  SplitMap out(n, Split::test);
  for (std::size_t i = 0; i < n; ++i)
    out[order[i]] = i < n_train ? Split::train : i < n_train + n_val ? Split::val : Split::test;
  return out;
}

/// Depth buckets given by ascending lower bounds; bucket i covers
/// [bounds[i], bounds[i+1]). Depths below bounds[0] (including unreachable
/// nodes) fall into bucket 0.
struct DepthBuckets {
  std::vector<int> lower_bounds{0};

  int bucket_of(int depth) const {
    int b = 0;
    for (std::size_t i = 1; i < lower_bounds.size(); ++i)
      if (depth >= lower_bounds[i]) b = static_cast<int>(i);
    return b;
  }
  std::size_t count() const noexcept { return lower_bounds.size(); }
  std::string label(std::size_t i) const {
    const int lo = lower_bounds.at(i);
    if (i + 1 == lower_bounds.size()) return std::to_string(lo) + "+";
    const int hi = lower_bounds[i + 1] - 1;
    return lo == hi ? std::to_string(lo) : std::to_string(lo) + "-" + std::to_string(hi);
  }
};

inline DepthBuckets explicit_buckets(std::vector<int> lower_bounds) {
  if (lower_bounds.empty()) throw Error("depth buckets: need at least one boundary");
  std::sort(lower_bounds.begin(), lower_bounds.end());
  lower_bounds.erase(std::unique(lower_bounds.begin(), lower_bounds.end()), lower_bounds.end());
  return DepthBuckets{std::move(lower_bounds)};
}

/// Quantile buckets: lower bounds at sorted depth positions floor(i n / B),
/// duplicates merged, so a single-depth graph gets one bucket.
inline DepthBuckets depth_buckets(const OntologyGraph& g, std::size_t bucket_count) {
  if (bucket_count == 0) throw Error("depth buckets: bucket count must be >= 1");
  std::vector<int> depths;
  for (int d : g.depths())
    if (d >= 0) depths.push_back(d);
  if (depths.empty()) return {};
  std::sort(depths.begin(), depths.end());
  std::vector<int> bounds;
  for (std::size_t i = 0; i < bucket_count; ++i)
    bounds.push_back(depths[i * depths.size() / bucket_count]);
  return explicit_buckets(std::move(bounds));
}

// ---------------------------------------------------------------------------
// Noise

/// e + sigma z with z ~ N(0, I) drawn from `seed`; renormalised when the
/// input is unit-norm. The same seed gives the same z for every sigma.
inline encoding::TextEmbedding perturb_embedding(const encoding::TextEmbedding& e, double sigma,
                                                 std::uint64_t seed) {
  if (sigma < 0.0) throw Error("perturb: sigma must be >= 0");
  if (sigma == 0.0) return e;
  encoding::TextEmbedding out = e;
  Rng rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  for (double& x : out.coords) x += sigma * z(rng);
  if (e.unit_normalized) encoding::normalize_in_place(out.coords);
  return out;
}

// ---------------------------------------------------------------------------
// Generation

struct FamilyCaps {
  int qe_synonym = 1;
  int qe_template = 1;
  int qh_each = 1;
  int qm = 1;
};

struct GenerationStats {
  std::size_t skipped_no_parent = 0;
  std::size_t skipped_no_children = 0;
  std::size_t skipped_no_extra_descendants = 0;
  std::size_t skipped_no_synonym = 0;
  std::size_t skipped_leakage = 0;
  std::size_t skipped_no_sibling = 0;
};

struct Benchmark {
  std::vector<QueryRecord> queries;
  SplitMap splits;
  DepthBuckets buckets;
  std::uint64_t seed = 0;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  std::string graph_checksum;
  GenerationStats stats;
};

inline std::string graph_checksum(const OntologyGraph& g) {
  std::ostringstream s;
  ontology::write_graph_jsonl(g, s);
  return hex64(fnv1a64(s.str()));
}

/// Nodes sharing at least one parent with v and lying in v's depth bucket.
inline std::vector<NodeIndex> same_bucket_siblings(const OntologyGraph& g, NodeIndex v,
                                                   const DepthBuckets& buckets) {
  std::set<NodeIndex> sib;
  const int b = buckets.bucket_of(g.depth(v));
  for (NodeIndex p : g.parents(v))
    for (NodeIndex c : g.children(p))
      if (c != v && buckets.bucket_of(g.depth(c)) == b) sib.insert(c);
  return {sib.begin(), sib.end()};
}

struct GenerationConfig {
  std::uint64_t seed = 0;
  std::array<double, 3> split_ratios{0.8, 0.1, 0.1};
  std::size_t bucket_count = 4;
  /// When non-empty, overrides quantile buckets.
  std::vector<int> bucket_bounds;
  FamilyCaps caps;
};

/// Instantiates the fixed template set for every entity in id order.
/// Q-E uses the entity's second-or-later synonym because the first is
/// indexed as a retrievable alias.
inline Benchmark gen_queries(const OntologyGraph& g, const GenerationConfig& cfg) {
  Benchmark bm;
  bm.seed = cfg.seed;
  bm.split_ratios = cfg.split_ratios;
  bm.graph_checksum = graph_checksum(g);
  bm.splits = split_entities(g.size(), cfg.split_ratios, derive_seed(cfg.seed, "split"));
  bm.buckets = cfg.bucket_bounds.empty() ? depth_buckets(g, cfg.bucket_count)
                                         : explicit_buckets(cfg.bucket_bounds);
  Rng rng(derive_seed(cfg.seed, "queries"));
  std::map<std::string, Split> synonym_split;

  auto emit = [&](NodeIndex v, Family f, std::string text, std::vector<NodeIndex> truth) {
    QueryRecord q;
    q.family = f;
    q.source = v;
    q.text = std::move(text);
    q.truth = std::move(truth);
    q.depth_bucket = bm.buckets.bucket_of(g.depth(v));
    q.split = bm.splits[v];
    q.gate_label = f == Family::qe ? GateLabel::e : f == Family::qm ? GateLabel::none : GateLabel::h;
    bm.queries.push_back(std::move(q));
  };

  for (NodeIndex v = 0; v < g.size(); ++v) {
    const auto& node = g.node(v);
    const std::string& label = node.label;

    for (int i = 0; i < cfg.caps.qe_synonym; ++i) {
      if (node.synonyms.size() < 2) {
        ++bm.stats.skipped_no_synonym;
        break;
      }
      const auto& syn = node.synonyms[1 + rng() % (node.synonyms.size() - 1)];
      auto [it, inserted] = synonym_split.emplace(syn, bm.splits[v]);
      if (!inserted && it->second != bm.splits[v]) {
        ++bm.stats.skipped_leakage;
        break;
      }
      emit(v, Family::qe, syn, {v});
    }
    for (int i = 0; i < cfg.caps.qe_template; ++i) {
      const bool define = rng() % 2 == 1;
      emit(v, Family::qe, define ? "Define " + label + "." : "What is " + label + "?", {v});
    }

    if (cfg.caps.qh_each > 0) {
      const auto& pa = g.parents(v);
      if (pa.empty())
        ++bm.stats.skipped_no_parent;
      else
        emit(v, Family::qh_parent, "What is the parent of " + label + "?", pa);
      const auto& ch = g.children(v);
      if (ch.empty())
        ++bm.stats.skipped_no_children;
      else
        emit(v, Family::qh_children, "What are subtypes of " + label + "?", ch);
      if (!pa.empty()) emit(v, Family::qh_ancestor, "What are ancestors of " + label + "?", g.ancestors(v));
      if (!ch.empty()) {
        auto des = g.descendants(v);
        if (des.size() > ch.size())
          emit(v, Family::qh_descendant, "What are subtypes of " + label + "?", std::move(des));
        else
          ++bm.stats.skipped_no_extra_descendants;
      }
    }

    for (int i = 0; i < cfg.caps.qm; ++i) {
      auto sib = same_bucket_siblings(g, v, bm.buckets);
      if (sib.empty()) {
        ++bm.stats.skipped_no_sibling;
        break;
      }
      const bool similar = rng() % 2 == 0;
      emit(v, Family::qm,
           similar ? "Concepts similar to " + label + " at the same specificity."
                   : "Siblings of " + label + " in the ontology.",
           std::move(sib));
    }
  }
  for (std::size_t i = 0; i < bm.queries.size(); ++i) {
    std::string n = std::to_string(i);
    bm.queries[i].query_id = "q" + std::string(n.size() < 6 ? 6 - n.size() : 0, '0') + n;
  }
  return bm;
}

// ---------------------------------------------------------------------------
// File format

inline constexpr std::string_view kBenchmarkFormat = "hyem-bench-v1";

inline void write_benchmark(const Benchmark& bm, const OntologyGraph& g, std::ostream& out) {
  std::map<std::string, std::size_t> counts;
  for (const auto& q : bm.queries) ++counts[to_string(q.family)];
  const auto& s = bm.stats;
  out << nlohmann::json{{"format", kBenchmarkFormat},
                        {"graph_checksum", bm.graph_checksum},
                        {"seed", bm.seed},
                        {"split_ratios", bm.split_ratios},
                        {"bucket_bounds", bm.buckets.lower_bounds},
                        {"counts", counts},
                        {"skipped",
                         {{"no_parent", s.skipped_no_parent},
                          {"no_children", s.skipped_no_children},
                          {"no_extra_descendants", s.skipped_no_extra_descendants},
                          {"no_synonym", s.skipped_no_synonym},
                          {"leakage", s.skipped_leakage},
                          {"no_sibling", s.skipped_no_sibling}}}}
             .dump()
      << "\n";
  for (const auto& q : bm.queries) {
    std::vector<std::string> truth;
    for (NodeIndex t : q.truth) truth.push_back(g.node(t).id);
    out << nlohmann::json{{"query_id", q.query_id},
                          {"text", q.text},
                          {"family", to_string(q.family)},
                          {"source", g.node(q.source).id},
                          {"truth", truth},
                          {"depth_bucket", q.depth_bucket},
                          {"split", to_string(q.split)},
                          {"gate_label", to_string(q.gate_label)}}
               .dump()
        << "\n";
  }
}

/// Reads a benchmark written for `g`; a checksum mismatch is an error.
inline Benchmark read_benchmark(std::istream& in, const OntologyGraph& g) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty benchmark file", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), 1);
  }
  if (header.value("format", "") != kBenchmarkFormat) throw ParseError("expected hyem-bench-v1", 1);
  Benchmark bm;
  bm.seed = header.at("seed").get<std::uint64_t>();
  bm.graph_checksum = header.at("graph_checksum").get<std::string>();
  if (bm.graph_checksum != graph_checksum(g))
    throw Error("benchmark was generated for a different graph (checksum mismatch)");
  bm.buckets = explicit_buckets(header.at("bucket_bounds").get<std::vector<int>>());
  bm.split_ratios = header.at("split_ratios").get<std::array<double, 3>>();
  bm.splits = split_entities(g.size(), bm.split_ratios, derive_seed(bm.seed, "split"));
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      QueryRecord q;
      q.query_id = rec.at("query_id").get<std::string>();
      q.text = rec.at("text").get<std::string>();
      q.family = family_from_string(rec.at("family").get<std::string>());
      q.source = g.at(rec.at("source").get<std::string>());
      for (const auto& t : rec.at("truth")) q.truth.push_back(g.at(t.get<std::string>()));
      std::sort(q.truth.begin(), q.truth.end());
      q.depth_bucket = rec.at("depth_bucket").get<int>();
      q.split = split_from_string(rec.at("split").get<std::string>());
      q.gate_label = gate_label_from_string(rec.at("gate_label").get<std::string>());
      if (bm.splits[q.source] != q.split)
        throw Error("query " + q.query_id + " disagrees with the entity split");
      bm.queries.push_back(std::move(q));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return bm;
}

}  // namespace hyem::benchmark
