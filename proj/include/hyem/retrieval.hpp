#pragma once

/// Query pipeline: encode, adapt, gather candidates from the tangent and
/// text indexes, rerank with the gate-weighted mix of hyperbolic and
/// cosine scores.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hyem/encoding.hpp"
#include "hyem/error.hpp"
#include "hyem/geometry.hpp"
#include "hyem/index.hpp"
#include "hyem/ontology.hpp"
#include "hyem/training.hpp"
#include "hyem/util.hpp"

namespace hyem::retrieval {

enum class Mode { euclidean_only, hyperbolic_only, no_gate, hard_route, soft_mix };

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::euclidean_only: return "euclidean-only";
    case Mode::hyperbolic_only: return "hyperbolic-only";
    case Mode::no_gate: return "no-gate";
    case Mode::hard_route: return "hard-route";
    case Mode::soft_mix: return "soft-mix";
  }
  return "?";
}
inline Mode mode_from_string(std::string_view s) {
  for (Mode m : {Mode::euclidean_only, Mode::hyperbolic_only, Mode::no_gate, Mode::hard_route,
                 Mode::soft_mix})
    if (s == to_string(m)) return m;
  throw Error("unknown retrieval mode: " + std::string(s));
}

inline constexpr double kHardRouteThreshold = 0.5;

struct RetrievalConfig {
  std::size_t k = 10;
  std::size_t L_H = 50;
  std::size_t L_E = 50;
  Mode mode = Mode::soft_mix;
  bool pool_text_candidates = true;
  double tau_E = 1.0;
  double tau_H = 1.0;
  /// 0 lets the index pick max(64, 2L).
  std::size_t ef_search = 0;

  void validate(std::size_t corpus_size) const {
    if (k == 0) throw Error("retrieval config: k must be >= 1");
    if (!(tau_E > 0.0) || !(tau_H > 0.0)) throw Error("retrieval config: temperatures must be > 0");
    const std::size_t pool = L_H + (pool_text_candidates ? L_E : 0);
    if (k > std::min(pool, corpus_size))
      throw Error("retrieval config: k exceeds min(L_H + L_E, corpus size)");
  }
};

enum Provenance : std::uint8_t { kFromH = 1, kFromE = 2 };

inline std::string provenance_string(std::uint8_t p) {
  std::string s;
  if (p & kFromH) s += "H";
  if (p & kFromE) s += "E";
  return s;
}

struct Candidate {
  std::uint32_t entity = 0;
  std::uint8_t provenance = 0;
};

struct ScoredEntity {
  std::uint32_t entity = 0;
  std::string id;
  double s_E = 0.0;
  double s_H = 0.0;
  double score = 0.0;
  std::uint8_t provenance = 0;
};

struct RankedResult {
  std::string query_id;
  double alpha = 0.0;
  std::size_t pool_size = 0;
  bool empty_pool = false;
  std::vector<ScoredEntity> items;

  std::vector<std::uint32_t> entities() const {
    std::vector<std::uint32_t> out;
    out.reserve(items.size());
    for (const auto& it : items) out.push_back(it.entity);
    return out;
  }
};

/// Union of two candidate lists keyed by entity, ascending entity order,
/// provenance bits merged for overlaps.
inline std::vector<Candidate> pool_candidates(std::span<const std::uint32_t> from_h,
                                              std::span<const std::uint32_t> from_e) {
  std::vector<Candidate> out;
  out.reserve(from_h.size() + from_e.size());
  for (auto v : from_h) out.push_back({v, kFromH});
  for (auto v : from_e) out.push_back({v, kFromE});
  std::sort(out.begin(), out.end(),
            [](const Candidate& a, const Candidate& b) { return a.entity < b.entity; });
  std::vector<Candidate> merged;
  for (const auto& c : out) {
    if (!merged.empty() && merged.back().entity == c.entity)
      merged.back().provenance |= c.provenance;
    else
      merged.push_back(c);
  }
  return merged;
}

/// Text vectors searchable by the text index: one row per entity (its
/// entity text) plus optional alias rows (first synonym) for the same entity.
struct TextCorpus {
  int dim = 0;
  std::vector<double> flat;
  std::vector<std::uint32_t> row_entity;
  std::vector<std::vector<std::uint32_t>> entity_rows;

  std::size_t rows() const noexcept { return row_entity.size(); }
  std::span<const double> row(std::size_t r) const {
    return {flat.data() + r * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
  std::vector<std::uint32_t> keys() const {
    std::vector<std::uint32_t> k(rows());
    for (std::size_t i = 0; i < k.size(); ++i) k[i] = static_cast<std::uint32_t>(i);
    return k;
  }
};

inline TextCorpus make_text_corpus(const ontology::OntologyGraph& g,
                                   const encoding::TextEncoder& encoder, bool with_aliases) {
  TextCorpus c;
  c.dim = encoder.dim();
  c.entity_rows.resize(g.size());
  auto add = [&](std::uint32_t v, const encoding::TextEmbedding& e) {
    c.entity_rows[v].push_back(static_cast<std::uint32_t>(c.row_entity.size()));
    c.row_entity.push_back(v);
    c.flat.insert(c.flat.end(), e.coords.begin(), e.coords.end());
  };
  for (std::uint32_t v = 0; v < g.size(); ++v) {
    const auto& node = g.node(v);
    add(v, encoder.encode(node.id, encoding::entity_text(node)));
  }
  if (with_aliases) {
    for (std::uint32_t v = 0; v < g.size(); ++v) {
      const auto& node = g.node(v);
      if (!node.synonyms.empty())
        add(v, encoder.encode(node.id + "#alias", node.synonyms.front()));
    }
  }
  return c;
}

/// Built artifacts shared by every query. All members are read-only.
struct RetrievalContext {
  const training::EmbeddingTable* embeddings = nullptr;
  const index::VectorIndex* tangent_index = nullptr;  // keys = entity positions
  const index::VectorIndex* text_index = nullptr;     // keys = corpus rows
  const TextCorpus* corpus = nullptr;
  const encoding::AdapterParams* adapter = nullptr;
  const training::GateParams* gate = nullptr;
};

struct Query {
  std::string id;
  std::string text;
  encoding::TextEmbedding embedding;
};

inline double resolve_alpha(const Query& q, Mode mode, const training::GateParams* gate) {
  switch (mode) {
    case Mode::euclidean_only: return 0.0;
    case Mode::hyperbolic_only:
    case Mode::no_gate: return 1.0;
    case Mode::hard_route:
    case Mode::soft_mix: {
      if (!gate) throw Error("retrieval: mode " + to_string(mode) + " requires a gate");
      const double a = training::gate_alpha(*gate, q.embedding.coords, q.text);
      if (mode == Mode::hard_route) return a >= kHardRouteThreshold ? 1.0 : 0.0;
      return a;
    }
  }
  return 0.0;
}

/// Highest cosine between the query and any text row of the entity.
inline double text_score(const TextCorpus& corpus, std::uint32_t entity,
                         std::span<const double> e_q) {
  double best = -1.0;
  for (auto r : corpus.entity_rows.at(entity))
    best = std::max(best, encoding::cosine(e_q, corpus.row(r)));
  return best;
}

/// alpha * s_H / tau_H + (1 - alpha) * s_E / tau_E.
inline double mixed_score(double alpha, double s_H, double s_E, double tau_H, double tau_E) {
  return alpha * (s_H / tau_H) + (1.0 - alpha) * (s_E / tau_E);
}

/// Orders by score descending, ties by ascending entity position.
inline void sort_ranked(std::vector<ScoredEntity>& items) {
  std::sort(items.begin(), items.end(), [](const ScoredEntity& a, const ScoredEntity& b) {
    return a.score != b.score ? a.score > b.score : a.entity < b.entity;
  });
}

/// Scores a fixed candidate pool; `alpha` is used as given.
inline std::vector<ScoredEntity> score_pool(const std::vector<Candidate>& pool, double alpha,
                                            std::span<const double> x_q,
                                            std::span<const double> e_q,
                                            const RetrievalConfig& cfg,
                                            const RetrievalContext& ctx) {
  std::vector<ScoredEntity> items;
  items.reserve(pool.size());
  for (const auto& c : pool) {
    ScoredEntity s;
    s.entity = c.entity;
    s.id = ctx.embeddings->ids()[c.entity];
    s.provenance = c.provenance;
    s.s_H = -geometry::lorentz_distance(x_q, ctx.embeddings->point(c.entity));
    s.s_E = text_score(*ctx.corpus, c.entity, e_q);
    s.score = mixed_score(alpha, s.s_H, s.s_E, cfg.tau_H, cfg.tau_E);
    items.push_back(std::move(s));
  }
  sort_ranked(items);
  return items;
}

struct QueryPoints {
  std::vector<double> tangent;
  std::vector<double> point;
};

inline QueryPoints adapt_query(const Query& q, const encoding::AdapterParams& adapter) {
  QueryPoints p;
  p.tangent = encoding::adapter_tangent(adapter, q.embedding.coords);
  p.point.resize(p.tangent.size() + 1);
  geometry::exp0_into(p.tangent, p.point);
  return p;
}

/// Candidate pool for a query before reranking.
inline std::vector<Candidate> gather_candidates(const Query& q, const QueryPoints& qp,
                                                const RetrievalConfig& cfg,
                                                const RetrievalContext& ctx) {
  std::vector<std::uint32_t> from_h, from_e;
  if (cfg.L_H > 0) {
    if (!ctx.tangent_index) throw Error("retrieval: tangent index missing");
    for (const auto& hit : ctx.tangent_index->search(qp.tangent, cfg.L_H, cfg.ef_search))
      from_h.push_back(hit.key);
  }
  const bool use_e = cfg.pool_text_candidates && cfg.mode != Mode::hyperbolic_only && cfg.L_E > 0;
  if (use_e) {
    if (!ctx.text_index) throw Error("retrieval: text index missing");
    for (const auto& hit : ctx.text_index->search(q.embedding.coords, cfg.L_E, cfg.ef_search))
      from_e.push_back(ctx.corpus->row_entity.at(hit.key));
  }
  return pool_candidates(from_h, from_e);
}

inline RankedResult retrieve(const Query& q, const RetrievalConfig& cfg,
                             const RetrievalContext& ctx) {
  if (!ctx.embeddings || !ctx.corpus || !ctx.adapter)
    throw Error("retrieval: context is incomplete");
  RankedResult r;
  r.query_id = q.id;
  r.alpha = resolve_alpha(q, cfg.mode, ctx.gate);
  const QueryPoints qp = adapt_query(q, *ctx.adapter);
  const auto pool = gather_candidates(q, qp, cfg, ctx);
  r.pool_size = pool.size();
  if (pool.empty()) {
    r.empty_pool = true;
    return r;
  }
  r.items = score_pool(pool, r.alpha, qp.point, q.embedding.coords, cfg, ctx);
  if (r.items.size() > cfg.k) r.items.resize(cfg.k);
  return r;
}

struct Temperatures {
  double tau_E = 1.0;
  double tau_H = 1.0;
  bool defaulted = false;
};

/// tau_E = 1 and tau_H = median positive-pair distance, so the median
/// scaled positive score is -1.
inline Temperatures calibrate_temperatures(std::span<const double> positive_distances) {
  Temperatures t;
  if (positive_distances.empty()) {
    t.defaulted = true;
    return t;
  }
  const double m = median(std::vector<double>(positive_distances.begin(), positive_distances.end()));
  if (!(m > 0.0)) {
    t.defaulted = true;
    return t;
  }
  t.tau_H = m;
  return t;
}

inline Temperatures calibrate_temperatures(
    const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
    const training::EmbeddingTable& emb) {
  std::vector<double> d;
  d.reserve(pairs.size());
  for (const auto& [p, c] : pairs) d.push_back(emb.distance(p, c));
  return calibrate_temperatures(d);
}

inline nlohmann::json result_to_json(const RankedResult& r) {
  nlohmann::json items = nlohmann::json::array();
  for (const auto& it : r.items)
    items.push_back({{"id", it.id}, {"s_E", it.s_E}, {"s_H", it.s_H}, {"score", it.score},
                     {"provenance", provenance_string(it.provenance)}});
  return {{"query_id", r.query_id}, {"alpha", r.alpha}, {"results", items}};
}

inline void write_results_jsonl(const std::vector<RankedResult>& results, std::ostream& out) {
  for (const auto& r : results) out << result_to_json(r).dump() << "\n";
}

}  // namespace hyem::retrieval
