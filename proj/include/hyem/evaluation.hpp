#pragma once

/// Metrics and experiment drivers: ranking metrics, ancestor-set F1,
/// indexability recall and the oversampling sweep, gate metrics, the
/// hard-routing risk decomposition, latency probes and theory tables.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "hyem/benchmark.hpp"
#include "hyem/error.hpp"
#include "hyem/geometry.hpp"
#include "hyem/index.hpp"
#include "hyem/training.hpp"
#include "hyem/util.hpp"

namespace hyem::evaluation {

using Id = std::uint32_t;

inline bool contains_sorted(std::span<const Id> sorted, Id v) {
  return std::binary_search(sorted.begin(), sorted.end(), v);
}

// ---------------------------------------------------------------------------
// Ranking metrics

struct RankMetrics {
  double hits = 0.0;
  double rr = 0.0;
  double ndcg = 0.0;
};

/// Multi-label Hits@k, reciprocal rank of the first relevant item, and
/// binary-relevance nDCG@k. `truth` must be sorted; nullopt when it is empty.
inline std::optional<RankMetrics> hits_mrr_ndcg(std::span<const Id> ranked,
                                                std::span<const Id> truth, std::size_t k) {
  if (truth.empty()) return std::nullopt;
  if (k == 0) throw Error("metrics: k must be >= 1");
  RankMetrics m;
  double dcg = 0.0;
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    if (!contains_sorted(truth, ranked[i])) continue;
    if (m.rr == 0.0) m.rr = 1.0 / static_cast<double>(i + 1);
    if (i < k) {
      m.hits = 1.0;
      dcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
    }
  }
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, truth.size()); ++i)
    idcg += 1.0 / std::log2(static_cast<double>(i) + 2.0);
  m.ndcg = dcg / idcg;
  return m;
}

struct SetMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::size_t overlap = 0;
  std::size_t retrieved = 0;
  std::size_t relevant = 0;
};

inline double f1_of(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

/// Precision/recall/F1 of the top-k against the ancestor set; nullopt for
/// an empty ancestor set.
inline std::optional<SetMetrics> ancestor_f1(std::span<const Id> ranked, std::span<const Id> ancestors,
                                             std::size_t k) {
  if (k == 0) throw Error("ancestor_f1: k must be >= 1");
  if (ancestors.empty()) return std::nullopt;
  SetMetrics s;
  s.retrieved = std::min(k, ranked.size());
  s.relevant = ancestors.size();
  for (std::size_t i = 0; i < s.retrieved; ++i)
    if (contains_sorted(ancestors, ranked[i])) ++s.overlap;
  s.precision = s.retrieved ? static_cast<double>(s.overlap) / static_cast<double>(s.retrieved) : 0.0;
  s.recall = static_cast<double>(s.overlap) / static_cast<double>(s.relevant);
  s.f1 = f1_of(s.precision, s.recall);
  return s;
}

/// |T_k intersect C| / k where T_k is the exact top-k.
inline double indexability_recall(std::span<const Id> true_topk, std::span<const Id> pool,
                                  std::size_t k) {
  if (k == 0) throw Error("indexability_recall: k must be >= 1");
  if (true_topk.size() < k) throw Error("indexability_recall: corpus smaller than k");
  std::vector<Id> c(pool.begin(), pool.end());
  std::sort(c.begin(), c.end());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < k; ++i)
    if (contains_sorted(c, true_topk[i])) ++hit;
  return static_cast<double>(hit) / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Gate metrics

struct GateMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::optional<double> auc;
  std::size_t count = 0;
};

/// Mann-Whitney AUC with tied scores sharing the average rank.
inline std::optional<double> auc(std::span<const double> scores, const std::vector<bool>& labels) {
  const std::size_t n = scores.size();
  std::size_t pos = 0;
  for (bool l : labels) pos += l ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) rank[order[t]] = avg;
    i = j + 1;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (labels[i]) sum += rank[i];
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (sum - p * (p + 1.0) / 2.0) / (p * q);
}

/// Positive class is Q-H (label true); predictions are alpha >= threshold.
inline GateMetrics gate_metrics(std::span<const double> alphas, const std::vector<bool>& labels,
                                double threshold = 0.5) {
  if (alphas.size() != labels.size()) throw Error("gate_metrics: size mismatch");
  GateMetrics m;
  m.count = alphas.size();
  std::size_t tp = 0, fp = 0, fn = 0, correct = 0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    const bool pred = alphas[i] >= threshold;
    if (pred == labels[i]) ++correct;
    if (pred && labels[i]) ++tp;
    if (pred && !labels[i]) ++fp;
    if (!pred && labels[i]) ++fn;
  }
  m.accuracy = m.count ? static_cast<double>(correct) / static_cast<double>(m.count) : 0.0;
  m.precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  m.recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  m.auc = auc(alphas, labels);
  return m;
}

// ---------------------------------------------------------------------------
// Routing risk

enum class Geometry { H, E };

struct RoutingCase {
  double loss_E = 0.0;
  double loss_H = 0.0;
  Geometry latent = Geometry::H;  // the geometry with the smaller loss
  Geometry routed = Geometry::H;
};

struct RoutingRisk {
  double routed = 0.0;       // E[loss of the routed geometry]
  double oracle = 0.0;       // E[min loss]
  double regret_H = 0.0;     // E[Delta_H 1{Z=H, routed E}]
  double regret_E = 0.0;     // E[Delta_E 1{Z=E, routed H}]
  double residual = 0.0;     // |routed - (oracle + regret_H + regret_E)|
  double misroute_H = 0.0;   // P(Z=H, routed E)
  double misroute_E = 0.0;   // P(Z=E, routed H)
};

/// Evaluates both sides of the hard-router decomposition. Latent labels
/// must name a geometry whose loss is minimal (ties allowed).
inline RoutingRisk routing_risk_check(std::span<const RoutingCase> cases) {
  if (cases.empty()) throw Error("routing_risk_check: no queries");
  RoutingRisk r;
  const double inv = 1.0 / static_cast<double>(cases.size());
  for (const auto& c : cases) {
    const double mn = std::min(c.loss_E, c.loss_H);
    const double latent_loss = c.latent == Geometry::H ? c.loss_H : c.loss_E;
    if (latent_loss != mn) throw Error("routing_risk_check: latent label is not the better geometry");
    r.routed += (c.routed == Geometry::H ? c.loss_H : c.loss_E) * inv;
    r.oracle += mn * inv;
    if (c.latent == Geometry::H && c.routed == Geometry::E) {
      r.regret_H += (c.loss_E - c.loss_H) * inv;
      r.misroute_H += inv;
    }
    if (c.latent == Geometry::E && c.routed == Geometry::H) {
      r.regret_E += (c.loss_H - c.loss_E) * inv;
      r.misroute_E += inv;
    }
  }
  r.residual = std::abs(r.routed - (r.oracle + r.regret_H + r.regret_E));
  return r;
}

// ---------------------------------------------------------------------------
// Aggregated reports

/// Running sums for one (method, family, bucket) cell.
struct MetricCell {
  std::size_t count = 0;
  std::size_t skipped = 0;
  double hits1 = 0, hits5 = 0, hits10 = 0, mrr = 0, ndcg10 = 0;
  std::size_t f1_count = 0;
  double macro_f1 = 0;
  std::size_t micro_overlap = 0, micro_retrieved = 0, micro_relevant = 0;

  void add(std::span<const Id> ranked, std::span<const Id> truth, std::span<const Id> ancestors) {
    auto m10 = hits_mrr_ndcg(ranked, truth, 10);
    if (!m10) {
      ++skipped;
      return;
    }
    ++count;
    hits1 += hits_mrr_ndcg(ranked, truth, 1)->hits;
    hits5 += hits_mrr_ndcg(ranked, truth, 5)->hits;
    hits10 += m10->hits;
    mrr += m10->rr;
    ndcg10 += m10->ndcg;
    if (auto f = ancestor_f1(ranked, ancestors, 10)) {
      ++f1_count;
      macro_f1 += f->f1;
      micro_overlap += f->overlap;
      micro_retrieved += f->retrieved;
      micro_relevant += f->relevant;
    }
  }

  std::vector<std::pair<std::string, double>> values() const {
    const double n = count ? static_cast<double>(count) : 1.0;
    std::vector<std::pair<std::string, double>> v = {
        {"hits@1", hits1 / n}, {"hits@5", hits5 / n},   {"hits@10", hits10 / n},
        {"mrr", mrr / n},      {"ndcg@10", ndcg10 / n}};
    if (f1_count) {
      const double p = micro_retrieved ? static_cast<double>(micro_overlap) / static_cast<double>(micro_retrieved) : 0.0;
      const double r = micro_relevant ? static_cast<double>(micro_overlap) / static_cast<double>(micro_relevant) : 0.0;
      v.emplace_back("macro_f1", macro_f1 / static_cast<double>(f1_count));
      v.emplace_back("micro_f1", f1_of(p, r));
    }
    return v;
  }
  double get(const std::string& name) const {
    for (const auto& [k, v] : values())
      if (k == name) return v;
    throw Error("unknown metric: " + name);
  }
};

/// Keyed by (method, family, bucket label); bucket "all" aggregates buckets.
class MetricReport {
 public:
  using Key = std::tuple<std::string, std::string, std::string>;

  void add(const std::string& method, const std::string& family, const std::string& bucket,
           std::span<const Id> ranked, std::span<const Id> truth, std::span<const Id> ancestors) {
    cells_[{method, family, bucket}].add(ranked, truth, ancestors);
    cells_[{method, family, "all"}].add(ranked, truth, ancestors);
  }

  const MetricCell* cell(const std::string& method, const std::string& family,
                         const std::string& bucket = "all") const {
    auto it = cells_.find({method, family, bucket});
    return it == cells_.end() ? nullptr : &it->second;
  }
  double value(const std::string& method, const std::string& family, const std::string& metric,
               const std::string& bucket = "all") const {
    const auto* c = cell(method, family, bucket);
    if (!c) throw Error("no metrics for " + method + "/" + family + "/" + bucket);
    return c->get(metric);
  }

  /// method MRR / baseline MRR for one family.
  std::optional<double> retention(const std::string& method, const std::string& baseline,
                                  const std::string& family) const {
    const auto* a = cell(method, family);
    const auto* b = cell(baseline, family);
    if (!a || !b) return std::nullopt;
    const double base = b->get("mrr");
    if (!(base > 0.0)) return std::nullopt;
    return a->get("mrr") / base;
  }

  void set_extra(const std::string& key, nlohmann::json value) { extra_[key] = std::move(value); }

  void write_csv(std::ostream& out) const {
    out << "method,family,bucket,metric,value,count\n";
    for (const auto& [key, cell] : cells_) {
      const auto& [method, family, bucket] = key;
      for (const auto& [metric, value] : cell.values())
        out << method << "," << family << "," << bucket << "," << metric << ","
            << format_value(value) << "," << cell.count << "\n";
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [key, cell] : cells_) {
      const auto& [method, family, bucket] = key;
      if (bucket != "all") continue;
      nlohmann::json m = {{"count", cell.count}, {"skipped", cell.skipped}};
      for (const auto& [metric, value] : cell.values()) m[metric] = round6(value);
      j["metrics"][method][family] = m;
    }
    for (const auto& [k, v] : extra_) j[k] = v;
    return j;
  }

  static std::string format_value(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
  }
  static double round6(double v) { return std::round(v * 1e6) / 1e6; }

 private:
  std::map<Key, MetricCell> cells_;
  std::map<std::string, nlohmann::json> extra_;
};

// ---------------------------------------------------------------------------
// Oversampling sweep

struct SweepRow {
  double R = 0.0;
  int d = 0;
  std::size_t L = 0;
  double recall = 0.0;
  std::string source;  // "exact" or "graph"
};

struct StressSweepResult {
  std::vector<SweepRow> rows;
  std::size_t k = 10;
  std::size_t L_th = 0;
  /// Per query: the largest tangent-space rank (1-based) among its true
  /// hyperbolic top-k.
  std::vector<std::size_t> oracle_rank;

  double recall_at(std::size_t L, const std::string& source = "exact") const {
    for (const auto& r : rows)
      if (r.L == L && r.source == source) return r.recall;
    throw Error("sweep has no row for L = " + std::to_string(L));
  }

  void write_csv(std::ostream& out) const {
    out << "source,R,d,L,k,recall,L_th\n";
    for (const auto& r : rows)
      out << r.source << "," << MetricReport::format_value(r.R) << "," << r.d << "," << r.L << ","
          << k << "," << MetricReport::format_value(r.recall) << "," << L_th << "\n";
  }
};

/// Exact hyperbolic top-k of a query point over all entities, ties by index.
inline std::vector<Id> hyperbolic_topk(const training::EmbeddingTable& emb,
                                       std::span<const double> x_q, std::size_t k) {
  std::vector<std::pair<double, Id>> d(emb.size());
  for (std::size_t i = 0; i < emb.size(); ++i)
    d[i] = {geometry::lorentz_distance(x_q, emb.point(i)), static_cast<Id>(i)};
  const std::size_t take = std::min(k, d.size());
  std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(take), d.end());
  std::vector<Id> out(take);
  for (std::size_t i = 0; i < take; ++i) out[i] = d[i].second;
  return out;
}

/// Recall@k of tangent-space candidates (no text pooling) against exact
/// hyperbolic neighbours, for each oversampling L. `query_tangents` are
/// origin tangent vectors; `exact` must index the same table with keys
/// equal to entity positions. When `graph` is given its curve is added too.
inline StressSweepResult stress_sweep(const training::EmbeddingTable& emb,
                                      const std::vector<std::vector<double>>& query_tangents,
                                      double R, std::vector<std::size_t> Ls, std::size_t k,
                                      const index::VectorIndex& exact,
                                      const index::VectorIndex* graph = nullptr,
                                      std::size_t threads = 1) {
  if (query_tangents.empty()) throw Error("stress_sweep: no query points");
  if (emb.size() < k) throw Error("stress_sweep: corpus smaller than k");
  std::sort(Ls.begin(), Ls.end());
  Ls.erase(std::unique(Ls.begin(), Ls.end()), Ls.end());
  for (auto& L : Ls) L = std::min(L, emb.size());
  Ls.erase(std::unique(Ls.begin(), Ls.end()), Ls.end());
  StressSweepResult res;
  res.k = k;
  res.L_th = geometry::oversampling_threshold(R, k);
  const std::size_t nq = query_tangents.size();
  std::vector<std::vector<double>> per_query(nq, std::vector<double>(Ls.size(), 0.0));
  std::vector<std::vector<double>> per_query_graph(nq, std::vector<double>(graph ? Ls.size() : 0, 0.0));
  res.oracle_rank.assign(nq, 0);

  parallel_for(nq, threads, [&](std::size_t q) {
    const auto& t = query_tangents[q];
    std::vector<double> x(t.size() + 1);
    geometry::exp0_into(t, x);
    const auto truth = hyperbolic_topk(emb, x, k);
    // Full tangent ranking gives every true neighbour's rank.
    const auto ranking = exact.search(t, emb.size());
    std::vector<std::size_t> rank_of(emb.size());
    for (std::size_t r = 0; r < ranking.size(); ++r) rank_of[ranking[r].key] = r + 1;
    std::size_t worst = 0;
    for (Id v : truth) worst = std::max(worst, rank_of[v]);
    res.oracle_rank[q] = worst;
    for (std::size_t li = 0; li < Ls.size(); ++li) {
      std::size_t hit = 0;
      for (Id v : truth) hit += rank_of[v] <= Ls[li] ? 1 : 0;
      per_query[q][li] = static_cast<double>(hit) / static_cast<double>(k);
    }
    if (graph) {
      for (std::size_t li = 0; li < Ls.size(); ++li) {
        std::vector<Id> pool;
        for (const auto& h : graph->search(t, Ls[li])) pool.push_back(h.key);
        per_query_graph[q][li] = indexability_recall(truth, pool, k);
      }
    }
  });
  for (std::size_t li = 0; li < Ls.size(); ++li) {
    double s = 0.0, sg = 0.0;
    for (std::size_t q = 0; q < nq; ++q) {
      s += per_query[q][li];
      if (graph) sg += per_query_graph[q][li];
    }
    res.rows.push_back({R, emb.dim(), Ls[li], s / static_cast<double>(nq), "exact"});
    if (graph) res.rows.push_back({R, emb.dim(), Ls[li], sg / static_cast<double>(nq), "graph"});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Latency

struct LatencyStats {
  double median_ms = 0.0;
  double p90_ms = 0.0;
  std::size_t measured = 0;
};

/// Runs fn(i) for i in [0, n), discarding the first `warmup` timings.
inline LatencyStats measure_latency(std::size_t n, std::size_t warmup,
                                    const std::function<void(std::size_t)>& fn) {
  std::vector<double> ms;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn(i);
    const auto t1 = std::chrono::steady_clock::now();
    if (i >= warmup)
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  LatencyStats s;
  s.measured = ms.size();
  if (!ms.empty()) {
    s.median_ms = std::round(median(ms) * 1000.0) / 1000.0;
    s.p90_ms = std::round(percentile(ms, 90) * 1000.0) / 1000.0;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Theory tables

inline void write_kappa_table(std::ostream& out, double r_max = 5.0, double step = 0.1) {
  out << "R,kappa,L_th_k10\n";
  const int steps = static_cast<int>(std::round(r_max / step));
  for (int i = 1; i <= steps; ++i) {
    const double R = step * i;
    out << MetricReport::format_value(R) << "," << MetricReport::format_value(geometry::kappa(R))
        << "," << geometry::oversampling_threshold(R, 10) << "\n";
  }
}

inline void write_radius_table(std::ostream& out, int depth_max = 40,
                               const std::vector<double>& branchings = {2, 5, 10},
                               const std::vector<int>& dims = {16, 32, 64}) {
  out << "depth,branching,dim,required_radius,kappa\n";
  for (int d : dims)
    for (double b : branchings)
      for (int D = 1; D <= depth_max; ++D) {
        const double R = geometry::required_radius(D, b, d);
        out << D << "," << MetricReport::format_value(b) << "," << d << ","
            << MetricReport::format_value(R) << "," << MetricReport::format_value(geometry::kappa(R))
            << "\n";
      }
}

}  // namespace hyem::evaluation
