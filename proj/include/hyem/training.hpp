#pragma once

/// Radius-constrained hyperbolic entity embeddings trained on origin tangent
/// coordinates, the query gate, and a flat translational KG baseline.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hyem/encoding.hpp"
#include "hyem/error.hpp"
#include "hyem/geometry.hpp"
#include "hyem/ontology.hpp"
#include "hyem/util.hpp"

namespace hyem::training {

using encoding::AdapterParams;
using encoding::AdapterVariant;
using encoding::TextEmbedding;
using ontology::NodeIndex;
using ontology::OntologyGraph;

struct TrainConfig {
  int dim = 32;
  double radius_budget = 3.0;
  double lambda_hier = 1.0;
  double lambda_text = 1.0;
  double lambda_radius = 10.0;
  double margin = 0.1;
  int negatives_per_edge = 5;
  double learning_rate = 0.05;
  int epochs = 300;
  std::uint64_t seed = 0;
  bool clip_after_step = true;
  bool hard_negatives = false;
  AdapterVariant adapter = AdapterVariant::linear;
  /// Standard deviation of the initial tangent coordinates.
  double init_scale = 1e-2;

  void validate() const {
    if (dim < 2) throw Error("train config: dim must be >= 2");
    if (!(radius_budget > 0.0)) throw Error("train config: radius budget must be > 0");
    if (!(learning_rate > 0.0)) throw Error("train config: learning rate must be > 0");
    if (lambda_text < 0 || lambda_radius < 0 || lambda_hier < 0)
      throw Error("train config: loss weights must be non-negative");
    if (negatives_per_edge < 0) throw Error("train config: negatives_per_edge must be >= 0");
    if (epochs < 0) throw Error("train config: epochs must be >= 0");
  }
};

/// Tangent coordinates u_v per entity (canonical) with the matching
/// hyperboloid points x_v = exp0(u_v) cached alongside.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::vector<std::string> ids, int dim)
      : ids_(std::move(ids)), dim_(dim),
        tangent_(ids_.size() * static_cast<std::size_t>(dim), 0.0),
        points_(ids_.size() * static_cast<std::size_t>(dim + 1), 0.0) {
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      if (!index_.emplace(ids_[i], i).second) throw Error("duplicate embedding id: " + ids_[i]);
    }
    refresh_points();
  }

  std::size_t size() const noexcept { return ids_.size(); }
  int dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  std::optional<std::size_t> find(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  std::span<double> tangent(std::size_t i) {
    return {tangent_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  std::span<const double> tangent(std::size_t i) const {
    return {tangent_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  std::span<const double> point(std::size_t i) const {
    const auto w = static_cast<std::size_t>(dim_ + 1);
    return {points_.data() + i * w, w};
  }
  const std::vector<double>& tangent_data() const noexcept { return tangent_; }

  void refresh_point(std::size_t i) {
    const auto w = static_cast<std::size_t>(dim_ + 1);
    geometry::exp0_into(tangent(i), std::span<double>(points_.data() + i * w, w));
  }
  void refresh_points() {
    for (std::size_t i = 0; i < size(); ++i) refresh_point(i);
  }

  double radius(std::size_t i) const { return norm(tangent(i)); }
  double max_radius() const {
    double r = 0.0;
    for (std::size_t i = 0; i < size(); ++i) r = std::max(r, radius(i));
    return r;
  }
  double distance(std::size_t a, std::size_t b) const {
    return geometry::lorentz_distance(point(a), point(b));
  }

 private:
  std::vector<std::string> ids_;
  int dim_ = 0;
  std::vector<double> tangent_;
  std::vector<double> points_;
  std::unordered_map<std::string, std::size_t> index_;
};

// ---------------------------------------------------------------------------
// Loss terms

struct HierLoss {
  double distance = 0.0;
  double radial = 0.0;
  double ranking = 0.0;
  double total() const { return distance + radial + ranking; }
};

/// d(p,c) + max(0, m + |u_p| - |u_c|) + sum_n max(0, m + d(p,c) - d(p,n)).
/// Gradients are written (not accumulated) into the grad spans, which may
/// be empty to skip; grad_n must hold one span per negative or be empty.
inline HierLoss hier_loss(std::span<const double> u_p, std::span<const double> u_c,
                          const std::vector<std::span<const double>>& negatives, double margin,
                          std::span<double> grad_p, std::span<double> grad_c,
                          const std::vector<std::span<double>>& grad_n,
                          geometry::DistanceScratch& scratch) {
  const std::size_t d = u_p.size();
  const bool want = !grad_p.empty();
  std::vector<double> gp_pc(want ? d : 0), gc_pc(want ? d : 0);
  HierLoss loss;
  const double d_pc = geometry::tangent_distance_grad(u_p, u_c, gp_pc, gc_pc, scratch);
  loss.distance = d_pc;
  if (want) {
    std::copy(gp_pc.begin(), gp_pc.end(), grad_p.begin());
    std::copy(gc_pc.begin(), gc_pc.end(), grad_c.begin());
  }

  const double np = norm(u_p), nc = norm(u_c);
  const double radial = margin + np - nc;
  if (radial > 0.0) {
    loss.radial = radial;
    if (want) {
      if (np > 0.0)
        for (std::size_t i = 0; i < d; ++i) grad_p[i] += u_p[i] / np;
      if (nc > 0.0)
        for (std::size_t i = 0; i < d; ++i) grad_c[i] -= u_c[i] / nc;
    }
  }

  std::vector<double> gp_pn(want ? d : 0);
  for (std::size_t k = 0; k < negatives.size(); ++k) {
    std::span<double> gn = want && k < grad_n.size() ? grad_n[k] : std::span<double>();
    const double d_pn = geometry::tangent_distance_grad(u_p, negatives[k], want ? std::span<double>(gp_pn) : std::span<double>(), gn, scratch);
    const double hinge = margin + d_pc - d_pn;
    if (hinge > 0.0) {
      loss.ranking += hinge;
      if (want) {
        for (std::size_t i = 0; i < d; ++i) {
          grad_p[i] += gp_pc[i] - gp_pn[i];
          grad_c[i] += gc_pc[i];
        }
        for (double& g : gn) g = -g;
      }
    } else if (!gn.empty()) {
      std::fill(gn.begin(), gn.end(), 0.0);
    }
  }
  return loss;
}

/// d(exp0(u_v), adapt(e_v)); writes dL/du into grad_u (if non-empty) and
/// accumulates scale * dL/dparams into adapter_grad (if non-null).
inline double text_loss(std::span<const double> u_v, std::span<const double> e,
                        const AdapterParams& adapter, std::span<double> grad_u,
                        AdapterParams* adapter_grad, geometry::DistanceScratch& scratch,
                        double scale = 1.0) {
  encoding::AdapterCache cache;
  std::vector<double> t(static_cast<std::size_t>(adapter.d));
  encoding::adapter_forward(adapter, e, t, &cache);
  std::vector<double> grad_t(adapter_grad ? t.size() : 0);
  const double loss = geometry::tangent_distance_grad(u_v, t, grad_u, grad_t, scratch);
  if (adapter_grad) encoding::adapter_backward(adapter, e, cache, grad_t, *adapter_grad, scale);
  return loss;
}

/// max(0, |u| - R)^2 with its gradient written into grad (if non-empty).
inline double radius_penalty(std::span<const double> u, double R, std::span<double> grad = {}) {
  const double n = norm(u);
  const double excess = n - R;
  if (!(excess > 0.0)) {
    std::fill(grad.begin(), grad.end(), 0.0);
    return 0.0;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = 2.0 * excess * u[i] / n;
  return excess * excess;
}

/// Sum of the per-entity radius penalties.
inline double radius_penalty(const EmbeddingTable& emb, double R) {
  double s = 0.0;
  for (std::size_t i = 0; i < emb.size(); ++i) s += radius_penalty(emb.tangent(i), R);
  return s;
}

inline void clip_to_radius(std::span<double> u, double R) {
  const double n = norm(u);
  if (n > R) {
    const double s = R / n;
    for (double& x : u) x *= s;
  }
}

// ---------------------------------------------------------------------------
// Negative sampling

/// Uniform sampler over non-descendants of a parent, with an optional
/// restriction to the text-nearest neighbours of the parent.
class NegativeSampler {
 public:
  explicit NegativeSampler(const OntologyGraph& g) : n_(g.size()) {
    ancestors_.resize(n_);
    descendant_count_.assign(n_, 0);
    for (NodeIndex v = 0; v < n_; ++v) {
      ancestors_[v] = g.ancestors(v);
      for (NodeIndex a : ancestors_[v]) ++descendant_count_[a];
    }
  }

  /// True when n is p or one of its descendants.
  bool excluded(NodeIndex p, NodeIndex n) const {
    if (n == p) return true;
    const auto& anc = ancestors_[n];
    return std::binary_search(anc.begin(), anc.end(), p);
  }

  std::size_t valid_count(NodeIndex p) const { return n_ - 1 - descendant_count_[p]; }

  void set_hard_pool(std::vector<std::vector<NodeIndex>> pool) { hard_pool_ = std::move(pool); }

  std::optional<NodeIndex> sample(NodeIndex p, Rng& rng) {
    if (valid_count(p) == 0) return std::nullopt;
    if (!hard_pool_.empty()) {
      const auto& pool = hard_pool_[p];
      if (!pool.empty()) {
        for (int tries = 0; tries < 16; ++tries) {
          NodeIndex c = pool[rng() % pool.size()];
          if (!excluded(p, c)) return c;
          ++resampled_;
        }
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, n_ - 1);
    for (int tries = 0; tries < 64; ++tries) {
      const auto c = static_cast<NodeIndex>(pick(rng));
      if (!excluded(p, c)) return c;
      ++resampled_;
    }
    // Dense exclusion (near the roots): walk forward to the next valid node.
    const auto start = static_cast<NodeIndex>(pick(rng));
    for (std::size_t k = 0; k < n_; ++k) {
      const auto c = static_cast<NodeIndex>((start + k) % n_);
      if (!excluded(p, c)) return c;
    }
    return std::nullopt;
  }

  std::size_t resampled() const noexcept { return resampled_; }

 private:
  std::size_t n_;
  std::vector<std::vector<NodeIndex>> ancestors_;
  std::vector<std::size_t> descendant_count_;
  std::vector<std::vector<NodeIndex>> hard_pool_;
  std::size_t resampled_ = 0;
};

/// For every entity, the `k` entities with highest text cosine (itself
/// excluded), ties by index.
inline std::vector<std::vector<NodeIndex>> text_neighbours(
    const std::vector<const TextEmbedding*>& texts, std::size_t k) {
  const std::size_t n = texts.size();
  std::vector<std::vector<NodeIndex>> out(n);
  std::vector<std::pair<double, NodeIndex>> scored;
  for (std::size_t i = 0; i < n; ++i) {
    if (!texts[i]) continue;
    scored.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !texts[j]) continue;
      scored.emplace_back(-encoding::cosine(texts[i]->coords, texts[j]->coords),
                          static_cast<NodeIndex>(j));
    }
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take),
                      scored.end());
    for (std::size_t t = 0; t < take; ++t) out[i].push_back(scored[t].second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Trainer

struct TrainDiagnostics {
  std::size_t nan_count = 0;
  std::size_t inf_count = 0;
  std::size_t steps = 0;
  std::size_t skipped_no_text = 0;
  std::size_t resampled_negatives = 0;
  std::size_t edges_without_negatives = 0;
  double grad_norm_p50 = 0.0;
  double grad_norm_p90 = 0.0;
  double grad_norm_p99 = 0.0;
  double grad_norm_max = 0.0;
  double radius_bin_width = 0.25;
  std::vector<std::size_t> radius_histogram;
  std::vector<double> violation_fraction;  // per epoch
  std::vector<double> epoch_loss;          // per epoch, mean per term evaluation
  std::vector<double> max_radius;          // per epoch
  bool aborted = false;

  nlohmann::json to_json() const {
    return {{"nan_count", nan_count},
            {"inf_count", inf_count},
            {"steps", steps},
            {"skipped_no_text", skipped_no_text},
            {"resampled_negatives", resampled_negatives},
            {"edges_without_negatives", edges_without_negatives},
            {"grad_norm_percentiles",
             {{"p50", grad_norm_p50}, {"p90", grad_norm_p90}, {"p99", grad_norm_p99},
              {"max", grad_norm_max}}},
            {"radius_bin_width", radius_bin_width},
            {"radius_histogram", radius_histogram},
            {"violation_fraction", violation_fraction},
            {"epoch_loss", epoch_loss},
            {"max_radius", max_radius},
            {"aborted", aborted}};
  }
};

class TrainingAborted : public Error {
 public:
  TrainingAborted(const std::string& what, TrainDiagnostics snapshot)
      : Error(what), snapshot_(std::move(snapshot)) {}
  const TrainDiagnostics& diagnostics() const noexcept { return snapshot_; }

 private:
  TrainDiagnostics snapshot_;
};

struct TrainResult {
  EmbeddingTable embeddings;
  AdapterParams adapter;
  TrainDiagnostics diagnostics;
};

/// Text vectors aligned with graph node order (nullptr where missing).
inline std::vector<const TextEmbedding*> align_texts(const OntologyGraph& g,
                                                     const encoding::EmbeddingTable& table) {
  std::vector<const TextEmbedding*> out(g.size(), nullptr);
  for (NodeIndex i = 0; i < g.size(); ++i) out[i] = table.find(g.node(i).id);
  return out;
}

/// Encodes entity_text of every node with `encoder`, keyed by node id.
inline encoding::EmbeddingTable encode_entities(const OntologyGraph& g,
                                                const encoding::TextEncoder& encoder) {
  encoding::EmbeddingTable t(encoder.dim());
  for (NodeIndex i = 0; i < g.size(); ++i)
    t.add(g.node(i).id, encoder.encode(g.node(i).id, encoding::entity_text(g.node(i))));
  return t;
}

namespace detail {

class GradSampler {
 public:
  void add(double v) {
    ++seen_;
    max_ = std::max(max_, v);
    if (seen_ % stride_ != 0) return;
    samples_.push_back(v);
    if (samples_.size() >= 2 * kCap) {
      // Halve the sample deterministically and double the stride.
      std::vector<double> kept;
      for (std::size_t i = 1; i < samples_.size(); i += 2) kept.push_back(samples_[i]);
      samples_ = std::move(kept);
      stride_ *= 2;
    }
  }
  void write(TrainDiagnostics& d) const {
    d.grad_norm_p50 = percentile(samples_, 50);
    d.grad_norm_p90 = percentile(samples_, 90);
    d.grad_norm_p99 = percentile(samples_, 99);
    d.grad_norm_max = max_;
  }

 private:
  static constexpr std::size_t kCap = 100000;
  std::vector<double> samples_;
  std::size_t stride_ = 1;
  std::size_t seen_ = 0;
  double max_ = 0.0;
};

inline void check_finite(double loss, TrainDiagnostics& diag, const char* where) {
  if (std::isfinite(loss)) return;
  if (std::isnan(loss))
    ++diag.nan_count;
  else
    ++diag.inf_count;
  diag.aborted = true;
  throw TrainingAborted(std::string("non-finite loss in ") + where, diag);
}

}  // namespace detail

/// Minimises lambda_hier L_hier + lambda_text L_text + lambda_R L_R with
/// plain SGD on tangent coordinates. Edge and node orders are reshuffled
/// every epoch from the seed, so runs are bit-reproducible.
inline TrainResult train_embeddings(const OntologyGraph& g,
                                    const std::vector<const TextEmbedding*>& texts,
                                    const TrainConfig& cfg) {
  cfg.validate();
  if (g.empty()) throw Error("train: graph is empty");
  if (texts.size() != g.size()) throw Error("train: text table does not match graph");
  const std::size_t n = g.size();
  const auto d = static_cast<std::size_t>(cfg.dim);

  int d_e = 0;
  for (auto* t : texts)
    if (t) {
      d_e = static_cast<int>(t->dim());
      break;
    }
  const bool use_text = d_e > 0 && cfg.lambda_text > 0.0;

  std::vector<std::string> ids;
  ids.reserve(n);
  for (NodeIndex i = 0; i < n; ++i) ids.push_back(g.node(i).id);
  TrainResult result{EmbeddingTable(std::move(ids), cfg.dim),
                     d_e > 0 ? AdapterParams::random(cfg.adapter, cfg.dim, d_e,
                                                     derive_seed(cfg.seed, "adapter-init"))
                             : AdapterParams{},
                     {}};
  EmbeddingTable& emb = result.embeddings;
  AdapterParams& adapter = result.adapter;
  TrainDiagnostics& diag = result.diagnostics;

  Rng rng(derive_seed(cfg.seed, "train"));
  {
    std::normal_distribution<double> init(0.0, cfg.init_scale);
    for (std::size_t i = 0; i < n; ++i) {
      for (double& x : emb.tangent(i)) x = init(rng);
      if (cfg.clip_after_step) clip_to_radius(emb.tangent(i), cfg.radius_budget);
    }
    emb.refresh_points();
  }

  NegativeSampler sampler(g);
  if (cfg.hard_negatives && d_e > 0) sampler.set_hard_pool(text_neighbours(texts, 50));
  auto edges = g.edges();  // (child, parent)
  std::vector<NodeIndex> order(n);
  std::iota(order.begin(), order.end(), 0);

  geometry::DistanceScratch scratch;
  detail::GradSampler grad_norms;
  std::vector<double> gp(d), gc(d), gr(d);
  std::vector<std::vector<double>> gn_store(static_cast<std::size_t>(cfg.negatives_per_edge),
                                            std::vector<double>(d));
  std::vector<NodeIndex> negs;
  std::vector<std::span<const double>> neg_spans;
  std::vector<std::span<double>> gn_spans;
  AdapterParams adapter_grad = d_e > 0 ? AdapterParams::zeros(cfg.adapter, cfg.dim, d_e, adapter.h)
                                       : AdapterParams{};
  const double lr = cfg.learning_rate;

  auto step = [&](std::size_t v, std::span<const double> grad, double scale) {
    auto u = emb.tangent(v);
    for (std::size_t i = 0; i < d; ++i) u[i] -= lr * scale * grad[i];
    if (cfg.clip_after_step) clip_to_radius(u, cfg.radius_budget);
    emb.refresh_point(v);
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    std::size_t loss_terms = 0;

    if (cfg.lambda_hier > 0.0) {
      std::shuffle(edges.begin(), edges.end(), rng);
      for (const auto& [c, p] : edges) {
        negs.clear();
        for (int k = 0; k < cfg.negatives_per_edge; ++k) {
          auto neg = sampler.sample(p, rng);
          if (!neg) break;
          negs.push_back(*neg);
        }
        if (negs.empty() && cfg.negatives_per_edge > 0) ++diag.edges_without_negatives;
        neg_spans.clear();
        gn_spans.clear();
        for (std::size_t k = 0; k < negs.size(); ++k) {
          neg_spans.push_back(emb.tangent(negs[k]));
          gn_spans.emplace_back(gn_store[k]);
        }
        const HierLoss hl = hier_loss(emb.tangent(p), emb.tangent(c), neg_spans, cfg.margin, gp,
                                      gc, gn_spans, scratch);
        const double loss = cfg.lambda_hier * hl.total();
        detail::check_finite(loss, diag, "hierarchy loss");
        loss_sum += loss;
        ++loss_terms;
        double sq = dot(gp, gp) + dot(gc, gc);
        for (std::size_t k = 0; k < negs.size(); ++k) sq += dot(gn_store[k], gn_store[k]);
        grad_norms.add(cfg.lambda_hier * std::sqrt(sq));
        step(p, gp, cfg.lambda_hier);
        step(c, gc, cfg.lambda_hier);
        for (std::size_t k = 0; k < negs.size(); ++k) step(negs[k], gn_store[k], cfg.lambda_hier);
        ++diag.steps;
      }
    }

    std::shuffle(order.begin(), order.end(), rng);
    for (NodeIndex v : order) {
      double loss = 0.0;
      std::fill(gr.begin(), gr.end(), 0.0);
      if (use_text) {
        if (!texts[v]) {
          if (epoch == 0) ++diag.skipped_no_text;
        } else {
          std::fill(adapter_grad.W.begin(), adapter_grad.W.end(), 0.0);
          std::fill(adapter_grad.b.begin(), adapter_grad.b.end(), 0.0);
          std::fill(adapter_grad.W1.begin(), adapter_grad.W1.end(), 0.0);
          std::fill(adapter_grad.b1.begin(), adapter_grad.b1.end(), 0.0);
          loss += cfg.lambda_text *
                  text_loss(emb.tangent(v), texts[v]->coords, adapter, gr, &adapter_grad, scratch);
          for (double& x : gr) x *= cfg.lambda_text;
          for (std::size_t i = 0; i < adapter.parameter_count(); ++i)
            adapter.parameter(i) -= lr * cfg.lambda_text * adapter_grad.parameter(i);
        }
      }
      if (cfg.lambda_radius > 0.0) {
        std::vector<double> g_r(d);
        loss += cfg.lambda_radius * radius_penalty(emb.tangent(v), cfg.radius_budget, g_r);
        for (std::size_t i = 0; i < d; ++i) gr[i] += cfg.lambda_radius * g_r[i];
      }
      detail::check_finite(loss, diag, "text/radius loss");
      if (use_text || cfg.lambda_radius > 0.0) {
        loss_sum += loss;
        ++loss_terms;
        grad_norms.add(norm(gr));
        step(v, gr, 1.0);
        ++diag.steps;
      }
    }

    std::size_t violations = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (emb.radius(i) > cfg.radius_budget + 1e-6) ++violations;
    diag.violation_fraction.push_back(static_cast<double>(violations) / static_cast<double>(n));
    diag.epoch_loss.push_back(loss_terms ? loss_sum / static_cast<double>(loss_terms) : 0.0);
    diag.max_radius.push_back(emb.max_radius());
  }

  emb.refresh_points();
  if (!adapter.finite() || !all_finite(emb.tangent_data())) {
    ++diag.nan_count;
    diag.aborted = true;
    throw TrainingAborted("non-finite parameters after training", diag);
  }
  grad_norms.write(diag);
  diag.resampled_negatives = sampler.resampled();
  const double top = emb.max_radius();
  diag.radius_histogram.assign(static_cast<std::size_t>(top / diag.radius_bin_width) + 1, 0);
  for (std::size_t i = 0; i < n; ++i)
    ++diag.radius_histogram[static_cast<std::size_t>(emb.radius(i) / diag.radius_bin_width)];
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointFormat = "hyemb-v1";

inline void save_checkpoint(const EmbeddingTable& emb, double R, std::ostream& out) {
  out << nlohmann::json{{"format", kCheckpointFormat}, {"dim", emb.dim()}, {"R", R},
                        {"model", "lorentz"}}
             .dump()
      << "\n";
  for (std::size_t i = 0; i < emb.size(); ++i) {
    auto u = emb.tangent(i);
    out << nlohmann::json{{"id", emb.ids()[i]},
                          {"tangent", std::vector<double>(u.begin(), u.end())}}
               .dump()
        << "\n";
  }
}

struct Checkpoint {
  EmbeddingTable embeddings;
  double radius_budget = 0.0;
};

inline Checkpoint load_checkpoint(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty checkpoint", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), 1);
  }
  if (header.value("format", "") != kCheckpointFormat)
    throw ParseError("expected format hyemb-v1", 1);
  const int dim = header.at("dim").get<int>();
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      ids.push_back(rec.at("id").get<std::string>());
      rows.push_back(rec.at("tangent").get<std::vector<double>>());
      if (static_cast<int>(rows.back().size()) != dim)
        throw ParseError("tangent dimension mismatch for '" + ids.back() + "'", lineno);
      if (!all_finite(rows.back()))
        throw ParseError("non-finite tangent for '" + ids.back() + "'", lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  Checkpoint cp{EmbeddingTable(std::move(ids), dim), header.value("R", 0.0)};
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), cp.embeddings.tangent(i).begin());
  cp.embeddings.refresh_points();
  return cp;
}

// ---------------------------------------------------------------------------
// Gate

enum class GateVariant { rule, linear, two_layer };

inline std::string to_string(GateVariant v) {
  switch (v) {
    case GateVariant::rule: return "rule";
    case GateVariant::linear: return "linear";
    case GateVariant::two_layer: return "two-layer";
  }
  return "?";
}
inline GateVariant gate_variant_from_string(std::string_view s) {
  if (s == "rule") return GateVariant::rule;
  if (s == "linear") return GateVariant::linear;
  if (s == "two-layer" || s == "mlp") return GateVariant::two_layer;
  throw Error("unknown gate variant: " + std::string(s));
}

/// 1 when the text contains a hierarchy keyword, else 0.
inline double rule_gate(std::string_view text) {
  const std::string lower = encoding::lowercase(text);
  for (auto kw : ontology::kHierarchyKeywords)
    if (lower.find(kw) != std::string::npos) return 1.0;
  return 0.0;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

/// alpha(q) = sigmoid(w . e + b) (linear) or sigmoid(w . tanh(W1 e + b1) + b).
struct GateParams {
  GateVariant variant = GateVariant::linear;
  int d_e = 0;
  int h = 0;
  std::vector<double> w;
  double b = 0.0;
  std::vector<double> W1;
  std::vector<double> b1;

  static GateParams zeros(GateVariant variant, int d_e, int h = 16) {
    GateParams p;
    p.variant = variant;
    p.d_e = d_e;
    if (variant == GateVariant::two_layer) {
      p.h = h;
      p.w.assign(static_cast<std::size_t>(h), 0.0);
      p.W1.assign(static_cast<std::size_t>(h) * static_cast<std::size_t>(d_e), 0.0);
      p.b1.assign(static_cast<std::size_t>(h), 0.0);
    } else if (variant == GateVariant::linear) {
      p.w.assign(static_cast<std::size_t>(d_e), 0.0);
    }
    return p;
  }

  std::size_t parameter_count() const { return w.size() + 1 + W1.size() + b1.size(); }
  double& parameter(std::size_t i) {
    if (i < w.size()) return w[i];
    i -= w.size();
    if (i == 0) return b;
    i -= 1;
    if (i < W1.size()) return W1[i];
    return b1.at(i - W1.size());
  }
  bool finite() const { return all_finite(w) && std::isfinite(b) && all_finite(W1) && all_finite(b1); }
};

struct GateExample {
  std::vector<double> embedding;
  std::string text;
  bool hierarchical = false;  // label H
};

namespace detail {

/// Pre-sigmoid score; `hidden` receives tanh activations for the two-layer gate.
inline double gate_logit(const GateParams& p, std::span<const double> e, std::vector<double>* hidden) {
  if (static_cast<int>(e.size()) != p.d_e) throw Error("gate input dimension mismatch");
  if (p.variant == GateVariant::linear) return dot(p.w, e) + p.b;
  std::vector<double> local;
  std::vector<double>& hid = hidden ? *hidden : local;
  hid.assign(static_cast<std::size_t>(p.h), 0.0);
  for (int j = 0; j < p.h; ++j) {
    std::span<const double> row(&p.W1[static_cast<std::size_t>(j) * static_cast<std::size_t>(p.d_e)],
                                static_cast<std::size_t>(p.d_e));
    hid[static_cast<std::size_t>(j)] = std::tanh(dot(row, e) + p.b1[static_cast<std::size_t>(j)]);
  }
  return dot(p.w, hid) + p.b;
}

}  // namespace detail

inline double gate_alpha(const GateParams& p, std::span<const double> e, std::string_view text) {
  if (p.variant == GateVariant::rule) return rule_gate(text);
  return sigmoid(detail::gate_logit(p, e, nullptr));
}

/// Mean binary cross-entropy; writes the gradient (same layout as
/// GateParams::parameter) into grad when non-null.
inline double gate_loss(const GateParams& p, const std::vector<GateExample>& data,
                        GateParams* grad = nullptr) {
  if (p.variant == GateVariant::rule) throw Error("rule gate has no trainable parameters");
  if (grad) *grad = GateParams::zeros(p.variant, p.d_e, p.h);
  double loss = 0.0;
  std::vector<double> hidden;
  const double inv = 1.0 / static_cast<double>(std::max<std::size_t>(data.size(), 1));
  for (const auto& ex : data) {
    const double z = detail::gate_logit(p, ex.embedding, &hidden);
    const double y = ex.hierarchical ? 1.0 : 0.0;
    // log(1 + e^z) - y z, stable for large |z|.
    loss += (std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))) - y * z) * inv;
    if (!grad) continue;
    const double dz = (sigmoid(z) - y) * inv;
    grad->b += dz;
    if (p.variant == GateVariant::linear) {
      for (std::size_t k = 0; k < grad->w.size(); ++k) grad->w[k] += dz * ex.embedding[k];
      continue;
    }
    for (int j = 0; j < p.h; ++j) {
      const auto jj = static_cast<std::size_t>(j);
      grad->w[jj] += dz * hidden[jj];
      const double gz = dz * p.w[jj] * (1.0 - hidden[jj] * hidden[jj]);
      grad->b1[jj] += gz;
      double* row = &grad->W1[jj * static_cast<std::size_t>(p.d_e)];
      for (int k = 0; k < p.d_e; ++k) row[k] += gz * ex.embedding[static_cast<std::size_t>(k)];
    }
  }
  return loss;
}

struct GateTrainConfig {
  GateVariant variant = GateVariant::linear;
  int epochs = 300;
  double learning_rate = 2.0;
  int hidden = 16;
  std::uint64_t seed = 0;
};

/// Full-batch gradient descent on the mean cross-entropy.
inline GateParams train_gate(const std::vector<GateExample>& data, const GateTrainConfig& cfg) {
  if (data.empty()) throw Error("gate training set is empty");
  bool has_h = false, has_e = false;
  for (const auto& ex : data) (ex.hierarchical ? has_h : has_e) = true;
  if (!(has_h && has_e)) throw Error("gate training needs both Q-H and Q-E labels");
  const int d_e = static_cast<int>(data.front().embedding.size());
  GateParams p = GateParams::zeros(cfg.variant, d_e, cfg.hidden);
  if (cfg.variant == GateVariant::rule) return p;
  if (cfg.variant == GateVariant::two_layer) {
    Rng rng(derive_seed(cfg.seed, "gate-init"));
    std::normal_distribution<double> g(0.0, 1.0);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d_e));
    for (double& x : p.W1) x = s1 * g(rng);
    for (double& x : p.w) x = 0.1 * g(rng);
  }
  GateParams grad;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = gate_loss(p, data, &grad);
    if (!std::isfinite(loss)) throw Error("gate training diverged");
    for (std::size_t i = 0; i < p.parameter_count(); ++i)
      p.parameter(i) -= cfg.learning_rate * grad.parameter(i);
  }
  return p;
}

inline constexpr std::string_view kGateFormat = "gate-v1";

inline nlohmann::json gate_to_json(const GateParams& p) {
  nlohmann::json j = {{"format", kGateFormat}, {"variant", to_string(p.variant)},
                      {"d_e", p.d_e}, {"h", p.h}, {"w", p.w}, {"b", p.b}};
  if (p.variant == GateVariant::two_layer) {
    j["W1"] = p.W1;
    j["b1"] = p.b1;
  }
  return j;
}

inline GateParams gate_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kGateFormat) throw Error("expected gate-v1 document");
  GateParams p = GateParams::zeros(gate_variant_from_string(j.at("variant").get<std::string>()),
                                   j.at("d_e").get<int>(), j.value("h", 16));
  p.w = j.at("w").get<std::vector<double>>();
  p.b = j.at("b").get<double>();
  if (p.variant == GateVariant::two_layer) {
    p.W1 = j.at("W1").get<std::vector<double>>();
    p.b1 = j.at("b1").get<std::vector<double>>();
  }
  if (!p.finite()) throw Error("gate contains non-finite values");
  return p;
}

// ---------------------------------------------------------------------------
// Flat translational KG baseline

struct KgConfig {
  int dim = 32;
  double margin = 1.0;
  int negatives_per_edge = 5;
  double learning_rate = 0.02;
  int epochs = 100;
  double lambda_text = 1.0;
  std::uint64_t seed = 0;
};

/// Entities z_v in R^d, one is-a translation t with score |z_p + t - z_c|^2,
/// and a linear text map into the same space for queries.
struct KgModel {
  int dim = 0;
  std::vector<std::string> ids;
  std::vector<double> z;
  std::vector<double> relation;
  AdapterParams text_map;

  std::span<const double> vec(std::size_t i) const {
    return {z.data() + i * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }
};

inline KgModel train_kg_baseline(const OntologyGraph& g,
                                 const std::vector<const TextEmbedding*>& texts,
                                 const KgConfig& cfg) {
  if (g.empty()) throw Error("kg baseline: graph is empty");
  const std::size_t n = g.size();
  const auto d = static_cast<std::size_t>(cfg.dim);
  int d_e = 0;
  for (auto* t : texts)
    if (t) {
      d_e = static_cast<int>(t->dim());
      break;
    }
  KgModel m;
  m.dim = cfg.dim;
  for (NodeIndex i = 0; i < n; ++i) m.ids.push_back(g.node(i).id);
  Rng rng(derive_seed(cfg.seed, "kg"));
  std::normal_distribution<double> init(0.0, 0.1);
  m.z.resize(n * d);
  for (double& x : m.z) x = init(rng);
  m.relation.assign(d, 0.0);
  if (d_e > 0)
    m.text_map = AdapterParams::random(AdapterVariant::linear, cfg.dim, d_e,
                                       derive_seed(cfg.seed, "kg-text"), 0.1);

  NegativeSampler sampler(g);
  auto edges = g.edges();
  std::vector<NodeIndex> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> diff_c(d), diff_n(d), t(d);
  const double lr = cfg.learning_rate;
  auto z = [&](std::size_t i) { return std::span<double>(m.z.data() + i * d, d); };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(edges.begin(), edges.end(), rng);
    for (const auto& [c, p] : edges) {
      for (int k = 0; k < cfg.negatives_per_edge; ++k) {
        auto neg = sampler.sample(p, rng);
        if (!neg) break;
        auto zp = z(p), zc = z(c), zn = z(*neg);
        double sc = 0.0, sn = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          diff_c[i] = zp[i] + m.relation[i] - zc[i];
          diff_n[i] = zp[i] + m.relation[i] - zn[i];
          sc += diff_c[i] * diff_c[i];
          sn += diff_n[i] * diff_n[i];
        }
        if (cfg.margin + sc - sn <= 0.0) continue;
        for (std::size_t i = 0; i < d; ++i) {
          const double gpr = 2.0 * (diff_c[i] - diff_n[i]);
          zp[i] -= lr * gpr;
          m.relation[i] -= lr * gpr;
          zc[i] += lr * 2.0 * diff_c[i];
          zn[i] -= lr * 2.0 * diff_n[i];
        }
      }
    }
    if (d_e == 0 || cfg.lambda_text <= 0.0) continue;
    std::shuffle(order.begin(), order.end(), rng);
    AdapterParams grad = AdapterParams::zeros(AdapterVariant::linear, cfg.dim, d_e);
    encoding::AdapterCache cache;
    for (NodeIndex v : order) {
      if (!texts[v]) continue;
      encoding::adapter_forward(m.text_map, texts[v]->coords, t, &cache);
      auto zv = z(v);
      for (std::size_t i = 0; i < d; ++i) diff_c[i] = 2.0 * cfg.lambda_text * (t[i] - zv[i]);
      std::fill(grad.W.begin(), grad.W.end(), 0.0);
      std::fill(grad.b.begin(), grad.b.end(), 0.0);
      encoding::adapter_backward(m.text_map, texts[v]->coords, cache, diff_c, grad);
      for (std::size_t i = 0; i < grad.parameter_count(); ++i)
        m.text_map.parameter(i) -= lr * grad.parameter(i);
      for (std::size_t i = 0; i < d; ++i) zv[i] += lr * diff_c[i];
    }
  }
  if (!all_finite(m.z)) throw Error("kg baseline diverged");
  return m;
}

}  // namespace hyem::training
