#pragma once

/// Euclidean nearest-neighbour indexes over tangent and text vectors: an
/// exact brute-force scan and a hierarchical navigable small-world graph.
/// Binary layout is described in docs/index_format.md.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <queue>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "hyem/error.hpp"
#include "hyem/util.hpp"

namespace hyem::index {

enum class Metric : std::uint8_t { l2 = 0, cosine = 1 };
enum class IndexKind : std::uint8_t { exact = 0, graph = 1 };

inline std::string to_string(Metric m) { return m == Metric::l2 ? "l2" : "cosine"; }
inline std::string to_string(IndexKind k) { return k == IndexKind::exact ? "exact" : "graph"; }
inline IndexKind index_kind_from_string(std::string_view s) {
  if (s == "exact") return IndexKind::exact;
  if (s == "graph" || s == "hnsw") return IndexKind::graph;
  throw Error("unknown index kind: " + std::string(s));
}

struct IndexParams {
  IndexKind kind = IndexKind::graph;
  Metric metric = Metric::l2;
  std::uint32_t M = 16;
  std::uint32_t ef_construction = 200;
  /// 0 selects max(64, 2L) per query.
  std::uint32_t ef_search = 0;
  std::uint64_t seed = 0;
};

struct SearchHit {
  std::uint32_t key = 0;
  double distance = 0.0;

  friend bool operator<(const SearchHit& a, const SearchHit& b) {
    return a.distance != b.distance ? a.distance < b.distance : a.key < b.key;
  }
  friend bool operator==(const SearchHit& a, const SearchHit& b) = default;
};

inline constexpr char kIndexMagic[4] = {'H', 'Y', 'I', 'X'};
inline constexpr std::uint32_t kIndexVersion = 1;
// Fields are written in host order; the file format is little-endian.
static_assert(std::endian::native == std::endian::little, "index files require a little-endian host");

class VectorIndex {
 public:
  VectorIndex() = default;

  /// `flat` holds keys.size() rows of `dim` values. Keys must be unique;
  /// ties in search results are broken by ascending key.
  static VectorIndex build(std::vector<std::uint32_t> keys, std::span<const double> flat,
                           std::size_t dim, const IndexParams& params) {
    if (keys.empty()) throw Error("index build: no vectors");
    if (dim == 0) throw Error("index build: dimension must be positive");
    if (flat.size() != keys.size() * dim)
      throw Error("index build: dimension mismatch (" + std::to_string(flat.size()) +
                  " values for " + std::to_string(keys.size()) + " vectors of dim " +
                  std::to_string(dim) + ")");
    if (params.kind == IndexKind::graph && params.M < 2) throw Error("index build: M must be >= 2");
    {
      std::unordered_set<std::uint32_t> seen;
      for (auto k : keys)
        if (!seen.insert(k).second) throw Error("index build: duplicate key " + std::to_string(k));
    }
    VectorIndex idx;
    idx.params_ = params;
    idx.dim_ = dim;
    idx.keys_ = std::move(keys);
    idx.data_.resize(flat.size());
    for (std::size_t r = 0; r < idx.keys_.size(); ++r) {
      std::span<const double> row = flat.subspan(r * dim, dim);
      if (!all_finite(row)) throw Error("index build: non-finite vector");
      double scale = 1.0;
      if (params.metric == Metric::cosine) {
        const double n = norm(row);
        scale = n > 0.0 ? 1.0 / n : 0.0;
      }
      for (std::size_t j = 0; j < dim; ++j)
        idx.data_[r * dim + j] = static_cast<float>(row[j] * scale);
    }
    if (params.kind == IndexKind::graph) idx.build_graph();
    return idx;
  }

  std::size_t size() const noexcept { return keys_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const IndexParams& params() const noexcept { return params_; }
  const std::vector<std::uint32_t>& keys() const noexcept { return keys_; }
  int max_level() const noexcept { return max_level_; }
  /// Neighbour lists of node position `i` per layer (graph kind only).
  const std::vector<std::vector<std::uint32_t>>& links(std::size_t i) const { return links_.at(i); }
  std::size_t max_degree(int layer) const {
    return layer == 0 ? 2 * params_.M : params_.M;
  }

  /// Up to L nearest stored vectors ordered by (distance, key).
  std::vector<SearchHit> search(std::span<const double> query, std::size_t L,
                                std::size_t ef_search = 0) const {
    if (L == 0) throw Error("search: L must be >= 1");
    if (query.size() != dim_)
      throw Error("search: query dimension " + std::to_string(query.size()) + " != " +
                  std::to_string(dim_));
    std::vector<float> q = prepare_query(query);
    std::vector<SearchHit> out;
    if (params_.kind == IndexKind::exact || keys_.size() <= L) {
      out.reserve(keys_.size());
      for (std::size_t i = 0; i < keys_.size(); ++i) out.push_back({keys_[i], dist(q, i)});
      const std::size_t take = std::min(L, out.size());
      std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(take), out.end());
      out.resize(take);
      return out;
    }
    std::size_t ef = ef_search ? ef_search
                               : (params_.ef_search ? params_.ef_search
                                                    : std::max<std::size_t>(64, 2 * L));
    ef = std::max(ef, L);
    std::uint32_t cur = static_cast<std::uint32_t>(entry_);
    double cur_d = dist(q, cur);
    for (int layer = max_level_; layer > 0; --layer) greedy(q, cur, cur_d, layer);
    auto found = search_layer(q, {{cur_d, cur}}, ef, 0);
    std::sort(found.begin(), found.end());
    for (std::size_t i = 0; i < found.size() && out.size() < L; ++i)
      out.push_back({keys_[found[i].second], found[i].first});
    std::sort(out.begin(), out.end());
    return out;
  }

  void save(std::ostream& out) const {
    out.write(kIndexMagic, 4);
    put<std::uint32_t>(out, kIndexVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(params_.metric));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dim_));
    put<std::uint64_t>(out, keys_.size());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(params_.kind));
    put<std::uint32_t>(out, params_.M);
    put<std::uint32_t>(out, params_.ef_construction);
    put<std::uint32_t>(out, params_.ef_search);
    put<std::uint64_t>(out, params_.seed);
    put<std::int32_t>(out, entry_);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(std::max(max_level_, 0)));
    out.write(reinterpret_cast<const char*>(keys_.data()),
              static_cast<std::streamsize>(keys_.size() * sizeof(std::uint32_t)));
    out.write(reinterpret_cast<const char*>(data_.data()),
              static_cast<std::streamsize>(data_.size() * sizeof(float)));
    if (params_.kind == IndexKind::graph) {
      for (const auto& node : links_) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(node.size() - 1));
        for (const auto& layer : node) {
          put<std::uint32_t>(out, static_cast<std::uint32_t>(layer.size()));
          out.write(reinterpret_cast<const char*>(layer.data()),
                    static_cast<std::streamsize>(layer.size() * sizeof(std::uint32_t)));
        }
      }
    }
    if (!out) throw Error("index write failed");
  }

  static VectorIndex load(std::istream& in) {
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, kIndexMagic, 4) != 0)
      throw Error("not an index file (bad magic)");
    const auto version = get<std::uint32_t>(in);
    if (version != kIndexVersion)
      throw Error("unsupported index format version " + std::to_string(version));
    VectorIndex idx;
    const auto metric = get<std::uint8_t>(in);
    if (metric > 1) throw Error("index file: bad metric tag");
    idx.params_.metric = static_cast<Metric>(metric);
    idx.dim_ = get<std::uint32_t>(in);
    const auto count = get<std::uint64_t>(in);
    const auto kind = get<std::uint8_t>(in);
    if (kind > 1) throw Error("index file: bad kind tag");
    idx.params_.kind = static_cast<IndexKind>(kind);
    idx.params_.M = get<std::uint32_t>(in);
    idx.params_.ef_construction = get<std::uint32_t>(in);
    idx.params_.ef_search = get<std::uint32_t>(in);
    idx.params_.seed = get<std::uint64_t>(in);
    idx.entry_ = get<std::int32_t>(in);
    idx.max_level_ = static_cast<int>(get<std::uint32_t>(in));
    if (count == 0 || idx.dim_ == 0 || count > (1ULL << 32))
      throw Error("index file: bad header sizes");
    idx.keys_.resize(count);
    idx.data_.resize(count * idx.dim_);
    in.read(reinterpret_cast<char*>(idx.keys_.data()),
            static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
    in.read(reinterpret_cast<char*>(idx.data_.data()),
            static_cast<std::streamsize>(idx.data_.size() * sizeof(float)));
    if (!in) throw Error("index file truncated");
    if (idx.params_.kind == IndexKind::graph) {
      idx.links_.resize(count);
      for (auto& node : idx.links_) {
        const auto level = get<std::uint32_t>(in);
        if (level > 64) throw Error("index file: bad node level");
        node.resize(level + 1);
        for (auto& layer : node) {
          const auto deg = get<std::uint32_t>(in);
          if (deg > 4 * idx.params_.M + 4) throw Error("index file: bad degree");
          layer.resize(deg);
          in.read(reinterpret_cast<char*>(layer.data()),
                  static_cast<std::streamsize>(deg * sizeof(std::uint32_t)));
          for (auto v : layer)
            if (v >= count) throw Error("index file: neighbour out of range");
        }
      }
      if (!in) throw Error("index file truncated");
      if (idx.entry_ < 0 || static_cast<std::uint64_t>(idx.entry_) >= count)
        throw Error("index file: bad entry point");
    }
    return idx;
  }

  /// Exact size of the serialized form in bytes.
  std::size_t byte_size() const {
    std::size_t bytes = 4 + 4 + 1 + 4 + 8 + 1 + 4 * 3 + 8 + 4 + 4;
    bytes += keys_.size() * 4 + data_.size() * 4;
    if (params_.kind == IndexKind::graph)
      for (const auto& node : links_) {
        bytes += 4;
        for (const auto& layer : node) bytes += 4 + 4 * layer.size();
      }
    return bytes;
  }

 private:
  using Cand = std::pair<double, std::uint32_t>;  // (distance, position)

  template <typename T>
  static void put(std::ostream& out, T v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  template <typename T>
  static T get(std::istream& in) {
    T v{};
    if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw Error("index file truncated");
    return v;
  }

  std::vector<float> prepare_query(std::span<const double> query) const {
    double scale = 1.0;
    if (params_.metric == Metric::cosine) {
      const double n = norm(query);
      scale = n > 0.0 ? 1.0 / n : 0.0;
    }
    std::vector<float> q(dim_);
    for (std::size_t j = 0; j < dim_; ++j) q[j] = static_cast<float>(query[j] * scale);
    return q;
  }

  const float* row(std::size_t i) const { return data_.data() + i * dim_; }

  double dist_rows(const float* a, const float* b) const {
    double s = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) {
      const double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
      s += diff * diff;
    }
    return std::sqrt(s);
  }
  double dist(const std::vector<float>& q, std::size_t i) const { return dist_rows(q.data(), row(i)); }

  void greedy(const std::vector<float>& q, std::uint32_t& cur, double& cur_d, int layer) const {
    for (bool changed = true; changed;) {
      changed = false;
      for (std::uint32_t nb : links_[cur][static_cast<std::size_t>(layer)]) {
        const double d = dist(q, nb);
        if (d < cur_d || (d == cur_d && nb < cur)) {
          cur = nb;
          cur_d = d;
          changed = true;
        }
      }
    }
  }

  /// Beam search on one layer; returns up to ef (distance, position) pairs.
  std::vector<Cand> search_layer(const std::vector<float>& q, std::vector<Cand> entries,
                                 std::size_t ef, int layer) const {
    // Epoch-stamped visited marks, one buffer per thread so concurrent
    // searches never share state.
    thread_local std::vector<std::uint32_t> visited_;
    thread_local std::uint32_t visit_epoch_ = 0;
    if (visited_.size() < keys_.size()) visited_.resize(keys_.size(), 0);
    if (++visit_epoch_ == 0) {
      std::fill(visited_.begin(), visited_.end(), 0);
      visit_epoch_ = 1;
    }
    std::priority_queue<Cand, std::vector<Cand>, std::greater<>> candidates;
    std::priority_queue<Cand> best;
    for (const auto& e : entries) {
      if (visited_[e.second] == visit_epoch_) continue;
      visited_[e.second] = visit_epoch_;
      candidates.push(e);
      best.push(e);
    }
    while (best.size() > ef) best.pop();
    while (!candidates.empty()) {
      const Cand c = candidates.top();
      if (best.size() >= ef && c > best.top()) break;
      candidates.pop();
      for (std::uint32_t nb : links_[c.second][static_cast<std::size_t>(layer)]) {
        if (visited_[nb] == visit_epoch_) continue;
        visited_[nb] = visit_epoch_;
        const Cand nc{dist(q, nb), nb};
        if (best.size() < ef || nc < best.top()) {
          candidates.push(nc);
          best.push(nc);
          if (best.size() > ef) best.pop();
        }
      }
    }
    std::vector<Cand> out;
    out.reserve(best.size());
    while (!best.empty()) {
      out.push_back(best.top());
      best.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  /// Keeps candidates that are closer to the base than to any already kept
  /// neighbour, then tops up with the nearest discarded ones.
  std::vector<std::uint32_t> select_neighbours(std::vector<Cand> cands, std::size_t m) const {
    std::sort(cands.begin(), cands.end());
    std::vector<std::uint32_t> kept;
    std::vector<std::uint32_t> discarded;
    for (const auto& [d, v] : cands) {
      if (kept.size() >= m) break;
      bool good = true;
      for (std::uint32_t k : kept) {
        if (dist_rows(row(v), row(k)) < d) {
          good = false;
          break;
        }
      }
      (good ? kept : discarded).push_back(v);
    }
    for (std::size_t i = 0; i < discarded.size() && kept.size() < m; ++i) kept.push_back(discarded[i]);
    return kept;
  }

  void build_graph() {
    const std::size_t n = keys_.size();
    const std::size_t M = params_.M;
    const double mL = 1.0 / std::log(static_cast<double>(M));
    Rng rng(derive_seed(params_.seed, "hnsw-levels"));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    links_.assign(n, {});
    entry_ = -1;
    max_level_ = -1;
    std::vector<float> q(dim_);
    for (std::size_t i = 0; i < n; ++i) {
      const double r = 1.0 - unit(rng);  // (0, 1]
      const int level = std::min(static_cast<int>(std::floor(-std::log(r) * mL)), 32);
      links_[i].assign(static_cast<std::size_t>(level) + 1, {});
      if (entry_ < 0) {
        entry_ = static_cast<std::int32_t>(i);
        max_level_ = level;
        continue;
      }
      std::copy(row(i), row(i) + dim_, q.begin());
      auto cur = static_cast<std::uint32_t>(entry_);
      double cur_d = dist(q, cur);
      for (int layer = max_level_; layer > level; --layer) greedy(q, cur, cur_d, layer);
      std::vector<Cand> entries{{cur_d, cur}};
      for (int layer = std::min(level, max_level_); layer >= 0; --layer) {
        auto found = search_layer(q, entries, params_.ef_construction, layer);
        auto chosen = select_neighbours(found, M);
        const auto L = static_cast<std::size_t>(layer);
        links_[i][L] = chosen;
        const std::size_t cap = max_degree(layer);
        for (std::uint32_t nb : chosen) {
          auto& back = links_[nb][L];
          back.push_back(static_cast<std::uint32_t>(i));
          if (back.size() > cap) {
            std::vector<Cand> cs;
            cs.reserve(back.size());
            for (std::uint32_t x : back) cs.push_back({dist_rows(row(nb), row(x)), x});
            back = select_neighbours(std::move(cs), cap);
          }
        }
        entries = std::move(found);
      }
      if (level > max_level_) {
        max_level_ = level;
        entry_ = static_cast<std::int32_t>(i);
      }
    }
  }

  IndexParams params_;
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> keys_;
  std::vector<float> data_;
  std::vector<std::vector<std::vector<std::uint32_t>>> links_;
  std::int32_t entry_ = -1;
  int max_level_ = 0;
};

}  // namespace hyem::index
