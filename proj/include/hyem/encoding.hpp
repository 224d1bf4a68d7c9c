#pragma once

/// Text encoders (feature hashing and precomputed tables) and the adapter
/// that lifts Euclidean text vectors onto the hyperboloid.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <istream>
#include <memory>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hyem/error.hpp"
#include "hyem/geometry.hpp"
#include "hyem/ontology.hpp"
#include "hyem/util.hpp"

namespace hyem::encoding {

inline constexpr int kDefaultTextDim = 128;

struct TextEmbedding {
  std::vector<double> coords;
  bool unit_normalized = false;
  /// False for the placeholder vector returned for empty text.
  bool informative = true;

  std::size_t dim() const noexcept { return coords.size(); }
};

inline double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (!(na > 0.0) || !(nb > 0.0)) return 0.0;
  return dot(a, b) / (na * nb);
}

inline void normalize_in_place(std::vector<double>& v) {
  const double n = norm(v);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

/// Signed character 3-gram hashing over "#text#", L2-normalised.
inline TextEmbedding hash_encode(std::string_view text, int dim, std::uint64_t seed) {
  if (dim < 8) throw Error("hash_encode: dimension must be >= 8");
  const std::uint64_t basis = splitmix64(seed ^ 0x68617368ULL);
  TextEmbedding e;
  e.coords.assign(static_cast<std::size_t>(dim), 0.0);
  e.unit_normalized = true;
  const auto bucket = [&](std::string_view token, double weight) {
    const std::uint64_t h = fnv1a64(token, basis);
    const std::size_t b = static_cast<std::size_t>(h % static_cast<std::uint64_t>(dim));
    e.coords[b] += (h >> 63) ? -weight : weight;
  };
  const std::string padded = "#" + lowercase(text) + "#";
  if (!text.empty()) {
    for (std::size_t i = 0; i + 3 <= padded.size(); ++i)
      bucket(std::string_view(padded).substr(i, 3), 1.0);
  }
  const double n = norm(e.coords);
  if (text.empty() || !(n > 0.0)) {
    std::fill(e.coords.begin(), e.coords.end(), 0.0);
    bucket("\x01<empty>", 1.0);
    for (double& x : e.coords) x = x > 0 ? 1.0 : x < 0 ? -1.0 : 0.0;
    e.informative = false;
    return e;
  }
  for (double& x : e.coords) x /= n;
  return e;
}

/// Text used to embed an entity: the label plus the first definition
/// sentence when one exists.
inline std::string entity_text(const ontology::OntologyNode& node) {
  if (!node.definition || node.definition->empty()) return node.label;
  const std::string& def = *node.definition;
  std::size_t end = def.size();
  for (std::size_t i = 0; i < def.size(); ++i) {
    if ((def[i] == '.' || def[i] == '!' || def[i] == '?') &&
        (i + 1 == def.size() || def[i + 1] == ' ')) {
      end = i + 1;
      break;
    }
  }
  return node.label + " " + def.substr(0, end);
}

// ---------------------------------------------------------------------------
// Embedding tables

/// Id-keyed embeddings sharing one dimension, kept in insertion order.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(int dim = 0) : dim_(dim) {}

  int dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

  void add(const std::string& id, TextEmbedding e) {
    if (dim_ == 0) dim_ = static_cast<int>(e.dim());
    if (static_cast<int>(e.dim()) != dim_)
      throw Error("embedding '" + id + "': dimension " + std::to_string(e.dim()) +
                  " does not match " + std::to_string(dim_));
    if (!all_finite(e.coords)) throw Error("embedding '" + id + "': non-finite value");
    if (!index_.emplace(id, ids_.size()).second) throw Error("duplicate embedding id: " + id);
    ids_.push_back(id);
    rows_.push_back(std::move(e));
  }

  const TextEmbedding* find(const std::string& id) const {
    auto it = index_.find(id);
    return it == index_.end() ? nullptr : &rows_[it->second];
  }
  const TextEmbedding& at(const std::string& id) const {
    if (auto* e = find(id)) return *e;
    throw Error("no embedding for id: " + id);
  }
  const TextEmbedding& row(std::size_t i) const { return rows_.at(i); }

 private:
  int dim_;
  std::vector<std::string> ids_;
  std::vector<TextEmbedding> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::string_view kEmbeddingFormat = "emb-v1";

inline EmbeddingTable load_embeddings(std::istream& in) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ParseError("empty embedding file", 1);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), 1);
  }
  if (header.value("format", "") != kEmbeddingFormat)
    throw ParseError("expected format emb-v1", 1);
  const int dim = header.at("dim").get<int>();
  if (dim <= 0) throw ParseError("dimension must be positive", 1);
  EmbeddingTable table(dim);
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::string id = "?";
    try {
      auto rec = nlohmann::json::parse(line);
      id = rec.at("id").get<std::string>();
      TextEmbedding e;
      for (const auto& x : rec.at("vec")) {
        // JSON has no NaN literal; null and strings like "nan" are rejected as non-finite.
        if (!x.is_number()) throw Error("embedding '" + id + "': non-finite value");
        e.coords.push_back(x.get<double>());
      }
      const double n = norm(e.coords);
      e.unit_normalized = std::abs(n - 1.0) <= 1e-6;
      table.add(id, std::move(e));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), lineno);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError("record '" + id + "': " + e.what(), lineno);
    }
  }
  return table;
}

inline void save_embeddings(const EmbeddingTable& table, std::ostream& out) {
  out << nlohmann::json{{"format", kEmbeddingFormat}, {"dim", table.dim()}}.dump() << "\n";
  for (std::size_t i = 0; i < table.size(); ++i)
    out << nlohmann::json{{"id", table.ids()[i]}, {"vec", table.row(i).coords}}.dump() << "\n";
}

// ---------------------------------------------------------------------------
// Encoders

class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual int dim() const = 0;
  /// `key` identifies the item for table-backed encoders; `text` is what
  /// content-based encoders read.
  virtual TextEmbedding encode(std::string_view key, std::string_view text) const = 0;
  virtual std::string name() const = 0;
};

class HashEncoder final : public TextEncoder {
 public:
  HashEncoder(int dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
    if (dim < 8) throw Error("hash encoder dimension must be >= 8");
  }
  int dim() const override { return dim_; }
  TextEmbedding encode(std::string_view, std::string_view text) const override {
    return hash_encode(text, dim_, seed_);
  }
  std::string name() const override { return "hash"; }
  std::uint64_t seed() const noexcept { return seed_; }

 private:
  int dim_;
  std::uint64_t seed_;
};

/// Looks vectors up by key in a loaded table.
class PrecomputedEncoder final : public TextEncoder {
 public:
  explicit PrecomputedEncoder(EmbeddingTable table) : table_(std::move(table)) {}
  int dim() const override { return table_.dim(); }
  TextEmbedding encode(std::string_view key, std::string_view) const override {
    return table_.at(std::string(key));
  }
  std::string name() const override { return "precomputed"; }

 private:
  EmbeddingTable table_;
};

// ---------------------------------------------------------------------------
// Adapter

enum class AdapterVariant { linear, two_layer };

inline std::string to_string(AdapterVariant v) {
  return v == AdapterVariant::linear ? "linear" : "two-layer";
}
inline AdapterVariant adapter_variant_from_string(std::string_view s) {
  if (s == "linear") return AdapterVariant::linear;
  if (s == "two-layer" || s == "mlp") return AdapterVariant::two_layer;
  throw Error("unknown adapter variant: " + std::string(s));
}

/// Linear: t = W e + b. Two-layer: t = W tanh(W1 e + b1) + b with hidden
/// width h; W is d x h in that case. All matrices row-major.
struct AdapterParams {
  AdapterVariant variant = AdapterVariant::linear;
  int d = 0;
  int d_e = 0;
  int h = 0;
  std::vector<double> W;
  std::vector<double> b;
  std::vector<double> W1;
  std::vector<double> b1;

  int input_width_of_W() const { return variant == AdapterVariant::linear ? d_e : h; }

  static AdapterParams zeros(AdapterVariant variant, int d, int d_e, int h = 0) {
    if (d < 1 || d_e < 1) throw Error("adapter dimensions must be positive");
    AdapterParams p;
    p.variant = variant;
    p.d = d;
    p.d_e = d_e;
    p.h = variant == AdapterVariant::two_layer ? (h > 0 ? h : d) : 0;
    p.W.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(p.input_width_of_W()), 0.0);
    p.b.assign(static_cast<std::size_t>(d), 0.0);
    if (variant == AdapterVariant::two_layer) {
      p.W1.assign(static_cast<std::size_t>(p.h) * static_cast<std::size_t>(d_e), 0.0);
      p.b1.assign(static_cast<std::size_t>(p.h), 0.0);
    }
    return p;
  }

  /// Gaussian init with standard deviation scale / sqrt(fan_in).
  static AdapterParams random(AdapterVariant variant, int d, int d_e, std::uint64_t seed,
                              double scale = 0.1, int h = 0) {
    AdapterParams p = zeros(variant, d, d_e, h);
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    const double s_w = scale / std::sqrt(static_cast<double>(p.input_width_of_W()));
    for (double& x : p.W) x = s_w * g(rng);
    if (variant == AdapterVariant::two_layer) {
      const double s1 = 1.0 / std::sqrt(static_cast<double>(d_e));
      for (double& x : p.W1) x = s1 * g(rng);
    }
    return p;
  }

  /// All parameters as one flat list (W, b, W1, b1), for optimisers and
  /// finite-difference checks.
  std::size_t parameter_count() const { return W.size() + b.size() + W1.size() + b1.size(); }
  double& parameter(std::size_t i) {
    if (i < W.size()) return W[i];
    i -= W.size();
    if (i < b.size()) return b[i];
    i -= b.size();
    if (i < W1.size()) return W1[i];
    return b1.at(i - W1.size());
  }

  bool finite() const { return all_finite(W) && all_finite(b) && all_finite(W1) && all_finite(b1); }
};

/// Hidden activations kept between forward and backward passes.
struct AdapterCache {
  std::vector<double> hidden;  // tanh(W1 e + b1), two-layer only
};

inline void adapter_forward(const AdapterParams& p, std::span<const double> e, std::span<double> t,
                            AdapterCache* cache = nullptr) {
  if (static_cast<int>(e.size()) != p.d_e)
    throw Error("adapter input dimension " + std::to_string(e.size()) + " != " +
                std::to_string(p.d_e));
  if (static_cast<int>(t.size()) != p.d) throw Error("adapter output dimension mismatch");
  std::vector<double> local;
  std::span<const double> x = e;
  if (p.variant == AdapterVariant::two_layer) {
    std::vector<double>& hid = cache ? cache->hidden : local;
    hid.assign(static_cast<std::size_t>(p.h), 0.0);
    for (int j = 0; j < p.h; ++j) {
      const double* row = &p.W1[static_cast<std::size_t>(j) * static_cast<std::size_t>(p.d_e)];
      double s = p.b1[static_cast<std::size_t>(j)];
      for (int k = 0; k < p.d_e; ++k) s += row[k] * e[static_cast<std::size_t>(k)];
      hid[static_cast<std::size_t>(j)] = std::tanh(s);
    }
    x = hid;
  }
  const int in = p.input_width_of_W();
  for (int i = 0; i < p.d; ++i) {
    const double* row = &p.W[static_cast<std::size_t>(i) * static_cast<std::size_t>(in)];
    double s = p.b[static_cast<std::size_t>(i)];
    for (int k = 0; k < in; ++k) s += row[k] * x[static_cast<std::size_t>(k)];
    t[static_cast<std::size_t>(i)] = s;
  }
}

inline std::vector<double> adapter_tangent(const AdapterParams& p, std::span<const double> e) {
  std::vector<double> t(static_cast<std::size_t>(p.d));
  adapter_forward(p, e, t);
  return t;
}

/// Accumulates scale * dL/dparams into `grad` given dL/dt. `cache` must come
/// from the forward pass on the same input.
inline void adapter_backward(const AdapterParams& p, std::span<const double> e,
                             const AdapterCache& cache, std::span<const double> grad_t,
                             AdapterParams& grad, double scale = 1.0) {
  const int in = p.input_width_of_W();
  std::span<const double> x = e;
  if (p.variant == AdapterVariant::two_layer) x = cache.hidden;
  for (int i = 0; i < p.d; ++i) {
    const double g = scale * grad_t[static_cast<std::size_t>(i)];
    if (g == 0.0) continue;
    double* row = &grad.W[static_cast<std::size_t>(i) * static_cast<std::size_t>(in)];
    for (int k = 0; k < in; ++k) row[k] += g * x[static_cast<std::size_t>(k)];
    grad.b[static_cast<std::size_t>(i)] += g;
  }
  if (p.variant != AdapterVariant::two_layer) return;
  for (int j = 0; j < p.h; ++j) {
    double gh = 0.0;
    for (int i = 0; i < p.d; ++i)
      gh += grad_t[static_cast<std::size_t>(i)] *
            p.W[static_cast<std::size_t>(i) * static_cast<std::size_t>(p.h) +
                static_cast<std::size_t>(j)];
    const double a = cache.hidden[static_cast<std::size_t>(j)];
    const double gz = scale * gh * (1.0 - a * a);
    if (gz == 0.0) continue;
    double* row = &grad.W1[static_cast<std::size_t>(j) * static_cast<std::size_t>(p.d_e)];
    for (int k = 0; k < p.d_e; ++k) row[k] += gz * e[static_cast<std::size_t>(k)];
    grad.b1[static_cast<std::size_t>(j)] += gz;
  }
}

struct Adapted {
  geometry::LorentzPoint point;
  geometry::TangentVector tangent;
};

inline Adapted adapt(const TextEmbedding& e, const AdapterParams& p) {
  geometry::TangentVector t(adapter_tangent(p, e.coords));
  return {geometry::lorentz_exp0(t), t};
}

inline constexpr std::string_view kAdapterFormat = "adapter-v1";

inline nlohmann::json adapter_to_json(const AdapterParams& p) {
  nlohmann::json j = {{"format", kAdapterFormat}, {"variant", to_string(p.variant)},
                      {"d", p.d}, {"d_e", p.d_e}, {"h", p.h}, {"W", p.W}, {"b", p.b}};
  if (p.variant == AdapterVariant::two_layer) {
    j["W1"] = p.W1;
    j["b1"] = p.b1;
  }
  return j;
}

inline AdapterParams adapter_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != kAdapterFormat) throw Error("expected adapter-v1 document");
  AdapterParams p = AdapterParams::zeros(adapter_variant_from_string(j.at("variant").get<std::string>()),
                                         j.at("d").get<int>(), j.at("d_e").get<int>(),
                                         j.at("h").get<int>());
  auto fill = [&](const char* key, std::vector<double>& dst) {
    auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != dst.size()) throw Error(std::string("adapter field size mismatch: ") + key);
    dst = std::move(v);
  };
  fill("W", p.W);
  fill("b", p.b);
  if (p.variant == AdapterVariant::two_layer) {
    fill("W1", p.W1);
    fill("b1", p.b1);
  }
  if (!p.finite()) throw Error("adapter contains non-finite values");
  return p;
}

}  // namespace hyem::encoding
