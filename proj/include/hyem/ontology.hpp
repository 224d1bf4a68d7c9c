#pragma once

/// Ontology is-a DAGs: OBO flat-file parsing, depth and branching
/// statistics, deterministic subset sampling, synthetic hierarchies, and the
/// line-delimited JSON graph format shared by every pipeline stage.

#include <algorithm>
#include <cstdint>
#include <cmath>
#include <deque>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "hyem/error.hpp"
#include "hyem/util.hpp"

namespace hyem::ontology {

using NodeIndex = std::uint32_t;

/// Words that phrase a query as taxonomy navigation. Generated vocabulary
/// never contains them.
inline constexpr std::string_view kHierarchyKeywords[] = {
    "subtypes", "parent", "ancestor", "descendant", "broader", "children", "siblings",
    "specificity"};

struct OntologyNode {
  std::string id;
  std::string label;
  std::vector<std::string> synonyms;
  std::optional<std::string> definition;
  bool obsolete = false;
};

struct GraphStats {
  std::size_t node_count = 0;
  std::size_t edge_count = 0;
  int max_depth = 0;
  /// Mean number of children over nodes that have children.
  double avg_branching = 0.0;
  /// Edges per node, the ratio reported in ontology summary tables.
  double mean_out_degree = 0.0;
  std::size_t root_count = 0;
  std::size_t unreachable_count = 0;
};

/// Immutable is-a DAG. Nodes are stored sorted by id, so node indices order
/// the same way as ids.
class OntologyGraph {
 public:
  OntologyGraph() = default;

  std::size_t size() const noexcept { return nodes_.size(); }
  bool empty() const noexcept { return nodes_.empty(); }
  const OntologyNode& node(NodeIndex i) const { return nodes_.at(i); }
  const std::vector<OntologyNode>& nodes() const noexcept { return nodes_; }

  std::optional<NodeIndex> find(std::string_view id) const {
    auto it = index_.find(std::string(id));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  NodeIndex at(std::string_view id) const {
    auto i = find(id);
    if (!i) throw Error("unknown node id: " + std::string(id));
    return *i;
  }

  const std::vector<NodeIndex>& parents(NodeIndex i) const { return parents_.at(i); }
  const std::vector<NodeIndex>& children(NodeIndex i) const { return children_.at(i); }

  /// Minimum depth over all root-to-node paths; -1 when no root reaches it.
  int depth(NodeIndex i) const { return depth_.at(i); }
  const std::vector<int>& depths() const noexcept { return depth_; }

  std::vector<NodeIndex> roots() const {
    std::vector<NodeIndex> out;
    for (NodeIndex i = 0; i < size(); ++i)
      if (parents_[i].empty()) out.push_back(i);
    return out;
  }

  /// (child, parent) pairs in ascending (child, parent) index order.
  std::vector<std::pair<NodeIndex, NodeIndex>> edges() const {
    std::vector<std::pair<NodeIndex, NodeIndex>> out;
    for (NodeIndex c = 0; c < size(); ++c)
      for (NodeIndex p : parents_[c]) out.emplace_back(c, p);
    return out;
  }
  std::size_t edge_count() const {
    std::size_t n = 0;
    for (const auto& p : parents_) n += p.size();
    return n;
  }

  /// is_a targets that did not resolve to a retained node: (child id, target id).
  const std::vector<std::pair<std::string, std::string>>& dangling() const noexcept {
    return dangling_;
  }

  std::vector<NodeIndex> unreachable() const {
    std::vector<NodeIndex> out;
    for (NodeIndex i = 0; i < size(); ++i)
      if (depth_[i] < 0) out.push_back(i);
    return out;
  }

  /// Transitive closure upward, sorted ascending.
  std::vector<NodeIndex> ancestors(NodeIndex v) const { return closure(v, parents_); }
  /// Transitive closure downward, sorted ascending.
  std::vector<NodeIndex> descendants(NodeIndex v) const { return closure(v, children_); }

  friend class GraphBuilder;

 private:
  std::vector<NodeIndex> closure(NodeIndex v,
                                 const std::vector<std::vector<NodeIndex>>& adj) const {
    std::vector<char> seen(size(), 0);
    std::vector<NodeIndex> stack(adj.at(v).begin(), adj.at(v).end());
    std::vector<NodeIndex> out;
    while (!stack.empty()) {
      NodeIndex x = stack.back();
      stack.pop_back();
      if (seen[x]) continue;
      seen[x] = 1;
      out.push_back(x);
      for (NodeIndex y : adj[x])
        if (!seen[y]) stack.push_back(y);
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::vector<OntologyNode> nodes_;
  std::unordered_map<std::string, NodeIndex> index_;
  std::vector<std::vector<NodeIndex>> parents_;
  std::vector<std::vector<NodeIndex>> children_;
  std::vector<int> depth_;
  std::vector<std::pair<std::string, std::string>> dangling_;
};

/// Depth map: roots at 0, every other node at 1 + min over parents.
inline std::vector<int> compute_depths(const std::vector<std::vector<NodeIndex>>& parents,
                                       const std::vector<std::vector<NodeIndex>>& children) {
  const std::size_t n = parents.size();
  std::vector<int> depth(n, -1);
  std::deque<NodeIndex> queue;
  for (NodeIndex i = 0; i < n; ++i) {
    if (parents[i].empty()) {
      depth[i] = 0;
      queue.push_back(i);
    }
  }
  while (!queue.empty()) {
    NodeIndex x = queue.front();
    queue.pop_front();
    for (NodeIndex c : children[x]) {
      if (depth[c] < 0) {
        depth[c] = depth[x] + 1;
        queue.push_back(c);
      }
    }
  }
  return depth;
}

inline std::vector<int> compute_depths(const OntologyGraph& g) {
  std::vector<std::vector<NodeIndex>> parents(g.size()), children(g.size());
  for (NodeIndex i = 0; i < g.size(); ++i) {
    parents[i] = g.parents(i);
    children[i] = g.children(i);
  }
  return compute_depths(parents, children);
}

/// Collects nodes and is-a edges, then validates and freezes them.
class GraphBuilder {
 public:
  /// Obsolete nodes are accepted and silently dropped at build time.
  void add_node(OntologyNode node) {
    if (node.id.empty()) throw Error("node id must be non-empty");
    if (!ids_.insert(node.id).second) throw Error("duplicate node id: " + node.id);
    dedup_synonyms(node.synonyms);
    nodes_.push_back(std::move(node));
  }

  void add_edge(std::string child, std::string parent) {
    edges_.emplace_back(std::move(child), std::move(parent));
  }

  OntologyGraph build() && {
    OntologyGraph g;
    std::vector<OntologyNode> kept;
    kept.reserve(nodes_.size());
    for (auto& n : nodes_)
      if (!n.obsolete) kept.push_back(std::move(n));
    std::sort(kept.begin(), kept.end(),
              [](const OntologyNode& a, const OntologyNode& b) { return a.id < b.id; });
    g.nodes_ = std::move(kept);
    for (NodeIndex i = 0; i < g.nodes_.size(); ++i) g.index_.emplace(g.nodes_[i].id, i);

    const std::size_t n = g.nodes_.size();
    g.parents_.assign(n, {});
    g.children_.assign(n, {});
    for (auto& [child, parent] : edges_) {
      auto c = g.index_.find(child);
      if (c == g.index_.end()) continue;  // edge from a dropped (obsolete) node
      auto p = g.index_.find(parent);
      if (p == g.index_.end()) {
        g.dangling_.emplace_back(child, parent);
        continue;
      }
      g.parents_[c->second].push_back(p->second);
    }
    for (NodeIndex c = 0; c < n; ++c) {
      auto& ps = g.parents_[c];
      std::sort(ps.begin(), ps.end());
      ps.erase(std::unique(ps.begin(), ps.end()), ps.end());
      for (NodeIndex p : ps) g.children_[p].push_back(c);
    }
    for (auto& ch : g.children_) std::sort(ch.begin(), ch.end());
    std::sort(g.dangling_.begin(), g.dangling_.end());

    if (auto cycle = find_cycle(g)) throw Error("not a DAG: " + *cycle);
    g.depth_ = compute_depths(g.parents_, g.children_);
    return g;
  }

 private:
  static void dedup_synonyms(std::vector<std::string>& syn) {
    std::set<std::string> seen;
    std::vector<std::string> out;
    for (auto& s : syn)
      if (seen.insert(s).second) out.push_back(std::move(s));
    syn = std::move(out);
  }

  static std::optional<std::string> find_cycle(const OntologyGraph& g) {
    const std::size_t n = g.size();
    std::vector<char> state(n, 0);  // 0 new, 1 on stack, 2 done
    std::vector<NodeIndex> path;
    std::vector<std::pair<NodeIndex, std::size_t>> stack;
    for (NodeIndex start = 0; start < n; ++start) {
      if (state[start]) continue;
      stack.emplace_back(start, 0);
      state[start] = 1;
      path.push_back(start);
      while (!stack.empty()) {
        auto& [x, next] = stack.back();
        const auto& ps = g.parents_[x];
        if (next < ps.size()) {
          NodeIndex y = ps[next++];
          if (state[y] == 1) {
            auto it = std::find(path.begin(), path.end(), y);
            std::string msg;
            for (; it != path.end(); ++it) msg += g.nodes_[*it].id + " -> ";
            return msg + g.nodes_[y].id;
          }
          if (state[y] == 0) {
            state[y] = 1;
            path.push_back(y);
            stack.emplace_back(y, 0);
          }
        } else {
          state[x] = 2;
          path.pop_back();
          stack.pop_back();
        }
      }
    }
    return std::nullopt;
  }

  std::vector<OntologyNode> nodes_;
  std::set<std::string> ids_;
  std::vector<std::pair<std::string, std::string>> edges_;
};

// ---------------------------------------------------------------------------
// OBO flat files

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

/// Extracts the first double-quoted string, honouring backslash escapes.
inline std::optional<std::string> quoted(std::string_view value) {
  auto open = value.find('"');
  if (open == std::string_view::npos) return std::nullopt;
  std::string out;
  for (std::size_t i = open + 1; i < value.size(); ++i) {
    char c = value[i];
    if (c == '\\' && i + 1 < value.size()) {
      char e = value[++i];
      out.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
    } else if (c == '"') {
      return out;
    } else {
      out.push_back(c);
    }
  }
  return std::nullopt;
}

inline std::string escape_obo(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace detail

/// Parses [Term] stanzas (id, name, synonym, def, is_a, is_obsolete). Other
/// stanza types and unknown tags are skipped. Unresolved is_a targets are
/// kept in OntologyGraph::dangling().
inline OntologyGraph parse_obo(std::istream& in) {
  GraphBuilder builder;
  std::string line;
  std::size_t lineno = 0;
  enum class Section { header, term, other } section = Section::header;
  std::optional<OntologyNode> current;
  std::vector<std::string> current_parents;
  std::size_t current_line = 0;

  auto flush = [&] {
    if (!current) return;
    if (current->id.empty()) throw ParseError("[Term] stanza without id", current_line);
    for (auto& p : current_parents) builder.add_edge(current->id, std::move(p));
    try {
      builder.add_node(std::move(*current));
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(e.what(), current_line);
    }
    current.reset();
    current_parents.clear();
  };

  while (std::getline(in, line)) {
    ++lineno;
    std::string_view s = detail::trim(line);
    if (s.empty() || s.front() == '!') continue;
    if (s.front() == '[') {
      if (s.size() < 3 || s.back() != ']' ||
          s.substr(1, s.size() - 2).find_first_of("[] ") != std::string_view::npos)
        throw ParseError("malformed stanza header: " + std::string(s), lineno);
      flush();
      if (s == "[Term]") {
        section = Section::term;
        current.emplace();
        current_line = lineno;
      } else {
        section = Section::other;
      }
      continue;
    }
    if (section != Section::term) continue;
    auto colon = s.find(':');
    if (colon == std::string_view::npos) continue;
    std::string_view tag = detail::trim(s.substr(0, colon));
    std::string_view value = detail::trim(s.substr(colon + 1));
    // Trailing "! comment" is only stripped from unquoted values.
    auto strip_comment = [](std::string_view v) {
      auto bang = v.find(" !");
      return detail::trim(bang == std::string_view::npos ? v : v.substr(0, bang));
    };
    if (tag == "id") {
      current->id = std::string(strip_comment(value));
    } else if (tag == "name") {
      current->label = std::string(value);
    } else if (tag == "synonym") {
      if (auto q = detail::quoted(value)) current->synonyms.push_back(*q);
    } else if (tag == "def") {
      if (auto q = detail::quoted(value)) current->definition = *q;
    } else if (tag == "is_a") {
      auto target = strip_comment(value);
      auto space = target.find_first_of(" \t{");
      if (space != std::string_view::npos) target = target.substr(0, space);
      if (!target.empty()) current_parents.emplace_back(target);
    } else if (tag == "is_obsolete") {
      current->obsolete = (value == "true");
    }
  }
  flush();
  return std::move(builder).build();
}

inline OntologyGraph parse_obo(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_obo(in);
}

inline void write_obo(const OntologyGraph& g, std::ostream& out) {
  out << "format-version: 1.2\n";
  for (NodeIndex i = 0; i < g.size(); ++i) {
    const auto& n = g.node(i);
    out << "\n[Term]\nid: " << n.id << "\nname: " << n.label << "\n";
    if (n.definition) out << "def: \"" << detail::escape_obo(*n.definition) << "\" []\n";
    for (const auto& s : n.synonyms)
      out << "synonym: \"" << detail::escape_obo(s) << "\" EXACT []\n";
    for (NodeIndex p : g.parents(i))
      out << "is_a: " << g.node(p).id << " ! " << g.node(p).label << "\n";
  }
}

// ---------------------------------------------------------------------------
// Statistics and subsets

inline GraphStats graph_stats(const OntologyGraph& g) {
  GraphStats s;
  s.node_count = g.size();
  s.edge_count = g.edge_count();
  std::size_t with_children = 0;
  for (NodeIndex i = 0; i < g.size(); ++i) {
    s.max_depth = std::max(s.max_depth, g.depth(i));
    if (!g.children(i).empty()) ++with_children;
    if (g.parents(i).empty()) ++s.root_count;
    if (g.depth(i) < 0) ++s.unreachable_count;
  }
  s.avg_branching =
      with_children ? static_cast<double>(s.edge_count) / static_cast<double>(with_children) : 0.0;
  s.mean_out_degree =
      s.node_count ? static_cast<double>(s.edge_count) / static_cast<double>(s.node_count) : 0.0;
  return s;
}

/// Induced subgraph on `keep` (node indices of g); all is-a edges between
/// kept nodes survive.
inline OntologyGraph induced_subgraph(const OntologyGraph& g, const std::vector<NodeIndex>& keep) {
  std::vector<char> in(g.size(), 0);
  for (NodeIndex i : keep) in.at(i) = 1;
  GraphBuilder b;
  for (NodeIndex i = 0; i < g.size(); ++i) {
    if (!in[i]) continue;
    b.add_node(g.node(i));
    for (NodeIndex p : g.parents(i))
      if (in[p]) b.add_edge(g.node(i).id, g.node(p).id);
  }
  return std::move(b).build();
}

/// Seeded breadth-first expansion from the roots. Each depth level is
/// visited in a seeded shuffled order, children are queued in ascending id
/// order, and expansion stops once `target_nodes` nodes are retained. The
/// result is root-connected and keeps shallow levels whole.
inline OntologyGraph sample_subset(const OntologyGraph& g, std::size_t target_nodes,
                                   std::uint64_t seed) {
  if (target_nodes > g.size())
    throw Error("subset target " + std::to_string(target_nodes) + " exceeds graph size " +
                std::to_string(g.size()));
  if (target_nodes == g.size()) return g;
  Rng rng(seed);
  std::vector<char> taken(g.size(), 0);
  std::vector<NodeIndex> keep;
  keep.reserve(target_nodes);
  std::vector<NodeIndex> frontier = g.roots();
  while (!frontier.empty() && keep.size() < target_nodes) {
    std::shuffle(frontier.begin(), frontier.end(), rng);
    std::vector<NodeIndex> next;
    for (NodeIndex x : frontier) {
      if (keep.size() >= target_nodes) break;
      if (taken[x]) continue;
      taken[x] = 1;
      keep.push_back(x);
      for (NodeIndex c : g.children(x))
        if (!taken[c]) next.push_back(c);
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    frontier = std::move(next);
  }
  std::sort(keep.begin(), keep.end());
  return induced_subgraph(g, keep);
}

// ---------------------------------------------------------------------------
// Synthetic hierarchies

namespace detail {

/// Deterministic pronounceable pseudo-words; never collide with the
/// hierarchy keywords used by the rule gate.
class Lexicon {
 public:
  explicit Lexicon(std::uint64_t seed) : rng_(seed) {}

  std::string fresh() {
    static constexpr std::string_view kOnset[] = {"b", "c", "d", "f", "g", "k", "l", "m", "n",
                                                 "p", "r", "s", "t", "v", "z", "br", "cr", "dr",
                                                 "gl", "pl", "tr", "st", "sk", "ph", "th"};
    static constexpr std::string_view kVowel[] = {"a", "e", "i", "o", "u", "ae", "io", "ou", "y"};
    static constexpr std::string_view kCoda[] = {"", "", "n", "r", "s", "l", "x", "m"};
    for (;;) {
      std::uniform_int_distribution<int> syl(2, 3);
      std::string w;
      const int count = syl(rng_);
      for (int i = 0; i < count; ++i) {
        w += kOnset[rng_() % std::size(kOnset)];
        w += kVowel[rng_() % std::size(kVowel)];
        w += kCoda[rng_() % std::size(kCoda)];
      }
      bool reserved = false;
      for (auto kw : kHierarchyKeywords) reserved = reserved || w.find(kw) != std::string::npos;
      if (!reserved && used_.insert(w).second) return w;
    }
  }

  /// Swaps two adjacent characters, a typo-like variant of `w`.
  std::string typo(const std::string& w) {
    if (w.size() < 3) return w + "e";
    std::string t = w;
    const std::size_t i = 1 + rng_() % (t.size() - 2);
    std::swap(t[i], t[i + 1]);
    return t == w ? w + "a" : t;
  }

  Rng& rng() { return rng_; }

 private:
  Rng rng_;
  std::set<std::string> used_;
};

inline std::string padded_id(std::string_view prefix, std::size_t n) {
  std::string digits = std::to_string(n);
  return std::string(prefix) + ":" + std::string(digits.size() < 7 ? 7 - digits.size() : 0, '0') +
         digits;
}

/// Label/synonyms/definition built from the node's own word and its
/// ancestors' words, so text similarity loosely follows the hierarchy.
inline void dress_node(OntologyNode& n, const std::string& word, const std::string& parent_word,
                       const std::string& grand_word, Lexicon& lex,
                       const std::vector<std::string>& features) {
  const bool root = parent_word.empty();
  n.label = root ? word + " finding" : word + " " + parent_word;
  const std::string& feature = features[lex.rng()() % features.size()];
  n.definition = root ? "A top-level " + word + " finding."
                      : "A " + parent_word + " finding characterized by " + word + " " + feature +
                            ".";
  if (!root) {
    n.synonyms.push_back(lex.typo(word) + " " + parent_word);
    if (!grand_word.empty()) n.synonyms.push_back(word + " of the " + grand_word);
    if (lex.rng()() % 2 == 0) n.synonyms.push_back(parent_word + " with " + word + " " + feature);
  } else {
    n.synonyms.push_back(word + " abnormality");
  }
}

}  // namespace detail

/// Perfect b-ary tree of the given depth with generated text fields; ids
/// are zero-padded in breadth-first order.
inline OntologyGraph synth_bary(int depth, int branching, std::uint64_t seed) {
  if (depth < 1) throw Error("synth_bary: depth must be >= 1");
  if (branching < 2) throw Error("synth_bary: branching must be >= 2");
  double total = 0.0, level = 1.0;
  for (int i = 0; i <= depth; ++i) {
    total += level;
    level *= branching;
  }
  if (total > 1e7) throw Error("synth_bary: tree would exceed 10^7 nodes");
  const std::size_t n = static_cast<std::size_t>(total);

  detail::Lexicon lex(seed);
  std::vector<std::string> features;
  for (int i = 0; i < 16; ++i) features.push_back(lex.fresh());
  std::vector<std::string> words(n);
  GraphBuilder b;
  for (std::size_t i = 0; i < n; ++i) {
    words[i] = lex.fresh();
    OntologyNode node;
    node.id = detail::padded_id("T", i);
    const bool root = (i == 0);
    const std::size_t parent = root ? 0 : (i - 1) / static_cast<std::size_t>(branching);
    const std::size_t grand =
        (root || parent == 0) ? 0 : (parent - 1) / static_cast<std::size_t>(branching);
    detail::dress_node(node, words[i], root ? "" : words[parent],
                       (root || parent == 0) ? "" : words[grand], lex, features);
    b.add_node(std::move(node));
    if (!root) b.add_edge(detail::padded_id("T", i), detail::padded_id("T", parent));
  }
  return std::move(b).build();
}

struct TaxonomyParams {
  std::size_t node_count = 8000;
  int max_depth = 12;
  /// Probability that a new node also receives a second parent.
  double extra_parent_rate = 0.1;
  /// Attachment weight of a node grows as (1 + children)^-preference, which
  /// spreads children and deepens the hierarchy.
  double preference = 0.5;
  std::uint64_t seed = 0;
};

/// Ontology-like DAG with uneven branching and multiple inheritance, used
/// as a stand-in for real biomedical ontology releases.
inline OntologyGraph synth_taxonomy(const TaxonomyParams& params) {
  if (params.node_count < 2) throw Error("synth_taxonomy: need at least 2 nodes");
  if (params.node_count > 10'000'000) throw Error("synth_taxonomy: size limit exceeded");
  detail::Lexicon lex(params.seed);
  Rng& rng = lex.rng();
  std::vector<std::string> features;
  for (int i = 0; i < 32; ++i) features.push_back(lex.fresh());

  const std::size_t n = params.node_count;
  std::vector<std::string> words;
  std::vector<int> depth;
  std::vector<std::size_t> first_parent;
  std::vector<std::size_t> child_count;
  std::vector<std::vector<std::size_t>> by_depth(static_cast<std::size_t>(params.max_depth) + 1);
  words.reserve(n);
  GraphBuilder b;
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (std::size_t i = 0; i < n; ++i) {
    OntologyNode node;
    node.id = detail::padded_id("SYN", i);
    words.push_back(lex.fresh());
    if (i == 0) {
      depth.push_back(0);
      first_parent.push_back(0);
      child_count.push_back(0);
      by_depth[0].push_back(0);
      detail::dress_node(node, words[0], "", "", lex, features);
      b.add_node(std::move(node));
      continue;
    }
    // Weighted choice among nodes that may still take children.
    std::size_t parent = 0;
    {
      double total = 0.0;
      std::vector<double> cumulative;
      cumulative.reserve(i);
      for (std::size_t j = 0; j < i; ++j) {
        double w = depth[j] < params.max_depth
                       ? std::pow(1.0 + static_cast<double>(child_count[j]), -params.preference)
                       : 0.0;
        total += w;
        cumulative.push_back(total);
      }
      const double pick = unit(rng) * total;
      parent = static_cast<std::size_t>(
          std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin());
      parent = std::min(parent, i - 1);
    }
    depth.push_back(depth[parent] + 1);
    first_parent.push_back(parent);
    child_count.push_back(0);
    ++child_count[parent];
    by_depth[static_cast<std::size_t>(depth.back())].push_back(i);
    const std::size_t grand = first_parent[parent];
    detail::dress_node(node, words[i], words[parent], parent == 0 ? "" : words[grand], lex,
                       features);
    b.add_node(std::move(node));
    b.add_edge(detail::padded_id("SYN", i), detail::padded_id("SYN", parent));

    if (unit(rng) < params.extra_parent_rate) {
      const auto& peers = by_depth[static_cast<std::size_t>(depth[parent])];
      if (peers.size() > 1) {
        std::size_t other = peers[rng() % peers.size()];
        if (other != parent) {
          b.add_edge(detail::padded_id("SYN", i), detail::padded_id("SYN", other));
          ++child_count[other];
        }
      }
    }
  }
  return std::move(b).build();
}

// ---------------------------------------------------------------------------
// Line-delimited JSON graph format

inline constexpr std::string_view kGraphFormat = "hyem-graph-v1";

inline nlohmann::json stats_to_json(const GraphStats& s) {
  return {{"node_count", s.node_count},   {"edge_count", s.edge_count},
          {"max_depth", s.max_depth},     {"avg_branching", s.avg_branching},
          {"mean_out_degree", s.mean_out_degree}, {"root_count", s.root_count},
          {"unreachable_count", s.unreachable_count}};
}

inline void write_graph_jsonl(const OntologyGraph& g, std::ostream& out) {
  nlohmann::json header = {{"format", kGraphFormat}, {"version", 1},
                           {"stats", stats_to_json(graph_stats(g))}};
  nlohmann::json dangling = nlohmann::json::array();
  for (const auto& [c, p] : g.dangling()) dangling.push_back({c, p});
  header["dangling"] = dangling;
  out << header.dump() << "\n";
  for (NodeIndex i = 0; i < g.size(); ++i) {
    const auto& n = g.node(i);
    nlohmann::json parents = nlohmann::json::array();
    for (NodeIndex p : g.parents(i)) parents.push_back(g.node(p).id);
    nlohmann::json rec = {{"id", n.id},
                          {"label", n.label},
                          {"synonyms", n.synonyms},
                          {"definition", n.definition ? nlohmann::json(*n.definition)
                                                      : nlohmann::json(nullptr)},
                          {"parents", parents},
                          {"depth", g.depth(i)}};
    out << rec.dump() << "\n";
  }
}

inline OntologyGraph read_graph_jsonl(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw ParseError("empty graph file", 1);
  ++lineno;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad header: ") + e.what(), lineno);
  }
  if (header.value("format", "") != kGraphFormat)
    throw ParseError("unsupported graph format", lineno);
  GraphBuilder b;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::trim(line).empty()) continue;
    try {
      auto rec = nlohmann::json::parse(line);
      OntologyNode n;
      n.id = rec.at("id").get<std::string>();
      n.label = rec.at("label").get<std::string>();
      n.synonyms = rec.at("synonyms").get<std::vector<std::string>>();
      if (!rec.at("definition").is_null()) n.definition = rec["definition"].get<std::string>();
      for (const auto& p : rec.at("parents")) b.add_edge(n.id, p.get<std::string>());
      b.add_node(std::move(n));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  if (header.contains("dangling"))
    for (const auto& d : header["dangling"])
      b.add_edge(d.at(0).get<std::string>(), d.at(1).get<std::string>());
  return std::move(b).build();
}

}  // namespace hyem::ontology
