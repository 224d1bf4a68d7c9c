#include <gtest/gtest.h>

#include <algorithm>
#include <queue>
#include <set>
#include <sstream>

#include "hyem/ontology.hpp"

using namespace hyem;
using namespace hyem::ontology;

namespace {

const char* kSample = R"(format-version: 1.2
ontology: test

[Term]
id: X:1
name: root thing
def: "The \"top\" node." [REF:1]

[Term]
id: X:2 ! trailing comment
name: left child
synonym: "left kid" EXACT []
synonym: "left kid" RELATED []
synonym: "sinister child" EXACT []
is_a: X:1 ! root thing

[Term]
id: X:3
name: right child
is_a: X:1

[Term]
id: X:4
name: grandchild
is_a: X:2 {source="x"} ! left child
is_a: X:3
is_a: X:99 ! missing parent

[Term]
id: X:5
name: old term
is_obsolete: true
is_a: X:1

[Typedef]
id: part_of
name: part of
)";

std::vector<NodeIndex> bfs_closure(const OntologyGraph& g, NodeIndex v, bool up) {
  std::set<NodeIndex> seen;
  std::queue<NodeIndex> q;
  q.push(v);
  while (!q.empty()) {
    auto x = q.front();
    q.pop();
    for (auto y : up ? g.parents(x) : g.children(x))
      if (seen.insert(y).second) q.push(y);
  }
  return {seen.begin(), seen.end()};
}

}  // namespace

TEST(Obo, ParsesTermsEdgesAndMetadata) {
  auto g = parse_obo(std::string_view(kSample));
  ASSERT_EQ(g.size(), 4u);  // obsolete dropped, typedef skipped
  const auto root = g.at("X:1");
  EXPECT_EQ(g.node(root).label, "root thing");
  ASSERT_TRUE(g.node(root).definition);
  EXPECT_EQ(*g.node(root).definition, "The \"top\" node.");
  const auto left = g.at("X:2");
  EXPECT_EQ(g.node(left).synonyms, (std::vector<std::string>{"left kid", "sinister child"}));
  const auto gc = g.at("X:4");
  EXPECT_EQ(g.parents(gc).size(), 2u);
  EXPECT_EQ(g.edge_count(), 4u);
  ASSERT_EQ(g.dangling().size(), 1u);
  EXPECT_EQ(g.dangling()[0].second, "X:99");
  EXPECT_FALSE(g.find("X:5"));
  EXPECT_EQ(g.depth(root), 0);
  EXPECT_EQ(g.depth(gc), 2);
  EXPECT_EQ(g.roots(), std::vector<NodeIndex>{root});
}

TEST(Obo, MalformedHeaderReportsLine) {
  try {
    parse_obo(std::string_view("[Term]\nid: A:1\n\n[Term\nid: A:2\n"));
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
    EXPECT_NE(std::string(e.what()).find("line 4"), std::string::npos);
  }
}

TEST(Obo, DuplicateIdIsAnError) {
  EXPECT_THROW(parse_obo(std::string_view("[Term]\nid: A:1\n[Term]\nid: A:1\n")), ParseError);
}

TEST(Obo, CycleIsRejectedWithPath) {
  try {
    parse_obo(std::string_view("[Term]\nid: A:1\nis_a: A:2\n[Term]\nid: A:2\nis_a: A:1\n"));
    FAIL() << "expected cycle error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("not a DAG"), std::string::npos);
    EXPECT_NE(msg.find("A:1"), std::string::npos);
    EXPECT_NE(msg.find("A:2"), std::string::npos);
  }
}

TEST(Obo, WriteParseRoundTrip) {
  auto g = synth_taxonomy({.node_count = 300, .max_depth = 6, .seed = 3});
  std::ostringstream out;
  write_obo(g, out);
  auto h = parse_obo(std::string_view(out.str()));
  ASSERT_EQ(h.size(), g.size());
  for (NodeIndex i = 0; i < g.size(); ++i) {
    EXPECT_EQ(h.node(i).id, g.node(i).id);
    EXPECT_EQ(h.node(i).label, g.node(i).label);
    EXPECT_EQ(h.node(i).synonyms, g.node(i).synonyms);
    EXPECT_EQ(h.node(i).definition, g.node(i).definition);
    EXPECT_EQ(h.parents(i), g.parents(i));
    EXPECT_EQ(h.depth(i), g.depth(i));
  }
}

TEST(Graph, DepthIsShortestPathFromARoot) {
  GraphBuilder b;
  for (auto id : {"r", "a", "b", "c", "d"}) b.add_node({.id = id});
  b.add_edge("a", "r");
  b.add_edge("b", "a");
  b.add_edge("c", "b");
  b.add_edge("d", "c");
  b.add_edge("d", "r");  // shortcut
  b.add_edge("d", "r");  // duplicate edge collapses
  auto g = std::move(b).build();
  EXPECT_EQ(g.depth(g.at("d")), 1);
  EXPECT_EQ(g.depth(g.at("c")), 3);
  EXPECT_EQ(g.edge_count(), 5u);
  const auto s = graph_stats(g);
  EXPECT_EQ(s.node_count, 5u);
  EXPECT_EQ(s.max_depth, 3);
  EXPECT_EQ(s.root_count, 1u);
  EXPECT_DOUBLE_EQ(s.avg_branching, 5.0 / 4.0);
  EXPECT_DOUBLE_EQ(s.mean_out_degree, 1.0);
}

TEST(Graph, ClosuresMatchBreadthFirstOracle) {
  auto g = synth_taxonomy({.node_count = 600, .max_depth = 8, .extra_parent_rate = 0.3, .seed = 5});
  for (NodeIndex v = 0; v < g.size(); v += 7) {
    EXPECT_EQ(g.ancestors(v), bfs_closure(g, v, true));
    EXPECT_EQ(g.descendants(v), bfs_closure(g, v, false));
  }
}

TEST(Graph, JsonlRoundTrip) {
  auto g = parse_obo(std::string_view(kSample));
  std::stringstream s;
  write_graph_jsonl(g, s);
  auto h = read_graph_jsonl(s);
  ASSERT_EQ(h.size(), g.size());
  EXPECT_EQ(h.dangling(), g.dangling());
  for (NodeIndex i = 0; i < g.size(); ++i) {
    EXPECT_EQ(h.node(i).id, g.node(i).id);
    EXPECT_EQ(h.node(i).synonyms, g.node(i).synonyms);
    EXPECT_EQ(h.node(i).definition, g.node(i).definition);
    EXPECT_EQ(h.parents(i), g.parents(i));
  }
  std::stringstream bad("{\"format\":\"something-else\"}\n");
  EXPECT_THROW(read_graph_jsonl(bad), Error);
}

TEST(Synthetic, BaryTreeShape) {
  auto g = synth_bary(4, 3, 1);
  EXPECT_EQ(g.size(), 1u + 3 + 9 + 27 + 81);
  const auto s = graph_stats(g);
  EXPECT_EQ(s.max_depth, 4);
  EXPECT_EQ(s.edge_count, g.size() - 1);
  EXPECT_DOUBLE_EQ(s.avg_branching, 3.0);
  for (NodeIndex i = 0; i < g.size(); ++i) EXPECT_LE(g.parents(i).size(), 1u);
  EXPECT_EQ(g.node(0).id, "T:0000000");
  EXPECT_THROW(synth_bary(0, 3, 1), Error);
  EXPECT_THROW(synth_bary(3, 1, 1), Error);
  EXPECT_THROW(synth_bary(30, 10, 1), Error);
}

TEST(Synthetic, TaxonomyIsDeterministicDagWithKeywordFreeText) {
  TaxonomyParams p{.node_count = 1500, .max_depth = 9, .seed = 11};
  auto a = synth_taxonomy(p);
  auto b = synth_taxonomy(p);
  ASSERT_EQ(a.size(), 1500u);
  EXPECT_LE(graph_stats(a).max_depth, 9);
  EXPECT_EQ(graph_stats(a).unreachable_count, 0u);
  for (NodeIndex i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a.node(i).label, b.node(i).label);
    EXPECT_EQ(a.parents(i), b.parents(i));
    std::string text = a.node(i).label + " " + a.node(i).definition.value_or("");
    for (auto& s : a.node(i).synonyms) text += " " + s;
    for (auto kw : kHierarchyKeywords) EXPECT_EQ(text.find(kw), std::string::npos) << text;
  }
}

TEST(Subset, RootConnectedDeterministicAndSized) {
  auto g = synth_taxonomy({.node_count = 2000, .max_depth = 10, .seed = 2});
  auto s1 = sample_subset(g, 800, 9);
  auto s2 = sample_subset(g, 800, 9);
  ASSERT_EQ(s1.size(), 800u);
  EXPECT_EQ(graph_stats(s1).unreachable_count, 0u);
  for (NodeIndex i = 0; i < s1.size(); ++i) {
    EXPECT_EQ(s1.node(i).id, s2.node(i).id);
    // Every retained edge exists in the source graph.
    for (auto p : s1.parents(i)) {
      auto gi = g.at(s1.node(i).id), gp = g.at(s1.node(p).id);
      const auto& ps = g.parents(gi);
      EXPECT_TRUE(std::binary_search(ps.begin(), ps.end(), gp));
    }
  }
  EXPECT_EQ(sample_subset(g, g.size(), 1).size(), g.size());
  EXPECT_THROW(sample_subset(g, g.size() + 1, 1), Error);
}

TEST(Subset, DefaultFixtureShape) {
  auto g = synth_taxonomy({});
  auto s = sample_subset(g, 5000, 0);
  const auto st = graph_stats(s);
  EXPECT_EQ(st.node_count, 5000u);
  EXPECT_GT(st.mean_out_degree, 1.05);
  EXPECT_LT(st.mean_out_degree, 1.15);
  EXPECT_GE(st.max_depth, 8);
}
