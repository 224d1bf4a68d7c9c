#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>
#include <sstream>

#include "hyem/benchmark.hpp"

using namespace hyem;
using namespace hyem::benchmark;

namespace {

const ontology::OntologyGraph& taxonomy() {
  static const auto g = ontology::synth_taxonomy({.node_count = 600, .max_depth = 8, .seed = 3});
  return g;
}

std::string dump(const Benchmark& bm, const ontology::OntologyGraph& g) {
  std::ostringstream s;
  write_benchmark(bm, g, s);
  return s.str();
}

}  // namespace

TEST(Splits, SizesFollowRatiosAndSeed) {
  auto s = split_entities(1001, {0.8, 0.1, 0.1}, 7);
  std::map<Split, std::size_t> n;
  for (auto x : s) ++n[x];
  EXPECT_EQ(n[Split::train], 801u);
  EXPECT_EQ(n[Split::val], 100u);
  EXPECT_EQ(n[Split::test], 100u);
  EXPECT_EQ(s, split_entities(1001, {0.8, 0.1, 0.1}, 7));
  EXPECT_NE(s, split_entities(1001, {0.8, 0.1, 0.1}, 8));
  auto all_test = split_entities(10, {0.0, 0.0, 1.0}, 1);
  EXPECT_TRUE(std::all_of(all_test.begin(), all_test.end(), [](Split x) { return x == Split::test; }));
  EXPECT_THROW(split_entities(10, {0.5, 0.5, 0.5}, 1), Error);
  EXPECT_THROW(split_entities(10, {1.2, -0.1, -0.1}, 1), Error);
}

TEST(Buckets, QuantileBoundsAndLabels) {
  const auto& g = taxonomy();
  auto b = depth_buckets(g, 4);
  std::vector<int> d;
  for (int x : g.depths())
    if (x >= 0) d.push_back(x);
  std::sort(d.begin(), d.end());
  std::set<int> expect;
  for (std::size_t i = 0; i < 4; ++i) expect.insert(d[i * d.size() / 4]);
  EXPECT_EQ(std::vector<int>(expect.begin(), expect.end()), b.lower_bounds);

  auto e = explicit_buckets({5, 0, 2, 2});
  EXPECT_EQ(e.lower_bounds, (std::vector<int>{0, 2, 5}));
  EXPECT_EQ(e.bucket_of(0), 0);
  EXPECT_EQ(e.bucket_of(1), 0);
  EXPECT_EQ(e.bucket_of(2), 1);
  EXPECT_EQ(e.bucket_of(4), 1);
  EXPECT_EQ(e.bucket_of(9), 2);
  EXPECT_EQ(e.bucket_of(-1), 0);
  EXPECT_EQ(e.label(0), "0-1");
  EXPECT_EQ(e.label(2), "5+");
  EXPECT_EQ(explicit_buckets({3, 4}).label(0), "3");
  EXPECT_THROW(explicit_buckets({}), Error);
  EXPECT_EQ(depth_buckets(ontology::synth_bary(1, 2, 0), 4).count(), 2u);
}

TEST(Noise, SameSeedGivesSameDirectionForEverySigma) {
  encoding::TextEmbedding e{{1.0, -2.0, 0.5, 3.0}, false};
  EXPECT_EQ(perturb_embedding(e, 0.0, 5).coords, e.coords);
  auto a = perturb_embedding(e, 0.1, 5), b = perturb_embedding(e, 0.3, 5);
  for (std::size_t i = 0; i < 4; ++i)
    EXPECT_NEAR((a.coords[i] - e.coords[i]) / 0.1, (b.coords[i] - e.coords[i]) / 0.3, 1e-9);
  encoding::TextEmbedding unit{{0.6, 0.8}, true};
  auto u = perturb_embedding(unit, 0.5, 2);
  EXPECT_NEAR(std::hypot(u.coords[0], u.coords[1]), 1.0, 1e-12);
  EXPECT_THROW(perturb_embedding(e, -0.1, 1), Error);
}

TEST(Generation, TruthSetsMatchGraphRelations) {
  const auto& g = taxonomy();
  auto bm = gen_queries(g, {.seed = 2});
  std::map<Family, std::size_t> count;
  for (const auto& q : bm.queries) {
    ++count[q.family];
    EXPECT_TRUE(std::is_sorted(q.truth.begin(), q.truth.end()));
    EXPECT_FALSE(q.truth.empty());
    EXPECT_EQ(q.split, bm.splits[q.source]);
    EXPECT_EQ(q.depth_bucket, bm.buckets.bucket_of(g.depth(q.source)));
    EXPECT_EQ(q.gate_label, q.family == Family::qe   ? GateLabel::e
                            : q.family == Family::qm ? GateLabel::none
                                                     : GateLabel::h);
    const auto& label = g.node(q.source).label;
    auto sorted = [](std::vector<NodeIndex> v) {
      std::sort(v.begin(), v.end());
      return v;
    };
    switch (q.family) {
      case Family::qe:
        EXPECT_EQ(q.truth, std::vector<NodeIndex>{q.source});
        break;
      case Family::qh_parent:
        EXPECT_EQ(q.text, "What is the parent of " + label + "?");
        EXPECT_EQ(q.truth, sorted(g.parents(q.source)));
        break;
      case Family::qh_children:
        EXPECT_EQ(q.text, "What are subtypes of " + label + "?");
        EXPECT_EQ(q.truth, sorted(g.children(q.source)));
        break;
      case Family::qh_ancestor:
        EXPECT_EQ(q.text, "What are ancestors of " + label + "?");
        EXPECT_EQ(q.truth, sorted(g.ancestors(q.source)));
        break;
      case Family::qh_descendant: {
        EXPECT_EQ(q.truth, sorted(g.descendants(q.source)));
        EXPECT_GT(q.truth.size(), g.children(q.source).size());
        break;
      }
      case Family::qm:
        for (auto t : q.truth) {
          EXPECT_NE(t, q.source);
          EXPECT_EQ(bm.buckets.bucket_of(g.depth(t)), q.depth_bucket);
          bool shares = false;
          for (auto p : g.parents(t))
            for (auto p2 : g.parents(q.source)) shares = shares || p == p2;
          EXPECT_TRUE(shares);
        }
        EXPECT_TRUE(q.text == "Concepts similar to " + label + " at the same specificity." ||
                    q.text == "Siblings of " + label + " in the ontology.");
        break;
    }
  }
  for (auto f : kFamilies) EXPECT_GT(count[f], 0u) << to_string(f);
  EXPECT_EQ(bm.stats.skipped_no_parent, g.roots().size());
  for (std::size_t i = 1; i < bm.queries.size(); ++i) EXPECT_LT(bm.queries[i - 1].query_id, bm.queries[i].query_id);
}

TEST(Generation, QeQueriesUseSynonymsOrTemplates) {
  const auto& g = taxonomy();
  auto bm = gen_queries(g, {.seed = 4});
  std::map<std::string, std::set<Split>> synonym_splits;
  for (const auto& q : bm.queries) {
    if (q.family != Family::qe) continue;
    const auto& n = g.node(q.source);
    if (q.text == "What is " + n.label + "?" || q.text == "Define " + n.label + ".") continue;
    auto it = std::find(n.synonyms.begin(), n.synonyms.end(), q.text);
    ASSERT_NE(it, n.synonyms.end()) << q.text;
    EXPECT_NE(it, n.synonyms.begin()) << "first synonym is indexed as an alias";
    synonym_splits[q.text].insert(q.split);
  }
  EXPECT_FALSE(synonym_splits.empty());
  for (const auto& [text, splits] : synonym_splits) EXPECT_EQ(splits.size(), 1u) << text;
}

TEST(Generation, DeterministicAndCapsRespected) {
  const auto& g = taxonomy();
  EXPECT_EQ(dump(gen_queries(g, {.seed = 1}), g), dump(gen_queries(g, {.seed = 1}), g));
  EXPECT_NE(dump(gen_queries(g, {.seed = 1}), g), dump(gen_queries(g, {.seed = 2}), g));
  auto none = gen_queries(g, {.caps = {.qe_synonym = 0, .qe_template = 0, .qh_each = 0, .qm = 0}});
  EXPECT_TRUE(none.queries.empty());
  auto twice = gen_queries(g, {.caps = {.qe_synonym = 0, .qe_template = 2, .qh_each = 0, .qm = 0}});
  EXPECT_EQ(twice.queries.size(), 2 * g.size());
}

TEST(FileFormat, RoundTripIsByteIdentical) {
  const auto& g = taxonomy();
  auto bm = gen_queries(g, {.seed = 6, .split_ratios = {0.6, 0.2, 0.2}, .bucket_bounds = {0, 3, 6}});
  const auto text = dump(bm, g);
  std::istringstream in(text);
  auto back = read_benchmark(in, g);
  EXPECT_EQ(back.queries.size(), bm.queries.size());
  EXPECT_EQ(back.splits, bm.splits);
  EXPECT_EQ(back.buckets.lower_bounds, bm.buckets.lower_bounds);
  back.stats = bm.stats;
  EXPECT_EQ(dump(back, g), text);
}

TEST(FileFormat, RejectsMismatchedGraphAndBadRecords) {
  const auto& g = taxonomy();
  const auto text = dump(gen_queries(g, {.seed = 6}), g);
  auto other = ontology::synth_taxonomy({.node_count = 600, .max_depth = 8, .seed = 4});
  std::istringstream a(text);
  EXPECT_THROW(read_benchmark(a, other), Error);

  std::istringstream b("{\"format\":\"other\"}\n");
  EXPECT_THROW(read_benchmark(b, g), ParseError);

  std::string broken = text;
  const auto third = broken.find('\n', broken.find('\n', broken.find('\n') + 1) + 1);
  broken.insert(third + 1, "{not json}\n");
  std::istringstream c(broken);
  try {
    read_benchmark(c, g);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 4u);
  }

  std::string wrong_split = text;
  const auto pos = wrong_split.find("\"split\":\"train\"");
  ASSERT_NE(pos, std::string::npos);
  wrong_split.replace(pos, 15, "\"split\":\"test\"");
  std::istringstream d(wrong_split);
  EXPECT_THROW(read_benchmark(d, g), ParseError);
}
