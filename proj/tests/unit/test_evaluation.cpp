#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "hyem/evaluation.hpp"

using namespace hyem;
using namespace hyem::evaluation;

namespace {

// Set-based reference implementations.
double ref_ndcg(const std::vector<Id>& ranked, const std::set<Id>& truth, std::size_t k) {
  double dcg = 0, idcg = 0;
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i)
    if (truth.count(ranked[i])) dcg += std::log(2.0) / std::log(i + 2.0);
  for (std::size_t i = 0; i < std::min(k, truth.size()); ++i) idcg += std::log(2.0) / std::log(i + 2.0);
  return dcg / idcg;
}

double ref_rr(const std::vector<Id>& ranked, const std::set<Id>& truth) {
  for (std::size_t i = 0; i < ranked.size(); ++i)
    if (truth.count(ranked[i])) return 1.0 / (i + 1.0);
  return 0.0;
}

double ref_auc(const std::vector<double>& s, const std::vector<bool>& y) {
  double wins = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] && !y[j]) {
        pairs += 1;
        wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

}  // namespace

TEST(RankMetrics, HandComputedCases) {
  std::vector<Id> truth{7};
  auto m = hits_mrr_ndcg(std::vector<Id>{3, 7, 9}, truth, 10);
  ASSERT_TRUE(m);
  EXPECT_EQ(m->hits, 1.0);
  EXPECT_EQ(m->rr, 0.5);
  EXPECT_NEAR(m->ndcg, 0.6309297535714574, 1e-12);
  auto top1 = hits_mrr_ndcg(std::vector<Id>{3, 7, 9}, truth, 1);
  EXPECT_EQ(top1->hits, 0.0);
  EXPECT_EQ(top1->ndcg, 0.0);
  EXPECT_EQ(top1->rr, 0.5);

  std::vector<Id> multi{1, 2, 3};
  auto mm = hits_mrr_ndcg(std::vector<Id>{1, 9, 2}, multi, 3);
  EXPECT_NEAR(mm->ndcg, 1.5 / (1.0 + 1.0 / std::log2(3.0) + 0.5), 1e-12);
  EXPECT_FALSE(hits_mrr_ndcg(std::vector<Id>{1}, std::vector<Id>{}, 10));
  EXPECT_THROW(hits_mrr_ndcg(std::vector<Id>{1}, truth, 0), Error);
}

TEST(RankMetrics, AgreeWithSetOracleOnRandomCases) {
  std::mt19937_64 rng(1);
  for (int c = 0; c < 200; ++c) {
    std::vector<Id> pool(30);
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<Id> ranked(pool.begin(), pool.begin() + 1 + rng() % 20);
    std::set<Id> t;
    const auto nt = 1 + rng() % 8;
    while (t.size() < nt) t.insert(static_cast<Id>(rng() % 30));
    std::vector<Id> truth(t.begin(), t.end());
    const std::size_t k = 1 + rng() % 12;
    auto m = hits_mrr_ndcg(ranked, truth, k);
    bool any = false;
    for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) any = any || t.count(ranked[i]);
    EXPECT_EQ(m->hits, any ? 1.0 : 0.0);
    EXPECT_NEAR(m->rr, ref_rr(ranked, t), 1e-12);
    EXPECT_NEAR(m->ndcg, ref_ndcg(ranked, t, k), 1e-12);
    EXPECT_GE(m->ndcg, 0.0);
    EXPECT_LE(m->ndcg, 1.0 + 1e-12);
  }
}

TEST(SetMetrics, AncestorF1) {
  std::vector<Id> anc{1, 2, 3, 4};
  auto s = ancestor_f1(std::vector<Id>{1, 9, 3}, anc, 10);
  ASSERT_TRUE(s);
  EXPECT_EQ(s->overlap, 2u);
  EXPECT_DOUBLE_EQ(s->precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s->recall, 0.5);
  EXPECT_NEAR(s->f1, 2 * (2.0 / 3.0) * 0.5 / (2.0 / 3.0 + 0.5), 1e-15);
  EXPECT_EQ(ancestor_f1(std::vector<Id>{1, 2, 3}, anc, 1)->retrieved, 1u);
  EXPECT_FALSE(ancestor_f1(std::vector<Id>{1}, std::vector<Id>{}, 10));
  EXPECT_EQ(ancestor_f1(std::vector<Id>{7, 8}, anc, 10)->f1, 0.0);
}

TEST(SetMetrics, IndexabilityRecall) {
  std::vector<Id> top{4, 1, 8, 2};
  EXPECT_DOUBLE_EQ(indexability_recall(top, std::vector<Id>{8, 4, 5}, 4), 0.5);
  EXPECT_DOUBLE_EQ(indexability_recall(top, std::vector<Id>{8, 4, 5}, 2), 0.5);
  EXPECT_DOUBLE_EQ(indexability_recall(top, std::vector<Id>{2, 8, 1, 4}, 4), 1.0);
  EXPECT_THROW(indexability_recall(top, std::vector<Id>{}, 5), Error);
}

TEST(GateMetrics, AucHandCaseAndTies) {
  std::vector<double> s{0.9, 0.8, 0.3, 0.7, 0.2, 0.1};
  std::vector<bool> y{true, true, true, false, false, false};
  EXPECT_NEAR(*auc(s, y), 8.0 / 9.0, 1e-15);
  std::vector<double> tied{0.5, 0.5};
  EXPECT_DOUBLE_EQ(*auc(tied, {true, false}), 0.5);
  EXPECT_FALSE(auc(s, std::vector<bool>(6, true)));

  std::mt19937_64 rng(2);
  for (int c = 0; c < 200; ++c) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> sc(n);
    std::vector<bool> lab(n);
    for (std::size_t i = 0; i < n; ++i) {
      sc[i] = static_cast<double>(rng() % 6) / 5.0;
      lab[i] = rng() % 2;
    }
    lab[0] = true;
    lab[1] = false;
    EXPECT_NEAR(*auc(sc, lab), ref_auc(sc, lab), 1e-12);
  }
}

TEST(GateMetrics, AccuracyPrecisionRecall) {
  std::vector<double> a{0.9, 0.6, 0.4, 0.1, 0.5};
  std::vector<bool> y{true, false, true, false, true};
  auto m = gate_metrics(a, y);
  EXPECT_EQ(m.count, 5u);
  EXPECT_DOUBLE_EQ(m.accuracy, 3.0 / 5.0);
  EXPECT_DOUBLE_EQ(m.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(m.recall, 2.0 / 3.0);
  EXPECT_THROW(gate_metrics(a, {true}), Error);
}

TEST(Routing, DecompositionHoldsExactly) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<RoutingCase> cases(1000);
  double direct = 0.0;
  for (auto& c : cases) {
    c.loss_E = u(rng);
    c.loss_H = u(rng);
    c.latent = c.loss_H <= c.loss_E ? Geometry::H : Geometry::E;
    c.routed = rng() % 2 ? Geometry::H : Geometry::E;
    direct += (c.routed == Geometry::H ? c.loss_H : c.loss_E) / 1000.0;
  }
  auto r = routing_risk_check(cases);
  EXPECT_LT(r.residual, 1e-12);
  EXPECT_NEAR(r.routed, direct, 1e-12);
  EXPECT_GT(r.misroute_H + r.misroute_E, 0.0);
  EXPECT_LE(r.oracle, r.routed);

  for (auto& c : cases) c.routed = c.latent;
  auto perfect = routing_risk_check(cases);
  EXPECT_NEAR(perfect.routed, perfect.oracle, 1e-12);
  EXPECT_EQ(perfect.regret_H + perfect.regret_E, 0.0);

  std::vector<RoutingCase> bad{{.loss_E = 0.1, .loss_H = 0.9, .latent = Geometry::H}};
  EXPECT_THROW(routing_risk_check(bad), Error);
  EXPECT_THROW(routing_risk_check(std::vector<RoutingCase>{}), Error);
}

TEST(Report, AggregatesCellsAndWritesCsv) {
  MetricReport rep;
  std::vector<Id> truth{2}, anc{5, 6};
  rep.add("m", "qe", "0-1", std::vector<Id>{2, 3}, truth, {});
  rep.add("m", "qe", "2+", std::vector<Id>{3, 2}, truth, {});
  rep.add("m", "qh_ancestor", "2+", std::vector<Id>{5, 1}, anc, anc);
  rep.add("base", "qe", "0-1", std::vector<Id>{3, 4, 2}, truth, {});
  EXPECT_DOUBLE_EQ(rep.value("m", "qe", "mrr"), 0.75);
  EXPECT_DOUBLE_EQ(rep.value("m", "qe", "hits@1", "2+"), 0.0);
  EXPECT_DOUBLE_EQ(rep.value("m", "qh_ancestor", "macro_f1"), 2 * 0.5 * 0.5 / 1.0);
  EXPECT_DOUBLE_EQ(*rep.retention("m", "base", "qe"), 0.75 / (1.0 / 3.0));
  EXPECT_FALSE(rep.retention("m", "none", "qe"));
  EXPECT_THROW(rep.value("m", "qm", "mrr"), Error);
  EXPECT_THROW(rep.value("m", "qe", "recall"), Error);

  std::ostringstream csv;
  rep.write_csv(csv);
  const auto text = csv.str();
  EXPECT_EQ(text.substr(0, text.find('\n')), "method,family,bucket,metric,value,count");
  EXPECT_NE(text.find("m,qe,all,mrr,0.750000,2\n"), std::string::npos);
  auto j = rep.to_json();
  EXPECT_EQ(j["metrics"]["m"]["qe"]["count"], 2);
  EXPECT_DOUBLE_EQ(j["metrics"]["base"]["qe"]["mrr"].get<double>(), 0.333333);

  MetricReport again;
  again.add("m", "qe", "0-1", std::vector<Id>{2, 3}, truth, {});
  again.add("m", "qe", "2+", std::vector<Id>{3, 2}, truth, {});
  again.add("m", "qh_ancestor", "2+", std::vector<Id>{5, 1}, anc, anc);
  again.add("base", "qe", "0-1", std::vector<Id>{3, 4, 2}, truth, {});
  std::ostringstream csv2;
  again.write_csv(csv2);
  EXPECT_EQ(csv2.str(), text);
}

TEST(StressSweep, RecallRisesWithCandidateBudget) {
  const std::size_t n = 400;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("e" + std::to_string(i));
  training::EmbeddingTable emb(ids, 3);
  for (std::size_t i = 0; i < n; ++i) {
    auto t = emb.tangent(i);
    for (auto& x : t) x = z(rng);
    const double r = norm(t);
    const double target = 2.5 * std::cbrt(std::uniform_real_distribution<double>(0, 1)(rng));
    for (auto& x : t) x *= target / r;
  }
  emb.refresh_points();
  std::vector<std::uint32_t> keys(n);
  std::iota(keys.begin(), keys.end(), 0);
  auto exact = index::VectorIndex::build(keys, emb.tangent_data(), 3, {.kind = index::IndexKind::exact});
  auto graph = index::VectorIndex::build(keys, emb.tangent_data(), 3, {});
  std::vector<std::vector<double>> qs;
  for (int q = 0; q < 50; ++q) {
    auto t = emb.tangent(static_cast<std::size_t>(q) * 7);
    qs.emplace_back(t.begin(), t.end());
    for (auto& x : qs.back()) x *= 0.9;
  }
  auto res = stress_sweep(emb, qs, 2.5, {10, 20, 50, n, 5000}, 10, exact, &graph, 2);
  EXPECT_EQ(res.L_th, geometry::oversampling_threshold(2.5, 10));
  double prev = 0.0;
  for (std::size_t L : {10u, 20u, 50u}) {
    EXPECT_GE(res.recall_at(L), prev);
    prev = res.recall_at(L);
  }
  EXPECT_DOUBLE_EQ(res.recall_at(n), 1.0);
  EXPECT_DOUBLE_EQ(res.recall_at(n, "graph"), 1.0);
  EXPECT_THROW(res.recall_at(5000), Error);
  for (auto r : res.oracle_rank) {
    EXPECT_GE(r, 10u);
    EXPECT_LE(r, n);
  }
  // A query's recall reaches 1 exactly at its oracle rank.
  double at_max = 0;
  for (auto r : res.oracle_rank) at_max = std::max(at_max, static_cast<double>(r));
  auto again = stress_sweep(emb, qs, 2.5, {static_cast<std::size_t>(at_max)}, 10, exact);
  EXPECT_DOUBLE_EQ(again.rows.front().recall, 1.0);
  std::ostringstream csv;
  res.write_csv(csv);
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "source,R,d,L,k,recall,L_th");
}

TEST(StressSweep, TinyRadiusNeedsNoOversampling) {
  const std::size_t n = 200;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-4e-6, 4e-6);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back("e" + std::to_string(i));
  training::EmbeddingTable emb(ids, 4);
  for (std::size_t i = 0; i < n; ++i)
    for (auto& x : emb.tangent(i)) x = u(rng);
  emb.refresh_points();
  std::vector<std::uint32_t> keys(n);
  std::iota(keys.begin(), keys.end(), 0);
  auto exact = index::VectorIndex::build(keys, emb.tangent_data(), 4, {.kind = index::IndexKind::exact});
  std::vector<std::vector<double>> qs;
  for (int q = 0; q < 20; ++q) qs.push_back({u(rng), u(rng), u(rng), u(rng)});
  auto res = stress_sweep(emb, qs, 1e-5, {10}, 10, exact);
  EXPECT_EQ(res.L_th, 10u);
  EXPECT_DOUBLE_EQ(res.recall_at(10), 1.0);
}

TEST(Latency, DiscardsWarmup) {
  int calls = 0;
  auto s = measure_latency(12, 2, [&](std::size_t) { ++calls; });
  EXPECT_EQ(calls, 12);
  EXPECT_EQ(s.measured, 10u);
  EXPECT_LE(s.median_ms, s.p90_ms);
}

TEST(TheoryTables, RowsFollowFormulas) {
  std::ostringstream k, r;
  write_kappa_table(k, 1.0, 0.5);
  EXPECT_EQ(k.str(), "R,kappa,L_th_k10\n0.500000,1.042191,11\n1.000000,1.175201,12\n");
  write_radius_table(r, 2, {2}, {8});
  std::istringstream in(r.str());
  std::string header, row1;
  std::getline(in, header);
  std::getline(in, row1);
  EXPECT_EQ(header, "depth,branching,dim,required_radius,kappa");
  char buf[64];
  std::snprintf(buf, sizeof buf, "1,2.000000,8,%.6f", std::log(2.0) / 7.0);
  EXPECT_EQ(row1.substr(0, row1.rfind(',')), buf);
}
