// Small end-to-end run of the library on a synthetic tree: train, index,
// retrieve a hierarchical and an entity-style query.

#include <cstdio>

#include "hyem/hyem.hpp"

int main() {
  using namespace hyem;
  auto g = ontology::synth_bary(4, 3, 1);
  encoding::HashEncoder enc(64, 7);
  auto table = training::encode_entities(g, enc);
  auto texts = training::align_texts(g, table);

  training::TrainConfig tc;
  tc.dim = 16;
  tc.epochs = 300;
  auto model = training::train_embeddings(g, texts, tc);
  std::printf("%zu entities, max radius %.3f\n", g.size(), model.embeddings.max_radius());

  const auto d = static_cast<std::size_t>(model.embeddings.dim());
  auto tangent = index::VectorIndex::build(pipeline::identity_keys(g.size()), model.embeddings.tangent_data(), d,
                                           {index::IndexKind::graph, index::Metric::l2});
  auto corpus = retrieval::make_text_corpus(g, enc, true);
  auto text = index::VectorIndex::build(corpus.keys(), corpus.flat, static_cast<std::size_t>(corpus.dim),
                                        {index::IndexKind::graph, index::Metric::cosine});
  training::GateParams gate = training::GateParams::zeros(training::GateVariant::rule, enc.dim());
  retrieval::RetrievalContext ctx{&model.embeddings, &tangent, &text, &corpus, &model.adapter, &gate};

  retrieval::RetrievalConfig rc;
  rc.k = 5;
  const std::string label = g.node(1).label;
  for (const std::string& q : {"What are subtypes of " + label + "?", "What is " + label + "?"}) {
    auto r = retrieval::retrieve({"demo", q, enc.encode("demo", q)}, rc, ctx);
    std::printf("\n%s  (alpha %.2f)\n", q.c_str(), r.alpha);
    for (const auto& it : r.items)
      std::printf("  %-14s %-28s score %.3f [%s]\n", it.id.c_str(), g.node(it.entity).label.c_str(), it.score,
                  retrieval::provenance_string(it.provenance).c_str());
  }
}
