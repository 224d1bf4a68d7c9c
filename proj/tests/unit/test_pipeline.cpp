#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <sstream>

#include "hyem/pipeline.hpp"

using namespace hyem;
using namespace hyem::pipeline;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path = fs::temp_directory_path() / ("hyem_" + std::string(info->test_suite_name()) + "_" + info->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* no_env(const char*) { return nullptr; }

std::ostringstream sink;

}  // namespace

TEST(Config, DefaultsAndTypedViews) {
  auto c = PipelineConfig::load(std::nullopt, {}, no_env);
  EXPECT_EQ(c.integer("train.dim"), 32);
  EXPECT_EQ(c.train().dim, 32);
  EXPECT_DOUBLE_EQ(c.train().radius_budget, 3.0);
  EXPECT_EQ(c.retrieval().k, 10u);
  EXPECT_EQ(c.retrieval().mode, retrieval::Mode::soft_mix);
  EXPECT_EQ(c.numbers("stress.L"), (std::vector<double>{10, 20, 34, 50, 68, 100, 200}));
  EXPECT_EQ(c.out_dir(), fs::path("out"));
  EXPECT_EQ(c.seed("train"), derive_seed(0, "train"));
  EXPECT_NE(c.seed("train"), c.seed("gate"));
}

TEST(Config, LayersApplyInOrder) {
  TempDir t;
  const auto ini = t.path / "c.ini";
  write_file(ini, "[train]\ndim = 8\nepochs = 7\n[retrieval]\nk = 3\n");
  std::map<std::string, std::string> env{{"HYEM_TRAIN_EPOCHS", "9"}, {"HYEM_RETRIEVAL_K", "4"}};
  auto getenv_fn = [&](const char* k) -> const char* {
    auto it = env.find(k);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  auto c = PipelineConfig::load(ini, {"retrieval.k=5"}, getenv_fn);
  EXPECT_EQ(c.integer("train.dim"), 8);
  EXPECT_EQ(c.integer("train.epochs"), 9);
  EXPECT_EQ(c.integer("retrieval.k"), 5);

  std::ostringstream resolved;
  c.write_ini(resolved);
  write_file(t.path / "resolved.ini", resolved.str());
  auto back = PipelineConfig::load(t.path / "resolved.ini", {}, no_env);
  EXPECT_EQ(back.section_hash({"train", "retrieval"}), c.section_hash({"train", "retrieval"}));
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  TempDir t;
  write_file(t.path / "bad.ini", "[train]\ndimension = 8\n");
  EXPECT_THROW(PipelineConfig::load(t.path / "bad.ini", {}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(t.path / "absent.ini", {}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"train.nope=1"}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"train.dim"}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"train.dim=abc"}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"train.radius=-1"}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"encoder.kind=bert"}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"retrieval.mode=mixed"}, no_env), Error);
  EXPECT_THROW(PipelineConfig::load(std::nullopt, {"benchmark.split=0.5,0.5,0.5"}, no_env), Error);
}

TEST(Config, SectionHashTracksOnlyNamedSections) {
  auto a = PipelineConfig::load(std::nullopt, {}, no_env);
  auto b = PipelineConfig::load(std::nullopt, {"retrieval.k=3"}, no_env);
  auto c = PipelineConfig::load(std::nullopt, {"seed.master=5"}, no_env);
  EXPECT_EQ(a.section_hash({"train"}), b.section_hash({"train"}));
  EXPECT_NE(a.section_hash({"retrieval"}), b.section_hash({"retrieval"}));
  EXPECT_NE(a.section_hash({"train"}), c.section_hash({"train"}));
}

TEST(Stages, SkipWhenFreshAndRerunOnChange) {
  TempDir t;
  int runs = 0;
  const auto out = t.path / "a.txt";
  auto produce = [&] {
    ++runs;
    write_file(out, "content");
  };
  StageRunner r(Layout{t.path}, {.log = &sink});
  EXPECT_EQ(r.run("a", {}, {out}, "h1", produce), StageStatus::ran);
  EXPECT_TRUE(fs::exists(t.path / "manifests" / "a.json"));
  EXPECT_EQ(r.run("a", {}, {out}, "h1", produce), StageStatus::skipped);
  EXPECT_EQ(r.run("a", {}, {out}, "h2", produce), StageStatus::ran);
  write_file(out, "edited");
  EXPECT_EQ(r.run("a", {}, {out}, "h2", produce), StageStatus::ran);
  StageRunner forced(Layout{t.path}, {.force = true, .log = &sink});
  EXPECT_EQ(forced.run("a", {}, {out}, "h2", produce), StageStatus::ran);
  EXPECT_EQ(runs, 4);
  EXPECT_THROW(r.run("b", {}, {t.path / "never.txt"}, "h", [] {}), Error);
}

TEST(Stages, MissingAndStaleInputsNameTheProducer) {
  TempDir t;
  StageRunner r(Layout{t.path}, {.log = &sink});
  const auto a = t.path / "a.txt", b = t.path / "b.txt";
  try {
    r.run("consume", {a}, {b}, "h", [] {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("consume"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("expected " + a.string()), std::string::npos);
  }
  r.run("produce", {}, {a}, "h", [&] { write_file(a, "v1"); });
  int consumed = 0;
  auto consume = [&] {
    ++consumed;
    write_file(b, slurp(a) + "!");
  };
  EXPECT_EQ(r.run("consume", {a}, {b}, "h", consume), StageStatus::ran);
  EXPECT_EQ(r.run("consume", {a}, {b}, "h", consume), StageStatus::skipped);
  write_file(a, "hand edit");
  try {
    r.run("consume", {a}, {b}, "h", consume);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("stale"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("'produce'"), std::string::npos);
  }
  r.run("produce", {}, {a}, "h", [&] { write_file(a, "v2"); });
  EXPECT_EQ(r.run("consume", {a}, {b}, "h", consume), StageStatus::ran);
  EXPECT_EQ(consumed, 2);
  EXPECT_EQ(slurp(b), "v2!");
}

TEST(Stages, SmallEndToEndRunIsReproducible) {
  TempDir t;
  auto cfg = PipelineConfig::load(std::nullopt,
                                  {"paths.out_dir=" + (t.path / "run").string(), "synth.depth=4",
                                   "synth.branch=3", "train.dim=8", "train.epochs=40", "encoder.dim=32",
                                   "gate.epochs=50", "retrieval.L_H=20", "retrieval.L_E=20",
                                   "stress.L=10,20,40", "stress.queries=50"},
                                  no_env);
  Pipeline p(cfg, {.log = &sink});
  p.synth();
  p.gen_queries();
  p.train();
  p.gate_train();
  p.build_index();
  EXPECT_EQ(p.evaluate(), StageStatus::ran);
  const auto reports = t.path / "run" / "reports";
  const auto csv = slurp(reports / "metrics.csv"), summary = slurp(reports / "summary.json");
  EXPECT_EQ(p.evaluate(), StageStatus::skipped);
  Pipeline again(cfg, {.force = true, .log = &sink});
  EXPECT_EQ(again.evaluate(), StageStatus::ran);
  EXPECT_EQ(slurp(reports / "metrics.csv"), csv);
  EXPECT_EQ(slurp(reports / "summary.json"), summary);
  auto j = nlohmann::json::parse(summary);
  EXPECT_TRUE(j.contains("metrics"));

  p.stress_test();
  auto sweep = nlohmann::json::parse(slurp(reports / "stress_summary.json"));
  EXPECT_FALSE(sweep.empty());

  // Retraining with different settings makes downstream artifacts stale.
  auto changed = PipelineConfig::load(std::nullopt,
                                      {"paths.out_dir=" + (t.path / "run").string(), "synth.depth=4",
                                       "synth.branch=3", "train.dim=8", "train.epochs=41", "encoder.dim=32"},
                                      no_env);
  Pipeline q(changed, {.log = &sink});
  EXPECT_EQ(q.train(), StageStatus::ran);
  try {
    q.evaluate();
    FAIL() << "expected a stale-artifact error";
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("stale"), std::string::npos) << msg;
    EXPECT_TRUE(msg.find("build-index") != std::string::npos || msg.find("gate-train") != std::string::npos) << msg;
  }
}
