#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "concm/session.hpp"
#include "concm/synth.hpp"
#include "support.hpp"

using namespace concm;
using concm::testing::kind_of;
using concm::testing::message_of;

namespace {

GeneratorConfig small_generator(std::uint64_t seed) {
  GeneratorConfig g;
  g.base_classes = 6;
  g.ways = 3;
  g.sessions = 2;
  g.shots = 5;
  g.base_train = 20;
  g.test = 8;
  g.d_f = 16;
  g.d_s = 8;
  g.d_g = 24;
  g.pool_attributes = 8;
  g.attributes_per_class = 3;
  g.seed = seed;
  return g;
}

SessionConfig small_config(const GeneratorConfig& g, std::uint64_t seed) {
  SessionConfig c;
  c.base_classes = g.base_classes;
  c.ways = g.ways;
  c.sessions = g.sessions;
  c.shots = g.shots;
  c.epochs_base = 4;
  c.epochs_incremental = 2;
  c.warmup_epochs = 1;
  c.batch_size = 32;
  c.lr_base = c.lr_incremental = 5e-2;
  c.mpc_episodes = 60;
  c.mpc_lr = 0.1;
  c.augment_base = 12;
  c.augment_novel = 8;
  c.d_g = g.d_g;
  c.d_hidden = 16;
  c.seed = seed;
  return c;
}

RunInputs inputs_of(const SyntheticBenchmark& b) {
  return {b.base, b.sessions, b.table, b.semantic, b.test};
}

struct Fixture {
  SyntheticBenchmark bench;
  SessionConfig cfg;
};

Fixture fixture(std::uint64_t seed = 1) {
  const auto g = small_generator(seed);
  return {synth_benchmark(g), small_config(g, seed)};
}

}  // namespace

// --- feature files ------------------------------------------------------------

TEST(Features, TwoRowFixture) {
  const auto fs = parse_features("label,class_name,f0,f1\n0,cat,1.5,-2\n1,dog,0,3e-2\n");
  ASSERT_EQ(fs.size(), 2u);
  EXPECT_EQ(fs.dim(), 2u);
  EXPECT_EQ(fs.class_name(1), "dog");
  EXPECT_EQ(fs.row(1)[1], 0.03);
}

TEST(Features, TruncatedFileFailsWholesale) {
  const auto msg = message_of([] { parse_features("label,class_name,f0\n0,cat,1\n0,cat,"); });
  EXPECT_NE(msg.find("ParseError"), std::string::npos);
  EXPECT_NE(msg.find("byte offset 28"), std::string::npos) << msg;
}

TEST(Features, ErrorsCarryByteOffsets) {
  auto msg = message_of([] { parse_features("label,class_name,f0\n0,cat,x\n"); });
  EXPECT_NE(msg.find("ParseError"), std::string::npos) << msg;
  EXPECT_NE(msg.find("26"), std::string::npos) << msg;
  EXPECT_EQ(kind_of([] { parse_features("label,class_name,f0,f1\n0,cat,1\n"); }), ErrorKind::SchemaError);
  EXPECT_EQ(kind_of([] { parse_features("label,name,f0\n0,cat,1\n"); }), ErrorKind::ParseError);
  EXPECT_EQ(kind_of([] { parse_features("label,class_name,f0\n1,cat,1\n"); }), ErrorKind::SchemaError);
  EXPECT_EQ(kind_of([] { parse_features("label,class_name,f0\n0,cat,1\n0,dog,1\n"); }), ErrorKind::SchemaError);
  EXPECT_EQ(kind_of([] { parse_features("label,class_name,f0\n0,cat,nan\n"); }), ErrorKind::ParseError);
}

TEST(Features, WriteThenReadIsExact) {
  const auto b = synth_benchmark(small_generator(4));
  const auto dir = concm::testing::scratch_dir("csv");
  save_features(b.base, dir / "base.csv");
  const auto back = load_features(dir / "base.csv");
  ASSERT_EQ(back.size(), b.base.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.label(i), b.base.label(i));
    for (std::size_t j = 0; j < back.dim(); ++j) ASSERT_EQ(back.row(i)[j], b.base.row(i)[j]);
  }
  EXPECT_EQ(kind_of([&] { load_features(dir / "missing.csv"); }), ErrorKind::IoError);
}

// --- configs and manifests -------------------------------------------------------

TEST(Config, DefaultsRoundTripAndStrictFields) {
  const SessionConfig c;
  const auto back = parse_session_config(format_session_config(c));
  EXPECT_EQ(format_session_config(back), format_session_config(c));
  EXPECT_EQ(kind_of([] { parse_session_config(R"({"wayz": 5})"); }), ErrorKind::SchemaError);
  EXPECT_EQ(kind_of([] { parse_session_config(R"({"ways": "five"})"); }), ErrorKind::SchemaError);
  const auto msg = message_of([] { parse_session_config("{\n  \"ways\": 5,,\n}"); });
  EXPECT_NE(msg.find("line 2"), std::string::npos) << msg;
}

TEST(Config, Validation) {
  SessionConfig c;
  c.d_g = c.total_classes();
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::InvalidConfig);
  c = SessionConfig{};
  c.replay = 6;
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::InvalidConfig);
  c = SessionConfig{};
  c.alpha = 1.5;
  EXPECT_EQ(kind_of([&] { validate(c); }), ErrorKind::InvalidConfig);
  GeneratorConfig g;
  g.pool_attributes = 5;
  g.attributes_per_class = 4;  // only 5 distinct sets for 30 classes
  EXPECT_EQ(kind_of([&] { validate(g); }), ErrorKind::InvalidConfig);
}

TEST(Manifest, RelativePathsAndStrictness) {
  const auto m = parse_manifest(
      R"({"base": "b.csv", "sessions": ["s1.csv", "/abs/s2.csv"], "attributes": "a.json",
          "semantic": "s.csv", "test": "t.csv"})",
      "/data/run");
  EXPECT_EQ(m.base, std::filesystem::path("/data/run/b.csv"));
  EXPECT_EQ(m.sessions[1], std::filesystem::path("/abs/s2.csv"));
  EXPECT_FALSE(m.truth.has_value());
  EXPECT_EQ(kind_of([] { parse_manifest(R"({"base": "b.csv"})", "."); }), ErrorKind::SchemaError);
  EXPECT_EQ(kind_of([] {
              parse_manifest(R"({"base": "b", "sessions": [], "attributes": "a", "semantic": "s",
                                 "test": "t", "extra": 1})",
                             ".");
            }),
            ErrorKind::SchemaError);
}

// --- generator --------------------------------------------------------------------

TEST(Synth, ContractShapes) {
  GeneratorConfig g;
  g.sessions = 2;
  const auto b = synth_benchmark(g);
  EXPECT_EQ(b.base.num_classes(), 10u);
  EXPECT_EQ(b.base.size(), 10u * g.base_train);
  ASSERT_EQ(b.sessions.size(), 2u);
  for (const auto& s : b.sessions) {
    EXPECT_EQ(s.num_classes(), 5u);
    EXPECT_EQ(s.size(), 25u);
    EXPECT_EQ(s.dim(), 64u);
    EXPECT_NO_THROW(validate_labels(s, "session"));
  }
  EXPECT_EQ(b.truth.size(), 20u);
  EXPECT_EQ(b.test.size(), 20u * g.test);
  EXPECT_EQ(b.sessions[1].class_name(0), synth_class_name(15));
}

TEST(Synth, SameSeedSameBytes) {
  const auto a = synth_benchmark(small_generator(9)), b = synth_benchmark(small_generator(9));
  EXPECT_EQ(format_features(a.base), format_features(b.base));
  EXPECT_EQ(format_features(a.test), format_features(b.test));
  EXPECT_EQ(format_truth(a.truth), format_truth(b.truth));
  const auto c = synth_benchmark(small_generator(10));
  EXPECT_NE(format_features(a.base), format_features(c.base));
}

TEST(Synth, WrittenBenchmarkLoadsBack) {
  const auto b = synth_benchmark(small_generator(2));
  const auto dir = concm::testing::scratch_dir("bench");
  const auto manifest = write_benchmark(b, dir);
  const auto m = load_manifest(manifest);
  const auto in = load_inputs(m);
  EXPECT_EQ(format_features(in.base), format_features(b.base));
  EXPECT_EQ(in.sessions.size(), 2u);
  ASSERT_TRUE(m.truth.has_value());
  EXPECT_EQ(format_truth(parse_truth(io::read_file(*m.truth))), format_truth(b.truth));
}

// --- sessions ---------------------------------------------------------------------

TEST(BaseSession, OptimalStructureAndAboveChance) {
  const auto f = fixture(1);
  const auto s = run_base_session(f.cfg, Strategy::ConCM, f.bench.base, f.bench.table, f.bench.semantic);
  EXPECT_EQ(s.t, 0);
  EXPECT_EQ(s.structure.num_classes(), 6u);
  EXPECT_LE(check_geometric_optimality(s.structure), 1e-8);
  EXPECT_LE(s.last.optimality, 1e-8);
  const auto rec = evaluate_session(s, f.bench.test);
  EXPECT_GT(rec.top1, 100.0 / 6.0 * 1.5);
  EXPECT_FALSE(rec.nacc.has_value());
}

TEST(BaseSession, SixtyClassStructure) {
  GeneratorConfig g;
  g.base_classes = 60;
  g.sessions = 0;
  g.base_train = 7;
  g.test = 1;
  g.d_f = 12;
  g.d_s = 6;
  g.pool_attributes = 60;
  g.attributes_per_class = 2;
  g.seed = 3;
  const auto b = synth_benchmark(g);
  SessionConfig c;
  c.base_classes = 60;
  c.sessions = 0;
  c.epochs_base = 1;
  c.batch_size = 128;
  c.mpc_episodes = 2;
  c.mpc_lr = 0.01;
  c.augment_base = 2;
  c.d_hidden = 8;
  const auto s = run_base_session(c, Strategy::ConCM, b.base, b.table, b.semantic);
  const Matrix gram = matmul_tn(s.structure.vectors, s.structure.vectors);
  EXPECT_NEAR(gram(0, 1), -1.0 / 59.0, 1e-8);
  EXPECT_NEAR(gram(30, 59), -0.016949, 1e-6);
}

TEST(IncrementalSession, GrowsByWaysAndStaysOptimal) {
  const auto f = fixture(2);
  auto s = run_base_session(f.cfg, Strategy::ConCM, f.bench.base, f.bench.table, f.bench.semantic);
  const auto base_repo = s.repo.exact_entries();
  for (std::size_t t = 0; t < 2; ++t) {
    const std::size_t before = s.num_classes();
    s = run_incremental_session(s, f.bench.sessions[t], f.bench.table, f.bench.semantic);
    EXPECT_EQ(s.num_classes(), before + 3);
    EXPECT_EQ(s.structure.num_classes(), before + 3);
    EXPECT_EQ(s.repo.size(), before + 3);
    EXPECT_LE(check_geometric_optimality(s.structure), 1e-8);
    EXPECT_GT(s.last.smr, s.last.smr_random);
    EXPECT_EQ(s.last.calibration.size(), 3u);
    // Base memory is frozen bit for bit.
    const auto now = s.repo.exact_entries();
    ASSERT_EQ(now.size(), base_repo.size());
    for (std::size_t i = 0; i < now.size(); ++i) {
      EXPECT_EQ(now[i].mean, base_repo[i].mean);
      EXPECT_EQ(now[i].cov_diag, base_repo[i].cov_diag);
    }
    // K = 5 shots fit in the replay budget.
    for (int id = static_cast<int>(before); id < static_cast<int>(before + 3); ++id) EXPECT_EQ(s.replay.at(id).size(), 5u);
  }
  const auto rec = evaluate_session(s, f.bench.test);
  EXPECT_TRUE(rec.hm.has_value());
  EXPECT_TRUE(rec.ber.has_value());
  EXPECT_EQ(kind_of([&] { run_incremental_session(s, f.bench.sessions[0], f.bench.table, f.bench.semantic); }),
            ErrorKind::ProtocolViolation);
}

TEST(IncrementalSession, ReplayKeepsClosestShotsToTheMean) {
  auto g = small_generator(5);
  g.shots = 8;
  const auto b = synth_benchmark(g);
  auto c = small_config(g, 5);
  c.replay = 3;
  const auto s0 = run_base_session(c, Strategy::ConCM, b.base, b.table, b.semantic);
  const auto s1 = run_incremental_session(s0, b.sessions[0], b.table, b.semantic);
  const auto by_label = b.sessions[0].indices_by_label();
  for (const auto& [l, idx] : by_label) {
    const int id = 6 + l;
    const Vector& mean = s1.last.calibration[static_cast<std::size_t>(l)].raw;
    std::vector<std::pair<double, Vector>> ranked;
    for (std::size_t i : idx) {
      const auto x = b.sessions[0].row(i);
      double d2 = 0.0;
      for (std::size_t j = 0; j < x.size(); ++j) d2 += (x[j] - mean[j]) * (x[j] - mean[j]);
      ranked.emplace_back(d2, Vector(x.begin(), x.end()));
    }
    std::sort(ranked.begin(), ranked.end());
    ASSERT_EQ(s1.replay.at(id).size(), 3u);
    for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(s1.replay.at(id)[r], ranked[r].second);
  }
}

TEST(IncrementalSession, ZeroReplayStillCompletes) {
  auto f = fixture(3);
  f.cfg.replay = 0;
  const auto res = run_pipeline(inputs_of(f.bench), f.cfg, Strategy::ConCM);
  EXPECT_TRUE(res.final_state.replay.empty());
  EXPECT_EQ(res.report.sessions.size(), 3u);
  EXPECT_TRUE(res.report.ahm.has_value());
}

TEST(IncrementalSession, ProtocolViolations) {
  const auto f = fixture(4);
  const auto s0 = run_base_session(f.cfg, Strategy::Frozen, f.bench.base, f.bench.table, f.bench.semantic);
  const auto& novel = f.bench.sessions[0];

  FeatureSet fewer_classes(novel.dim());
  for (std::size_t i = 0; i < novel.size(); ++i)
    if (novel.label(i) < 2) fewer_classes.add(novel.label(i), novel.class_name(i), novel.row(i));
  EXPECT_EQ(kind_of([&] { run_incremental_session(s0, fewer_classes, f.bench.table, f.bench.semantic); }),
            ErrorKind::ProtocolViolation);

  FeatureSet extra_shot = novel;
  extra_shot.add(0, novel.class_name(0), novel.row(0));
  EXPECT_EQ(kind_of([&] { run_incremental_session(s0, extra_shot, f.bench.table, f.bench.semantic); }),
            ErrorKind::ProtocolViolation);

  FeatureSet reused(novel.dim());
  for (std::size_t i = 0; i < novel.size(); ++i)
    reused.add(novel.label(i), novel.label(i) == 0 ? s0.class_names[0] : novel.class_name(i), novel.row(i));
  const auto msg = message_of([&] { run_incremental_session(s0, reused, f.bench.table, f.bench.semantic); });
  EXPECT_NE(msg.find("ProtocolViolation"), std::string::npos);
  EXPECT_NE(msg.find(s0.class_names[0]), std::string::npos);

  RunInputs in = inputs_of(f.bench);
  in.sessions.pop_back();
  EXPECT_EQ(kind_of([&] { run_pipeline(in, f.cfg, Strategy::Frozen); }), ErrorKind::ProtocolViolation);
}

TEST(IncrementalSession, StaleStateIsAnOrderError) {
  const auto f = fixture(5);
  const auto s0 = run_base_session(f.cfg, Strategy::Frozen, f.bench.base, f.bench.table, f.bench.semantic);
  const auto s1 = run_incremental_session(s0, f.bench.sessions[0], f.bench.table, f.bench.semantic);
  EXPECT_EQ(kind_of([&] { run_incremental_session(s0, f.bench.sessions[0], f.bench.table, f.bench.semantic); }),
            ErrorKind::OrderError);
  EXPECT_EQ(kind_of([&] { run_incremental_session(SessionState{}, f.bench.sessions[0], f.bench.table, f.bench.semantic); }),
            ErrorKind::OrderError);
  EXPECT_NO_THROW(run_incremental_session(s1, f.bench.sessions[1], f.bench.table, f.bench.semantic));
}

TEST(IncrementalSession, UncoveredClassKeepsRawPrototype) {
  auto f = fixture(6);
  const std::string victim = f.bench.sessions[0].class_name(0);
  f.bench.table.set(victim, {"not_in_pool"});
  const auto s0 = run_base_session(f.cfg, Strategy::Frozen, f.bench.base, f.bench.table, f.bench.semantic);
  const auto s1 = run_incremental_session(s0, f.bench.sessions[0], f.bench.table, f.bench.semantic);
  const auto& cal = s1.last.calibration[0];
  EXPECT_FALSE(cal.covered);
  EXPECT_EQ(cal.blended, cal.raw);
  EXPECT_TRUE(s1.last.calibration[1].covered);
  EXPECT_NE(s1.last.calibration[1].blended, s1.last.calibration[1].raw);
}

TEST(Strategies, FrozenNeverTrainsAndBaselinesStayOptimal) {
  const auto f = fixture(7);
  const auto frozen = run_pipeline(inputs_of(f.bench), f.cfg, Strategy::Frozen);
  EXPECT_TRUE(frozen.final_state.projector ==
              ProjectorParams::init(16, f.cfg.d_hidden, f.cfg.d_g, derive_seed(f.cfg.seed, session_detail::kProjector)));
  for (const auto& d : frozen.diagnostics) EXPECT_TRUE(d.projector_loss.empty());

  const auto rm = run_pipeline(inputs_of(f.bench), f.cfg, Strategy::RandomMatching);
  for (const auto& d : rm.diagnostics) EXPECT_LE(d.optimality, 1e-8);

  const auto fs = run_pipeline(inputs_of(f.bench), f.cfg, Strategy::FixedStructure);
  ASSERT_TRUE(fs.final_state.fs_frame.has_value());
  const auto& frame = *fs.final_state.fs_frame;
  EXPECT_EQ(frame.num_classes(), f.cfg.total_classes());
  EXPECT_EQ(concm::testing::max_abs_diff(fs.final_state.structure.vectors,
                                         structure_prefix(frame, fs.final_state.num_classes()).vectors),
            0.0);
  EXPECT_EQ(kind_of([] { parse_strategy("greedy"); }), ErrorKind::InvalidConfig);
  EXPECT_EQ(parse_strategy(to_string(Strategy::FixedStructure)), Strategy::FixedStructure);
}

TEST(Pipeline, SameSeedSameReportBytes) {
  const auto f = fixture(8);
  const auto a = run_pipeline(inputs_of(f.bench), f.cfg, Strategy::ConCM);
  const auto b = run_pipeline(inputs_of(f.bench), f.cfg, Strategy::ConCM);
  EXPECT_EQ(format_report_json(a.report), format_report_json(b.report));
  for (std::size_t i = 0; i < a.diagnostics.size(); ++i)
    EXPECT_EQ(format_diagnostics(a.diagnostics[i]), format_diagnostics(b.diagnostics[i]));
  auto other = f.cfg;
  other.seed = 99;
  const auto c = run_pipeline(inputs_of(f.bench), other, Strategy::ConCM);
  EXPECT_NE(format_report_json(a.report), format_report_json(c.report));
}
