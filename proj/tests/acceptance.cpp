// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "concm/concm.hpp"

using namespace concm;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Matrix gaussian(std::size_t r, std::size_t c, Rng& rng) {
  Matrix m(r, c);
  for (double& x : m.data()) x = rng.normal();
  return m;
}

InitialStructure random_initial(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return initial_structure(std::nullopt, ids, gaussian(d, n, rng));
}

InitialStructure as_initial(const StructureMatrix& s) {
  return {s.vectors, s.class_ids, std::vector<ColumnOrigin>(s.num_classes(), ColumnOrigin::Novel)};
}

// --- 1-3: geometry --------------------------------------------------------------------

Verdict etf_geometry() {
  const auto t0 = Clock::now();
  Rng rng(101);
  double worst = 0.0, worst_off = 0.0;
  std::size_t cases = 0;
  for (std::size_t n = 2; n <= 64; ++n) {
    std::vector<std::size_t> dims{n + 1, 512, n + 1 + rng.below(512 - n)};
    for (std::size_t d : dims) {
      const auto upd = theorem1_update(random_initial(n, d, rng), rng.next_u64());
      const auto rnd = random_optimal_structure(n, d, rng.next_u64());
      for (const StructureMatrix* s : {&upd.structure, &rnd}) {
        worst = std::max(worst, check_geometric_optimality(*s));
        const Matrix g = matmul_tn(s->vectors, s->vectors);
        worst_off = std::max(worst_off, std::abs(g(0, n - 1) + 1.0 / static_cast<double>(n - 1)));
        ++cases;
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-8 && worst_off <= 1e-8 && secs < 10.0,
          fmt("%zu structures, max deviation %.2e, off-diagonal error %.2e, %.1f s", cases, worst, worst_off, secs)};
}

Verdict procrustes_optimality() {
  const auto t0 = Clock::now();
  Rng rng(202);
  double worst_gap = -INFINITY;
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + rng.below(5);                  // 2..6
    const std::size_t d = n + 1 + rng.below(8 - n);          // n+1..8
    const auto init = random_initial(n, d, rng);
    const double best = matching_objective(init.vectors, theorem1_update(init).structure.vectors);
    const std::uint64_t base = rng.next_u64();
    for (std::uint64_t c = 0; c < 10000; ++c) {
      const auto cand = simplex_from_orthonormal(random_orthonormal(d, n, derive_seed(base, c)));
      worst_gap = std::max(worst_gap, matching_objective(init.vectors, cand) - best);
    }
  }
  const double secs = seconds_since(t0);
  return {worst_gap <= 1e-10 && secs < 60.0,
          fmt("200 instances x 10000 candidates, max(candidate - optimum) %.2e, %.1f s", worst_gap, secs)};
}

Verdict fixed_point() {
  Rng rng(303);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 2 + rng.below(40);
    const std::size_t d = n + 1 + rng.below(64);
    const auto s = random_optimal_structure(n, d, rng.next_u64());
    worst = std::max(worst, max_abs(theorem1_update(as_initial(s)).structure.vectors - s.vectors));
  }
  return {worst <= 1e-8, fmt("200 optimal structures, max change %.2e", worst)};
}

// --- 4: gradients ------------------------------------------------------------------------

Verdict gradients() {
  double match = 0, cont = 0, proj = 0, meta = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed, 404);
    const auto s = random_optimal_structure(4, 8, seed);
    const Matrix x = gaussian(8, 6, rng);
    const std::vector<int> labels{0, 0, 1, 1, 2, 2, 3, 3};
    const auto p = ProjectorParams::init(6, 5, 8, seed + 1);
    auto check = [&](ProjectorLossConfig cfg) {
      return grad_check(
                 [&](ad::Tape& t, std::span<const ad::Var> v) {
                   return projector_loss(t, ProjectorVars::from(v), x, labels, s, {2, 3}, cfg);
                 },
                 p.tensor_values())
          .max_rel_error;
    };
    match = std::max(match, check({0.07, true, false}));
    cont = std::max(cont, check({0.07, false, true}));
    proj = std::max(proj, check({0.07, true, true}));

    GeneratorConfig g;
    g.base_classes = 6;
    g.ways = 2;
    g.sessions = 1;
    g.base_train = 12;
    g.test = 2;
    g.d_f = 8;
    g.d_s = 4;
    g.d_g = 16;
    g.pool_attributes = 6;
    g.attributes_per_class = 2;
    g.seed = seed + 1;
    const auto bench = synth_benchmark(g);
    const auto knowledge = build_knowledge(bench.base, bench.semantic, bench.table);
    EpisodeSampler sampler(bench.base, knowledge, 3);
    const MetaBatch batch = sampler.draw(rng);
    const auto mp = MpcParams::init(8, 4, 4, seed + 2);
    // Attention entries have gradients near 1e-7 where h = 1e-5 cancellation
    // noise alone reaches 1e-4 relative; h = 1e-4 keeps truncation near 1e-8.
    meta = std::max(meta, grad_check(
                              [&](ad::Tape& t, std::span<const ad::Var> v) {
                                return meta_loss(t, MpcVars::from(v), batch, knowledge.pool);
                              },
                              mp.tensor_values(), 1e-4)
                              .max_rel_error);
  }
  const double worst = std::max({match, cont, proj, meta});
  return {worst <= 1e-4,
          fmt("max relative error over 10 points: match %.1e, cont %.1e, mpc %.1e, projector %.1e", match, cont,
              meta, proj)};
}

// --- 5-7: synthetic benchmark ---------------------------------------------------------------

const std::vector<std::uint64_t> kSeeds{1, 2, 3, 4, 5};

RunInputs inputs_of(const SyntheticBenchmark& b) { return {b.base, b.sessions, b.table, b.semantic, b.test}; }

struct SeedRuns {
  SyntheticBenchmark bench;
  RunResult concm, rm, frozen;
};

std::vector<SeedRuns> run_benchmarks(double& secs) {
  const auto t0 = Clock::now();
  const auto gen = load_generator_config(fs::path(CONCM_SOURCE_DIR) / "configs" / "generator.json");
  const auto cfg = load_session_config(fs::path(CONCM_SOURCE_DIR) / "configs" / "session.json");
  std::vector<SeedRuns> out;
  for (std::uint64_t seed : kSeeds) {
    auto g = gen;
    auto c = cfg;
    g.seed = c.seed = seed;
    SeedRuns r{synth_benchmark(g), {}, {}, {}};
    const auto in = inputs_of(r.bench);
    r.concm = run_pipeline(in, c, Strategy::ConCM);
    r.rm = run_pipeline(in, c, Strategy::RandomMatching);
    r.frozen = run_pipeline(in, c, Strategy::Frozen);
    out.push_back(std::move(r));
  }
  secs = seconds_since(t0);
  return out;
}

double ahm_of(const RunResult& r) { return r.report.ahm.value_or(0.0); }

Verdict end_to_end(const std::vector<SeedRuns>& runs, double secs) {
  bool ok = secs < 300.0;
  std::string detail;
  for (std::size_t i = 0; i < runs.size(); ++i) {
    const double c = ahm_of(runs[i].concm), r = ahm_of(runs[i].rm), f = ahm_of(runs[i].frozen);
    ok = ok && c - f >= 5.0 && c >= r;
    detail += fmt("seed %llu concm %.2f rm %.2f frozen %.2f; ", static_cast<unsigned long long>(kSeeds[i]), c, r, f);
  }
  return {ok, detail + fmt("%.0f s", secs)};
}

// Mean (1 - cos) to the true class mean, raw and blended.
void accumulate_bias(const SyntheticBenchmark& b, const RunResult& r, double& raw, double& blended, std::size_t& n) {
  for (const auto& d : r.diagnostics)
    for (const auto& c : d.calibration) {
      const Vector& truth = b.truth.at(static_cast<std::size_t>(c.class_id)).mean;
      raw += 1.0 - cosine(c.raw, truth);
      blended += 1.0 - cosine(c.blended, truth);
      ++n;
    }
}

Verdict calibration_bias(const std::vector<SeedRuns>& runs) {
  bool ok = true;
  std::string detail;
  const auto gen = load_generator_config(fs::path(CONCM_SOURCE_DIR) / "configs" / "generator.json");
  const auto cfg = load_session_config(fs::path(CONCM_SOURCE_DIR) / "configs" / "session.json");
  for (std::size_t k : {1u, 5u}) {
    double raw = 0, blended = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < kSeeds.size(); ++i) {
      if (k == 5) {
        accumulate_bias(runs[i].bench, runs[i].concm, raw, blended, n);
        continue;
      }
      // Calibration precedes projector training, so the frozen strategy gives the same prototypes.
      auto g = gen;
      auto c = cfg;
      g.seed = c.seed = kSeeds[i];
      g.shots = c.shots = k;
      const auto b = synth_benchmark(g);
      accumulate_bias(b, run_pipeline(inputs_of(b), c, Strategy::Frozen), raw, blended, n);
    }
    raw /= static_cast<double>(n);
    blended /= static_cast<double>(n);
    ok = ok && blended < raw;
    detail += fmt("%sK=%zu raw %.4f blended %.4f over %zu classes", k == 1 ? "" : "; ", k, raw, blended, n);
  }
  return {ok, detail};
}

Verdict smr_separation(const std::vector<SeedRuns>& runs) {
  double min_smr = INFINITY, max_random = 0.0;
  std::size_t n = 0;
  for (const auto& r : runs)
    for (const auto& d : r.concm.diagnostics) {
      if (d.t == 0) continue;
      min_smr = std::min(min_smr, d.smr);
      max_random = std::max(max_random, std::abs(d.smr_random));
      ++n;
    }
  return {n > 0 && min_smr >= 0.5 && max_random <= 0.1,
          fmt("%zu sessions, min SMR %.3f, max |SMR random| %.3f", n, min_smr, max_random)};
}

// --- 8-10 -------------------------------------------------------------------------------------

Verdict metric_arithmetic() {
  const std::vector<double> hm{70.34, 66.59, 63.38, 59.59, 57.05, 53.95, 53.49, 53.92};
  const auto agg = run_metrics(hm, 83.97, 59.92);
  const double h = harmonic_mean(80, 40), ber = balanced_error_rate(10, 30);
  const bool ok = std::abs(h - 53.33) <= 0.01 && ber == 20.0 && std::abs(*agg.ahm - 59.78) <= 0.01 &&
                  std::abs(agg.pd - 24.05) <= 0.001;
  return {ok, fmt("HM %.4f, BER %.4f, AHM %.4f, PD %.4f", h, ber, *agg.ahm, agg.pd)};
}

Verdict determinism() {
  const fs::path dir = fs::temp_directory_path() / "concm_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cli = CONCM_CLI, src = CONCM_SOURCE_DIR, quiet = " >/dev/null 2>&1";
  auto sh = [](const std::string& cmd) { return std::system(cmd.c_str()) == 0; };
  bool ok = sh(cli + " gen --config " + src + "/configs/smoke_generator.json --out " + (dir / "bench").string() + quiet);
  for (const char* run : {"a", "b"})
    ok = ok && sh(cli + " run --manifest " + (dir / "bench" / "manifest.json").string() + " --config " + src +
                  "/configs/smoke.json --out " + (dir / run).string() + quiet);
  if (!ok) return {false, "CLI invocation failed"};
  const std::string a = io::read_file(dir / "a" / "report.json"), b = io::read_file(dir / "b" / "report.json");
  return {a == b, fmt("report.json %zu bytes, %s", a.size(), a == b ? "identical" : "differs")};
}

Verdict ncm_oracle() {
  Rng rng(1010);
  std::size_t agree = 0;
  for (int i = 0; i < 10000; ++i) {
    const std::size_t n = 2 + rng.below(20);
    const std::size_t d = n + 1 + rng.below(16);
    const auto s = random_optimal_structure(n, d, rng.next_u64());
    Vector z(d);
    for (double& x : z) x = rng.normal();
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t j = 0; j < n; ++j) {
      double dist = 0.0;
      for (std::size_t r = 0; r < d; ++r) dist += (z[r] - s.vectors(r, j)) * (z[r] - s.vectors(r, j));
      if (dist < best_d) best_d = dist, best = j;
    }
    agree += ncm_classify(z, s) == best;
  }
  return {agree == 10000, fmt("%zu / 10000 agree", agree)};
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, const char* name, const Verdict& v) {
    std::printf("%s criterion %d: %s (%s)\n", v.pass ? "PASS" : "FAIL", id, name, v.detail.c_str());
    std::fflush(stdout);
    failures += v.pass ? 0 : 1;
  };
  auto guarded = [](const std::function<Verdict()>& f) -> Verdict {
    try {
      return f();
    } catch (const std::exception& e) {
      return {false, std::string("threw: ") + e.what()};
    }
  };

  report(1, "ETF geometry", guarded(etf_geometry));
  report(2, "Procrustes optimality", guarded(procrustes_optimality));
  report(3, "fixed point", guarded(fixed_point));
  report(4, "gradient correctness", guarded(gradients));

  double secs = 0.0;
  std::vector<SeedRuns> runs;
  try {
    runs = run_benchmarks(secs);
  } catch (const std::exception& e) {
    const Verdict v{false, std::string("threw: ") + e.what()};
    report(5, "end-to-end trend", v);
    report(6, "calibration bias reduction", v);
    report(7, "SMR separation", v);
  }
  if (!runs.empty()) {
    report(5, "end-to-end trend", end_to_end(runs, secs));
    report(6, "calibration bias reduction", guarded([&] { return calibration_bias(runs); }));
    report(7, "SMR separation", smr_separation(runs));
  }

  report(8, "metric arithmetic", guarded(metric_arithmetic));
  report(9, "determinism", guarded(determinism));
  report(10, "NCM oracle", guarded(ncm_oracle));
  std::printf("%d of 10 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
