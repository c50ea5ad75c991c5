// concm: generate synthetic benchmarks, run incremental pipelines, render reports.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "concm/concm.hpp"

namespace {

enum Exit : int { kOk = 0, kValidation = 1, kRuntime = 2, kIo = 3 };

int exit_code(concm::ErrorKind k) {
  using concm::ErrorKind;
  switch (k) {
    case ErrorKind::IoError:
      return kIo;
    case ErrorKind::InvalidInput:
    case ErrorKind::InvalidConfig:
    case ErrorKind::ParseError:
    case ErrorKind::SchemaError:
    case ErrorKind::UnknownClass:
    case ErrorKind::MissingEmbedding:
    case ErrorKind::EmptyAttribute:
    case ErrorKind::MissingClass:
    case ErrorKind::InsufficientSamples:
    case ErrorKind::DimensionTooSmall:
    case ErrorKind::LabelOutOfRange:
    case ErrorKind::ProtocolViolation:
      return kValidation;
    default:
      return kRuntime;
  }
}

void error_record(const std::string& command, const std::string& kind, const std::string& message, int code) {
  nlohmann::ordered_json j;
  j["error"]["command"] = command;
  j["error"]["kind"] = kind;
  j["error"]["message"] = message;
  j["error"]["exit_code"] = code;
  std::cerr << j.dump() << "\n";
}

struct GenArgs {
  std::string config, out;
  std::optional<std::uint64_t> seed;
};

struct RunArgs {
  std::string manifest, config, strategy = "concm", out;
  std::optional<std::uint64_t> seed;
};

struct ReportArgs {
  std::string path, format = "table";
};

int cmd_gen(const GenArgs& a) {
  concm::GeneratorConfig cfg;
  if (!a.config.empty()) cfg = concm::load_generator_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  concm::validate(cfg);
  const auto bench = concm::synth_benchmark(cfg);
  const auto manifest = concm::write_benchmark(bench, a.out);
  concm::log::info("wrote " + manifest.string());
  std::cout << manifest.string() << "\n";
  return kOk;
}

int cmd_run(const RunArgs& a) {
  const concm::Strategy strategy = concm::parse_strategy(a.strategy);
  concm::SessionConfig cfg;
  if (!a.config.empty()) cfg = concm::load_session_config(a.config);
  if (a.seed) cfg.seed = *a.seed;
  concm::validate(cfg);
  const concm::Manifest m = concm::load_manifest(a.manifest);
  const concm::RunInputs in = concm::load_inputs(m);

  std::error_code ec;
  std::filesystem::create_directories(a.out, ec);
  if (ec) concm::fail(concm::ErrorKind::IoError, a.out + ": cannot create directory: " + ec.message());

  const auto res = concm::run_pipeline(in, cfg, strategy);
  const std::filesystem::path out = a.out;
  concm::io::write_file(out / "report.json", concm::format_report_json(res.report));
  concm::io::write_file(out / "report.csv", concm::format_report_csv(res.report));
  for (const auto& d : res.diagnostics)
    concm::io::write_file(out / ("session_" + std::to_string(d.t) + ".json"), concm::format_diagnostics(d));
  std::cout << concm::format_report_table(res.report);
  return kOk;
}

int cmd_report(const ReportArgs& a) {
  const auto report = concm::load_report(a.path);
  if (a.format == "json")
    std::cout << concm::format_report_json(report);
  else if (a.format == "csv")
    std::cout << concm::format_report_csv(report);
  else
    std::cout << concm::format_report_table(report);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot class-incremental learning with calibrated prototypes and matched structures"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Write a seeded synthetic benchmark and its manifest");
  g->add_option("--config", gen.config, "Generator config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Overrides the config seed");

  RunArgs run;
  auto* r = app.add_subcommand("run", "Run the base session and every incremental session");
  r->add_option("--manifest", run.manifest, "Manifest JSON")->required()->check(CLI::ExistingFile);
  r->add_option("--config", run.config, "Session config JSON (defaults if omitted)")->check(CLI::ExistingFile);
  r->add_option("--strategy", run.strategy, "concm | rm | fs | frozen")
      ->check(CLI::IsMember({"concm", "rm", "fs", "frozen"}));
  r->add_option("--seed", run.seed, "Overrides the config seed");
  r->add_option("--out", run.out, "Output directory")->required();

  ReportArgs rep;
  auto* p = app.add_subcommand("report", "Print a run report as a table");
  p->add_option("path", rep.path, "report.json")->required();
  p->add_option("--format", rep.format, "table | json | csv")->check(CLI::IsMember({"table", "json", "csv"}));

  std::string command = "concm";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    error_record(command, "UsageError", e.what(), kValidation);
    return kValidation;
  }

  try {
    if (*g) return command = "gen", cmd_gen(gen);
    if (*r) return command = "run", cmd_run(run);
    return command = "report", cmd_report(rep);
  } catch (const concm::Error& e) {
    const int code = exit_code(e.kind());
    error_record(command, std::string(concm::to_string(e.kind())), e.what(), code);
    return code;
  } catch (const std::exception& e) {
    error_record(command, "Internal", e.what(), kRuntime);
    return kRuntime;
  }
}
