#include "cli.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "crosscheck/bench.hpp"
#include "crosscheck/store.hpp"

namespace crosscheck::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

json read_json_file(const fs::path& p, const std::string& what) {
  std::ifstream in(p);
  if (!in) throw ConfigError({"cannot read " + what + " '" + p.string() + "'"});
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError({what + " '" + p.string() + "' is not valid JSON: " + e.what()});
  }
}

json read_jsonl(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw ConfigError({"cannot read queries file '" + p.string() + "'"});
  json out = json::array();
  std::vector<std::string> problems;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      problems.push_back(p.filename().string() + " line " + std::to_string(n) + ": " + e.what());
    }
  }
  if (!problems.empty()) throw ConfigError(std::move(problems));
  return out;
}

bool is_remote(const std::string& s) { return s.find("://") != std::string::npos || s.rfind("data:", 0) == 0; }

std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty() || is_remote(p) || fs::path(p).is_absolute()) return p;
  return (base / p).lexically_normal().string();
}

std::string percent(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
  return buf;
}

std::string fixed4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

void list(std::ostream& err, const std::vector<std::string>& items) {
  constexpr std::size_t kMax = 50;
  for (std::size_t i = 0; i < items.size() && i < kMax; ++i) err << "  - " << items[i] << "\n";
  if (items.size() > kMax) err << "  ... and " << items.size() - kMax << " more\n";
}

struct Session {
  RunConfig cfg;
  bench::Backends backends;
  store::Store store;
  bench::Pipeline pipeline;

  Session(RunConfig c, bench::PipelineOptions opts)
      : cfg(std::move(c)),
        backends(bench::make_backends(cfg)),
        store(cfg.cache_dir),
        pipeline(cfg, backends, store, [&] {
          opts.max_parallel = cfg.max_parallel;
          return opts;
        }()) {}
};

void report_run(const store::BenchmarkRun& run, const RunConfig& cfg, std::ostream& out) {
  store::write_run_artifacts(run, cfg.report_dir);
  out << "measure: " << to_string(run.measure);
  if (run.requested_measure == "auto" && run.avg_selfcheck)
    out << " (auto, average SelfCheck " << percent(*run.avg_selfcheck) << ")";
  out << "\n";
  for (const auto& e : run.ranking) out << "  " << e.rank << ". " << e.model_id << "  " << percent(e.score) << "\n";
  if (!run.refcheck.empty()) {
    out << "RefCheck:";
    for (const auto& [m, c] : run.refcheck) out << " " << m << "=" << percent(c.corpus_score);
    out << "\n";
  }
  const fs::path dir = cfg.report_dir;
  out << "wrote " << (dir / "run.json").string() << " and " << (dir / "leaderboard.md").string() << "\n";
}

int cmd_correlate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const fs::path dir = cfg.report_dir;
  store::BenchmarkRun run;
  try {
    std::ifstream in(dir / "run.json");
    if (!in) throw Error("no run artifact at '" + (dir / "run.json").string() + "'; run score first");
    run = store::run_from_json(json::parse(in));
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCorrelationError;
  }

  bench::Reference ref;
  std::string source;
  try {
    if (!cfg.reference_path.empty()) {
      std::ifstream in(cfg.reference_path);
      if (!in) throw Error("cannot read reference file '" + cfg.reference_path + "'");
      ref = bench::Reference::from_json(json::parse(in));
      source = cfg.reference_path;
    } else if (!run.refcheck.empty()) {
      ref = bench::refcheck_reference(run);
      source = "refcheck";
    } else {
      throw Error("no reference: pass --reference, set \"reference\" in the config, or enable refcheck");
    }
    // A per-query reference also ranks systems by its mean.
    for (const auto& [m, qs] : ref.document)
      if (!ref.system.count(m) && !qs.empty()) {
        double sum = 0;
        for (const auto& [_, v] : qs) sum += v;
        ref.system[m] = sum / static_cast<double>(qs.size());
      }

    json report{{"reference", source}};
    const auto sys = bench::correlate_against_reference(run, ref, bench::CorrelationLevel::system);
    out << "System(rho) = " << fixed4(sys.value) << " over " << sys.n << " targets\n";
    report["system"] = sys.to_json();
    if (!ref.document.empty()) {
      const auto doc = bench::correlate_against_reference(run, ref, bench::CorrelationLevel::document);
      out << "Document(r) = " << fixed4(doc.value) << " over " << doc.n << " (target, query) pairs\n";
      report["document"] = doc.to_json();
    }
    fs::create_directories(dir);
    std::ofstream(dir / "correlation.json") << report.dump(2) << "\n";
    out << "wrote " << (dir / "correlation.json").string() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kCorrelationError;
  }
  return kOk;
}

}  // namespace

RunConfig load_config_file(const fs::path& path, const Overrides& o) {
  const fs::path config_path = fs::absolute(path);
  const fs::path base = config_path.parent_path();
  json raw = read_json_file(config_path, "config file");
  if (!raw.is_object()) throw ConfigError({"configuration root must be a JSON object"});

  fs::path media_base = base;
  if (raw.contains("queries") && raw["queries"].is_string()) {
    const fs::path qpath = resolve(base, raw["queries"].get<std::string>());
    raw["queries"] = read_jsonl(qpath);
    media_base = qpath.parent_path();
  }
  if (raw.contains("queries") && raw["queries"].is_array())
    for (auto& q : raw["queries"])
      if (q.is_object() && q.value("modality", "text") != "text" && q.contains("content") && q["content"].is_string())
        q["content"] = resolve(media_base, q["content"].get<std::string>());
  if (raw.contains("models") && raw["models"].is_array())
    for (auto& m : raw["models"])
      if (m.is_object() && m.contains("backend") && m["backend"].is_object() && m["backend"].contains("fixture") &&
          m["backend"]["fixture"].is_string())
        m["backend"]["fixture"] = resolve(base, m["backend"]["fixture"].get<std::string>());
  for (const auto* key : {"cache_dir", "report_dir", "reference"})
    if (raw.contains(key) && raw[key].is_string()) raw[key] = resolve(base, raw[key].get<std::string>());
  if (!raw.contains("cache_dir")) raw["cache_dir"] = (base / "cache").string();
  if (!raw.contains("report_dir")) raw["report_dir"] = (base / "report").string();

  // Command-line paths are relative to the working directory.
  if (o.measure) raw["measure"] = *o.measure;
  if (o.cache_dir) raw["cache_dir"] = fs::absolute(*o.cache_dir).string();
  if (o.report_dir) raw["report_dir"] = fs::absolute(*o.report_dir).string();
  if (o.reference) raw["reference"] = fs::absolute(*o.reference).string();
  if (o.max_parallel) raw["max_parallel"] = *o.max_parallel;
  if (o.seed) raw["seed"] = *o.seed;
  return load_config(raw);
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"crosscheck: reference-free hallucination benchmarking"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides o;
  bool verbose = false;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "Run configuration (JSON)")->required();
    sub->add_option("--measure", o.measure, "explicit, implicit or auto")
        ->check(CLI::IsMember({"explicit", "implicit", "auto"}));
    sub->add_option("--cache-dir", o.cache_dir, "Artifact cache directory");
    sub->add_option("--max-parallel", o.max_parallel, "Concurrent backend calls")->check(CLI::PositiveNumber);
    sub->add_option("--seed", o.seed, "Seed for sampling and the planted world");
    sub->add_option("--report-dir", o.report_dir, "Where run.json and leaderboard.md go");
    sub->add_flag("-v,--verbose", verbose, "Log stage progress to stderr");
  };
  auto* gen = app.add_subcommand("generate", "Generate target responses and evidence passages");
  auto* judge = app.add_subcommand("judge", "Judge every sentence against its evidence");
  auto* score = app.add_subcommand("score", "Score, rank and write the report from cached artifacts");
  auto* corr = app.add_subcommand("correlate", "Correlate a scored run with a reference ranking");
  auto* run = app.add_subcommand("run", "generate + judge + score");
  for (auto* s : {gen, judge, score, corr, run}) common(s);
  corr->add_option("--reference", o.reference, "Reference scores file (JSON)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  RunConfig cfg;
  try {
    cfg = load_config_file(config_path, o);
  } catch (const ConfigError& e) {
    err << "config error:\n";
    list(err, e.problems());
    return kConfigError;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  if (corr->parsed()) return cmd_correlate(cfg, out, err);

  bench::PipelineOptions opts;
  if (verbose) opts.log = [&err](const std::string& m) { err << m << "\n"; };
  std::unique_ptr<Session> s;
  try {
    s = std::make_unique<Session>(std::move(cfg), opts);
  } catch (const ConfigError& e) {
    err << "config error:\n";
    list(err, e.problems());
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  int failure_code = kIncomplete;
  try {
    if (gen->parsed()) {
      failure_code = kGenerationError;
      const auto r = s->pipeline.generate();
      out << "generate: " << r.computed << " generated, " << r.cached << " already cached\n";
    } else if (judge->parsed()) {
      const auto r = s->pipeline.judge();
      const double rate = r.verdicts ? static_cast<double>(r.unparseable) / r.verdicts : 0.0;
      out << "judge: " << r.verdicts << " verdicts, " << r.unparseable << " unparseable (" << percent(rate) << "); "
          << r.computed << " computed, " << r.cached << " already cached\n";
    } else if (score->parsed()) {
      report_run(s->pipeline.score(), s->cfg, out);
    } else {
      report_run(s->pipeline.run(), s->cfg, out);
    }
  } catch (const bench::GenerationError& e) {
    err << "error: " << e.what() << "\n";
    list(err, e.failures());
    return kGenerationError;
  } catch (const IncompleteError& e) {
    err << "error: " << e.what() << "\n";  // already lists the first gaps
    return kIncomplete;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return failure_code;
  }
  return kOk;
}

}  // namespace crosscheck::cli
