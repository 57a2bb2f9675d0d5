// mtt: dataset generation, rendering, agent play, scoring and the session
// service.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mtt/agent_process.hpp"
#include "mtt/config.hpp"
#include "mtt/dataset_io.hpp"
#include "mtt/game.hpp"
#include "mtt/generator.hpp"
#include "mtt/image_io.hpp"
#include "mtt/render.hpp"
#include "mtt/session_http.hpp"

namespace fs = std::filesystem;
using namespace mtt;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  std::string format;
};

RunConfig load_config(const Globals& g, const RunConfig& base = {}) {
  RunConfig c = g.config.empty() ? base : load_run_config(g.config, base);
  if (g.seed) c.seed = *g.seed;
  c.validate();
  return c;
}

ImageFormat format_or(const Globals& g, ImageFormat fallback) {
  if (g.format.empty()) return fallback;
  try {
    return image_format_from_string(g.format);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

constexpr PhaseKind kPhases[] = {PhaseKind::Preconditioning, PhaseKind::Practice, PhaseKind::Test};

int cmd_gen(const Globals& g, unsigned threads) {
  const RunConfig c = load_config(g);
  const fs::path out = g.out.empty() ? fs::path("dataset") : fs::path(g.out);
  const ImageFormat format = format_or(g, ImageFormat::Pgm);
  for (PhaseKind k : kPhases) {
    const PhaseSpec spec = c.phase_spec(k);
    const auto qs = build_phase_set(spec, c.model, threads);
    const Manifest m = write_manifest(qs, spec, c.model, out, format);
    const CategoryCounts& n = m.header.counts;
    std::cout << to_string(k) << ": " << qs.size() << " questions (in " << n.in_distribution << ", symbol "
              << n.symbol_only << ", number " << n.number_only << ", both " << n.both << ") -> "
              << (out / manifest_file_name(k)).string() << "\n";
  }
  return 0;
}

int cmd_render(const Globals& g, const std::string& program, int size) {
  if (g.out.empty()) throw UsageError("render needs --out");
  const fs::path out(g.out);
  ImageFormat fallback = out.extension() == ".png" ? ImageFormat::Png : ImageFormat::Pgm;
  const Image img = render(program, RenderConfig{ImageShape::square(size)});
  write_image(out, img, format_or(g, fallback));
  std::cout << canonicalize(parse_program(program)) << " " << img.shape.width << "x" << img.shape.height << " "
            << total_glyphs(parse_program(program)) << " glyphs digest " << digest_hex(image_digest(img)) << " -> "
            << out.string() << "\n";
  return 0;
}

struct PlaySetup {
  std::vector<Question> practice;
  std::vector<Question> test;
};

PlaySetup load_questions(const RunConfig& c, const std::string& dataset) {
  PlaySetup s;
  if (dataset.empty()) {
    s.practice = build_phase_set(c.phase_spec(PhaseKind::Practice), c.model);
    s.test = build_phase_set(c.phase_spec(PhaseKind::Test), c.model);
  } else {
    for (PhaseKind k : {PhaseKind::Practice, PhaseKind::Test}) {
      const fs::path p = fs::path(dataset) / manifest_file_name(k);
      auto qs = questions_from_manifest(read_manifest(p), p);
      (k == PhaseKind::Practice ? s.practice : s.test) = std::move(qs);
    }
  }
  return s;
}

int cmd_play(const Globals& g, const std::string& speaker, const std::string& listener, const std::string& dataset,
             const std::string& label) {
  const RunConfig c = load_config(g);
  const fs::path out = g.out.empty() ? fs::path("run") : fs::path(g.out);
  const PlaySetup qs = load_questions(c, dataset);
  const auto timeout = std::chrono::milliseconds(static_cast<long long>(c.agent_timeout_s * 1000));
  auto spool = std::make_shared<ImageSpool>(out / "spool");

  AgentEndpoints agents;
  if (speaker == "oracle") {
    std::vector<Question> all = qs.practice;
    all.insert(all.end(), qs.test.begin(), qs.test.end());
    agents.speaker = OracleSpeaker(all);
  } else if (speaker == "random") {
    agents.speaker = RandomSpeaker(mix_seed(c.seed, fnv1a("speaker"), 0));
  } else if (speaker.rfind("cmd:", 0) == 0) {
    auto proc = std::make_shared<AgentProcess>(speaker.substr(4), timeout);
    agents.speaker = subprocess_speaker(proc, spool);
    agents.speaker_feedback = subprocess_feedback(proc);
  } else {
    throw UsageError("unknown speaker '" + speaker + "' (oracle, random or cmd:<command>)");
  }
  if (listener == "oracle") {
    agents.listener = OracleListener(RenderConfig{ImageShape::square(c.image_size)});
  } else if (listener == "random") {
    agents.listener = RandomListener(mix_seed(c.seed, fnv1a("listener"), 0));
  } else if (listener.rfind("cmd:", 0) == 0) {
    auto proc = std::make_shared<AgentProcess>(listener.substr(4), timeout);
    agents.listener = subprocess_listener(proc, spool);
    agents.listener_feedback = subprocess_feedback(proc);
  } else {
    throw UsageError("unknown listener '" + listener + "' (oracle, random or cmd:<command>)");
  }

  auto records = run_phase(agents, qs.practice, PhaseKind::Practice);
  const auto test_records = run_phase(agents, qs.test, PhaseKind::Test);
  const std::vector<AccuracyBreakdown> bs = {score(records), score(test_records)};
  records.insert(records.end(), test_records.begin(), test_records.end());
  write_records(out / "records.jsonl", records);

  const std::vector<std::string> labels = {label + "-practice", label + "-test"};
  const ResultsTable table = export_results(bs, labels);
  write_results(out / "results.csv", table);
  std::cout << results_to_string(table);
  return 0;
}

int cmd_score(const Globals& g, const std::vector<std::string>& files, bool with_aggregate) {
  std::vector<AccuracyBreakdown> bs;
  std::vector<std::string> labels;
  std::map<PhaseKind, std::vector<double>> per_pair;
  std::map<PhaseKind, int> points;
  for (const std::string& f : files) {
    const auto records = read_records(f);
    for (PhaseKind k : kPhases) {
      std::vector<TrialRecord> phase;
      for (const TrialRecord& r : records) {
        if (r.phase == k) phase.push_back(r);
      }
      if (phase.empty()) continue;
      const AccuracyBreakdown b = score(phase);
      bs.push_back(b);
      labels.push_back(fs::path(f).stem().string() + "-" + std::string(to_string(k)));
      per_pair[k].push_back(b.overall.correct);
      if (points.count(k) && points[k] != b.overall.total) {
        throw FormatError(f + ": " + std::string(to_string(k)) + " has " + std::to_string(b.overall.total) +
                          " trials, other files have " + std::to_string(points[k]));
      }
      points[k] = b.overall.total;
    }
  }
  if (bs.empty()) throw FormatError("no trials in the given records");

  std::vector<AggregateRow> aggs;
  if (with_aggregate) {
    for (const auto& [k, scores] : per_pair) {
      if (scores.size() < 2) throw UsageError("--aggregate needs at least two records files per phase");
      aggs.push_back(aggregate_row(std::string(to_string(k)), scores, points[k]));
    }
  }
  const ResultsTable table = export_results(bs, labels, aggs);
  if (g.out.empty()) {
    std::cout << results_to_string(table);
  } else {
    write_results(g.out, table);
  }
  for (const AggregateRow& a : aggs) {
    std::cerr << format_aggregate(a.label, Aggregate{a.pairs, a.mean, a.sd}, a.points) << "\n";
  }
  return 0;
}

int cmd_serve(const Globals& g, const std::string& host, std::optional<int> port, const std::string& static_dir,
              int gallery_size) {
  const RunConfig base = load_config(g);
  int p = 8080;
  if (port) {
    p = *port;
  } else if (const char* env = std::getenv("MTT_PORT")) {
    try {
      p = std::stoi(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("MTT_PORT is not a port number: ") + env);
    }
  }
  SessionManager sessions(SessionOptions{gallery_size}, base);
  std::optional<fs::path> export_dir;
  if (!g.out.empty()) export_dir = fs::path(g.out);
  SessionServer server(sessions, export_dir);
  if (!static_dir.empty() && !server.mount_static(static_dir)) throw UsageError("cannot serve static files from " + static_dir);
  std::cout << "listening on " << host << ":" << p << std::endl;
  if (!server.listen(host, p)) throw Error("cannot listen on " + host + ":" + std::to_string(p));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape-language referential game toolkit"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--seed", g.seed, "master seed (overrides the config)");
  app.add_option("--config", g.config, "run config file");
  app.add_option("--out", g.out, "output path");
  app.add_option("--format", g.format, "image format")->check(CLI::IsMember({"pgm", "png"}));

  unsigned threads = 0;
  auto* gen = app.add_subcommand("gen", "build preconditioning, practice and test datasets");
  gen->add_option("--threads", threads, "worker threads (0 = all cores)");

  std::string program;
  int size = 40;
  auto* rnd = app.add_subcommand("render", "render one program to an image file");
  rnd->add_option("program", program, "program string")->required();
  rnd->add_option("--size", size, "canvas size")->check(CLI::IsMember({40, 80}));

  std::string speaker = "oracle", listener = "oracle", dataset, label = "run";
  auto* play = app.add_subcommand("play", "run agents through practice and test");
  play->add_option("--speaker", speaker, "oracle | random | cmd:<command>");
  play->add_option("--listener", listener, "oracle | random | cmd:<command>");
  play->add_option("--dataset", dataset, "directory written by gen (default: generate from the config)");
  play->add_option("--label", label, "row label prefix");

  std::vector<std::string> files;
  bool with_aggregate = false;
  auto* sc = app.add_subcommand("score", "score records files into a results table");
  sc->add_option("records", files, "records files")->required()->check(CLI::ExistingFile);
  sc->add_flag("--aggregate", with_aggregate, "append mean and sample sd across files (one file per pair)");

  std::string host = "0.0.0.0", static_dir;
  std::optional<int> port;
  int gallery_size = 20;
  auto* serve = app.add_subcommand("serve", "start the session service (port from --port or MTT_PORT, default 8080)");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");
  serve->add_option("--static", static_dir, "directory of web client files to serve at /");
  serve->add_option("--gallery-size", gallery_size, "edge-case gallery size");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mtt: usage error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (*gen) return cmd_gen(g, threads);
    if (*rnd) return cmd_render(g, program, size);
    if (*play) return cmd_play(g, speaker, listener, dataset, label);
    if (*sc) return cmd_score(g, files, with_aggregate);
    if (*serve) return cmd_serve(g, host, port, static_dir, gallery_size);
  } catch (const UsageError& e) {
    std::cerr << "mtt: usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "mtt: config error: " << e.what() << "\n";
    return 2;
  } catch (const mtt::ParseError& e) {
    std::cerr << "mtt: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "mtt: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
