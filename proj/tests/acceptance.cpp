// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "mtt/config.hpp"
#include "mtt/dataset_io.hpp"
#include "mtt/game.hpp"
#include "mtt/generator.hpp"
#include "mtt/image_io.hpp"
#include "mtt/render.hpp"
#include "mtt/shape_lang.hpp"

using namespace mtt;
namespace fs = std::filesystem;

namespace {

struct Failure {
  std::string why;
};

void check(bool ok, const std::string& why) {
  if (!ok) throw Failure{why};
}

std::uint64_t fnv(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

int failures = 0;

void criterion(const std::string& name, double limit_s, const std::function<std::string()>& body) {
  const auto start = std::chrono::steady_clock::now();
  std::string detail;
  bool ok = true;
  try {
    detail = body();
  } catch (const Failure& f) {
    ok = false;
    detail = f.why;
  } catch (const std::exception& e) {
    ok = false;
    detail = std::string("exception: ") + e.what();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (ok && limit_s > 0 && secs > limit_s) {
    ok = false;
    detail += " (took " + std::to_string(secs) + " s, limit " + std::to_string(limit_s) + " s)";
  }
  char t[32];
  std::snprintf(t, sizeof t, "%.2fs", secs);
  std::cout << (ok ? "PASS " : "FAIL ") << name << " [" << t << "]" << (detail.empty() ? "" : ": " + detail) << std::endl;
  failures += ok ? 0 : 1;
}

std::vector<Program> generated_programs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const auto vocab = default_vocabularies().test;
  const auto model = MarkovModel::defaults();
  std::vector<Program> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_program(rng, vocab, model));
  return out;
}

int run(const std::string& cmd) {
  const int status = std::system((cmd + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read_file(e.path());
  }
  return out;
}

std::string parser_conformance() {
  const SceneGraph b = layout(parse_program("B12*12"), ImageShape::square(40));
  check(b.placements.size() == 25 && b.region_boxes.size() == 1, "B12*12 is not 25 glyphs in one region");
  std::set<std::pair<int, int>> cells;
  for (const Placement& p : b.placements) cells.insert({p.row, p.col});
  check(cells.size() == 25 && cells.rbegin()->first == 4 && cells.rbegin()->second == 4, "B12*12 is not a 5x5 grid");

  const SceneGraph s = layout(parse_program("BB11+AB2"), ImageShape::square(40));
  std::map<std::size_t, int> per_region;
  std::map<std::size_t, int> max_col;
  for (const Placement& p : s.placements) {
    ++per_region[p.region];
    max_col[p.region] = std::max(max_col[p.region], p.col);
  }
  check(s.region_boxes.size() == 2 && per_region[0] == 4 && per_region[1] == 2, "BB11+AB2 is not stacks of 4 and 2");
  check(max_col[0] == 0 && max_col[1] == 0, "BB11+AB2 regions are not single columns");
  check(layout(parse_program("C"), ImageShape::square(40)).placements.size() == 1, "C is not one glyph");

  const std::pair<const char*, std::uint64_t> golden[] = {
      {"B12*12", 0x3ab10ea52cbda420ULL}, {"BB11+AB2", 0x883dc36bb220a38cULL}, {"C", 0x64e840c574d372f8ULL}};
  for (const auto& [prog, digest] : golden) {
    check(fnv(encode_pgm(render(prog))) == digest, std::string("PGM digest mismatch for ") + prog);
  }
  return "3 programs, 3 golden PGM digests";
}

std::string trinary() {
  check(parse_trinary("11") == 4, "parse_trinary(\"11\") != 4");
  for (std::uint64_t n = 0; n <= 80; ++n) {
    check(parse_trinary(encode_trinary(n)) == n, "inverse fails at " + std::to_string(n));
  }
  return "inverse holds on [0,80]";
}

std::string fuzz() {
  std::mt19937_64 gen(2024);
  const std::string alphabet = std::string(kAlphabet) + " x9";
  std::size_t accepted = 0;
  for (int i = 0; i < 1000000; ++i) {
    std::string s(gen() % 9, ' ');
    for (char& c : s) c = alphabet[gen() % alphabet.size()];
    try {
      parse_program(s);
      ++accepted;
    } catch (const ParseError&) {
    }
  }
  std::size_t round_trips = 0;
  for (const Program& p : generated_programs(10000, 7)) {
    check(canonicalize(parse_program(p.source)) == p.source, "canonicalize(parse) changed " + p.source);
    ++round_trips;
  }
  return "1000000 strings (" + std::to_string(accepted) + " parsed), " + std::to_string(round_trips) + " round trips";
}

std::string conservation() {
  std::size_t glyphs = 0;
  for (const Program& p : generated_programs(10000, 8)) {
    const SceneGraph g = layout(p, ImageShape::square(40));
    // Recount from the source string: each '+' segment contributes rows*cols.
    std::size_t want = 0;
    std::stringstream ss(p.source);
    for (std::string seg; std::getline(ss, seg, '+');) {
      const auto digits = seg.find_first_of("012*");
      std::string rows = "1", cols = "1";
      if (digits != std::string::npos) {
        const std::string tail = seg.substr(digits);
        const auto star = tail.find('*');
        if (star == std::string::npos) rows = tail;
        else {
          if (star > 0) rows = tail.substr(0, star);
          cols = tail.substr(star + 1);
        }
      }
      want += std::stoull(rows, nullptr, 3) * std::stoull(cols, nullptr, 3);
    }
    check(g.placements.size() == want, "placements != glyph count for " + p.source);
    check(static_cast<std::size_t>(total_glyphs(p)) == want, "total_glyphs disagrees for " + p.source);
    // Pixel recount: each cell holds ink, cells are disjoint, and no ink falls outside a cell.
    const Image img = render(p);
    std::vector<int> owner(img.pixels.size(), -1);
    for (std::size_t i = 0; i < g.placements.size(); ++i) {
      const Placement& c = g.placements[i];
      bool inked = false;
      for (int y = c.y; y < c.y + g.cell; ++y) {
        for (int x = c.x; x < c.x + g.cell; ++x) {
          check(x >= 0 && y >= 0 && x < img.shape.width && y < img.shape.height, "cell off canvas for " + p.source);
          int& o = owner[static_cast<std::size_t>(y * img.shape.width + x)];
          check(o < 0, "overlapping cells for " + p.source);
          o = static_cast<int>(i);
          inked = inked || img.at(y, x) != kBackground;
        }
      }
      check(inked, "empty cell for " + p.source);
    }
    for (std::size_t k = 0; k < img.pixels.size(); ++k) {
      check(img.pixels[k] == kBackground || owner[k] >= 0, "stray ink for " + p.source);
    }
    glyphs += want;
  }
  return "10000 programs, " + std::to_string(glyphs) + " glyphs, pixel recount agrees";
}

std::string determinism() {
  const fs::path root = fs::temp_directory_path() / ("mtt_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  const std::string bin = MTT_BINARY;
  const std::string cfg = std::string(MTT_SOURCE_DIR) + "/configs/default.cfg";
  for (const char* d : {"a", "b"}) {
    check(run(bin + " gen --config " + cfg + " --seed 99 --out " + (root / d).string()) == 0, "gen failed");
    check(run(bin + " render B12*12 --out " + (root / (std::string(d) + ".png")).string()) == 0, "render failed");
  }
  const auto a = tree(root / "a");
  const auto b = tree(root / "b");
  check(!a.empty() && a == b, "gen trees differ");
  check(read_file(root / "a.png") == read_file(root / "b.png"), "render output differs");
  fs::remove_all(root);
  return std::to_string(a.size()) + " files identical";
}

std::string chance_and_oracle() {
  RunConfig c;
  c.seed = 4;
  const auto qs = build_phase_set(c.phase_spec(PhaseKind::Test), c.model);
  const AgentEndpoints random{OracleSpeaker(qs), RandomListener(17), {}, {}};
  int correct = 0, total = 0;
  while (total < 10000) {
    for (const auto& r : run_phase(random, qs, PhaseKind::Test)) {
      correct += r.correct;
      ++total;
    }
  }
  const double acc = static_cast<double>(correct) / total;
  check(std::abs(acc - 0.25) <= 0.03, "random listener accuracy " + std::to_string(acc));

  int oracle_correct = 0, eligible = 0;
  for (PhaseKind k : {PhaseKind::Practice, PhaseKind::Test}) {
    const auto set = build_phase_set(c.phase_spec(k), c.model);
    const AgentEndpoints oracle{OracleSpeaker(set), OracleListener(), {}, {}};
    const auto recs = run_phase(oracle, set, k);
    for (std::size_t i = 0; i < set.size(); ++i) {
      if (canonicalize(set[i].target).size() > kMaxProgramLength) continue;
      ++eligible;
      oracle_correct += recs[i].correct;
    }
  }
  check(eligible > 0 && oracle_correct == eligible,
        "oracle pair " + std::to_string(oracle_correct) + "/" + std::to_string(eligible));
  char buf[128];
  std::snprintf(buf, sizeof buf, "random %.4f over %d trials; oracle %d/%d", acc, total, oracle_correct, eligible);
  return buf;
}

std::string table_schema() {
  const RunConfig c;
  const auto practice = build_phase_set(c.phase_spec(PhaseKind::Practice), c.model);
  const auto test = build_phase_set(c.phase_spec(PhaseKind::Test), c.model);
  check(practice.size() == 100 && test.size() == 100, "default phases are not 100+100");
  const auto counts = count_categories(test);
  check(counts.symbol_only > 0 && counts.number_only > 0 && counts.both > 0, "an OOD category is empty in the test set");

  std::vector<Question> all = practice;
  all.insert(all.end(), test.begin(), test.end());
  const AgentEndpoints a{OracleSpeaker(all), RandomListener(1), {}, {}};
  const std::vector<AccuracyBreakdown> bs = {score(run_phase(a, practice, PhaseKind::Practice)),
                                             score(run_phase(a, test, PhaseKind::Test))};
  const std::vector<std::string> labels = {"run-practice", "run-test"};
  const std::string csv = results_to_string(export_results(bs, labels));

  std::stringstream ss(csv);
  std::string line, header;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(ss, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
    if (header.empty()) header = line;
    else rows.push_back(cells);
  }
  check(header == "label,overall,ood_symbol,ood_number,ood_both,overall_correct,overall_total,ood_symbol_correct,"
                  "ood_symbol_total,ood_number_correct,ood_number_total,ood_both_correct,ood_both_total",
        "unexpected header " + header);
  check(rows.size() == 2, "expected two rows");
  for (const auto& cells : rows) {
    check(cells.size() == 13, "row width");
    for (std::size_t i = 1; i <= 4; ++i) {
      check(cells[i].size() == 6 && cells[i][1] == '.', "accuracy cell '" + cells[i] + "'");
    }
    for (std::size_t i = 5; i < 13; ++i) {
      check(!cells[i].empty() && cells[i].find_first_not_of("0123456789") == std::string::npos,
            "denominator cell '" + cells[i] + "'");
    }
    check(cells[6] == "100", "overall total is not 100");
  }
  return "4 accuracy columns + 8 count columns; test OOD counts " + std::to_string(counts.symbol_only) + "/" +
         std::to_string(counts.number_only) + "/" + std::to_string(counts.both);
}

std::string phase_semantics() {
  const RunConfig c;
  const auto practice = build_phase_set(c.phase_spec(PhaseKind::Practice), c.model);
  const auto test = build_phase_set(c.phase_spec(PhaseKind::Test), c.model);
  std::vector<std::string> events;
  int feedback = 0;
  const AgentEndpoints a{[&](const TrialContext& ctx, const Image&) {
                           events.push_back("S" + ctx.trial_id);
                           return std::string("A");
                         },
                         [&](const TrialContext& ctx, const Message&, std::span<const Image, kCandidates>) {
                           events.push_back("L" + ctx.trial_id);
                           return 0;
                         },
                         [&](const TrialRecord& r) {
                           events.push_back("F" + r.question_id);
                           ++feedback;
                         },
                         {}};
  run_phase(a, practice, PhaseKind::Practice);
  check(feedback == static_cast<int>(practice.size()), "practice feedback count " + std::to_string(feedback));
  check(events.size() == 3 * practice.size(), "practice event count");
  for (std::size_t i = 0; i < practice.size(); ++i) {
    const std::string& id = practice[i].id;
    check(events[3 * i] == "S" + id && events[3 * i + 1] == "L" + id && events[3 * i + 2] == "F" + id,
          "practice trial " + id + " out of order");
  }
  events.clear();
  feedback = 0;
  run_phase(a, test, PhaseKind::Test);
  check(feedback == 0, "feedback delivered during test");
  check(events.size() == 2 * test.size(), "test event count");
  for (std::size_t i = 0; i < test.size(); ++i) {
    check(events[2 * i] == "S" + test[i].id && events[2 * i + 1] == "L" + test[i].id, "test trial out of order");
  }
  return "100 practice feedback events, 0 in test, single ordered pass";
}

std::string aggregation() {
  const std::vector<double> xs = {8, 10};
  const Aggregate a = aggregate(xs);
  check(a.mean == 9.0 && std::abs(a.sd - std::sqrt(2.0)) < 1e-12, "aggregate([8,10]) wrong");

  // Human preset: three simulated pairs, one results table with a (mean, sd) row.
  std::vector<double> scores;
  for (std::uint64_t seed : {1, 2, 3}) {
    RunConfig c = RunConfig::preset("human-10/10");
    c.seed = seed;
    const auto test = build_phase_set(c.phase_spec(PhaseKind::Test), c.model);
    const AgentEndpoints pair{OracleSpeaker(test), RandomListener(seed), {}, {}};
    scores.push_back(score(run_phase(pair, test, PhaseKind::Test)).overall.correct);
  }
  ResultsTable t;
  t.rows.push_back({"human-pairs", AccuracyBreakdown{{1, 1}, {1, 1}, {}, {}, {}}});
  t.aggregates.push_back(aggregate_row("human-test", scores, 10));
  const ResultsTable back = parse_results(results_to_string(t));
  check(back.aggregates.size() == 1 && back.aggregates[0].pairs == 3 && back.aggregates[0].points == 10,
        "aggregate row did not round-trip");
  const std::string line = format_aggregate("human-test", aggregate(scores), 10);
  check(line.find("μ = ") != std::string::npos && line.find("σ = ") != std::string::npos, "format: " + line);
  return line;
}

}  // namespace

int main() {
  criterion("1 parser conformance", 1.0, parser_conformance);
  criterion("2 trinary", 1.0, trinary);
  criterion("3 fuzz", 60.0, fuzz);
  criterion("4 conservation", 120.0, conservation);
  criterion("5 determinism", 0, determinism);
  criterion("6 chance and oracle", 300.0, chance_and_oracle);
  criterion("7 results table schema", 0, table_schema);
  criterion("8 phase semantics", 0, phase_semantics);
  criterion("9 aggregation", 0, aggregation);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
