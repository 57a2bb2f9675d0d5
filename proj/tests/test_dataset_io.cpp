#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include <unistd.h>

#include "mtt/config.hpp"
#include "mtt/dataset_io.hpp"
#include "mtt/game.hpp"

using namespace mtt;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mtt_dataset_" + std::to_string(::getpid())) / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct Built {
  RunConfig config;
  PhaseSpec spec;
  std::vector<Question> questions;
};

const Built& built() {
  static const Built b = [] {
    RunConfig c;
    c.seed = 31;
    c.test_questions = 24;
    const PhaseSpec s = c.phase_spec(PhaseKind::Test);
    return Built{c, s, build_phase_set(s, c.model)};
  }();
  return b;
}

std::string slurp(const fs::path& p) { return read_file(p); }

void replace_in_file(const fs::path& p, const std::string& from, const std::string& to) {
  std::string s = slurp(p);
  const auto at = s.find(from);
  ASSERT_NE(at, std::string::npos);
  s.replace(at, from.size(), to);
  write_file(p, s);
}

}  // namespace

TEST(Manifest, RoundTripsThroughDisk) {
  const auto& b = built();
  for (ImageFormat f : {ImageFormat::Pgm, ImageFormat::Png}) {
    const fs::path dir = scratch_dir(std::string("rt_") + std::string(extension(f)).substr(1));
    const Manifest written = write_manifest(b.questions, b.spec, b.config.model, dir, f);
    const Manifest read = read_manifest(dir / "test.jsonl");
    EXPECT_EQ(read, written);
    EXPECT_EQ(read.header.n_questions, 24);
    EXPECT_EQ(read.header.counts, count_categories(b.questions));
    EXPECT_EQ(read.header.image_format, f);
    EXPECT_EQ(read.rows[0].target_image, "images/test/" + b.questions[0].id + "_target" + std::string(extension(f)));

    const auto qs = questions_from_manifest(read, dir / "test.jsonl");
    ASSERT_EQ(qs.size(), b.questions.size());
    for (std::size_t i = 0; i < qs.size(); ++i) {
      EXPECT_EQ(qs[i].id, b.questions[i].id);
      EXPECT_EQ(qs[i].target, b.questions[i].target);
      EXPECT_EQ(qs[i].correct_index, b.questions[i].correct_index);
      EXPECT_EQ(qs[i].tags, b.questions[i].tags);
      for (std::size_t k = 0; k < kCandidates; ++k) EXPECT_EQ(qs[i].candidates[k].pixels, b.questions[i].candidates[k].pixels);
    }
  }
}

TEST(Manifest, HeaderFields) {
  const auto& b = built();
  const fs::path dir = scratch_dir("header");
  write_manifest(b.questions, b.spec, b.config.model, dir);
  std::ifstream in(dir / "test.jsonl");
  std::string first;
  std::getline(in, first);
  const auto h = nlohmann::json::parse(first);
  EXPECT_EQ(h["format"], "mtt-manifest");
  EXPECT_EQ(h["version"], 1);
  EXPECT_EQ(h["phase"], "test");
  EXPECT_EQ(h["seed"], 31);
  EXPECT_EQ(h["ood_columns"], "disjoint: symbol_only, number_only, both");
  EXPECT_EQ(h["image_format"], "pgm");
  EXPECT_EQ(h["image_size"], 40);
  EXPECT_EQ(h["spec_digest"].get<std::string>().size(), 16u);
  std::string row;
  std::getline(in, row);
  const auto r = nlohmann::json::parse(row);
  for (const char* key : {"id", "phase", "program", "candidate_programs", "novel_symbol", "novel_number", "target_image",
                          "target_digest", "candidate_images", "candidate_digests", "correct_index"}) {
    EXPECT_TRUE(r.contains(key)) << key;
  }
}

TEST(Manifest, WritesAreByteIdentical) {
  const auto& b = built();
  const fs::path a = scratch_dir("same_a");
  const fs::path c = scratch_dir("same_b");
  write_manifest(b.questions, b.spec, b.config.model, a, ImageFormat::Png);
  write_manifest(b.questions, b.spec, b.config.model, c, ImageFormat::Png);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(c / fs::relative(e.path(), a))) << e.path();
  }
  EXPECT_EQ(files, 1u + 24u * 5u);
}

TEST(Manifest, SpecDigestTracksTheConfiguration) {
  const auto& b = built();
  RunConfig other = b.config;
  other.model.at(ChainState::Shape, ChainState::End) = 0.20;
  other.model.at(ChainState::Shape, ChainState::Number) = 0.40;
  EXPECT_NE(fnv1a(b.spec.describe(b.config.model)), fnv1a(b.spec.describe(other.model)));
  EXPECT_EQ(fnv1a(b.spec.describe(b.config.model)), fnv1a(b.config.phase_spec(PhaseKind::Test).describe(b.config.model)));
}

TEST(Manifest, DetectsTampering) {
  const auto& b = built();
  const fs::path dir = scratch_dir("tamper");
  const Manifest m = write_manifest(b.questions, b.spec, b.config.model, dir);
  const fs::path mf = dir / "test.jsonl";

  // Overwrite one candidate image with another question's target.
  const fs::path victim = dir / m.rows[2].candidate_images[1];
  const std::string saved = slurp(victim);
  fs::copy_file(dir / m.rows[3].target_image, victim, fs::copy_options::overwrite_existing);
  EXPECT_THROW(read_manifest(mf), FormatError);
  EXPECT_NO_THROW(read_manifest(mf, false));
  write_file(victim, saved);
  EXPECT_NO_THROW(read_manifest(mf));

  fs::remove(victim);
  EXPECT_THROW(read_manifest(mf), FormatError);
  write_file(victim, saved);

  replace_in_file(mf, "\"version\":1", "\"version\":2");
  EXPECT_THROW(read_manifest(mf), FormatError);
  replace_in_file(mf, "\"version\":2", "\"version\":1");

  replace_in_file(mf, "\"n_questions\":24", "\"n_questions\":25");
  EXPECT_THROW(read_manifest(mf), FormatError);
  replace_in_file(mf, "\"n_questions\":25", "\"n_questions\":24");

  // Moving the answer key breaks the target/correct-candidate link.
  const int ci = m.rows[0].correct_index;
  replace_in_file(mf, "\"correct_index\":" + std::to_string(ci), "\"correct_index\":" + std::to_string((ci + 1) % 4));
  EXPECT_THROW(read_manifest(mf), FormatError);

  EXPECT_THROW(read_manifest(dir / "missing.jsonl"), FormatError);
  write_file(dir / "junk.jsonl", "{not json\n");
  EXPECT_THROW(read_manifest(dir / "junk.jsonl"), FormatError);
}

TEST(Manifest, StoredAnswerKeyMatchesAnIndependentTally) {
  // The correct candidate is the one whose image re-renders from the row's
  // program; exactly one candidate does.
  const auto& b = built();
  const fs::path dir = scratch_dir("key");
  write_manifest(b.questions, b.spec, b.config.model, dir);
  const Manifest m = read_manifest(dir / "test.jsonl");
  for (const ManifestRow& r : m.rows) {
    const Image want = render(r.program);
    int hits = 0, at = -1;
    for (std::size_t k = 0; k < kCandidates; ++k) {
      if (read_image(dir / r.candidate_images[k]).pixels == want.pixels) {
        ++hits;
        at = static_cast<int>(k);
      }
    }
    EXPECT_EQ(hits, 1) << r.id;
    EXPECT_EQ(at, r.correct_index) << r.id;
    EXPECT_EQ(r.candidate_programs[static_cast<std::size_t>(r.correct_index)], r.program);
  }
}

TEST(Records, RoundTrip) {
  const auto& b = built();
  const AgentEndpoints a{OracleSpeaker(b.questions), RandomListener(4), {}, {}};
  auto recs = run_phase(a, b.questions, PhaseKind::Test);
  recs[0].message = "ABCABC012";
  recs[0].chosen = -1;
  recs[0].correct = false;
  recs[0].note = "invalid message: length 9 > 8";
  const fs::path dir = scratch_dir("records");
  write_records(dir / "records.jsonl", recs);
  EXPECT_EQ(read_records(dir / "records.jsonl"), recs);
  EXPECT_EQ(slurp(dir / "records.jsonl").substr(0, 37), "{\"format\":\"mtt-records\",\"version\":1}\n");
}

TEST(Records, RejectsInconsistentRows) {
  const fs::path dir = scratch_dir("bad_records");
  write_file(dir / "r.jsonl",
             "{\"format\":\"mtt-records\",\"version\":1}\n"
             "{\"question_id\":\"test-0000\",\"phase\":\"test\",\"message\":\"A\",\"chosen\":1,\"correct_index\":2,"
             "\"correct\":true,\"novel_symbol\":false,\"novel_number\":false,\"note\":\"\"}\n");
  EXPECT_THROW(read_records(dir / "r.jsonl"), FormatError);
  write_file(dir / "v.jsonl", "{\"format\":\"mtt-records\",\"version\":9}\n");
  EXPECT_THROW(read_records(dir / "v.jsonl"), FormatError);
  write_file(dir / "m.jsonl", "{\"format\":\"mtt-manifest\",\"version\":1}\n");
  EXPECT_THROW(read_records(dir / "m.jsonl"), FormatError);
}

TEST(Results, AllCorrectRowHasFourOnesAndIntegerDenominators) {
  const auto& b = built();
  const AgentEndpoints a{OracleSpeaker(b.questions), OracleListener(), {}, {}};
  const auto breakdown = score(run_phase(a, b.questions, PhaseKind::Test));
  const std::vector<AccuracyBreakdown> bs = {breakdown};
  const std::vector<std::string> labels = {"oracle"};
  const std::string csv = results_to_string(export_results(bs, labels));
  std::vector<std::string> lines;
  for (std::size_t s = 0, e; s < csv.size(); s = e + 1) {
    e = csv.find('\n', s);
    lines.push_back(csv.substr(s, e - s));
  }
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "# mtt-results v1; OOD columns are disjoint: symbol_only, number_only, both");
  EXPECT_EQ(lines[1], kResultsHeader);
  const auto c = count_categories(b.questions);
  EXPECT_EQ(lines[2], "oracle,1.0000,1.0000,1.0000,1.0000,24,24," + std::to_string(c.symbol_only) + "," +
                          std::to_string(c.symbol_only) + "," + std::to_string(c.number_only) + "," +
                          std::to_string(c.number_only) + "," + std::to_string(c.both) + "," + std::to_string(c.both));
}

TEST(Results, EmptyBucketIsMarkedNotApplicable) {
  AccuracyBreakdown b;
  b.overall = {3, 4};
  b.in_distribution = {1, 2};
  b.ood_symbol_only = {2, 2};
  const std::vector<AccuracyBreakdown> bs = {b};
  const std::vector<std::string> labels = {"x"};
  const std::string csv = results_to_string(export_results(bs, labels));
  EXPECT_NE(csv.find("x,0.7500,1.0000,n/a (0/0),n/a (0/0),3,4,2,2,0,0,0,0\n"), std::string::npos) << csv;
  EXPECT_EQ(parse_results(csv).rows[0].breakdown, b);
}

TEST(Results, RoundTripIncludingAggregatesExactly) {
  Rng r(12);
  ResultsTable t;
  for (int i = 0; i < 20; ++i) {
    AccuracyBreakdown b;
    for (Bucket* k : {&b.in_distribution, &b.ood_symbol_only, &b.ood_number_only, &b.ood_both}) {
      k->total = static_cast<int>(r.below(30));
      k->correct = static_cast<int>(r.below(static_cast<std::uint64_t>(k->total) + 1));
      b.overall.total += k->total;
      b.overall.correct += k->correct;
    }
    if (b.overall.total == 0) continue;
    t.rows.push_back({"pair-" + std::to_string(i), b});
  }
  const std::vector<double> scores = {0.1, 0.7, 1.0 / 3.0};
  t.aggregates.push_back(aggregate_row("humans", scores, 10));
  t.aggregates.push_back(aggregate_row("models", std::vector<double>{8, 10}, 100));
  const ResultsTable back = parse_results(results_to_string(t));
  EXPECT_EQ(back, t);
  EXPECT_EQ(back.aggregates[1].mean, 9.0);
  EXPECT_EQ(back.aggregates[1].sd, std::sqrt(2.0));
}

TEST(Results, Errors) {
  const std::vector<AccuracyBreakdown> one(1, AccuracyBreakdown{{1, 1}, {1, 1}, {}, {}, {}});
  for (const char* bad : {"a,b", "", "#x", "a\nb"}) {
    const std::vector<std::string> labels = {bad};
    EXPECT_THROW(results_to_string(export_results(one, labels)), FormatError) << bad;
  }
  EXPECT_THROW(export_results({}, {}), std::invalid_argument);
  const std::vector<std::string> two = {"a", "b"};
  EXPECT_THROW(export_results(one, two), std::invalid_argument);

  const std::string head = std::string(kResultsHeader) + "\n";
  EXPECT_THROW(parse_results(head), FormatError);
  EXPECT_THROW(parse_results("x,1\n"), FormatError);
  EXPECT_THROW(parse_results(head + "x,1.0000,n/a (0/0),n/a (0/0),n/a (0/0),1,1,0,0,0,0\n"), FormatError);
  EXPECT_THROW(parse_results(head + "x,0.5000,n/a (0/0),n/a (0/0),n/a (0/0),1,1,0,0,0,0,0,0\n"), FormatError);
  EXPECT_THROW(parse_results(head + "x,1.0000,1.0000,n/a (0/0),n/a (0/0),1,1,2,2,0,0,0,0\n"), FormatError);
  EXPECT_NO_THROW(parse_results(head + "x,1.0000,n/a (0/0),n/a (0/0),n/a (0/0),1,1,0,0,0,0,0,0\n"));
}
