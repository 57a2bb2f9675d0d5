#pragma once

// On-disk formats.
//
// Manifest (<phase>.jsonl): one JSON header line, then one line per question.
// Keys are sorted, files end with a newline, and images are separate files
// referenced by paths relative to the manifest. Every image digest is
// recorded and checked on read.
//
// Records (*.jsonl): one JSON header line, then one line per trial.
//
// Results (*.csv): the four accuracy columns (overall, OOD symbol, OOD
// number, OOD both) with correct/total counts, optionally followed by an
// aggregate block of per-pair mean and sample standard deviation.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "mtt/error.hpp"
#include "mtt/game.hpp"
#include "mtt/generator.hpp"
#include "mtt/image_io.hpp"

namespace mtt {

using nlohmann::json;

inline constexpr int kFormatVersion = 1;
inline constexpr std::string_view kOodConvention = "disjoint: symbol_only, number_only, both";

// ---------------------------------------------------------------------------
// manifest

struct ManifestHeader {
  int version = kFormatVersion;
  PhaseKind phase = PhaseKind::Practice;
  std::uint64_t seed = 0;
  std::string spec_digest;
  std::string ood_columns = std::string(kOodConvention);
  int n_questions = 0;
  CategoryCounts counts;
  ImageFormat image_format = ImageFormat::Pgm;
  int image_size = 40;

  friend bool operator==(const ManifestHeader&, const ManifestHeader&) = default;
};

struct ManifestRow {
  std::string id;
  PhaseKind phase = PhaseKind::Practice;
  std::string program;
  std::array<std::string, kCandidates> candidate_programs;
  OODTags tags;
  std::string target_image;
  std::string target_digest;
  std::array<std::string, kCandidates> candidate_images;
  std::array<std::string, kCandidates> candidate_digests;
  int correct_index = 0;

  friend bool operator==(const ManifestRow&, const ManifestRow&) = default;
};

struct Manifest {
  ManifestHeader header;
  std::vector<ManifestRow> rows;

  friend bool operator==(const Manifest&, const Manifest&) = default;
};

namespace detail {

inline std::string format_name(ImageFormat f) { return f == ImageFormat::Pgm ? "pgm" : "png"; }

inline json counts_json(const CategoryCounts& c) {
  return {{"in_distribution", c.in_distribution},
          {"symbol_only", c.symbol_only},
          {"number_only", c.number_only},
          {"both", c.both}};
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) lines.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  return lines;
}

inline json parse_line(const std::string& line, const std::filesystem::path& path, std::size_t n) {
  try {
    return json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ":" + std::to_string(n) + ": " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(where + ": bad field '" + key + "'");
  }
}

}  // namespace detail

inline std::string manifest_file_name(PhaseKind k) { return std::string(to_string(k)) + ".jsonl"; }

inline std::string manifest_to_string(const Manifest& m) {
  const ManifestHeader& h = m.header;
  std::string out = json{{"format", "mtt-manifest"},
                         {"version", h.version},
                         {"phase", to_string(h.phase)},
                         {"seed", h.seed},
                         {"spec_digest", h.spec_digest},
                         {"ood_columns", h.ood_columns},
                         {"n_questions", h.n_questions},
                         {"category_counts", detail::counts_json(h.counts)},
                         {"image_format", detail::format_name(h.image_format)},
                         {"image_size", h.image_size}}
                        .dump() +
                    "\n";
  for (const ManifestRow& r : m.rows) {
    out += json{{"id", r.id},
                {"phase", to_string(r.phase)},
                {"program", r.program},
                {"candidate_programs", r.candidate_programs},
                {"novel_symbol", r.tags.novel_symbol},
                {"novel_number", r.tags.novel_number},
                {"target_image", r.target_image},
                {"target_digest", r.target_digest},
                {"candidate_images", r.candidate_images},
                {"candidate_digests", r.candidate_digests},
                {"correct_index", r.correct_index}}
               .dump() +
           "\n";
  }
  return out;
}

// Writes images under <dir>/images/<phase>/ and the manifest at
// <dir>/<phase>.jsonl. Returns the manifest as written.
inline Manifest write_manifest(const std::vector<Question>& questions, const PhaseSpec& spec, const MarkovModel& model,
                               const std::filesystem::path& dir, ImageFormat format = ImageFormat::Pgm) {
  Manifest m;
  m.header.phase = spec.kind;
  m.header.seed = spec.seed;
  m.header.spec_digest = digest_hex(fnv1a(spec.describe(model)));
  m.header.n_questions = static_cast<int>(questions.size());
  m.header.counts = count_categories(questions);
  m.header.image_format = format;
  m.header.image_size = spec.image.width;

  const std::string rel_dir = "images/" + std::string(to_string(spec.kind)) + "/";
  for (const Question& q : questions) {
    ManifestRow r;
    r.id = q.id;
    r.phase = q.phase;
    r.program = canonicalize(q.target);
    r.tags = q.tags;
    r.correct_index = q.correct_index;
    r.target_image = rel_dir + q.id + "_target" + std::string(extension(format));
    r.target_digest = digest_hex(image_digest(q.target_image()));
    write_image(dir / r.target_image, q.target_image(), format);
    for (std::size_t i = 0; i < kCandidates; ++i) {
      r.candidate_programs[i] = canonicalize(q.candidate_programs[i]);
      r.candidate_images[i] = rel_dir + q.id + "_c" + std::to_string(i) + std::string(extension(format));
      r.candidate_digests[i] = digest_hex(image_digest(q.candidates[i]));
      write_image(dir / r.candidate_images[i], q.candidates[i], format);
    }
    m.rows.push_back(std::move(r));
  }
  write_file(dir / manifest_file_name(spec.kind), manifest_to_string(m));
  return m;
}

// Parses and verifies a manifest: format version, row count, and that every
// referenced image exists and matches its recorded digest.
inline Manifest read_manifest(const std::filesystem::path& path, bool verify_images = true) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw FormatError(path.string() + ": empty manifest");
  const json h = detail::parse_line(lines[0], path, 1);
  const std::string where = path.string() + ":1";
  if (detail::field<std::string>(h, "format", where) != "mtt-manifest") throw FormatError(where + ": not a manifest");
  Manifest m;
  m.header.version = detail::field<int>(h, "version", where);
  if (m.header.version != kFormatVersion) {
    throw FormatError(where + ": unknown format version " + std::to_string(m.header.version));
  }
  m.header.phase = phase_from_string(detail::field<std::string>(h, "phase", where));
  m.header.seed = detail::field<std::uint64_t>(h, "seed", where);
  m.header.spec_digest = detail::field<std::string>(h, "spec_digest", where);
  m.header.ood_columns = detail::field<std::string>(h, "ood_columns", where);
  m.header.n_questions = detail::field<int>(h, "n_questions", where);
  const json counts = detail::field<json>(h, "category_counts", where);
  m.header.counts = {detail::field<int>(counts, "in_distribution", where), detail::field<int>(counts, "symbol_only", where),
                     detail::field<int>(counts, "number_only", where), detail::field<int>(counts, "both", where)};
  m.header.image_format = image_format_from_string(detail::field<std::string>(h, "image_format", where));
  m.header.image_size = detail::field<int>(h, "image_size", where);

  const auto base = path.parent_path();
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const json j = detail::parse_line(lines[n], path, n + 1);
    const std::string w = path.string() + ":" + std::to_string(n + 1);
    ManifestRow r;
    r.id = detail::field<std::string>(j, "id", w);
    r.phase = phase_from_string(detail::field<std::string>(j, "phase", w));
    r.program = detail::field<std::string>(j, "program", w);
    r.candidate_programs = detail::field<std::array<std::string, kCandidates>>(j, "candidate_programs", w);
    r.tags.novel_symbol = detail::field<bool>(j, "novel_symbol", w);
    r.tags.novel_number = detail::field<bool>(j, "novel_number", w);
    r.target_image = detail::field<std::string>(j, "target_image", w);
    r.target_digest = detail::field<std::string>(j, "target_digest", w);
    r.candidate_images = detail::field<std::array<std::string, kCandidates>>(j, "candidate_images", w);
    r.candidate_digests = detail::field<std::array<std::string, kCandidates>>(j, "candidate_digests", w);
    r.correct_index = detail::field<int>(j, "correct_index", w);
    if (r.correct_index < 0 || r.correct_index >= static_cast<int>(kCandidates)) {
      throw FormatError(w + ": correct_index out of range");
    }
    if (r.target_digest != r.candidate_digests[static_cast<std::size_t>(r.correct_index)]) {
      throw FormatError(w + ": target digest differs from the correct candidate");
    }
    if (verify_images) {
      auto check = [&](const std::string& rel, const std::string& digest) {
        const auto p = base / rel;
        if (!std::filesystem::exists(p)) throw FormatError(w + ": missing image " + p.string());
        if (digest_hex(image_digest(read_image(p))) != digest) {
          throw FormatError(w + ": digest mismatch for " + p.string());
        }
      };
      check(r.target_image, r.target_digest);
      for (std::size_t i = 0; i < kCandidates; ++i) check(r.candidate_images[i], r.candidate_digests[i]);
    }
    m.rows.push_back(std::move(r));
  }
  if (static_cast<int>(m.rows.size()) != m.header.n_questions) {
    throw FormatError(path.string() + ": header says " + std::to_string(m.header.n_questions) + " questions, found " +
                      std::to_string(m.rows.size()));
  }
  return m;
}

// Rebuilds in-memory questions from a verified manifest.
inline std::vector<Question> questions_from_manifest(const Manifest& m, const std::filesystem::path& manifest_path) {
  const auto base = manifest_path.parent_path();
  std::vector<Question> out;
  for (const ManifestRow& r : m.rows) {
    Question q;
    q.id = r.id;
    q.phase = r.phase;
    q.target = parse_program(r.program);
    q.correct_index = r.correct_index;
    q.tags = r.tags;
    for (std::size_t i = 0; i < kCandidates; ++i) {
      q.candidate_programs[i] = parse_program(r.candidate_programs[i]);
      q.candidates[i] = read_image(base / r.candidate_images[i]);
    }
    out.push_back(std::move(q));
  }
  return out;
}

// ---------------------------------------------------------------------------
// records

inline std::string records_to_string(const std::vector<TrialRecord>& records) {
  std::string out = json{{"format", "mtt-records"}, {"version", kFormatVersion}}.dump() + "\n";
  for (const TrialRecord& r : records) {
    out += json{{"question_id", r.question_id},
                {"phase", to_string(r.phase)},
                {"message", r.message},
                {"chosen", r.chosen},
                {"correct_index", r.correct_index},
                {"correct", r.correct},
                {"novel_symbol", r.tags.novel_symbol},
                {"novel_number", r.tags.novel_number},
                {"note", r.note}}
               .dump() +
           "\n";
  }
  return out;
}

inline void write_records(const std::filesystem::path& path, const std::vector<TrialRecord>& records) {
  write_file(path, records_to_string(records));
}

inline std::vector<TrialRecord> read_records(const std::filesystem::path& path) {
  const auto lines = detail::read_lines(path);
  if (lines.empty()) throw FormatError(path.string() + ": empty records file");
  const json h = detail::parse_line(lines[0], path, 1);
  const std::string where = path.string() + ":1";
  if (detail::field<std::string>(h, "format", where) != "mtt-records") throw FormatError(where + ": not a records file");
  if (detail::field<int>(h, "version", where) != kFormatVersion) throw FormatError(where + ": unknown format version");
  std::vector<TrialRecord> out;
  for (std::size_t n = 1; n < lines.size(); ++n) {
    const json j = detail::parse_line(lines[n], path, n + 1);
    const std::string w = path.string() + ":" + std::to_string(n + 1);
    TrialRecord r;
    r.question_id = detail::field<std::string>(j, "question_id", w);
    r.phase = phase_from_string(detail::field<std::string>(j, "phase", w));
    r.message = detail::field<std::string>(j, "message", w);
    r.chosen = detail::field<int>(j, "chosen", w);
    r.correct_index = detail::field<int>(j, "correct_index", w);
    r.correct = detail::field<bool>(j, "correct", w);
    r.tags.novel_symbol = detail::field<bool>(j, "novel_symbol", w);
    r.tags.novel_number = detail::field<bool>(j, "novel_number", w);
    r.note = detail::field<std::string>(j, "note", w);
    if (r.correct != (r.chosen == r.correct_index)) throw FormatError(w + ": 'correct' disagrees with chosen/correct_index");
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// results

struct ResultsRow {
  std::string label;
  AccuracyBreakdown breakdown;
  friend bool operator==(const ResultsRow&, const ResultsRow&) = default;
};

struct AggregateRow {
  std::string label;
  std::size_t pairs = 0;
  int points = 0;
  double mean = 0;
  double sd = 0;
  friend bool operator==(const AggregateRow&, const AggregateRow&) = default;
};

struct ResultsTable {
  std::vector<ResultsRow> rows;
  std::vector<AggregateRow> aggregates;
  friend bool operator==(const ResultsTable&, const ResultsTable&) = default;
};

inline constexpr std::string_view kResultsHeader =
    "label,overall,ood_symbol,ood_number,ood_both,"
    "overall_correct,overall_total,ood_symbol_correct,ood_symbol_total,"
    "ood_number_correct,ood_number_total,ood_both_correct,ood_both_total";
inline constexpr std::string_view kAggregateHeader = "aggregate_label,pairs,points,mean,sd";

namespace detail {

inline std::string accuracy_cell(const Bucket& b) {
  const auto acc = b.accuracy();
  if (!acc) return "n/a (0/0)";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", *acc);
  return buf;
}

inline std::string exact_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void check_label(const std::string& label) {
  if (label.empty() || label.find_first_of(",\n\r") != std::string::npos || label.front() == '#') {
    throw FormatError("results label must be nonempty, not start with '#', and contain no commas or newlines: '" +
                      label + "'");
  }
}

inline std::vector<std::string> split_csv(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t end = line.find(',', start);
    out.emplace_back(line.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

}  // namespace detail

inline std::string results_to_string(const ResultsTable& t) {
  std::string out = "# mtt-results v1; OOD columns are " + std::string(kOodConvention) + "\n";
  out += std::string(kResultsHeader) + "\n";
  for (const ResultsRow& r : t.rows) {
    detail::check_label(r.label);
    const AccuracyBreakdown& b = r.breakdown;
    out += r.label;
    for (const Bucket* k : {&b.overall, &b.ood_symbol_only, &b.ood_number_only, &b.ood_both}) {
      out += "," + detail::accuracy_cell(*k);
    }
    for (const Bucket* k : {&b.overall, &b.ood_symbol_only, &b.ood_number_only, &b.ood_both}) {
      out += "," + std::to_string(k->correct) + "," + std::to_string(k->total);
    }
    out += "\n";
  }
  if (!t.aggregates.empty()) {
    out += "# per-pair scores: mean and sample standard deviation (n-1)\n";
    out += std::string(kAggregateHeader) + "\n";
    for (const AggregateRow& a : t.aggregates) {
      detail::check_label(a.label);
      out += a.label + "," + std::to_string(a.pairs) + "," + std::to_string(a.points) + "," +
             detail::exact_double(a.mean) + "," + detail::exact_double(a.sd) + "\n";
    }
  }
  return out;
}

inline ResultsTable export_results(std::span<const AccuracyBreakdown> breakdowns, std::span<const std::string> labels,
                                   std::vector<AggregateRow> aggregates = {}) {
  if (breakdowns.empty()) throw std::invalid_argument("export_results: no breakdowns");
  if (breakdowns.size() != labels.size()) throw std::invalid_argument("export_results: one label per breakdown");
  ResultsTable t;
  for (std::size_t i = 0; i < breakdowns.size(); ++i) t.rows.push_back({labels[i], breakdowns[i]});
  t.aggregates = std::move(aggregates);
  return t;
}

inline ResultsTable parse_results(std::string_view text) {
  ResultsTable t;
  enum class Section { None, Rows, Aggregates } section = Section::None;
  std::size_t start = 0;
  std::size_t n = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    const std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++n;
    const std::string where = "results line " + std::to_string(n);
    if (line.empty() || line.front() == '#') continue;
    if (line == kResultsHeader) {
      section = Section::Rows;
      continue;
    }
    if (line == kAggregateHeader) {
      section = Section::Aggregates;
      continue;
    }
    const auto cells = detail::split_csv(line);
    auto to_int = [&](const std::string& s) {
      int v = 0;
      const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc() || p != s.data() + s.size() || v < 0) throw FormatError(where + ": bad integer '" + s + "'");
      return v;
    };
    if (section == Section::Rows) {
      if (cells.size() != 13) throw FormatError(where + ": expected 13 columns");
      ResultsRow r;
      r.label = cells[0];
      AccuracyBreakdown& b = r.breakdown;
      Bucket* buckets[] = {&b.overall, &b.ood_symbol_only, &b.ood_number_only, &b.ood_both};
      for (std::size_t i = 0; i < 4; ++i) {
        buckets[i]->correct = to_int(cells[5 + 2 * i]);
        buckets[i]->total = to_int(cells[6 + 2 * i]);
        if (buckets[i]->correct > buckets[i]->total) throw FormatError(where + ": correct exceeds total");
        if (cells[1 + i] != detail::accuracy_cell(*buckets[i])) throw FormatError(where + ": accuracy disagrees with counts");
      }
      b.in_distribution.correct =
          b.overall.correct - b.ood_symbol_only.correct - b.ood_number_only.correct - b.ood_both.correct;
      b.in_distribution.total = b.overall.total - b.ood_symbol_only.total - b.ood_number_only.total - b.ood_both.total;
      if (b.in_distribution.correct < 0 || b.in_distribution.total < b.in_distribution.correct) {
        throw FormatError(where + ": category counts exceed overall");
      }
      t.rows.push_back(std::move(r));
    } else if (section == Section::Aggregates) {
      if (cells.size() != 5) throw FormatError(where + ": expected 5 columns");
      AggregateRow a;
      a.label = cells[0];
      a.pairs = static_cast<std::size_t>(to_int(cells[1]));
      a.points = to_int(cells[2]);
      for (auto [s, dst] : {std::pair{&cells[3], &a.mean}, std::pair{&cells[4], &a.sd}}) {
        const auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), *dst);
        if (ec != std::errc() || p != s->data() + s->size()) throw FormatError(where + ": bad number '" + *s + "'");
      }
      t.aggregates.push_back(std::move(a));
    } else {
      throw FormatError(where + ": data before header");
    }
  }
  if (t.rows.empty()) throw FormatError("results file has no rows");
  return t;
}

inline void write_results(const std::filesystem::path& path, const ResultsTable& t) {
  write_file(path, results_to_string(t));
}

inline ResultsTable read_results(const std::filesystem::path& path) { return parse_results(read_file(path)); }

// Per-pair raw scores (number correct) for aggregation across record files.
inline AggregateRow aggregate_row(std::string label, std::span<const double> per_pair_scores, int points) {
  const Aggregate a = aggregate(per_pair_scores);
  return {std::move(label), a.n, points, a.mean, a.sd};
}

}  // namespace mtt
