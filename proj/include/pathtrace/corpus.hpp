#pragma once

// Multilingual question sets. A corpus directory holds one UTF-8 file per
// (language, country), named `<L>__<C>.qs.jsonl`, with one JSON record per
// line: {"qid": "...", "statement": "..."}. Statements are declarative
// continuations; trailing spaces are significant and preserved byte-for-byte.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "codes.hpp"
#include "error.hpp"

namespace pathtrace {

inline constexpr std::size_t kReferenceQuestionCount = 50;
inline constexpr std::string_view kCorpusFileSuffix = ".qs.jsonl";

struct QuestionItem {
  std::string qid;
  std::string statement;

  friend bool operator==(const QuestionItem&, const QuestionItem&) = default;
};

struct QuestionSet {
  LanguageCode language;
  CountryCode country;
  std::vector<QuestionItem> items;

  std::string set_id() const { return language.str() + "__" + country.str(); }
};

enum class ViolationKind {
  Empty,
  Interrogative,
  MissingTrailingSpace,  // non-Chinese statement must end in exactly one space
  ExtraTrailingSpace,    // more than one trailing whitespace character
  TrailingSpaceInChinese,
};

struct Violation {
  ViolationKind kind;
  std::string message;
};

// Languages written without inter-word spaces; their statements end with no
// trailing space.
inline bool is_unspaced_language(const LanguageCode& language) { return language.str() == "CN"; }

inline bool is_space_char(char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; }

// Checks the declarative continuation rules for one statement.
inline std::optional<Violation> validate_statement(const LanguageCode& language,
                                                   std::string_view statement) {
  std::string_view trimmed = statement;
  while (!trimmed.empty() && is_space_char(trimmed.back())) trimmed.remove_suffix(1);
  if (trimmed.empty()) return Violation{ViolationKind::Empty, "statement is empty"};

  constexpr std::string_view kFullwidthQuestion = "\xEF\xBC\x9F";  // U+FF1F
  if (trimmed.back() == '?' ||
      (trimmed.size() >= 3 && trimmed.substr(trimmed.size() - 3) == kFullwidthQuestion))
    return Violation{ViolationKind::Interrogative,
                     "statement ends with a question mark; expected a declarative continuation"};

  const std::size_t trailing = statement.size() - trimmed.size();
  if (is_unspaced_language(language)) {
    if (trailing != 0)
      return Violation{ViolationKind::TrailingSpaceInChinese,
                       "statement in " + language.str() + " must not end with whitespace"};
    return std::nullopt;
  }
  if (trailing == 0)
    return Violation{ViolationKind::MissingTrailingSpace,
                     "statement must end with a single trailing space"};
  if (trailing != 1 || statement.back() != ' ')
    return Violation{ViolationKind::ExtraTrailingSpace,
                     "statement must end with exactly one space character"};
  return std::nullopt;
}

struct CorpusDiagnostic {
  ErrorCode code;  // CorpusShapeError, FormatViolation or AlignmentError
  std::string file;
  std::size_t line = 0;  // 0 when not tied to a line
  std::string qid;
  std::string message;

  std::string to_string() const {
    std::string s = file.empty() ? std::string("<corpus>") : file;
    if (line) s += ":" + std::to_string(line);
    if (!qid.empty()) s += " [" + qid + "]";
    return s + ": " + std::string(pathtrace::to_string(code)) + ": " + message;
  }
};

class CorpusError : public Error {
 public:
  explicit CorpusError(std::vector<CorpusDiagnostic> diagnostics)
      : Error(diagnostics.front().code, summarize(diagnostics)),
        diagnostics_(std::move(diagnostics)) {}

  const std::vector<CorpusDiagnostic>& diagnostics() const noexcept { return diagnostics_; }

 private:
  static std::string summarize(const std::vector<CorpusDiagnostic>& d) {
    std::string s = std::to_string(d.size()) + " problem(s); first: " + d.front().to_string();
    return s;
  }
  std::vector<CorpusDiagnostic> diagnostics_;
};

struct CorpusOptions {
  // Accept any non-empty corpus instead of the full 7 x 7 sets of 50 items.
  bool allow_partial = false;
};

// Immutable collection of question sets, ordered by (language, country) in
// reporting order.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<QuestionSet> sets) : sets_(std::move(sets)) {
    std::sort(sets_.begin(), sets_.end(), [](const QuestionSet& a, const QuestionSet& b) {
      return std::pair(reporting_rank(a.language), reporting_rank(a.country)) <
             std::pair(reporting_rank(b.language), reporting_rank(b.country));
    });
  }

  const std::vector<QuestionSet>& sets() const noexcept { return sets_; }

  const QuestionSet* find(const LanguageCode& l, const CountryCode& c) const {
    for (const auto& s : sets_)
      if (s.language == l && s.country == c) return &s;
    return nullptr;
  }

  std::vector<Code> languages() const {
    std::vector<Code> out;
    for (const auto& s : sets_) out.push_back(s.language);
    sort_reporting_order(out);
    return out;
  }

  std::vector<Code> countries() const {
    std::vector<Code> out;
    for (const auto& s : sets_) out.push_back(s.country);
    sort_reporting_order(out);
    return out;
  }

 private:
  std::vector<QuestionSet> sets_;
};

// Parses `<L>__<C>.qs.jsonl`.
inline std::optional<std::pair<Code, Code>> parse_corpus_file_name(std::string_view name) {
  if (name.size() != 6 + kCorpusFileSuffix.size() || name.substr(6) != kCorpusFileSuffix ||
      name.substr(2, 2) != "__")
    return std::nullopt;
  auto l = name.substr(0, 2), c = name.substr(4, 2);
  if (!Code::is_valid(l) || !Code::is_valid(c)) return std::nullopt;
  return std::pair(Code(l), Code(c));
}

inline std::string corpus_file_name(const LanguageCode& l, const CountryCode& c) {
  return l.str() + "__" + c.str() + std::string(kCorpusFileSuffix);
}

// Parses one question-set file, appending every problem found to `diags`.
inline QuestionSet parse_question_set(std::string_view text, const LanguageCode& language,
                                      const CountryCode& country, const std::string& file,
                                      std::vector<CorpusDiagnostic>& diags) {
  QuestionSet set{language, country, {}};
  std::set<std::string> seen;
  std::size_t line_no = 0;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.empty()) continue;

    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      diags.push_back({ErrorCode::FormatViolation, file, line_no, "", std::string("invalid JSON: ") + e.what()});
      continue;
    }
    if (!record.is_object() || !record.contains("qid") || !record.contains("statement") ||
        !record["qid"].is_string() || !record["statement"].is_string() || record.size() != 2) {
      diags.push_back({ErrorCode::FormatViolation, file, line_no, "",
                       "record must be {\"qid\": string, \"statement\": string}"});
      continue;
    }
    QuestionItem item{record["qid"].get<std::string>(), record["statement"].get<std::string>()};
    if (item.qid.empty()) {
      diags.push_back({ErrorCode::FormatViolation, file, line_no, "", "empty qid"});
      continue;
    }
    if (item.qid.find_first_of(" \t\r\n") != std::string::npos) {
      diags.push_back({ErrorCode::FormatViolation, file, line_no, item.qid, "qid contains whitespace"});
      continue;
    }
    if (!seen.insert(item.qid).second)
      diags.push_back({ErrorCode::AlignmentError, file, line_no, item.qid, "duplicate qid in set"});
    if (auto v = validate_statement(language, item.statement))
      diags.push_back({ErrorCode::FormatViolation, file, line_no, item.qid, v->message});
    set.items.push_back(std::move(item));
  }
  return set;
}

struct CorpusScan {
  Corpus corpus;
  std::vector<CorpusDiagnostic> diagnostics;
};

// Reads and checks every set under `dir`, collecting all problems rather
// than stopping at the first.
inline CorpusScan scan_corpus(const std::filesystem::path& dir, const CorpusOptions& opts = {}) {
  namespace fs = std::filesystem;
  CorpusScan scan;
  auto& diags = scan.diagnostics;
  if (!fs::is_directory(dir)) {
    diags.push_back({ErrorCode::CorpusShapeError, dir.string(), 0, "", "not a directory"});
    return scan;
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (name.size() >= kCorpusFileSuffix.size() &&
        name.compare(name.size() - kCorpusFileSuffix.size(), kCorpusFileSuffix.size(),
                     kCorpusFileSuffix) == 0)
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  std::vector<QuestionSet> sets;
  std::map<std::string, std::string> origin;  // set id -> file
  for (const auto& path : files) {
    const auto name = path.filename().string();
    auto codes = parse_corpus_file_name(name);
    if (!codes) {
      diags.push_back({ErrorCode::CorpusShapeError, name, 0, "",
                       "file name must be <L>__<C>.qs.jsonl with two-letter uppercase codes"});
      continue;
    }
    std::ifstream in(path, std::ios::binary);
    std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    auto set = parse_question_set(text, codes->first, codes->second, name, diags);
    origin[set.set_id()] = name;
    sets.push_back(std::move(set));
  }

  if (sets.empty()) {
    diags.push_back({ErrorCode::CorpusShapeError, dir.string(), 0, "", "no question sets found"});
    return scan;
  }

  if (!opts.allow_partial) {
    const auto ref = reference_codes();
    if (sets.size() != ref.size() * ref.size())
      diags.push_back({ErrorCode::CorpusShapeError, dir.string(), 0, "",
                       "expected " + std::to_string(ref.size() * ref.size()) +
                           " question sets, found " + std::to_string(sets.size())});
    for (const auto& l : ref)
      for (const auto& c : ref) {
        bool present = std::any_of(sets.begin(), sets.end(), [&](const QuestionSet& s) {
          return s.language == l && s.country == c;
        });
        if (!present)
          diags.push_back({ErrorCode::CorpusShapeError, corpus_file_name(l, c), 0, "",
                           "missing question set (" + l.str() + ", " + c.str() + ")"});
      }
    for (const auto& s : sets)
      if (s.items.size() != kReferenceQuestionCount)
        diags.push_back({ErrorCode::CorpusShapeError, origin[s.set_id()], 0, "",
                         "expected " + std::to_string(kReferenceQuestionCount) +
                             " questions, found " + std::to_string(s.items.size())});
  }

  // Every set must ask the same questions.
  std::set<std::string> all_qids;
  for (const auto& s : sets)
    for (const auto& it : s.items) all_qids.insert(it.qid);
  for (const auto& s : sets) {
    std::set<std::string> mine;
    for (const auto& it : s.items) mine.insert(it.qid);
    for (const auto& q : all_qids)
      if (!mine.contains(q))
        diags.push_back({ErrorCode::AlignmentError, origin[s.set_id()], 0, q,
                         "qid present in other sets is missing here"});
  }

  scan.corpus = Corpus(std::move(sets));
  return scan;
}

// Loads and validates a corpus; throws CorpusError carrying every problem.
inline Corpus load_corpus(const std::filesystem::path& dir, const CorpusOptions& opts = {}) {
  auto scan = scan_corpus(dir, opts);
  if (!scan.diagnostics.empty()) throw CorpusError(std::move(scan.diagnostics));
  return std::move(scan.corpus);
}

// Canonical serialization of one set; load followed by write reproduces a
// canonical file byte-for-byte.
inline void write_question_set(const QuestionSet& set, std::ostream& out) {
  for (const auto& item : set.items) {
    nlohmann::ordered_json record;
    record["qid"] = item.qid;
    record["statement"] = item.statement;
    out << record.dump() << '\n';
  }
}

inline void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& s : corpus.sets()) {
    std::ofstream out(dir / corpus_file_name(s.language, s.country), std::ios::binary);
    if (!out) throw Error(ErrorCode::IoError, "cannot write corpus file in " + dir.string());
    write_question_set(s, out);
  }
}

}  // namespace pathtrace
