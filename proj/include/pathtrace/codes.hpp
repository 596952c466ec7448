#pragma once

#include <algorithm>
#include <array>
#include <compare>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"

namespace pathtrace {

// Two-letter uppercase ASCII code naming a question language or a target
// country. The seven reference codes are always recognized; any other
// two-letter uppercase code is accepted as an extension.
class Code {
 public:
  Code() = default;

  explicit Code(std::string_view text) : text_(text) {
    if (!is_valid(text)) {
      throw Error(ErrorCode::FormatViolation,
                  "invalid language/country code '" + std::string(text) +
                      "' (expected two uppercase ASCII letters)");
    }
  }

  static bool is_valid(std::string_view text) {
    return text.size() == 2 &&
           std::all_of(text.begin(), text.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
  }

  const std::string& str() const noexcept { return text_; }
  bool empty() const noexcept { return text_.empty(); }

  friend bool operator==(const Code&, const Code&) = default;
  friend auto operator<=>(const Code&, const Code&) = default;

 private:
  std::string text_;
};

using LanguageCode = Code;
using CountryCode = Code;

inline const std::array<std::string_view, 7>& reference_code_names() {
  static const std::array<std::string_view, 7> names = {"KR", "KP", "US", "UK", "ES", "MX", "CN"};
  return names;
}

// KR, KP, US, UK, ES, MX, CN in reporting order.
inline std::vector<Code> reference_codes() {
  std::vector<Code> out;
  for (auto name : reference_code_names()) out.emplace_back(name);
  return out;
}

// Position of a code in reporting order: reference codes first, then any
// extension codes alphabetically.
inline auto reporting_rank(const Code& code) {
  const auto& names = reference_code_names();
  auto it = std::find(names.begin(), names.end(), code.str());
  return std::pair<std::size_t, std::string>(static_cast<std::size_t>(it - names.begin()),
                                             it == names.end() ? code.str() : std::string());
}

inline void sort_reporting_order(std::vector<Code>& codes) {
  std::sort(codes.begin(), codes.end(), [](const Code& a, const Code& b) {
    return reporting_rank(a) < reporting_rank(b);
  });
  codes.erase(std::unique(codes.begin(), codes.end()), codes.end());
}

// Unordered pair of codes. `first`/`second` keep the order the pair was
// created in (used for display, e.g. "KR-KP"); equality ignores order.
struct CodePair {
  Code first;
  Code second;

  std::string label() const { return first.str() + "-" + second.str(); }

  bool same_as(const CodePair& other) const {
    return (first == other.first && second == other.second) ||
           (first == other.second && second == other.first);
  }

  bool contains(const Code& code) const { return first == code || second == code; }

  friend bool operator==(const CodePair& a, const CodePair& b) { return a.same_as(b); }
};

// Every unordered pair of `codes`, in row order: all pairs with codes[0]
// first, then codes[1], and so on.
inline std::vector<CodePair> all_pairs(const std::vector<Code>& codes) {
  std::vector<CodePair> pairs;
  for (std::size_t i = 0; i < codes.size(); ++i)
    for (std::size_t j = i + 1; j < codes.size(); ++j) pairs.push_back({codes[i], codes[j]});
  return pairs;
}

// Country pairs that share (near-)identical languages but differ in culture.
class PairRegistry {
 public:
  PairRegistry() = default;
  explicit PairRegistry(std::vector<CodePair> pairs) : pairs_(std::move(pairs)) {}

  static PairRegistry reference() {
    return PairRegistry({{Code("KR"), Code("KP")}, {Code("US"), Code("UK")},
                         {Code("ES"), Code("MX")}});
  }

  const std::vector<CodePair>& pairs() const noexcept { return pairs_; }

  bool contains(const CodePair& pair) const {
    return std::any_of(pairs_.begin(), pairs_.end(),
                       [&](const CodePair& p) { return p.same_as(pair); });
  }

 private:
  std::vector<CodePair> pairs_;
};

}  // namespace pathtrace
