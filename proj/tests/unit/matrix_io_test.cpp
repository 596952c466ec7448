#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace pt_test;

namespace {

SimilarityMatrix sample_matrix() {
  SimilarityMatrix m;
  m.mode = MatrixMode::FixedCulture;
  m.columns = {Code("KR"), Code("US"), Code("ES")};
  m.row_pairs = all_pairs({Code("KR"), Code("KP"), Code("US")});
  m.cells = {0.1, 1.0 / 3.0, std::nullopt, 0.25, 0.5, 0.75, 1e-9, 0.999999, 0.0};
  return m;
}

}  // namespace

TEST(MatrixIo, JsonRoundTripIsBitExact) {
  auto m = sample_matrix();
  auto back = matrix_from_json(nlohmann::json::parse(matrix_to_json(m).dump()));
  EXPECT_EQ(back.mode, m.mode);
  EXPECT_EQ(back.columns, m.columns);
  EXPECT_EQ(back.row_pairs, m.row_pairs);
  ASSERT_EQ(back.cells.size(), m.cells.size());
  for (std::size_t i = 0; i < m.cells.size(); ++i) {
    ASSERT_EQ(back.cells[i].has_value(), m.cells[i].has_value());
    if (m.cells[i]) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(*back.cells[i]), std::bit_cast<std::uint64_t>(*m.cells[i]));
    }
  }
}

TEST(MatrixIo, JsonRejectsForeignDocuments) {
  EXPECT_THROW(matrix_from_json(nlohmann::json::object()), Error);
  auto j = matrix_to_json(sample_matrix());
  j["version"] = 2;
  try {
    matrix_from_json(j);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VersionError);
  }
  j = matrix_to_json(sample_matrix());
  j["rows"][0]["pair"] = "KRKP";
  EXPECT_THROW(matrix_from_json(j), Error);
}

TEST(MatrixIo, CsvFormatsAndParses) {
  auto m = sample_matrix();
  std::ostringstream os;
  write_matrix_csv(m, os);
  EXPECT_EQ(os.str(),
            "pair,KR,US,ES\n"
            "KR-KP,0.1,0.333333,NA\n"
            "KR-US,0.25,0.5,0.75\n"
            "KP-US,1e-09,0.999999,0\n");
  auto back = parse_matrix_csv(os.str(), MatrixMode::FixedCulture);
  EXPECT_EQ(back.row_pairs, m.row_pairs);
  EXPECT_FALSE(back.at(0, 2));
  EXPECT_NEAR(*back.at(0, 1), 1.0 / 3.0, 1e-6);

  std::ostringstream two;
  write_matrix_csv(m, two, CsvPrecision::Decimals2);
  EXPECT_NE(two.str().find("KR-KP,0.10,0.33,NA"), std::string::npos);
}

TEST(MatrixIo, CsvRejectsRaggedRows) {
  EXPECT_THROW(parse_matrix_csv("pair,KR,US\nKR-KP,0.1\n", MatrixMode::FixedLanguage), FormatError);
  EXPECT_THROW(parse_matrix_csv("pair,KR\nKR-KP,abc\n", MatrixMode::FixedLanguage), FormatError);
  EXPECT_THROW(parse_matrix_csv("", MatrixMode::FixedLanguage), FormatError);
}

TEST(MatrixIo, ReferenceFixturesLoad) {
  auto a = load_fixture_matrix("reference_fixed_language.csv", MatrixMode::FixedLanguage);
  auto b = load_fixture_matrix("reference_fixed_culture.csv", MatrixMode::FixedCulture);
  for (const auto* m : {&a, &b}) {
    EXPECT_EQ(m->columns, reference_codes());
    EXPECT_EQ(m->row_pairs, all_pairs(reference_codes()));
    for (const auto& c : m->cells) EXPECT_TRUE(c);
  }
  EXPECT_EQ(*a.at(0, 0), 0.10);
  EXPECT_EQ(*b.at(*b.row_index({Code("US"), Code("UK")}), 4), 0.97);
}
