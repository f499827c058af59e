#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "pairsim/table.hpp"

using namespace pairsim;

namespace {
std::vector<std::string> lines(const std::string& s, const std::string& sep) {
  std::vector<std::string> out;
  std::size_t p = 0, q;
  while ((q = s.find(sep, p)) != std::string::npos) {
    out.push_back(s.substr(p, q - p));
    p = q + sep.size();
  }
  EXPECT_EQ(p, s.size()) << "trailing text without terminator";
  return out;
}
} // namespace

TEST(Table, PublishedRowsVerbatim) {
  const auto rows = published_comparison_rows();
  ASSERT_EQ(rows.size(), 5u);
  const std::vector<std::vector<std::string>> expected{
      {"Filtered SPDC", "", "0.08", "10", "13", "3.9*10^5"},
      {"4-wave-mixing", "rarty07", "0.025", "200", "14", "2*10^4"},
      {"Cavity SPDC", "polzik", "0.012", "0.02", "14", "7.6*10^4"},
      {"Atomic ensemble", "thompson", "0.02", "0.01", "35", "2.3*10^6"},
      {"Quantum dots", "shields", "N.A.", "620", "8", "<1"},
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    EXPECT_EQ((std::vector<std::string>{r.label, r.reference, r.mean_photons_per_mode, r.bandwidth_pm,
                                        r.transmission_percent, r.spectral_brightness}),
              expected[i]);
  }
}

TEST(Table, CsvShape) {
  const auto t = comparison_table(published_comparison_rows());
  const auto ls = lines(t.csv, "\r\n");
  ASSERT_EQ(ls.size(), 6u);
  EXPECT_EQ(ls[0], "process,reference,mean_n_per_tau_c,bandwidth_pm,transmission_percent,brightness_per_s_per_pm");
  EXPECT_EQ(ls[1], "Filtered SPDC,,0.08,10,13,3.9*10^5");
  EXPECT_EQ(ls[5], "Quantum dots,shields,N.A.,620,8,<1");
}

TEST(Table, CsvQuoting) {
  TableEntry e{"a,b", "say \"hi\"", "1", "2", "3", "4"};
  const auto t = comparison_table({e});
  EXPECT_EQ(lines(t.csv, "\r\n")[1], "\"a,b\",\"say \"\"hi\"\"\",1,2,3,4");
}

TEST(Table, TextColumnsAligned) {
  const auto t = comparison_table(published_comparison_rows());
  const auto ls = lines(t.text, "\n");
  ASSERT_EQ(ls.size(), 7u);
  // First column is padded to the longest label plus a two-space gutter.
  const auto rows = published_comparison_rows();
  const std::size_t w = std::string("Atomic ensemble").size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& row = ls[i + 2];
    EXPECT_EQ(row.substr(0, w + 2), rows[i].label + std::string(w + 2 - rows[i].label.size(), ' '));
    EXPECT_LE(row.size(), ls[1].size());
  }
  EXPECT_EQ(ls[1].find_first_not_of('-'), std::string::npos);
}

TEST(Table, JsonRoundTrip) {
  const auto t = comparison_table(published_comparison_rows());
  ASSERT_TRUE(t.json.is_array());
  ASSERT_EQ(t.json.size(), 5u);
  EXPECT_EQ(t.json[2]["bandwidth_pm"], "0.02");
  EXPECT_EQ(t.json[4]["mean_n_per_tau_c"], "N.A.");
  EXPECT_EQ(t.json[0].size(), table_columns().size());
}

TEST(Table, Errors) {
  EXPECT_THROW(comparison_table({}), ConfigError);
  EXPECT_THROW(comparison_table({TableEntry{}}), ConfigError);
  try {
    comparison_table({TableEntry{"x", "", "", "", "", ""}, TableEntry{}});
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("table.entries[1].label"), std::string::npos);
  }
}
