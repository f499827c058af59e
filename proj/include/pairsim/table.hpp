#pragma once

// Side-by-side comparison of photon-pair source figures of merit. Cells are
// carried as text so published values render exactly as quoted.

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pairsim/errors.hpp"
#include "pairsim/format.hpp"

namespace pairsim {

struct TableEntry {
  std::string label;
  std::string reference;
  std::string mean_photons_per_mode;  // per coherence time
  std::string bandwidth_pm;
  std::string transmission_percent;
  std::string spectral_brightness;    // s^-1 pm^-1
};

inline std::vector<TableEntry> published_comparison_rows() {
  return {
      {"Filtered SPDC", "", "0.08", "10", "13", "3.9*10^5"},
      {"4-wave-mixing", "rarty07", "0.025", "200", "14", "2*10^4"},
      {"Cavity SPDC", "polzik", "0.012", "0.02", "14", "7.6*10^4"},
      {"Atomic ensemble", "thompson", "0.02", "0.01", "35", "2.3*10^6"},
      {"Quantum dots", "shields", "N.A.", "620", "8", "<1"},
  };
}

struct RenderedTable {
  std::string csv;
  std::string text;
  nlohmann::ordered_json json;
};

inline const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> cols{"process", "reference", "mean_n_per_tau_c",
                                             "bandwidth_pm", "transmission_percent",
                                             "brightness_per_s_per_pm"};
  return cols;
}

inline RenderedTable comparison_table(const std::vector<TableEntry>& entries) {
  if (entries.empty()) throw ConfigError("table.entries", "at least one entry is required");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].label.empty())
      throw ConfigError("table.entries[" + std::to_string(i) + "].label", "label must not be empty");
  }

  const auto& cols = table_columns();
  auto cells = [](const TableEntry& e) {
    return std::vector<std::string>{e.label,        e.reference,
                                    e.mean_photons_per_mode, e.bandwidth_pm,
                                    e.transmission_percent,  e.spectral_brightness};
  };

  RenderedTable out;
  std::ostringstream csv;
  for (std::size_t c = 0; c < cols.size(); ++c) csv << (c ? "," : "") << cols[c];
  csv << "\r\n";
  for (const auto& e : entries) {
    auto row = cells(e);
    for (std::size_t c = 0; c < row.size(); ++c) csv << (c ? "," : "") << fmt::csv_field(row[c]);
    csv << "\r\n";
  }
  out.csv = csv.str();

  const std::vector<std::string> headers{"Process", "Ref", "<n> [1/tau_c]", "dlambda [pm]",
                                         "T [%]", "E [1/(s pm)]"};
  std::vector<std::size_t> width(headers.size());
  for (std::size_t c = 0; c < headers.size(); ++c) width[c] = headers[c].size();
  for (const auto& e : entries) {
    auto row = cells(e);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::ostringstream text;
  auto emit = [&](const std::vector<std::string>& row) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      text << row[c];
      if (c + 1 < row.size()) text << std::string(width[c] - row[c].size() + 2, ' ');
    }
    text << '\n';
  };
  emit(headers);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  text << std::string(total - 2, '-') << '\n';
  for (const auto& e : entries) emit(cells(e));
  out.text = text.str();

  out.json = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    auto row = cells(e);
    nlohmann::ordered_json obj;
    for (std::size_t c = 0; c < cols.size(); ++c) obj[cols[c]] = row[c];
    out.json.push_back(obj);
  }
  return out;
}

} // namespace pairsim
