#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "pairsim/config.hpp"
#include "pairsim/format.hpp"

using namespace pairsim;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {
const std::string kPresets = PAIRSIM_PRESET_DIR;

json preset(const std::string& name) { return json::parse(fmt::read_file(kPresets + "/" + name)); }

// Returns the ConfigError message, or "" if parsing succeeded.
std::string config_error(const json& j) {
  try {
    parse_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("pairsim_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int cli(const std::string& args) {
  const std::string cmd = std::string(PAIRSIM_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path write_config(const fs::path& dir, const json& j) {
  const auto p = dir / "config.json";
  fmt::write_file(p, j.dump(2));
  return p;
}
} // namespace

TEST(Config, PresetsParse) {
  for (const char* name : {"paper.json", "ideal.json", "lowrate.json"}) {
    const auto c = load_config(kPresets + "/" + name);
    EXPECT_FALSE(c.sources.empty()) << name;
    ASSERT_TRUE(c.hom) << name;
    EXPECT_NO_THROW(hom_config(c, c.hom->runs.front())) << name;
  }
  const auto paper = load_config(kPresets + "/paper.json");
  EXPECT_EQ(paper.seed, 20100401u);
  EXPECT_EQ(paper.table.size(), 5u);
  ASSERT_TRUE(paper.radiometry);
  EXPECT_EQ(paper.radiometry->filter_fwhm_pm, 10.0);
}

TEST(Config, UnknownKeyNamesItsPath) {
  auto j = preset("ideal.json");
  j["bogus"] = 1;
  EXPECT_NE(config_error(j).find("bogus"), std::string::npos);
  j = preset("ideal.json");
  j["sources"]["a"]["pump"]["powr_mw"] = 3;
  const auto msg = config_error(j);
  EXPECT_NE(msg.find("sources.a.pump.powr_mw"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown key"), std::string::npos) << msg;
}

TEST(Config, MissingSeed) {
  auto j = preset("ideal.json");
  j.erase("seed");
  const auto msg = config_error(j);
  EXPECT_NE(msg.find("seed"), std::string::npos) << msg;
}

TEST(Config, SchemaVersionChecked) {
  auto j = preset("ideal.json");
  j["schema_version"] = 2;
  EXPECT_NE(config_error(j).find("schema_version"), std::string::npos);
  j.erase("schema_version");
  EXPECT_NE(config_error(j).find("schema_version"), std::string::npos);
}

TEST(Config, UnknownReference) {
  auto j = preset("ideal.json");
  j["coincidence"]["runs"][0]["source"] = "zz";
  const auto msg = config_error(j);
  EXPECT_NE(msg.find("coincidence.runs[0].source"), std::string::npos) << msg;
  EXPECT_NE(msg.find("zz"), std::string::npos) << msg;
}

TEST(Config, FilterWiderThanSpdcBand) {
  auto j = preset("paper.json");
  j["radiometry"]["filter_fwhm_pm"] = 81000;
  EXPECT_NE(config_error(j).find("radiometry.filter_fwhm_pm"), std::string::npos);
}

TEST(Config, EmptyTableRejected) {
  auto j = preset("ideal.json");
  j["table"] = {{"entries", json::array()}};
  EXPECT_NE(config_error(j).find("table.entries"), std::string::npos);
}

TEST(Config, WrongTypesRejected) {
  auto j = preset("ideal.json");
  j["sources"]["a"]["pump"]["power_mw"] = "7";
  EXPECT_NE(config_error(j).find("sources.a.pump.power_mw"), std::string::npos);
  j = preset("ideal.json");
  j["hom"]["bs_reflectivity"] = 1.5;
  EXPECT_NE(config_error(j).find("hom.bs_reflectivity"), std::string::npos);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("exit");
  EXPECT_EQ(cli("table --config " + kPresets + "/ideal.json --out " + (dir / "t").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "t" / "table.csv"));
  EXPECT_TRUE(fs::exists(dir / "t" / "manifest.json"));
  EXPECT_EQ(cli("table --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(cli("frobnicate"), 2);
  EXPECT_EQ(cli("table --threads 0 --config " + kPresets + "/ideal.json"), 2);

  auto bad = preset("ideal.json");
  bad["bogus"] = true;
  EXPECT_EQ(cli("table --config " + write_config(dir, bad).string()), 2);

  // Above the size guard without --yes.
  auto big = preset("ideal.json");
  big["hom"]["runs"][0]["duration_s"] = 1e9;
  EXPECT_EQ(cli("hom --config " + write_config(dir, big).string() + " --out " + (dir / "big").string()), 2);

  // Too few wing events for a fit.
  auto thin = preset("ideal.json");
  thin["hom"]["runs"][0]["duration_s"] = 1e-4;
  thin["hom"]["min_wing_events"] = 1000000;
  EXPECT_EQ(cli("hom --config " + write_config(dir, thin).string() + " --out " + (dir / "thin").string()), 3);
}

TEST(Cli, SameSeedSameBytes) {
  const auto dir = scratch("det");
  const std::string base = "coincidence --config " + kPresets + "/ideal.json";
  ASSERT_EQ(cli(base + " --threads 2 --seed 7 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(cli(base + " --threads 1 --seed 7 --out " + (dir / "b").string()), 0);
  ASSERT_EQ(cli(base + " --threads 2 --seed 8 --out " + (dir / "c").string()), 0);
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(dir / "a")) {
    const auto name = e.path().filename().string();
    if (name == "manifest.json") continue;
    EXPECT_EQ(fmt::read_file(e.path()), fmt::read_file(dir / "b" / name)) << name;
    ++compared;
  }
  EXPECT_GE(compared, 2u);
  const auto csv = [&](const char* d) { return fmt::read_file(dir / d / "coincidence_unfiltered.csv"); };
  EXPECT_NE(csv("a"), csv("c"));

  const auto manifest = json::parse(fmt::read_file(dir / "a" / "manifest.json"));
  EXPECT_EQ(manifest["seed"], 7);
  EXPECT_FALSE(manifest["files"].empty());
}
