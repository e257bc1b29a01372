#include "support.hpp"

#include "hybridtrial/cli.hpp"
#include "hybridtrial/simlab.hpp"

#include <doctest.h>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace hybridtrial;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("hybridtrial_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "hybridtrial");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Ten rows: four treated, four randomized controls, two externals.
fs::path toy_csv(const fs::path& dir) {
  const fs::path path = dir / "toy.csv";
  std::ofstream out(path);
  out << "id,y,a,s,x\n"
         "u01,2.1,1,1,0.1\nu02,3.4,1,1,0.9\nu03,1.2,1,1,-0.8\nu04,2.9,1,1,0.5\n"
         "u05,0.4,0,1,-0.2\nu06,1.9,0,1,1.1\nu07,-0.7,0,1,-1.3\nu08,0.8,0,1,0.3\n"
         "u09,1.1,0,0,0.6\nu10,0.2,0,0,-0.4\n";
  return path;
}

fs::path scenario_csv(const fs::path& dir, double ec_shift, std::uint64_t seed) {
  ScenarioConfig config;
  config.n1 = 20;
  config.n0 = 14;
  config.nE = 12;
  Rng rng(seed);
  const Scenario sc = generate_scenario(config, rng, 0.0);
  Eigen::VectorXd y = sc.data.outcome();
  for (Index i = sc.data.n_rct(); i < sc.data.size(); ++i) y[i] += ec_shift;
  const fs::path path = dir / "scenario.csv";
  std::ofstream out(path);
  ColumnSchema schema;
  schema.id_column = "id";
  write_dataset(out, sc.data.with_outcome(y), schema);
  return path;
}

bool on_grid(double p, int b) {
  const double k = p * (b + 1);
  return std::abs(k - std::round(k)) < 1e-9 && k >= 1 - 1e-9 && k <= b + 1 + 1e-9;
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("analyze: report shape and exact p-values on the grid") {
  const fs::path dir = scratch("toy");
  const fs::path csv = toy_csv(dir);
  const Run r = run({"analyze", "--input", csv.string(), "--id-col", "id", "--out", (dir / "out").string(),
                     "--method", "nb", "--method", "fb", "--B", "99", "--L", "50", "--seed", "5"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = json::parse(slurp(dir / "out" / "report.json"));
  CHECK(report["seed"] == 5);
  REQUIRE(report["estimators"].size() == 2);
  for (const auto& row : report["estimators"]) {
    for (const char* key : {"method", "est", "se", "ci_lo", "ci_hi", "exact_p", "n_borrowed", "gamma_used",
                            "selected_ids"}) {
      CHECK(row.contains(key));
    }
    CHECK(on_grid(row["exact_p"].get<double>(), 99));
    CHECK(row["ci_lo"].get<double>() <= row["est"].get<double>());
    CHECK(row["ci_hi"].get<double>() >= row["est"].get<double>());
  }
  CHECK(report["estimators"][0]["method"] == "nb");
  CHECK(report["estimators"][1]["n_borrowed"] == 2);
  CHECK(report["estimators"][1]["selected_ids"] == json::array({"u09", "u10"}));
  const std::string csv_text = slurp(dir / "out" / "report.csv");
  CHECK(csv_text.rfind("# seed=5\nmethod,est,se,ci_lo,ci_hi,exact_p,B,n_borrowed,gamma_used\n", 0) == 0);
  CHECK_FALSE(fs::exists(dir / "out" / "conformal_report.json"));
}

TEST_CASE("analyze: byte-identical across reruns and thread counts") {
  const fs::path dir = scratch("determinism");
  const fs::path csv = scenario_csv(dir, 0.0, 3);
  std::vector<std::string> files;
  for (const std::string threads : {"1", "4", "1"}) {
    const fs::path out = dir / ("out" + threads + std::to_string(files.size()));
    const Run r = run({"analyze", "--input", csv.string(), "--id-col", "id", "--out", out.string(), "--B", "60",
                       "--L", "50", "--threads", threads, "--gamma", "0.3"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    files.push_back(slurp(out / "report.json") + slurp(out / "report.csv") + slurp(out / "conformal_report.json"));
  }
  CHECK(files[0] == files[1]);
  CHECK(files[0] == files[2]);
}

TEST_CASE("analyze: far-off externals are all dropped and CSB falls back to NB") {
  const fs::path dir = scratch("fallback");
  const fs::path csv = scenario_csv(dir, 1000.0, 4);
  const Run r = run({"analyze", "--input", csv.string(), "--id-col", "id", "--out", (dir / "out").string(),
                     "--method", "nb", "--method", "csb", "--gamma", "0.5", "--B", "20", "--L", "50"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = json::parse(slurp(dir / "out" / "report.json"));
  const auto& nb = report["estimators"][0];
  const auto& csb = report["estimators"][1];
  CHECK(csb["n_borrowed"] == 0);
  CHECK(csb["est"].get<double>() == nb["est"].get<double>());
  CHECK(csb["gamma_used"].get<double>() == 0.5);
  const json conformal = json::parse(slurp(dir / "out" / "conformal_report.json"));
  CHECK(conformal["external_controls"].size() == 12);
  // Group sizes are random, so read the number of reference controls back.
  const double m = conformal["reference_size"].get<double>();
  CHECK(m == report["n_rct_controls"].get<double>());
  for (const auto& u : conformal["external_controls"]) {
    CHECK(u["p_value"].get<double>() == 1.0 / (m + 1.0));
    CHECK(u["selected"] == false);
  }
}

TEST_CASE("diagnose: selection columns and profile identity") {
  const fs::path dir = scratch("diagnose");
  const fs::path csv = scenario_csv(dir, 0.0, 5);
  const Run r = run({"diagnose", "--input", csv.string(), "--id-col", "id", "--out", (dir / "out").string(),
                     "--L", "50"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream table(slurp(dir / "out" / "ec_diagnostics.csv"));
  std::string line;
  std::getline(table, line);
  CHECK(line.rfind("# seed=", 0) == 0);
  std::getline(table, line);
  CHECK(line.rfind("unit_id,p_value,score,selected_0,selected_0.10000000000000001", 0) == 0);
  CHECK(line.substr(line.size() - 11) == ",selected_1");
  int rows = 0;
  while (std::getline(table, line)) {
    ++rows;
    // First flag (gamma = 0) is 1, last (gamma = 1) is 0.
    const auto fields = std::count(line.begin(), line.end(), ',');
    CHECK(fields == 3 + 10);
    CHECK(line.back() == '0');
    std::istringstream cells(line);
    std::string cell;
    for (int k = 0; k < 4; ++k) std::getline(cells, cell, ',');
    CHECK(cell == "1");
  }
  CHECK(rows == 12);

  std::istringstream profile(slurp(dir / "out" / "mse_profile.csv"));
  std::getline(profile, line);
  std::getline(profile, line);
  CHECK(line.rfind("# gamma_hat=", 0) == 0);
  std::getline(profile, line);
  CHECK(line == "gamma,tau_hat,var_diff,var_gamma,mse_hat,selected");
  std::string last;
  while (std::getline(profile, line)) last = line;
  std::vector<std::string> cells;
  std::istringstream lc(last);
  for (std::string c; std::getline(lc, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 6);
  CHECK(cells[0] == "1");
  CHECK(cells[2] == "0");
  CHECK(cells[3] == cells[4]);
  const json diag = json::parse(slurp(dir / "out" / "diagnose.json"));
  CHECK(diag.contains("gamma_hat"));
}

TEST_CASE("simulate: smoke run") {
  const fs::path dir = scratch("simulate");
  {
    std::ofstream s(dir / "scenario.json");
    s << R"({"n1": 20, "n0": 24, "nE": 16, "bias_b": [0, 4], "hypothesis": "sharp_null"})";
  }
  const Run r = run({"simulate", "--scenario", (dir / "scenario.json").string(), "--out", (dir / "out").string(),
                     "-R", "10", "--B", "19", "--L", "50", "--method", "nb", "--method", "csb", "--gamma", "0.2",
                     "--threads", "2"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  std::istringstream reps(slurp(dir / "out" / "replications.csv"));
  std::string line;
  std::getline(reps, line);
  std::getline(reps, line);
  int nb = 0, csb = 0;
  while (std::getline(reps, line)) {
    std::vector<std::string> cells;
    std::istringstream lc(line);
    for (std::string c; std::getline(lc, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() >= 9);
    (cells[5] == "nb" ? nb : csb) += 1;
    CHECK(cells[3] == "sharp_null");
    CHECK(cells[6] == "0");
    const double p = std::stod(cells[8]);
    CHECK(p > 0.0);
    CHECK(p <= 1.0);
  }
  CHECK(nb == 20);
  CHECK(csb == 20);
  const json metrics = json::parse(slurp(dir / "out" / "metrics.json"));
  CHECK(metrics["scenarios"].size() == 2);
  CHECK(metrics["scenarios"][1]["scenario"]["bias_b"] == 4.0);
}

TEST_CASE("config file loses to explicit flags") {
  const fs::path dir = scratch("config");
  const fs::path csv = toy_csv(dir);
  {
    std::ofstream c(dir / "config.json");
    c << R"({"B": 9, "L": 0, "seed": 11, "method": ["nb"], "id-col": "id"})";
  }
  const Run r = run({"analyze", "--input", csv.string(), "--config", (dir / "config.json").string(), "--seed",
                     "12", "--out", (dir / "out").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const json report = json::parse(slurp(dir / "out" / "report.json"));
  CHECK(report["seed"] == 12);
  CHECK(report["B"] == 9);
  CHECK(report["estimators"].size() == 1);
  CHECK(report["estimators"][0]["se"].is_null());
}

TEST_CASE("errors are reported as JSON") {
  const fs::path dir = scratch("errors");
  const Run missing = run({"analyze", "--input", (dir / "nope.csv").string(), "--out", (dir / "out").string()});
  CHECK(missing.code == 2);
  const json err = json::parse(missing.err);
  CHECK(err["error"]["code"] == "Io");
  CHECK(json::parse(slurp(dir / "out" / "error.json")) == err);

  {
    std::ofstream bad(dir / "bad.csv");
    bad << "y,a,s,x\n1,1,1,0\n2,1,0,1\nz,0,1,2\n";
  }
  const Run invalid = run({"analyze", "--input", (dir / "bad.csv").string(), "--out", (dir / "out2").string(),
                           "--validation-report", (dir / "validation.jsonl").string()});
  CHECK(invalid.code == 2);
  CHECK(json::parse(invalid.err)["error"]["code"] == "EcTreated");
  std::istringstream lines(slurp(dir / "validation.jsonl"));
  std::vector<json> issues;
  for (std::string line; std::getline(lines, line);) issues.push_back(json::parse(line));
  REQUIRE(issues.size() == 2);
  CHECK(issues[0]["code"] == "EcTreated");
  CHECK(issues[1]["code"] == "BadValue");

  CHECK(run({"analyze", "--out", (dir / "out3").string(), "--method", "xyz", "--input",
             toy_csv(dir).string()}).code == 2);
  CHECK(run({"simulate", "--out", (dir / "out4").string()}).code != 0);
}

}  // TEST_SUITE
