#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "extrema_gp/io.hpp"

namespace fs = std::filesystem;
using namespace extrema_gp;

namespace {

const fs::path kRoot = fs::absolute("cli_test_out");

int run(const std::string& args) {
  const std::string cmd = std::string(EXTREMA_GP_CLI) + " " + args + " > " + (kRoot / "last_stdout.txt").string() +
                          " 2> " + (kRoot / "last_stderr.txt").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string dir(const std::string& name) { return (kRoot / name).string(); }

void write(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::remove_all(kRoot);
    fs::create_directories(kRoot);
  }
};

}  // namespace

TEST_F(Cli, SimulateEmitDataThenFit) {
  ASSERT_EQ(run("simulate --preset table1 --n 100 --replicates 1 --seed 3 --emit-data --out-dir " + dir("sim")), 0);
  const fs::path data = kRoot / "sim" / "data" / "replicate_0000.csv";
  ASSERT_TRUE(fs::exists(data));
  for (const char* f : {"report.json", "table1.csv", "table2.csv", "table3.csv", "runtime.json"}) {
    EXPECT_TRUE(fs::exists(kRoot / "sim" / f)) << f;
  }
  ASSERT_EQ(run("fit --input " + data.string() + " --emit-svg --out-dir " + dir("fit")), 0);
  EXPECT_NE(slurp(kRoot / "last_stdout.txt").find("m_hat "), std::string::npos);
  const json ej = json::parse(slurp(kRoot / "fit" / "extrema.json"));
  EXPECT_TRUE(ej.at("m_hat").is_number_integer());
  EXPECT_FALSE(ej.at("manifest").at("hyperparams").is_null());
  EXPECT_TRUE(fs::exists(kRoot / "fit" / "posterior.svg"));
  EXPECT_TRUE(fs::exists(kRoot / "fit" / "posterior.csv"));
}

TEST_F(Cli, PriorChangesLogUnnormByLogPrior) {
  std::ostringstream csv;
  csv << "x,y\n";
  for (int i = 0; i < 80; ++i) {
    const double x = (i + 0.5) / 80.0;
    csv << fmt_double(x) << ',' << fmt_double(std::sin(6.0 * x)) << '\n';
  }
  write(kRoot / "sine.csv", csv.str());
  const std::string fixed = " --lambda 1e-3 --bandwidth 0.2 --sigma2 0.01 --grid 501";
  ASSERT_EQ(run("fit --input " + dir("sine.csv") + fixed + " --prior beta:1,1 --out-dir " + dir("flat")), 0);
  ASSERT_EQ(run("fit --input " + dir("sine.csv") + fixed + " --prior beta:2,3 --out-dir " + dir("beta23")), 0);
  std::ifstream a(kRoot / "flat" / "posterior.csv"), b(kRoot / "beta23" / "posterior.csv");
  const PosteriorRows ra = read_posterior_csv(a), rb = read_posterior_csv(b);
  ASSERT_EQ(ra.t.size(), 501u);
  ASSERT_EQ(rb.t.size(), 501u);
  for (std::size_t i = 0; i < ra.t.size(); ++i) {
    const double t = ra.t[i];
    const double log_prior = std::log(12.0 * t * (1 - t) * (1 - t));
    EXPECT_NEAR(rb.log_unnorm[i] - ra.log_unnorm[i], log_prior, 1e-9) << "t = " << t;
  }
}

TEST_F(Cli, SeededSimulationIsByteIdentical) {
  const std::string args = "simulate --preset table3 --n 100 --replicates 3 --seed 7 --out-dir ";
  ASSERT_EQ(run(args + dir("seed7a")), 0);
  ASSERT_EQ(run(args + dir("seed7b") + " --workers 2"), 0);
  for (const char* f : {"report.json", "table1.csv", "table2.csv", "table3.csv"}) {
    const std::string x = slurp(kRoot / "seed7a" / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(kRoot / "seed7b" / f)) << f;
  }
  const json r = json::parse(slurp(kRoot / "seed7a" / "report.json"));
  EXPECT_EQ(r.at("schema"), kReportJsonSchema);
  EXPECT_FALSE(r.contains("runtime"));
  EXPECT_TRUE(r.at("manifest").at("created").is_null());
}

TEST_F(Cli, ValidateExitCodes) {
  EXPECT_EQ(run("validate"), 0);
  EXPECT_EQ(run("validate --n 200"), 2);
  EXPECT_EQ(run("validate --corrupt-kernel"), 4);
  EXPECT_NE(slurp(kRoot / "last_stdout.txt").find("worst"), std::string::npos);
}

TEST_F(Cli, InputErrorsAndRescale) {
  write(kRoot / "bad.csv", "x,y\n0.1,1\n0.2,oops\n");
  EXPECT_EQ(run("fit --input " + dir("bad.csv") + " --out-dir " + dir("bad")), 2);
  EXPECT_NE(slurp(kRoot / "last_stderr.txt").find("line 3"), std::string::npos);
  EXPECT_EQ(run("fit --input " + dir("missing.csv") + " --out-dir " + dir("bad")), 2);
  EXPECT_EQ(run("fit --input " + dir("bad.csv") + " --lambda 1e-3 --out-dir " + dir("bad")), 2);
  EXPECT_EQ(run("simulate --preset nope"), 2);

  std::ostringstream csv;
  csv << "x,y\n";
  for (int i = 0; i < 60; ++i) {
    const double x = 10.0 + 2.0 * i / 59.0;
    csv << fmt_double(x) << ',' << fmt_double(x - 10.0) << '\n';
  }
  write(kRoot / "shifted.csv", csv.str());
  const std::string fixed = " --lambda 1e-3 --bandwidth 0.3 --sigma2 0.01";
  EXPECT_EQ(run("fit --input " + dir("shifted.csv") + fixed + " --out-dir " + dir("shifted")), 2);
  EXPECT_NE(slurp(kRoot / "last_stderr.txt").find("--rescale"), std::string::npos);
  ASSERT_EQ(run("fit --input " + dir("shifted.csv") + fixed + " --rescale --out-dir " + dir("shifted")), 0);
  const json ej = json::parse(slurp(kRoot / "shifted" / "extrema.json"));
  EXPECT_TRUE(ej.at("manifest").at("rescale").at("applied").get<bool>());
  EXPECT_EQ(ej.at("manifest").at("rescale").at("offset"), 10.0);
  EXPECT_EQ(ej.at("manifest").at("rescale").at("scale"), 2.0);
  bool any_boundary = false;
  for (const auto& s : ej.at("segments")) any_boundary = any_boundary || s.at("boundary").get<bool>();
  EXPECT_TRUE(any_boundary);
}
