#include "crk/cli.hpp"
#include "crk/io.hpp"
#include "crk/rng.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

using namespace crk;
namespace fs = std::filesystem;

namespace {

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("crk_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string write(const std::string& name, const std::string& text) {
    std::ofstream(path(name)) << text;
    return path(name);
  }
  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "crk");
    return cli_main(args);
  }

  // Mixed dataset with a signal in x1 and g.
  void write_problem(int n) {
    Rng rng(5);
    std::normal_distribution<double> g;
    std::ostringstream data, resp;
    data << "x1,x2,x3,g\n";
    resp << "y\n";
    for (int i = 0; i < n; ++i) {
      const double a = g(rng), b = g(rng), c = g(rng);
      const char* lvl = i % 3 == 0 ? "u" : (i % 3 == 1 ? "v" : "w");
      data << a << "," << b << "," << c << "," << lvl << "\n";
      resp << 3 * a + (i % 3 == 0 ? 2.0 : 0.0) + 0.5 * g(rng) << "\n";
    }
    write("data.csv", data.str());
    write("y.csv", resp.str());
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, SelectFixtureSelectsFive) {
  write("w.csv", "feature,w,method\na,5,lcd\nb,4,lcd\nc,3,lcd\nd,2,lcd\ne,1,lcd\nf,-1,lcd\n");
  ASSERT_EQ(run({"select", "--q", "0.5", "--offset", "1", path("w.csv")}), 0);
  const auto t = read_csv(path("selection.csv"));
  int selected = 0;
  for (const auto& r : t.rows) selected += r[1] == "true";
  EXPECT_EQ(selected, 5);
  EXPECT_EQ(t.rows.size(), 6u);
  EXPECT_EQ(t.rows[5][1], "false");
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}), 1);
  EXPECT_EQ(run({"frobnicate"}), 1);
  EXPECT_EQ(run({"select"}), 1);
  EXPECT_EQ(run({"select", "--q", "abc", path("w.csv")}), 1);
  write("w.csv", "feature,w\na,1\n");
  EXPECT_EQ(run({"select", "--q", "1.5", path("w.csv")}), 1);
  EXPECT_EQ(run({"select", "--offset", "2", path("w.csv")}), 1);
  write("bad.csv", "feature,w\na,oops\n");
  EXPECT_EQ(run({"select", path("bad.csv")}), 2);
  EXPECT_EQ(run({"--help"}), 0);
}

TEST_F(CliTest, MissingInputLeavesNoOutput) {
  EXPECT_EQ(run({"knockoff", "--data", path("nope.csv"), "--seed", "1", "--out", path("k.csv")}), 2);
  EXPECT_FALSE(fs::exists(path("k.csv")));
  EXPECT_FALSE(fs::exists(path("k.csv.tmp")));
  EXPECT_EQ(run({"select", path("missing.csv"), "--out", path("s.csv")}), 2);
  EXPECT_FALSE(fs::exists(path("s.csv")));
}

TEST_F(CliTest, BadCellIsADataError) {
  write("d.csv", "a,b\n1,2\n3,4\n5,6\n");
  write("s.toml", "[[column]]\nname = \"a\"\n[[column]]\nname = \"b\"\n");
  write("e.csv", "a,b\n1,2\nx,4\n5,6\n");
  EXPECT_EQ(run({"knockoff", "--data", path("e.csv"), "--schema", path("s.toml"), "--seed", "1", "--method",
                 "second-order", "--out", path("k.csv")}),
            2);
  EXPECT_FALSE(fs::exists(path("k.csv")));
}

TEST_F(CliTest, PipelineMatchesManualStages) {
  write_problem(120);
  const std::vector<std::string> common{"--data", path("data.csv"), "--seed", "11", "--trees", "20"};
  auto with = [&](std::vector<std::string> head, std::vector<std::string> tail) {
    head.insert(head.end(), common.begin(), common.end());
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  ASSERT_EQ(run(with({"pipeline"}, {"--response", path("y.csv"), "--out-dir", path("pipe")})), 0);
  ASSERT_EQ(run(with({"knockoff"}, {"--out", path("k.csv")})), 0);
  ASSERT_EQ(run(with({"stats"}, {"--knockoffs", path("k.csv"), "--response", path("y.csv"), "--out", path("w.csv")})), 0);
  ASSERT_EQ(run({"select", path("w.csv")}), 0);
  EXPECT_EQ(slurp(path("pipe/knockoffs.csv")), slurp(path("k.csv")));
  EXPECT_EQ(slurp(path("pipe/w.csv")), slurp(path("w.csv")));
  EXPECT_EQ(slurp(path("pipe/selection.csv")), slurp(path("selection.csv")));
  const auto w = read_w(path("w.csv"));
  EXPECT_EQ(w.w.size(), 4);
  EXPECT_GT(w.w[0], 0.0);
}

TEST_F(CliTest, PipelineIsThreadIndependent) {
  write_problem(80);
  for (const char* t : {"1", "4"})
    ASSERT_EQ(run({"--threads", t, "pipeline", "--data", path("data.csv"), "--response", path("y.csv"), "--seed", "3",
                   "--trees", "10", "--statistic", "mald-forest", "--out-dir", path(std::string("t") + t)}),
              0);
  for (const char* f : {"knockoffs.csv", "w.csv", "selection.csv"})
    EXPECT_EQ(slurp(path(std::string("t1/") + f)), slurp(path(std::string("t4/") + f))) << f;
}

TEST_F(CliTest, SimulateWritesOneRowPerReplicate) {
  write("sim.toml", "seed = 7\nn = 128\np = 32\nbeta = 0.0\nreps = 5\ntiming = false\n");
  ASSERT_EQ(run({"simulate", "--config", path("sim.toml"), "--out", path("sim.csv")}), 0);
  const auto t = read_csv(path("sim.csv"));
  EXPECT_EQ(t.header, (std::vector<std::string>{"rep", "method", "statistic", "q", "fdp", "power", "n_selected", "seconds"}));
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_EQ(t.rows[0][1], "second-order");
  EXPECT_EQ(t.rows[0][7], "0");
  ASSERT_EQ(run({"simulate", "--config", path("sim.toml"), "--out", path("again.csv")}), 0);
  EXPECT_EQ(slurp(path("sim.csv")), slurp(path("again.csv")));
  write("noseed.toml", "n = 128\n");
  EXPECT_EQ(run({"simulate", "--config", path("noseed.toml"), "--out", path("x.csv")}), 2);
  write("badkey.toml", "seed = 1\nknockoff = \"magic\"\n");
  EXPECT_EQ(run({"simulate", "--config", path("badkey.toml"), "--out", path("x.csv")}), 2);
  EXPECT_EQ(run({"simulate", "--config", path("sim.toml")}), 1);
}

TEST_F(CliTest, CvAndTransformAge) {
  write("ages.csv", "id,age\n1,0.94\n2,1.2\n3,2.46\n");
  ASSERT_EQ(run({"transform-age", "--data", path("ages.csv"), "--column", "age", "--into", "f", "--out", path("t.csv")}), 0);
  const auto t = read_csv(path("t.csv"));
  ASSERT_EQ(t.header.size(), 3u);
  EXPECT_NEAR(*parse_double(t.rows[0][2]), 0.0, 1e-12);
  EXPECT_NEAR(*parse_double(t.rows[2][2]), 1.0 + std::log(1.26), 1e-12);
  write("neg.csv", "age\n-1\n");
  EXPECT_EQ(run({"transform-age", "--data", path("neg.csv"), "--column", "age", "--out", path("n.csv")}), 2);

  write_problem(100);
  ASSERT_EQ(run({"cv", "--data", path("data.csv"), "--response", path("y.csv"), "--select", "x1,g", "--k", "5", "--seed",
                 "2", "--out", path("cv.csv")}),
            0);
  const auto cv = read_csv(path("cv.csv"));
  ASSERT_EQ(cv.rows.size(), 6u);
  EXPECT_EQ(cv.rows.back()[0], "mean");
  EXPECT_LT(*parse_double(cv.rows.back()[1]), 1.0);
  EXPECT_EQ(run({"cv", "--data", path("data.csv"), "--response", path("y.csv"), "--select", "nope", "--seed", "2",
                 "--out", path("cv2.csv")}),
            2);
}

TEST_F(CliTest, BinaryReportsExitCodes) {
  const std::string bin = CRK_CLI_PATH;
  auto status = [&](const std::string& args) {
    const int s = std::system((bin + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
  };
  EXPECT_EQ(status("--help"), 0);
  EXPECT_EQ(status("bogus"), 1);
  EXPECT_EQ(status("select " + path("missing.csv")), 2);
}
