#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>
#include <unistd.h>

#include "hiercls/cli.hpp"
#include "hiercls/csv.hpp"
#include "hiercls/experiment.hpp"
#include "test_support.hpp"

using namespace hiercls;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hiercls");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

/// Fresh scratch directory shared by the cases below, removed at exit.
struct ScratchDir {
  fs::path path = fs::temp_directory_path() / ("hiercls_cli_test_" + std::to_string(::getpid()));
  ScratchDir() {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

const fs::path& scratch() {
  static const ScratchDir dir;
  return dir.path;
}

std::string p(const std::string& name) { return (scratch() / name).string(); }

std::map<std::string, double> read_summary(const fs::path& path) {
  std::map<std::string, double> out;
  const std::string text = read_file(path);
  for (auto line : text_lines(text)) {
    if (line.empty() || line.front() == '#' || line.rfind("metric,", 0) == 0) continue;
    const auto f = split_csv(line);
    double v = 0.0;
    REQUIRE(parse_double(f[1], v));
    out[std::string(f[0])] = v;
  }
  return out;
}

std::string strip_comments(const std::string& text) {
  std::string out;
  for (auto line : text_lines(text))
    if (line.empty() || line.front() != '#') out += std::string(line) + "\n";
  return out;
}

// Small dataset shared by the training cases.
void ensure_data() {
  static bool done = false;
  if (done) return;
  REQUIRE(cli({"hierarchy", "balanced", "--branching", "2", "--depth", "3", "--out", p("tax.tsv")}).code == 0);
  REQUIRE(cli({"gen-data", "--taxonomy", p("tax.tsv"), "--per-class", "40", "--dim", "6", "--out", p("data/all.csv"),
               "--split-dir", p("data")})
              .code == 0);
  done = true;
}

std::vector<std::string> train_flags(const std::string& out) {
  return {"train", "--taxonomy", p("tax.tsv"), "--train", p("data/train.csv"), "--val", p("data/val.csv"),
          "--steps", "600", "--checkpoint-every", "50", "--discard-before", "100", "--ks", "1,2", "--out", p(out)};
}

std::vector<std::string> with(std::vector<std::string> base, const std::vector<std::string>& extra) {
  base.insert(base.end(), extra.begin(), extra.end());
  return base;
}

void write_sweep_config(const std::string& name, const std::string& body) {
  write_file(p(name),
             "taxonomy=tax.tsv\ntrain=data/train.csv\nval=data/val.csv\nsteps=600\ncheckpoint_every=50\n"
             "discard_before=100\nks=1,2\nworkers=2\n" +
                 body);
}

}  // namespace

TEST_CASE("hierarchy build, export and randomize") {
  write_file(p("dag.tsv"), "R\tX\nX\tA\nR\tA\n");
  write_file(p("classes.txt"), "A\n");
  const auto built = cli({"hierarchy", "build", "--edges", p("dag.tsv"), "--classes", p("classes.txt")});
  REQUIRE(built.code == 0);
  CHECK(strip_comments(built.out) == "R\tA\n");
  CHECK(built.out.find("# classes\tA\n") != std::string::npos);

  write_file(p("small.tsv"), "R\tD\nR\tC\nD\tA\nD\tB\n");
  write_file(p("small_classes.txt"), "A\nB\nC\n");
  REQUIRE(cli({"hierarchy", "build", "--edges", p("small.tsv"), "--classes", p("small_classes.txt"), "--out",
               p("small_tree.tsv")})
              .code == 0);
  const Taxonomy back = load_taxonomy(read_file(p("small_tree.tsv")));
  CHECK(back == hiercls::testing::small_tree());
  const auto exported = cli({"hierarchy", "export", "--taxonomy", p("small_tree.tsv")});
  CHECK(exported.out == read_file(p("small_tree.tsv")));

  write_file(p("edits.tsv"), "A\tR\n");
  REQUIRE(cli({"hierarchy", "build", "--edges", p("small.tsv"), "--classes", p("small_classes.txt"), "--edits",
               p("edits.tsv"), "--out", p("edited.tsv")})
              .code == 0);
  CHECK_FALSE(load_taxonomy(read_file(p("edited.tsv"))).contains("D"));

  REQUIRE(cli({"hierarchy", "balanced", "--branching", "3", "--depth", "2", "--out", p("b.tsv")}).code == 0);
  for (const char* out : {"r1.tsv", "r2.tsv"})
    REQUIRE(cli({"hierarchy", "randomize", "--taxonomy", p("b.tsv"), "--seed", "4", "--out", p(out)}).code == 0);
  CHECK(read_file(p("r1.tsv")) == read_file(p("r2.tsv")));
  CHECK(read_file(p("r1.tsv.perm.csv")) == read_file(p("r2.tsv.perm.csv")));
  CHECK(read_file(p("r1.tsv")) != read_file(p("b.tsv")));

  const auto soft = cli({"hierarchy", "soft-labels", "--taxonomy", p("small_tree.tsv"), "--beta", "1"});
  CHECK(soft.code == 0);
  CHECK(soft.out.find("truth,A,B,C") != std::string::npos);

  const auto dist = cli({"hierarchy", "distance", "--taxonomy", p("small_tree.tsv"), "A", "B"});
  CHECK(dist.out == "lca=D lca_height=1 distance=0.5\n");
}

TEST_CASE("usage and data errors map to exit codes") {
  const auto missing = cli({"hierarchy", "export", "--taxonomy", p("nope.tsv")});
  CHECK(missing.code == kUsageError);
  CHECK(missing.err.find("--taxonomy") != std::string::npos);
  CHECK(cli({}).code == kUsageError);
  CHECK(cli({"frobnicate"}).code == kUsageError);
  CHECK(cli({"--help"}).code == kOk);
  CHECK(cli({"train", "--help"}).code == kOk);

  write_file(p("cyclic.tsv"), "A\tB\nB\tA\n");
  write_file(p("ab.txt"), "A\n");
  const auto cyc = cli({"hierarchy", "build", "--edges", p("cyclic.tsv"), "--classes", p("ab.txt")});
  CHECK(cyc.code == kDataError);
  CHECK(cyc.err.find("cycle") != std::string::npos);

  ensure_data();
  REQUIRE(cli({"hierarchy", "randomize", "--taxonomy", p("tax.tsv"), "--seed", "1", "--out", p("tax_rand.tsv")}).code == 0);
  auto flags = train_flags("mismatch");
  flags[2] = p("tax_rand.tsv");
  const auto mismatch = cli(flags);
  CHECK(mismatch.code == kDataError);
  CHECK(mismatch.err.find("taxonomy") != std::string::npos);
}

TEST_CASE("train writes traces, checkpoints and headers") {
  ensure_data();
  const auto r = cli(train_flags("run_ce"));
  REQUIRE(r.code == 0);
  for (const char* f : {"trace.csv", "summary.csv", "histogram.csv", "selected.csv"}) {
    const std::string text = read_file(scratch() / "run_ce" / f);
    CHECK(text.rfind("# ", 0) == 0);
    CHECK(text.find("taxonomy_hash=") != std::string::npos);
  }
  int checkpoints = 0;
  for (const auto& e : fs::directory_iterator(scratch() / "run_ce" / "checkpoints")) checkpoints += e.is_regular_file();
  CHECK(checkpoints == 5);

  // the cross-entropy limit of HXE gives the same report
  REQUIRE(cli(with(train_flags("run_hxe0"), {"--loss", "hxe", "--alpha", "1e-9"})).code == 0);
  const auto ce = read_summary(scratch() / "run_ce" / "summary.csv");
  const auto hxe = read_summary(scratch() / "run_hxe0" / "summary.csv");
  REQUIRE(ce.size() == hxe.size());
  for (const auto& [name, value] : ce) CHECK(std::abs(value - hxe.at(name)) < 1e-6);

  // the per-sibling-softmax baseline
  CHECK(cli(with(train_flags("run_yolo"), {"--head", "conditional", "--loss", "hxe", "--alpha", "0"})).code == 0);
  CHECK(cli(with(train_flags("run_bad"), {"--head", "conditional", "--loss", "soft", "--beta", "4"})).code ==
        kDataError);
}

TEST_CASE("train is byte-for-byte reproducible") {
  ensure_data();
  REQUIRE(cli(with(train_flags("det_a"), {"--loss", "soft", "--beta", "10", "--seed", "3"})).code == 0);
  REQUIRE(cli(with(train_flags("det_b"), {"--loss", "soft", "--beta", "10", "--seed", "3"})).code == 0);
  for (const auto& e : fs::recursive_directory_iterator(scratch() / "det_a")) {
    if (!e.is_regular_file()) continue;
    const fs::path rel = fs::relative(e.path(), scratch() / "det_a");
    CHECK(read_file(e.path()) == read_file(scratch() / "det_b" / rel));
  }
}

TEST_CASE("evaluate checkpoints and prediction files") {
  ensure_data();
  if (!fs::exists(scratch() / "run_ce")) REQUIRE(cli(train_flags("run_ce")).code == 0);
  std::vector<std::string> ckpts;
  for (const auto& e : fs::directory_iterator(scratch() / "run_ce" / "checkpoints")) ckpts.push_back(e.path().string());
  std::sort(ckpts.begin(), ckpts.end());

  const auto one = cli({"evaluate", "--taxonomy", p("tax.tsv"), "--data", p("data/test.csv"), "--checkpoint", ckpts[0],
                        "--ks", "1,2", "--out", p("eval_one")});
  REQUIRE(one.code == 0);
  const auto again = cli({"evaluate", "--taxonomy", p("tax.tsv"), "--predictions", p("eval_one/predictions.csv"),
                          "--ks", "1,2", "--out", p("eval_pred")});
  REQUIRE(again.code == 0);
  CHECK(read_file(p("eval_one/report.csv")) == read_file(p("eval_pred/report.csv")));

  std::vector<std::string> args{"evaluate", "--taxonomy", p("tax.tsv"), "--data", p("data/val.csv"), "--ks", "1,2",
                                "--out", p("eval_all")};
  for (const auto& c : ckpts) args.insert(args.end(), {"--checkpoint", c});
  REQUIRE(cli(args).code == 0);
  // the selected checkpoints scored on the validation set reproduce the training summary
  CHECK(strip_comments(read_file(p("eval_all/summary.csv"))) ==
        strip_comments(read_file(p("run_ce/summary.csv"))));
  CHECK(strip_comments(read_file(p("eval_all/histogram.csv"))) ==
        strip_comments(read_file(p("run_ce/histogram.csv"))));

  const auto wrong = cli({"evaluate", "--taxonomy", p("tax.tsv"), "--data", p("data/test.csv"), "--checkpoint",
                          ckpts[0], "--loss-taxonomy", p("tax_rand.tsv"), "--out", p("eval_wrong")});
  CHECK(wrong.code == kDataError);
  CHECK(cli({"evaluate", "--taxonomy", p("tax.tsv"), "--out", p("eval_none")}).code == kUsageError);
}

TEST_CASE("a one-point sweep equals train") {
  ensure_data();
  REQUIRE(cli(with(train_flags("single"), {"--loss", "hxe", "--alpha", "0.3"})).code == 0);
  write_sweep_config("one.cfg", "loss=hxe\ngrid=0.3\nout=sweep_one\n");
  const auto r = cli({"sweep", "--config", p("one.cfg")});
  REQUIRE(r.code == 0);
  for (const char* f : {"trace.csv", "summary.csv", "histogram.csv", "selected.csv"})
    CHECK(strip_comments(read_file(scratch() / "sweep_one" / "true" / "hxe_0.3" / f)) ==
          strip_comments(read_file(scratch() / "single" / f)));
}

TEST_CASE("default grid, randomized arm, failures and determinism") {
  ensure_data();
  write_sweep_config("grid.cfg", "loss=hxe\nout=sweep_grid\n");
  REQUIRE(cli({"sweep", "--config", p("grid.cfg")}).code == 0);
  const std::string table = read_file(p("sweep_grid/table.csv"));
  const auto lines = text_lines(table);
  std::vector<double> params;
  for (auto line : lines) {
    if (line.empty() || line.front() == '#' || line.rfind("method,", 0) == 0) continue;
    double v = 0.0;
    REQUIRE(parse_double(split_csv(line)[2], v));
    params.push_back(v);
  }
  CHECK(params == std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9});

  write_sweep_config("paired.cfg", "loss=soft\ngrid=4,30\nrandomize_seed=5\nout=sweep_paired\n");
  REQUIRE(cli({"sweep", "--config", p("paired.cfg")}).code == 0);
  const std::string first = read_file(p("sweep_paired/table.csv"));
  CHECK(first.find("soft,random,4,") != std::string::npos);
  CHECK(first.find("soft,true,30,") != std::string::npos);
  REQUIRE(cli({"sweep", "--config", p("paired.cfg"), "--workers", "1"}).code == 0);
  CHECK(read_file(p("sweep_paired/table.csv")) == first);

  write_sweep_config("broken.cfg", "loss=hxe\ngrid=0.5,-1\nout=sweep_broken\n");
  const auto broken = cli({"sweep", "--config", p("broken.cfg")});
  CHECK(broken.code == kPartialSweep);
  CHECK(fs::exists(p("sweep_broken/failures.txt")));
  CHECK(read_file(p("sweep_broken/table.csv")).find("hxe,true,0.5,") != std::string::npos);
}

TEST_CASE("report merges tables and normalizes histograms") {
  write_file(p("t1.csv"), "# a\nmethod,taxonomy,parameter,top1_error,top1_error_hw\nhxe,true,0.1,0.25,0.01\n");
  write_file(p("t2.csv"), "# b\nmethod,taxonomy,parameter,top1_error,top1_error_hw\nsoft,true,4,0.5,0.02\n");
  write_file(p("t3.csv"), "method,taxonomy,parameter,top5_error,top5_error_hw\nsoft,true,4,0.5,0.02\n");
  const auto single = cli({"report", "--tables", p("t1.csv")});
  REQUIRE(single.code == 0);
  CHECK(strip_comments(single.out) ==
        "source,method,taxonomy,parameter,metric,mean,half_width\n" + p("t1.csv") + ",hxe,true,0.1,top1_error,0.25,0.01\n");
  const auto both = cli({"report", "--tables", p("t1.csv"), p("t2.csv")});
  REQUIRE(both.code == 0);
  CHECK(both.out.find(p("t2.csv") + ",soft,true,4,top1_error,0.5,0.02\n") != std::string::npos);
  CHECK(cli({"report", "--tables", p("t1.csv"), p("t3.csv")}).code == kDataError);

  write_file(p("h.csv"), "# x\nheight,count\n1,1\n2,1\n");
  const auto h = cli({"report", "--histograms", p("h.csv"), "--histogram-out", p("freq.csv")});
  REQUIRE(h.code == 0);
  CHECK(strip_comments(read_file(p("freq.csv"))) ==
        "source,height,count,frequency\n" + p("h.csv") + ",1,1,0.5\n" + p("h.csv") + ",2,1,0.5\n");
}

TEST_CASE("confidence half-width on a fixed 5-tuple") {
  Eigen::VectorXd v(5);
  v << 0.30, 0.32, 0.31, 0.35, 0.29;
  // mean 0.314, squared deviations sum 0.00212, sample variance 0.00053
  CHECK(half_width_95(v) == doctest::Approx(1.96 * std::sqrt(0.00053) / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(half_width_95(Eigen::VectorXd::Constant(1, 0.4)) == 0.0);
}
