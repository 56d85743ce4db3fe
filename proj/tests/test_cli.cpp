#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "toy_dataset.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(MRKD_CLI_PATH) + " " + args + " 2>/dev/null";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult res;
  char buf[512];
  while (fgets(buf, sizeof(buf), pipe)) res.out += buf;
  const int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f.good());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int line_count(const std::string& text) {
  int n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

const std::string& fixture_root() {
  static const std::string root = [] {
    std::string r = toy::fresh_temp_dir("cli_fixture");
    toy::ToyDatasetSpec spec;
    spec.n_train = 6;
    spec.n_test_normal = 2;
    spec.n_test_abnormal = 2;
    spec.image_size = 48;
    toy::write_toy_dataset(r, "tex", spec);
    return r;
  }();
  return root;
}

std::string base_flags(const std::string& out_dir) {
  return "--data-root " + fixture_root() +
         " --layout mvtec --category tex --backbone resnet18 --image-size 48"
         " --batch-size 4 --seed 5 --set blend=paste --set foreground=full --out " +
         out_dir;
}

}  // namespace

TEST_CASE("cli: train, eval, predict, plot-dist pipeline") {
  const std::string out1 = toy::fresh_temp_dir("cli_out1");
  const std::string out2 = toy::fresh_temp_dir("cli_out2");

  // train writes a checkpoint and a one-row loss csv
  CliResult t1 = run_cli("train " + base_flags(out1) + " --epochs 1");
  CHECK(t1.code == 0);
  CHECK(fs::exists(out1 + "/tex/model.ckpt"));
  REQUIRE(fs::exists(out1 + "/tex/loss.csv"));
  CHECK(line_count(slurp(out1 + "/tex/loss.csv")) == 2);  // header + 1 epoch

  // identical seeds give byte-identical loss curves
  CliResult t2 = run_cli("train " + base_flags(out2) + " --epochs 1");
  CHECK(t2.code == 0);
  CHECK(slurp(out1 + "/tex/loss.csv") == slurp(out2 + "/tex/loss.csv"));

  // eval writes the report pair; one category row plus the average row
  CliResult e1 = run_cli("eval " + base_flags(out1) + " --dump-scores --save-maps");
  CHECK(e1.code == 0);
  REQUIRE(fs::exists(out1 + "/report.csv"));
  const std::string report = slurp(out1 + "/report.csv");
  CHECK(line_count(report) == 3);  // header + tex + average
  CHECK(report.find("tex,") != std::string::npos);
  CHECK(report.find("average,") != std::string::npos);
  CHECK(fs::exists(out1 + "/report.json"));
  CHECK(fs::exists(out1 + "/tex/scores.csv"));
  CHECK(fs::exists(out1 + "/tex/maps/0000.map"));
  CHECK(fs::exists(out1 + "/tex/maps/0000.png"));

  // eval is deterministic given the same checkpoint and seeds
  CliResult e2 = run_cli("eval " + base_flags(out2) + " --dump-scores --save-maps");
  CHECK(e2.code == 0);
  CHECK(slurp(out1 + "/report.csv") == slurp(out2 + "/report.csv"));
  CHECK(slurp(out1 + "/report.json") == slurp(out2 + "/report.json"));
  CHECK(slurp(out1 + "/tex/maps/0000.map") == slurp(out2 + "/tex/maps/0000.map"));

  // a different layer subset changes the report
  CliResult e3 = run_cli("eval " + base_flags(out2) + " --layers 2");
  CHECK(e3.code == 0);
  CHECK(slurp(out1 + "/report.csv") != slurp(out2 + "/report.csv"));

  // fpr limit flows into the report metadata
  CliResult e4 = run_cli("eval " + base_flags(out2) + " --fpr-limit 1.0");
  CHECK(e4.code == 0);
  CHECK(slurp(out2 + "/report.json").find("\"fpr_limit\": 1.0") != std::string::npos);

  // predict prints a non-negative score and is byte-deterministic
  const std::string img = fixture_root() + "/tex/test/defect/000.png";
  const std::string pout1 = toy::fresh_temp_dir("cli_pred1");
  const std::string pout2 = toy::fresh_temp_dir("cli_pred2");
  CliResult p1 = run_cli("predict --checkpoint " + out1 + "/tex/model.ckpt --image " + img +
                         " --out " + pout1);
  CliResult p2 = run_cli("predict --checkpoint " + out1 + "/tex/model.ckpt --image " + img +
                         " --out " + pout2);
  CHECK(p1.code == 0);
  CHECK(p2.code == 0);
  CHECK(std::stod(p1.out) >= 0.0);
  CHECK(p1.out == p2.out);
  REQUIRE(fs::exists(pout1 + "/000_heatmap.png"));
  CHECK(slurp(pout1 + "/000_heatmap.png") == slurp(pout2 + "/000_heatmap.png"));

  // plot-dist renders one figure per category from the score dumps
  CliResult d1 = run_cli("plot-dist --out " + out1);
  CHECK(d1.code == 0);
  CHECK(fs::exists(out1 + "/tex/score_dist.png"));
}

TEST_CASE("cli: validation and error exit codes") {
  const std::string out = toy::fresh_temp_dir("cli_err");
  CHECK(run_cli("train " + base_flags(out) + " --epochs 0").code == 2);
  CHECK(run_cli("train " + base_flags(out) + " --epochs 1 --set oops=1").code == 2);
  CHECK(run_cli("train " + base_flags(out) + " --epochs 1 --set lambda=2").code == 2);
  CHECK(run_cli("train --epochs 1 --data-root /nonexistent --layout mvtec --category tex --out " +
                out)
            .code == 3);
  // no checkpoint trained into this directory yet
  CHECK(run_cli("eval " + base_flags(out)).code == 4);
  CHECK(run_cli("predict --checkpoint " + out + "/missing.ckpt --image " + fixture_root() +
                "/tex/test/defect/000.png --out " + out)
            .code == 4);
  CHECK(run_cli("predict --checkpoint x.ckpt").code == 2);  // missing required --image
  CHECK(run_cli("plot-dist --out " + out + "/empty_dir").code == 3);
}

TEST_CASE("cli: config file assembly and precedence") {
  const std::string out = toy::fresh_temp_dir("cli_cfg");
  const std::string cfg_path = out + "/run.cfg";
  {
    std::ofstream f(cfg_path);
    f << "# fixture config\n";
    f << "epochs = 3\n";
    f << "backbone = resnet18\n";
    f << "image_size = 48\n";
    f << "batch_size = 4\n";
    f << "blend = paste\n";
    f << "foreground = full\n";
    f << "seed = 5\n";
  }
  // --set overrides the file value
  CliResult t = run_cli("train --config " + cfg_path + " --set epochs=2 --data-root " +
                        fixture_root() + " --layout mvtec --category tex --out " + out);
  CHECK(t.code == 0);
  CHECK(line_count(slurp(out + "/tex/loss.csv")) == 3);  // header + 2 epochs

  CHECK(run_cli("train --config " + out + "/missing.cfg --category tex --out " + out).code == 2);
}

TEST_CASE("cli: sweep over one axis") {
  const std::string out = toy::fresh_temp_dir("cli_sweep");
  CliResult s1 = run_cli("sweep " + base_flags(out) + " --epochs 1 --axis lambda --values 0,0.2");
  CHECK(s1.code == 0);
  REQUIRE(fs::exists(out + "/sweep.csv"));
  const std::string csv = slurp(out + "/sweep.csv");
  CHECK(line_count(csv) == 3);  // header + 2 settings
  CHECK(csv.find("lambda,0,") != std::string::npos);
  CHECK(csv.find("lambda,0.2,") != std::string::npos);

  const std::string out2 = toy::fresh_temp_dir("cli_sweep2");
  CliResult s2 = run_cli("sweep " + base_flags(out2) + " --epochs 1 --axis layers --values '1;1,2'");
  CHECK(s2.code == 0);
  CHECK(line_count(slurp(out2 + "/sweep.csv")) == 3);

  CHECK(run_cli("sweep " + base_flags(out2) + " --axis lambda,alpha --values 0").code == 2);
  CHECK(run_cli("sweep " + base_flags(out2) + " --axis nope --values 0").code == 2);
}
