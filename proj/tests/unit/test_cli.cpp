#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "helpers.hpp"
#include "ulao/checkpoint.hpp"
#include "ulao/config.hpp"

using namespace ulao::testing;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run ulao_cli(const std::string& args, const std::string& env = "") {
  const fs::path log = fs::path(ULAO_SCRATCH_DIR) / "cli_last.txt";
  fs::create_directories(log.parent_path());
  const std::string cmd = env + " \"" ULAO_CLI "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(log);
  return r;
}

const char* kConfig = R"({
  "data": {"synthetic": {"n_attr": 5, "n_obj": 4, "d_latent": 8, "tokens": 4, "unseen_count": 4,
                         "samples_per_pair": 4, "distractor_rate": 0.5, "seed": 1}},
  "model": {"d_v": 8, "d": 8, "d_e": 8, "heads": 2, "mixer_hidden": 8},
  "train": {"epochs": 2, "batch_size": 8, "lr": 0.01, "tau": 0.1}
})";

fs::path write_config(const fs::path& dir) {
  std::ofstream(dir / "config.json") << kConfig;
  return dir / "config.json";
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

}  // namespace

TEST_CASE("help and usage errors") {
  CHECK(ulao_cli("--help").code == 0);
  CHECK(ulao_cli("train --help").code == 0);
  CHECK(ulao_cli("").code == 1);
  CHECK(ulao_cli("frobnicate").code == 1);
  const auto dir = scratch("cli_usage");
  std::ofstream(dir / "bad.json") << R"({"train": {"learnig_rate": 1}})";
  const Run r = ulao_cli("train --config " + (dir / "bad.json").string() + " --out " + (dir / "o").string());
  CHECK(r.code == 1);
  CHECK(r.out.find("train.learnig_rate") != std::string::npos);
}

TEST_CASE("gen-data") {
  const auto dir = scratch("cli_gen");
  const auto cfg = write_config(dir);
  REQUIRE(ulao_cli("gen-data --config " + cfg.string() + " --out " + (dir / "a").string()).code == 0);
  REQUIRE(ulao_cli("gen-data --config " + cfg.string() + " --out " + (dir / "b").string()).code == 0);
  CHECK(same_tree(dir / "a", dir / "b"));
  const Run again = ulao_cli("gen-data --config " + cfg.string() + " --out " + (dir / "a").string());
  CHECK(again.code == 1);
  CHECK(again.out.find("--force") != std::string::npos);
  CHECK(ulao_cli("gen-data --config " + cfg.string() + " --out " + (dir / "a").string() + " --force").code == 0);

  const ulao::Dataset disk = ulao::load_dataset(dir / "a" / "manifest.json");
  const ulao::Dataset mem = ulao::generate_synthetic(ulao::parse_run_config(nlohmann::json::parse(kConfig)).data.synthetic.value());
  REQUIRE(disk.train.size() == mem.train.size());
  for (std::size_t i = 0; i < mem.train.size(); ++i) CHECK(disk.train[i].payload == mem.train[i].payload);

  // ULAO_SEED replaces the synthetic seed.
  REQUIRE(ulao_cli("gen-data --config " + cfg.string() + " --out " + (dir / "c").string(), "ULAO_SEED=5").code == 0);
  CHECK_FALSE(same_tree(dir / "a", dir / "c"));
}

TEST_CASE("train, eval and inspect") {
  const auto dir = scratch("cli_train");
  const auto cfg = write_config(dir);
  const std::string c = " --config " + cfg.string();
  REQUIRE(ulao_cli("train" + c + " --out " + (dir / "r1").string()).code == 0);
  REQUIRE(ulao_cli("train" + c + " --out " + (dir / "r2").string()).code == 0);
  for (const char* f : {"config.json", "history.csv", "thresholds.csv", "epochs.csv"}) {
    CHECK(fs::exists(dir / "r1" / f));
  }
  CHECK(slurp(dir / "r1" / "history.csv") == slurp(dir / "r2" / "history.csv"));
  CHECK(same_tree(dir / "r1" / "best", dir / "r2" / "best"));

  SUBCASE("variant C history has no attribute/object gradient columns") {
    REQUIRE(ulao_cli("train" + c + " --out " + (dir / "rc").string() + " --train.variant C").code == 0);
    const std::string head = first_line(slurp(dir / "rc" / "history.csv"));
    CHECK(head.find("grad_norm.prompt.w_ca") != std::string::npos);
    CHECK(head.find("attn_a") == std::string::npos);
    CHECK(head.find("prompt.w_o,") == std::string::npos);
    CHECK(first_line(slurp(dir / "r1" / "history.csv")).find("grad_norm.attn_a.wq") != std::string::npos);
  }
  SUBCASE("resume continues the step counter") {
    REQUIRE(ulao_cli("train" + c + " --out " + (dir / "rr").string() + " --resume " + (dir / "r1" / "final").string() +
                     " --train.epochs 1")
                .code == 0);
    std::istringstream h(slurp(dir / "rr" / "history.csv"));
    std::string line;
    std::getline(h, line);
    std::getline(h, line);
    const long first_step = std::stol(line.substr(0, line.find(',')));
    const ulao::ModelState prev = ulao::load_checkpoint(dir / "r1" / "final");
    CHECK(first_step == prev.step);
  }
  SUBCASE("eval is repeatable and runs in the open world") {
    const std::string ck = " --checkpoint " + (dir / "r1" / "best").string();
    const Run a = ulao_cli("eval" + ck + c + " --out " + (dir / "e1").string());
    REQUIRE(a.code == 0);
    CHECK(a.out.find("AUC=") != std::string::npos);
    REQUIRE(ulao_cli("eval" + ck + c + " --out " + (dir / "e2").string()).code == 0);
    CHECK(slurp(dir / "e1" / "report.json") == slurp(dir / "e2" / "report.json"));
    CHECK(slurp(dir / "e1" / "predictions.tsv") == slurp(dir / "e2" / "predictions.tsv"));
    const Run ow = ulao_cli("eval" + ck + c + " --world ow --out " + (dir / "e3").string());
    CHECK(ow.code == 0);
    CHECK(ow.out.find("world=ow") != std::string::npos);
  }
  SUBCASE("vocabulary mismatch exits with a data error") {
    const Run r = ulao_cli("eval --checkpoint " + (dir / "r1" / "best").string() + c +
                           " --data.synthetic.n_attr 6 --out " + (dir / "e4").string());
    CHECK(r.code == 2);
    CHECK(r.out.find("vocabulary mismatch") != std::string::npos);
  }
  SUBCASE("inspect") {
    REQUIRE(ulao_cli("train" + c + " --out " + (dir / "r0").string() + " --train.epochs 0").code == 0);
    const Run th = ulao_cli("inspect-thresholds --checkpoint " + (dir / "r0" / "final").string());
    REQUIRE(th.code == 0);
    std::istringstream in(th.out);
    std::string line;
    std::getline(in, line);
    CHECK(line == "attr\tobj\tth\tup\tlast_update_step");
    int rows = 0;
    while (std::getline(in, line)) {
      ++rows;
      std::istringstream f(line);
      std::string a, o, v;
      f >> a >> o >> v;
      CHECK(v == "0");
    }
    CHECK(rows == 20);

    const Run hints = ulao_cli("inspect hints --checkpoint " + (dir / "r1" / "best").string() + c + " --limit 5");
    REQUIRE(hints.code == 0);
    std::istringstream hs(hints.out);
    std::getline(hs, line);
    int n = 0;
    while (std::getline(hs, line)) {
      ++n;
      const double sum = std::stod(line.substr(line.rfind('\t') + 1));
      CHECK(sum <= 1.0 + 1e-9);
    }
    CHECK(n == 5);

    const Run pr = ulao_cli("inspect-prompts --checkpoint " + (dir / "r1" / "best").string());
    REQUIRE(pr.code == 0);
    CHECK(pr.out.find("attribute\tattr0\t5\t") != std::string::npos);
    CHECK(pr.out.find("object\tobj0\t4\t") != std::string::npos);
    CHECK(pr.out.find(":hint:") != std::string::npos);

    CHECK(ulao_cli("inspect nothing --checkpoint " + (dir / "r1" / "best").string()).code == 1);
    CHECK(ulao_cli("inspect prompts --checkpoint " + (dir / "nowhere").string()).code == 2);
  }
}
