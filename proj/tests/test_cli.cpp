#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  const auto out_path = fs::temp_directory_path() / "master_cli_out.txt";
  const std::string cmd =
      std::string(MASTER_CLI_PATH) + " " + args + " > " + out_path.string() + " 2>&1";
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(raw);
  std::ifstream f(out_path);
  std::stringstream ss;
  ss << f.rdbuf();
  r.out = ss.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_micro_config(const fs::path& p) {
  std::ofstream f(p);
  f << "# nano model for CLI smoke tests\n"
       "channels=4,8,8,8,8,8\n"
       "residual_blocks=1,1,1,1\n"
       "magc_heads=2\n"
       "bottleneck_ratio=4\n"
       "d_model=8\n"
       "heads=2\n"
       "decoder_blocks=1\n"
       "d_ff=16\n"
       "dropout=0.1\n"
       "max_len=12\n"
       "charset=0123456789\n"
       "lr=0.001\n"
       "batch_size=4\n"
       "epochs=1\n"
       "seed=3\n";
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  CHECK(run("").exit_code == 1);
  CHECK(run("frobnicate").exit_code == 1);
  CHECK(run("synth").exit_code == 1);                    // missing --out
  CHECK(run("recognize --checkpoint x.ckpt").exit_code == 1);  // no images
  CHECK(run("train --out m.ckpt").exit_code == 1);       // no manifest
  CHECK(run("--help").exit_code == 0);
}

TEST_CASE("synth writes a deterministic corpus with manifest") {
  TempDir dir("master_cli_synth");
  const std::string out1 = (dir.path / "c1").string();
  const std::string out2 = (dir.path / "c2").string();
  const std::string args = " --count 10 --min-len 2 --max-len 5 --seed 9";
  CHECK(run("synth --out " + out1 + args).exit_code == 0);
  CHECK(run("synth --out " + out2 + args).exit_code == 0);

  int files = 0;
  for (const auto& e : fs::directory_iterator(out1)) {
    if (e.path().extension() == ".pgm") ++files;
  }
  CHECK(files == 10);
  CHECK(read_file(fs::path(out1) / "manifest.tsv") == read_file(fs::path(out2) / "manifest.tsv"));
  CHECK(read_file(fs::path(out1) / "00003.pgm") == read_file(fs::path(out2) / "00003.pgm"));

  // manifest rows respect the length bounds
  std::istringstream manifest(read_file(fs::path(out1) / "manifest.tsv"));
  std::string line;
  int rows = 0;
  while (std::getline(manifest, line)) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    const auto label = line.substr(tab + 1);
    CHECK(label.size() >= 2);
    CHECK(label.size() <= 5);
    ++rows;
  }
  CHECK(rows == 10);
}

TEST_CASE("train/recognize/resume cycle on a nano model") {
  TempDir dir("master_cli_train");
  const std::string corpus = (dir.path / "corpus").string();
  REQUIRE(run("synth --out " + corpus + " --count 8 --min-len 2 --max-len 3 --seed 5").exit_code ==
          0);
  write_micro_config(dir.path / "model.cfg");

  const std::string ckpt = (dir.path / "model.ckpt").string();
  const RunResult t0 = run("train --manifest " + corpus + "/manifest.tsv --config " +
                           (dir.path / "model.cfg").string() + " --out " + ckpt + " --epochs 0");
  CHECK(t0.exit_code == 0);
  CHECK(fs::exists(ckpt));

  const RunResult t1 = run("train --manifest " + corpus + "/manifest.tsv --config " +
                           (dir.path / "model.cfg").string() + " --out " + ckpt + " --epochs 2");
  CHECK(t1.exit_code == 0);
  CHECK(t1.out.find("epoch\tloss") != std::string::npos);

  const RunResult rec =
      run("recognize --checkpoint " + ckpt + " " + corpus + "/00000.pgm " + corpus + "/00001.pgm");
  CHECK(rec.exit_code == 0);
  CHECK(rec.out.find("00000.pgm\t") != std::string::npos);

  const RunResult rec_rot =
      run("recognize --rotate --checkpoint " + ckpt + " " + corpus + "/00000.pgm");
  CHECK(rec_rot.exit_code == 0);

  // unreadable image: per-file error line, data exit code
  const RunResult bad = run("recognize --checkpoint " + ckpt + " " + corpus + "/missing.pgm");
  CHECK(bad.exit_code == 2);
  CHECK(bad.out.find("ERROR") != std::string::npos);

  const RunResult resumed = run("train --manifest " + corpus + "/manifest.tsv --resume " + ckpt +
                                " --out " + (dir.path / "resumed.ckpt").string() + " --epochs 1");
  CHECK(resumed.exit_code == 0);
}

TEST_CASE("train rejects unknown config keys") {
  TempDir dir("master_cli_badcfg");
  const std::string corpus = (dir.path / "corpus").string();
  REQUIRE(run("synth --out " + corpus + " --count 2 --seed 1").exit_code == 0);
  {
    std::ofstream f(dir.path / "bad.cfg");
    f << "d_modle=8\n";  // typo
  }
  const RunResult r = run("train --manifest " + corpus + "/manifest.tsv --config " +
                          (dir.path / "bad.cfg").string() + " --out " +
                          (dir.path / "m.ckpt").string());
  CHECK(r.exit_code == 1);
  CHECK(r.out.find("unknown key") != std::string::npos);
}

TEST_CASE("verify runs the three suites and reports a seed-stable summary") {
  const RunResult a = run("verify --trials 5 --seed 123");
  CHECK(a.exit_code == 0);
  CHECK(a.out.find("equivalence: 5/5") != std::string::npos);
  CHECK(a.out.find("gradcheck:") != std::string::npos);
  CHECK(a.out.find("shapes:") != std::string::npos);
  CHECK(a.out.find("overall\tpass") != std::string::npos);

  const RunResult b = run("verify --trials 5 --seed 123");
  CHECK(b.out == a.out);
}

TEST_CASE("bench rejects too few trials and honors minimum warmup") {
  CHECK(run("bench --trials 1").exit_code == 1);
  CHECK(run("bench --trials 19").exit_code == 1);
  CHECK(run("bench --warmup 0 --trials 20").exit_code == 1);
}

TEST_CASE("bench emits a table and csv for a tiny config") {
  TempDir dir("master_cli_bench");
  const std::string csv = (dir.path / "bench.csv").string();
  const RunResult r = run(
      "bench --d-model 16 --heads 2 --blocks 1 --d-ff 16 --memory-len 12 --lengths 2,4 "
      "--trials 20 --warmup 3 --seed 1 --csv " + csv);
  CHECK(r.exit_code == 0);
  CHECK(r.out.find("speedup") != std::string::npos);
  const std::string csv_text = read_file(csv);
  CHECK(csv_text.find("length,naive_mean_ms") != std::string::npos);
  CHECK(csv_text.find("\n2,") != std::string::npos);
  CHECK(csv_text.find("\n4,") != std::string::npos);
}

TEST_CASE("MASTER_SEED environment variable seeds synth") {
  TempDir dir("master_cli_envseed");
  const std::string out1 = (dir.path / "e1").string();
  const std::string out2 = (dir.path / "e2").string();
  const std::string prefix = "MASTER_SEED=31 " + std::string(MASTER_CLI_PATH);
  const auto out_path = (dir.path / "out.txt").string();
  CHECK(WEXITSTATUS(std::system(
            (prefix + " synth --out " + out1 + " --count 3 > " + out_path + " 2>&1").c_str())) ==
        0);
  CHECK(WEXITSTATUS(std::system(
            (prefix + " synth --out " + out2 + " --count 3 > " + out_path + " 2>&1").c_str())) ==
        0);
  CHECK(read_file(fs::path(out1) / "manifest.tsv") == read_file(fs::path(out2) / "manifest.tsv"));
  // explicit --seed beats the environment
  const std::string out3 = (dir.path / "e3").string();
  CHECK(WEXITSTATUS(std::system((prefix + " synth --out " + out3 +
                                 " --count 3 --seed 77 > " + out_path + " 2>&1")
                                    .c_str())) == 0);
  CHECK(read_file(fs::path(out1) / "manifest.tsv") != read_file(fs::path(out3) / "manifest.tsv"));
}
