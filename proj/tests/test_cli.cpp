#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "support.hpp"

namespace {

namespace fs = std::filesystem;

std::string cli_bin() {
  const char* env = std::getenv("EDET_BIN");
  if (!env) SKIP("EDET_BIN not set (run via ctest)");
  return env ? env : "";
}

struct CommandResult {
  int exit_code;
};

CommandResult run_cli(const std::string& args) {
  const std::string cmd = cli_bin() + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return CommandResult{WEXITSTATUS(status)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("edet_cli_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("evaluate on identical files prints perfect scores and exits 0") {
  const std::string data = edet::test::data_dir();
  const std::string gold = data + "/toy/train.jsonl";
  const std::string onto = data + "/toy/ontology.json";
  CHECK(run_cli("evaluate --pred " + gold + " --gold " + gold + " --ontology " + onto).exit_code ==
        0);
}

TEST_CASE("missing files exit with code 1") {
  CHECK(run_cli("evaluate --pred /nope.jsonl --gold /nope.jsonl").exit_code == 1);
  CHECK(run_cli("sample-split --corpus /nope.jsonl --ontology /nope.json --k 2 "
                "--train-out /tmp/a --test-out /tmp/b")
            .exit_code == 1);
}

TEST_CASE("unknown flags are rejected") {
  CHECK(run_cli("evaluate --pred x --gold y --bogus-flag 1").exit_code != 0);
}

TEST_CASE("sample-split is byte-identical across reruns") {
  const std::string data = edet::test::data_dir();
  TempDir tmp;
  const auto t1 = tmp.path / "tr1.jsonl";
  const auto e1 = tmp.path / "te1.jsonl";
  const auto t2 = tmp.path / "tr2.jsonl";
  const auto e2 = tmp.path / "te2.jsonl";
  const std::string base = "sample-split --corpus " + data + "/toy/train.jsonl --ontology " +
                           data + "/toy/ontology.json --k 2 --seed 7 ";
  REQUIRE(run_cli(base + "--train-out " + t1.string() + " --test-out " + e1.string()).exit_code ==
          0);
  REQUIRE(run_cli(base + "--train-out " + t2.string() + " --test-out " + e2.string()).exit_code ==
          0);
  CHECK(slurp(t1) == slurp(t2));
  CHECK(slurp(e1) == slurp(e2));
  CHECK(!slurp(t1).empty());
}

TEST_CASE("inject-null respects the ratio and determinism") {
  const std::string data = edet::test::data_dir();
  TempDir tmp;
  const auto out1 = tmp.path / "o1.jsonl";
  const auto out2 = tmp.path / "o2.jsonl";
  const std::string base = "inject-null --train " + data + "/toy/train.jsonl --pool " + data +
                           "/toy/null_pool.jsonl --ontology " + data +
                           "/toy/ontology.json --ratio 0.5 --seed 3 --no-test-inject ";
  REQUIRE(run_cli(base + "--train-out " + out1.string()).exit_code == 0);
  REQUIRE(run_cli(base + "--train-out " + out2.string()).exit_code == 0);
  const std::string a = slurp(out1);
  CHECK(a == slurp(out2));
  // 20 original lines + round(0.5 * 16 event-bearing) = 8 injected
  CHECK(std::count(a.begin(), a.end(), '\n') == 28);
}
