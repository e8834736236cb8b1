#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <json.hpp>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "spanflow/cli.hpp"
#include "spanflow/common.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("spanflow_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

struct Result {
  int code;
  std::string out, err;
};

Result call(std::vector<std::string> args) {
  args.insert(args.begin(), "spanflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = spanflow::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

json summary(const Result& r) {
  std::istringstream in(r.out);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  return json::parse(last);
}

json resolved_config(const Result& r) {
  std::istringstream in(r.err);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line.front() != '{') continue;
    auto j = json::parse(line);
    if (j.value("event", "") == "config") return j["config"];
  }
  return nullptr;
}

std::vector<std::string> small_synth(const std::string& out, int seed) {
  return {"synth", "--output", out, "--seed", std::to_string(seed), "--pages", "4", "--rows-min", "4", "--rows-max", "6"};
}

std::vector<std::string> small_train(const std::string& corpus, const std::string& ck) {
  return {"train", "--corpus", corpus, "--output", ck, "--seed", "3", "--dim", "8", "--heads", "2", "--layers", "1",
          "--epochs", "2", "--no-cv"};
}

}  // namespace

TEST_CASE("synth twice with one seed writes identical corpora") {
  TempDir t;
  REQUIRE(call(small_synth(t / "a", 12)).code == 0);
  REQUIRE(call(small_synth(t / "b", 12)).code == 0);
  for (const auto& e : fs::directory_iterator(t / "a")) {
    const auto other = fs::path(t / "b") / e.path().filename();
    REQUIRE(fs::exists(other));
    CHECK(spanflow::read_file(e.path()) == spanflow::read_file(other));
  }
  REQUIRE(call(small_synth(t / "c", 13)).code == 0);
  CHECK(spanflow::read_file(fs::path(t / "a") / "manifest.json") !=
        spanflow::read_file(fs::path(t / "c") / "manifest.json"));
}

TEST_CASE("synth, train, eval and rollout run end to end") {
  TempDir t;
  REQUIRE(call(small_synth(t / "corpus", 5)).code == 0);
  const auto tr = call(small_train(t / "corpus", t / "model.json"));
  REQUIRE(tr.code == 0);
  CHECK(summary(tr)["command"] == "train");
  CHECK(fs::exists(t / "model.json.log.jsonl"));

  const auto ev = call({"eval", "--checkpoint", t / "model.json", "--corpus", t / "corpus", "--output", t / "r.json"});
  REQUIRE(ev.code == 0);
  const auto report = json::parse(spanflow::read_file(t / "r.json"));
  for (const char* k : {"1", "3", "5", "10"}) {
    REQUIRE(report["top_k"].contains(k));
    CHECK(report["top_k"][k].get<double>() >= 0.0);
    CHECK(report["top_k"][k].get<double>() <= 1.0);
  }
  CHECK(report["top_k"]["1"].get<double>() <= report["top_k"]["10"].get<double>());
  CHECK(report["counts"]["pairs"] == 4);

  const auto ro = call({"rollout", "--checkpoint", t / "model.json", "--corpus", t / "corpus", "--pair", "1", "--page",
                        "2", "--query", "3", "--output", t / "o.svg"});
  REQUIRE(ro.code == 0);
  CHECK(std::abs(summary(ro)["row_sum"].get<double>() - 1.0) < 1e-9);
  CHECK(spanflow::read_file(t / "o.svg").rfind("<svg", 0) == 0);
}

TEST_CASE("invalid input exits with code 1") {
  TempDir t;
  REQUIRE(call(small_synth(t / "corpus", 5)).code == 0);
  auto args = small_train(t / "corpus", t / "m.json");
  args[args.size() - 2] = "0";  // --epochs 0
  CHECK(call(args).code == 1);
  CHECK(call({"synth", "--output", t / "x", "--bogus"}).code == 1);
  CHECK(call({"synth", "--output", t / "x"}).code == 1);  // no seed
  CHECK(call({"eval", "--checkpoint", t / "missing.json", "--corpus", t / "corpus", "--output", t / "r.json"}).code != 0);
  CHECK(call({}).code == 1);
}

TEST_CASE("help lists defaults and exits 0") {
  const auto r = call({"train", "--help"});
  CHECK(r.code == 0);
  const auto text = r.out + r.err;
  CHECK(text.find("--learning-rate") != std::string::npos);
  CHECK(text.find("0.0001") != std::string::npos);
  CHECK(text.find("SPANFLOW_LEARNING_RATE") != std::string::npos);
}

TEST_CASE("flags override environment, which overrides the config file") {
  TempDir t;
  spanflow::write_file_atomic(t / "cfg.json", json{{"pages", 3}, {"rows-min", 4}, {"rows-max", 5}, {"seed", 1}}.dump());

  auto r = call({"synth", "--config", t / "cfg.json", "--output", t / "a"});
  REQUIRE(r.code == 0);
  CHECK(summary(r)["pairs"] == 3);
  CHECK(resolved_config(r)["seed"] == 1);

  ::setenv("SPANFLOW_PAGES", "2", 1);
  r = call({"synth", "--config", t / "cfg.json", "--output", t / "b"});
  REQUIRE(r.code == 0);
  CHECK(summary(r)["pairs"] == 2);

  r = call({"synth", "--config", t / "cfg.json", "--output", t / "c", "--pages", "5"});
  ::unsetenv("SPANFLOW_PAGES");
  REQUIRE(r.code == 0);
  CHECK(summary(r)["pairs"] == 5);

  spanflow::write_file_atomic(t / "bad.json", json{{"no-such-key", 1}}.dump());
  CHECK(call({"synth", "--config", t / "bad.json", "--output", t / "d", "--seed", "1"}).code == 1);
}
