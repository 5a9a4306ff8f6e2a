#include <doctest.h>

#include <sstream>

#include "embkit/cli.hpp"
#include "embkit/datamodel.hpp"
#include "test_support.hpp"

using namespace embkit;
using testing::TempDir;

namespace {

struct Outcome {
  int code = 0;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "embkit");
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& path) { return path.string(); }

// Small suite plus train/eval arguments sized for a fast run.
void make_suite(const TempDir& dir) {
  REQUIRE(run({"synth", "--out", p(dir / "data"), "--seed", "3", "--topics", "4", "--size", "16"}).code == 0);
}

std::vector<std::string> small_train(const TempDir& dir, const std::string& out, const std::string& stage = "all",
                                     const std::string& steps = "4") {
  return {"train", "--stage", stage, "--data", p(dir / "data/train"), "--out", p(dir / out), "--steps", steps,
          "--batch-size", "8", "--vocab", "256", "--dim", "8", "--seed", "11"};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors exit 2") {
    const auto none = run({"curate", "--output", "x.jsonl"});
    CHECK(none.code == cli::kUsageError);
    CHECK(none.err.find("--input") != std::string::npos);
    CHECK(run({"curate", "--input", "a", "--output", "b", "--threshold", "1.1"}).code == cli::kUsageError);
    CHECK(run({"bogus"}).code == cli::kUsageError);
    CHECK(run({"eval", "--tasks", "t", "--out", "o"}).code == cli::kUsageError);
    CHECK(run({"--help"}).code == cli::kOk);
  }

  TEST_CASE("curate runs the fixture and writes a report") {
    TempDir dir;
    std::string body;
    for (int d = 0; d < 2; ++d) {
      Json qa = Json::array();
      for (int i = 0; i < 3; ++i) qa.push_back({{"q", "shared words " + std::to_string(i)}, {"a", "shared words " + std::to_string(i) + " more"}});
      qa.push_back({{"q", "zzzz"}, {"a", "qqqq"}});
      body += Json{{"qa", qa}, {"source", "forum"}}.dump() + "\n";
    }
    write_file(dir / "in.jsonl", body);
    const auto r = run({"curate", "--input", p(dir / "in.jsonl"), "--output", p(dir / "out/pairs.jsonl")});
    REQUIRE(r.code == 0);
    CHECK(read_text_pairs(dir / "out/pairs.jsonl").size() == 3);
    const auto report = Json::parse(read_file(dir / "out/pairs.jsonl.report.json"));
    CHECK(report["raw"] == 8);
    CHECK(report["after_general"] == 4);
    CHECK(report["after_semantic"] == 3);
    const auto manifest = Json::parse(read_file(dir / "out/manifest.json"));
    CHECK(manifest["subcommand"] == "curate");
    CHECK(manifest["status"] == "ok");
  }

  TEST_CASE("curate with a missing input exits 1") {
    TempDir dir;
    const auto r = run({"curate", "--input", p(dir / "absent.jsonl"), "--output", p(dir / "o.jsonl")});
    CHECK(r.code == cli::kRuntimeError);
    CHECK(r.err.find("error") != std::string::npos);
  }

  TEST_CASE("train all writes three checkpoints and is reproducible") {
    TempDir dir;
    make_suite(dir);
    REQUIRE(run(small_train(dir, "a")).code == 0);
    REQUIRE(run(small_train(dir, "b")).code == 0);
    for (const char* name : {"pretrain.embm", "general.embm", "finetune.embm", "loss_general.csv", "finetune.embm.json"}) {
      CAPTURE(name);
      REQUIRE(std::filesystem::exists(dir / "a" / name));
      CHECK(read_file(dir / "a" / name) == read_file(dir / "b" / name));
    }
    CHECK(std::filesystem::exists(dir / "a/manifest.json"));
  }

  TEST_CASE("train with zero steps keeps the init checkpoint") {
    TempDir dir;
    make_suite(dir);
    REQUIRE(run(small_train(dir, "first", "general")).code == 0);
    auto args = small_train(dir, "second", "general", "0");
    args.insert(args.end(), {"--init", p(dir / "first/general.embm")});
    REQUIRE(run(args).code == 0);
    CHECK(read_file(dir / "second/general.embm") == read_file(dir / "first/general.embm"));
  }

  TEST_CASE("task-specific training without instructions exits 1") {
    TempDir dir;
    make_suite(dir);
    std::filesystem::remove(dir / "data/train/instructions.json");
    const auto r = run(small_train(dir, "ts", "taskspecific"));
    CHECK(r.code == cli::kRuntimeError);
    CHECK(r.err.find("instruction") != std::string::npos);
  }

  TEST_CASE("eval report shape, determinism and external equivalence") {
    TempDir dir;
    make_suite(dir);
    REQUIRE(run(small_train(dir, "m", "general")).code == 0);
    const std::string model = p(dir / "m/general.embm");
    REQUIRE(run({"eval", "--tasks", p(dir / "data/tasks"), "--model", model, "--out", p(dir / "e1")}).code == 0);
    REQUIRE(run({"eval", "--tasks", p(dir / "data/tasks"), "--model", model, "--out", p(dir / "e2"), "--jobs", "3"})
                .code == 0);
    const std::string report = read_file(dir / "e1/report.json");
    CHECK(report == read_file(dir / "e2/report.json"));
    const auto j = Json::parse(report);
    CHECK(j["columns"].size() == 7);
    std::size_t categories = 0;
    for (const auto& [k, v] : j["category_averages"].items()) categories += k != "Average" && v.is_number() ? 1 : 0;
    CHECK(categories == 6);
    CHECK(j["overall_average"].is_number());
    CHECK(j["per_dataset"].size() >= 6);

    const std::string serve = std::string(EMBKIT_BINARY) + " serve --model '" + model + "'";
    REQUIRE(run({"eval", "--tasks", p(dir / "data/tasks"), "--external", serve, "--out", p(dir / "e3")}).code == 0);
    CHECK(read_file(dir / "e3/report.json") == report);
  }

  TEST_CASE("eval with a missing model exits 1") {
    TempDir dir;
    make_suite(dir);
    const auto r = run({"eval", "--tasks", p(dir / "data/tasks"), "--model", p(dir / "none.embm"), "--out", p(dir / "e")});
    CHECK(r.code == cli::kRuntimeError);
  }

  TEST_CASE("eval with a failing dataset exits 3") {
    TempDir dir;
    make_suite(dir);
    REQUIRE(run(small_train(dir, "m", "general")).code == 0);
    write_file(dir / "data/tasks/flat.sts.jsonl",
               "{\"s1\":\"same\",\"s2\":\"same\",\"score\":1}\n{\"s1\":\"same\",\"s2\":\"same\",\"score\":2}\n");
    const auto r = run({"eval", "--tasks", p(dir / "data/tasks"), "--model", p(dir / "m/general.embm"), "--out", p(dir / "e")});
    CHECK(r.code == cli::kPartialFailure);
    const auto j = Json::parse(read_file(dir / "e/report.json"));
    CHECK(j["failed"] == 1);
    CHECK(Json::parse(read_file(dir / "e/manifest.json"))["status"] != "running");
  }

  TEST_CASE("synth is seeded and respects --topics") {
    TempDir dir;
    REQUIRE(run({"synth", "--out", p(dir / "a"), "--seed", "5", "--topics", "4", "--size", "16"}).code == 0);
    REQUIRE(run({"synth", "--out", p(dir / "b"), "--seed", "5", "--topics", "4", "--size", "16"}).code == 0);
    CHECK(read_file(dir / "a/tasks/clustering.clustering.jsonl") == read_file(dir / "b/tasks/clustering.clustering.jsonl"));
    CHECK(run({"synth", "--out", p(dir / "c"), "--topics", "1"}).code == cli::kUsageError);
  }
}
