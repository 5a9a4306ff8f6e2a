#include <doctest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "embkit/curation.hpp"
#include "embkit/error.hpp"
#include "embkit/rng.hpp"
#include "test_support.hpp"

using namespace embkit;
using namespace embkit::curation;
using testing::TempDir;

namespace {

// Scores taken from a fixed per-query table; unknown queries score 1.
std::shared_ptr<const PairScorer> table_scorer(std::map<std::string, double> scores) {
  return std::make_shared<FunctionScorer>([scores = std::move(scores)](const TextPair& p) {
    auto it = scores.find(p.query);
    return it == scores.end() ? 1.0 : it->second;
  });
}

std::string random_word(Rng& rng, std::size_t len) {
  std::string w;
  for (std::size_t i = 0; i < len; ++i) w += static_cast<char>('a' + rng.below(26));
  return w;
}

std::vector<TextPair> random_pairs(Rng& rng, std::size_t n) {
  std::vector<TextPair> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back({"q" + std::to_string(i) + " " + random_word(rng, 6), random_word(rng, 4) + " " + random_word(rng, 8),
                   "qa", std::nullopt});
  }
  return out;
}

std::string qa_doc(const std::vector<std::pair<std::string, std::string>>& items) {
  Json qa = Json::array();
  for (const auto& [q, a] : items) qa.push_back({{"q", q}, {"a", a}});
  return Json{{"qa", qa}, {"source", "forum"}}.dump() + "\n";
}

}  // namespace

TEST_SUITE("curation") {
  TEST_CASE("extraction examples") {
    StructuredDoc titled{"T", {{std::nullopt, "B"}}, {}, "web"};
    const auto p = extract_pairs(titled);
    REQUIRE(p.size() == 1);
    CHECK(p[0].query == "T");
    CHECK(p[0].passage == "B");
    CHECK(p[0].source == "title-body");

    StructuredDoc qa{std::nullopt, {}, {{"q1", "a1"}, {"q2", "a2"}}, "forum"};
    const auto q = extract_pairs(qa);
    REQUIRE(q.size() == 2);
    CHECK(q[0].query == "q1");
    CHECK(q[1].query == "q2");
    CHECK(q[1].source == "qa");

    StructuredDoc untitled{std::nullopt, {{std::nullopt, "only"}}, {}, "web"};
    CHECK(extract_pairs(untitled).empty());

    StructuredDoc full{"T", {{"S1", "P1"}, {std::nullopt, "P2"}}, {{"q", "a"}}, "web"};
    const auto f = extract_pairs(full);
    REQUIRE(f.size() == 3);
    CHECK(f[0].passage.find("P1") != std::string::npos);
    CHECK(f[0].passage.find("P2") != std::string::npos);
    CHECK(f[1].query == "S1");
    CHECK(f[2].source == "qa");

    CHECK_THROWS_AS(validate(StructuredDoc{}), ValidationError);
  }

  TEST_CASE("general filter drops duplicates and non-text") {
    FilterConfig cfg;
    std::vector<TextPair> pairs{{"what is this", "a long answer", "qa", {}},
                                {"What  is this", "a long ANSWER", "qa", {}},
                                {"what is that", "!!!???", "qa", {}},
                                {"ab", "short query side", "qa", {}}};
    const auto r = general_filter(pairs, cfg);
    CHECK(r.pairs.size() == 1);
    CHECK(r.stats.drops.at("duplicate") == 1);
    CHECK(r.stats.drops.at("non_textual") == 1);
    CHECK(r.stats.drops.at("length") == 1);
    CHECK(r.stats.input == 4);
    CHECK(r.stats.kept == 1);

    cfg.dedup = false;
    CHECK(general_filter(pairs, cfg).pairs.size() == 2);
  }

  TEST_CASE("blocklist drops pairs containing a term") {
    FilterConfig cfg;
    cfg.blocklist = {"Casino"};
    std::vector<TextPair> pairs{{"best casino bonus", "click here now", "web", {}}, {"river", "flows north", "web", {}}};
    const auto r = general_filter(pairs, cfg);
    CHECK(r.pairs.size() == 1);
    CHECK(r.stats.drops.at("blocked") == 1);
  }

  TEST_CASE("random valid pairs all survive the general filter") {
    Rng rng(77);
    const auto pairs = random_pairs(rng, 100);
    const auto r = general_filter(pairs, FilterConfig{});
    CHECK(r.pairs == pairs);
    CHECK(r.stats.total_dropped() == 0);
  }

  TEST_CASE("informative ratio counts letters digits and cjk") {
    CHECK(informative_ratio("!!!???") == 0.0);
    CHECK(informative_ratio("ab !!") == doctest::Approx(0.5));
    CHECK(informative_ratio("\xE4\xB8\xAD\xE6\x96\x87") == 1.0);
  }

  TEST_CASE("semantic threshold boundary") {
    FilterConfig cfg;
    cfg.scorer = table_scorer({{"low", 0.42}, {"edge", 0.43}});
    std::vector<TextPair> pairs{{"low", "x", "qa", {}}, {"edge", "y", "qa", {}}};
    const auto r = semantic_filter(pairs, cfg);
    REQUIRE(r.pairs.size() == 1);
    CHECK(r.pairs[0].query == "edge");
    CHECK(r.pairs[0].score == 0.43);
    CHECK(r.stats.drops.at("below_threshold") == 1);

    const auto empty = semantic_filter(std::span<const TextPair>{}, cfg);
    CHECK(empty.pairs.empty());
    CHECK(empty.stats.total_dropped() == 0);
  }

  TEST_CASE("scorer failures are counted, not thrown") {
    FilterConfig cfg;
    cfg.scorer = std::make_shared<FunctionScorer>([](const TextPair& p) -> double {
      if (p.query == "bad") throw std::runtime_error("scorer down");
      return 0.9;
    });
    std::vector<TextPair> pairs{{"bad", "x", "qa", {}}, {"good", "y", "qa", {}}};
    const auto r = semantic_filter(pairs, cfg);
    CHECK(r.pairs.size() == 1);
    CHECK(r.stats.drops.at("scorer_error") == 1);
  }

  TEST_CASE("overlap scorer examples") {
    CHECK(builtin_overlap_score({"hello", "hello", "", {}}) == 1.0);
    CHECK(builtin_overlap_score({"abab", "cdcd", "", {}}) == 0.0);
    CHECK(builtin_overlap_score({"abc", "abd", "", {}}) == doctest::Approx(1.0 / 3.0));
    CHECK(builtin_overlap_score({"", "abc", "", {}}) == 0.0);
  }

  TEST_CASE("filter config validation") {
    FilterConfig cfg;
    cfg.semantic_threshold = 1.1;
    CHECK_THROWS_AS(validate(cfg), ValidationError);
    cfg.semantic_threshold = 0.5;
    cfg.min_chars = 10;
    cfg.max_chars = 5;
    CHECK_THROWS_AS(validate(cfg), ValidationError);
  }

  TEST_CASE("pipeline fixture with known counts") {
    TempDir dir;
    std::string body;
    std::vector<std::pair<std::string, std::string>> items;
    for (int i = 0; i < 8; ++i) items.push_back({"question " + std::to_string(i), "answer text " + std::to_string(i)});
    body += qa_doc({items.begin(), items.begin() + 5});
    body += qa_doc({items.begin() + 5, items.end()});
    body += qa_doc({items[1], items[6]});
    write_file(dir / "docs.jsonl", body);

    FilterConfig cfg;
    cfg.scorer = table_scorer({{"question 2", 0.1}, {"question 4", 0.42}, {"question 7", 0.0}});
    const std::vector<std::filesystem::path> inputs{dir / "docs.jsonl"};
    const auto report = run_pipeline(inputs, cfg, dir / "out.jsonl");
    CHECK(report.raw == 10);
    CHECK(report.after_general == 8);
    CHECK(report.after_semantic == 5);
    CHECK(report.drops.at("duplicate") == 2);
    CHECK(report.drops.at("below_threshold") == 3);
    const auto out = read_text_pairs(dir / "out.jsonl");
    REQUIRE(out.size() == 5);
    const std::vector<std::string> expected{"question 0", "question 1", "question 3", "question 5", "question 6"};
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i].query == expected[i]);

    const OrderedJson j = report.to_json();
    CHECK(j["raw"] == 10);
    CHECK(j["after_general"] == 8);
    CHECK(j["after_semantic"] == 5);

    const std::vector<std::filesystem::path> again{dir / "out.jsonl"};
    const auto rerun = run_pipeline(again, cfg, dir / "out2.jsonl");
    CHECK(rerun.raw == 5);
    CHECK(rerun.after_semantic == 5);
    CHECK(read_text_pairs(dir / "out2.jsonl") == out);
  }

  TEST_CASE("pipeline on empty input and unreadable input") {
    TempDir dir;
    write_file(dir / "empty.jsonl", "");
    const std::vector<std::filesystem::path> inputs{dir / "empty.jsonl"};
    const auto r = run_pipeline(inputs, FilterConfig{}, dir / "out.jsonl");
    CHECK(r.raw == 0);
    CHECK(r.after_semantic == 0);
    CHECK(read_file(dir / "out.jsonl").empty());

    const std::vector<std::filesystem::path> bad{dir / "empty.jsonl", dir / "missing.jsonl"};
    CHECK_THROWS_AS(run_pipeline(bad, FilterConfig{}, dir / "never.jsonl"), Error);
    CHECK_FALSE(std::filesystem::exists(dir / "never.jsonl"));
  }

  TEST_CASE("threshold subsets, conservation and order") {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
      TempDir dir;
      std::string body;
      for (int d = 0; d < 20; ++d) {
        std::vector<std::pair<std::string, std::string>> items;
        for (int i = 0; i < 3; ++i) {
          const std::string base = random_word(rng, 5);
          items.push_back({base + " " + random_word(rng, 3), rng.below(2) ? base + " " + random_word(rng, 4)
                                                                           : random_word(rng, 9)});
        }
        if (d % 5 == 0) items.push_back(items[0]);
        if (d % 7 == 0) items.push_back({"!!", "??"});
        body += qa_doc(items);
      }
      write_file(dir / "in.jsonl", body);
      const std::vector<std::filesystem::path> inputs{dir / "in.jsonl"};

      std::vector<std::vector<TextPair>> outs;
      for (double t : {0.2, 0.43, 0.8}) {
        FilterConfig cfg;
        cfg.semantic_threshold = t;
        const auto rep = run_pipeline(inputs, cfg, dir / "out.jsonl");
        CHECK(rep.after_semantic <= rep.after_general);
        CHECK(rep.after_general <= rep.raw);
        std::size_t dropped = 0;
        for (const auto& [reason, n] : rep.drops) dropped += n;
        CHECK(dropped == rep.raw - rep.after_semantic);
        outs.push_back(read_text_pairs(dir / "out.jsonl"));
        for (const auto& p : outs.back()) {
          REQUIRE(p.score.has_value());
          CHECK(*p.score >= t);
          CHECK(builtin_overlap_score(p) == *p.score);
        }
      }
      auto keys = [](const std::vector<TextPair>& v) {
        std::vector<std::string> k;
        for (const auto& p : v) k.push_back(dedup_key(p));
        return k;
      };
      const auto k02 = keys(outs[0]);
      const auto k043 = keys(outs[1]);
      const auto k08 = keys(outs[2]);
      // Each output is a subsequence of the looser one.
      auto subsequence = [](const std::vector<std::string>& small, const std::vector<std::string>& big) {
        std::size_t j = 0;
        for (const auto& s : big) {
          if (j < small.size() && small[j] == s) ++j;
        }
        return j == small.size();
      };
      CHECK(subsequence(k08, k043));
      CHECK(subsequence(k043, k02));

      std::vector<TextPair> extracted;
      std::istringstream lines(read_file(dir / "in.jsonl"));
      for (std::string line; std::getline(lines, line);) {
        if (line.empty()) continue;
        for (auto& p : extract_pairs(structured_doc_from_json(Json::parse(line)))) extracted.push_back(p);
      }
      CHECK(subsequence(k02, keys(extracted)));
    }
  }

  TEST_CASE("parallel scoring keeps order") {
    Rng rng(9);
    const auto pairs = random_pairs(rng, 200);
    FilterConfig one;
    one.semantic_threshold = 0.05;
    FilterConfig many = one;
    many.jobs = 4;
    const auto a = semantic_filter(pairs, one);
    const auto b = semantic_filter(pairs, many);
    CHECK(a.pairs == b.pairs);
  }
}
