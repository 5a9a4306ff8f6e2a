#include <doctest.h>

#include <cmath>

#include "embkit/encoder.hpp"
#include "embkit/error.hpp"
#include "embkit/rng.hpp"
#include "gradcheck.hpp"
#include "test_support.hpp"

using namespace embkit;
using namespace embkit::encoder;
using testing::TempDir;

namespace {

std::vector<std::string> texts(std::initializer_list<const char*> l) { return {l.begin(), l.end()}; }

}  // namespace

TEST_SUITE("encoder") {
  TEST_CASE("tokenizer examples") {
    const TokenizerConfig cfg;
    CHECK(tokenize("", cfg, 64) == TokenSeq{0});
    CHECK(tokenize("   ", cfg, 64) == TokenSeq{0});
    const auto aa = tokenize("A a", cfg, 64);
    REQUIRE(aa.size() == 2);
    CHECK(aa[0] == aa[1]);
    CHECK(aa[0] != 0);
    CHECK(tokenize("\xE4\xB8\xAD\xE6\x96\x87\xE5\xAD\x97", cfg, 1024).size() == 3);
    CHECK(split_tokens("ab\xE4\xB8\xAD" "cd", cfg) == std::vector<std::string>{"ab", "\xE4\xB8\xAD", "cd"});

    TokenizerConfig raw{false, false};
    const auto cased = tokenize("A a", raw, 1 << 20);
    CHECK(cased[0] != cased[1]);
    CHECK(tokenize("\xE4\xB8\xAD\xE6\x96\x87\xE5\xAD\x97", raw, 1024).size() == 1);
  }

  TEST_CASE("buckets stay in range and avoid the reserved id") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      const std::uint32_t v = 2 + static_cast<std::uint32_t>(rng.below(100));
      const auto b = bucket_of("tok" + std::to_string(i), v);
      CHECK(b >= 1);
      CHECK(b < v);
    }
  }

  TEST_CASE("encode gives unit rows and is deterministic") {
    const auto model = EncoderModel::initialize({256, 8, 6}, 3);
    const auto in = texts({"hello world", "", "hello world", "\xE4\xB8\xAD\xE6\x96\x87 text"});
    const auto m = encode(model, in, Side::Passage);
    REQUIRE(m.rows() == 4);
    CHECK(m.dim() == 6);
    for (std::size_t i = 0; i < m.rows(); ++i) {
      double s = 0.0;
      for (float x : m.row(i)) s += static_cast<double>(x) * x;
      CHECK(std::abs(std::sqrt(s) - 1.0) <= 1e-6);
    }
    CHECK(std::equal(m.row(0).begin(), m.row(0).end(), m.row(2).begin()));
    CHECK(encode(model, in, Side::Passage) == m);
    CHECK(encode(EncoderModel::initialize({256, 8, 6}, 3), in, Side::Passage) == m);
  }

  TEST_CASE("repeated token pools to the same embedding") {
    const auto model = EncoderModel::initialize({512, 8, 8}, 9);
    const auto a = encode(model, texts({"w w"}), Side::Query);
    const auto b = encode(model, texts({"w"}), Side::Query);
    for (std::size_t k = 0; k < 8; ++k) CHECK(std::abs(a.row(0)[k] - b.row(0)[k]) <= 1e-12);
  }

  TEST_CASE("instruction is prefixed on the query side only") {
    const auto model = EncoderModel::initialize({512, 8, 8}, 2);
    const auto in = texts({"find cats"});
    CHECK(encode(model, in, Side::Query, "search:") == encode(model, texts({"search: find cats"}), Side::Query));
    CHECK(encode(model, in, Side::Passage, "search:") == encode(model, in, Side::Passage));
    CHECK(prefix_instruction("", "q") == "q");
    CHECK(prefix_instruction("do", "q") == "do q");
  }

  TEST_CASE("crafted bucket collisions share embeddings") {
    const std::uint32_t v = 8;
    const std::string first = "alpha";
    std::string other;
    for (int i = 0; other.empty(); ++i) {
      const std::string cand = "tok" + std::to_string(i);
      if (bucket_of(cand, v) == bucket_of(first, v)) other = cand;
    }
    const auto model = EncoderModel::initialize({v, 4, 4}, 1);
    CHECK(encode(model, texts({"alpha"}), Side::Passage) ==
          encode(model, std::vector<std::string>{other}, Side::Passage));
  }

  TEST_CASE("degenerate rows fall back to e1 and are counted") {
    EncoderModel model({4, 2, 2}, 0, {}, std::vector<float>(8, 0.0F), {1, 0, 0, 1});
    EncodeStats stats;
    const auto m = encode(model, texts({"x", "y"}), Side::Passage, std::nullopt, &stats);
    CHECK(stats.degenerate_rows == 2);
    CHECK(m.row(0)[0] == 1.0F);
    CHECK(m.row(0)[1] == 0.0F);
  }

  TEST_CASE("model constructor rejects bad parameters") {
    CHECK_THROWS_AS(EncoderModel({4, 2, 2}, 0, {}, std::vector<float>(7), std::vector<float>(4)), ValidationError);
    std::vector<float> table(8, 0.1F);
    table[3] = NAN;
    CHECK_THROWS_AS(EncoderModel({4, 2, 2}, 0, {}, table, std::vector<float>(4)), ValidationError);
    CHECK_THROWS_AS(EncoderModel::initialize({0, 2, 2}, 0), ValidationError);
  }

  TEST_CASE("serialization round trips bit-exactly") {
    TempDir dir;
    const auto model = EncoderModel::initialize({300, 6, 4}, 77, {true, false});
    save_model(model, dir / "m.embm");
    const auto loaded = load_model(dir / "m.embm");
    CHECK(serialize_model(loaded) == serialize_model(model));
    const auto in = texts({"some text", "more"});
    CHECK(encode(loaded, in, Side::Query) == encode(model, in, Side::Query));
    CHECK(deserialize_model(serialize_model(model), "mem", {true, false}) == model);
  }

  TEST_CASE("corrupt checkpoints are rejected") {
    const auto model = EncoderModel::initialize({16, 2, 2}, 1);
    const std::string bytes = serialize_model(model);
    CHECK_THROWS_AS(deserialize_model(bytes.substr(0, bytes.size() - 1), "cut"), FormatError);
    CHECK_THROWS_AS(deserialize_model(bytes + "x", "long"), FormatError);
    std::string wrong_version = bytes;
    wrong_version[4] = 9;
    CHECK_THROWS_WITH_AS(deserialize_model(wrong_version, "ver"), doctest::Contains("version"), FormatError);
    std::string wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_model(wrong_magic, "magic"), FormatError);
    TempDir dir;
    CHECK_THROWS_AS(load_model(dir / "absent.embm"), Error);
  }

  TEST_CASE("gradients of a linear readout match finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
      auto model = gradcheck::random_model(rng, 64, 8);
      std::vector<TokenSeq> seqs;
      for (int i = 0; i < 3; ++i) seqs.push_back(gradcheck::random_tokens(rng, 64, 1, 6));
      std::vector<double> w(seqs.size() * 8);
      for (double& x : w) x = rng.normal();
      auto loss = [&]() {
        const auto c = forward(model, seqs);
        double s = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * c.unit[i];
        return s;
      };
      const auto cache = forward(model, seqs);
      Gradients g(model);
      backward(model, cache, w, g);
      const auto analytic = gradcheck::flatten(model, g, seqs);
      std::vector<double> numeric;
      for (float* p : gradcheck::touched_params(model, seqs)) numeric.push_back(gradcheck::central_difference(*p, loss));
      CHECK(testing::rel_err(analytic, numeric) < 1e-4);
    }
  }

  TEST_CASE("apply_sgd moves parameters against the gradient") {
    Rng rng(4);
    auto model = gradcheck::random_model(rng, 16, 4);
    const std::vector<TokenSeq> seqs{{1, 2, 3}};
    const std::vector<double> w{1, -1, 0.5, 0};
    auto loss = [&]() {
      const auto c = forward(model, seqs);
      double s = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * c.unit[i];
      return s;
    };
    const double before = loss();
    Gradients g(model);
    backward(model, forward(model, seqs), w, g);
    apply_sgd(model, g, 1e-3);
    CHECK(loss() < before);
    const auto copy = model;
    apply_sgd(model, g, 0.0);
    CHECK(model == copy);
  }

  TEST_CASE("model encoder adapts to the handle surface") {
    const auto model = EncoderModel::initialize({128, 4, 3}, 5);
    ModelEncoder handle(model);
    CHECK(handle.dim() == 3);
    const auto in = texts({"a b", "c"});
    CHECK(handle.encode(in, Side::Passage) == encode(model, in, Side::Passage));
  }
}
