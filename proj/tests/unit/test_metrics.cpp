#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "embkit/error.hpp"
#include "embkit/metrics.hpp"
#include "embkit/rng.hpp"
#include "oracles.hpp"

using namespace embkit;
using namespace embkit::metrics;

namespace {

std::vector<int> random_labels(Rng& rng, std::size_t n, std::uint64_t classes) {
  std::vector<int> v(n);
  for (int& x : v) x = static_cast<int>(rng.below(classes));
  return v;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("ndcg worked values") {
    const std::vector<int> judged1{1, 1};
    CHECK(ndcg_at_k(std::vector<int>{1, 1}, judged1, 10) == 1.0);
    const std::vector<int> judged{1};
    CHECK(ndcg_at_k(std::vector<int>{0, 1}, judged, 10) == doctest::Approx(0.63093).epsilon(1e-5));
    CHECK(ndcg_at_k(std::vector<int>{0, 1}, judged, 10) == doctest::Approx(1.0 / std::log2(3.0)).epsilon(1e-15));
    CHECK(ndcg_at_k(std::vector<int>{0, 0, 0}, judged, 10) == 0.0);
    CHECK(ndcg_at_k(std::vector<int>{0, 1}, judged, 1) == 0.0);
    CHECK(ndcg_at_k(std::vector<int>{0}, std::vector<int>{}, 10) == 0.0);
  }

  TEST_CASE("ranked list orders by score then doc id") {
    RankedList list({{"b", 0.5, 0}, {"a", 0.5, 1}, {"c", 0.9, 2}});
    CHECK(list.items()[0].doc_id == "c");
    CHECK(list.items()[1].doc_id == "a");
    CHECK(list.items()[2].doc_id == "b");
    CHECK(list.relevances() == std::vector<int>{2, 1, 0});
  }

  TEST_CASE("ranked list is independent of input order") {
    Rng rng(7);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<RankedItem> items;
      const std::size_t n = 1 + rng.below(10);
      for (std::size_t i = 0; i < n; ++i) {
        items.push_back({"d" + std::to_string(i), static_cast<double>(rng.below(3)), static_cast<int>(rng.below(3))});
      }
      std::vector<int> ideal;
      for (const auto& it : items) ideal.push_back(it.relevance);
      const double a = ndcg_at_k(RankedList(items), ideal, 5);
      rng.shuffle(std::span<RankedItem>(items));
      CHECK(ndcg_at_k(RankedList(items), ideal, 5) == a);
    }
  }

  TEST_CASE("average precision worked values") {
    CHECK(average_precision(std::vector<int>{1, 0}) == 1.0);
    CHECK(average_precision(std::vector<int>{0, 1}) == 0.5);
    CHECK_THROWS_AS(average_precision(std::vector<int>{0, 0}), MetricError);
  }

  TEST_CASE("map worked values and skip rule") {
    CHECK(mean_average_precision({{1, 0}, {0, 1}}) == 0.75);
    CHECK_THROWS_AS(mean_average_precision({{1, 1}}), MetricError);
    CHECK_THROWS_AS(mean_average_precision({}), MetricError);
    CHECK(mean_average_precision({{0, 1, 0}, {1, 1}}) == average_precision(std::vector<int>{0, 1, 0}));
  }

  TEST_CASE("spearman worked values") {
    CHECK(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{10, 20, 30}) == doctest::Approx(1.0));
    CHECK(spearman(std::vector<double>{1, 2, 3}, std::vector<double>{30, 20, 10}) == doctest::Approx(-1.0));
    const std::vector<double> x{1, 2, 2, 3};
    const std::vector<double> y{1, 3, 2, 4};
    CHECK(std::abs(spearman(x, y) - oracle::spearman(x, y)) <= 1e-12);
    CHECK(fractional_ranks(x) == std::vector<double>{1.0, 2.5, 2.5, 4.0});
    CHECK_THROWS_AS(spearman(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), MetricError);
    CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), MetricError);
    CHECK_THROWS_AS(spearman(std::vector<double>{1}, std::vector<double>{1}), MetricError);
  }

  TEST_CASE("v-measure worked values") {
    CHECK(v_measure(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    const auto s = clustering_scores(std::vector<int>{0, 0, 1, 1}, std::vector<int>{5, 5, 5, 5});
    CHECK(s.homogeneity == doctest::Approx(0.0));
    CHECK(s.completeness == 1.0);
    CHECK(s.v_measure == doctest::Approx(0.0));
    const std::vector<std::string> t{"a", "a", "b", "b"};
    const std::vector<std::string> p{"1", "1", "1", "2"};
    const auto o = oracle::v_measure({0, 0, 1, 1}, {0, 0, 0, 1});
    CHECK(std::abs(v_measure(t, p) - o.v) <= 1e-12);
    CHECK_THROWS_AS(v_measure(std::vector<int>{0}, std::vector<int>{0, 1}), MetricError);
  }

  TEST_CASE("accuracy worked values") {
    CHECK(accuracy(std::vector<int>{1, 2, 3, 4}, std::vector<int>{1, 2, 3, 0}) == 0.75);
    CHECK(accuracy(std::vector<int>{1, 2}, std::vector<int>{1, 2}) == 1.0);
    CHECK(accuracy(std::vector<int>{1, 2}, std::vector<int>{2, 1}) == 0.0);
    CHECK_THROWS_AS(accuracy(std::vector<int>{}, std::vector<int>{}), MetricError);
    CHECK_THROWS_AS(accuracy(std::vector<int>{1}, std::vector<int>{1, 2}), MetricError);
  }

  TEST_CASE("metrics agree with brute-force oracles") {
    Rng rng(2024);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t n = 2 + rng.below(11);
      CAPTURE(trial);

      auto ranked = random_labels(rng, n, 4);
      auto judged = ranked;
      for (std::size_t extra = rng.below(3); extra > 0; --extra) judged.push_back(static_cast<int>(rng.below(4)));
      const std::size_t k = 1 + rng.below(12);
      CHECK(std::abs(ndcg_at_k(ranked, judged, k) - oracle::ndcg(ranked, judged, k)) <= 1e-10);

      auto bin = random_labels(rng, n, 2);
      bin[rng.below(n)] = 1;
      CHECK(std::abs(average_precision(bin) - oracle::average_precision(bin)) <= 1e-10);

      std::vector<std::vector<int>> queries;
      for (int q = 0; q < 3; ++q) queries.push_back(random_labels(rng, 1 + rng.below(n), 2));
      queries[0][0] = 1;
      queries[0].push_back(0);
      CHECK(std::abs(mean_average_precision(queries) - oracle::mean_average_precision(queries)) <= 1e-10);

      std::vector<double> x(n), y(n);
      for (std::size_t i = 0; i < n; ++i) {
        x[i] = static_cast<double>(rng.below(5));
        y[i] = rng.uniform();
      }
      x[0] = 0;
      x[1] = 9;
      CHECK(std::abs(spearman(x, y) - oracle::spearman(x, y)) <= 1e-10);

      const auto t = random_labels(rng, n, 3);
      const auto p = random_labels(rng, n, 4);
      const auto s = clustering_scores(t, p);
      const auto o = oracle::v_measure(t, p);
      CHECK(std::abs(s.homogeneity - o.h) <= 1e-10);
      CHECK(std::abs(s.completeness - o.c) <= 1e-10);
      CHECK(std::abs(s.v_measure - o.v) <= 1e-10);
      CHECK(std::abs(accuracy(t, p) - oracle::accuracy(t, p)) <= 1e-10);
    }
  }

  TEST_CASE("spearman is invariant under affine maps") {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t n = 2 + rng.below(11);
      std::vector<double> x(n), pos(n), neg(n);
      for (double& v : x) v = rng.uniform(-3, 3);
      const double a = rng.uniform(0.1, 5.0);
      const double b = rng.uniform(-2, 2);
      for (std::size_t i = 0; i < n; ++i) {
        pos[i] = a * x[i] + b;
        neg[i] = -a * x[i] + b;
      }
      CHECK(spearman(x, pos) == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(spearman(x, neg) == doctest::Approx(-1.0).epsilon(1e-12));
    }
  }

  TEST_CASE("v-measure symmetry and renaming") {
    Rng rng(9);
    for (int trial = 0; trial < 200; ++trial) {
      const std::size_t n = 1 + rng.below(12);
      const auto t = random_labels(rng, n, 4);
      const auto p = random_labels(rng, n, 4);
      const double v = v_measure(t, p);
      CHECK(std::abs(v - v_measure(p, t)) <= 1e-12);
      std::vector<int> renamed(n);
      for (std::size_t i = 0; i < n; ++i) renamed[i] = 100 - 7 * p[i];
      CHECK(std::abs(v - v_measure(t, renamed)) <= 1e-12);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
    }
  }

  TEST_CASE("average precision lower bound over all orderings") {
    for (std::size_t n = 1; n <= 8; ++n) {
      for (std::size_t pos = 1; pos <= n; ++pos) {
        std::vector<int> labels(n, 0);
        for (std::size_t i = 0; i < pos; ++i) labels[n - 1 - i] = 1;
        // Positives packed at the end is the worst ordering.
        const double worst = average_precision(labels);
        double lowest = 1.0;
        std::vector<int> perm = labels;
        std::sort(perm.begin(), perm.end());
        do {
          const double ap = average_precision(perm);
          lowest = std::min(lowest, ap);
          CHECK(ap >= worst);
        } while (std::next_permutation(perm.begin(), perm.end()));
        CHECK(lowest == worst);
      }
    }
  }

  TEST_CASE("ndcg never decreases when a better item moves earlier") {
    Rng rng(17);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t n = 2 + rng.below(11);
      auto ranked = random_labels(rng, n, 4);
      const std::size_t i = rng.below(n);
      const std::size_t j = rng.below(n);
      const std::size_t lo = std::min(i, j);
      const std::size_t hi = std::max(i, j);
      if (ranked[hi] <= ranked[lo]) continue;
      const std::size_t k = 1 + rng.below(12);
      const double before = ndcg_at_k(ranked, ranked, k);
      std::swap(ranked[lo], ranked[hi]);
      CHECK(ndcg_at_k(ranked, ranked, k) >= before - 1e-15);
    }
  }

  TEST_CASE("ndcg is one for an ideal ordering") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
      auto rels = random_labels(rng, 1 + rng.below(12), 4);
      rels[0] = 1;
      auto sorted = rels;
      std::sort(sorted.begin(), sorted.end(), std::greater<>());
      CHECK(ndcg_at_k(sorted, rels, 10) == doctest::Approx(1.0).epsilon(1e-14));
    }
  }

  TEST_CASE("label encoding follows first appearance") {
    const std::vector<std::string> l{"b", "a", "b", "c"};
    CHECK(encode_labels(l) == std::vector<int>{0, 1, 0, 2});
  }
}
