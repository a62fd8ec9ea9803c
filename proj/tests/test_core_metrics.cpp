#include <doctest.h>

#include <algorithm>
#include <set>

#include "fixtures.hpp"
#include "labelprobe/metrics.hpp"

using namespace labelprobe;

namespace {

// O(n^2) pair count, ties counted one half.
double pair_auroc(const Vector& s, const std::vector<bool>& bad) {
  double wins = 0.0, pairs = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (bad[i]) continue;
    for (Eigen::Index j = 0; j < s.size(); ++j) {
      if (!bad[j]) continue;
      pairs += 1.0;
      wins += s(i) > s(j) ? 1.0 : s(i) == s(j) ? 0.5 : 0.0;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_SUITE("core") {
  TEST_CASE("fnv1a matches published vectors") {
    CHECK(hex64(fnv1a("")) == "cbf29ce484222325");
    CHECK(hex64(fnv1a("a")) == "af63dc4c8601ec8c");
    CHECK(hex64(fnv1a("foobar")) == "85944171f73967e8");
  }

  TEST_CASE("derived seeds are stable and distinct") {
    static_assert(derive_seed(1, 2) == derive_seed(1, 2));
    std::set<std::uint64_t> seen;
    for (std::uint64_t m = 0; m < 20; ++m) {
      for (std::uint64_t i = 0; i < 20; ++i) seen.insert(derive_seed(m, i));
    }
    CHECK(seen.size() == 400);
  }

  TEST_CASE("shuffle is a permutation and seeded") {
    Rng a(3), b(3);
    auto x = iota_indices(100), y = iota_indices(100);
    shuffle(x, a);
    shuffle(y, b);
    CHECK(x == y);
    auto sorted = x;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == iota_indices(100));
    CHECK(x != iota_indices(100));
  }

  TEST_CASE("softmax is stable for large scores") {
    Eigen::RowVectorXd r(3);
    r << 1000.0, 1001.0, 999.0;
    softmax_inplace(r);
    CHECK(r.sum() == doctest::Approx(1.0));
    const double e = std::exp(1.0);
    CHECK(r(1) == doctest::Approx(e / (1.0 + e + 1.0 / e)));
  }

  TEST_CASE("counts and gathers") {
    Labels y{0, 2, 2, 1, 2};
    CHECK(infer_classes(y) == 3);
    CHECK(class_counts(y, 4) == std::vector<std::size_t>{1, 1, 3, 0});
    std::vector<std::size_t> rows{4, 0};
    CHECK(gather(y, rows) == Labels{2, 0});
  }
}

TEST_SUITE("metrics") {
  TEST_CASE("auroc endpoints") {
    Vector s(4);
    s << 1, 2, 3, 4;
    CHECK(detection_auroc(s, {true, true, false, false}) == 1.0);
    CHECK(detection_auroc(s, {false, false, true, true}) == 0.0);
    Vector flat = Vector::Constant(4, 0.3);
    CHECK(detection_auroc(flat, {true, false, true, false}) == 0.5);
    CHECK_THROWS_AS(detection_auroc(s, {false, false, false, false}), Error);
    CHECK_THROWS_AS(detection_auroc(s, {true, true, true, true}), Error);
  }

  TEST_CASE("auroc matches pair counting with ties") {
    Rng rng(11);
    for (int rep = 0; rep < 100; ++rep) {
      const std::size_t n = 2 + uniform_index(rng, 49);
      Vector s(static_cast<Eigen::Index>(n));
      std::vector<bool> bad(n);
      for (std::size_t i = 0; i < n; ++i) {
        s(static_cast<Eigen::Index>(i)) = static_cast<double>(uniform_index(rng, 6));  // plenty of ties
        bad[i] = uniform01(rng) < 0.4;
      }
      bad[0] = true;
      bad[1] = false;
      CHECK(std::abs(detection_auroc(s, bad) - pair_auroc(s, bad)) <= 1e-12);
    }
  }

  TEST_CASE("auroc symmetry and monotone invariance") {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
      Vector s(40);
      std::vector<bool> bad(40);
      for (int i = 0; i < 40; ++i) {
        s(i) = standard_normal(rng);
        bad[static_cast<std::size_t>(i)] = i % 3 == 0;
      }
      const double a = detection_auroc(s, bad);
      CHECK(a + detection_auroc(-s, bad) == doctest::Approx(1.0).epsilon(1e-12));
      Vector t = s.array().exp() * 3.0 + 1.0;
      CHECK(detection_auroc(t, bad) == a);
    }
  }

  TEST_CASE("class balance") {
    CHECK(class_balance(Labels{0, 1, 0, 1}, 2) == 1.0);
    Labels y(100, 0);
    std::fill(y.begin(), y.begin() + 10, 1);
    CHECK(class_balance(y, 2) == doctest::Approx(1.0 / 9.0));
    CHECK(class_balance(Labels{0, 0, 2}, 3) == 0.0);
  }

  TEST_CASE("normalized loss anchors are exact") {
    Rng rng(2);
    for (int rep = 0; rep < 200; ++rep) {
      const double none = uniform01(rng) * 3.0, silver = uniform01(rng) * 3.0;
      if (std::abs(none - silver) < 1e-6) continue;
      CHECK(*normalized_loss(silver, none, silver) == 100.0);
      CHECK(*normalized_loss(none, none, silver) == 200.0);
      CHECK(*normalized_loss(0.5 * (none + silver), none, silver) == doctest::Approx(150.0));
    }
    CHECK_FALSE(normalized_loss(0.3, 0.5, 0.5).has_value());
    CHECK_THROWS_AS(normalized_loss(std::nan(""), 1.0, 0.5), Error);
  }

  TEST_CASE("normalized loss is affine equivariant") {
    Rng rng(9);
    for (int rep = 0; rep < 100; ++rep) {
      const double l = uniform01(rng), none = 1.0 + uniform01(rng), silver = uniform01(rng) * 0.5;
      const double a = standard_normal(rng), b = 0.1 + uniform01(rng) * 5.0;
      CHECK(*normalized_loss(a + b * l, a + b * none, a + b * silver) ==
            doctest::Approx(*normalized_loss(l, none, silver)).epsilon(1e-9));
    }
  }
}
