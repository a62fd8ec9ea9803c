#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "labelprobe/aggregate.hpp"

using namespace labelprobe;

namespace {

struct Fitted {
  Matrix x;
  Labels y;
  ModelPtr model;
};

Fitted trained(ModelFamily family, std::size_t n = 200) {
  const Dataset ds = fixtures::ncar(fixtures::blobs(n, 3, 12), 0.2, 3);
  Fitted f;
  f.x = fit_feature_map(ds, FeatureMapKind::standardize, 0).transform(ds);
  f.y = ds.noisy_labels;
  BaseModelSpec spec = BaseModelSpec::defaults(family);
  spec.max_iter = 40;
  f.model = fit(spec, f.x, f.y, 3);
  return f;
}

ProbeStream stream_of(std::vector<ProbeMember> members, std::size_t n, int width) {
  auto shared = std::make_shared<std::vector<ProbeMember>>(std::move(members));
  auto pos = std::make_shared<std::size_t>(0);
  const std::size_t total = shared->size();
  return ProbeStream(
      [shared, pos]() -> std::optional<ProbeMember> {
        if (*pos == shared->size()) return std::nullopt;
        return (*shared)[(*pos)++];
      },
      total, n, width);
}

ProbeMember member(const Matrix& v, std::optional<std::vector<char>> bag = std::nullopt) {
  ProbeMember m;
  m.matrix.values = v;
  m.in_bag = std::move(bag);
  return m;
}

}  // namespace

TEST_SUITE("probe") {
  TEST_CASE("scalar probes match their definitions") {
    const Fitted f = trained(ModelFamily::klm);
    const Matrix p = f.model->predict_proba(f.x);
    const Matrix z = f.model->decision_scores(f.x);
    const Matrix acc = run_probe(ProbeKind::accuracy, *f.model, f.x, f.y).values;
    const Matrix conf = run_probe(ProbeKind::self_confidence, *f.model, f.x, f.y).values;
    const Matrix loss = run_probe(ProbeKind::logloss, *f.model, f.x, f.y).values;
    const Matrix margin = run_probe(ProbeKind::margin, *f.model, f.x, f.y).values;
    const Matrix l2 = run_probe(ProbeKind::l2_onehot, *f.model, f.x, f.y).values;
    for (Eigen::Index i = 0; i < f.x.rows(); ++i) {
      const int y = f.y[static_cast<std::size_t>(i)];
      Eigen::Index arg;
      p.row(i).maxCoeff(&arg);
      CHECK(acc(i, 0) == (arg == y ? 1.0 : 0.0));
      CHECK(conf(i, 0) == p(i, y));
      CHECK(loss(i, 0) == doctest::Approx(-std::log(p(i, y))));
      double other = -1e300;
      for (int c = 0; c < 3; ++c) {
        if (c != y) other = std::max(other, z(i, c));
      }
      CHECK(margin(i, 0) == doctest::Approx(z(i, y) - other));
      Eigen::RowVectorXd e = Eigen::RowVectorXd::Zero(3);
      e(y) = 1.0;
      CHECK(l2(i, 0) == doctest::Approx((p.row(i) - e).norm()));
    }
  }

  TEST_CASE("adjusted confidence subtracts the class mean") {
    const Fitted f = trained(ModelFamily::klm);
    const Matrix conf = run_probe(ProbeKind::self_confidence, *f.model, f.x, f.y).values;
    const Matrix adj = run_probe(ProbeKind::adjusted_confidence, *f.model, f.x, f.y).values;
    for (int c = 0; c < 3; ++c) {
      double s = 0.0, n = 0.0;
      for (std::size_t i = 0; i < f.y.size(); ++i) {
        if (f.y[i] == c) s += conf(static_cast<Eigen::Index>(i), 0), n += 1.0;
      }
      for (std::size_t i = 0; i < f.y.size(); ++i) {
        const auto r = static_cast<Eigen::Index>(i);
        if (f.y[i] == c) CHECK(adj(r, 0) == doctest::Approx(conf(r, 0) - s / n));
      }
    }
  }

  TEST_CASE("input gradient probe delegates to the model") {
    const Fitted f = trained(ModelFamily::klm);
    const Matrix g = run_probe(ProbeKind::input_gradient, *f.model, f.x, f.y).values;
    CHECK(g.cols() == f.x.cols());
    for (Eigen::Index i = 0; i < 10; ++i) {
      CHECK(g.row(i).isApprox(f.model->input_gradient(f.x.row(i), f.y[static_cast<std::size_t>(i)])));
    }
  }

  TEST_CASE("gradient probes need klm") {
    const Fitted f = trained(ModelFamily::gbt, 80);
    for (auto k : {ProbeKind::grad_norm_sq, ProbeKind::grad_cosine, ProbeKind::self_influence}) {
      CHECK_THROWS_AS(check_probe_capabilities(k, ModelFamily::gbt), Error);
      CHECK_THROWS_AS(run_probe(k, *f.model, f.x, f.y), Error);
    }
    CHECK_NOTHROW(check_probe_capabilities(ProbeKind::margin, ModelFamily::knn));
  }

  TEST_CASE("self influence matches a direct solve") {
    Rng rng(4);
    const Matrix g = fixtures::random_matrix(7, 4, rng);
    const Matrix a = fixtures::random_matrix(4, 4, rng);
    const Matrix h = a * a.transpose();
    const Vector s = self_influence_from(g, h, 0.1);
    const Matrix damped = h + 0.1 * Matrix::Identity(4, 4);
    for (Eigen::Index i = 0; i < 7; ++i) {
      const Vector gi = g.row(i).transpose();
      const Vector sol = damped.fullPivLu().solve(gi);
      CHECK(s(i) == doctest::Approx(gi.dot(sol)).epsilon(1e-9));
    }
  }

  TEST_CASE("leave one out cosine matches the loop") {
    Rng rng(5);
    Matrix g = fixtures::random_matrix(9, 3, rng);
    g.row(4).setZero();
    const Vector c = leave_one_out_cosine(g);
    for (Eigen::Index i = 0; i < 9; ++i) {
      Eigen::RowVectorXd rest = Eigen::RowVectorXd::Zero(3);
      for (Eigen::Index j = 0; j < 9; ++j) {
        if (j != i) rest += g.row(j);
      }
      rest /= 8.0;
      const double denom = g.row(i).norm() * rest.norm();
      CHECK(c(i) == doctest::Approx(denom == 0.0 ? 0.0 : g.row(i).dot(rest) / denom).epsilon(1e-12));
    }
    CHECK(c(4) == 0.0);
  }

  TEST_CASE("probe names round trip") {
    for (auto k : all_probes()) CHECK(parse_probe(to_string(k)) == k);
    CHECK_THROWS_AS(parse_probe("nope"), Error);
  }
}

TEST_SUITE("ensemble") {
  TEST_CASE("bootstrap out of bag fraction") {
    double oob = 0.0;
    for (std::size_t m = 0; m < 500; ++m) {
      const auto bag = bootstrap_mask(1000, 42, m);
      oob += double(std::count(bag.begin(), bag.end(), 0)) / 1000.0;
    }
    CHECK(std::abs(oob / 500.0 - 0.368) <= 0.01);
  }

  TEST_CASE("bootstrap masks agree with the draws") {
    std::vector<std::size_t> draws;
    const auto bag = bootstrap_mask(50, 1, 3, &draws);
    CHECK(draws.size() == 50);
    std::vector<char> rebuilt(50, 0);
    for (auto d : draws) rebuilt[d] = 1;
    CHECK(rebuilt == bag);
    CHECK(bootstrap_mask(50, 1, 3) == bag);
    CHECK(bootstrap_mask(50, 1, 4) != bag);
  }

  TEST_CASE("kfold assignment partitions and stratifies") {
    const Labels y = fixtures::blobs(503, 3, 2).noisy_labels;
    const auto fold = kfold_assignment(y, 3, 5, 9);
    std::vector<std::size_t> sizes(5, 0);
    for (int f : fold) {
      REQUIRE(f >= 0);
      REQUIRE(f < 5);
      ++sizes[static_cast<std::size_t>(f)];
    }
    CHECK(*std::max_element(sizes.begin(), sizes.end()) - *std::min_element(sizes.begin(), sizes.end()) <= 3);
  }

  TEST_CASE("kfold stream masks cover each row out of bag once") {
    const Dataset ds = fixtures::blobs(150, 2, 1);
    const Matrix x = fit_feature_map(ds, FeatureMapKind::standardize, 0).transform(ds);
    ProbeStream s = probe_model(EnsembleStrategy::kfold(5, 3), BaseModelSpec::klm_defaults(), x, ds.noisy_labels, 2,
                                ProbeKind::accuracy);
    std::vector<int> oob(150, 0);
    while (auto m = s.next()) {
      REQUIRE(m->in_bag);
      for (std::size_t i = 0; i < 150; ++i) oob[i] += (*m->in_bag)[i] ? 0 : 1;
    }
    CHECK(s.produced() == 5);
    CHECK(std::all_of(oob.begin(), oob.end(), [](int v) { return v == 1; }));
  }

  TEST_CASE("loo leaves exactly one row out per member") {
    const Dataset ds = fixtures::blobs(40, 2, 1);
    const Matrix x = fit_feature_map(ds, FeatureMapKind::standardize, 0).transform(ds);
    ProbeStream s = probe_model(EnsembleStrategy::loo(), BaseModelSpec::knn_defaults(), x, ds.noisy_labels, 2,
                                ProbeKind::accuracy);
    std::size_t i = 0;
    while (auto m = s.next()) {
      CHECK(std::count(m->in_bag->begin(), m->in_bag->end(), 0) == 1);
      CHECK((*m->in_bag)[i] == 0);
      ++i;
    }
    CHECK(i == 40);
  }

  TEST_CASE("progressive stream follows staged fit") {
    const Dataset ds = fixtures::blobs(200, 2, 1);
    const Matrix x = fit_feature_map(ds, FeatureMapKind::standardize, 0).transform(ds);
    BaseModelSpec spec = BaseModelSpec::gbt_defaults();
    spec.early_stopping = false;
    spec.max_iter = 12;
    ProbeStream s = probe_model(EnsembleStrategy::progressive(), spec, x, ds.noisy_labels, 2, ProbeKind::margin);
    std::size_t k = 0;
    while (auto m = s.next()) {
      REQUIRE(m->in_bag);
      CHECK(std::all_of(m->in_bag->begin(), m->in_bag->end(), [](char c) { return c == 1; }));
      CHECK(m->matrix.model_index == k);
      ++k;
    }
    CHECK(k == 12);
    CHECK(member_count(EnsembleStrategy::progressive(), 200, spec) == 12);
  }

  TEST_CASE("fit rows restrict training and leave the rest out of bag") {
    const Dataset ds = fixtures::blobs(60, 2, 1);
    const Matrix x = fit_feature_map(ds, FeatureMapKind::standardize, 0).transform(ds);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < 60; i += 2) rows.push_back(i);
    ProbeStream s = probe_model(EnsembleStrategy::bootstrap(4, 1), BaseModelSpec::klm_defaults(), x, ds.noisy_labels,
                                2, ProbeKind::accuracy, rows);
    while (auto m = s.next()) {
      for (std::size_t i = 1; i < 60; i += 2) CHECK((*m->in_bag)[i] == 0);
    }
  }

  TEST_CASE("strategy strings round trip") {
    for (const char* t : {"none", "bootstrap:20", "kfold:5", "loo", "progressive"}) {
      CHECK(EnsembleStrategy::parse(t).to_string() == t);
    }
    CHECK_THROWS_AS(EnsembleStrategy::parse("kfold:1"), Error);
    CHECK_THROWS_AS(EnsembleStrategy::parse("bagging"), Error);
  }
}

TEST_SUITE("aggregate") {
  TEST_CASE("sum mean and variance closed forms") {
    const double a = 1.5, b = -0.5;
    auto two = [&] {
      return stream_of({member(Matrix::Constant(3, 1, a)), member(Matrix::Constant(3, 1, b))}, 3, 1);
    };
    auto s1 = two(), s2 = two();
    CHECK(aggregate(AggregatorKind::sum, s1).isApproxToConstant(a + b));
    CHECK(aggregate(AggregatorKind::mean, s2).isApproxToConstant((a + b) / 2));
    auto pm = stream_of({member(Matrix::Constant(2, 1, 2.0)), member(Matrix::Constant(2, 1, -2.0))}, 2, 1);
    CHECK(aggregate(AggregatorKind::variance, pm).isApproxToConstant(4.0));
    auto flat = stream_of({member(Matrix::Constant(2, 3, 0.7)), member(Matrix::Constant(2, 3, 0.7))}, 2, 3);
    CHECK(aggregate(AggregatorKind::variance, flat).isZero());
    auto single = stream_of({member(Matrix::Constant(2, 1, 0.25))}, 2, 1);
    CHECK(aggregate(AggregatorKind::sum, single).isApproxToConstant(0.25));
  }

  TEST_CASE("variance matches a two pass oracle") {
    Rng rng(3);
    std::vector<Matrix> vals;
    std::vector<ProbeMember> ms;
    for (int m = 0; m < 9; ++m) {
      vals.push_back(fixtures::random_matrix(5, 2, rng) * 100.0 + Matrix::Constant(5, 2, 1e4));
      ms.push_back(member(vals.back()));
    }
    auto s = stream_of(ms, 5, 2);
    const Vector v = aggregate(AggregatorKind::variance, s);
    for (Eigen::Index i = 0; i < 5; ++i) {
      double total = 0.0;
      for (Eigen::Index j = 0; j < 2; ++j) {
        double mean = 0.0;
        for (const auto& x : vals) mean += x(i, j) / 9.0;
        double var = 0.0;
        for (const auto& x : vals) var += (x(i, j) - mean) * (x(i, j) - mean) / 9.0;
        total += var / 2.0;
      }
      CHECK(v(i) == doctest::Approx(total).epsilon(1e-9));
    }
  }

  TEST_CASE("oob mean and in out difference match masked loops") {
    Rng rng(8);
    std::vector<ProbeMember> ms;
    for (std::size_t m = 0; m < 500; ++m) {
      Matrix v(30, 1);
      for (int i = 0; i < 30; ++i) v(i, 0) = uniform01(rng) < 0.7 ? 1.0 : 0.0;
      ms.push_back(member(v, bootstrap_mask(30, 5, m)));
    }
    auto s1 = stream_of(ms, 30, 1), s2 = stream_of(ms, 30, 1);
    const Vector oob = aggregate(AggregatorKind::oob_mean, s1);
    const Vector diff = aggregate(AggregatorKind::in_out_diff, s2);
    for (Eigen::Index i = 0; i < 30; ++i) {
      double in = 0, nin = 0, out = 0, nout = 0;
      for (const auto& m : ms) {
        if ((*m.in_bag)[static_cast<std::size_t>(i)]) {
          in += m.matrix.values(i, 0), nin += 1;
        } else {
          out += m.matrix.values(i, 0), nout += 1;
        }
      }
      CHECK(oob(i) == doctest::Approx(out / nout).epsilon(1e-12));
      CHECK(diff(i) == doctest::Approx(in / nin - out / nout).epsilon(1e-12));
    }
  }

  TEST_CASE("rows never out of bag are undefined") {
    std::vector<char> all(2, 1);
    std::vector<char> half{1, 0};
    auto s = stream_of({member(Matrix::Ones(2, 1), all), member(Matrix::Zero(2, 1), half)}, 2, 1);
    const Vector v = aggregate(AggregatorKind::oob_mean, s);
    CHECK(std::isnan(v(0)));
    CHECK(v(1) == 0.0);
  }

  TEST_CASE("aggregators check their stream") {
    auto s = stream_of({member(Matrix::Ones(2, 1))}, 2, 1);
    CHECK_THROWS_AS(aggregate(AggregatorKind::oob_mean, s), Error);
    auto t = stream_of({member(Matrix::Constant(2, 1, 0.5))}, 2, 1);
    CHECK_THROWS_AS(aggregate(AggregatorKind::forget_count, t), Error);
    CHECK_THROWS_AS(effective_orientation(ProbeKind::input_gradient, AggregatorKind::sum), Error);
    CHECK(effective_orientation(ProbeKind::input_gradient, AggregatorKind::variance) == Orientation::suspicion);
    CHECK(effective_orientation(ProbeKind::accuracy, AggregatorKind::in_out_diff) == Orientation::suspicion);
    CHECK(effective_orientation(ProbeKind::logloss, AggregatorKind::sum) == Orientation::suspicion);
  }

  TEST_CASE("vote is the majority of binary members") {
    Matrix a(3, 1), b(3, 1), c(3, 1);
    a << 1, 0, 1;
    b << 1, 0, 0;
    c << 0, 0, 1;
    auto s = stream_of({member(a), member(b), member(c)}, 3, 1);
    const Vector v = aggregate(AggregatorKind::vote, s);
    CHECK(v(0) > v(1));
    CHECK(v(2) == v(0));
  }
}
