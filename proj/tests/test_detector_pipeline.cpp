#include <doctest.h>

#include <set>

#include "fixtures.hpp"
#include "labelprobe/detector.hpp"
#include "labelprobe/evaluation.hpp"
#include "labelprobe/metrics.hpp"

using namespace labelprobe;

namespace {

Partition noisy_partition(std::size_t n, std::uint64_t seed) {
  return fixtures::partition(fixtures::ncar(fixtures::blobs(n, 3, seed, 3.0), 0.3, seed + 1), seed + 2);
}

SearchConfig tiny(std::size_t det = 2, std::size_t est = 2) {
  SearchConfig cfg;
  cfg.budget = {det, est};
  cfg.seed = 99;
  cfg.validation_kind = ValidationKind::clean;
  return cfg;
}

Vector from(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

}  // namespace

TEST_SUITE("detector") {
  TEST_CASE("every preset resolves and scores") {
    const Partition p = noisy_partition(300, 1);
    const Matrix& x = p.train.features;
    for (const auto& name : preset_names()) {
      CAPTURE(name);
      const ModelProbingDetector d = preset(name, 4);
      CHECK(d.preset_name() == name);
      const TrustScores t = d.trust_scores(x, p.train.noisy_labels, 3);
      CHECK(t.scores.size() == x.rows());
      CHECK(t.scores.allFinite());
      CHECK(t.fingerprint == d.fingerprint());
    }
    CHECK_THROWS_AS(preset("nope"), Error);
  }

  TEST_CASE("trust scores are deterministic and seed dependent") {
    const Partition p = noisy_partition(300, 2);
    const Matrix& x = p.train.features;
    const auto a = preset("consensus", 1).trust_scores(x, p.train.noisy_labels, 3);
    const auto b = preset("consensus", 1).trust_scores(x, p.train.noisy_labels, 3);
    const auto c = preset("consensus", 2).trust_scores(x, p.train.noisy_labels, 3);
    CHECK(a.scores == b.scores);
    CHECK(a.fingerprint == b.fingerprint);
    CHECK(a.fingerprint != c.fingerprint);
  }

  TEST_CASE("detector json round trip keeps the fingerprint") {
    for (const auto& name : preset_names()) {
      const ModelProbingDetector d = preset(name, 8);
      const auto back = ModelProbingDetector::from_json(nlohmann::json::parse(d.to_json().dump()));
      CHECK(back.fingerprint() == d.fingerprint());
      CHECK(back.canonical() == d.canonical());
    }
  }

  TEST_CASE("incompatible blocks are rejected at construction") {
    CHECK_THROWS_AS(ModelProbingDetector(BaseModelSpec::klm_defaults(), EnsembleStrategy::bootstrap(5),
                                         ProbeKind::accuracy, AggregatorKind::forget_count),
                    Error);
    CHECK_THROWS_AS(ModelProbingDetector(BaseModelSpec::klm_defaults(), EnsembleStrategy::progressive(),
                                         ProbeKind::margin, AggregatorKind::forget_count),
                    Error);
    CHECK_THROWS_AS(ModelProbingDetector(BaseModelSpec::klm_defaults(), EnsembleStrategy::none(), ProbeKind::margin,
                                         AggregatorKind::oob_mean),
                    Error);
    CHECK_THROWS_AS(ModelProbingDetector(BaseModelSpec::gbt_defaults(), EnsembleStrategy::none(),
                                         ProbeKind::self_influence, AggregatorKind::sum),
                    Error);
  }

  TEST_CASE("vosg on gbt warns") {
    const auto d = preset("vosg").with_model(BaseModelSpec::gbt_defaults());
    CHECK_FALSE(d.warnings().empty());
    CHECK(preset("vosg").warnings().empty());
  }

  TEST_CASE("median imputation fills undefined rows") {
    Vector s = from({1.0, std::nan(""), 3.0, 10.0, std::nan("")});
    CHECK(impute_median(s) == 2);
    CHECK(s(1) == 3.0);
    CHECK(s(4) == 3.0);
  }

  TEST_CASE("iterative refinement keeps shape and improves or holds detection") {
    const Partition p = noisy_partition(400, 3);
    const Matrix& x = p.train.features;
    const auto det = preset("small_loss", 1);
    const auto base = det.trust_scores(x, p.train.noisy_labels, 3);
    const auto refined = iterative_refine(det, x, p.train.noisy_labels, 3, 2, 0.7);
    CHECK(refined.scores.size() == base.scores.size());
    const auto mask = p.train.mislabeled_mask();
    CHECK(detection_auroc(refined.scores, mask) > 0.8);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("q zero trusts everything") {
    const auto s = split(from({3, 1, 2}), {0.0}, Labels{0, 1, 0}, 2);
    CHECK(s.untrusted.empty());
    CHECK(s.trusted == std::vector<std::size_t>{0, 1, 2});
  }

  TEST_CASE("global split takes the smallest floor(q n)") {
    const auto s = split(from({9, 0, 8, 1, 7, 2, 6, 3, 5, 4}), {0.5}, Labels(10, 0), 1);
    CHECK(s.untrusted == std::vector<std::size_t>{1, 3, 5, 7, 9});
    CHECK(split(from({1, 2, 3}), {0.3}, Labels(3, 0), 1).untrusted.empty());  // floor(0.9)
    CHECK(split(from({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}), {0.3}, Labels(10, 0), 1).untrusted.size() == 3);
  }

  TEST_CASE("ties send the lower index first") {
    const auto s = split(from({1, 1, 1, 1}), {0.5}, Labels(4, 0), 1);
    CHECK(s.untrusted == std::vector<std::size_t>{0, 1});
  }

  TEST_CASE("per class split uses floor per group") {
    Labels y{0, 0, 0, 0, 0, 0, 0, 0, 1, 1};
    Vector s(10);
    s << 0, 1, 2, 3, 4, 5, 6, 7, 100, 101;
    const auto r = split(s, {0.5, SplitMode::per_class}, y, 2);
    CHECK(r.untrusted == std::vector<std::size_t>{0, 1, 2, 3, 8});
    const auto g = split(s, {0.5, SplitMode::global}, y, 2);
    CHECK(g.untrusted == std::vector<std::size_t>{0, 1, 2, 3, 4});
  }

  TEST_CASE("split invariants hold on random scores") {
    Rng rng(6);
    for (int rep = 0; rep < 50; ++rep) {
      const std::size_t n = 5 + uniform_index(rng, 60);
      Vector s(static_cast<Eigen::Index>(n));
      Labels y(n);
      for (std::size_t i = 0; i < n; ++i) {
        s(static_cast<Eigen::Index>(i)) = std::round(standard_normal(rng) * 4.0);
        y[i] = static_cast<int>(uniform_index(rng, 3));
      }
      for (double q : kQuantileGrid) {
        for (auto mode : {SplitMode::global, SplitMode::per_class}) {
          const SplitConfig cfg{q, mode};
          const auto a = split(s, cfg, y, 3);
          std::vector<std::size_t> all = a.trusted;
          all.insert(all.end(), a.untrusted.begin(), a.untrusted.end());
          std::sort(all.begin(), all.end());
          CHECK(all == iota_indices(n));
          CHECK(std::is_sorted(a.trusted.begin(), a.trusted.end()));
          // strictly increasing transforms leave the decision unchanged
          Vector t(s.size());
          for (Eigen::Index i = 0; i < s.size(); ++i) t(i) = std::exp(0.5 * s(i)) + 3.0;
          const auto b = split(t, cfg, y, 3);
          CHECK(b.untrusted == a.untrusted);
          if (mode == SplitMode::global) {
            CHECK(a.untrusted.size() == static_cast<std::size_t>(std::floor(q * double(n) + 1e-9)));
            double lo = 1e300, hi = -1e300;
            for (auto i : a.trusted) lo = std::min(lo, s(static_cast<Eigen::Index>(i)));
            for (auto i : a.untrusted) hi = std::max(hi, s(static_cast<Eigen::Index>(i)));
            CHECK(hi <= lo);
          }
        }
      }
    }
  }

  TEST_CASE("filter is idempotent and counts match") {
    const Partition p = noisy_partition(300, 4);
    Rng rng(1);
    Vector s(static_cast<Eigen::Index>(p.train.size()));
    for (auto& v : s) v = uniform01(rng);
    const auto cut = split(s, {0.4}, p.train.noisy_labels, 3);
    const Dataset once = handle_filter(p.train, cut);
    CHECK(once.size() == cut.trusted.size());
    const Vector s2 = Vector::Zero(static_cast<Eigen::Index>(once.size()));
    const Dataset twice = handle_filter(once, split(s2, {0.0}, once.noisy_labels, 3));
    CHECK(twice.example_ids == once.example_ids);
    CHECK(twice.noisy_labels == once.noisy_labels);
  }

  TEST_CASE("filtering with the oracle split leaves only genuine rows") {
    const Partition p = noisy_partition(300, 5);
    const auto mask = p.train.mislabeled_mask();
    Vector s(static_cast<Eigen::Index>(mask.size()));
    for (std::size_t i = 0; i < mask.size(); ++i) s(static_cast<Eigen::Index>(i)) = mask[i] ? 0.0 : 1.0;
    const double q = double(std::count(mask.begin(), mask.end(), true)) / double(mask.size());
    const auto cut = split(s, {q + 1e-12}, p.train.noisy_labels, 3);
    const Dataset f = handle_filter(p.train, cut);
    CHECK(f.noisy_labels == *f.clean_labels);
  }

  TEST_CASE("relabel rewrites exactly the untrusted rows") {
    const Partition p = noisy_partition(300, 6);
    const auto n = p.train.size();
    Rng rng(2);
    Vector s(static_cast<Eigen::Index>(n));
    for (auto& v : s) v = uniform01(rng);
    const auto cut = split(s, {0.1}, p.train.noisy_labels, 3);
    const Dataset r = handle_relabel(p.train, cut);
    CHECK(r.size() == n);
    for (auto i : cut.trusted) CHECK(r.noisy_labels[i] == p.train.noisy_labels[i]);
    for (auto i : cut.untrusted) CHECK(r.noisy_labels[i] == (*p.train.clean_labels)[i]);
    const SplitResult everything{{}, iota_indices(n)};
    CHECK(handle_relabel(p.train, everything).noisy_labels == *p.train.clean_labels);
    CHECK(handle_relabel(p.train, {iota_indices(n), {}}).noisy_labels == p.train.noisy_labels);
    Dataset no_clean = p.train;
    no_clean.clean_labels.reset();
    CHECK_THROWS_AS(handle_relabel(no_clean, everything), Error);
  }

  TEST_CASE("a class emptied by filtering is reported") {
    const Partition p = noisy_partition(200, 7);
    Vector s(static_cast<Eigen::Index>(p.train.size()));
    for (std::size_t i = 0; i < p.train.size(); ++i) s(static_cast<Eigen::Index>(i)) = p.train.noisy_labels[i] == 2 ? -1 : 1;
    const auto counts = class_counts(p.train.noisy_labels, 3);
    const double q = (double(counts[2]) + 0.5) / double(p.train.size());
    const PipelineResult r = run_from_scores(p, s, {q}, Handler::filter, BaseModelSpec::klm_defaults());
    CHECK(r.handle.vanished_classes == std::vector<int>{2});
    CHECK(std::isfinite(r.losses.test));
    CHECK(r.class_balance_handled == 0.0);
  }

  TEST_CASE("run pipeline is bit deterministic") {
    const Partition p = noisy_partition(300, 8);
    const auto det = preset("small_loss", 3);
    const auto a = run_pipeline(p, det, {0.2}, Handler::filter, BaseModelSpec::klm_defaults(), 5);
    const auto b = run_pipeline(p, det, {0.2}, Handler::filter, BaseModelSpec::klm_defaults(), 5);
    CHECK(a.split.untrusted == b.split.untrusted);
    CHECK(a.losses.test == b.losses.test);
    CHECK(a.losses.validation_noisy == b.losses.validation_noisy);
  }

  TEST_CASE("search over singleton spaces runs the grid once") {
    const Partition p = noisy_partition(300, 9);
    SearchConfig cfg = tiny(1, 1);
    cfg.search_detector = false;
    cfg.search_estimator = false;
    const auto r = random_search(p, preset("small_loss", 1), BaseModelSpec::klm_defaults(), cfg);
    CHECK(r.trials.size() == 10);
    CHECK(r.computed == 10);
    std::set<double> qs;
    for (const auto& t : r.trials) qs.insert(t.q);
    CHECK(qs.size() == 10);
  }

  TEST_CASE("selection picks the minimum and breaks ties by q then order") {
    std::vector<TrialRecord> t(4);
    double v[] = {0.5, 0.3, 0.3, 0.4};
    double q[] = {0.0, 0.4, 0.2, 0.1};
    for (int i = 0; i < 4; ++i) {
      t[i].losses.validation_noisy = v[i];
      t[i].losses.validation_clean = 1.0 - v[i];
      t[i].losses.test = q[i];
      t[i].q = q[i];
    }
    CHECK(select_best(t, ValidationKind::noisy) == 2);
    CHECK(select_best(t, ValidationKind::clean) == 0);
    CHECK(select_best(t, ValidationKind::oracle) == 0);
    t[3].q = 0.2;
    t[3].losses.validation_noisy = 0.3;
    CHECK(select_best(t, ValidationKind::noisy) == 2);
  }

  TEST_CASE("search selection and determinism") {
    const Partition p = noisy_partition(300, 10);
    const auto det = preset("small_loss", 1);
    const auto est = BaseModelSpec::klm_defaults();
    const auto a = random_search(p, det, est, tiny());
    const auto b = random_search(p, det, est, tiny());
    REQUIRE(a.trials.size() == 40);
    for (std::size_t i = 0; i < a.trials.size(); ++i) {
      CHECK(a.trials[i].fingerprint == b.trials[i].fingerprint);
      CHECK(a.trials[i].losses.test == b.trials[i].losses.test);
    }
    const double best = *a.best_trial().losses.validation_clean;
    for (const auto& t : a.trials) CHECK(best <= *t.losses.validation_clean);
    SearchConfig oracle = tiny();
    oracle.validation_kind = ValidationKind::oracle;
    const double bt = a.trials[select_best(a.trials, ValidationKind::oracle)].losses.test;
    for (const auto& t : a.trials) CHECK(bt <= t.losses.test);
  }

  TEST_CASE("cached trials are not recomputed") {
    const Partition p = noisy_partition(300, 11);
    const auto det = preset("small_loss", 1);
    std::vector<TrialRecord> logged;
    const auto a = random_search(p, det, BaseModelSpec::klm_defaults(), tiny(), nullptr,
                                 [&](const TrialRecord& t) { logged.push_back(t); });
    CHECK(logged.size() == a.trials.size());
    TrialCache cache;
    for (const auto& t : logged) {
      const auto back = TrialRecord::from_json(nlohmann::json::parse(t.to_json().dump()));
      cache.emplace(back.fingerprint, back);
    }
    const auto b = random_search(p, det, BaseModelSpec::klm_defaults(), tiny(), &cache);
    CHECK(b.computed == 0);
    CHECK(b.best == a.best);
    for (std::size_t i = 0; i < a.trials.size(); ++i) CHECK(b.trials[i].losses.test == a.trials[i].losses.test);
  }

  TEST_CASE("baselines line up with their definitions") {
    const Partition p = noisy_partition(300, 12);
    const SearchConfig cfg = tiny();
    const Baselines b = compute_baselines(p, BaseModelSpec::klm_defaults(), cfg);
    // q = 0 with random scores is exactly the none baseline
    for (std::size_t j = 0; j < cfg.budget.estimator_draws; ++j) {
      const auto& none = b.none.trials[j];
      bool found = false;
      for (const auto& t : b.random.trials) {
        if (t.q == 0.0 && t.estimator_index == j && t.detector_index == 0) {
          CHECK(t.losses.test == none.losses.test);
          CHECK(t.losses.validation_noisy == none.losses.validation_noisy);
          found = true;
        }
      }
      CHECK(found);
    }
    const auto mask = p.train.mislabeled_mask();
    CHECK(b.silver.trials[0].n_trusted == static_cast<std::size_t>(std::count(mask.begin(), mask.end(), false)));
    CHECK(b.gold.trials[0].n_trusted == b.none.trials[0].n_trusted);
    const auto losses = baseline_losses(b, ValidationKind::clean);
    CHECK(std::isfinite(losses.random));
  }

  TEST_CASE("relabel everything matches gold") {
    const Partition p = noisy_partition(300, 13);
    const auto est = BaseModelSpec::klm_defaults();
    SearchConfig cfg = tiny(1, 1);
    cfg.search_estimator = false;
    const Baselines b = compute_baselines(p, est, cfg);
    const Dataset gold = handle_relabel(p.train, {{}, iota_indices(p.train.size())});
    const auto direct = search_estimator(p, gold, "check", est, cfg);
    CHECK(direct.best_trial().losses.test == b.gold.best_trial().losses.test);
  }

  TEST_CASE("reports normalize against their baselines") {
    const Partition p = noisy_partition(300, 14);
    const SearchConfig cfg = tiny();
    const auto est = BaseModelSpec::klm_defaults();
    const Baselines b = compute_baselines(p, est, cfg);
    const auto none_report = make_report(p, b.none, b, ValidationKind::clean);
    CHECK(*none_report.normalized == 200.0);
    const auto silver_report = make_report(p, b.silver, b, ValidationKind::clean);
    CHECK(*silver_report.normalized == 100.0);
    const auto r = make_report(p, random_search(p, preset("small_loss", 1), est, cfg), b, ValidationKind::clean);
    CHECK(r.detection_auroc.has_value());
    CHECK(r.csv_row().size() == MetricReport::csv_header().size());
    CHECK(r.to_json().contains("baselines"));
  }

  TEST_CASE("empty validation is an error") {
    Partition p = noisy_partition(200, 15);
    p.validation = p.validation.subset(std::vector<std::size_t>{});
    CHECK_THROWS_AS(random_search(p, preset("small_loss"), BaseModelSpec::klm_defaults(), tiny(1, 1)), Error);
  }

  TEST_CASE("names round trip") {
    CHECK(parse_handler("relabel") == Handler::relabel);
    CHECK(parse_split_mode("per_class") == SplitMode::per_class);
    CHECK(parse_validation_kind("oracle") == ValidationKind::oracle);
    CHECK_THROWS_AS(parse_handler("drop"), Error);
  }
}
