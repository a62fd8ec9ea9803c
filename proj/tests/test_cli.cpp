#include <doctest.h>

#include <fstream>
#include <sstream>

#include "config.hpp"
#include "experiment.hpp"
#include "fixtures.hpp"

using namespace labelprobe;
using namespace labelprobe::cli;
using nlohmann::json;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ExperimentConfig small(const fs::path& out, const std::string& extra = "") {
  const std::string text = R"(
seed = 21
detector = "small_loss"
[dataset]
synthetic = "rules"
n = 500
[noise]
kind = "rules"
[search]
detector_draws = 2
estimator_draws = 2
)" + extra;
  return resolve_config(parse_config(text), std::nullopt, out);
}

std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line[0] != '#') out.push_back(line);
  }
  return out;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("parser reads the supported grammar") {
    const json doc = parse_config(R"(# top comment
seed = 1_000
name = "a \"quoted\" name"
path = 'C:\raw'
rate = 2.5e-1
flag = true
list = [1, 2,
        3]  # trailing comment
inline = { a = 1, b.c = "x" }
"quoted key" = -4

[dataset.extra]
x = [ "a", 'b' ]
)");
    CHECK(doc["seed"] == 1000);
    CHECK(doc["name"] == "a \"quoted\" name");
    CHECK(doc["path"] == "C:\\raw");
    CHECK(doc["rate"] == 0.25);
    CHECK(doc["flag"] == true);
    CHECK(doc["list"] == json::array({1, 2, 3}));
    CHECK(doc["inline"]["b"]["c"] == "x");
    CHECK(doc["quoted key"] == -4);
    CHECK(doc["dataset"]["extra"]["x"] == json::array({"a", "b"}));
  }

  TEST_CASE("parser errors carry a position") {
    CHECK_THROWS_WITH_AS(parse_config("a = 1\nb = \n", "cfg"), doctest::Contains("cfg:2:"), Error);
    CHECK_THROWS_WITH_AS(parse_config("a = 1\na = 2\n"), doctest::Contains("duplicate key"), Error);
    CHECK_THROWS_WITH_AS(parse_config("[t]\n[t]\n"), doctest::Contains("defined twice"), Error);
    CHECK_THROWS_AS(parse_config("[[t]]\n"), Error);
    CHECK_THROWS_AS(parse_config("a = \"open\n"), Error);
    CHECK_THROWS_AS(parse_config("a = 1 2\n"), Error);
    CHECK_THROWS_AS(parse_config("a = [1, 2\n"), Error);
    CHECK_THROWS_AS(parse_config("a = 1.2.3\n"), Error);
  }

  TEST_CASE("resolution validates names and needs a seed") {
    CHECK_THROWS_WITH_AS(resolve_config(parse_config("[dataset]\nn = 10\n")), doctest::Contains("seed"), Error);
    CHECK_NOTHROW(resolve_config(parse_config("[dataset]\nn = 10\n"), 3));
    CHECK_THROWS_WITH_AS(resolve_config(parse_config("seed = 1\nbogus = 2\n")), doctest::Contains("bogus"), Error);
    CHECK_THROWS_AS(resolve_config(parse_config("seed = 1\ndetector = \"nope\"\n")), Error);
    CHECK_THROWS_AS(resolve_config(parse_config("seed = 1\n[noise]\nkind = \"nnar\"\n")), Error);
    CHECK_THROWS_AS(resolve_config(parse_config("seed = 1\n[split]\ngrid = [0.15]\n")), Error);
    CHECK_THROWS_AS(resolve_config(parse_config("seed = 1\n[estimator]\nfamily = \"svm\"\n")), Error);
    CHECK_THROWS_AS(resolve_config(parse_config("seed = 1\ndetector = { preset = \"aum\", probe = \"margin\" }\n")),
                    Error);
    CHECK_THROWS_AS(resolve_config(parse_config("seed = 1\n[pipeline]\nvalidation = \"maybe\"\n")), Error);
  }

  TEST_CASE("config hash ignores the output directory") {
    const auto a = resolve_config(parse_config("seed = 1\nout = \"x\"\n"));
    const auto b = resolve_config(parse_config("seed = 1\nout = \"y\"\n"));
    const auto c = resolve_config(parse_config("seed = 2\nout = \"x\"\n"));
    CHECK(a.hash == b.hash);
    CHECK(a.hash != c.hash);
    CHECK(resolve_config(parse_config("seed = 1\n"), 2).hash == c.hash);
  }

  TEST_CASE("detector tables build the same detector as the library") {
    const auto d = build_detector(parse_config("d = { preset = \"aum\", learning_rate = 0.2 }\n")["d"], 5);
    auto spec = preset("aum", 5).model();
    spec.learning_rate = 0.2;
    CHECK(d.fingerprint() == preset("aum", 5).with_model(spec).fingerprint());
    const auto custom = build_detector(
        parse_config("d = { model = \"klm\", ensemble = \"kfold:4\", probe = \"margin\", aggregate = \"oob_mean\" }\n")["d"],
        5);
    CHECK(custom.ensemble().to_string() == "kfold:4");
    CHECK(build_detector(json("cleanlab"), 9).fingerprint() == preset("cleanlab", 9).fingerprint());
  }

  TEST_CASE("worker count resolution") {
    ::unsetenv(kWorkersEnv);
    CHECK(resolve_workers(std::nullopt) == 1);
    ::setenv(kWorkersEnv, "3", 1);
    CHECK(resolve_workers(std::nullopt) == 3);
    CHECK(resolve_workers(2u) == 2);
    ::setenv(kWorkersEnv, "zero", 1);
    CHECK_THROWS_AS(resolve_workers(std::nullopt), Error);
    ::unsetenv(kWorkersEnv);
  }
}

TEST_SUITE("cli") {
  TEST_CASE("inject-noise writes covered flags and a stochastic transition matrix") {
    fixtures::TempDir dir("inject");
    const auto cfg = small(dir.path);
    CHECK(cmd_inject_noise(cfg) == 0);
    const std::string csv = slurp(dir.path / "noisy.csv");
    CHECK(csv.find("# config_hash " + cfg.hash) != std::string::npos);
    CHECK(data_lines(csv).size() == 501);
    const json t = json::parse(slurp(dir.path / "transition.json"));
    CHECK(t["provenance"]["seed"] == 21);
    const auto& v = t["values"];
    for (std::size_t j = 0; j < v[0].size(); ++j) {
      double s = 0.0;
      for (const auto& row : v) s += row[j].get<double>();
      CHECK(s == doctest::Approx(1.0));
    }
    const Dataset reread = load_csv(dir.path / "noisy.csv");
    CHECK(reread.size() < 500);
  }

  TEST_CASE("inject-noise with zero ncar rate keeps labels") {
    fixtures::TempDir dir("inject0");
    const auto cfg = small(dir.path, "");
    auto doc = cfg.resolved;
    doc["noise"] = {{"kind", "ncar"}, {"rate", 0.0}};
    CHECK(cmd_inject_noise(resolve_config(doc, std::nullopt, dir.path)) == 0);
    const Dataset ds = load_csv(dir.path / "noisy.csv");
    CHECK(ds.noisy_labels == *ds.clean_labels);
  }

  TEST_CASE("detect is reproducible and matches the library") {
    fixtures::TempDir a("detect-a"), b("detect-b");
    const auto cfg = small(a.path);
    CHECK(cmd_detect(cfg) == 0);
    CHECK(cmd_detect(small(b.path)) == 0);
    const std::string first = slurp(a.path / "trust_scores.csv");
    CHECK(first == slurp(b.path / "trust_scores.csv"));
    const auto lines = data_lines(first);
    CHECK(lines.front() == "id,score,rank");
    const Dataset ds = noisy_dataset(cfg);
    CHECK(lines.size() == ds.size() + 1);
    const auto x = fit_feature_map(ds, cfg.dataset.feature_map, derive_seed(cfg.seed, 3)).transform(ds);
    const auto lib = preset("small_loss", cfg.seed).trust_scores(x, ds.noisy_labels, ds.n_classes);
    CHECK(first.find("# fingerprint " + lib.fingerprint) != std::string::npos);
    // rank 1 is the least trusted row
    Eigen::Index worst;
    lib.scores.minCoeff(&worst);
    const std::string& row = lines[static_cast<std::size_t>(worst) + 1];
    CHECK(row.substr(row.rfind(',') + 1) == "1");
  }

  TEST_CASE("pipeline writes a report and resumes without recomputation") {
    fixtures::TempDir dir("pipe");
    const auto cfg = small(dir.path);
    CHECK(cmd_pipeline(cfg) == 0);
    const json rep = json::parse(slurp(dir.path / "report.json"));
    CHECK(rep["provenance"]["config_hash"] == cfg.hash);
    CHECK(rep["report"]["baselines"].contains("silver"));
    const auto log = dir.path / "trials.jsonl";
    const std::string before = slurp(log);
    const auto stamp = fs::last_write_time(log);
    CHECK(cmd_pipeline(cfg) == 0);
    CHECK(fs::last_write_time(log) == stamp);
    CHECK(slurp(log) == before);
    // a torn log resumes to the same bytes
    const auto lines = data_lines(before);
    {
      std::ofstream out(log, std::ios::trunc);
      for (std::size_t i = 0; i < lines.size() / 2; ++i) out << lines[i] << '\n';
      out << lines[lines.size() / 2].substr(0, 20);
    }
    CHECK(cmd_pipeline(cfg) == 0);
    CHECK(slurp(log) == before);
  }

  TEST_CASE("relabel pipeline reports against its gold baseline") {
    fixtures::TempDir dir("relabel");
    const auto cfg = small(dir.path, "[pipeline]\nhandler = \"relabel\"\nvalidation = \"clean\"\n");
    CHECK(cmd_pipeline(cfg) == 0);
    const json rep = json::parse(slurp(dir.path / "report.json"));
    CHECK(rep["report"]["handler"] == "relabel");
  }

  TEST_CASE("benchmark is deterministic across worker counts and resumable") {
    fixtures::TempDir a("bench-a"), b("bench-b");
    const std::string matrix = R"(
[benchmark]
detectors = ["small_loss", "cleanlab"]
noise = ["ncar", "rules"]
validation = ["noisy", "clean"]
)";
    CHECK(cmd_benchmark(small(a.path, matrix), 1) == 0);
    CHECK(cmd_benchmark(small(b.path, matrix), 2) == 0);
    const std::string ra = slurp(a.path / "results.csv");
    CHECK(ra == slurp(b.path / "results.csv"));
    const auto rows = data_lines(ra);
    // header + 2 noise x 2 validation x (2 detectors + 4 baselines)
    CHECK(rows.size() == 1 + 2 * 2 * 6);
    CHECK(ra.find("baseline:silver") != std::string::npos);
    const auto log = a.path / "trials" / "ncar.filter.small_loss-0.jsonl";
    REQUIRE(fs::exists(log));
    const auto stamp = fs::last_write_time(log);
    CHECK(cmd_benchmark(small(a.path, matrix), 2) == 0);
    CHECK(fs::last_write_time(log) == stamp);
    CHECK(slurp(a.path / "results.csv") == ra);

    fixtures::TempDir r("report");
    CHECK(cmd_report({a.path / "trials"}, r.path / "flat.csv") == 0);
    const auto flat = data_lines(slurp(r.path / "flat.csv"));
    CHECK(flat.front().rfind("unit,source", 0) == 0);
    CHECK(flat.size() > 1);
  }

  TEST_CASE("a failing cell is reported and the rest still complete") {
    fixtures::TempDir dir("bench-fail");
    // leave-one-out refuses more than 2000 training rows
    const std::string text = R"(
seed = 4
[dataset]
synthetic = "blobs"
n = 3500
[search]
detector_draws = 1
estimator_draws = 1
[benchmark]
noise = ["ncar"]
detectors = ["knn_edit"]
)";
    const auto cfg = resolve_config(parse_config(text), std::nullopt, dir.path);
    CHECK(cmd_benchmark(cfg, 1) == 1);
    const auto rows = data_lines(slurp(dir.path / "results.csv"));
    CHECK(rows.size() == 1 + 4);
  }
}
