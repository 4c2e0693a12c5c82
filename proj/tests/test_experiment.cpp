#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "experiment.hpp"

using namespace scorelab;
using namespace scorelab::cli;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kConfigs = fs::path(SCORELAB_SOURCE_DIR) / "configs" / "experiments";

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("scorelab_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json small_sample() {
  return json::parse(R"({
    "schema": "scorelab.experiment/1",
    "kind": "sample",
    "world": "../worlds/view_bias.json",
    "seeds": {"first": 3, "count": 4},
    "samples_per_seed": 3,
    "out": "unused",
    "sample": {"composer": "perp_neg", "positive": "back",
               "negatives": [{"prompt": "front", "weight": 1.5}, "side"], "trajectories": true}
  })");
}

std::string config_field(json config) {
  try {
    parse_experiment(config, kConfigs);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<no error>";
}

}  // namespace

TEST_SUITE("experiment") {

TEST_CASE("kind names") {
  CHECK(parse_kind("compare-composers") == ExperimentKind::Compare);
  CHECK(parse_kind("interp-sweep") == ExperimentKind::Interp);
  CHECK(parse_kind("ablate-weights") == ExperimentKind::Ablate);
  CHECK(to_string(ExperimentKind::Distill) == "distill");
  CHECK_THROWS_AS(parse_kind("train"), ConfigError);
}

TEST_CASE("fnv1a64 reference values") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("parsing fills the experiment") {
  const auto e = parse_experiment(small_sample(), kConfigs);
  CHECK(e.kind == ExperimentKind::Sample);
  CHECK(e.first_seed == 3);
  CHECK(e.seed_count == 4);
  CHECK(e.samples_per_seed == 3);
  CHECK(e.config_hash.size() == 16);
  const auto& spec = std::get<SampleSpec>(e.spec);
  REQUIRE(spec.proto.negatives.size() == 2);
  CHECK(spec.proto.negatives[0].weight == 1.5);
  CHECK(spec.proto.negatives[1].weight == 1.0);
  CHECK(spec.target == "back");
  CHECK(spec.trajectories);
}

TEST_CASE("config errors name the field") {
  auto with = [](const char* pointer, json value) {
    json c = small_sample();
    c[json::json_pointer(pointer)] = std::move(value);
    return c;
  };
  CHECK(config_field(with("/schema", "scorelab.experiment/2")) == "schema");
  CHECK(config_field(with("/kind", "train")) == "kind");
  CHECK(config_field(with("/bogus", 1)) == "bogus");
  CHECK(config_field(with("/world", "../worlds/nope.json")) == "world");
  CHECK(config_field(with("/seeds/count", 0)) == "seeds.count");
  CHECK(config_field(with("/seeds/first", -1)) == "seeds.first");
  CHECK(config_field(with("/steps", 5000)) == "steps");
  CHECK(config_field(with("/eta", 2.0)) == "eta");
  CHECK(config_field(with("/sample/guidance", 0.5)) == "sample.guidance");
  CHECK(config_field(with("/sample/positive", "dog")) == "sample.positive");
  CHECK(config_field(with("/sample/target", "dog")) == "sample.target");
  CHECK(config_field(with("/sample/composer", "dpm")) == "sample.composer");
  CHECK(config_field(with("/sample/negatives/0/prompt", "dog")) == "sample.negatives[0].prompt");
  CHECK(config_field(with("/sample/negatives/0/extra", 1)) == "sample.negatives[0].extra");
  CHECK(config_field(with("/compare", json::object())) == "compare");

  json no_out = small_sample();
  no_out.erase("out");
  CHECK(config_field(no_out) == "out");

  json cfg_negs = small_sample();
  cfg_negs["sample"]["composer"] = "cfg";
  CHECK(config_field(cfg_negs) == "sample.negatives");

  json distill = json::parse(slurp(kConfigs / "janus.json"));
  distill["distill"]["bins"] = 2;
  CHECK(config_field(distill) == "distill.bins");
  distill["distill"]["bins"] = 24;
  distill["distill"]["sds"]["t_min"] = 0.99;
  CHECK(config_field(distill).rfind("distill.sds", 0) == 0);
  distill["distill"]["sds"]["t_min"] = 0.02;
  distill["distill"]["plan"]["f_fs"] = json::array({1.0, -1.0, 0.0});
  CHECK(config_field(distill).rfind("distill.plan", 0) == 0);
}

TEST_CASE("hash ignores out and threads but not seeds") {
  const json c = small_sample();
  const auto a = parse_experiment(c, kConfigs);
  const auto b = parse_experiment(c, kConfigs, Overrides{std::nullopt, fs::path("elsewhere"), 7});
  CHECK(a.config_hash == b.config_hash);
  CHECK(b.threads == 7);
  CHECK(b.out_dir == fs::path("elsewhere"));
  const auto s = parse_experiment(c, kConfigs, Overrides{11, std::nullopt, std::nullopt});
  CHECK(s.first_seed == 11);
  CHECK(s.config_hash != a.config_hash);
}

TEST_CASE("shipped configs parse") {
  for (const auto& entry : fs::directory_iterator(kConfigs)) {
    if (entry.path().extension() != ".json") continue;
    CAPTURE(entry.path().filename().string());
    CHECK_NOTHROW(load_experiment(entry.path()));
  }
}

TEST_CASE("reruns are byte-identical and threads do not matter") {
  const fs::path d1 = scratch("rerun1"), d2 = scratch("rerun2"), d3 = scratch("rerun3");
  const json c = small_sample();
  const auto r1 = run_experiment(parse_experiment(c, kConfigs, {std::nullopt, d1, 1}));
  const auto r2 = run_experiment(parse_experiment(c, kConfigs, {std::nullopt, d2, 1}));
  const auto r3 = run_experiment(parse_experiment(c, kConfigs, {std::nullopt, d3, 4}));
  REQUIRE(r1.files.size() == 3);
  for (const auto& f : r1.files) {
    CAPTURE(f.filename().string());
    const std::string a = slurp(f);
    CHECK(!a.empty());
    CHECK(a == slurp(d2 / f.filename()));
    CHECK(a == slurp(d3 / f.filename()));
  }
  std::string hash;
  const auto table = read_report_summary(d1, &hash);
  CHECK(hash == parse_experiment(c, kConfigs).config_hash);
  CHECK(table.rows == r1.summary.rows);
  CHECK(slurp(d1 / "samples.csv").rfind("# config_hash=" + hash, 0) == 0);

  std::ostringstream os;
  print_table(os, table);
  CHECK(os.str().find(table.header.front()) != std::string::npos);
  for (const auto& d : {d1, d2, d3}) fs::remove_all(d);
}

TEST_CASE("compare runs report one row per composer and combination") {
  json c = json::parse(slurp(kConfigs / "table1_back.json"));
  c["seeds"]["count"] = 2;
  const fs::path out = scratch("compare");
  const auto e = parse_experiment(c, kConfigs, {std::nullopt, out, 2});
  const auto r = run_experiment(e);
  CHECK(r.summary.rows.size() == 9);
  CHECK(fs::exists(out / "assignments.csv"));
  const json report = json::parse(slurp(out / "report.json"));
  CHECK(report["schema"] == std::string(kReportSchema));
  CHECK(report["config_hash"] == e.config_hash);
  fs::remove_all(out);
}

TEST_CASE("distillation divergence surfaces as DivergenceError") {
  json c = json::parse(slurp(kConfigs / "janus.json"));
  c["seeds"]["count"] = 1;
  c["distill"]["variants"] = json::array({"vanilla"});
  c["distill"]["sds"]["step_size"] = 1e5;
  c["distill"]["sds"]["iterations"] = 200;
  const fs::path out = scratch("diverge");
  CHECK_THROWS_AS(run_experiment(parse_experiment(c, kConfigs, {std::nullopt, out, 1})), DivergenceError);
  fs::remove_all(out);
}

TEST_CASE("missing report is an error") {
  CHECK_THROWS(read_report_summary(scratch("nothing")));
}

}  // TEST_SUITE
