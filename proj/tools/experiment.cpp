#include "experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <initializer_list>
#include <ostream>
#include <random>
#include <sstream>

#include "scorelab/parallel.hpp"
#include "scorelab/schedule.hpp"
#include "scorelab/world_io.hpp"

namespace scorelab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::string_view to_string(ExperimentKind kind) noexcept {
  switch (kind) {
    case ExperimentKind::Sample: return "sample";
    case ExperimentKind::Compare: return "compare";
    case ExperimentKind::Interp: return "interp";
    case ExperimentKind::Ablate: return "ablate";
    case ExperimentKind::Distill: return "distill";
  }
  return "?";
}

ExperimentKind parse_kind(std::string_view name) {
  if (name == "sample") return ExperimentKind::Sample;
  if (name == "compare" || name == "compare-composers") return ExperimentKind::Compare;
  if (name == "interp" || name == "interp-sweep") return ExperimentKind::Interp;
  if (name == "ablate" || name == "ablate-weights") return ExperimentKind::Ablate;
  if (name == "distill") return ExperimentKind::Distill;
  throw ConfigError("kind", "unknown experiment kind '" + std::string(name) + "'");
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace {

// Read-only view of one config object that knows its dotted path, so every
// error can name the field.
class Node {
 public:
  Node(const json& j, std::string path) : j_(&j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }
  const std::string& path() const noexcept { return path_; }
  bool has(std::string_view key) const { return j_->contains(key); }
  const json& raw(std::string_view key) const {
    if (!has(key)) throw ConfigError(field(key), "required field is missing");
    return j_->at(std::string(key));
  }
  Node child(std::string_view key) const { return Node(raw(key), field(key)); }

  void allow(std::initializer_list<std::string_view> keys) const {
    for (const auto& item : j_->items()) {
      if (std::find(keys.begin(), keys.end(), item.key()) == keys.end()) {
        throw ConfigError(field(item.key()), "unknown field");
      }
    }
  }

  double number(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_number()) throw ConfigError(field(key), "expected a number");
    return v.get<double>();
  }
  double number(std::string_view key, double fallback) const {
    return has(key) ? number(key) : fallback;
  }

  long long integer(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_number_integer()) throw ConfigError(field(key), "expected an integer");
    return v.get<long long>();
  }
  long long integer(std::string_view key, long long fallback) const {
    return has(key) ? integer(key) : fallback;
  }
  int positive_int(std::string_view key, int fallback) const {
    const long long v = integer(key, fallback);
    if (v < 1 || v > 100000000) throw ConfigError(field(key), "must be a positive integer");
    return static_cast<int>(v);
  }

  std::string text(std::string_view key) const {
    const json& v = raw(key);
    if (!v.is_string()) throw ConfigError(field(key), "expected a string");
    return v.get<std::string>();
  }
  std::string text(std::string_view key, std::string fallback) const {
    return has(key) ? text(key) : fallback;
  }

  bool flag(std::string_view key, bool fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_boolean()) throw ConfigError(field(key), "expected true or false");
    return v.get<bool>();
  }

  std::vector<double> numbers(std::string_view key, std::vector<double> fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(field(key), "expected a non-empty array of numbers");
    std::vector<double> out;
    for (const auto& e : v) {
      if (!e.is_number()) throw ConfigError(field(key), "expected a non-empty array of numbers");
      out.push_back(e.get<double>());
    }
    return out;
  }

  std::vector<std::string> strings(std::string_view key, std::vector<std::string> fallback) const {
    if (!has(key)) return fallback;
    const json& v = raw(key);
    if (!v.is_array() || v.empty()) throw ConfigError(field(key), "expected a non-empty array of strings");
    std::vector<std::string> out;
    for (const auto& e : v) {
      if (!e.is_string()) throw ConfigError(field(key), "expected a non-empty array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

 private:
  const json* j_;
  std::string path_;
};

// Runs fn, turning library precondition errors into config errors under `path`.
template <class Fn>
auto within(const std::string& path, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const ParameterError& e) {
    const std::string& f = e.field();
    const bool same = path.size() >= f.size() && path.compare(path.size() - f.size(), f.size(), f) == 0 &&
                      (path.size() == f.size() || path[path.size() - f.size() - 1] == '.');
    throw ConfigError(same ? path : path + "." + f, e.what());
  } catch (const Error& e) {
    throw ConfigError(path, e.what());
  }
}

std::string check_prompt(const OracleWorld& world, const std::string& label, const std::string& field) {
  if (!world.has_prompt(label)) throw ConfigError(field, "unknown prompt '" + label + "'");
  return label;
}

std::string check_mode(const OracleWorld& world, const std::string& id, const std::string& field) {
  within(field, [&] { return world.mode_index(id); });
  return id;
}

double checked_guidance(const Node& node) {
  const double g = node.number("guidance", 7.5);
  if (!(g >= 1.0) || !std::isfinite(g)) throw ConfigError(node.field("guidance"), "must be >= 1");
  return g;
}

// Negatives are [{"prompt": label, "weight": w}, ...] or bare labels. Weights
// are magnitudes, so a signed -1.5 means 1.5. Without an explicit weight a
// lone negative gets 1.5 and each of several gets 1.0.
std::vector<NegativePrompt> parse_negatives(const json& arr, const std::string& field,
                                            const OracleWorld& world) {
  if (!arr.is_array()) throw ConfigError(field, "expected an array of negatives");
  const double fallback = arr.size() == 1 ? 1.5 : 1.0;
  std::vector<NegativePrompt> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string f = field + "[" + std::to_string(i) + "]";
    if (arr[i].is_string()) {
      out.push_back({check_prompt(world, arr[i].get<std::string>(), f), fallback});
      continue;
    }
    const Node n(arr[i], f);
    n.allow({"prompt", "weight"});
    const double w = std::abs(n.number("weight", fallback));
    if (!std::isfinite(w)) throw ConfigError(n.field("weight"), "must be finite");
    out.push_back({check_prompt(world, n.text("prompt"), n.field("prompt")), w});
  }
  return out;
}

WeightFn parse_weight_fn(const Node& node, std::string_view key, WeightFn fallback) {
  if (!node.has(key)) return fallback;
  const json& v = node.raw(key);
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
    throw ConfigError(node.field(key), "expected [a, b, c]");
  }
  WeightFn f{v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
  within(node.field(key), [&] { f.validate(); });
  return f;
}

ViewPromptPlan parse_plan(const Node& parent, const OracleWorld& world) {
  ViewPromptPlan plan = within(parent.field("plan"), [&] { return ViewPromptPlan::from_world(world); });
  if (!parent.has("plan")) return plan;
  const Node n = parent.child("plan");
  n.allow({"w_back_side", "w_back_front", "w_side_front", "w_front_side", "f_sb", "f_fsb", "f_fs",
           "f_sf", "r_perturb_delta", "flip_sf_argument"});
  plan.w_back_side = std::abs(n.number("w_back_side", plan.w_back_side));
  plan.w_back_front = std::abs(n.number("w_back_front", plan.w_back_front));
  plan.w_side_front = std::abs(n.number("w_side_front", plan.w_side_front));
  plan.w_front_side = std::abs(n.number("w_front_side", plan.w_front_side));
  plan.f_sb = parse_weight_fn(n, "f_sb", plan.f_sb);
  plan.f_fsb = parse_weight_fn(n, "f_fsb", plan.f_fsb);
  plan.f_fs = parse_weight_fn(n, "f_fs", plan.f_fs);
  plan.f_sf = parse_weight_fn(n, "f_sf", plan.f_sf);
  plan.r_perturb_delta = n.number("r_perturb_delta", plan.r_perturb_delta);
  plan.flip_sf_argument = n.flag("flip_sf_argument", plan.flip_sf_argument);
  within(n.path(), [&] { plan.validate(); });
  return plan;
}

std::vector<ComposerKind> parse_composers(const Node& node, std::vector<std::string> fallback) {
  std::vector<ComposerKind> out;
  for (const auto& name : node.strings("composers", std::move(fallback))) {
    out.push_back(within(node.field("composers"), [&] { return parse_composer(name); }));
  }
  return out;
}

// Every composer is configured with one guidance scale g in the form
// eps_u + g * (...): cfg and naive negation get tau = g - 1 and naive
// negative weights are multiplied by g.
SampleRun make_run(ComposerKind kind, double guidance, double w_pos, Condition positive,
                   std::vector<NegativePrompt> negatives) {
  SampleRun run;
  run.composer = kind;
  run.guidance = kind == ComposerKind::PerpNeg ? guidance : guidance - 1.0;
  run.w_pos = w_pos;
  run.positive = std::move(positive);
  if (kind == ComposerKind::NaiveNegation) {
    for (auto& n : negatives) n.weight *= guidance;
  }
  if (kind != ComposerKind::Cfg) run.negatives = std::move(negatives);
  return run;
}

SampleSpec parse_sample(const Node& root, const OracleWorld& world) {
  const Node n = root.child("sample");
  n.allow({"composer", "guidance", "w_pos", "positive", "negatives", "target", "trajectories"});
  const ComposerKind kind = within(n.field("composer"), [&] { return parse_composer(n.text("composer", "perp_neg")); });
  const double g = checked_guidance(n);
  const double w_pos = n.number("w_pos", 1.0);
  if (!(w_pos > 0.0)) throw ConfigError(n.field("w_pos"), "must be > 0");
  const std::string positive = check_prompt(world, n.text("positive"), n.field("positive"));
  std::vector<NegativePrompt> negatives;
  if (n.has("negatives")) negatives = parse_negatives(n.raw("negatives"), n.field("negatives"), world);
  if (kind == ComposerKind::Cfg && !negatives.empty()) {
    throw ConfigError(n.field("negatives"), "the cfg composer takes no negatives");
  }
  SampleSpec spec;
  spec.proto = make_run(kind, g, w_pos, positive, std::move(negatives));
  spec.target = check_mode(world, n.text("target", positive), n.field("target"));
  spec.trajectories = n.flag("trajectories", false);
  return spec;
}

CompareSpec parse_compare(const Node& root, const OracleWorld& world) {
  const Node n = root.child("compare");
  n.allow({"target", "positive", "guidance", "w_pos", "composers", "combinations"});
  CompareSpec spec;
  spec.target = check_mode(world, n.text("target"), n.field("target"));
  spec.positive = check_prompt(world, n.text("positive", spec.target), n.field("positive"));
  spec.guidance = checked_guidance(n);
  spec.w_pos = n.number("w_pos", 1.0);
  if (!(spec.w_pos > 0.0)) throw ConfigError(n.field("w_pos"), "must be > 0");
  spec.composers = parse_composers(n, {"cfg", "naive", "perp_neg"});
  const json& combos = n.raw("combinations");
  if (!combos.is_array() || combos.empty()) {
    throw ConfigError(n.field("combinations"), "expected a non-empty array of negative lists");
  }
  for (std::size_t i = 0; i < combos.size(); ++i) {
    spec.combinations.push_back(
        parse_negatives(combos[i], n.field("combinations") + "[" + std::to_string(i) + "]", world));
  }
  return spec;
}

InterpSpec parse_interp(const Node& root, const OracleWorld& world) {
  const Node n = root.child("interp");
  n.allow({"pairs", "stride", "samples", "guidance", "plan", "select"});
  InterpSpec spec;
  for (const auto& p : n.strings("pairs", {"front_side", "side_back"})) {
    if (p == "front_side") {
      spec.pairs.push_back(ViewPair::FrontSide);
    } else if (p == "side_back") {
      spec.pairs.push_back(ViewPair::SideBack);
    } else {
      throw ConfigError(n.field("pairs"), "unknown pair '" + p + "' (front_side or side_back)");
    }
  }
  const double stride = n.number("stride", 0.25);
  const double intervals = 1.0 / stride;
  if (!(stride > 0.0 && stride <= 1.0) || std::abs(intervals - std::round(intervals)) > 1e-9) {
    throw ConfigError(n.field("stride"), "must divide 1 into a whole number of steps");
  }
  const int count = static_cast<int>(std::round(intervals));
  for (int k = 0; k <= count; ++k) spec.rs.push_back(static_cast<double>(k) / count);
  spec.samples = n.positive_int("samples", 1000);
  spec.guidance = checked_guidance(n);
  spec.plan = parse_plan(n, world);
  (void)within(n.field("plan"), [&] { return ViewModes::from_world(world); });
  if (n.has("select")) {
    const Node s = n.child("select");
    s.allow({"a", "b", "c", "samples"});
    WeightFnGrid grid;
    grid.a = s.numbers("a", grid.a);
    grid.b = s.numbers("b", grid.b);
    grid.c = s.numbers("c", grid.c);
    for (const auto& f : grid.expand()) within(s.path(), [&] { f.validate(); });
    spec.grid = grid;
    spec.select_samples = s.positive_int("samples", 10);
  }
  return spec;
}

AblateSpec parse_ablate(const Node& root, const OracleWorld& world) {
  const Node n = root.child("ablate");
  n.allow({"target", "positive", "guidance", "w_pos", "composers", "weights", "negatives"});
  AblateSpec spec;
  spec.target = check_mode(world, n.text("target"), n.field("target"));
  spec.positive = check_prompt(world, n.text("positive", spec.target), n.field("positive"));
  spec.guidance = checked_guidance(n);
  spec.w_pos = n.number("w_pos", 1.0);
  if (!(spec.w_pos > 0.0)) throw ConfigError(n.field("w_pos"), "must be > 0");
  spec.composers = parse_composers(n, {"naive", "perp_neg"});
  for (double w : n.numbers("weights", {0.1, 0.5, 1.0, 1.5, 5.0})) spec.weights.push_back(std::abs(w));
  for (const auto& label : n.strings("negatives", {"front"})) {
    spec.negatives.push_back(check_prompt(world, label, n.field("negatives")));
  }
  return spec;
}

DistillSpec parse_distill(const Node& root, const OracleWorld& world) {
  const Node n = root.child("distill");
  n.allow({"variants", "bins", "init_scale", "scene_seed_offset", "sds", "plan", "log_every"});
  DistillSpec spec;
  for (const auto& v : n.strings("variants", {"vanilla", "perp_neg"})) {
    spec.variants.push_back(within(n.field("variants"), [&] { return parse_variant(v); }));
  }
  spec.bins = n.positive_int("bins", 24);
  if (spec.bins < 3) throw ConfigError(n.field("bins"), "need at least 3 bins");
  spec.init_scale = n.number("init_scale", 0.5);
  if (!(spec.init_scale >= 0.0)) throw ConfigError(n.field("init_scale"), "must be >= 0");
  const long long offset = n.integer("scene_seed_offset", 1000);
  if (offset < 0) throw ConfigError(n.field("scene_seed_offset"), "must be >= 0");
  spec.scene_seed_offset = static_cast<std::uint64_t>(offset);
  spec.log_every = n.positive_int("log_every", 1);
  if (n.has("sds")) {
    const Node s = n.child("sds");
    s.allow({"guidance", "t_min", "t_max", "weighting", "step_size", "iterations"});
    spec.sds.guidance = s.number("guidance", spec.sds.guidance);
    spec.sds.t_min = s.number("t_min", spec.sds.t_min);
    spec.sds.t_max = s.number("t_max", spec.sds.t_max);
    const std::string w = s.text("weighting", "constant");
    if (w == "constant") {
      spec.sds.weighting = LossWeighting::Constant;
    } else if (w == "one_minus_alpha_bar") {
      spec.sds.weighting = LossWeighting::OneMinusAlphaBar;
    } else {
      throw ConfigError(s.field("weighting"), "expected constant or one_minus_alpha_bar");
    }
    spec.sds.step_size = s.number("step_size", spec.sds.step_size);
    spec.sds.iterations = s.positive_int("iterations", spec.sds.iterations);
    within(n.field("sds"), [&] { spec.sds.validate(); });
  }
  spec.plan = parse_plan(n, world);
  (void)within(n.field("plan"), [&] { return ViewModes::from_world(world); });
  return spec;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

Experiment parse_experiment(const json& input, const fs::path& base_dir, const Overrides& overrides) {
  json config = input;
  if (overrides.seed) {
    if (!config.is_object()) throw ConfigError("<root>", "expected an object");
    if (!config.contains("seeds")) config["seeds"] = json::object();
    if (config["seeds"].is_object()) config["seeds"]["first"] = *overrides.seed;
  }
  if (overrides.out) config["out"] = overrides.out->generic_string();
  if (overrides.threads) config["threads"] = *overrides.threads;

  const Node root(config, "");
  root.allow({"schema", "kind", "world", "seeds", "samples_per_seed", "steps", "eta", "out", "threads",
              "sample", "compare", "interp", "ablate", "distill"});
  if (root.text("schema") != kExperimentSchema) {
    throw ConfigError("schema", "expected \"" + std::string(kExperimentSchema) + "\"");
  }
  const ExperimentKind kind = parse_kind(root.text("kind"));

  // The world is a path (relative to the config file) or an inline object.
  const json& world_node = root.raw("world");
  OracleWorld world = [&] {
    try {
      if (world_node.is_string()) {
        const fs::path p = base_dir / world_node.get<std::string>();
        if (!fs::exists(p)) throw ConfigError("world", "file not found: " + p.generic_string());
        return load_world(p);
      }
      if (world_node.is_object()) return parse_world(world_node.dump());
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("world", e.what());
    }
    throw ConfigError("world", "expected a file path or an inline world object");
  }();

  std::uint64_t first_seed = 0;
  int seed_count = 1;
  if (root.has("seeds")) {
    const Node s = root.child("seeds");
    s.allow({"first", "count"});
    const long long first = s.integer("first", 0);
    if (first < 0) throw ConfigError("seeds.first", "must be >= 0");
    first_seed = static_cast<std::uint64_t>(first);
    seed_count = s.positive_int("count", 1);
  }
  const int samples_per_seed = root.positive_int("samples_per_seed", 1);
  const int steps = root.positive_int("steps", 50);
  if (steps > default_schedule().steps()) throw ConfigError("steps", "exceeds the schedule length");
  const double eta = root.number("eta", 0.0);
  if (!(eta >= 0.0 && eta <= 1.0)) throw ConfigError("eta", "must lie in [0, 1]");
  const int threads = root.positive_int("threads", 1);
  if (!root.has("out")) throw ConfigError("out", "no output directory; set \"out\" or pass --out");
  const fs::path out_dir = root.text("out");

  const std::string block{to_string(kind)};
  for (std::string_view other : {"sample", "compare", "interp", "ablate", "distill"}) {
    if (other != block && root.has(other)) {
      throw ConfigError(std::string(other), "block does not match kind \"" + block + "\"");
    }
  }

  using Spec = decltype(Experiment::spec);
  Spec spec = [&]() -> Spec {
    switch (kind) {
      case ExperimentKind::Sample: return parse_sample(root, world);
      case ExperimentKind::Compare: return parse_compare(root, world);
      case ExperimentKind::Interp: return parse_interp(root, world);
      case ExperimentKind::Ablate: return parse_ablate(root, world);
      case ExperimentKind::Distill: return parse_distill(root, world);
    }
    throw ConfigError("kind", "unhandled kind");
  }();

  // Output location and thread count do not change results, so they stay
  // out of the hash and of the recorded config.
  config.erase("out");
  config.erase("threads");
  std::string hash = hex16(fnv1a64(config.dump() + "\n" + world_to_json(world)));
  Experiment e{.kind = kind,
               .config = std::move(config),
               .world = std::move(world),
               .config_hash = std::move(hash),
               .out_dir = out_dir,
               .threads = threads,
               .first_seed = first_seed,
               .seed_count = seed_count,
               .samples_per_seed = samples_per_seed,
               .steps = steps,
               .eta = eta,
               .spec = std::move(spec)};
  return e;
}

Experiment load_experiment(const fs::path& config_path, const Overrides& overrides) {
  std::ifstream in(config_path, std::ios::binary);
  if (!in) throw ConfigError("config", "cannot open " + config_path.generic_string());
  json config;
  try {
    config = json::parse(in);
  } catch (const json::parse_error& err) {
    throw ConfigError("config", std::string("not valid JSON: ") + err.what());
  }
  return parse_experiment(config, config_path.parent_path(), overrides);
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string short_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string ratio(int a, int b) { return std::to_string(a) + "/" + std::to_string(b); }

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string_view pair_name(ViewPair p) { return p == ViewPair::FrontSide ? "front_side" : "side_back"; }

ojson weight_fn_json(const WeightFn& f) { return ojson::array({f.a, f.b, f.c}); }

ojson plan_json(const ViewPromptPlan& plan) {
  return ojson{{"w_back_side", plan.w_back_side},   {"w_back_front", plan.w_back_front},
               {"w_side_front", plan.w_side_front}, {"w_front_side", plan.w_front_side},
               {"f_sb", weight_fn_json(plan.f_sb)}, {"f_fsb", weight_fn_json(plan.f_fsb)},
               {"f_fs", weight_fn_json(plan.f_fs)}, {"f_sf", weight_fn_json(plan.f_sf)},
               {"r_perturb_delta", plan.r_perturb_delta},
               {"flip_sf_argument", plan.flip_sf_argument}};
}

class Writer {
 public:
  explicit Writer(const Experiment& e) : e_(e) {
    std::error_code ec;
    fs::create_directories(e.out_dir, ec);
    if (ec || !fs::is_directory(e.out_dir)) {
      throw ConfigError("out", "cannot create output directory " + e.out_dir.generic_string());
    }
  }

  std::string csv_preamble() const { return "# config_hash=" + e_.config_hash + "\n"; }

  void text(const std::string& name, const std::string& body) {
    const fs::path path = e_.out_dir / name;
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << body;
    out.close();
    if (!out) throw ConfigError("out", "cannot write " + path.generic_string());
    files_.push_back(path);
  }

  void json_file(const std::string& name, const ojson& body) { text(name, body.dump(2) + "\n"); }

  ojson report_head() const {
    return ojson{{"schema", kReportSchema},
                 {"kind", to_string(e_.kind)},
                 {"config_hash", e_.config_hash},
                 {"config", ojson::parse(e_.config.dump())}};
  }

  void report(ojson body, const SummaryTable& table) {
    body["summary"] = ojson{{"title", table.title}, {"header", table.header}, {"rows", table.rows}};
    json_file("report.json", body);
  }

  std::vector<fs::path> files() && { return std::move(files_); }

 private:
  const Experiment& e_;
  std::vector<fs::path> files_;
};

std::vector<SampleRun> seed_runs(const Experiment& e, const SampleRun& proto) {
  std::vector<SampleRun> runs;
  for (int i = 0; i < e.seed_count; ++i) {
    SampleRun run = proto;
    run.seed = e.first_seed + static_cast<std::uint64_t>(i);
    run.n = e.samples_per_seed;
    run.steps = e.steps;
    run.eta = e.eta;
    run.label = "seed" + std::to_string(run.seed);
    runs.push_back(std::move(run));
  }
  return runs;
}

ojson runs_json(const SuccessReport& report) {
  ojson runs = ojson::array();
  for (const auto& r : report.runs) {
    runs.push_back({{"seed", r.seed}, {"combination", r.combination}, {"successes", r.successes},
                    {"n", r.n}, {"assignments", r.assignments}});
  }
  return runs;
}

ojson combos_json(const SuccessReport& report) {
  ojson combos = ojson::array();
  for (const auto& c : report.combinations) {
    combos.push_back({{"combination", c.combination}, {"successes", c.successes}, {"n", c.n}, {"rate", c.rate}});
  }
  return combos;
}

RunResult run_sample(const Experiment& e, const SampleSpec& spec, const VarianceSchedule& sched) {
  SampleRun proto = spec.proto;
  proto.trajectory_capture = spec.trajectories;
  const auto runs = seed_runs(e, proto);
  const auto results = generate_all(e.world, runs, sched, e.threads);
  const auto report = success_report(e.world, runs, results, spec.target);

  Writer w(e);
  std::ostringstream samples;
  samples << w.csv_preamble() << "seed,sample_idx,mode";
  for (int j = 0; j < e.world.dim(); ++j) samples << ",x" << j;
  samples << '\n';
  for (std::size_t r = 0; r < runs.size(); ++r) {
    for (std::size_t i = 0; i < results[r].samples.size(); ++i) {
      const auto& x = results[r].samples[i];
      samples << runs[r].seed << ',' << i << ',' << report.runs[r].assignments[i];
      for (Eigen::Index j = 0; j < x.size(); ++j) samples << ',' << num(x[j]);
      samples << '\n';
    }
  }
  w.text("samples.csv", samples.str());
  if (spec.trajectories) {
    std::ostringstream traj;
    traj << w.csv_preamble();
    for (std::size_t r = 0; r < runs.size(); ++r) {
      write_trajectories_csv(traj, runs[r].label, results[r], r == 0);
    }
    w.text("trajectories.csv", traj.str());
  }

  SummaryTable table{"sample: " + std::string(to_string(proto.composer)) + ", target " + spec.target,
                     {"combination", "successes", "rate"},
                     {}};
  for (const auto& c : report.combinations) table.rows.push_back({c.combination, ratio(c.successes, c.n), fixed3(c.rate)});

  ojson body = w.report_head();
  body["composer"] = to_string(proto.composer);
  body["target"] = report.target;
  body["successes"] = report.successes;
  body["total"] = report.total;
  body["success_rate"] = report.success_rate;
  body["combinations"] = combos_json(report);
  body["runs"] = runs_json(report);
  w.report(std::move(body), table);
  return {table, std::move(w).files()};
}

RunResult run_compare(const Experiment& e, const CompareSpec& spec, const VarianceSchedule& sched) {
  struct Block {
    ComposerKind kind;
    std::vector<SampleRun> runs;
  };
  std::vector<Block> blocks;
  std::vector<SampleRun> all;
  for (ComposerKind kind : spec.composers) {
    Block b{kind, {}};
    if (kind == ComposerKind::Cfg) {
      b.runs = seed_runs(e, make_run(kind, spec.guidance, spec.w_pos, spec.positive, {}));
    } else {
      for (const auto& combo : spec.combinations) {
        auto runs = seed_runs(e, make_run(kind, spec.guidance, spec.w_pos, spec.positive, combo));
        b.runs.insert(b.runs.end(), runs.begin(), runs.end());
      }
    }
    all.insert(all.end(), b.runs.begin(), b.runs.end());
    blocks.push_back(std::move(b));
  }
  const auto results = generate_all(e.world, all, sched, e.threads);

  Writer w(e);
  SummaryTable table{"compare: target " + spec.target + ", guidance " + short_num(spec.guidance),
                     {"composer", "combination", "successes", "rate"},
                     {}};
  std::ostringstream csv;
  csv << w.csv_preamble() << "composer,combination,seed,sample_idx,mode\n";
  ojson composers = ojson::array();
  std::size_t offset = 0;
  for (const auto& b : blocks) {
    const std::span<const GenerateResult> res(results.data() + offset, b.runs.size());
    offset += b.runs.size();
    const auto report = success_report(e.world, b.runs, res, spec.target);
    const std::string name{to_string(b.kind)};
    for (const auto& c : report.combinations) {
      table.rows.push_back({name, c.combination, ratio(c.successes, c.n), fixed3(c.rate)});
    }
    if (report.combinations.size() > 1) {
      table.rows.push_back({name, "(all)", ratio(report.successes, report.total), fixed3(report.success_rate)});
    }
    for (const auto& r : report.runs) {
      for (std::size_t i = 0; i < r.assignments.size(); ++i) {
        csv << name << ',' << r.combination << ',' << r.seed << ',' << i << ',' << r.assignments[i] << '\n';
      }
    }
    composers.push_back({{"composer", name},
                         {"successes", report.successes},
                         {"total", report.total},
                         {"success_rate", report.success_rate},
                         {"combinations", combos_json(report)}});
  }
  w.text("assignments.csv", csv.str());
  ojson body = w.report_head();
  body["target"] = spec.target;
  body["composers"] = std::move(composers);
  w.report(std::move(body), table);
  return {table, std::move(w).files()};
}

RunResult run_interp(const Experiment& e, const InterpSpec& spec, const VarianceSchedule& sched) {
  ViewPromptPlan plan = spec.plan;
  SweepConfig sweep;
  sweep.rs = spec.rs;
  sweep.samples = spec.samples;
  sweep.seed = e.first_seed;
  sweep.steps = e.steps;
  sweep.guidance = spec.guidance;
  sweep.threads = e.threads;

  ojson selections = ojson::array();
  if (spec.grid) {
    SweepConfig select = sweep;
    select.samples = spec.select_samples;
    for (ViewPair pair : spec.pairs) {
      const auto choice = select_weight_fns(e.world, plan, pair, *spec.grid, select, sched);
      if (pair == ViewPair::FrontSide) {
        plan.f_fs = choice.first;
        plan.f_sf = choice.second;
      } else {
        plan.f_sb = choice.first;
        plan.f_fsb = choice.second;
      }
      selections.push_back({{"pair", pair_name(pair)},
                            {pair == ViewPair::FrontSide ? "f_fs" : "f_sb", weight_fn_json(choice.first)},
                            {pair == ViewPair::FrontSide ? "f_sf" : "f_fsb", weight_fn_json(choice.second)},
                            {"accuracy", choice.accuracy}});
    }
  }

  Writer w(e);
  SummaryTable table{"interp: stride " + short_num(spec.rs.size() > 1 ? spec.rs[1] : 1.0) + ", " +
                         std::to_string(spec.samples) + " samples per point",
                     {"pair", "r", "anchor_fraction", "anchor_responsibility", "other_fraction"},
                     {}};
  std::ostringstream csv;
  csv << w.csv_preamble() << "pair,r,anchor_fraction,anchor_responsibility,other_fraction\n";
  ojson pairs = ojson::array();
  for (ViewPair pair : spec.pairs) {
    const auto points = interpolation_sweep(e.world, plan, pair, sweep, sched);
    ojson pts = ojson::array();
    bool monotone = true;
    for (std::size_t k = 0; k < points.size(); ++k) {
      const auto& p = points[k];
      if (k > 0 && p.anchor_responsibility < points[k - 1].anchor_responsibility - 0.05) monotone = false;
      csv << pair_name(pair) << ',' << num(p.r) << ',' << num(p.anchor_fraction) << ','
          << num(p.anchor_responsibility) << ',' << num(p.other_fraction) << '\n';
      table.rows.push_back({std::string(pair_name(pair)), fixed3(p.r), fixed3(p.anchor_fraction),
                            fixed3(p.anchor_responsibility), fixed3(p.other_fraction)});
      pts.push_back({{"r", p.r},
                     {"anchor_fraction", p.anchor_fraction},
                     {"anchor_responsibility", p.anchor_responsibility},
                     {"other_fraction", p.other_fraction}});
    }
    pairs.push_back({{"pair", pair_name(pair)},
                     {"view_accuracy", view_accuracy(points)},
                     {"monotone_within_0.05", monotone},
                     {"points", std::move(pts)}});
  }
  w.text("interp.csv", csv.str());
  ojson body = w.report_head();
  body["plan"] = plan_json(plan);
  if (spec.grid) body["selection"] = std::move(selections);
  body["pairs"] = std::move(pairs);
  w.report(std::move(body), table);
  return {table, std::move(w).files()};
}

RunResult run_ablate(const Experiment& e, const AblateSpec& spec, const VarianceSchedule& sched) {
  std::vector<SampleRun> all;
  for (ComposerKind kind : spec.composers) {
    for (double wneg : spec.weights) {
      std::vector<NegativePrompt> negs;
      for (const auto& label : spec.negatives) negs.push_back({label, wneg});
      auto runs = seed_runs(e, make_run(kind, spec.guidance, spec.w_pos, spec.positive, negs));
      all.insert(all.end(), runs.begin(), runs.end());
    }
  }
  const auto results = generate_all(e.world, all, sched, e.threads);

  Writer w(e);
  const auto& modes = e.world.modes();
  SummaryTable table{"ablate: target " + spec.target + ", guidance " + short_num(spec.guidance),
                     {"composer", "w_neg", "success_rate"},
                     {}};
  for (const auto& m : modes) table.header.push_back("frac_" + m.id);
  std::ostringstream csv;
  csv << w.csv_preamble() << "composer,w_neg,successes,total,success_rate";
  for (const auto& m : modes) csv << ",frac_" << m.id;
  csv << '\n';
  ojson rows = ojson::array();
  const std::size_t per_block = static_cast<std::size_t>(e.seed_count);
  std::size_t offset = 0;
  for (ComposerKind kind : spec.composers) {
    for (double wneg : spec.weights) {
      const std::span<const SampleRun> runs(all.data() + offset, per_block);
      const std::span<const GenerateResult> res(results.data() + offset, per_block);
      offset += per_block;
      const auto report = success_report(e.world, runs, res, spec.target);
      std::vector<int> counts(modes.size(), 0);
      for (const auto& r : report.runs) {
        for (const auto& id : r.assignments) ++counts[e.world.mode_index(id)];
      }
      const std::string name{to_string(kind)};
      std::vector<std::string> row{name, short_num(wneg), fixed3(report.success_rate)};
      csv << name << ',' << num(wneg) << ',' << report.successes << ',' << report.total << ','
          << num(report.success_rate);
      ojson fractions = ojson::object();
      for (std::size_t k = 0; k < modes.size(); ++k) {
        const double f = static_cast<double>(counts[k]) / report.total;
        row.push_back(fixed3(f));
        csv << ',' << num(f);
        fractions[modes[k].id] = f;
      }
      csv << '\n';
      table.rows.push_back(std::move(row));
      rows.push_back({{"composer", name},
                      {"w_neg", wneg},
                      {"successes", report.successes},
                      {"total", report.total},
                      {"success_rate", report.success_rate},
                      {"mode_fractions", std::move(fractions)}});
    }
  }
  w.text("ablate.csv", csv.str());
  ojson body = w.report_head();
  body["target"] = spec.target;
  body["negatives"] = spec.negatives;
  body["rows"] = std::move(rows);
  w.report(std::move(body), table);
  return {table, std::move(w).files()};
}

RunResult run_distill(const Experiment& e, const DistillSpec& spec, const VarianceSchedule& sched) {
  struct Job {
    DistillVariant variant;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int i = 0; i < e.seed_count; ++i) {
    for (DistillVariant v : spec.variants) jobs.push_back({v, e.first_seed + static_cast<std::uint64_t>(i)});
  }
  std::vector<std::optional<DistillResult>> results(jobs.size());
  parallel_for(jobs.size(), e.threads, [&](std::size_t j) {
    std::mt19937_64 engine(spec.scene_seed_offset + jobs[j].seed);
    Scene scene = Scene::random(spec.bins, e.world.dim(), spec.init_scale, engine);
    SDSConfig cfg = spec.sds;
    cfg.seed = jobs[j].seed;
    try {
      results[j] = optimize(std::move(scene), e.world, spec.plan, cfg, jobs[j].variant, sched);
    } catch (const DivergenceError& err) {
      throw DivergenceError(err.iteration(), std::string(to_string(jobs[j].variant)) + " seed " +
                                                 std::to_string(jobs[j].seed) + ": " + err.what());
    }
  });

  Writer w(e);
  const ViewModes views = ViewModes::from_world(e.world);
  std::vector<std::vector<double>> scores(spec.variants.size());
  ojson runs = ojson::array();
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const auto& res = *results[j];
    const std::string name{to_string(jobs[j].variant)};
    const std::string stem = name + "_seed" + std::to_string(jobs[j].seed);
    std::ostringstream log;
    log << w.csv_preamble() << "iter,azimuth,t,grad_norm,janus_score\n";
    for (const auto& rec : res.log) {
      if (rec.iter % spec.log_every != 0 && rec.iter + 1 != static_cast<long>(res.log.size())) continue;
      log << rec.iter << ',' << num(rec.azimuth) << ',' << rec.t << ',' << num(rec.grad_norm) << ','
          << num(rec.janus_score) << '\n';
    }
    w.text("log_" + stem + ".csv", log.str());

    const double score = janus_score(res.scene, e.world, views);
    std::string pattern;
    ojson bins = ojson::array();
    for (int b = 0; b < res.scene.size(); ++b) {
      const auto& x = res.scene.bin(b);
      const CameraView view(res.scene.bin_azimuth(b));
      const std::string& mode = e.world.modes()[classify_mode(e.world, x)].id;
      pattern += mode.empty() ? '?' : mode.front();
      bins.push_back({{"bin", b},
                      {"azimuth_deg", view.azimuth_degrees()},
                      {"sector", to_string(view.sector())},
                      {"mode", mode},
                      {"feature", std::vector<double>(x.data(), x.data() + x.size())}});
    }
    ojson scene{{"schema", "scorelab.scene/1"}, {"config_hash", e.config_hash}, {"variant", name},
                {"seed", jobs[j].seed},         {"janus_score", score},       {"bins", std::move(bins)}};
    w.json_file("scene_" + stem + ".json", scene);

    const auto vi = static_cast<std::size_t>(
        std::find(spec.variants.begin(), spec.variants.end(), jobs[j].variant) - spec.variants.begin());
    scores[vi].push_back(score);
    runs.push_back({{"variant", name}, {"seed", jobs[j].seed}, {"janus_score", score}, {"modes", pattern}});
  }

  SummaryTable table{"distill: " + std::to_string(spec.bins) + " bins, " +
                         std::to_string(spec.sds.iterations) + " iterations",
                     {"variant", "median_janus", "min", "max"},
                     {}};
  ojson variants = ojson::array();
  for (std::size_t v = 0; v < spec.variants.size(); ++v) {
    const auto& s = scores[v];
    const double med = median(s);
    const double lo = *std::min_element(s.begin(), s.end());
    const double hi = *std::max_element(s.begin(), s.end());
    table.rows.push_back({std::string(to_string(spec.variants[v])), fixed3(med), fixed3(lo), fixed3(hi)});
    variants.push_back({{"variant", to_string(spec.variants[v])}, {"median_janus", med}, {"min", lo}, {"max", hi}});
  }
  ojson body = w.report_head();
  body["plan"] = plan_json(spec.plan);
  body["variants"] = std::move(variants);
  const auto van = std::find(spec.variants.begin(), spec.variants.end(), DistillVariant::Vanilla);
  const auto perp = std::find(spec.variants.begin(), spec.variants.end(), DistillVariant::PerpNeg);
  if (van != spec.variants.end() && perp != spec.variants.end()) {
    const auto& a = scores[static_cast<std::size_t>(van - spec.variants.begin())];
    const auto& b = scores[static_cast<std::size_t>(perp - spec.variants.begin())];
    int wins = 0;
    for (std::size_t i = 0; i < a.size(); ++i) wins += b[i] > a[i] ? 1 : 0;
    table.rows.push_back({"perp_neg wins", ratio(wins, static_cast<int>(a.size())), "", ""});
    body["perp_neg_wins"] = wins;
  }
  body["runs"] = std::move(runs);
  w.report(std::move(body), table);
  return {table, std::move(w).files()};
}

}  // namespace

RunResult run_experiment(const Experiment& e) {
  const VarianceSchedule sched = default_schedule();
  return std::visit(
      [&](const auto& spec) -> RunResult {
        using T = std::decay_t<decltype(spec)>;
        if constexpr (std::is_same_v<T, SampleSpec>) return run_sample(e, spec, sched);
        if constexpr (std::is_same_v<T, CompareSpec>) return run_compare(e, spec, sched);
        if constexpr (std::is_same_v<T, InterpSpec>) return run_interp(e, spec, sched);
        if constexpr (std::is_same_v<T, AblateSpec>) return run_ablate(e, spec, sched);
        if constexpr (std::is_same_v<T, DistillSpec>) return run_distill(e, spec, sched);
      },
      e.spec);
}

void print_table(std::ostream& os, const SummaryTable& table) {
  std::vector<std::size_t> width(table.header.size(), 0);
  for (std::size_t c = 0; c < table.header.size(); ++c) width[c] = table.header[c].size();
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size() && c < width.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  auto line = [&](const std::vector<std::string>& cells) {
    std::string s;
    for (std::size_t c = 0; c < width.size(); ++c) {
      const std::string cell = c < cells.size() ? cells[c] : "";
      s += cell + std::string(width[c] - cell.size() + 2, ' ');
    }
    while (!s.empty() && s.back() == ' ') s.pop_back();
    os << s << '\n';
  };
  if (!table.title.empty()) os << table.title << '\n';
  line(table.header);
  std::size_t total = 0;
  for (auto wd : width) total += wd + 2;
  os << std::string(total > 2 ? total - 2 : 0, '-') << '\n';
  for (const auto& row : table.rows) line(row);
}

SummaryTable read_report_summary(const fs::path& dir, std::string* config_hash) {
  const fs::path path = dir / "report.json";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("out", "no report at " + path.generic_string());
  json report;
  try {
    report = json::parse(in);
  } catch (const json::parse_error& err) {
    throw ConfigError("report", std::string("not valid JSON: ") + err.what());
  }
  if (!report.is_object() || report.value("schema", "") != kReportSchema || !report.contains("summary")) {
    throw ConfigError("report", path.generic_string() + " is not a scorelab report");
  }
  try {
    if (config_hash) *config_hash = report.at("config_hash").get<std::string>();
    const json& s = report.at("summary");
    return {s.at("title").get<std::string>(), s.at("header").get<std::vector<std::string>>(),
            s.at("rows").get<std::vector<std::vector<std::string>>>()};
  } catch (const json::exception& err) {
    throw ConfigError("report.summary", err.what());
  }
}

}  // namespace scorelab::cli
