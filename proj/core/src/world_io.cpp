#include "scorelab/world_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "scorelab/errors.hpp"

namespace scorelab {

namespace {

using Json = nlohmann::ordered_json;

const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ParameterError(where.empty() ? key : where + "." + key, "missing field");
  }
  return obj.at(key);
}

double as_number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw ParameterError(field, "expected a number");
  return j.get<double>();
}

Vector as_vector(const Json& j, const std::string& field) {
  if (!j.is_array()) throw ParameterError(field, "expected an array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = as_number(j[i], field + "[" + std::to_string(i) + "]");
  }
  return v;
}

}  // namespace

OracleWorld parse_world(std::string_view text) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParameterError("world", std::string("malformed JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ParameterError("world", "top level must be an object");
  if (doc.contains("schema") && doc["schema"] != std::string(kWorldSchema)) {
    throw ParameterError("schema", "unsupported world schema " + doc["schema"].dump());
  }

  const Json& dim_j = require(doc, "dim", "");
  if (!dim_j.is_number_integer() || dim_j.get<int>() < 1) {
    throw ParameterError("dim", "expected a positive integer");
  }
  const int dim = dim_j.get<int>();

  std::vector<Mode> modes;
  const Json& modes_j = require(doc, "modes", "");
  if (!modes_j.is_array() || modes_j.empty()) {
    throw ParameterError("modes", "expected a non-empty array");
  }
  for (std::size_t i = 0; i < modes_j.size(); ++i) {
    const std::string where = "modes[" + std::to_string(i) + "]";
    const Json& m = modes_j[i];
    const Json& id = require(m, "id", where);
    if (!id.is_string()) throw ParameterError(where + ".id", "expected a string");
    Mode mode;
    mode.id = id.get<std::string>();
    mode.mean = as_vector(require(m, "mean", where), where + ".mean");
    if (mode.mean.size() != dim) {
      throw ParameterError(where + ".mean", "length differs from dim");
    }
    mode.cov_scale = as_number(require(m, "cov_scale", where), where + ".cov_scale");
    if (!(mode.cov_scale > 0.0)) throw ParameterError(where + ".cov_scale", "must be > 0");
    modes.push_back(std::move(mode));
  }

  auto mode_pos = [&](const std::string& id, const std::string& field) {
    for (std::size_t k = 0; k < modes.size(); ++k) {
      if (modes[k].id == id) return k;
    }
    throw ParameterError(field, "unknown mode id '" + id + "'");
  };

  std::vector<NamedPrompt> prompts;
  const Json& prompts_j = require(doc, "prompts", "");
  if (!prompts_j.is_object() || prompts_j.empty()) {
    throw ParameterError("prompts", "expected a non-empty object");
  }
  for (const auto& [label, wj] : prompts_j.items()) {
    const std::string where = "prompts." + label;
    std::vector<double> w(modes.size(), 0.0);
    if (wj.is_array()) {
      if (wj.size() != modes.size()) throw ParameterError(where, "array length differs from mode count");
      for (std::size_t k = 0; k < modes.size(); ++k) w[k] = as_number(wj[k], where);
    } else if (wj.is_object()) {
      for (const auto& [id, v] : wj.items()) w[mode_pos(id, where + "." + id)] = as_number(v, where + "." + id);
    } else {
      throw ParameterError(where, "expected an object or array of weights");
    }
    try {
      prompts.push_back({label, PromptEmbedding::from_weights(std::move(w)), 0.0});
    } catch (const ParameterError& e) {
      throw ParameterError(where, e.what());
    }
  }

  if (doc.contains("prior")) {
    const Json& pj = doc["prior"];
    if (!pj.is_object()) throw ParameterError("prior", "expected an object keyed by prompt label");
    for (const auto& [label, v] : pj.items()) {
      auto it = std::find_if(prompts.begin(), prompts.end(),
                             [&](const NamedPrompt& p) { return p.label == label; });
      if (it == prompts.end()) throw ParameterError("prior." + label, "unknown prompt label");
      it->prior = as_number(v, "prior." + label);
    }
  } else {
    for (auto& p : prompts) p.prior = 1.0 / static_cast<double>(prompts.size());
  }

  return OracleWorld(dim, std::move(modes), std::move(prompts));
}

OracleWorld load_world(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParameterError("world", "cannot open world file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_world(ss.str());
}

std::string world_to_json(const OracleWorld& world) {
  Json doc;
  doc["schema"] = std::string(kWorldSchema);
  doc["dim"] = world.dim();
  doc["modes"] = Json::array();
  for (const auto& m : world.modes()) {
    Json mj;
    mj["id"] = m.id;
    mj["mean"] = std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size());
    mj["cov_scale"] = m.cov_scale;
    doc["modes"].push_back(std::move(mj));
  }
  doc["prompts"] = Json::object();
  doc["prior"] = Json::object();
  for (const auto& p : world.prompts()) {
    Json wj = Json::object();
    for (std::size_t k = 0; k < world.modes().size(); ++k) {
      if (p.embedding[k] != 0.0) wj[world.modes()[k].id] = p.embedding[k];
    }
    doc["prompts"][p.label] = std::move(wj);
    doc["prior"][p.label] = p.prior;
  }
  return doc.dump(2);
}

}  // namespace scorelab
