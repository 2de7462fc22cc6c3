#include "ynet/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace ynet {

using nlohmann::json;

Profile parse_profile(std::string_view s) {
  if (s == "paper") return Profile::Paper;
  if (s == "desk") return Profile::Desk;
  throw ConfigError("unknown profile '" + std::string(s) + "' (expected paper or desk)");
}

RunConfig RunConfig::defaults(Profile profile) {
  RunConfig c;
  if (profile == Profile::Desk) {
    c.input_size = 64;
    c.width_scale = 0.125;
  }
  return c;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& rule) { throw ConfigError(field + " " + rule); };
  if (input_size == 0 || input_size % 32 != 0) fail("input_size", "must be a positive multiple of 32");
  if (!(width_scale > 0.0 && width_scale <= 4.0)) fail("width_scale", "must lie in (0, 4]");
  if (batch_size == 0) fail("batch_size", "must be positive");
  if (!(min_delta >= 0.0)) fail("min_delta", "must be >= 0");
  try {
    loss.validate();
    optimizer.validate();
  } catch (const std::invalid_argument& ex) {
    throw ConfigError(ex.what());
  }
  for (ParamGroup g : {ParamGroup::Encoder1, ParamGroup::Encoder2, ParamGroup::Decoder}) {
    if (!optimizer.c_map.contains(g)) fail("optimizer.c_map", "lacks group " + std::string(to_string(g)));
  }
}

ModelConfig RunConfig::model() const {
  ModelConfig m;
  m.input_size = input_size;
  m.width_scale = width_scale;
  m.variant = variant;
  return m;
}

TrainConfig RunConfig::train() const {
  TrainConfig t;
  t.batch_size = batch_size;
  t.max_epochs = max_epochs;
  t.seed = seed;
  t.loss = loss;
  t.optimizer = optimizer;
  t.early_stop = {.patience = patience, .min_delta = min_delta};
  return t;
}

std::string config_to_json(const RunConfig& c) {
  json cmap = json::object();
  for (const auto& [g, v] : c.optimizer.c_map) cmap[std::string(to_string(g))] = v;
  const json j{{"seed", c.seed},
               {"variant", to_string(c.variant)},
               {"input_size", c.input_size},
               {"width_scale", c.width_scale},
               {"loss", {{"lambda", c.loss.lambda}, {"epsilon", c.loss.epsilon}, {"clamp", c.loss.clamp}}},
               {"optimizer", {{"eta", c.optimizer.eta}, {"rho", c.optimizer.rho}, {"eps", c.optimizer.eps}, {"c_map", cmap}}},
               {"batch_size", c.batch_size},
               {"max_epochs", c.max_epochs},
               {"patience", c.patience},
               {"min_delta", c.min_delta},
               {"dataset_root", c.dataset_root},
               {"output_dir", c.output_dir}};
  return j.dump(2) + "\n";
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown config key '" + where + key + "'");
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + key + "' has the wrong type");
  }
}

}  // namespace

RunConfig config_from_json(std::string_view text, const RunConfig& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& ex) {
    throw ConfigError(std::string("config is not valid JSON: ") + ex.what());
  }
  reject_unknown(j,
                 {"seed", "variant", "input_size", "width_scale", "loss", "optimizer", "batch_size", "max_epochs",
                  "patience", "min_delta", "dataset_root", "output_dir"},
                 "");
  RunConfig c = base;
  read(j, "seed", c.seed, "");
  if (j.contains("variant")) {
    std::string v;
    read(j, "variant", v, "");
    try {
      c.variant = parse_variant(v);
    } catch (const std::invalid_argument& ex) {
      throw ConfigError(ex.what());
    }
  }
  read(j, "input_size", c.input_size, "");
  read(j, "width_scale", c.width_scale, "");
  read(j, "batch_size", c.batch_size, "");
  read(j, "max_epochs", c.max_epochs, "");
  read(j, "patience", c.patience, "");
  read(j, "min_delta", c.min_delta, "");
  read(j, "dataset_root", c.dataset_root, "");
  read(j, "output_dir", c.output_dir, "");
  if (j.contains("loss")) {
    const json& l = j.at("loss");
    reject_unknown(l, {"lambda", "epsilon", "clamp"}, "loss.");
    read(l, "lambda", c.loss.lambda, "loss.");
    read(l, "epsilon", c.loss.epsilon, "loss.");
    read(l, "clamp", c.loss.clamp, "loss.");
  }
  if (j.contains("optimizer")) {
    const json& o = j.at("optimizer");
    reject_unknown(o, {"eta", "rho", "eps", "c_map"}, "optimizer.");
    read(o, "eta", c.optimizer.eta, "optimizer.");
    read(o, "rho", c.optimizer.rho, "optimizer.");
    read(o, "eps", c.optimizer.eps, "optimizer.");
    if (o.contains("c_map")) {
      const json& m = o.at("c_map");
      reject_unknown(m, {"encoder1", "encoder2", "decoder"}, "optimizer.c_map.");
      for (const auto& [key, value] : m.items()) {
        if (!value.is_number()) throw ConfigError("config key 'optimizer.c_map." + key + "' has the wrong type");
        c.optimizer.c_map[parse_group(key)] = value.get<double>();
      }
    }
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str(), base);
}

}  // namespace ynet
