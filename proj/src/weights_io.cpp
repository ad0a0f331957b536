#include "tpnet/weights_io.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace tpnet {

using nlohmann::json;

std::string weights_to_json(const WeightMap& weights) {
  json root = json::object();
  for (const auto& [name, t] : weights) {
    json entry;
    entry["shape"] = t.shape();
    entry["data"] = std::vector<double>(t.values().begin(), t.values().end());
    root[name] = std::move(entry);
  }
  return root.dump(1);
}

WeightMap weights_from_json(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw InputError(std::string("weights JSON parse failed: ") + e.what());
  }
  WeightMap out;
  for (const auto& [name, entry] : root.items()) {
    Shape shape = entry.at("shape").get<Shape>();
    std::vector<double> data = entry.at("data").get<std::vector<double>>();
    out.emplace(name, Tensor::param(std::move(shape), std::move(data)));
  }
  return out;
}

void save_weights(const WeightMap& weights, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InputError("cannot open " + path + " for writing");
  f << weights_to_json(weights) << '\n';
}

WeightMap load_weights(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InputError("cannot open weights file " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return weights_from_json(text);
}

void check_finite(const WeightMap& weights, const std::string& context) {
  for (const auto& [name, t] : weights)
    for (double v : t.values())
      if (!std::isfinite(v))
        throw DivergenceError(context + ": non-finite value in tensor '" + name + "'");
}

void zero_grad(WeightMap& weights) {
  for (auto& [name, t] : weights) t.zero_grad();
}

void verify_shapes(const WeightMap& reference, const WeightMap& loaded) {
  for (const auto& [name, ref] : reference) {
    auto it = loaded.find(name);
    if (it == loaded.end())
      throw ContractError("weights: missing tensor '" + name + "' (want shape " +
                          shape_str(ref.shape()) + ")");
    if (it->second.shape() != ref.shape())
      throw ContractError("weights: tensor '" + name + "' shape mismatch: have " +
                          shape_str(it->second.shape()) + ", want " +
                          shape_str(ref.shape()));
  }
  for (const auto& [name, t] : loaded)
    if (reference.find(name) == reference.end())
      throw ContractError("weights: unexpected tensor '" + name + "' (shape " +
                          shape_str(t.shape()) + ")");
}

}  // namespace tpnet
