#pragma once

#include <map>
#include <string>

#include "tpnet/tensor.hpp"

namespace tpnet {

// Named parameter collection. std::map keeps key order deterministic, which
// the serialization format relies on.
using WeightMap = std::map<std::string, Tensor>;

// Flat JSON: { name: { "shape": [...], "data": [...] } }, keys sorted.
std::string weights_to_json(const WeightMap& weights);
WeightMap weights_from_json(const std::string& json_text);

void save_weights(const WeightMap& weights, const std::string& path);
WeightMap load_weights(const std::string& path);

// Throws DivergenceError naming the first non-finite tensor, if any.
void check_finite(const WeightMap& weights, const std::string& context);

// Checks that `loaded` carries exactly the tensors of `reference` with equal
// shapes; violations raise ContractError spelling out both shapes.
void verify_shapes(const WeightMap& reference, const WeightMap& loaded);

void zero_grad(WeightMap& weights);

}  // namespace tpnet
