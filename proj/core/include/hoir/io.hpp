#pragma once

#include <string>

#include "hoir/tensor.hpp"

namespace hoir {

// Flat JSON form {"shape": [...], "data": [...]} used by golden-file tests
// and checkpoints.
std::string tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const std::string& json_text);

}  // namespace hoir
