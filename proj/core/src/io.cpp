#include "hoir/io.hpp"

#include <json.hpp>

namespace hoir {

std::string tensor_to_json(const Tensor& t) {
  nlohmann::ordered_json j;
  j["shape"] = t.shape();
  j["data"] = t.data();
  return j.dump();
}

Tensor tensor_from_json(const std::string& json_text) {
  auto j = nlohmann::json::parse(json_text);
  Shape shape = j.at("shape").get<Shape>();
  std::vector<double> data = j.at("data").get<std::vector<double>>();
  return Tensor::from_data(std::move(shape), std::move(data), false);
}

}  // namespace hoir
