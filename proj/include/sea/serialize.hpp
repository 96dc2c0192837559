#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sea/tensor.hpp"

namespace sea {

// Flat weight container: named f32 arrays, little-endian, preceded by a JSON
// manifest mapping each name to shape, dtype and byte offset into the data
// section. Saving a freshly loaded container reproduces the file bit-exactly.
//
// Layout: "SEAW" magic | u64 manifest length | manifest JSON | raw f32 data.
class WeightMap {
 public:
  void put(const std::string& name, const Tensor& t);
  bool contains(const std::string& name) const;
  Tensor get(const std::string& name) const;  // throws on missing name
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }

  nlohmann::json meta;  // free-form run metadata, round-tripped verbatim

  std::vector<uint8_t> to_bytes() const;
  static WeightMap from_bytes(const std::vector<uint8_t>& bytes);

  void save(const std::string& path) const;
  static WeightMap load(const std::string& path);

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

}  // namespace sea
