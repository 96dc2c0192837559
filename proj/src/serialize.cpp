#include "sea/serialize.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

namespace sea {

static_assert(std::endian::native == std::endian::little,
              "weight files are little-endian; big-endian hosts unsupported");

namespace {
constexpr char kMagic[4] = {'S', 'E', 'A', 'W'};
}

void WeightMap::put(const std::string& name, const Tensor& t) {
  for (auto& [n, v] : items_)
    if (n == name) {
      v = t;
      return;
    }
  items_.emplace_back(name, t);
}

bool WeightMap::contains(const std::string& name) const {
  for (const auto& [n, _] : items_)
    if (n == name) return true;
  return false;
}

Tensor WeightMap::get(const std::string& name) const {
  for (const auto& [n, v] : items_)
    if (n == name) return v;
  throw ContractError("weight '" + name + "' not present in container");
}

std::vector<uint8_t> WeightMap::to_bytes() const {
  // Data is laid out in sorted-name order so that a load/save cycle
  // reproduces the same bytes regardless of insertion order.
  std::vector<const std::pair<std::string, Tensor>*> ordered;
  ordered.reserve(items_.size());
  for (const auto& it : items_) ordered.push_back(&it);
  std::sort(ordered.begin(), ordered.end(),
            [](auto* a, auto* b) { return a->first < b->first; });

  nlohmann::json manifest;
  manifest["meta"] = meta;
  nlohmann::json tensors = nlohmann::json::object();
  uint64_t offset = 0;
  for (const auto* it : ordered) {
    nlohmann::json entry;
    entry["shape"] = it->second.shape();
    entry["dtype"] = "f32";
    entry["offset"] = offset;
    tensors[it->first] = entry;
    offset += static_cast<uint64_t>(it->second.numel()) * sizeof(float);
  }
  manifest["tensors"] = tensors;
  std::string mjson = manifest.dump();

  std::vector<uint8_t> out;
  out.reserve(12 + mjson.size() + offset);
  out.insert(out.end(), kMagic, kMagic + 4);
  uint64_t mlen = mjson.size();
  const auto* p = reinterpret_cast<const uint8_t*>(&mlen);
  out.insert(out.end(), p, p + 8);
  out.insert(out.end(), mjson.begin(), mjson.end());
  for (const auto* it : ordered) {
    for (double v : it->second.data()) {
      float f = static_cast<float>(v);
      const auto* fp = reinterpret_cast<const uint8_t*>(&f);
      out.insert(out.end(), fp, fp + 4);
    }
  }
  return out;
}

WeightMap WeightMap::from_bytes(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 4) != 0)
    throw ContractError("not a weight container (bad magic)");
  uint64_t mlen;
  std::memcpy(&mlen, bytes.data() + 4, 8);
  if (bytes.size() < 12 + mlen)
    throw ContractError("weight container truncated");
  nlohmann::json manifest = nlohmann::json::parse(
      bytes.begin() + 12, bytes.begin() + 12 + static_cast<int64_t>(mlen));

  WeightMap wm;
  wm.meta = manifest.value("meta", nlohmann::json::object());
  const uint8_t* data = bytes.data() + 12 + mlen;
  size_t data_size = bytes.size() - 12 - mlen;

  // nlohmann objects iterate in sorted key order, which also fixes the
  // serialization order for the bit-exact round trip.
  for (auto& [name, entry] : manifest.at("tensors").items()) {
    Shape shape = entry.at("shape").get<Shape>();
    uint64_t offset = entry.at("offset").get<uint64_t>();
    int64_t n = numel_of(shape);
    if (offset + n * sizeof(float) > data_size)
      throw ContractError("weight '" + name + "' exceeds data section");
    std::vector<double> vals(n);
    for (int64_t i = 0; i < n; ++i) {
      float f;
      std::memcpy(&f, data + offset + i * sizeof(float), sizeof(float));
      vals[i] = static_cast<double>(f);
    }
    wm.put(name, Tensor::from(std::move(shape), std::move(vals)));
  }
  return wm;
}

void WeightMap::save(const std::string& path) const {
  auto bytes = to_bytes();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

WeightMap WeightMap::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path + "'");
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  return from_bytes(bytes);
}

}  // namespace sea
