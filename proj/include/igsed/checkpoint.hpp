#pragma once

// Parameter checkpoints: `<stem>.bin` holds float64 arrays back to back
// (native little-endian), `<stem>.json` indexes them by name, shape and byte
// offset and carries arbitrary metadata.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "igsed/common.hpp"
#include "igsed/grad.hpp"

namespace igsed::grad {

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::vector<NamedArray> arrays;
  nlohmann::json metadata = nlohmann::json::object();

  const NamedArray& at(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw InvalidInput("checkpoint has no array named '" + name + "'");
  }
};

inline std::filesystem::path checkpoint_bin(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".bin");
}
inline std::filesystem::path checkpoint_index(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".json");
}

inline void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
  auto bin_path = checkpoint_bin(stem);
  std::ofstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot write " + bin_path.string());
  nlohmann::json index;
  index["format"] = "igsed-checkpoint-1";
  index["dtype"] = "float64-le";
  index["arrays"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (numel(a.shape) != a.values.size())
      throw ShapeError("checkpoint array '" + a.name + "' shape " + to_string(a.shape) +
                       " does not match " + std::to_string(a.values.size()) + " values");
    bin.write(reinterpret_cast<const char*>(a.values.data()),
              static_cast<std::streamsize>(a.values.size() * sizeof(double)));
    index["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}});
    offset += a.values.size() * sizeof(double);
  }
  if (!bin) throw IoError("write failed: " + bin_path.string());
  index["metadata"] = ckpt.metadata;
  auto idx_path = checkpoint_index(stem);
  std::ofstream idx(idx_path);
  if (!idx) throw IoError("cannot write " + idx_path.string());
  idx << index.dump(2) << '\n';
}

inline Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  auto idx_path = checkpoint_index(stem);
  std::ifstream idx(idx_path);
  if (!idx) throw IoError("cannot read " + idx_path.string());
  nlohmann::json index;
  try {
    idx >> index;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint index " + idx_path.string() + ": " + e.what());
  }
  auto bin_path = checkpoint_bin(stem);
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot read " + bin_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  Checkpoint ckpt;
  ckpt.metadata = index.value("metadata", nlohmann::json::object());
  for (const auto& e : index.at("arrays")) {
    NamedArray a;
    a.name = e.at("name").get<std::string>();
    a.shape = e.at("shape").get<Shape>();
    auto offset = e.at("offset").get<std::uint64_t>();
    std::size_t n = numel(a.shape);
    if (offset + n * sizeof(double) > bytes.size())
      throw IoError("checkpoint array '" + a.name + "' runs past end of " + bin_path.string());
    a.values.resize(n);
    std::memcpy(a.values.data(), bytes.data() + offset, n * sizeof(double));
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

}  // namespace igsed::grad
