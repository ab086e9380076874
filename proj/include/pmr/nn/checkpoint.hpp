#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "pmr/nn/adam.hpp"
#include "pmr/nn/network.hpp"

namespace pmr::nn {

/// Versioned binary checkpoint:
///   "PMRCKPT\0" | u32 version | u32 json length | json metadata |
///   u32 array count | { u32 name length | name | u64 count | f64 x count }*
/// Integers and doubles are little-endian. Arrays are written in name order,
/// so identical contents give identical bytes.
class Archive {
 public:
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, std::vector<double>> arrays;

  void put_network(const std::string& name, const Network& net);
  Network get_network(const std::string& name) const;
  bool has_network(const std::string& name) const;

  void put_adam(const std::string& name, const Adam& opt);
  Adam get_adam(const std::string& name) const;

  const std::vector<double>& array(const std::string& name) const;

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);
};

}  // namespace pmr::nn
