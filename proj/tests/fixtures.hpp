#pragma once

#include <array>
#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "avdd/protocol.hpp"

namespace avdd::testing {

struct Table1Row {
  const char* scene;
  std::size_t total;
  std::size_t unmodified;
  std::size_t manipulated;
};

// Published per-class distribution of the VADD split.
inline constexpr std::array<Table1Row, 10> kTable1 = {{
    {"airport", 281, 141, 140},
    {"bus", 327, 164, 163},
    {"metro", 360, 180, 180},
    {"metro_station", 386, 193, 193},
    {"park", 386, 193, 193},
    {"public_square", 387, 194, 193},
    {"shopping_mall", 387, 194, 193},
    {"street_pedestrian", 421, 211, 210},
    {"street_traffic", 402, 201, 201},
    {"tram", 308, 154, 154},
}};

inline constexpr std::size_t kTable1Unmodified = 1825;
inline constexpr std::size_t kTable1Manipulated = 1820;

inline Manifest table1_manifest() {
  std::vector<VideoEntry> entries;
  for (const auto& row : kTable1) {
    for (std::size_t i = 0; i < row.total; ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%05zu", row.scene, i);
      entries.push_back({id, SceneClass::from_name(row.scene), 10.0, Split::test});
    }
  }
  return Manifest(std::move(entries));
}

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    std::mt19937_64 rng((static_cast<std::uint64_t>(rd()) << 32) ^ rd());
    path_ = std::filesystem::temp_directory_path() / ("avdd-test-" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace avdd::testing
