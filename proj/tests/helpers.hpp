#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "anomattr/table.hpp"

namespace testutil {

// Daily table starting at `start` (ISO date) with values from fill(row, feature).
inline anomattr::TimeTable daily_table(const std::string& start, int rows,
                                       std::vector<std::string> features,
                                       const std::function<double(int, int)>& fill) {
  anomattr::TimeTable t;
  t.feature_names = std::move(features);
  t.units.assign(t.feature_names.size(), "");
  const std::int64_t t0 = anomattr::parse_iso8601(start);
  for (int r = 0; r < rows; ++r) {
    t.timestamps.push_back(t0 + static_cast<std::int64_t>(r) * anomattr::kSecondsPerDay);
    for (std::size_t f = 0; f < t.feature_names.size(); ++f) {
      t.values.push_back(fill(r, static_cast<int>(f)));
    }
  }
  return t;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    dir_ = std::filesystem::temp_directory_path() /
           ("anomattr_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(dir_, ec);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

 private:
  std::filesystem::path dir_;
};

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace testutil
