#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <string>

namespace mqir::testing {

/// Fresh directory per test, removed afterwards.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "mqir") {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "-" +
             (info ? std::string(info->test_suite_name()) + "." + info->name() : std::string("global")));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace mqir::testing
