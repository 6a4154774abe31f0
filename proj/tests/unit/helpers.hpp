#pragma once

#include "lively/error.hpp"

#include <doctest.h>

#include <filesystem>
#include <string>

#define CHECK_ERRC(expr, errc)                                            \
  do {                                                                    \
    bool thrown_ = false;                                                 \
    try {                                                                 \
      (void)(expr);                                                       \
    } catch (const lively::Error& e_) {                                   \
      thrown_ = true;                                                     \
      CHECK_MESSAGE(e_.code() == (errc), lively::errc_name(e_.code()));   \
    }                                                                     \
    CHECK_MESSAGE(thrown_, "expected " #errc);                            \
  } while (0)

// Fresh directory under the system temp dir, removed on scope exit.
struct TempDir {
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() / ("lively_test_" + tag);
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path path;
};
