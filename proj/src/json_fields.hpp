#pragma once

#include "lively/error.hpp"

#include <json.hpp>

#include <set>
#include <string>

namespace lively::detail {

// Reads known keys out of a JSON object and rejects anything left over.
class FieldReader {
 public:
  FieldReader(const nlohmann::json& j, std::string section) : j_(j), section_(std::move(section)) {
    require(j_.is_object(), Errc::BadConfig, "section '" + section_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(Errc::BadConfig, "bad value for " + path(key) + ": " + e.what());
    }
  }

  std::string path(const std::string& key) const { return section_.empty() ? key : section_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      require(seen_.contains(it.key()), Errc::BadConfig, "unknown config key '" + path(it.key()) + "'");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace lively::detail
