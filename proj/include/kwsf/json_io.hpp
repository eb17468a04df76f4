#pragma once

#include <set>
#include <string>

#include <json.hpp>

#include "kwsf/error.hpp"

namespace kwsf {

using Json = nlohmann::ordered_json;

// Reads optional keys of a JSON object into existing (defaulted) fields and
// rejects keys nobody asked for, so typos in config files fail loudly.
class JsonReader {
 public:
  JsonReader(const Json& j, std::string context) : j_(j), context_(std::move(context)) {
    require(j_.is_object(), ErrorCode::kConfig, context_ + ": expected a JSON object");
  }

  template <typename V>
  JsonReader& get(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    try {
      out = it->template get<V>();
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kConfig, context_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }

  const Json& at(const char* key) const { return j_.at(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      require(seen_.count(it.key()) > 0, ErrorCode::kConfig, context_ + ": unknown key '" + it.key() + "'");
    }
  }

 private:
  const Json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

}  // namespace kwsf
