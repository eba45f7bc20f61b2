#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

namespace unirit::cli {

/// Where a resolved setting came from.
enum class Source { default_value, config_file, flag };
std::string to_string(Source s);

/// Named settings of one subcommand with flag > config-file > default precedence.
class RunConfig {
 public:
  explicit RunConfig(std::string command) : command_(std::move(command)) {}

  void declare(const std::string& name, nlohmann::ordered_json default_value);
  /// Accepts a flat object of declared keys, or a previously written resolved_config.json.
  void apply_config_file(const nlohmann::json& j);
  void set_flag(const std::string& name, nlohmann::ordered_json value);

  bool has(const std::string& name) const { return values_.contains(name); }
  const nlohmann::ordered_json& value(const std::string& name) const;
  Source source(const std::string& name) const;
  template <typename T>
  T get(const std::string& name) const {
    try {
      return value(name).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw_bad_value(name, e.what());
    }
  }

  /// {"command", "fields": {name: {"value", "source"}}}
  nlohmann::ordered_json resolved() const;

 private:
  [[noreturn]] static void throw_bad_value(const std::string& name, const std::string& what);

  std::string command_;
  std::vector<std::string> order_;
  nlohmann::ordered_json values_ = nlohmann::ordered_json::object();
  std::map<std::string, Source> sources_;
};

/// Worker count for parallel stages: UNIRIT_THREADS when set, else the hardware concurrency.
unsigned thread_count();

/// Runs one subcommand. `args` excludes the program name. Returns the process exit code:
/// 0 success, 1 usage or validation error, 2 runtime failure.
int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace unirit::cli
