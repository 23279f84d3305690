#pragma once

#include <stdexcept>
#include <string>

namespace stepwise {

// All engine failures carry the module that raised them so the CLI can print
// "module: message" diagnostics without string parsing.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(module + ": " + message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

// Target step cannot be reached from any step carrying belief mass.
class UnreachableTarget : public Error {
 public:
  UnreachableTarget(std::string module, const std::string& message)
      : Error(std::move(module), message) {}
};

// Input file missing or unreadable; the CLI maps this to its own exit code.
class MissingInput : public Error {
 public:
  explicit MissingInput(const std::string& path)
      : Error("io", "cannot open '" + path + "'"), path_(path) {}

  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

}  // namespace stepwise
