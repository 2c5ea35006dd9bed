#pragma once

#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bg {

// Error taxonomy, mapped to CLI exit codes: DataError -> 3, NumericError -> 4.
// Usage errors (exit 2) are raised by the argument parser itself.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Structured warning channel. Warnings are never interleaved into data files;
// the CLI drains this log into a dedicated warnings file, tests inspect it.
class WarningLog {
 public:
  void emit(std::string_view module, std::string_view message);
  std::vector<std::string> drain();
  std::vector<std::string> snapshot() const;
  std::size_t count() const;
  void clear();

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> entries_;
};

WarningLog& warnings();

}  // namespace bg
