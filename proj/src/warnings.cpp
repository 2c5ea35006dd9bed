#include "balancegauge/common.hpp"

namespace bg {

void WarningLog::emit(std::string_view module, std::string_view message) {
  std::lock_guard lock(mutex_);
  std::string entry;
  entry.reserve(module.size() + message.size() + 2);
  entry.append(module);
  entry.append(": ");
  entry.append(message);
  entries_.push_back(std::move(entry));
}

std::vector<std::string> WarningLog::drain() {
  std::lock_guard lock(mutex_);
  std::vector<std::string> out;
  out.swap(entries_);
  return out;
}

std::vector<std::string> WarningLog::snapshot() const {
  std::lock_guard lock(mutex_);
  return entries_;
}

std::size_t WarningLog::count() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

void WarningLog::clear() {
  std::lock_guard lock(mutex_);
  entries_.clear();
}

WarningLog& warnings() {
  static WarningLog log;
  return log;
}

}  // namespace bg
