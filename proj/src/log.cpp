#include "conformal_kit/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace ckit {

namespace {
std::atomic<bool> g_enabled{true};
std::atomic<std::size_t> g_count{0};
std::mutex g_mutex;
constexpr std::size_t kMaxPrinted = 20;
}  // namespace

void warn(std::string_view message) {
  const std::size_t k = g_count.fetch_add(1);
  if (!g_enabled.load() || k >= kMaxPrinted) return;
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << "conformal_kit warning: " << message << '\n';
  if (k + 1 == kMaxPrinted) std::cerr << "conformal_kit warning: further warnings suppressed\n";
}

void set_warnings_enabled(bool enabled) { g_enabled.store(enabled); }

std::size_t warning_count() { return g_count.load(); }

}  // namespace ckit
