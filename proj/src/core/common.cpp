#include "core/common.hpp"

#include <unistd.h>

#include <thread>

#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace titan {

const char* errc_name(errc c) {
  switch (c) {
    case errc::invalid_argument: return "invalid_argument";
    case errc::format: return "format";
    case errc::io: return "io";
    case errc::config: return "config";
    case errc::diverged: return "diverged";
    case errc::version: return "version";
    case errc::internal: return "internal";
  }
  return "unknown";
}

// Howard Hinnant's algorithms, http://howardhinnant.github.io/date_algorithms.html
int64_t days_from_civil(int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<int64_t>(doe) - 719468;
}

void civil_from_days(int64_t z, int64_t& y, unsigned& m, unsigned& d) {
  z += 719468;
  const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  y = static_cast<int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y += m <= 2;
}

int week_index(int64_t epoch_sec) {
  const int64_t day = floor_div(epoch_sec, 86400);
  // 1970-01-01 was a Thursday.
  static const int thu_based[7] = {4, 5, 6, 7, 1, 2, 3};
  return thu_based[floor_mod(day, 7)];
}

namespace {
LogLevel g_log_level = LogLevel::info;
int g_compute_threads = 0;
}

void set_compute_threads(int n) { g_compute_threads = n > 0 ? n : 0; }

int compute_threads() {
  if (g_compute_threads > 0) return g_compute_threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

void set_log_level(LogLevel level) { g_log_level = level; }

LogLevel log_level_from_string(const std::string& s) {
  if (s == "debug") return LogLevel::debug;
  if (s == "info") return LogLevel::info;
  if (s == "warn" || s == "warning") return LogLevel::warn;
  if (s == "error") return LogLevel::error;
  if (s == "off" || s == "quiet") return LogLevel::off;
  fail(errc::config, "unknown log level '" + s + "'");
}

void log_msg(LogLevel level, const std::string& msg) {
  if (level < g_log_level) return;
  const char* tag = level == LogLevel::debug  ? "debug"
                    : level == LogLevel::info ? "info"
                    : level == LogLevel::warn ? "warn"
                                              : "error";
  const bool color = level >= LogLevel::warn && isatty(fileno(stderr)) &&
                     std::getenv("NO_COLOR") == nullptr;
  if (color) {
    const char* code = level == LogLevel::warn ? "\x1b[33m" : "\x1b[31m";
    std::fprintf(stderr, "%s[%s]\x1b[0m %s\n", code, tag, msg.c_str());
  } else {
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
  }
}

std::string dims_str(const std::vector<int64_t>& dims) {
  std::ostringstream os;
  os << '(';
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << ')';
  return os.str();
}

}  // namespace titan
