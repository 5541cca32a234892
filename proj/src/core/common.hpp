#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace titan {

// Error categories mirrored 1:1 by the C API status codes.
enum class errc {
  invalid_argument,
  format,
  io,
  config,
  diverged,
  version,
  internal,
};

const char* errc_name(errc c);

class error : public std::runtime_error {
 public:
  error(errc code, std::string msg) : std::runtime_error(std::move(msg)), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& msg) { throw error(code, msg); }

// Floor division/modulo for possibly-negative epoch arithmetic.
inline int64_t floor_div(int64_t a, int64_t b) {
  int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
inline int64_t floor_mod(int64_t a, int64_t b) { return a - floor_div(a, b) * b; }

// Days since 1970-01-01 for a proleptic Gregorian civil date.
int64_t days_from_civil(int64_t y, unsigned m, unsigned d);
void civil_from_days(int64_t z, int64_t& y, unsigned& m, unsigned& d);

// ISO weekday, 1 = Monday .. 7 = Sunday.
int week_index(int64_t epoch_sec);

// "(a, b, c)" rendering used by shape/error messages.
std::string dims_str(const std::vector<int64_t>& dims);

// Worker threads for batch training, evaluation and DTW. Results are
// bit-identical for any setting; this only trades wall time.
void set_compute_threads(int n);  // 0 restores the hardware default
int compute_threads();

enum class LogLevel { debug, info, warn, error, off };
void set_log_level(LogLevel level);
LogLevel log_level_from_string(const std::string& s);
// stderr; WARN/ERROR get color unless NO_COLOR is set or stderr is not a tty
void log_msg(LogLevel level, const std::string& msg);
inline void log_info(const std::string& msg) { log_msg(LogLevel::info, msg); }
inline void log_warn(const std::string& msg) { log_msg(LogLevel::warn, msg); }

}  // namespace titan
