#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace quoteflow {

// User-facing failure (bad input, bad config). The CLI maps this to exit 1;
// anything else escaping to main is an internal error (exit 2).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// ---- time ----------------------------------------------------------------

// Days since 1970-01-01 for a proleptic Gregorian date (Howard Hinnant's
// civil_from_days family).
std::int64_t days_from_civil(int y, unsigned m, unsigned d);
void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d);

// Accepts "YYYY-MM-DD" (stored at midnight UTC) or
// "YYYY-MM-DDTHH:MM:SS[Z]". Returns seconds since the epoch, UTC.
std::int64_t parse_iso8601(const std::string& s);

// Day-resolution timestamps render as "YYYY-MM-DD", otherwise full form.
std::string format_iso8601(std::int64_t seconds);

// ---- hashing -------------------------------------------------------------

std::uint64_t fnv1a64(const void* data, std::size_t len);
std::uint64_t fnv1a64(const std::string& s);
std::uint64_t fnv1a64_combine(std::uint64_t a, std::uint64_t b);
std::uint64_t hash_file(const std::string& path);  // throws Error if unreadable
std::string hash_hex(std::uint64_t h);

// ---- formatting / small io ------------------------------------------------

// Shortest representation that round-trips a double exactly.
std::string fmt_double(double v);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// RFC-4180-ish quoting, applied only when the field needs it.
std::string csv_escape(const std::string& field);
std::vector<std::string> csv_split(const std::string& line);

std::string join(const std::vector<std::string>& parts, const std::string& sep);
std::string trim(const std::string& s);

}  // namespace quoteflow
