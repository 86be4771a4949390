#pragma once

#include <cstdint>
#include <cstdio>
#include <string>

#include "anomattr/error.hpp"

namespace anomattr {

constexpr std::int64_t kSecondsPerDay = 86400;

// Civil-calendar conversions (proleptic Gregorian), days relative to 1970-01-01.
inline std::int64_t days_from_civil(int y, int m, int d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2) / 5 + static_cast<unsigned>(d) - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const std::int64_t yr = static_cast<std::int64_t>(yoe) + era * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
  m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
  y = static_cast<int>(yr + (m <= 2));
}

inline int year_of(std::int64_t ts) {
  int y, m, d;
  std::int64_t days = ts / kSecondsPerDay;
  if (ts < 0 && ts % kSecondsPerDay != 0) --days;
  civil_from_days(days, y, m, d);
  return y;
}

inline int month_of(std::int64_t ts) {
  int y, m, d;
  std::int64_t days = ts / kSecondsPerDay;
  if (ts < 0 && ts % kSecondsPerDay != 0) --days;
  civil_from_days(days, y, m, d);
  return m;
}

inline bool is_leap_day(std::int64_t ts) {
  int y, m, d;
  std::int64_t days = ts / kSecondsPerDay;
  if (ts < 0 && ts % kSecondsPerDay != 0) --days;
  civil_from_days(days, y, m, d);
  return m == 2 && d == 29;
}

// Accepts `YYYY-MM-DD` and `YYYY-MM-DDTHH:MM:SS[Z]` (also with a space
// separator). Returns seconds since the Unix epoch, UTC.
inline std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = '\0', tail = '\0';
  int n = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d%c", &y, &mo, &d, &sep, &h, &mi, &s, &tail);
  bool ok = false;
  if (n == 3) {
    ok = true;
  } else if (n >= 7 && (sep == 'T' || sep == ' ')) {
    ok = (n == 7) || (n == 8 && tail == 'Z');
  }
  ok = ok && mo >= 1 && mo <= 12 && d >= 1 && d <= 31 && h >= 0 && h < 24 &&
       mi >= 0 && mi < 60 && s >= 0 && s < 60;
  if (!ok) fail(ErrorKind::UnparseableTimestamp, "cannot parse timestamp '" + text + "'");
  return days_from_civil(y, mo, d) * kSecondsPerDay + h * 3600 + mi * 60 + s;
}

// Date-only form for midnight timestamps, full form otherwise.
inline std::string format_iso8601(std::int64_t ts) {
  std::int64_t days = ts / kSecondsPerDay;
  std::int64_t rem = ts % kSecondsPerDay;
  if (rem < 0) {
    rem += kSecondsPerDay;
    --days;
  }
  int y, m, d;
  civil_from_days(days, y, m, d);
  char buf[32];
  if (rem == 0) {
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02d", y, m, d);
  } else {
    const int h = static_cast<int>(rem / 3600);
    const int mi = static_cast<int>((rem / 60) % 60);
    const int s = static_cast<int>(rem % 60);
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", y, m, d, h, mi, s);
  }
  return buf;
}

}  // namespace anomattr
