#pragma once

#include "mobcast/types.hpp"

#include <cstdint>
#include <cstdio>
#include <string>

namespace mobcast {

// Civil-calendar conversions (proleptic Gregorian, UTC, no leap seconds).
// Timestamps are epoch seconds held in int64.

inline std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const int era = (y >= 0 ? y : y - 399) / 400;
    const unsigned yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153u * static_cast<unsigned>(m + (m > 2 ? -3 : 9)) + 2u) / 5u +
                         static_cast<unsigned>(d) - 1u;
    const unsigned doe = yoe * 365u + yoe / 4u - yoe / 100u + doy;
    return static_cast<std::int64_t>(era) * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

inline void civil_from_days(std::int64_t z, int& y, int& m, int& d) {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const unsigned doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t yy = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    d = static_cast<int>(doy - (153 * mp + 2) / 5 + 1);
    m = static_cast<int>(mp + (mp < 10 ? 3 : -9));
    y = static_cast<int>(yy + (m <= 2));
}

inline bool valid_civil(int y, int mo, int d, int h, int mi, int s) {
    if (mo < 1 || mo > 12 || d < 1 || h < 0 || h > 23 || mi < 0 || mi > 59 || s < 0 || s > 59)
        return false;
    static const int dim[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    int max_d = dim[mo - 1];
    const bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    if (mo == 2 && leap)
        max_d = 29;
    return d <= max_d;
}

// Parses "yyyy-mm-dd hh:mm:ss" or "yyyy-mm-ddThh:mm:ss"; returns false on any
// syntactic or calendar violation.
inline bool parse_datetime(const std::string& s, std::int64_t& epoch_out) {
    int y, mo, d, h, mi, se;
    char sep;
    if (std::sscanf(s.c_str(), "%4d-%2d-%2d%c%2d:%2d:%2d", &y, &mo, &d, &sep, &h, &mi, &se) != 7)
        return false;
    if (sep != ' ' && sep != 'T')
        return false;
    if (!valid_civil(y, mo, d, h, mi, se))
        return false;
    epoch_out = days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + se;
    return true;
}

inline std::string format_datetime(std::int64_t epoch, char sep = ' ') {
    std::int64_t days = epoch / 86400;
    std::int64_t rem = epoch % 86400;
    if (rem < 0) {
        rem += 86400;
        days -= 1;
    }
    int y, mo, d;
    civil_from_days(days, y, mo, d);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d%c%02d:%02d:%02d", y, mo, d, sep,
                  static_cast<int>(rem / 3600), static_cast<int>((rem % 3600) / 60),
                  static_cast<int>(rem % 60));
    return buf;
}

inline int hour_of_day(std::int64_t epoch) {
    std::int64_t rem = epoch % 86400;
    if (rem < 0)
        rem += 86400;
    return static_cast<int>(rem / 3600);
}

// 0 = Monday ... 6 = Sunday (1970-01-01 was a Thursday).
inline int day_of_week(std::int64_t epoch) {
    std::int64_t days = epoch / 86400;
    if (epoch % 86400 < 0)
        days -= 1;
    return static_cast<int>(((days % 7) + 7 + 3) % 7);
}

inline std::int64_t floor_to_hour(std::int64_t epoch) {
    std::int64_t h = epoch / 3600;
    if (epoch % 3600 < 0)
        h -= 1;
    return h * 3600;
}

}  // namespace mobcast
