#include "fedehr/timestamp.hpp"

#include "fedehr/error.hpp"

#include <chrono>
#include <cstdio>

namespace fedehr {

namespace {

bool digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
    if (pos + n > s.size()) return false;
    int v = 0;
    for (std::size_t i = pos; i < pos + n; ++i) {
        char c = s[i];
        if (c < '0' || c > '9') return false;
        v = v * 10 + (c - '0');
    }
    out = v;
    return true;
}

struct civil {
    std::int64_t year;
    unsigned month;
    unsigned day;
};

civil civil_from_days(std::int64_t z) noexcept {
    z += 719468;
    const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const auto doe = static_cast<unsigned>(z - era * 146097);
    const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    const std::int64_t y = static_cast<std::int64_t>(yoe) + era * 400;
    const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const unsigned mp = (5 * doy + 2) / 153;
    const unsigned d = doy - (153 * mp + 2) / 5 + 1;
    const unsigned m = mp < 10 ? mp + 3 : mp - 9;
    return {y + (m <= 2), m, d};
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) noexcept {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

}  // namespace

std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) noexcept {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const auto yoe = static_cast<unsigned>(y - era * 400);
    const unsigned doy = (153 * (m > 2 ? m - 3 : m + 9) + 2) / 5 + d - 1;
    const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

bool valid_civil_date(std::int64_t y, unsigned m, unsigned d) noexcept {
    if (m < 1 || m > 12 || d < 1) return false;
    static constexpr unsigned month_days[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    unsigned limit = month_days[m - 1];
    bool leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
    if (m == 2 && leap) limit = 29;
    return d <= limit;
}

std::optional<timestamp> make_timestamp(int year, int month, int day, int hour, int minute, int second,
                                        int offset_minutes) {
    if (!valid_civil_date(year, static_cast<unsigned>(month), static_cast<unsigned>(day))) return std::nullopt;
    if (hour < 0 || hour > 23 || minute < 0 || minute > 59 || second < 0 || second > 59) return std::nullopt;
    if (offset_minutes <= -24 * 60 || offset_minutes >= 24 * 60) return std::nullopt;
    std::int64_t local = days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 +
                         hour * 3600 + minute * 60 + second;
    return timestamp{local - offset_minutes * 60, offset_minutes};
}

std::optional<int> parse_utc_offset(std::string_view text) {
    if (text == "Z" || text == "z") return 0;
    if (text.size() != 6 || (text[0] != '+' && text[0] != '-') || text[3] != ':') return std::nullopt;
    int hh = 0, mm = 0;
    if (!digits(text, 1, 2, hh) || !digits(text, 4, 2, mm) || hh > 23 || mm > 59) return std::nullopt;
    int total = hh * 60 + mm;
    return text[0] == '-' ? -total : total;
}

std::optional<timestamp> timestamp::parse_rfc3339(std::string_view s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, se = 0;
    if (s.size() < 20) return std::nullopt;
    if (!digits(s, 0, 4, y) || s[4] != '-' || !digits(s, 5, 2, mo) || s[7] != '-' || !digits(s, 8, 2, d))
        return std::nullopt;
    if (s[10] != 'T' && s[10] != 't') return std::nullopt;
    if (!digits(s, 11, 2, h) || s[13] != ':' || !digits(s, 14, 2, mi) || s[16] != ':' || !digits(s, 17, 2, se))
        return std::nullopt;
    std::size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        std::size_t start = pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
        if (pos == start) return std::nullopt;
    }
    auto offset = parse_utc_offset(s.substr(pos));
    if (!offset) return std::nullopt;
    return make_timestamp(y, mo, d, h, mi, se, *offset);
}

timestamp timestamp::parse(std::string_view text, std::string_view field) {
    auto ts = parse_rfc3339(text);
    if (!ts) {
        throw error(error_kind::validation, std::string(field) + " is not a valid RFC 3339 timestamp",
                    std::string(text));
    }
    return *ts;
}

std::string timestamp::to_rfc3339() const {
    std::int64_t local = utc_seconds + offset_minutes * 60;
    std::int64_t days = floor_div(local, 86400);
    std::int64_t secs = local - days * 86400;
    civil c = civil_from_days(days);
    char buf[40];
    int n = std::snprintf(buf, sizeof buf, "%04lld-%02u-%02uT%02lld:%02lld:%02lld", static_cast<long long>(c.year),
                          c.month, c.day, static_cast<long long>(secs / 3600),
                          static_cast<long long>((secs / 60) % 60), static_cast<long long>(secs % 60));
    std::string out(buf, static_cast<std::size_t>(n));
    if (offset_minutes == 0) {
        out += 'Z';
    } else {
        int abs_off = offset_minutes < 0 ? -offset_minutes : offset_minutes;
        std::snprintf(buf, sizeof buf, "%c%02d:%02d", offset_minutes < 0 ? '-' : '+', abs_off / 60, abs_off % 60);
        out += buf;
    }
    return out;
}

std::string timestamp::date() const { return to_rfc3339().substr(0, 10); }

timestamp system_now() {
    auto now = std::chrono::system_clock::now();
    return timestamp{std::chrono::duration_cast<std::chrono::seconds>(now.time_since_epoch()).count(), 0};
}

}  // namespace fedehr
