#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace fedehr {

/// Second-precision instant plus the UTC offset it was written with.
///
/// Equality is field-wise (two spellings of the same instant are different
/// values because they serialize differently); ordering helpers compare the
/// instant only.
struct timestamp {
    std::int64_t utc_seconds = 0;
    int offset_minutes = 0;

    static timestamp epoch() noexcept { return {}; }
    static timestamp from_utc_seconds(std::int64_t s, int offset_minutes = 0) noexcept {
        return {s, offset_minutes};
    }

    /// Strict RFC 3339: `YYYY-MM-DDTHH:MM:SS[.frac](Z|+HH:MM|-HH:MM)`.
    /// Fractional seconds are accepted and truncated.
    static std::optional<timestamp> parse_rfc3339(std::string_view text);
    /// Throwing variant; `field` names the offending input in the error.
    static timestamp parse(std::string_view text, std::string_view field = "timestamp");

    std::string to_rfc3339() const;
    /// Calendar date in the stored offset, `YYYY-MM-DD`.
    std::string date() const;

    timestamp with_offset(int minutes) const noexcept { return {utc_seconds, minutes}; }
    timestamp plus_seconds(std::int64_t s) const noexcept { return {utc_seconds + s, offset_minutes}; }

    friend bool operator==(const timestamp&, const timestamp&) = default;
};

inline bool earlier(const timestamp& a, const timestamp& b) noexcept { return a.utc_seconds < b.utc_seconds; }
inline bool same_instant(const timestamp& a, const timestamp& b) noexcept {
    return a.utc_seconds == b.utc_seconds;
}
inline std::strong_ordering instant_order(const timestamp& a, const timestamp& b) noexcept {
    return a.utc_seconds <=> b.utc_seconds;
}

/// Days since 1970-01-01 for a proleptic Gregorian civil date.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) noexcept;
bool valid_civil_date(std::int64_t y, unsigned m, unsigned d) noexcept;

/// Builds an instant from local wall-clock fields and a UTC offset; nullopt on an impossible date.
std::optional<timestamp> make_timestamp(int year, int month, int day, int hour, int minute, int second,
                                        int offset_minutes);

/// Parses "+HH:MM" / "-HH:MM" / "Z" into minutes.
std::optional<int> parse_utc_offset(std::string_view text);

using clock_fn = std::function<timestamp()>;
timestamp system_now();

}  // namespace fedehr
