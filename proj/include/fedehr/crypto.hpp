#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedehr::crypto {

using digest256 = std::array<std::uint8_t, 32>;

/// A 32-byte symmetric secret. Never printed; compare with constant-time equality.
class secret_key {
public:
    static constexpr std::size_t size = 32;

    secret_key() = default;
    explicit secret_key(const std::array<std::uint8_t, size>& bytes) : bytes_(bytes) {}

    /// Parses 64 hex characters. Throws fedehr::error(validation) otherwise.
    static secret_key from_hex(std::string_view hex);
    std::string to_hex() const;

    std::span<const std::uint8_t> bytes() const noexcept { return bytes_; }

    friend bool operator==(const secret_key& a, const secret_key& b) noexcept;

private:
    std::array<std::uint8_t, size> bytes_{};
};

digest256 sha256(std::string_view message);
digest256 hmac_sha256(std::span<const std::uint8_t> key, std::string_view message);
inline digest256 hmac_sha256(const secret_key& key, std::string_view message) {
    return hmac_sha256(key.bytes(), message);
}

bool constant_time_equal(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) noexcept;

std::string to_hex(std::span<const std::uint8_t> bytes);
std::optional<std::vector<std::uint8_t>> from_hex(std::string_view hex);

std::string base64url_encode(std::span<const std::uint8_t> bytes);
inline std::string base64url_encode(std::string_view text) {
    return base64url_encode(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}
/// Unpadded base64url; returns nullopt on any non-alphabet character or bad length.
std::optional<std::string> base64url_decode(std::string_view encoded);

}  // namespace fedehr::crypto
