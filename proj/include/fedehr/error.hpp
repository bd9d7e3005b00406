#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedehr {

/// Failure classes shared by every service. Each maps onto one HTTP status.
enum class error_kind {
    validation,       // 400
    unauthenticated,  // 401
    forbidden,        // 403
    not_found,        // 404
    conflict,         // 409
    unavailable,      // 503, peer unreachable
    timeout,          // 504, peer did not answer in time
    storage,          // 500, fail-closed audit/store writes
    internal,         // 500
};

std::string_view to_string(error_kind kind) noexcept;
int http_status(error_kind kind) noexcept;
error_kind error_kind_from_code(std::string_view code) noexcept;
error_kind error_kind_from_status(int status) noexcept;

class error : public std::runtime_error {
public:
    error(error_kind kind, std::string message, std::string detail = {})
        : std::runtime_error(std::move(message)), kind_(kind), detail_(std::move(detail)) {}

    error_kind kind() const noexcept { return kind_; }
    const std::string& detail() const noexcept { return detail_; }

private:
    error_kind kind_;
    std::string detail_;
};

}  // namespace fedehr
