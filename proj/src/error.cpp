#include "fedehr/error.hpp"

namespace fedehr {

std::string_view to_string(error_kind kind) noexcept {
    switch (kind) {
        case error_kind::validation: return "validation_error";
        case error_kind::unauthenticated: return "unauthenticated";
        case error_kind::forbidden: return "forbidden";
        case error_kind::not_found: return "not_found";
        case error_kind::conflict: return "conflict";
        case error_kind::unavailable: return "unavailable";
        case error_kind::timeout: return "timeout";
        case error_kind::storage: return "storage_error";
        case error_kind::internal: return "internal";
    }
    return "internal";
}

int http_status(error_kind kind) noexcept {
    switch (kind) {
        case error_kind::validation: return 400;
        case error_kind::unauthenticated: return 401;
        case error_kind::forbidden: return 403;
        case error_kind::not_found: return 404;
        case error_kind::conflict: return 409;
        case error_kind::unavailable: return 503;
        case error_kind::timeout: return 504;
        case error_kind::storage:
        case error_kind::internal: return 500;
    }
    return 500;
}

error_kind error_kind_from_code(std::string_view code) noexcept {
    for (auto k : {error_kind::validation, error_kind::unauthenticated, error_kind::forbidden,
                   error_kind::not_found, error_kind::conflict, error_kind::unavailable,
                   error_kind::timeout, error_kind::storage}) {
        if (to_string(k) == code) return k;
    }
    return error_kind::internal;
}

error_kind error_kind_from_status(int status) noexcept {
    switch (status) {
        case 400: return error_kind::validation;
        case 401: return error_kind::unauthenticated;
        case 403: return error_kind::forbidden;
        case 404: return error_kind::not_found;
        case 409: return error_kind::conflict;
        case 502:
        case 503: return error_kind::unavailable;
        case 504: return error_kind::timeout;
        default: return error_kind::internal;
    }
}

}  // namespace fedehr
