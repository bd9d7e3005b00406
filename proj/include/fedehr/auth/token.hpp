#pragma once

#include "fedehr/core/model.hpp"
#include "fedehr/crypto.hpp"
#include "fedehr/timestamp.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace fedehr::auth {

inline constexpr std::string_view doctor_token_header = "X-Doctor-Token";
inline constexpr std::string_view consent_token_header = "X-Consent-Token";
inline constexpr std::string_view node_token_header = "X-Node-Token";

inline constexpr std::int64_t default_doctor_ttl_seconds = 8 * 3600;
inline constexpr std::int64_t max_consent_ttl_seconds = 15 * 60;
inline constexpr std::int64_t default_node_ttl_seconds = 5 * 60;

enum class role { doctor, admin };
enum class token_kind { doctor, consent, node };

std::string_view to_string(role r) noexcept;
std::optional<role> parse_role(std::string_view text) noexcept;
std::string_view to_string(token_kind k) noexcept;

struct doctor_claims {
    std::string subject;
    role doctor_role = role::doctor;
    std::string hospital_id;
    timestamp issued_at;
    timestamp expires_at;
    friend bool operator==(const doctor_claims&, const doctor_claims&) = default;
};

struct consent_claims {
    core::patient_ref patient;
    std::string granted_to;
    /// Hospital whose key signed the consent; always the granting doctor's hospital.
    std::string issuer;
    timestamp scope_from;
    timestamp scope_to;
    std::vector<core::ehr_type> scope_types;
    timestamp issued_at;
    timestamp expires_at;
    friend bool operator==(const consent_claims&, const consent_claims&) = default;
};

/// Identifies a hospital node to the index service during sync.
struct node_claims {
    std::string hospital_id;
    timestamp issued_at;
    timestamp expires_at;
    friend bool operator==(const node_claims&, const node_claims&) = default;
};

enum class rejection { bad_signature, expired, wrong_kind, malformed };
std::string_view to_string(rejection r) noexcept;

/// Claims or the reason the token was refused.
template <typename Claims>
class verification {
public:
    verification(Claims claims) : state_(std::move(claims)) {}  // NOLINT(google-explicit-constructor)
    verification(rejection reason) : state_(reason) {}          // NOLINT(google-explicit-constructor)

    bool ok() const noexcept { return std::holds_alternative<Claims>(state_); }
    explicit operator bool() const noexcept { return ok(); }
    const Claims& claims() const { return std::get<Claims>(state_); }
    rejection reason() const { return std::get<rejection>(state_); }

private:
    std::variant<Claims, rejection> state_;
};

using any_claims = std::variant<doctor_claims, consent_claims, node_claims>;

/// Per-hospital HMAC keys. Each hospital signs with its own entry; every service holds the
/// whole map to verify.
class key_ring {
public:
    void add(std::string hospital_id, crypto::secret_key key) { keys_[std::move(hospital_id)] = std::move(key); }
    const crypto::secret_key* find(std::string_view hospital_id) const;
    bool empty() const noexcept { return keys_.empty(); }

private:
    std::map<std::string, crypto::secret_key, std::less<>> keys_;
};

/// Compact three-part token: base64url(header).base64url(claims).base64url(HMAC-SHA-256).
std::string sign_token(const doctor_claims& claims, const crypto::secret_key& key);
std::string sign_token(const consent_claims& claims, const crypto::secret_key& key);
std::string sign_token(const node_claims& claims, const crypto::secret_key& key);

verification<any_claims> verify_token(std::string_view token, token_kind expected, const timestamp& now,
                                      const key_ring& keys);
verification<doctor_claims> verify_doctor_token(std::string_view token, const timestamp& now, const key_ring& keys);
verification<consent_claims> verify_consent_token(std::string_view token, const timestamp& now, const key_ring& keys);
verification<node_claims> verify_node_token(std::string_view token, const timestamp& now, const key_ring& keys);

struct consent_scope {
    timestamp from;
    timestamp to;
    /// Empty means every EHR type.
    std::vector<core::ehr_type> types;
};

bool consent_covers(const consent_claims& consent, const timestamp& from, const timestamp& to,
                    const std::vector<core::ehr_type>& types);
bool consent_covers_record(const consent_claims& consent, const timestamp& recorded_at, core::ehr_type type);

/// Both halves of the two-way gate, already cross-checked against each other.
struct access_grant {
    doctor_claims doctor;
    consent_claims consent;
};

/// Throws fedehr::error: unauthenticated when the doctor token is absent or does not verify;
/// forbidden when the doctor role is wrong or the consent is absent, invalid, or bound elsewhere.
access_grant authorize_access(const std::optional<std::string>& doctor_token,
                              const std::optional<std::string>& consent_token, const timestamp& now,
                              const key_ring& keys);

/// Doctor token with role=admin; throws like authorize_access.
doctor_claims authorize_admin(const std::optional<std::string>& doctor_token, const timestamp& now,
                              const key_ring& keys);

struct credential {
    std::string doctor_id;
    role doctor_role = role::doctor;
    std::string salt;
    /// Lowercase hex SHA-256 of salt + secret.
    std::string secret_sha256;
};

credential make_credential(std::string doctor_id, role r, std::string salt, std::string_view secret);

class credential_store {
public:
    credential_store() = default;
    credential_store(std::string hospital_id, std::vector<credential> credentials);

    static credential_store load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    const std::string& hospital_id() const noexcept { return hospital_id_; }
    /// Role on success; nullopt for unknown id or wrong secret.
    std::optional<role> check(std::string_view doctor_id, std::string_view secret) const;

private:
    std::string hospital_id_;
    std::map<std::string, credential, std::less<>> credentials_;
};

struct issued_doctor_token {
    std::string token;
    doctor_claims claims;
};

struct issued_consent_token {
    std::string token;
    consent_claims claims;
};

/// Login and consent capture for one hospital.
class auth_service {
public:
    auth_service(std::string hospital_id, crypto::secret_key signing_key, crypto::secret_key federation_key,
                 credential_store credentials, key_ring verification_keys, clock_fn clock = system_now);

    const std::string& hospital_id() const noexcept { return hospital_id_; }
    const key_ring& keys() const noexcept { return keys_; }
    timestamp now() const { return clock_(); }

    /// Throws validation for a foreign hospital_id and unauthenticated for bad credentials.
    issued_doctor_token doctor_login(std::string_view doctor_id, std::string_view secret,
                                     std::string_view hospital_id) const;

    /// Hashes `scan` and drops it; only the patient reference leaves this function.
    /// Throws unauthenticated for a bad doctor token and validation for an empty scan or bad scope.
    issued_consent_token grant_consent(std::string_view scan, std::string_view doctor_token,
                                       const consent_scope& scope) const;

    std::string issue_node_token() const;

    std::int64_t doctor_ttl_seconds = default_doctor_ttl_seconds;
    std::int64_t consent_ttl_seconds = max_consent_ttl_seconds;

private:
    std::string hospital_id_;
    crypto::secret_key signing_key_;
    crypto::secret_key federation_key_;
    credential_store credentials_;
    key_ring keys_;
    clock_fn clock_;
};

}  // namespace fedehr::auth
