#include "fedehr/auth/token.hpp"

#include "fedehr/error.hpp"

#include <algorithm>
#include <fstream>

namespace fedehr::auth {

using core::json;

namespace {

std::string encode_part(const json& j) { return crypto::base64url_encode(core::canonical_json(j)); }

std::string sign(const json& claims, token_kind kind, std::string_view kid, const crypto::secret_key& key) {
    json header{{"alg", "HS256"}, {"kid", kid}, {"typ", to_string(kind)}};
    std::string signing_input = encode_part(header) + "." + encode_part(claims);
    auto mac = crypto::hmac_sha256(key, signing_input);
    return signing_input + "." + crypto::base64url_encode(mac);
}

std::vector<core::ehr_type> normalized_types(std::vector<core::ehr_type> types) {
    if (types.empty()) return {core::all_ehr_types.begin(), core::all_ehr_types.end()};
    std::sort(types.begin(), types.end());
    types.erase(std::unique(types.begin(), types.end()), types.end());
    return types;
}

std::optional<token_kind> parse_kind(std::string_view s) {
    for (auto k : {token_kind::doctor, token_kind::consent, token_kind::node}) {
        if (to_string(k) == s) return k;
    }
    return std::nullopt;
}

std::optional<any_claims> decode_claims(const json& c, token_kind kind) {
    try {
        if (c.at("kind").get<std::string>() != to_string(kind)) return std::nullopt;
        timestamp iat{c.at("iat").get<std::int64_t>(), 0};
        timestamp exp{c.at("exp").get<std::int64_t>(), 0};
        if (!earlier(iat, exp)) return std::nullopt;
        switch (kind) {
            case token_kind::doctor: {
                auto r = parse_role(c.at("role").get<std::string>());
                if (!r) return std::nullopt;
                return doctor_claims{c.at("sub").get<std::string>(), *r, c.at("hospital_id").get<std::string>(), iat,
                                     exp};
            }
            case token_kind::consent: {
                auto ref = core::patient_ref::from_digest(c.at("patient_ref").get<std::string>());
                auto from = timestamp::parse_rfc3339(c.at("scope_from").get<std::string>());
                auto to = timestamp::parse_rfc3339(c.at("scope_to").get<std::string>());
                if (!ref || !from || !to || earlier(*to, *from)) return std::nullopt;
                if (exp.utc_seconds - iat.utc_seconds > max_consent_ttl_seconds) return std::nullopt;
                std::vector<core::ehr_type> types;
                for (const auto& t : c.at("scope_types")) {
                    auto parsed = core::parse_ehr_type(t.get<std::string>());
                    if (!parsed) return std::nullopt;
                    types.push_back(*parsed);
                }
                if (types.empty()) return std::nullopt;
                return consent_claims{*ref, c.at("granted_to").get<std::string>(), c.at("iss").get<std::string>(),
                                      *from, *to, std::move(types), iat, exp};
            }
            case token_kind::node:
                return node_claims{c.at("sub").get<std::string>(), iat, exp};
        }
    } catch (const json::exception&) {
    }
    return std::nullopt;
}

}  // namespace

std::string_view to_string(role r) noexcept { return r == role::admin ? "admin" : "doctor"; }

std::optional<role> parse_role(std::string_view text) noexcept {
    if (text == "doctor") return role::doctor;
    if (text == "admin") return role::admin;
    return std::nullopt;
}

std::string_view to_string(token_kind k) noexcept {
    switch (k) {
        case token_kind::doctor: return "doctor";
        case token_kind::consent: return "consent";
        case token_kind::node: return "node";
    }
    return "doctor";
}

std::string_view to_string(rejection r) noexcept {
    switch (r) {
        case rejection::bad_signature: return "bad signature";
        case rejection::expired: return "expired";
        case rejection::wrong_kind: return "wrong kind";
        case rejection::malformed: return "malformed";
    }
    return "malformed";
}

const crypto::secret_key* key_ring::find(std::string_view hospital_id) const {
    auto it = keys_.find(hospital_id);
    return it == keys_.end() ? nullptr : &it->second;
}

std::string sign_token(const doctor_claims& c, const crypto::secret_key& key) {
    json claims{{"kind", "doctor"},
                {"sub", c.subject},
                {"role", to_string(c.doctor_role)},
                {"hospital_id", c.hospital_id},
                {"iat", c.issued_at.utc_seconds},
                {"exp", c.expires_at.utc_seconds}};
    return sign(claims, token_kind::doctor, c.hospital_id, key);
}

std::string sign_token(const consent_claims& c, const crypto::secret_key& key) {
    json types = json::array();
    for (auto t : c.scope_types) types.push_back(to_string(t));
    json claims{{"kind", "consent"},
                {"patient_ref", c.patient.digest()},
                {"granted_to", c.granted_to},
                {"iss", c.issuer},
                {"scope_from", c.scope_from.to_rfc3339()},
                {"scope_to", c.scope_to.to_rfc3339()},
                {"scope_types", types},
                {"iat", c.issued_at.utc_seconds},
                {"exp", c.expires_at.utc_seconds}};
    return sign(claims, token_kind::consent, c.issuer, key);
}

std::string sign_token(const node_claims& c, const crypto::secret_key& key) {
    json claims{{"kind", "node"}, {"sub", c.hospital_id}, {"iat", c.issued_at.utc_seconds},
                {"exp", c.expires_at.utc_seconds}};
    return sign(claims, token_kind::node, c.hospital_id, key);
}

verification<any_claims> verify_token(std::string_view token, token_kind expected, const timestamp& now,
                                      const key_ring& keys) {
    auto first = token.find('.');
    auto second = first == std::string_view::npos ? first : token.find('.', first + 1);
    if (second == std::string_view::npos || token.find('.', second + 1) != std::string_view::npos) {
        return rejection::malformed;
    }
    std::string_view header_part = token.substr(0, first);
    std::string_view claims_part = token.substr(first + 1, second - first - 1);
    std::string_view signature_part = token.substr(second + 1);

    auto header_text = crypto::base64url_decode(header_part);
    if (!header_text) return rejection::malformed;
    json header = json::parse(*header_text, nullptr, false);
    if (!header.is_object() || !header.contains("kid") || !header["kid"].is_string() || !header.contains("typ") ||
        !header["typ"].is_string() || header.value("alg", "") != "HS256") {
        return rejection::malformed;
    }
    const auto* key = keys.find(header["kid"].get<std::string>());
    if (key == nullptr) return rejection::bad_signature;

    std::string signing_input(token.substr(0, second));
    std::string expected_sig = crypto::base64url_encode(crypto::hmac_sha256(*key, signing_input));
    if (!crypto::constant_time_equal(
            std::span(reinterpret_cast<const std::uint8_t*>(expected_sig.data()), expected_sig.size()),
            std::span(reinterpret_cast<const std::uint8_t*>(signature_part.data()), signature_part.size()))) {
        return rejection::bad_signature;
    }

    auto kind = parse_kind(header["typ"].get<std::string>());
    if (!kind) return rejection::malformed;
    if (*kind != expected) return rejection::wrong_kind;

    auto claims_text = crypto::base64url_decode(claims_part);
    if (!claims_text) return rejection::malformed;
    json claims_json = json::parse(*claims_text, nullptr, false);
    if (!claims_json.is_object()) return rejection::malformed;
    auto claims = decode_claims(claims_json, *kind);
    if (!claims) return rejection::malformed;

    // The signing key must belong to the party the claims speak for.
    const std::string& kid = header["kid"].get_ref<const std::string&>();
    bool issuer_matches = std::visit(
        [&](const auto& c) {
            using T = std::decay_t<decltype(c)>;
            if constexpr (std::is_same_v<T, doctor_claims>) return c.hospital_id == kid;
            else if constexpr (std::is_same_v<T, consent_claims>) return c.issuer == kid;
            else return c.hospital_id == kid;
        },
        *claims);
    if (!issuer_matches) return rejection::malformed;

    timestamp expires = std::visit([](const auto& c) { return c.expires_at; }, *claims);
    if (!earlier(now, expires)) return rejection::expired;
    return std::move(*claims);
}

verification<doctor_claims> verify_doctor_token(std::string_view token, const timestamp& now, const key_ring& keys) {
    auto v = verify_token(token, token_kind::doctor, now, keys);
    if (!v) return v.reason();
    return std::get<doctor_claims>(v.claims());
}

verification<consent_claims> verify_consent_token(std::string_view token, const timestamp& now,
                                                  const key_ring& keys) {
    auto v = verify_token(token, token_kind::consent, now, keys);
    if (!v) return v.reason();
    return std::get<consent_claims>(v.claims());
}

verification<node_claims> verify_node_token(std::string_view token, const timestamp& now, const key_ring& keys) {
    auto v = verify_token(token, token_kind::node, now, keys);
    if (!v) return v.reason();
    return std::get<node_claims>(v.claims());
}

bool consent_covers(const consent_claims& consent, const timestamp& from, const timestamp& to,
                    const std::vector<core::ehr_type>& types) {
    if (earlier(from, consent.scope_from) || earlier(consent.scope_to, to)) return false;
    const auto& wanted = types.empty() ? std::vector<core::ehr_type>(core::all_ehr_types.begin(),
                                                                     core::all_ehr_types.end())
                                       : types;
    return std::all_of(wanted.begin(), wanted.end(), [&](core::ehr_type t) {
        return std::find(consent.scope_types.begin(), consent.scope_types.end(), t) != consent.scope_types.end();
    });
}

bool consent_covers_record(const consent_claims& consent, const timestamp& recorded_at, core::ehr_type type) {
    return consent_covers(consent, recorded_at, recorded_at, {type});
}

access_grant authorize_access(const std::optional<std::string>& doctor_token,
                              const std::optional<std::string>& consent_token, const timestamp& now,
                              const key_ring& keys) {
    if (!doctor_token || doctor_token->empty()) {
        throw error(error_kind::unauthenticated, "doctor token required");
    }
    auto doctor = verify_doctor_token(*doctor_token, now, keys);
    if (!doctor) throw error(error_kind::unauthenticated, "doctor token rejected", std::string(to_string(doctor.reason())));
    if (doctor.claims().doctor_role != role::doctor) {
        throw error(error_kind::forbidden, "role doctor required");
    }
    if (!consent_token || consent_token->empty()) {
        throw error(error_kind::forbidden, "patient consent token required");
    }
    auto consent = verify_consent_token(*consent_token, now, keys);
    if (!consent) {
        throw error(error_kind::forbidden, "consent token rejected", std::string(to_string(consent.reason())));
    }
    if (consent.claims().granted_to != doctor.claims().subject ||
        consent.claims().issuer != doctor.claims().hospital_id) {
        throw error(error_kind::forbidden, "consent was granted to a different doctor");
    }
    return {doctor.claims(), consent.claims()};
}

doctor_claims authorize_admin(const std::optional<std::string>& doctor_token, const timestamp& now,
                              const key_ring& keys) {
    if (!doctor_token || doctor_token->empty()) throw error(error_kind::unauthenticated, "admin token required");
    auto doctor = verify_doctor_token(*doctor_token, now, keys);
    if (!doctor) throw error(error_kind::unauthenticated, "admin token rejected", std::string(to_string(doctor.reason())));
    if (doctor.claims().doctor_role != role::admin) throw error(error_kind::forbidden, "role admin required");
    return doctor.claims();
}

credential make_credential(std::string doctor_id, role r, std::string salt, std::string_view secret) {
    std::string hash = crypto::to_hex(crypto::sha256(salt + std::string(secret)));
    return {std::move(doctor_id), r, std::move(salt), std::move(hash)};
}

credential_store::credential_store(std::string hospital_id, std::vector<credential> credentials)
    : hospital_id_(std::move(hospital_id)) {
    for (auto& c : credentials) {
        std::string id = c.doctor_id;
        credentials_.emplace(std::move(id), std::move(c));
    }
}

credential_store credential_store::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw error(error_kind::storage, "cannot open credential table", path.string());
    try {
        json doc = json::parse(in);
        std::vector<credential> creds;
        for (const auto& c : doc.at("credentials")) {
            auto r = parse_role(c.at("role").get<std::string>());
            if (!r) throw error(error_kind::validation, "unknown role in credential table");
            creds.push_back({c.at("doctor_id").get<std::string>(), *r, c.at("salt").get<std::string>(),
                             c.at("secret_sha256").get<std::string>()});
        }
        return credential_store(doc.at("hospital_id").get<std::string>(), std::move(creds));
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed credential table", e.what());
    }
}

void credential_store::save(const std::filesystem::path& path) const {
    json creds = json::array();
    for (const auto& [id, c] : credentials_) {
        creds.push_back({{"doctor_id", c.doctor_id},
                         {"role", to_string(c.doctor_role)},
                         {"salt", c.salt},
                         {"secret_sha256", c.secret_sha256}});
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw error(error_kind::storage, "cannot write credential table", path.string());
    out << json{{"hospital_id", hospital_id_}, {"credentials", creds}}.dump(2) << '\n';
}

std::optional<role> credential_store::check(std::string_view doctor_id, std::string_view secret) const {
    auto it = credentials_.find(doctor_id);
    if (it == credentials_.end()) return std::nullopt;
    std::string hash = crypto::to_hex(crypto::sha256(it->second.salt + std::string(secret)));
    const auto& stored = it->second.secret_sha256;
    bool match = crypto::constant_time_equal(
        std::span(reinterpret_cast<const std::uint8_t*>(hash.data()), hash.size()),
        std::span(reinterpret_cast<const std::uint8_t*>(stored.data()), stored.size()));
    if (!match) return std::nullopt;
    return it->second.doctor_role;
}

auth_service::auth_service(std::string hospital_id, crypto::secret_key signing_key,
                           crypto::secret_key federation_key, credential_store credentials, key_ring verification_keys,
                           clock_fn clock)
    : hospital_id_(std::move(hospital_id)),
      signing_key_(std::move(signing_key)),
      federation_key_(std::move(federation_key)),
      credentials_(std::move(credentials)),
      keys_(std::move(verification_keys)),
      clock_(std::move(clock)) {
    if (keys_.find(hospital_id_) == nullptr) keys_.add(hospital_id_, signing_key_);
}

issued_doctor_token auth_service::doctor_login(std::string_view doctor_id, std::string_view secret,
                                               std::string_view hospital_id) const {
    if (hospital_id != hospital_id_) throw error(error_kind::validation, "unknown hospital", std::string(hospital_id));
    auto r = credentials_.check(doctor_id, secret);
    if (!r) throw error(error_kind::unauthenticated, "bad credentials");
    timestamp now = clock_();
    doctor_claims claims{std::string(doctor_id), *r, hospital_id_, now, now.plus_seconds(doctor_ttl_seconds)};
    return {sign_token(claims, signing_key_), claims};
}

issued_consent_token auth_service::grant_consent(std::string_view scan, std::string_view doctor_token,
                                                 const consent_scope& scope) const {
    timestamp now = clock_();
    auto doctor = verify_doctor_token(doctor_token, now, keys_);
    if (!doctor) throw error(error_kind::unauthenticated, "doctor token rejected", std::string(to_string(doctor.reason())));
    if (doctor.claims().hospital_id != hospital_id_) {
        throw error(error_kind::forbidden, "consent must be captured at the doctor's own hospital");
    }
    if (doctor.claims().doctor_role != role::doctor) throw error(error_kind::forbidden, "role doctor required");
    if (earlier(scope.to, scope.from)) throw error(error_kind::validation, "consent scope_from is after scope_to");
    auto patient = core::hash_patient_id(scan, federation_key_);

    std::int64_t ttl = std::min(consent_ttl_seconds, max_consent_ttl_seconds);
    consent_claims claims{std::move(patient),       doctor.claims().subject, hospital_id_, scope.from, scope.to,
                          normalized_types(scope.types), now,                now.plus_seconds(ttl)};
    return {sign_token(claims, signing_key_), claims};
}

std::string auth_service::issue_node_token() const {
    timestamp now = clock_();
    return sign_token(node_claims{hospital_id_, now, now.plus_seconds(default_node_ttl_seconds)}, signing_key_);
}

}  // namespace fedehr::auth
