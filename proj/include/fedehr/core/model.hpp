#pragma once

#include "fedehr/crypto.hpp"
#include "fedehr/timestamp.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <compare>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fedehr::core {

using json = nlohmann::json;

enum class ehr_type {
    hemodialysis,
    lab_report,
    radiology_image,
    transcription_report,
    medication_history,
};

inline constexpr std::array<ehr_type, 5> all_ehr_types = {
    ehr_type::hemodialysis, ehr_type::lab_report, ehr_type::radiology_image,
    ehr_type::transcription_report, ehr_type::medication_history,
};

std::string_view to_string(ehr_type type) noexcept;
std::optional<ehr_type> parse_ehr_type(std::string_view text) noexcept;
/// Throws fedehr::error(validation) for anything outside the five known names.
ehr_type ehr_type_from_string(std::string_view text);

/// De-identified patient handle: lowercase hex HMAC-SHA-256 digest of the normalized national ID.
class patient_ref {
public:
    patient_ref() = default;

    static bool is_valid_digest(std::string_view text) noexcept;
    static std::optional<patient_ref> from_digest(std::string_view digest);
    /// Throws fedehr::error(validation) unless `digest` matches ^[0-9a-f]{64}$.
    static patient_ref parse(std::string_view digest);

    const std::string& digest() const noexcept { return digest_; }
    bool empty() const noexcept { return digest_.empty(); }

    friend auto operator<=>(const patient_ref&, const patient_ref&) = default;

private:
    explicit patient_ref(std::string digest) : digest_(std::move(digest)) {}
    std::string digest_;
};

/// Trim, uppercase ASCII letters, drop interior hyphens and whitespace.
std::string normalize_national_id(std::string_view raw);

/// HMAC-SHA-256(federation_key, normalize_national_id(raw_id)), lowercase hex.
/// Throws fedehr::error(validation) when the normalized ID is empty.
patient_ref hash_patient_id(std::string_view raw_id, const crypto::secret_key& federation_key);

struct hemodialysis_payload {
    double pre_weight_kg = 0;
    double post_weight_kg = 0;
    int systolic_mmHg = 0;
    int diastolic_mmHg = 0;
    int duration_min = 0;
    std::string dialyzer_model;
    std::string notes;

    friend bool operator==(const hemodialysis_payload&, const hemodialysis_payload&) = default;
};

json to_json(const hemodialysis_payload& p);
/// Reads the payload fields without checking plausibility (see validate_unified for that).
hemodialysis_payload hemodialysis_from_json(const json& j);

/// One shared record in the negotiated common format.
struct unified_ehr {
    std::string hospital_id;
    std::string ehr_id;
    patient_ref patient;
    std::string patient_name;
    std::string doctor_name;
    ehr_type type = ehr_type::hemodialysis;
    timestamp recorded_at;
    std::string language = "en";
    json payload = json::object();
    bool shared = true;

    friend bool operator==(const unified_ehr&, const unified_ehr&) = default;
};

/// Serialized field names of a unified record.
namespace field {
inline constexpr const char* hospital_id = "hospital_id";
inline constexpr const char* ehr_id = "ehr_id";
inline constexpr const char* patient_id = "patient_id";
inline constexpr const char* patient_name = "patient_name";
inline constexpr const char* doctor_name = "doctor_name";
inline constexpr const char* ehr_type = "ehr_type";
inline constexpr const char* recorded_at = "recorded_at";
inline constexpr const char* language = "language";
inline constexpr const char* payload = "payload";
inline constexpr const char* shared = "shared";
}  // namespace field

inline constexpr std::array<std::string_view, 10> unified_field_names = {
    field::doctor_name, field::ehr_id,   field::ehr_type,    field::hospital_id, field::language,
    field::patient_id,  field::patient_name, field::payload, field::recorded_at, field::shared,
};

inline constexpr std::array<std::string_view, 7> hemodialysis_field_names = {
    "pre_weight_kg", "post_weight_kg", "systolic_mmHg", "diastolic_mmHg",
    "duration_min",  "dialyzer_model", "notes",
};

struct field_error {
    std::string path;
    std::string message;
    friend bool operator==(const field_error&, const field_error&) = default;
};

struct validation_report {
    std::vector<field_error> errors;

    bool ok() const noexcept { return errors.empty(); }
    bool has_error_at(std::string_view path) const noexcept;
    std::string summary() const;
};

/// Checks a serialized record against every invariant of the unified format.
validation_report validate_unified(const json& document);
validation_report validate_unified(const unified_ehr& record);

json to_json(const unified_ehr& record);
/// Parses and validates; throws fedehr::error(validation) with the report summary as detail.
unified_ehr unified_from_json(const json& document);

/// UTF-8 JSON, keys sorted bytewise, no insignificant whitespace.
std::string canonical_json(const json& value);
/// Canonical bytes of a valid record; throws fedehr::error(validation) otherwise.
std::string canonical_serialize(const unified_ehr& record);

bool is_valid_utf8(std::string_view text) noexcept;
bool is_valid_hospital_id(std::string_view text) noexcept;

}  // namespace fedehr::core
