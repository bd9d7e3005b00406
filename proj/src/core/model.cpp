#include "fedehr/core/model.hpp"

#include "fedehr/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace fedehr::core {

namespace {

bool is_language_tag(std::string_view tag) noexcept {
    // Primary subtag of 2-3 lowercase letters, then optional -subtags of 2-8 alphanumerics.
    std::size_t pos = 0;
    while (pos < tag.size() && tag[pos] >= 'a' && tag[pos] <= 'z') ++pos;
    if (pos < 2 || pos > 3) return false;
    while (pos < tag.size()) {
        if (tag[pos] != '-') return false;
        std::size_t start = ++pos;
        while (pos < tag.size() && std::isalnum(static_cast<unsigned char>(tag[pos]))) ++pos;
        if (pos - start < 2 || pos - start > 8) return false;
    }
    return true;
}

bool is_record_id(std::string_view id) noexcept {
    if (id.empty() || id.size() > 64) return false;
    return std::all_of(id.begin(), id.end(), [](char c) {
        auto u = static_cast<unsigned char>(c);
        return u > 0x20 && u < 0x7f;
    });
}

void check_text(const json& doc, std::string_view name, validation_report& report) {
    std::string key(name);
    auto it = doc.find(key);
    if (it == doc.end()) {
        report.errors.push_back({key, "missing required field"});
    } else if (!it->is_string()) {
        report.errors.push_back({key, "must be a string"});
    } else {
        const auto& s = it->get_ref<const std::string&>();
        if (s.empty()) report.errors.push_back({key, "must not be empty"});
        else if (!is_valid_utf8(s)) report.errors.push_back({key, "must be valid UTF-8"});
    }
}

void check_hemodialysis(const json& payload, validation_report& report) {
    auto number = [&](std::string_view name) -> std::optional<double> {
        std::string path = "payload." + std::string(name);
        auto it = payload.find(std::string(name));
        if (it == payload.end()) {
            report.errors.push_back({path, "missing required field"});
            return std::nullopt;
        }
        if (!it->is_number()) {
            report.errors.push_back({path, "must be a number"});
            return std::nullopt;
        }
        return it->get<double>();
    };
    auto positive_int = [&](std::string_view name) {
        std::string path = "payload." + std::string(name);
        auto it = payload.find(std::string(name));
        if (it == payload.end()) {
            report.errors.push_back({path, "missing required field"});
        } else if (!it->is_number_integer()) {
            report.errors.push_back({path, "must be an integer"});
        } else if (it->get<long long>() <= 0) {
            report.errors.push_back({path, "must be > 0"});
        }
    };
    auto text = [&](std::string_view name, bool allow_empty) {
        std::string path = "payload." + std::string(name);
        auto it = payload.find(std::string(name));
        if (it == payload.end()) {
            report.errors.push_back({path, "missing required field"});
        } else if (!it->is_string() || !is_valid_utf8(it->get_ref<const std::string&>())) {
            report.errors.push_back({path, "must be a UTF-8 string"});
        } else if (!allow_empty && it->get_ref<const std::string&>().empty()) {
            report.errors.push_back({path, "must not be empty"});
        }
    };

    auto pre = number("pre_weight_kg");
    auto post = number("post_weight_kg");
    if (pre && (*pre < 0 || !std::isfinite(*pre))) report.errors.push_back({"payload.pre_weight_kg", "must be >= 0"});
    if (post && (*post < 0 || !std::isfinite(*post)))
        report.errors.push_back({"payload.post_weight_kg", "must be >= 0"});
    if (pre && post && *post > *pre + 0.5)
        report.errors.push_back({"payload.post_weight_kg", "exceeds pre_weight_kg + 0.5"});
    positive_int("systolic_mmHg");
    positive_int("diastolic_mmHg");
    positive_int("duration_min");
    text("dialyzer_model", false);
    text("notes", true);
    for (const auto& [key, _] : payload.items()) {
        if (std::find(hemodialysis_field_names.begin(), hemodialysis_field_names.end(), key) ==
            hemodialysis_field_names.end()) {
            report.errors.push_back({"payload." + key, "unknown hemodialysis field"});
        }
    }
}

}  // namespace

std::string_view to_string(ehr_type type) noexcept {
    switch (type) {
        case ehr_type::hemodialysis: return "hemodialysis";
        case ehr_type::lab_report: return "lab_report";
        case ehr_type::radiology_image: return "radiology_image";
        case ehr_type::transcription_report: return "transcription_report";
        case ehr_type::medication_history: return "medication_history";
    }
    return "hemodialysis";
}

std::optional<ehr_type> parse_ehr_type(std::string_view text) noexcept {
    for (auto t : all_ehr_types) {
        if (to_string(t) == text) return t;
    }
    return std::nullopt;
}

ehr_type ehr_type_from_string(std::string_view text) {
    auto t = parse_ehr_type(text);
    if (!t) throw error(error_kind::validation, "unknown EHR type", std::string(text));
    return *t;
}

bool patient_ref::is_valid_digest(std::string_view text) noexcept {
    return text.size() == 64 &&
           std::all_of(text.begin(), text.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

std::optional<patient_ref> patient_ref::from_digest(std::string_view digest) {
    if (!is_valid_digest(digest)) return std::nullopt;
    return patient_ref(std::string(digest));
}

patient_ref patient_ref::parse(std::string_view digest) {
    auto ref = from_digest(digest);
    if (!ref) throw error(error_kind::validation, "patient reference must be 64 lowercase hex characters");
    return *ref;
}

std::string normalize_national_id(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    for (char c : raw) {
        auto u = static_cast<unsigned char>(c);
        if (std::isspace(u) || c == '-') continue;
        out.push_back(static_cast<char>(std::toupper(u)));
    }
    return out;
}

patient_ref hash_patient_id(std::string_view raw_id, const crypto::secret_key& federation_key) {
    std::string normalized = normalize_national_id(raw_id);
    if (normalized.empty()) throw error(error_kind::validation, "national ID must not be empty");
    return patient_ref::parse(crypto::to_hex(crypto::hmac_sha256(federation_key, normalized)));
}

json to_json(const hemodialysis_payload& p) {
    return json{
        {"pre_weight_kg", p.pre_weight_kg},   {"post_weight_kg", p.post_weight_kg},
        {"systolic_mmHg", p.systolic_mmHg},   {"diastolic_mmHg", p.diastolic_mmHg},
        {"duration_min", p.duration_min},     {"dialyzer_model", p.dialyzer_model},
        {"notes", p.notes},
    };
}

hemodialysis_payload hemodialysis_from_json(const json& j) {
    hemodialysis_payload p;
    p.pre_weight_kg = j.at("pre_weight_kg").get<double>();
    p.post_weight_kg = j.at("post_weight_kg").get<double>();
    p.systolic_mmHg = j.at("systolic_mmHg").get<int>();
    p.diastolic_mmHg = j.at("diastolic_mmHg").get<int>();
    p.duration_min = j.at("duration_min").get<int>();
    p.dialyzer_model = j.at("dialyzer_model").get<std::string>();
    p.notes = j.value("notes", std::string{});
    return p;
}

bool validation_report::has_error_at(std::string_view path) const noexcept {
    return std::any_of(errors.begin(), errors.end(), [&](const field_error& e) { return e.path == path; });
}

std::string validation_report::summary() const {
    std::string out;
    for (const auto& e : errors) {
        if (!out.empty()) out += "; ";
        out += e.path + ": " + e.message;
    }
    return out;
}

validation_report validate_unified(const json& doc) {
    validation_report report;
    if (!doc.is_object()) {
        report.errors.push_back({"", "record must be a JSON object"});
        return report;
    }
    for (const auto& [key, _] : doc.items()) {
        if (std::find(unified_field_names.begin(), unified_field_names.end(), key) == unified_field_names.end()) {
            report.errors.push_back({key, "unknown field (not a unified field name)"});
        }
    }

    check_text(doc, field::hospital_id, report);
    if (auto it = doc.find(field::hospital_id); it != doc.end() && it->is_string() &&
                                                !it->get_ref<const std::string&>().empty() &&
                                                !is_valid_hospital_id(it->get_ref<const std::string&>())) {
        report.errors.push_back({std::string(field::hospital_id), "must be 1-16 characters of [A-Za-z0-9_-]"});
    }

    check_text(doc, field::ehr_id, report);
    if (auto it = doc.find(field::ehr_id);
        it != doc.end() && it->is_string() && !it->get_ref<const std::string&>().empty() &&
        !is_record_id(it->get_ref<const std::string&>())) {
        report.errors.push_back({std::string(field::ehr_id), "must be 1-64 printable ASCII characters"});
    }

    if (auto it = doc.find(field::patient_id); it == doc.end()) {
        report.errors.push_back({std::string(field::patient_id), "missing required field"});
    } else if (!it->is_string() || !patient_ref::is_valid_digest(it->get_ref<const std::string&>())) {
        report.errors.push_back({std::string(field::patient_id), "must match ^[0-9a-f]{64}$"});
    }

    check_text(doc, field::patient_name, report);
    check_text(doc, field::doctor_name, report);

    std::optional<ehr_type> type;
    if (auto it = doc.find(field::ehr_type); it == doc.end()) {
        report.errors.push_back({std::string(field::ehr_type), "missing required field"});
    } else if (!it->is_string() || !(type = parse_ehr_type(it->get_ref<const std::string&>()))) {
        report.errors.push_back({std::string(field::ehr_type), "unknown EHR type"});
    }

    if (auto it = doc.find(field::recorded_at); it == doc.end()) {
        report.errors.push_back({std::string(field::recorded_at), "missing required field"});
    } else if (!it->is_string() || !timestamp::parse_rfc3339(it->get_ref<const std::string&>())) {
        report.errors.push_back({std::string(field::recorded_at), "not a valid RFC 3339 timestamp"});
    }

    if (auto it = doc.find(field::language); it == doc.end()) {
        report.errors.push_back({std::string(field::language), "missing required field"});
    } else if (!it->is_string() || !is_language_tag(it->get_ref<const std::string&>())) {
        report.errors.push_back({std::string(field::language), "not a BCP-47 language tag"});
    }

    if (auto it = doc.find(field::shared); it == doc.end()) {
        report.errors.push_back({std::string(field::shared), "missing required field"});
    } else if (!it->is_boolean()) {
        report.errors.push_back({std::string(field::shared), "must be a boolean"});
    }

    if (auto it = doc.find(field::payload); it == doc.end()) {
        report.errors.push_back({std::string(field::payload), "missing required field"});
    } else if (!it->is_object()) {
        report.errors.push_back({std::string(field::payload), "must be an object"});
    } else if (type == ehr_type::hemodialysis) {
        check_hemodialysis(*it, report);
    }
    return report;
}

validation_report validate_unified(const unified_ehr& record) {
    json doc;
    try {
        doc = to_json(record);
    } catch (const json::exception& e) {
        return validation_report{{{"", e.what()}}};
    }
    return validate_unified(doc);
}

json to_json(const unified_ehr& r) {
    json doc = json::object();
    doc[std::string(field::hospital_id)] = r.hospital_id;
    doc[std::string(field::ehr_id)] = r.ehr_id;
    doc[std::string(field::patient_id)] = r.patient.digest();
    doc[std::string(field::patient_name)] = r.patient_name;
    doc[std::string(field::doctor_name)] = r.doctor_name;
    doc[std::string(field::ehr_type)] = std::string(to_string(r.type));
    doc[std::string(field::recorded_at)] = r.recorded_at.to_rfc3339();
    doc[std::string(field::language)] = r.language;
    doc[std::string(field::payload)] = r.payload;
    doc[std::string(field::shared)] = r.shared;
    return doc;
}

unified_ehr unified_from_json(const json& doc) {
    auto report = validate_unified(doc);
    if (!report.ok()) throw error(error_kind::validation, "invalid unified record", report.summary());
    unified_ehr r;
    r.hospital_id = doc.at(field::hospital_id).get<std::string>();
    r.ehr_id = doc.at(field::ehr_id).get<std::string>();
    r.patient = patient_ref::parse(doc.at(field::patient_id).get<std::string>());
    r.patient_name = doc.at(field::patient_name).get<std::string>();
    r.doctor_name = doc.at(field::doctor_name).get<std::string>();
    r.type = ehr_type_from_string(doc.at(field::ehr_type).get<std::string>());
    r.recorded_at = timestamp::parse(doc.at(field::recorded_at).get<std::string>(), "recorded_at");
    r.language = doc.at(field::language).get<std::string>();
    r.shared = doc.at(field::shared).get<bool>();
    const auto& payload = doc.at(field::payload);
    // Hemodialysis payloads are normalized through the struct so numbers serialize one way.
    r.payload = r.type == ehr_type::hemodialysis ? to_json(hemodialysis_from_json(payload)) : payload;
    return r;
}

std::string canonical_json(const json& value) {
    return value.dump(-1, ' ', false, json::error_handler_t::strict);
}

std::string canonical_serialize(const unified_ehr& record) {
    auto report = validate_unified(record);
    if (!report.ok()) throw error(error_kind::validation, "invalid unified record", report.summary());
    return canonical_json(to_json(record));
}

bool is_valid_utf8(std::string_view s) noexcept {
    std::size_t i = 0;
    while (i < s.size()) {
        auto c = static_cast<unsigned char>(s[i]);
        std::size_t len;
        std::uint32_t cp;
        if (c < 0x80) {
            ++i;
            continue;
        } else if ((c & 0xe0) == 0xc0) {
            len = 2;
            cp = c & 0x1f;
        } else if ((c & 0xf0) == 0xe0) {
            len = 3;
            cp = c & 0x0f;
        } else if ((c & 0xf8) == 0xf0) {
            len = 4;
            cp = c & 0x07;
        } else {
            return false;
        }
        if (i + len > s.size()) return false;
        for (std::size_t k = 1; k < len; ++k) {
            auto cc = static_cast<unsigned char>(s[i + k]);
            if ((cc & 0xc0) != 0x80) return false;
            cp = (cp << 6) | (cc & 0x3f);
        }
        // Overlong forms, surrogates, out of range.
        if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) || (len == 4 && cp < 0x10000) || cp > 0x10ffff ||
            (cp >= 0xd800 && cp <= 0xdfff))
            return false;
        i += len;
    }
    return true;
}

bool is_valid_hospital_id(std::string_view text) noexcept {
    if (text.empty() || text.size() > 16) return false;
    return std::all_of(text.begin(), text.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-';
    });
}

}  // namespace fedehr::core
