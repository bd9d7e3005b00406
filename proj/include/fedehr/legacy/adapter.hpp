#pragma once

#include "fedehr/core/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

namespace fedehr::legacy {

using core::json;

/// Unified fields every hospital mapping must produce.
inline constexpr std::array<std::string_view, 6> required_unified_fields = {
    "patient_id", "ehr_id", "patient_name", "doctor_name", "recorded_at", "ehr_type",
};

/// Legacy date layouts understood by the `recorded_at` coercion.
namespace date_format {
inline constexpr std::string_view iso_minutes = "yyyy-MM-dd HH:mm";
inline constexpr std::string_view dmy_minutes = "dd/MM/yyyy HH:mm";
inline constexpr std::string_view epoch_seconds = "epoch_seconds";
inline constexpr std::string_view rfc3339 = "rfc3339";
}  // namespace date_format

struct mapping_entry {
    std::string legacy;
    std::string unified;
    friend bool operator==(const mapping_entry&, const mapping_entry&) = default;
};

/// Converts the value of one unified field; `field` names the unified side.
struct type_coercion {
    std::string field;
    std::string from;
    std::string to;
    friend bool operator==(const type_coercion&, const type_coercion&) = default;
};

struct field_mapping {
    std::string hospital_id;
    std::vector<mapping_entry> entries;
    std::vector<type_coercion> type_coercions;
    /// Offset applied to legacy wall-clock dates; Macau local time by default.
    int utc_offset_minutes = 8 * 60;

    friend bool operator==(const field_mapping&, const field_mapping&) = default;
};

/// Throws fedehr::error(validation) naming the first violated invariant.
void validate_mapping(const field_mapping& mapping);
bool is_unified_target(std::string_view name) noexcept;

json to_json(const field_mapping& mapping);
field_mapping mapping_from_json(const json& document);
field_mapping load_mapping_file(const std::filesystem::path& path);
void save_mapping_file(const std::filesystem::path& path, const field_mapping& mapping);

/// Thread-safe registry of per-hospital mappings. Lookups are shared; replacement is atomic.
class mapping_registry {
public:
    using handle = std::shared_ptr<const field_mapping>;

    handle register_mapping(field_mapping mapping);
    handle find(std::string_view hospital_id) const;
    std::size_t size() const;
    std::vector<std::string> hospitals() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, handle, std::less<>> mappings_;
};

using flat_document = std::map<std::string, std::string>;

/// One row of a legacy hospital store, still in the hospital's native column names.
struct legacy_record {
    std::string hospital_id;
    flat_document document;
    timestamp modified_at;
    std::uint64_t version = 1;
    bool shared = true;

    friend bool operator==(const legacy_record&, const legacy_record&) = default;
};

json to_json(const legacy_record& record);
legacy_record legacy_record_from_json(const json& line, std::string_view hospital_id);

/// Applies the legacy→unified rename. Fields without a mapping entry are kept under their own name.
flat_document rename_to_unified(const flat_document& document, const field_mapping& mapping);
/// Inverse rename, unified→legacy.
flat_document rename_to_legacy(const flat_document& document, const field_mapping& mapping);

/// Simulated legacy database: one JSON document per line. Re-read on every extract so external
/// edits are observed.
class legacy_store {
public:
    legacy_store(std::filesystem::path path, std::string hospital_id);

    const std::filesystem::path& path() const noexcept { return path_; }
    const std::string& hospital_id() const noexcept { return hospital_id_; }

    /// All rows in file order. Throws fedehr::error(storage) when unreadable or corrupt.
    std::vector<legacy_record> read_all() const;
    void write_all(const std::vector<legacy_record>& records) const;

private:
    std::filesystem::path path_;
    std::string hospital_id_;
};

/// Shared rows with modified_at strictly after `since`, ascending by modified_at (file order on ties).
std::vector<legacy_record> extract(const legacy_store& store, const timestamp& since);

/// Converts legacy rows to the unified format, hashing the identity value on the way.
class legacy_adapter {
public:
    legacy_adapter(const mapping_registry& registry, crypto::secret_key federation_key)
        : registry_(registry), federation_key_(std::move(federation_key)) {}

    core::unified_ehr convert(const legacy_record& record) const;

private:
    const mapping_registry& registry_;
    crypto::secret_key federation_key_;
};

/// Parses a legacy date value per `format`, interpreting wall-clock layouts at `offset_minutes`.
std::optional<timestamp> parse_legacy_date(std::string_view value, std::string_view format, int offset_minutes);
std::string format_legacy_date(const timestamp& ts, std::string_view format);

enum class conversion_mode { pairwise, unified };

/// pairwise → n(n−1) directed converters; unified → n converters to the common format.
std::uint64_t conversion_count(std::uint64_t hospitals, conversion_mode mode);

/// The directed converter plan needed without a common format: every ordered (from, to) pair.
std::vector<std::pair<std::string, std::string>> pairwise_plan(const std::vector<std::string>& hospitals);

}  // namespace fedehr::legacy
