#pragma once

#include "fedehr/audit/audit_log.hpp"
#include "fedehr/auth/token.hpp"
#include "fedehr/core/model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fedehr::index {

using core::json;

/// Privacy-safe reference to one shared record. Carries exactly four tags beyond the key
/// (location, encoded patient number, date-time, type) and nothing that names the patient.
struct index_entry {
    core::patient_ref patient;
    std::string ehr_id;
    core::ehr_type type = core::ehr_type::hemodialysis;
    timestamp recorded_at;
    std::string location;
    std::uint64_t sync_version = 0;

    friend bool operator==(const index_entry&, const index_entry&) = default;
};

json to_json(const index_entry& entry);
/// Rejects unknown fields, so names and payloads cannot slip into the index.
index_entry index_entry_from_json(const json& document);

struct locate_query {
    core::patient_ref patient;
    timestamp date_from;
    timestamp date_to;
    /// Empty means every type.
    std::vector<core::ehr_type> types;
    /// Empty means every hospital.
    std::vector<std::string> hospitals;
    std::optional<std::string> cursor;
};

json to_json(const locate_query& query);
/// Throws fedehr::error(validation) on missing fields, bad timestamps or date_from > date_to.
locate_query locate_query_from_json(const json& document);
void validate_query(const locate_query& query);

struct locate_row {
    std::string ehr_id;
    core::ehr_type type = core::ehr_type::hemodialysis;
    timestamp recorded_at;
    std::string location;

    friend bool operator==(const locate_row&, const locate_row&) = default;
};

struct locate_result {
    std::vector<locate_row> rows;
    std::optional<std::string> next_cursor;
    std::optional<std::uint64_t> audit_event_id;
};

json to_json(const locate_row& row);
locate_row locate_row_from_json(const json& document);
json to_json(const locate_result& result);
locate_result locate_result_from_json(const json& document);

/// Newest first; ties by (location, ehr_id) ascending.
bool row_before(const locate_row& a, const locate_row& b) noexcept;
bool entry_matches(const index_entry& entry, const locate_query& query);
locate_row project(const index_entry& entry);

inline constexpr std::size_t default_page_size = 1000;

/// In-memory patient index keyed by patient_ref, persisted as an append-only change log of
/// applied upserts and rebuilt from it on start.
class patient_index {
public:
    explicit patient_index(std::optional<std::filesystem::path> change_log = std::nullopt, bool sync_writes = true);

    /// Validates every entry, then applies: insert when the key is new, replace when the stored
    /// sync_version is lower, otherwise no-op. Returns the number applied.
    std::size_t upsert(std::span<const index_entry> entries);

    /// Filter and sort without any token checks. Pages of `page_size` rows.
    locate_result locate_unchecked(const locate_query& query) const;

    std::size_t size() const;
    /// Every entry, ordered by (location, ehr_id).
    std::vector<index_entry> entries() const;
    /// SHA-256 over the canonical serialization of entries().
    std::string fingerprint() const;

    std::size_t page_size = default_page_size;

private:
    using key = std::pair<std::string, std::string>;  // (location, ehr_id)

    std::size_t apply_locked(const index_entry& entry);

    std::optional<std::filesystem::path> change_log_;
    bool sync_writes_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, std::map<key, index_entry>> by_patient_;
    std::map<key, std::string> patient_of_;
};

/// Locate and sync endpoints of the data-center index server, with the two-way gate and audit.
class index_service {
public:
    index_service(std::string server_id, patient_index& index, audit::audit_log& log, auth::key_ring keys,
                  clock_fn clock = system_now);

    /// Verifies both tokens, checks the consent matches and covers the query, runs it, and
    /// appends the audit record before returning.
    locate_result locate(const locate_query& query, const std::optional<std::string>& doctor_token,
                         const std::optional<std::string>& consent_token);

    /// Only a node token from the hospital that owns every entry is accepted.
    std::size_t upsert_entries(std::span<const index_entry> entries, const std::optional<std::string>& node_token);

    std::vector<audit::audit_record> query_audit(std::string_view ehr_id, const timestamp& from, const timestamp& to,
                                                 const std::optional<std::string>& admin_token) const;

    const std::string& server_id() const noexcept { return server_id_; }
    patient_index& index() noexcept { return index_; }
    audit::audit_log& log() noexcept { return log_; }
    timestamp now() const { return clock_(); }

private:
    std::string server_id_;
    patient_index& index_;
    audit::audit_log& log_;
    auth::key_ring keys_;
    clock_fn clock_;
};

}  // namespace fedehr::index
