#pragma once

#include "fedehr/audit/audit_log.hpp"
#include "fedehr/auth/token.hpp"
#include "fedehr/core/model.hpp"
#include "fedehr/error.hpp"
#include "fedehr/index/patient_index.hpp"
#include "fedehr/legacy/adapter.hpp"

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

namespace fedehr::node {

using core::json;

inline constexpr std::chrono::seconds default_transfer_timeout{5};
inline constexpr std::size_t default_fanout_parallelism = 8;
inline constexpr std::int64_t default_sync_interval_seconds = 60;

/// Hospital-local unified record store: append-only file of canonical records, last write wins.
class record_store {
public:
    explicit record_store(std::optional<std::filesystem::path> file = std::nullopt, bool sync_writes = true);

    void put(const core::unified_ehr& record);
    /// One durable write for the whole batch.
    void put_batch(std::span<const core::unified_ehr> records);
    /// Throws fedehr::error(not_found).
    core::unified_ehr get(std::string_view hospital_id, std::string_view ehr_id) const;
    std::optional<core::unified_ehr> find(std::string_view hospital_id, std::string_view ehr_id) const;
    std::size_t size() const;

private:
    std::optional<std::filesystem::path> file_;
    bool sync_writes_;
    mutable std::shared_mutex mutex_;
    std::map<std::pair<std::string, std::string>, core::unified_ehr, std::less<>> records_;
};

struct transfer_request {
    std::string ehr_id;
    core::ehr_type type = core::ehr_type::hemodialysis;
};

json to_json(const transfer_request& request);
transfer_request transfer_request_from_json(const json& document);

struct transfer_outcome {
    core::unified_ehr record;
    std::uint64_t audit_event_id = 0;
};

struct sync_error {
    std::string record_key;
    std::string reason;
};

struct sync_report {
    timestamp started_at;
    timestamp finished_at;
    std::size_t extracted = 0;
    std::size_t converted = 0;
    std::size_t pushed = 0;
    std::size_t applied = 0;
    std::vector<sync_error> errors;
};

json to_json(const sync_report& report);
sync_report sync_report_from_json(const json& document);

struct fanout_failure {
    std::string hospital_id;
    std::string error_class;
    std::string message;
};

struct served_record {
    std::string hospital_id;
    std::string ehr_id;
    std::uint64_t audit_event_id = 0;
};

struct fanout_result {
    std::vector<core::unified_ehr> records;
    std::vector<fanout_failure> failures;
    /// Audit ids issued by the serving hospitals, one per record.
    std::vector<served_record> served;
};

json to_json(const fanout_result& result);
fanout_result fanout_result_from_json(const json& document);

/// Error class reported for a failed hospital in a fan-out.
std::string_view failure_class(error_kind kind) noexcept;

/// Destination of index entries produced by sync.
class index_sink {
public:
    virtual ~index_sink() = default;
    /// Returns the number of entries the index applied. Throws fedehr::error on failure.
    virtual std::size_t upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) = 0;
};

/// Fetches records from a remote hospital's transfer endpoint.
class peer_transport {
public:
    virtual ~peer_transport() = default;
    /// All requests go to `hospital_id`; throws fedehr::error (timeout, unavailable, ...)
    /// on the first failure. Must give up by `deadline`.
    virtual std::vector<transfer_outcome> fetch(const std::string& hospital_id,
                                                const std::vector<transfer_request>& requests,
                                                const std::string& doctor_token, const std::string& consent_token,
                                                std::chrono::steady_clock::time_point deadline) = 0;
};

/// Stages a sync run passes through; the fault hook may throw at any of them.
enum class sync_stage { extracted, converted, stored, pushed };

struct node_options {
    std::string hospital_id;
    std::filesystem::path state_dir;
    std::chrono::milliseconds transfer_timeout = default_transfer_timeout;
    std::size_t fanout_parallelism = default_fanout_parallelism;
    bool sync_writes = true;
};

/// One autonomous hospital: local store, transfer endpoint, sync agent and fan-out client.
class hospital_node {
public:
    hospital_node(node_options options, auth::auth_service auth, std::shared_ptr<legacy::mapping_registry> registry,
                  legacy::legacy_store store, crypto::secret_key federation_key, index_sink* sink,
                  peer_transport* peers, clock_fn clock = system_now);

    const std::string& hospital_id() const noexcept { return options_.hospital_id; }
    const node_options& options() const noexcept { return options_; }

    auth::issued_doctor_token login(std::string_view doctor_id, std::string_view secret,
                                    std::string_view hospital_id);
    auth::issued_consent_token grant_consent(std::string_view scan, std::string_view doctor_token,
                                             const auth::consent_scope& scope);

    /// Two-way gate, record lookup, consent/patient match, audit, then the record.
    transfer_outcome transfer(const transfer_request& request, const std::optional<std::string>& doctor_token,
                              const std::optional<std::string>& consent_token);

    /// Extract since the high-water mark, convert, store locally, publish to the index, and
    /// only then advance the mark. Concurrent calls do not overlap.
    sync_report sync_run(const timestamp& now);

    /// Groups rows by location; local rows come from this node, remote hospitals are fetched
    /// concurrently. A failed hospital contributes a failure entry and no records.
    fanout_result fanout_fetch(const std::vector<index::locate_row>& rows, const std::string& doctor_token,
                               const std::string& consent_token);

    std::vector<audit::audit_record> query_audit(std::string_view ehr_id, const timestamp& from, const timestamp& to,
                                                 const std::optional<std::string>& admin_token) const;

    std::optional<timestamp> high_water_mark() const;

    record_store& store() noexcept { return *records_; }
    audit::audit_log& log() noexcept { return *log_; }
    auth::auth_service& auth() noexcept { return auth_; }
    legacy::mapping_registry& registry() noexcept { return *registry_; }
    const legacy::legacy_store& legacy() const noexcept { return legacy_; }

    /// Test hook for crash injection between extract and high-water-mark persist.
    std::function<void(sync_stage)> sync_fault_hook;

private:
    void persist_high_water_mark(const timestamp& mark) const;
    std::filesystem::path high_water_mark_file() const;

    node_options options_;
    auth::auth_service auth_;
    std::shared_ptr<legacy::mapping_registry> registry_;
    legacy::legacy_store legacy_;
    legacy::legacy_adapter adapter_;
    std::unique_ptr<record_store> records_;
    std::unique_ptr<audit::audit_log> log_;
    index_sink* sink_;
    peer_transport* peers_;
    clock_fn clock_;
    std::mutex sync_mutex_;
};

/// In-process sink writing straight into an index_service.
class local_index_sink : public index_sink {
public:
    explicit local_index_sink(index::index_service& service) : service_(service) {}
    std::size_t upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) override;

private:
    index::index_service& service_;
};

}  // namespace fedehr::node
