#pragma once

#include "fedehr/core/model.hpp"
#include "fedehr/timestamp.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

namespace fedehr::audit {

using core::json;

enum class action { login, consent_granted, locate, transfer, denied };
enum class outcome { success, denied, error };

std::string_view to_string(action a) noexcept;
std::string_view to_string(outcome o) noexcept;
std::optional<action> parse_action(std::string_view text) noexcept;
std::optional<outcome> parse_outcome(std::string_view text) noexcept;

/// Patients appear only as patient_ref; names and raw IDs never enter the log.
struct audit_record {
    std::uint64_t event_id = 0;
    timestamp occurred_at;
    std::string server_id;
    std::string actor_doctor;
    std::string actor_hospital;
    action what = action::locate;
    std::optional<std::string> ehr_id;
    std::optional<core::patient_ref> patient;
    outcome result = outcome::success;
    std::string detail;

    friend bool operator==(const audit_record&, const audit_record&) = default;
};

json to_json(const audit_record& record);
audit_record audit_record_from_json(const json& document);

/// Digest carried by the first line in place of a predecessor.
inline const std::string genesis_digest(64, '0');

struct chain_check {
    bool ok = true;
    std::size_t records = 0;
    /// 1-based line of the first inconsistency.
    std::size_t bad_line = 0;
    std::string reason;
};

/// Re-reads a log file and checks every prev_digest link and the event_id sequence.
chain_check verify_chain(const std::filesystem::path& file);

/// Append-only, hash-chained audit log for one server: one canonical JSON record per line,
/// each line carrying the SHA-256 of the line before it. There is no update or delete.
class audit_log {
public:
    /// Opens (creating if needed) and replays the existing file. Throws storage on a broken chain.
    audit_log(std::filesystem::path file, std::string server_id, clock_fn clock = system_now,
              bool sync_writes = true);
    ~audit_log();
    audit_log(const audit_log&) = delete;
    audit_log& operator=(const audit_log&) = delete;

    /// Assigns event_id, occurred_at and server_id, then writes durably before returning.
    /// Throws fedehr::error(storage) if the write fails; the caller must then fail closed.
    std::uint64_t append(audit_record record);

    /// Records for `ehr_id` with occurred_at in [from, to], ascending by occurred_at then event_id.
    std::vector<audit_record> query(std::string_view ehr_id, const timestamp& from, const timestamp& to) const;
    std::vector<audit_record> all() const;
    std::size_t size() const;

    const std::string& server_id() const noexcept { return server_id_; }
    const std::filesystem::path& file() const noexcept { return file_; }

    /// Test hook: makes subsequent appends fail as if the disk were gone.
    void simulate_storage_failure(bool on) noexcept { fail_writes_ = on; }

private:
    std::filesystem::path file_;
    std::string server_id_;
    clock_fn clock_;
    bool sync_writes_;
    int fd_ = -1;
    std::atomic<bool> fail_writes_{false};

    mutable std::shared_mutex mutex_;
    std::vector<audit_record> records_;
    std::string last_digest_ = genesis_digest;
};

/// Merges per-server result lists by (occurred_at, server_id, event_id).
std::vector<audit_record> merge_by_time(std::vector<std::vector<audit_record>> per_server);

}  // namespace fedehr::audit
