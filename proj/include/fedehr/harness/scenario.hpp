#pragma once

#include "fedehr/harness/federation.hpp"

#include <string>
#include <vector>

namespace fedehr::harness {

/// One line of a see-doctor transcript. `step` follows the 17-step consultation flow.
struct transcript_step {
    int step = 0;
    std::string actor;
    std::string action;
    std::string outcome;
    double latency_ms = 0;
    json detail = json::object();
};

json to_json(const transcript_step& step);

struct scenario_request {
    std::string at_hospital;
    std::string doctor_id;
    std::string secret;
    /// What the patient presents at the card reader. Never copied into the transcript.
    std::string scan;
    timestamp from;
    timestamp to;
    std::vector<core::ehr_type> types;
    std::vector<std::string> hospitals;
};

struct scenario_result {
    std::vector<transcript_step> steps;
    core::patient_ref patient;
    index::locate_result located;
    node::fanout_result fetched;
    /// Every step ran; per-hospital fan-out failures still count as completed.
    bool completed = false;
    std::string failure;

    bool located_ok() const;
};

json to_json(const scenario_result& result);

/// Drives login, consent, locate and fan-out transfer against running services over HTTP.
scenario_result scenario_see_doctor(const service_map& services, const scenario_request& request);

/// Differences between a scenario's results and the manifest's brute-force answer; empty when
/// they agree. Rows from hospitals listed as failed are expected to be missing from the records.
std::vector<std::string> check_against_manifest(const manifest& m, const scenario_request& request,
                                                const scenario_result& result);

/// Deterministic scenario batch: patients in turn, random requesting hospital and date range.
std::vector<scenario_request> scripted_scenarios(const manifest& m, const secrets_file& secrets, std::size_t count,
                                                 std::uint64_t seed);

/// Runs the batch with up to `parallel` scenarios in flight; results keep request order.
std::vector<scenario_result> run_scenarios(const service_map& services, const std::vector<scenario_request>& requests,
                                           std::size_t parallel);

struct audit_failure {
    std::string server_id;
    std::string message;
};

struct federated_audit_result {
    std::vector<audit::audit_record> records;
    std::vector<audit_failure> failures;
};

json to_json(const federated_audit_result& result);

/// Queries every server's audit log for `ehr_id` and merges by time. Unreachable servers are
/// reported as failures; authorization errors are thrown.
federated_audit_result federated_audit(const service_map& services, std::string_view ehr_id, const timestamp& from,
                                       const timestamp& to, const std::string& admin_token);

std::string render_audit_table(const federated_audit_result& result);
std::string render_transcript(const scenario_result& result);

}  // namespace fedehr::harness
