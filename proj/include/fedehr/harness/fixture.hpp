#pragma once

#include "fedehr/auth/token.hpp"
#include "fedehr/core/model.hpp"
#include "fedehr/index/patient_index.hpp"
#include "fedehr/legacy/adapter.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace fedehr::harness {

using core::json;
namespace fs = std::filesystem;

struct index_config {
    std::string id = "PI";
    std::string host = "127.0.0.1";
    int port = 0;
    fs::path state_dir;
};

struct hospital_config {
    std::string id;
    std::string host = "127.0.0.1";
    int port = 0;
    fs::path signing_key_file;
    fs::path legacy_store;
    fs::path mapping;
    fs::path credentials;
    fs::path state_dir;
};

/// One index server and the hospital nodes, with key material and fixture paths.
struct topology {
    fs::path federation_key_file;
    index_config index;
    std::vector<hospital_config> hospitals;
    std::int64_t sync_interval_seconds = 60;
    /// Directory relative paths were resolved against.
    fs::path base_dir;

    const hospital_config& hospital(std::string_view id) const;
    std::vector<std::string> hospital_ids() const;
};

/// Relative paths in the file are resolved against the file's directory.
topology load_topology(const fs::path& file);
void save_topology(const fs::path& file, const topology& topo);

crypto::secret_key load_key_file(const fs::path& file);
/// Every hospital's signing key, for verification at any service.
auth::key_ring load_key_ring(const topology& topo);

/// Plaintext fixture logins, kept apart from the hashed credential tables.
struct login_secret {
    std::string doctor_id;
    std::string secret;
    auth::role doctor_role = auth::role::doctor;
};

struct secrets_file {
    std::map<std::string, std::vector<login_secret>> by_hospital;

    /// First login with `r` at `hospital`; throws not_found.
    const login_secret& find(std::string_view hospital, auth::role r) const;
    const login_secret& find_doctor(std::string_view hospital, std::string_view doctor_id) const;
};

secrets_file load_secrets(const fs::path& file);

struct manifest_record {
    std::string hospital_id;
    std::string ehr_id;
    core::ehr_type type = core::ehr_type::hemodialysis;
    timestamp recorded_at;
};

struct manifest_patient {
    std::size_t number = 0;
    /// Canonical national ID; stores hold per-hospital spellings of it.
    std::string national_id;
    std::string name;
    core::patient_ref patient;
    std::vector<manifest_record> records;
};

/// Expected-results side of a seeded fixture, used by oracles.
struct manifest {
    std::uint64_t rng_seed = 0;
    std::vector<std::string> hospitals;
    std::vector<manifest_patient> patients;
    /// Every spelling of every national ID written to a legacy store.
    std::vector<std::string> raw_id_spellings;

    std::size_t record_count() const;
    /// Index entries the fixture should produce after a full sync.
    std::vector<index::index_entry> expected_entries() const;
    const manifest_patient* find_by_ref(const core::patient_ref& ref) const;
};

manifest load_manifest(const fs::path& file);

struct seed_options {
    std::size_t patients = 100;
    std::size_t records = 10000;
    std::vector<std::string> hospitals{"HC", "KW", "UH"};
    std::uint64_t rng_seed = 42;
    /// Port of the index server; hospitals take the following ports. 0 leaves every port ephemeral.
    int base_port = 0;
    /// Share of records drawn from the non-hemodialysis types.
    double type_mix = 0.0;
};

/// Writes a deterministic fixture: topology.json, keys/, legacy/, mappings/, credentials/,
/// secrets.json and manifest.json. Throws validation on bad counts.
manifest seed(const fs::path& out_dir, const seed_options& options);

/// The mapping the seeder registers for a hospital's native column names.
legacy::field_mapping native_mapping(std::string_view hospital_id);

/// SHA-256 over sorted (relative path, contents) of every regular file under `dir`.
std::string directory_fingerprint(const fs::path& dir);

/// Brute-force locate over the manifest with the index's filter and sort.
std::vector<index::locate_row> oracle_locate(const manifest& m, const index::locate_query& query);

/// Deterministic generator with its own bounded sampling, so output does not depend on the
/// standard library's distribution implementations.
class fixture_rng {
public:
    explicit fixture_rng(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t below(std::uint64_t bound);
    std::int64_t between(std::int64_t lo, std::int64_t hi);
    double unit();
    bool chance(double p) { return unit() < p; }

private:
    std::mt19937_64 engine_;
};

}  // namespace fedehr::harness
