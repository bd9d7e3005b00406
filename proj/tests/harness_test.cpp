#include "fedehr/error.hpp"
#include "fedehr/harness/scenario.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <set>

namespace {

using namespace fedehr;
using namespace std::chrono_literals;

TEST(Seed, SameSeedGivesIdenticalBytes) {
    support::scratch_dir a("seed"), b("seed"), c("seed");
    harness::seed_options opts{8, 300, {"HC", "KW", "UH"}, 99, 0, 0.2};
    harness::seed(a.path(), opts);
    harness::seed(b.path(), opts);
    EXPECT_EQ(harness::directory_fingerprint(a.path()), harness::directory_fingerprint(b.path()));
    opts.rng_seed = 100;
    harness::seed(c.path(), opts);
    EXPECT_NE(harness::directory_fingerprint(a.path()), harness::directory_fingerprint(c.path()));
}

TEST(Seed, CountsAndShape) {
    support::scratch_dir dir("seed");
    auto m = harness::seed(dir.path(), {10, 900, {"HC", "KW", "UH"}, 42, 0, 0.0});
    EXPECT_EQ(m.patients.size(), 10u);
    EXPECT_EQ(m.record_count(), 900u);
    EXPECT_EQ(m.expected_entries().size(), 900u);
    EXPECT_EQ(m.patients[0].national_id, "M1234567");
    EXPECT_EQ(m.patients[0].name, "Yang Yingying");
    std::set<std::string> at;
    for (const auto& r : m.patients[0].records) at.insert(r.hospital_id);
    EXPECT_EQ(at, (std::set<std::string>{"HC", "KW", "UH"}));
    bool pinned = false;
    for (const auto& r : m.patients[0].records) {
        if (r.hospital_id == "KW" && r.ehr_id == "0221") {
            pinned = true;
            EXPECT_EQ(r.recorded_at, support::macau(2015, 9, 30, 10, 30));
        }
    }
    EXPECT_TRUE(pinned);

    auto loaded = harness::load_manifest(dir / "manifest.json");
    EXPECT_EQ(loaded.record_count(), 900u);
    EXPECT_EQ(loaded.expected_entries(), m.expected_entries());

    std::size_t rows = 0;
    auto topo = harness::load_topology(dir / "topology.json");
    for (const auto& h : topo.hospitals) rows += legacy::legacy_store(h.legacy_store, h.id).read_all().size();
    EXPECT_EQ(rows, 900u);
}

TEST(Seed, SingleHospitalMinimum) {
    support::scratch_dir dir("seed");
    auto m = harness::seed(dir.path(), {1, 1, {"HC"}, 1, 0, 0.0});
    EXPECT_EQ(m.record_count(), 1u);
    EXPECT_EQ(m.hospitals, std::vector<std::string>{"HC"});
}

TEST(Seed, RejectsBadCounts) {
    support::scratch_dir dir("seed");
    EXPECT_THROW(harness::seed(dir.path(), {0, 10, {"HC"}, 1, 0, 0.0}), error);
    EXPECT_THROW(harness::seed(dir.path(), {10, 5, {"HC"}, 1, 0, 0.0}), error);
    EXPECT_THROW(harness::seed(dir.path(), {1, 1, {}, 1, 0, 0.0}), error);
}

TEST(Seed, TypeMixProducesEveryType) {
    support::scratch_dir dir("seed");
    auto m = harness::seed(dir.path(), {10, 1000, {"HC", "KW", "UH"}, 3, 0, 0.5});
    std::set<core::ehr_type> seen;
    for (const auto& e : m.expected_entries()) seen.insert(e.type);
    EXPECT_EQ(seen.size(), 5u);
}

TEST(Topology, SaveAndLoadRoundTrip) {
    support::scratch_dir dir("topo");
    harness::seed(dir.path(), {2, 20, {"HC", "KW"}, 5, 18500, 0.0});
    auto topo = harness::load_topology(dir / "topology.json");
    EXPECT_EQ(topo.index.port, 18500);
    EXPECT_EQ(topo.hospital("KW").port, 18502);
    EXPECT_EQ(topo.hospital_ids(), (std::vector<std::string>{"HC", "KW"}));
    harness::save_topology(dir / "copy.json", topo);
    auto again = harness::load_topology(dir / "copy.json");
    EXPECT_EQ(again.hospital("HC").legacy_store, topo.hospital("HC").legacy_store);
    EXPECT_EQ(again.index.state_dir, topo.index.state_dir);
    EXPECT_THROW(topo.hospital("ZZ"), error);
}

TEST(Oracle, MatchesAFilterOverTheManifest) {
    support::scratch_dir dir("oracle");
    auto m = harness::seed(dir.path(), {4, 200, {"HC", "KW", "UH"}, 8, 0, 0.4});
    index::locate_query q;
    q.patient = m.patients[2].patient;
    q.date_from = support::macau(2012, 1, 1);
    q.date_to = support::macau(2015, 12, 31);
    q.types = {core::ehr_type::hemodialysis, core::ehr_type::lab_report};
    std::size_t expected = 0;
    for (const auto& r : m.patients[2].records) {
        expected += r.recorded_at.utc_seconds >= q.date_from.utc_seconds &&
                    r.recorded_at.utc_seconds <= q.date_to.utc_seconds &&
                    (r.type == core::ehr_type::hemodialysis || r.type == core::ehr_type::lab_report);
    }
    auto rows = harness::oracle_locate(m, q);
    EXPECT_EQ(rows.size(), expected);
    EXPECT_TRUE(std::is_sorted(rows.begin(), rows.end(), index::row_before));
}

class ScenarioTest : public ::testing::Test {
protected:
    static inline std::unique_ptr<support::scratch_dir> dir;
    static inline harness::manifest m;
    static inline harness::secrets_file secrets;
    std::unique_ptr<harness::federation> fed;

    static void SetUpTestSuite() {
        dir = std::make_unique<support::scratch_dir>("scenario");
        m = harness::seed(dir->path(), {6, 900, {"HC", "KW", "UH"}, 21, 0, 0.0});
        secrets = harness::load_secrets(dir->path() / "secrets.json");
    }
    static void TearDownTestSuite() { dir.reset(); }

    void SetUp() override {
        harness::launch_options opts;
        opts.sync_writes = false;
        opts.transfer_timeout = 1500ms;
        fed = std::make_unique<harness::federation>(harness::load_topology(dir->path() / "topology.json"), opts);
        fed->sync_all();
    }

    harness::scenario_request yang_at_hc() const {
        const auto& login = secrets.find("HC", auth::role::doctor);
        return {"HC", login.doctor_id, login.secret, "M1234567",
                support::macau(2000, 1, 1), support::macau(2030, 1, 1), {}, {}};
    }
};

TEST_F(ScenarioTest, SeeDoctorMatchesTheOracle) {
    auto req = yang_at_hc();
    auto r = harness::scenario_see_doctor(fed->services(), req);
    EXPECT_TRUE(r.completed) << r.failure;
    EXPECT_EQ(r.patient, m.patients[0].patient);
    EXPECT_TRUE(r.located_ok());
    EXPECT_TRUE(r.fetched.failures.empty());
    EXPECT_EQ(r.fetched.records.size(), m.patients[0].records.size());
    EXPECT_TRUE(harness::check_against_manifest(m, req, r).empty());
    auto text = harness::render_transcript(r);
    EXPECT_EQ(text.find("M1234567"), std::string::npos);
    EXPECT_EQ(harness::to_json(r).dump().find("M1234567"), std::string::npos);
    std::set<int> steps;
    for (const auto& s : r.steps) steps.insert(s.step);
    EXPECT_TRUE(steps.contains(1));
    EXPECT_TRUE(steps.contains(17));
}

TEST_F(ScenarioTest, BadCredentialsStopAtLogin) {
    auto req = yang_at_hc();
    req.secret = "wrong";
    auto r = harness::scenario_see_doctor(fed->services(), req);
    EXPECT_FALSE(r.completed);
    EXPECT_FALSE(r.located_ok());
    EXPECT_TRUE(r.fetched.records.empty());
}

TEST_F(ScenarioTest, StoppedHospitalGivesAPartialResult) {
    fed->stop_hospital("UH");
    auto req = yang_at_hc();
    auto r = harness::scenario_see_doctor(fed->services(), req);
    EXPECT_TRUE(r.completed) << r.failure;
    ASSERT_EQ(r.fetched.failures.size(), 1u);
    EXPECT_EQ(r.fetched.failures[0].hospital_id, "UH");
    EXPECT_EQ(r.fetched.failures[0].error_class, "unreachable");
    for (const auto& rec : r.fetched.records) EXPECT_NE(rec.hospital_id, "UH");
    EXPECT_TRUE(harness::check_against_manifest(m, req, r).empty());
}

TEST_F(ScenarioTest, ScriptedBatchAgreesWithTheOracle) {
    auto reqs = harness::scripted_scenarios(m, secrets, 12, 5);
    EXPECT_EQ(reqs.size(), 12u);
    auto again = harness::scripted_scenarios(m, secrets, 12, 5);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        EXPECT_EQ(reqs[i].at_hospital, again[i].at_hospital);
        EXPECT_EQ(reqs[i].from, again[i].from);
    }
    auto results = harness::run_scenarios(fed->services(), reqs, 4);
    for (std::size_t i = 0; i < reqs.size(); ++i) {
        EXPECT_TRUE(results[i].completed) << i << ": " << results[i].failure;
        auto problems = harness::check_against_manifest(m, reqs[i], results[i]);
        EXPECT_TRUE(problems.empty()) << i << ": " << problems.front();
    }
}

TEST_F(ScenarioTest, FederatedAuditReportsADownServer) {
    auto req = yang_at_hc();
    harness::scenario_see_doctor(fed->services(), req);
    const auto& admin = secrets.find("HC", auth::role::admin);
    auto token = net::hospital_client(fed->services().hospital("HC")).login(admin.doctor_id, admin.secret, "HC").token;
    auto window_from = support::macau(2000, 1, 1);
    auto window_to = support::macau(2100, 1, 1);
    auto full = harness::federated_audit(fed->services(), "0221", window_from, window_to, token);
    EXPECT_TRUE(full.failures.empty());
    std::size_t at_kw = 0;
    for (const auto& r : full.records) {
        EXPECT_EQ(r.ehr_id, "0221");
        at_kw += r.server_id == "KW" && r.what == audit::action::transfer;
    }
    EXPECT_GE(at_kw, 1u);
    EXPECT_NE(harness::render_audit_table(full).find("0221"), std::string::npos);

    fed->stop_hospital("UH");
    auto partial = harness::federated_audit(fed->services(), "0221", window_from, window_to, token);
    ASSERT_EQ(partial.failures.size(), 1u);
    EXPECT_EQ(partial.failures[0].server_id, "UH");
    std::vector<audit::audit_record> without_uh;
    for (const auto& r : full.records) {
        if (r.server_id != "UH") without_uh.push_back(r);
    }
    EXPECT_EQ(partial.records, without_uh);

    auto doctor = net::hospital_client(fed->services().hospital("HC"))
                      .login(req.doctor_id, req.secret, "HC")
                      .token;
    EXPECT_THROW(harness::federated_audit(fed->services(), "0221", window_from, window_to, doctor), error);
}

}  // namespace
