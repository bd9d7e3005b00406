#include "fedehr/error.hpp"
#include "fedehr/harness/federation.hpp"
#include "fedehr/net/http.hpp"

#include "support.hpp"

#include <gtest/gtest.h>
#include <httplib.h>

namespace {

using namespace fedehr;
using namespace std::chrono_literals;

std::string json_body(const harness::manifest_record& r) {
    return node::to_json(node::transfer_request{r.ehr_id, r.type}).dump();
}

int closed_port() {
    support::silent_listener probe;
    return probe.port();
}

TEST(ErrorBody, RoundTripsEveryKind) {
    for (auto kind : {error_kind::validation, error_kind::unauthenticated, error_kind::forbidden, error_kind::not_found,
                      error_kind::conflict, error_kind::unavailable, error_kind::timeout, error_kind::storage,
                      error_kind::internal}) {
        error e(kind, "message", "detail");
        auto back = net::error_from_response(http_status(kind), net::error_body(e).dump());
        EXPECT_EQ(back.kind(), kind);
        EXPECT_STREQ(back.what(), "message");
        EXPECT_EQ(back.detail(), "detail");
    }
}

TEST(ErrorBody, FallsBackToTheStatus) {
    EXPECT_EQ(net::error_from_response(404, "").kind(), error_kind::not_found);
    EXPECT_EQ(net::error_from_response(403, "<html>").kind(), error_kind::forbidden);
    EXPECT_EQ(net::error_from_response(401, "{\"code\":7}").kind(), error_kind::unauthenticated);
}

class NetTest : public ::testing::Test {
protected:
    static inline std::unique_ptr<support::scratch_dir> dir;
    static inline std::unique_ptr<harness::federation> fed;
    static inline harness::manifest m;
    static inline harness::secrets_file secrets;

    static void SetUpTestSuite() {
        dir = std::make_unique<support::scratch_dir>("net");
        m = harness::seed(dir->path(), {5, 150, {"HC", "KW", "UH"}, 11, 0, 0.0});
        secrets = harness::load_secrets(dir->path() / "secrets.json");
        harness::launch_options opts;
        opts.sync_writes = false;
        opts.transfer_timeout = 1500ms;
        fed = std::make_unique<harness::federation>(harness::load_topology(dir->path() / "topology.json"), opts);
        fed->sync_all();
    }
    static void TearDownTestSuite() {
        fed.reset();
        dir.reset();
    }

    net::hospital_client hc() const { return net::hospital_client(fed->services().hospital("HC")); }
    std::string doctor() const {
        const auto& s = secrets.find("HC", auth::role::doctor);
        return hc().login(s.doctor_id, s.secret, "HC").token;
    }
    std::string consent(const std::string& doctor_token, std::size_t patient) const {
        return hc().consent(m.patients[patient].national_id, doctor_token,
                            {support::macau(2000, 1, 1), support::macau(2030, 1, 1), {}})
            .token;
    }
    const harness::manifest_record& record_of(std::size_t patient, const std::string& hospital) const {
        for (const auto& r : m.patients[patient].records) {
            if (r.hospital_id == hospital) return r;
        }
        throw std::runtime_error("fixture has no such record");
    }
    error_kind failure(const std::function<void()>& f) const {
        try {
            f();
        } catch (const error& e) {
            return e.kind();
        }
        return error_kind::internal;
    }
};

TEST_F(NetTest, TransferStatusCodesFollowTheGate) {
    auto at = fed->services().hospital("KW");
    const auto& rec = record_of(0, "KW");
    std::string body = json_body(rec);
    auto d = doctor();
    auto c = consent(d, 0);
    httplib::Client client(at.host, at.port);
    auto none = client.Post("/transfer", body, "application/json");
    ASSERT_TRUE(none);
    EXPECT_EQ(none->status, 401);
    EXPECT_EQ(core::json::parse(none->body).at("code"), "unauthenticated");

    auto doctor_only = client.Post("/transfer", {{"X-Doctor-Token", d}}, body, "application/json");
    ASSERT_TRUE(doctor_only);
    EXPECT_EQ(doctor_only->status, 403);

    auto both = client.Post("/transfer", {{"X-Doctor-Token", d}, {"X-Consent-Token", c}}, body, "application/json");
    ASSERT_TRUE(both);
    EXPECT_EQ(both->status, 200);
    auto record = core::unified_from_json(core::json::parse(both->body));
    EXPECT_EQ(record.ehr_id, rec.ehr_id);
    EXPECT_FALSE(both->get_header_value("X-Audit-Event-Id").empty());

    auto other = consent(d, 1);
    auto wrong = client.Post("/transfer", {{"X-Doctor-Token", d}, {"X-Consent-Token", other}}, body, "application/json");
    ASSERT_TRUE(wrong);
    EXPECT_EQ(wrong->status, 403);

    auto garbage = client.Post("/transfer", {{"X-Doctor-Token", d}, {"X-Consent-Token", c}}, "{", "application/json");
    ASSERT_TRUE(garbage);
    EXPECT_EQ(garbage->status, 400);
}

TEST_F(NetTest, ClientsRebuildTypedErrors) {
    const auto& rec = record_of(0, "HC");
    auto d = doctor();
    EXPECT_EQ(failure([&] { hc().transfer({rec.ehr_id, rec.type}, std::nullopt, std::nullopt); }),
              error_kind::unauthenticated);
    EXPECT_EQ(failure([&] { hc().transfer({rec.ehr_id, rec.type}, d, std::nullopt); }), error_kind::forbidden);
    EXPECT_EQ(failure([&] { hc().transfer({"9999", rec.type}, d, consent(d, 0)); }), error_kind::not_found);
    EXPECT_EQ(failure([&] { hc().login("nobody", "nothing", "HC"); }), error_kind::unauthenticated);
    auto out = hc().transfer({rec.ehr_id, rec.type}, d, consent(d, 0));
    EXPECT_EQ(out.record.ehr_id, rec.ehr_id);
    EXPECT_GT(out.audit_event_id, 0u);
}

TEST_F(NetTest, LocateOverHttpMatchesTheOracle) {
    net::index_client index(fed->services().index);
    EXPECT_TRUE(index.healthy());
    auto d = doctor();
    auto c = consent(d, 0);
    index::locate_query q;
    q.patient = m.patients[0].patient;
    q.date_from = support::macau(2000, 1, 1);
    q.date_to = support::macau(2030, 1, 1);
    auto r = index.locate(q, d, c);
    EXPECT_EQ(r.rows, harness::oracle_locate(m, q));
    EXPECT_TRUE(r.audit_event_id);
    EXPECT_EQ(failure([&] { index.locate(q, d, std::nullopt); }), error_kind::forbidden);
    EXPECT_EQ(failure([&] { index.locate(q, std::nullopt, c); }), error_kind::unauthenticated);
}

TEST_F(NetTest, FanoutAcrossHospitals) {
    auto d = doctor();
    auto c = consent(d, 0);
    index::locate_query q;
    q.patient = m.patients[0].patient;
    q.date_from = support::macau(2000, 1, 1);
    q.date_to = support::macau(2030, 1, 1);
    auto rows = harness::oracle_locate(m, q);
    auto r = hc().fanout(rows, d, c);
    EXPECT_TRUE(r.failures.empty());
    ASSERT_EQ(r.records.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(r.records[i].ehr_id, rows[i].ehr_id);
        EXPECT_EQ(r.records[i].hospital_id, rows[i].location);
    }
    EXPECT_EQ(failure([&] { hc().fanout(rows, d, ""); }), error_kind::forbidden);
}

TEST_F(NetTest, SyncAndAuditEndpoints) {
    auto report = hc().sync_run();
    EXPECT_TRUE(report.errors.empty());
    EXPECT_EQ(report.extracted, 0u);
    const auto& admin = secrets.find("HC", auth::role::admin);
    auto admin_token = hc().login(admin.doctor_id, admin.secret, "HC").token;
    const auto& rec = record_of(0, "UH");
    auto d = doctor();
    net::hospital_client uh(fed->services().hospital("UH"));
    uh.transfer({rec.ehr_id, rec.type}, d, consent(d, 0));
    auto page = uh.audit(rec.ehr_id, support::macau(2000, 1, 1), support::macau(2100, 1, 1), admin_token);
    EXPECT_EQ(page.server_id, "UH");
    ASSERT_FALSE(page.records.empty());
    EXPECT_EQ(page.records.back().what, audit::action::transfer);
    EXPECT_EQ(failure([&] { uh.audit(rec.ehr_id, support::macau(2000, 1, 1), support::macau(2100, 1, 1), d); }),
              error_kind::forbidden);
}

TEST(PeerTransport, SilentPeerTimesOutAtTheDeadline) {
    support::silent_listener silent;
    net::http_peer_transport peers({{"UH", {"127.0.0.1", silent.port()}}});
    auto start = std::chrono::steady_clock::now();
    try {
        peers.fetch("UH", {{"0001", core::ehr_type::hemodialysis}}, "d", "c", start + 1000ms);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.kind(), error_kind::timeout);
    }
    auto took = std::chrono::steady_clock::now() - start;
    EXPECT_GE(took, 900ms);
    EXPECT_LE(took, 2000ms);
}

TEST(PeerTransport, ClosedPortIsUnreachable) {
    net::http_peer_transport peers({{"UH", {"127.0.0.1", closed_port()}}});
    auto start = std::chrono::steady_clock::now();
    try {
        peers.fetch("UH", {{"0001", core::ehr_type::hemodialysis}}, "d", "c", start + 5000ms);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.kind(), error_kind::unavailable);
    }
    EXPECT_LE(std::chrono::steady_clock::now() - start, 1000ms);
    try {
        peers.fetch("ZZ", {}, "d", "c", start + 5000ms);
        FAIL();
    } catch (const error& e) {
        EXPECT_EQ(e.kind(), error_kind::unavailable);
    }
}

TEST(HealthCheck, ClosedPortIsNotHealthy) {
    EXPECT_FALSE(net::index_client({"127.0.0.1", closed_port()}).healthy());
}

}  // namespace
