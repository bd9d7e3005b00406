// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include "fedehr/error.hpp"
#include "fedehr/harness/scenario.hpp"

#include "support.hpp"

#include <httplib.h>

#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

namespace {

using namespace fedehr;
using namespace std::chrono_literals;
namespace fs = std::filesystem;
using steady = std::chrono::steady_clock;

constexpr double scale_limit_seconds = 300.0;
constexpr double fanout_limit_seconds = 6.0;
constexpr auto remote_timeout = 5s;
constexpr std::size_t scale_ranges_per_patient = 5;
constexpr std::size_t audit_scenarios = 100;
constexpr std::size_t oracle_queries = 1000;

double seconds_since(steady::time_point t) { return std::chrono::duration<double>(steady::now() - t).count(); }

struct outcome {
    bool pass = false;
    std::string measured;
};

/// Seeded fixture shared by the criteria; each criterion runs on its own copy.
class fixture {
public:
    fixture(const support::scratch_dir& root, const std::string& name, const harness::seed_options& options)
        : dir_(root / name) {
        auto t = steady::now();
        manifest_ = harness::seed(dir_, options);
        seed_seconds_ = seconds_since(t);
    }
    const harness::manifest& manifest() const { return manifest_; }
    double seed_seconds() const { return seed_seconds_; }

    /// Fresh copy of the seeded files; the returned directory holds topology.json.
    fs::path copy(const std::string& name) const {
        fs::path to = dir_.parent_path() / name;
        fs::remove_all(to);
        fs::copy(dir_, to, fs::copy_options::recursive);
        return to;
    }

private:
    fs::path dir_;
    harness::manifest manifest_;
    double seed_seconds_ = 0;
};

std::unique_ptr<harness::federation> launch(const fs::path& dir, std::chrono::milliseconds transfer_timeout = 5s) {
    harness::launch_options opts;
    opts.transfer_timeout = transfer_timeout;
    return std::make_unique<harness::federation>(harness::load_topology(dir / "topology.json"), opts);
}

bool sync_clean(harness::federation& fed, std::string& why) {
    for (const auto& [h, report] : fed.sync_all()) {
        if (!report.errors.empty()) {
            why = h + " sync: " + report.errors.front().reason;
            return false;
        }
    }
    return true;
}

std::string login(const harness::service_map& services, const harness::secrets_file& secrets,
                  const std::string& hospital, auth::role r) {
    const auto& s = secrets.find(hospital, r);
    return net::hospital_client(services.hospital(hospital)).login(s.doctor_id, s.secret, hospital).token;
}

outcome scale_reproduction(const fixture& fx) {
    auto dir = fx.copy("scale");
    auto t = steady::now();
    auto fed = launch(dir);
    std::string why;
    if (!sync_clean(*fed, why)) return {false, why};
    const auto& m = fx.manifest();
    auto secrets = harness::load_secrets(dir / "secrets.json");
    auto requests = harness::scripted_scenarios(m, secrets, m.patients.size() * scale_ranges_per_patient, 2015);
    auto results = harness::run_scenarios(fed->services(), requests, 8);
    std::size_t mismatched = 0;
    std::size_t records = 0;
    std::string first;
    for (std::size_t i = 0; i < requests.size(); ++i) {
        auto problems = harness::check_against_manifest(m, requests[i], results[i]);
        if (!results[i].fetched.failures.empty()) problems.push_back("unexpected fan-out failure");
        if (!problems.empty()) {
            if (mismatched++ == 0) first = "; first: scenario " + std::to_string(i) + " " + problems.front();
        }
        records += results[i].fetched.records.size();
    }
    double total = fx.seed_seconds() + seconds_since(t);
    std::ostringstream out;
    out << requests.size() << " scenarios over " << m.patients.size() << " patients, " << records
        << " records transferred, " << mismatched << " mismatched, " << total << " s incl. seeding (limit "
        << scale_limit_seconds << " s)" << first;
    return {mismatched == 0 && total <= scale_limit_seconds, out.str()};
}

outcome conversion_count(const fixture& fx) {
    std::size_t wrong = 0;
    for (std::uint64_t n = 0; n <= 100; ++n) {
        wrong += legacy::conversion_count(n, legacy::conversion_mode::pairwise) != n * (n == 0 ? 0 : n - 1);
        wrong += legacy::conversion_count(n, legacy::conversion_mode::unified) != n;
    }
    auto dir = fx.copy("conversion");
    auto fed = launch(dir);
    auto mappings = fed->registry().size();
    auto plan = legacy::pairwise_plan(fed->topo().hospital_ids()).size();
    std::ostringstream out;
    out << wrong << " wrong counts for n in [0,100]; registry holds " << mappings << " mappings, pairwise plan needs "
        << plan;
    return {wrong == 0 && mappings == 3 && plan == 6, out.str()};
}

outcome index_privacy(const fixture& fx) {
    auto dir = fx.copy("privacy");
    auto fed = launch(dir);
    std::string why;
    if (!sync_clean(*fed, why)) return {false, why};
    const auto& m = fx.manifest();
    // Flush the index's state by shutting it down before scanning.
    auto state = fed->topo().index.state_dir;
    auto entries = fed->index().index().size();
    fed.reset();

    std::vector<std::string> needles = m.raw_id_spellings;
    for (const auto& p : m.patients) needles.push_back(p.name);
    std::size_t hits = 0;
    std::size_t bytes = 0;
    std::size_t files = 0;
    for (const auto& f : fs::recursive_directory_iterator(state)) {
        if (!f.is_regular_file()) continue;
        ++files;
        auto text = support::slurp(f.path());
        bytes += text.size();
        for (const auto& n : needles) {
            for (auto at = text.find(n); at != std::string::npos; at = text.find(n, at + 1)) ++hits;
        }
    }
    std::ostringstream out;
    out << hits << " occurrences of " << needles.size() << " raw IDs and names in " << files << " files, " << bytes
        << " bytes, " << entries << " index entries";
    return {hits == 0 && entries == m.record_count() && bytes > 0, out.str()};
}

outcome two_way_authentication(const fixture& fx) {
    auto dir = fx.copy("two-way");
    auto fed = launch(dir);
    std::string why;
    if (!sync_clean(*fed, why)) return {false, why};
    const auto& m = fx.manifest();
    auto secrets = harness::load_secrets(dir / "secrets.json");
    auto services = fed->services();
    net::hospital_client hc(services.hospital("HC"));
    auto doctor = login(services, secrets, "HC", auth::role::doctor);
    auth::consent_scope all{support::macau(2000, 1, 1), support::macau(2030, 1, 1), {}};
    auto consent = hc.consent(m.patients[0].national_id, doctor, all).token;
    auto other = hc.consent(m.patients[1].national_id, doctor, all).token;

    const harness::manifest_record* target = nullptr;
    for (const auto& r : m.patients[0].records) {
        if (r.hospital_id == "KW") target = &r;
    }
    if (target == nullptr) return {false, "patient 0 has no KW record"};
    auto at = services.hospital("KW");
    httplib::Client client(at.host, at.port);
    auto body = node::to_json(node::transfer_request{target->ehr_id, target->type}).dump();
    auto status = [&](httplib::Headers h) {
        auto r = client.Post("/transfer", h, body, "application/json");
        return r ? r->status : -1;
    };
    int none = status({});
    int doctor_only = status({{"X-Doctor-Token", doctor}});
    int both = status({{"X-Doctor-Token", doctor}, {"X-Consent-Token", consent}});
    int wrong_patient = status({{"X-Doctor-Token", doctor}, {"X-Consent-Token", other}});
    std::ostringstream out;
    out << "no doctor " << none << ", doctor only " << doctor_only << ", both " << both << ", other patient's consent "
        << wrong_patient;
    return {none == 401 && doctor_only == 403 && both == 200 && wrong_patient == 403, out.str()};
}

std::size_t count_success(const audit::audit_log& log, audit::action what) {
    std::size_t n = 0;
    for (const auto& r : log.all()) n += r.what == what && r.result == audit::outcome::success;
    return n;
}

outcome audit_completeness(const fixture& fx) {
    auto dir = fx.copy("audit");
    auto fed = launch(dir);
    std::string why;
    if (!sync_clean(*fed, why)) return {false, why};
    const auto& m = fx.manifest();
    auto secrets = harness::load_secrets(dir / "secrets.json");
    auto services = fed->services();
    auto hospitals = fed->topo().hospital_ids();

    auto requests = harness::scripted_scenarios(m, secrets, audit_scenarios, 221);
    // The first scenario reads patient 0's whole history, which includes the tracked record.
    requests[0].from = support::macau(2000, 1, 1);
    requests[0].to = support::macau(2030, 1, 1);

    std::size_t locates_before = count_success(fed->index().log(), audit::action::locate);
    std::map<std::string, std::size_t> transfers_before;
    for (const auto& h : hospitals) transfers_before[h] = count_success(fed->hospital(h).node().log(), audit::action::transfer);

    auto window_from = system_now().plus_seconds(-1);
    auto results = harness::run_scenarios(services, requests, 4);
    auto window_to = system_now().plus_seconds(1);

    std::size_t transcript_locates = 0;
    std::map<std::string, std::size_t> transcript_transfers;
    std::set<std::pair<std::string, std::uint64_t>> transcript_0221;
    for (const auto& r : results) {
        for (const auto& s : r.steps) transcript_locates += s.step == 11 && s.outcome == "success";
        for (const auto& s : r.fetched.served) {
            ++transcript_transfers[s.hospital_id];
            if (s.ehr_id == "0221") transcript_0221.insert({s.hospital_id, s.audit_event_id});
        }
    }

    std::ostringstream out;
    bool ok = true;
    std::size_t logged_locates = count_success(fed->index().log(), audit::action::locate) - locates_before;
    out << "locate: transcript " << transcript_locates << " / index log " << logged_locates;
    ok &= transcript_locates == logged_locates && transcript_locates == requests.size();
    for (const auto& h : hospitals) {
        std::size_t logged = count_success(fed->hospital(h).node().log(), audit::action::transfer) - transfers_before[h];
        out << "; " << h << " transfer: transcript " << transcript_transfers[h] << " / log " << logged;
        ok &= logged == transcript_transfers[h];
    }

    auto admin = login(services, secrets, "HC", auth::role::admin);
    auto trail = harness::federated_audit(services, "0221", window_from, window_to, admin);
    std::set<std::pair<std::string, std::uint64_t>> audited;
    for (const auto& r : trail.records) audited.insert({r.server_id, r.event_id});
    out << "; 0221 accesses: transcript " << transcript_0221.size() << " / audit " << audited.size();
    ok &= trail.failures.empty() && !transcript_0221.empty() && audited == transcript_0221;

    std::vector<fs::path> logs = {fed->index().log().file()};
    for (const auto& h : hospitals) logs.push_back(fed->hospital(h).node().log().file());
    fed.reset();
    std::size_t chained = 0;
    for (const auto& f : logs) {
        auto check = audit::verify_chain(f);
        if (!check.ok) {
            ok = false;
            out << "; chain broken in " << f.filename() << " at line " << check.bad_line << ": " << check.reason;
        }
        chained += check.records;
    }
    out << "; " << logs.size() << " chains verified over " << chained << " records";
    return {ok, out.str()};
}

outcome sync_recovery(const fixture& fx) {
    const auto& m = fx.manifest();
    index::patient_index oracle;
    oracle.upsert(m.expected_entries());
    std::string expected = oracle.fingerprint();

    std::ostringstream out;
    bool ok = true;
    std::string clean;
    {
        auto fed = launch(fx.copy("sync-clean"));
        std::string why;
        if (!sync_clean(*fed, why)) return {false, why};
        clean = fed->index().index().fingerprint();
        std::size_t applied = 0;
        for (const auto& [_, r] : fed->sync_all()) applied += r.applied + r.extracted;
        bool unchanged = fed->index().index().fingerprint() == clean;
        out << "second run applied " << applied << (unchanged ? ", fingerprint unchanged" : ", fingerprint CHANGED");
        ok &= applied == 0 && unchanged && clean == expected;
        out << "; clean run " << (clean == expected ? "matches" : "DIFFERS FROM") << " manifest fingerprint "
            << expected.substr(0, 12);
    }

    const std::vector<std::pair<node::sync_stage, std::string>> stages = {{node::sync_stage::extracted, "extracted"},
                                                                          {node::sync_stage::converted, "converted"},
                                                                          {node::sync_stage::stored, "stored"},
                                                                          {node::sync_stage::pushed, "pushed"}};
    for (const auto& [stage, name] : stages) {
        auto dir = fx.copy("sync-crash-" + name);
        std::size_t crashed = 0;
        {
            auto fed = launch(dir);
            for (const auto& h : fed->topo().hospital_ids()) {
                auto& n = fed->hospital(h).node();
                n.sync_fault_hook = [stage = stage](node::sync_stage s) {
                    if (s == stage) throw std::runtime_error("injected crash");
                };
                try {
                    n.sync_run(system_now());
                } catch (const std::runtime_error&) {
                    ++crashed;
                }
                if (n.high_water_mark()) ok = false;
            }
        }
        auto fed = launch(dir);
        std::string why;
        if (!sync_clean(*fed, why)) return {false, why};
        bool same = fed->index().index().fingerprint() == clean;
        out << "; crash after " << name << " (" << crashed << " nodes) " << (same ? "converged" : "DIVERGED");
        ok &= same && crashed == fed->topo().hospitals.size();
    }
    return {ok, out.str()};
}

outcome partial_failure_fanout(const fixture& fx) {
    auto dir = fx.copy("fanout");
    auto fed = launch(dir, remote_timeout);
    std::string why;
    if (!sync_clean(*fed, why)) return {false, why};
    const auto& m = fx.manifest();
    auto secrets = harness::load_secrets(dir / "secrets.json");
    const auto& login_secret = secrets.find("HC", auth::role::doctor);
    harness::scenario_request req{"HC", login_secret.doctor_id, login_secret.secret, m.patients[0].national_id,
                                  support::macau(2000, 1, 1), support::macau(2030, 1, 1), {}, {}};

    std::map<std::string, std::size_t> expected;
    for (const auto& r : m.patients[0].records) ++expected[r.hospital_id];

    fed->stop_hospital("UH");
    auto stopped = harness::scenario_see_doctor(fed->services(), req);
    auto problems = harness::check_against_manifest(m, req, stopped);
    std::map<std::string, std::size_t> got;
    for (const auto& r : stopped.fetched.records) ++got[r.hospital_id];
    bool stopped_ok = stopped.completed && problems.empty() && stopped.fetched.failures.size() == 1 &&
                      stopped.fetched.failures[0].hospital_id == "UH" && got["HC"] == expected["HC"] &&
                      got["KW"] == expected["KW"] && got["UH"] == 0;
    std::ostringstream out;
    out << "UH stopped: " << stopped.fetched.failures.size() << " failure entries ("
        << (stopped.fetched.failures.empty() ? "" : stopped.fetched.failures[0].hospital_id + " " +
                                                          stopped.fetched.failures[0].error_class)
        << "), HC " << got["HC"] << "/" << expected["HC"] << ", KW " << got["KW"] << "/" << expected["KW"];

    support::silent_listener silent;
    fed->redirect_peer("UH", {"127.0.0.1", silent.port()});
    auto services = fed->services();
    net::hospital_client hc(services.hospital("HC"));
    auto doctor = hc.login(login_secret.doctor_id, login_secret.secret, "HC").token;
    auto consent = hc.consent(req.scan, doctor, {req.from, req.to, {}}).token;
    index::locate_query q;
    q.patient = m.patients[0].patient;
    q.date_from = req.from;
    q.date_to = req.to;
    auto rows = net::index_client(services.index).locate_all(q, doctor, consent).rows;
    auto t = steady::now();
    auto hung = hc.fanout(rows, doctor, consent);
    double took = seconds_since(t);
    std::size_t kw = 0;
    for (const auto& r : hung.records) kw += r.hospital_id == "KW";
    bool timed_ok = hung.failures.size() == 1 && hung.failures[0].hospital_id == "UH" &&
                    hung.failures[0].error_class == "timeout" && kw == expected["KW"] && took <= fanout_limit_seconds;
    out << "; UH silent: " << took << " s for KW+UH fan-out (limit " << fanout_limit_seconds << " s), UH class "
        << (hung.failures.empty() ? "none" : hung.failures[0].error_class) << ", KW " << kw << "/" << expected["KW"];
    return {stopped_ok && timed_ok, out.str()};
}

outcome locate_oracle(const support::scratch_dir& root) {
    fixture mixed(root, "mixed", {100, 10000, {"HC", "KW", "UH"}, 7, 0, 0.4});
    auto fed = launch(mixed.copy("mixed-run"));
    std::string why;
    if (!sync_clean(*fed, why)) return {false, why};
    const auto& m = mixed.manifest();
    auto& ix = fed->index().index();
    harness::fixture_rng rng(1000);
    const std::vector<std::string> hospitals = {"HC", "KW", "UH", "ZZ"};
    const std::int64_t lo = support::macau(2009, 1, 1).utc_seconds;
    const std::int64_t hi = support::macau(2017, 6, 1).utc_seconds;
    std::size_t mismatched = 0;
    std::size_t rows = 0;
    std::size_t empty = 0;
    for (std::size_t i = 0; i < oracle_queries; ++i) {
        index::locate_query q;
        q.patient = m.patients[rng.below(m.patients.size())].patient;
        std::int64_t a = rng.between(lo, hi);
        std::int64_t b = rng.between(lo, hi);
        if (b < a) std::swap(a, b);
        q.date_from = timestamp::from_utc_seconds(a, rng.chance(0.5) ? 480 : 0);
        q.date_to = timestamp::from_utc_seconds(b, 480);
        for (auto t : core::all_ehr_types) {
            if (rng.chance(0.3)) q.types.push_back(t);
        }
        for (const auto& h : hospitals) {
            if (rng.chance(0.25)) q.hospitals.push_back(h);
        }
        std::vector<index::locate_row> got;
        for (;;) {
            auto page = ix.locate_unchecked(q);
            got.insert(got.end(), page.rows.begin(), page.rows.end());
            if (!page.next_cursor) break;
            q.cursor = page.next_cursor;
        }
        q.cursor.reset();
        mismatched += got != harness::oracle_locate(m, q);
        rows += got.size();
        empty += got.empty();
    }
    std::ostringstream out;
    out << oracle_queries << " queries, " << mismatched << " differ from the brute-force scan (" << rows
        << " rows total, " << empty << " empty results)";
    return {mismatched == 0 && rows > 0, out.str()};
}

}  // namespace

int main() {
    support::scratch_dir root("acceptance");
    std::cout << "seeding 100 patients / 10000 records at HC, KW, UH" << std::endl;
    std::unique_ptr<fixture> base;
    try {
        base = std::make_unique<fixture>(root, "base", harness::seed_options{100, 10000, {"HC", "KW", "UH"}, 42, 0, 0.0});
    } catch (const std::exception& e) {
        std::cout << "FAIL fixture: " << e.what() << std::endl;
        return 1;
    }

    const std::vector<std::pair<std::string, std::function<outcome()>>> criteria = {
        {"scale-reproduction", [&] { return scale_reproduction(*base); }},
        {"conversion-count", [&] { return conversion_count(*base); }},
        {"index-privacy", [&] { return index_privacy(*base); }},
        {"two-way-authentication", [&] { return two_way_authentication(*base); }},
        {"audit-completeness", [&] { return audit_completeness(*base); }},
        {"sync-idempotence-crash-recovery", [&] { return sync_recovery(*base); }},
        {"partial-failure-fanout", [&] { return partial_failure_fanout(*base); }},
        {"locate-oracle-equivalence", [&] { return locate_oracle(root); }},
    };

    int failed = 0;
    for (const auto& [name, run] : criteria) {
        auto t = steady::now();
        outcome o;
        try {
            o = run();
        } catch (const error& e) {
            o = {false, std::string("error: ") + e.what() + (e.detail().empty() ? "" : " (" + e.detail() + ")")};
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        char elapsed[32];
        std::snprintf(elapsed, sizeof elapsed, "%.1f s", seconds_since(t));
        std::cout << (o.pass ? "PASS " : "FAIL ") << name << " [" << elapsed << "]: " << o.measured << std::endl;
    }
    std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
    return failed == 0 ? 0 : 1;
}
