#include "fedehr/harness/scenario.hpp"

#include "fedehr/error.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <set>
#include <sstream>
#include <thread>

namespace fedehr::harness {

namespace {

using steady = std::chrono::steady_clock;

double elapsed_ms(steady::time_point since) {
    return std::chrono::duration<double, std::milli>(steady::now() - since).count();
}

std::string failed(const error& e) { return "failed: " + std::string(to_string(e.kind())); }

json types_json(const std::vector<core::ehr_type>& types) {
    json out = json::array();
    for (auto t : types) out.push_back(core::to_string(t));
    return out;
}

std::string pad(std::string s, std::size_t width) {
    // Width counts code points so CJK names do not skew the columns too badly.
    std::size_t cps = 0;
    for (unsigned char c : s) cps += (c & 0xC0) != 0x80;
    if (cps < width) s.append(width - cps, ' ');
    return s;
}

}  // namespace

json to_json(const transcript_step& s) {
    return json{{"step", s.step},
                {"actor", s.actor},
                {"action", s.action},
                {"outcome", s.outcome},
                {"latency_ms", s.latency_ms},
                {"detail", s.detail}};
}

bool scenario_result::located_ok() const {
    return std::any_of(steps.begin(), steps.end(),
                       [](const transcript_step& s) { return s.step == 13 && s.outcome == "success"; });
}

json to_json(const scenario_result& r) {
    json steps = json::array();
    for (const auto& s : r.steps) steps.push_back(to_json(s));
    json rows = json::array();
    for (const auto& row : r.located.rows) rows.push_back(index::to_json(row));
    json records = json::array();
    for (const auto& rec : r.fetched.records) records.push_back({{"hospital_id", rec.hospital_id}, {"ehr_id", rec.ehr_id}});
    json failures = json::array();
    for (const auto& f : r.fetched.failures) {
        failures.push_back({{"hospital_id", f.hospital_id}, {"error_class", f.error_class}, {"message", f.message}});
    }
    json served = json::array();
    for (const auto& s : r.fetched.served) {
        served.push_back({{"hospital_id", s.hospital_id}, {"ehr_id", s.ehr_id}, {"audit_event_id", s.audit_event_id}});
    }
    return json{{"steps", steps},
                {"patient_ref", r.patient.empty() ? json(nullptr) : json(r.patient.digest())},
                {"rows", rows},
                {"records", records},
                {"failures", failures},
                {"served", served},
                {"locate_audit_event_id", r.located.audit_event_id ? json(*r.located.audit_event_id) : json(nullptr)},
                {"completed", r.completed},
                {"failure", r.failure}};
}

scenario_result scenario_see_doctor(const service_map& services, const scenario_request& req) {
    scenario_result out;
    const std::string& home = req.at_hospital;
    const std::string doctor = req.doctor_id;
    auto add = [&](int step, std::string actor, std::string action, std::string outcome, double ms = 0,
                   json detail = json::object()) {
        out.steps.push_back({step, std::move(actor), std::move(action), std::move(outcome), ms, std::move(detail)});
    };
    auto abort = [&](int step, const std::string& actor, const std::string& action, const error& e, double ms) {
        add(step, actor, action, failed(e), ms, json{{"message", e.what()}});
        out.failure = "step " + std::to_string(step) + ": " + e.what();
        return out;
    };

    net::hospital_client hospital(services.hospital(home));
    net::index_client index(services.index);

    // Steps 1-4: the doctor signs in at the working hospital.
    auto t = steady::now();
    net::login_response login;
    try {
        login = hospital.login(doctor, req.secret, home);
    } catch (const error& e) {
        return abort(1, doctor, "submit credentials to " + home, e, elapsed_ms(t));
    }
    add(1, doctor, "submit credentials to " + home, "success", elapsed_ms(t));
    add(2, home + "/auth", "verify credentials", "success", 0, json{{"role", auth::to_string(login.doctor_role)}});
    add(3, home + "/auth", "issue doctor token", "success", 0, json{{"expires_at", login.expires_at.to_rfc3339()}});
    add(4, doctor, "session opened", "success");

    // Step 5: query intent.
    add(5, doctor, "state query intent", "success", 0,
        json{{"from", req.from.to_rfc3339()},
             {"to", req.to.to_rfc3339()},
             {"types", types_json(req.types)},
             {"hospitals", req.hospitals}});

    // Steps 6-10: consent by card scan.
    add(6, doctor, "request patient consent", "success");
    add(7, "patient", "scan identity card", "success");
    t = steady::now();
    net::consent_response consent;
    try {
        consent = hospital.consent(req.scan, login.token, {req.from, req.to, req.types});
    } catch (const error& e) {
        return abort(8, home + "/auth", "hash identity and bind consent", e, elapsed_ms(t));
    }
    out.patient = consent.patient;
    add(8, home + "/auth", "hash identity and bind consent", "success", elapsed_ms(t),
        json{{"patient_ref", consent.patient.digest()}});
    add(9, home + "/auth", "issue consent token", "success", 0, json{{"expires_at", consent.expires_at.to_rfc3339()}});
    add(10, doctor, "consent attached to session", "success");

    // Steps 11-13: locate at the index.
    index::locate_query query;
    query.patient = consent.patient;
    query.date_from = req.from;
    query.date_to = req.to;
    query.types = req.types;
    query.hospitals = req.hospitals;
    t = steady::now();
    try {
        out.located = index.locate_all(query, login.token, consent.token);
    } catch (const error& e) {
        return abort(11, home, "locate at index", e, elapsed_ms(t));
    }
    add(11, home, "locate at index", "success", elapsed_ms(t));
    add(12, "index", "audit locate", "success", 0,
        json{{"audit_event_id", out.located.audit_event_id ? json(*out.located.audit_event_id) : json(nullptr)}});
    std::vector<std::string> locations;
    for (const auto& row : out.located.rows) {
        if (std::find(locations.begin(), locations.end(), row.location) == locations.end())
            locations.push_back(row.location);
    }
    std::sort(locations.begin(), locations.end());
    add(13, "index", "return record locations", "success", 0,
        json{{"rows", out.located.rows.size()}, {"locations", locations}});

    // Steps 14-16: transfers, run in parallel by the requesting hospital.
    double fanout_ms = 0;
    if (!out.located.rows.empty()) {
        t = steady::now();
        try {
            out.fetched = hospital.fanout(out.located.rows, login.token, consent.token);
        } catch (const error& e) {
            return abort(14, home, "fan out transfers", e, elapsed_ms(t));
        }
        fanout_ms = elapsed_ms(t);
        std::map<std::string, std::size_t> wanted;
        for (const auto& row : out.located.rows) ++wanted[row.location];
        std::map<std::string, std::vector<std::uint64_t>> audit_ids;
        for (const auto& s : out.fetched.served) audit_ids[s.hospital_id].push_back(s.audit_event_id);
        std::map<std::string, const node::fanout_failure*> failures;
        for (const auto& f : out.fetched.failures) failures[f.hospital_id] = &f;

        for (const auto& loc : locations) {
            if (loc != home) add(14, home, "request transfer from " + loc, "success", 0, json{{"records", wanted[loc]}});
        }
        for (const auto& loc : locations) {
            if (auto f = failures.find(loc); f != failures.end()) {
                add(15, loc, "audit and serve records", "failed: " + f->second->error_class, 0,
                    json{{"message", f->second->message}});
            } else {
                add(15, loc, "audit and serve records", "success", 0, json{{"audit_ids", audit_ids[loc]}});
            }
        }
        for (const auto& loc : locations) {
            bool ok = !failures.contains(loc);
            add(16, loc, "return records to " + home, ok ? "success" : "failed: " + failures[loc]->error_class, 0,
                json{{"records", ok ? audit_ids[loc].size() : 0}});
        }
    }

    json failed_hospitals = json::array();
    for (const auto& f : out.fetched.failures) failed_hospitals.push_back(f.hospital_id);
    add(17, doctor, "display records", out.fetched.failures.empty() ? "success" : "partial", fanout_ms,
        json{{"records", out.fetched.records.size()}, {"failed_hospitals", failed_hospitals}});
    out.completed = true;
    return out;
}

std::vector<std::string> check_against_manifest(const manifest& m, const scenario_request& req,
                                                const scenario_result& r) {
    std::vector<std::string> problems;
    if (!r.completed) {
        problems.push_back("scenario did not complete: " + r.failure);
        return problems;
    }
    index::locate_query q;
    q.patient = r.patient;
    q.date_from = req.from;
    q.date_to = req.to;
    q.types = req.types;
    q.hospitals = req.hospitals;
    auto expected = oracle_locate(m, q);
    if (expected != r.located.rows) {
        problems.push_back("locate returned " + std::to_string(r.located.rows.size()) + " rows, oracle expects " +
                           std::to_string(expected.size()));
    }
    std::set<std::string> failed;
    for (const auto& f : r.fetched.failures) failed.insert(f.hospital_id);
    std::set<std::pair<std::string, std::string>> want;
    for (const auto& row : expected) {
        if (!failed.contains(row.location)) want.insert({row.location, row.ehr_id});
    }
    std::set<std::pair<std::string, std::string>> got;
    for (const auto& rec : r.fetched.records) {
        got.insert({rec.hospital_id, rec.ehr_id});
        if (rec.patient != r.patient) problems.push_back("record " + rec.hospital_id + "/" + rec.ehr_id + " is another patient's");
    }
    std::size_t missing = 0;
    std::size_t extra = 0;
    for (const auto& k : want) missing += !got.contains(k);
    for (const auto& k : got) extra += !want.contains(k);
    if (missing != 0 || extra != 0 || got.size() != r.fetched.records.size()) {
        problems.push_back("records: " + std::to_string(missing) + " missing, " + std::to_string(extra) + " extra");
    }
    return problems;
}

std::vector<scenario_request> scripted_scenarios(const manifest& m, const secrets_file& secrets, std::size_t count,
                                                 std::uint64_t seed) {
    fixture_rng rng(seed);
    const std::int64_t lo = make_timestamp(2010, 1, 1, 0, 0, 0, 8 * 60)->utc_seconds / 86400;
    const std::int64_t hi = make_timestamp(2016, 12, 31, 0, 0, 0, 8 * 60)->utc_seconds / 86400;
    std::vector<scenario_request> out;
    for (std::size_t i = 0; i < count; ++i) {
        const auto& p = m.patients[i % m.patients.size()];
        scenario_request r;
        r.at_hospital = m.hospitals[rng.below(m.hospitals.size())];
        const auto& login = secrets.find(r.at_hospital, auth::role::doctor);
        r.doctor_id = login.doctor_id;
        r.secret = login.secret;
        r.scan = p.national_id;
        std::int64_t a = rng.between(lo, hi);
        std::int64_t b = rng.between(lo, hi);
        if (b < a) std::swap(a, b);
        r.from = timestamp::from_utc_seconds(a * 86400, 8 * 60);
        r.to = timestamp::from_utc_seconds(b * 86400 + 86399, 8 * 60);
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<scenario_result> run_scenarios(const service_map& services, const std::vector<scenario_request>& requests,
                                           std::size_t parallel) {
    std::vector<scenario_result> results(requests.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next++) < requests.size();) results[i] = scenario_see_doctor(services, requests[i]);
    };
    std::size_t n = std::clamp<std::size_t>(parallel, 1, std::max<std::size_t>(1, requests.size()));
    std::vector<std::thread> threads;
    for (std::size_t k = 1; k < n; ++k) threads.emplace_back(worker);
    worker();
    for (auto& th : threads) th.join();
    return results;
}

json to_json(const federated_audit_result& r) {
    json records = json::array();
    for (const auto& rec : r.records) records.push_back(audit::to_json(rec));
    json failures = json::array();
    for (const auto& f : r.failures) failures.push_back({{"server_id", f.server_id}, {"message", f.message}});
    return json{{"records", records}, {"failures", failures}};
}

federated_audit_result federated_audit(const service_map& services, std::string_view ehr_id, const timestamp& from,
                                       const timestamp& to, const std::string& admin_token) {
    federated_audit_result out;
    std::vector<std::vector<audit::audit_record>> pages;
    auto collect = [&](const std::string& name, auto&& fetch) {
        try {
            pages.push_back(fetch().records);
        } catch (const error& e) {
            if (e.kind() != error_kind::unavailable && e.kind() != error_kind::timeout) throw;
            out.failures.push_back({name, e.what()});
        }
    };
    collect("index", [&] { return net::index_client(services.index).audit(ehr_id, from, to, admin_token); });
    for (const auto& [id, at] : services.hospitals) {
        collect(id, [&] { return net::hospital_client(at).audit(ehr_id, from, to, admin_token); });
    }
    out.records = audit::merge_by_time(std::move(pages));
    return out;
}

std::string render_audit_table(const federated_audit_result& r) {
    std::ostringstream os;
    os << pad("occurred_at", 26) << pad("server", 8) << pad("event", 8) << pad("action", 17) << pad("outcome", 9)
       << pad("doctor", 14) << pad("from", 6) << pad("ehr_id", 8) << "detail\n";
    for (const auto& rec : r.records) {
        os << pad(rec.occurred_at.to_rfc3339(), 26) << pad(rec.server_id, 8) << pad(std::to_string(rec.event_id), 8)
           << pad(std::string(audit::to_string(rec.what)), 17) << pad(std::string(audit::to_string(rec.result)), 9)
           << pad(rec.actor_doctor, 14) << pad(rec.actor_hospital, 6) << pad(rec.ehr_id.value_or("-"), 8)
           << rec.detail << '\n';
    }
    os << r.records.size() << " record(s)";
    for (const auto& f : r.failures) os << "\nunreachable: " << f.server_id << " (" << f.message << ")";
    os << '\n';
    return os.str();
}

std::string render_transcript(const scenario_result& r) {
    std::ostringstream os;
    for (const auto& s : r.steps) {
        char ms[32];
        std::snprintf(ms, sizeof ms, "%9.2f", s.latency_ms);
        os << pad(std::to_string(s.step), 4) << pad(s.actor, 22) << pad(s.action, 36) << pad(s.outcome, 18) << ms
           << " ms  " << s.detail.dump() << '\n';
    }
    return os.str();
}

}  // namespace fedehr::harness
