#include "fedehr/node/hospital_node.hpp"

#include "fedehr/error.hpp"

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <thread>

#include <fcntl.h>
#include <unistd.h>

namespace fedehr::node {

namespace {

void write_durably(const std::filesystem::path& file, const std::string& text, bool append, bool sync) {
    int flags = O_WRONLY | O_CREAT | O_CLOEXEC | (append ? O_APPEND : O_TRUNC);
    int fd = ::open(file.c_str(), flags, 0640);
    if (fd < 0) throw error(error_kind::storage, "cannot open " + file.filename().string(), std::strerror(errno));
    const char* p = text.data();
    std::size_t left = text.size();
    while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            throw error(error_kind::storage, "write failed: " + file.filename().string(), std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (sync && ::fdatasync(fd) != 0) {
        ::close(fd);
        throw error(error_kind::storage, "sync failed: " + file.filename().string(), std::strerror(errno));
    }
    ::close(fd);
}

std::string legacy_key(const legacy::legacy_record& r, const legacy::mapping_registry& registry) {
    if (auto m = registry.find(r.hospital_id)) {
        for (const auto& e : m->entries) {
            if (e.unified == core::field::ehr_id) {
                if (auto it = r.document.find(e.legacy); it != r.document.end()) return r.hospital_id + "/" + it->second;
            }
        }
    }
    return r.hospital_id + "/?";
}

}  // namespace

record_store::record_store(std::optional<std::filesystem::path> file, bool sync_writes)
    : file_(std::move(file)), sync_writes_(sync_writes) {
    if (!file_) return;
    if (file_->has_parent_path()) std::filesystem::create_directories(file_->parent_path());
    std::ifstream in(*file_, std::ios::binary);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto r = core::unified_from_json(json::parse(line));
        auto key = std::make_pair(r.hospital_id, r.ehr_id);
        records_.insert_or_assign(std::move(key), std::move(r));
    }
}

void record_store::put(const core::unified_ehr& record) { put_batch(std::span(&record, 1)); }

void record_store::put_batch(std::span<const core::unified_ehr> records) {
    std::string text;
    for (const auto& r : records) text += core::canonical_serialize(r) + '\n';
    std::unique_lock lock(mutex_);
    if (file_ && !text.empty()) write_durably(*file_, text, true, sync_writes_);
    for (const auto& r : records) records_.insert_or_assign(std::make_pair(r.hospital_id, r.ehr_id), r);
}

std::optional<core::unified_ehr> record_store::find(std::string_view hospital_id, std::string_view ehr_id) const {
    std::shared_lock lock(mutex_);
    auto it = records_.find(std::make_pair(std::string(hospital_id), std::string(ehr_id)));
    if (it == records_.end()) return std::nullopt;
    return it->second;
}

core::unified_ehr record_store::get(std::string_view hospital_id, std::string_view ehr_id) const {
    auto r = find(hospital_id, ehr_id);
    if (!r) throw error(error_kind::not_found, "no such record", std::string(hospital_id) + "/" + std::string(ehr_id));
    return *r;
}

std::size_t record_store::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

json to_json(const transfer_request& r) { return json{{"ehr_id", r.ehr_id}, {"ehr_type", core::to_string(r.type)}}; }

transfer_request transfer_request_from_json(const json& doc) {
    try {
        transfer_request r{doc.at("ehr_id").get<std::string>(),
                           core::ehr_type_from_string(doc.at("ehr_type").get<std::string>())};
        if (r.ehr_id.empty()) throw error(error_kind::validation, "ehr_id must not be empty");
        return r;
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed transfer request", e.what());
    }
}

json to_json(const sync_report& r) {
    json errors = json::array();
    for (const auto& e : r.errors) errors.push_back({{"record_key", e.record_key}, {"reason", e.reason}});
    return json{{"started_at", r.started_at.to_rfc3339()},
                {"finished_at", r.finished_at.to_rfc3339()},
                {"extracted", r.extracted},
                {"converted", r.converted},
                {"pushed", r.pushed},
                {"applied", r.applied},
                {"errors", errors}};
}

sync_report sync_report_from_json(const json& doc) {
    sync_report r;
    r.started_at = timestamp::parse(doc.at("started_at").get<std::string>());
    r.finished_at = timestamp::parse(doc.at("finished_at").get<std::string>());
    r.extracted = doc.at("extracted").get<std::size_t>();
    r.converted = doc.at("converted").get<std::size_t>();
    r.pushed = doc.at("pushed").get<std::size_t>();
    r.applied = doc.value("applied", std::size_t{0});
    for (const auto& e : doc.at("errors")) {
        r.errors.push_back({e.at("record_key").get<std::string>(), e.at("reason").get<std::string>()});
    }
    return r;
}

json to_json(const fanout_result& r) {
    json records = json::array();
    for (const auto& rec : r.records) records.push_back(core::to_json(rec));
    json failures = json::array();
    for (const auto& f : r.failures) {
        failures.push_back({{"hospital_id", f.hospital_id}, {"error_class", f.error_class}, {"message", f.message}});
    }
    json served = json::array();
    for (const auto& s : r.served) {
        served.push_back({{"hospital_id", s.hospital_id}, {"ehr_id", s.ehr_id}, {"audit_event_id", s.audit_event_id}});
    }
    return json{{"records", records}, {"failures", failures}, {"served", served}};
}

fanout_result fanout_result_from_json(const json& doc) {
    fanout_result r;
    try {
        for (const auto& rec : doc.at("records")) r.records.push_back(core::unified_from_json(rec));
        for (const auto& f : doc.at("failures")) {
            r.failures.push_back({f.at("hospital_id").get<std::string>(), f.at("error_class").get<std::string>(),
                                  f.at("message").get<std::string>()});
        }
        for (const auto& s : doc.value("served", json::array())) {
            r.served.push_back({s.at("hospital_id").get<std::string>(), s.at("ehr_id").get<std::string>(),
                                s.at("audit_event_id").get<std::uint64_t>()});
        }
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed fan-out result", e.what());
    }
    return r;
}

std::string_view failure_class(error_kind kind) noexcept {
    switch (kind) {
        case error_kind::unavailable: return "unreachable";
        case error_kind::timeout: return "timeout";
        case error_kind::unauthenticated: return "unauthenticated";
        case error_kind::forbidden: return "forbidden";
        case error_kind::not_found: return "not_found";
        case error_kind::validation: return "validation";
        default: return "error";
    }
}

hospital_node::hospital_node(node_options options, auth::auth_service auth,
                             std::shared_ptr<legacy::mapping_registry> registry, legacy::legacy_store store,
                             crypto::secret_key federation_key, index_sink* sink, peer_transport* peers,
                             clock_fn clock)
    : options_(std::move(options)),
      auth_(std::move(auth)),
      registry_(std::move(registry)),
      legacy_(std::move(store)),
      adapter_(*registry_, std::move(federation_key)),
      sink_(sink),
      peers_(peers),
      clock_(std::move(clock)) {
    std::filesystem::create_directories(options_.state_dir);
    records_ = std::make_unique<record_store>(options_.state_dir / "records.jsonl", options_.sync_writes);
    log_ = std::make_unique<audit::audit_log>(options_.state_dir / "audit.log", options_.hospital_id, clock_,
                                              options_.sync_writes);
}

auth::issued_doctor_token hospital_node::login(std::string_view doctor_id, std::string_view secret,
                                               std::string_view hospital_id) {
    audit::audit_record rec;
    rec.actor_doctor = std::string(doctor_id);
    rec.actor_hospital = std::string(hospital_id);
    rec.what = audit::action::login;
    try {
        auto issued = auth_.doctor_login(doctor_id, secret, hospital_id);
        rec.result = audit::outcome::success;
        rec.detail = "role=" + std::string(auth::to_string(issued.claims.doctor_role));
        log_->append(std::move(rec));
        return issued;
    } catch (const error& e) {
        if (e.kind() == error_kind::storage) throw;
        rec.result = audit::outcome::denied;
        rec.detail = e.what();
        log_->append(std::move(rec));
        throw;
    }
}

auth::issued_consent_token hospital_node::grant_consent(std::string_view scan, std::string_view doctor_token,
                                                        const auth::consent_scope& scope) {
    auto issued = auth_.grant_consent(scan, doctor_token, scope);
    audit::audit_record rec;
    rec.actor_doctor = issued.claims.granted_to;
    rec.actor_hospital = issued.claims.issuer;
    rec.what = audit::action::consent_granted;
    rec.result = audit::outcome::success;
    rec.patient = issued.claims.patient;
    rec.detail = "expires_at=" + issued.claims.expires_at.to_rfc3339();
    log_->append(std::move(rec));
    return issued;
}

transfer_outcome hospital_node::transfer(const transfer_request& request,
                                         const std::optional<std::string>& doctor_token,
                                         const std::optional<std::string>& consent_token) {
    timestamp now = clock_();
    audit::audit_record rec;
    rec.ehr_id = request.ehr_id;
    if (doctor_token) {
        if (auto d = auth::verify_doctor_token(*doctor_token, now, auth_.keys())) {
            rec.actor_doctor = d.claims().subject;
            rec.actor_hospital = d.claims().hospital_id;
        }
    }
    auto deny = [&](const error& e, std::optional<core::patient_ref> patient) {
        rec.what = audit::action::denied;
        rec.result = audit::outcome::denied;
        rec.patient = std::move(patient);
        rec.detail = "transfer: " + std::string(e.what());
        log_->append(rec);
    };

    auth::access_grant grant;
    try {
        grant = auth::authorize_access(doctor_token, consent_token, now, auth_.keys());
    } catch (const error& e) {
        deny(e, std::nullopt);
        throw;
    }

    auto record = records_->find(options_.hospital_id, request.ehr_id);
    if (!record || record->type != request.type) {
        rec.what = audit::action::transfer;
        rec.result = audit::outcome::error;
        rec.detail = "not found";
        log_->append(rec);
        throw error(error_kind::not_found, "no such record", options_.hospital_id + "/" + request.ehr_id);
    }
    if (record->patient != grant.consent.patient) {
        error e(error_kind::forbidden, "consent is for a different patient");
        deny(e, grant.consent.patient);
        throw e;
    }
    if (!auth::consent_covers_record(grant.consent, record->recorded_at, record->type)) {
        error e(error_kind::forbidden, "consent scope does not cover this record");
        deny(e, grant.consent.patient);
        throw e;
    }

    rec.what = audit::action::transfer;
    rec.result = audit::outcome::success;
    rec.patient = record->patient;
    rec.detail = std::string(core::to_string(record->type));
    std::uint64_t id = log_->append(rec);
    return {std::move(*record), id};
}

std::filesystem::path hospital_node::high_water_mark_file() const { return options_.state_dir / "sync_state.json"; }

std::optional<timestamp> hospital_node::high_water_mark() const {
    std::ifstream in(high_water_mark_file(), std::ios::binary);
    if (!in) return std::nullopt;
    json j = json::parse(in, nullptr, false);
    if (!j.is_object() || !j.contains("high_water_mark")) {
        throw error(error_kind::storage, "corrupt sync state", high_water_mark_file().string());
    }
    return timestamp::parse(j["high_water_mark"].get<std::string>(), "high_water_mark");
}

void hospital_node::persist_high_water_mark(const timestamp& mark) const {
    auto tmp = high_water_mark_file();
    tmp += ".tmp";
    write_durably(tmp, core::canonical_json(json{{"high_water_mark", mark.to_rfc3339()}}) + "\n", false,
                  options_.sync_writes);
    std::filesystem::rename(tmp, high_water_mark_file());
}

sync_report hospital_node::sync_run(const timestamp& now) {
    sync_report report;
    report.started_at = now;
    std::unique_lock flight(sync_mutex_, std::try_to_lock);
    if (!flight.owns_lock()) {
        report.errors.push_back({"", "sync already running"});
        report.finished_at = clock_();
        return report;
    }

    auto finish = [&]() -> sync_report {
        report.finished_at = clock_();
        return report;
    };

    std::vector<legacy::legacy_record> extracted;
    timestamp since = timestamp::epoch();
    try {
        if (auto mark = high_water_mark()) since = *mark;
        extracted = legacy::extract(legacy_, since);
    } catch (const error& e) {
        report.errors.push_back({"", std::string("extract: ") + e.what()});
        return finish();
    }
    report.extracted = extracted.size();
    if (sync_fault_hook) sync_fault_hook(sync_stage::extracted);

    std::vector<core::unified_ehr> converted;
    std::vector<index::index_entry> entries;
    for (const auto& r : extracted) {
        try {
            auto u = adapter_.convert(r);
            entries.push_back({u.patient, u.ehr_id, u.type, u.recorded_at, u.hospital_id, r.version});
            converted.push_back(std::move(u));
        } catch (const error& e) {
            std::string reason = e.what();
            if (!e.detail().empty()) reason += " (" + e.detail() + ")";
            report.errors.push_back({legacy_key(r, *registry_), reason});
        }
    }
    report.converted = converted.size();
    if (sync_fault_hook) sync_fault_hook(sync_stage::converted);

    try {
        records_->put_batch(converted);
    } catch (const error& e) {
        report.errors.push_back({"", std::string("local store: ") + e.what()});
        return finish();
    }
    if (sync_fault_hook) sync_fault_hook(sync_stage::stored);

    if (!entries.empty()) {
        if (sink_ == nullptr) {
            report.errors.push_back({"", "no index service configured"});
            return finish();
        }
        try {
            report.applied = sink_->upsert(entries, auth_.issue_node_token());
        } catch (const error& e) {
            report.errors.push_back({"", std::string("index upsert: ") + e.what()});
            return finish();
        }
    }
    report.pushed = entries.size();
    if (sync_fault_hook) sync_fault_hook(sync_stage::pushed);

    if (!extracted.empty()) {
        // Rows that failed conversion are not retried until the legacy system modifies them again.
        timestamp mark = extracted.front().modified_at;
        for (const auto& r : extracted) {
            if (earlier(mark, r.modified_at)) mark = r.modified_at;
        }
        try {
            persist_high_water_mark(mark);
        } catch (const error& e) {
            report.errors.push_back({"", std::string("high-water mark: ") + e.what()});
        }
    }
    return finish();
}

fanout_result hospital_node::fanout_fetch(const std::vector<index::locate_row>& rows, const std::string& doctor_token,
                                          const std::string& consent_token) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<index::locate_row>> by_location;
    for (const auto& row : rows) {
        auto [it, inserted] = by_location.try_emplace(row.location);
        if (inserted) order.push_back(row.location);
        it->second.push_back(row);
    }

    struct hospital_outcome {
        std::vector<transfer_outcome> fetched;
        std::optional<fanout_failure> failure;
    };
    std::vector<hospital_outcome> outcomes(order.size());
    auto deadline = std::chrono::steady_clock::now() + options_.transfer_timeout;

    auto work = [&](std::size_t i) {
        const std::string& location = order[i];
        const auto& wanted = by_location[location];
        auto& out = outcomes[i];
        try {
            if (location == options_.hospital_id) {
                for (const auto& row : wanted) {
                    out.fetched.push_back(transfer({row.ehr_id, row.type}, doctor_token, consent_token));
                }
            } else {
                if (peers_ == nullptr) throw error(error_kind::unavailable, "no peer transport configured");
                std::vector<transfer_request> requests;
                for (const auto& row : wanted) requests.push_back({row.ehr_id, row.type});
                out.fetched = peers_->fetch(location, requests, doctor_token, consent_token, deadline);
                if (out.fetched.size() != wanted.size()) throw error(error_kind::internal, "peer returned a short batch");
                for (std::size_t k = 0; k < wanted.size(); ++k) {
                    const auto& got = out.fetched[k].record;
                    if (got.hospital_id != location || got.ehr_id != wanted[k].ehr_id) {
                        throw error(error_kind::internal, "peer returned a different record", got.ehr_id);
                    }
                }
            }
        } catch (const error& e) {
            out.fetched.clear();
            out.failure = fanout_failure{location, std::string(failure_class(e.kind())), e.what()};
        } catch (const std::exception& e) {
            out.fetched.clear();
            out.failure = fanout_failure{location, "error", e.what()};
        }
    };

    std::size_t workers = std::min(order.size(), std::max<std::size_t>(1, options_.fanout_parallelism));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w + 1 < workers; ++w) {
        threads.emplace_back([&] {
            for (std::size_t i; (i = next++) < order.size();) work(i);
        });
    }
    for (std::size_t i; (i = next++) < order.size();) work(i);
    for (auto& t : threads) t.join();

    fanout_result result;
    std::map<std::pair<std::string, std::string>, const transfer_outcome*> fetched;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (outcomes[i].failure) {
            result.failures.push_back(*outcomes[i].failure);
            continue;
        }
        for (const auto& t : outcomes[i].fetched) fetched[{t.record.hospital_id, t.record.ehr_id}] = &t;
    }
    for (const auto& row : rows) {
        auto it = fetched.find({row.location, row.ehr_id});
        if (it == fetched.end()) continue;
        result.records.push_back(it->second->record);
        result.served.push_back({row.location, row.ehr_id, it->second->audit_event_id});
    }
    return result;
}

std::vector<audit::audit_record> hospital_node::query_audit(std::string_view ehr_id, const timestamp& from,
                                                            const timestamp& to,
                                                            const std::optional<std::string>& admin_token) const {
    auth::authorize_admin(admin_token, clock_(), auth_.keys());
    if (earlier(to, from)) throw error(error_kind::validation, "from must not be after to");
    return log_->query(ehr_id, from, to);
}

std::size_t local_index_sink::upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) {
    return service_.upsert_entries(entries, node_token);
}

}  // namespace fedehr::node
