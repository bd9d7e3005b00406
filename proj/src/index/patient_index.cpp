#include "fedehr/index/patient_index.hpp"

#include "fedehr/crypto.hpp"
#include "fedehr/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <mutex>
#include <set>

#include <fcntl.h>
#include <unistd.h>

namespace fedehr::index {

namespace {

const std::set<std::string, std::less<>> entry_fields = {"ehr_id",   "ehr_type",    "location",
                                                         "patient_ref", "recorded_at", "sync_version"};
const std::set<std::string, std::less<>> query_fields = {"patient_ref", "date_from", "date_to",
                                                         "ehr_types",   "hospitals", "cursor"};

std::string query_fingerprint(const locate_query& q) {
    locate_query copy = q;
    copy.cursor.reset();
    return crypto::to_hex(crypto::sha256(core::canonical_json(to_json(copy)))).substr(0, 16);
}

std::string make_cursor(std::size_t offset, const locate_query& q) {
    return crypto::base64url_encode(core::canonical_json(json{{"offset", offset}, {"query", query_fingerprint(q)}}));
}

std::size_t read_cursor(const std::string& cursor, const locate_query& q) {
    auto text = crypto::base64url_decode(cursor);
    json j = text ? json::parse(*text, nullptr, false) : json();
    if (!j.is_object() || !j.contains("offset") || !j["offset"].is_number_unsigned() || !j.contains("query") ||
        j["query"] != query_fingerprint(q)) {
        throw error(error_kind::validation, "continuation cursor does not belong to this query");
    }
    return j["offset"].get<std::size_t>();
}

void append_lines(const std::filesystem::path& file, const std::string& text, bool sync) {
    int fd = ::open(file.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0640);
    if (fd < 0) throw error(error_kind::storage, "cannot open index change log", std::strerror(errno));
    const char* p = text.data();
    std::size_t left = text.size();
    while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            ::close(fd);
            throw error(error_kind::storage, "index change log write failed", std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (sync && ::fdatasync(fd) != 0) {
        ::close(fd);
        throw error(error_kind::storage, "index change log sync failed", std::strerror(errno));
    }
    ::close(fd);
}

}  // namespace

json to_json(const index_entry& e) {
    return json{{"patient_ref", e.patient.digest()},
                {"ehr_id", e.ehr_id},
                {"ehr_type", core::to_string(e.type)},
                {"recorded_at", e.recorded_at.to_rfc3339()},
                {"location", e.location},
                {"sync_version", e.sync_version}};
}

index_entry index_entry_from_json(const json& doc) {
    if (!doc.is_object()) throw error(error_kind::validation, "index entry must be an object");
    for (const auto& [k, _] : doc.items()) {
        if (!entry_fields.contains(k)) throw error(error_kind::validation, "index entry carries a non-tag field", k);
    }
    try {
        index_entry e;
        e.patient = core::patient_ref::parse(doc.at("patient_ref").get<std::string>());
        e.ehr_id = doc.at("ehr_id").get<std::string>();
        e.type = core::ehr_type_from_string(doc.at("ehr_type").get<std::string>());
        e.recorded_at = timestamp::parse(doc.at("recorded_at").get<std::string>(), "recorded_at");
        e.location = doc.at("location").get<std::string>();
        e.sync_version = doc.at("sync_version").get<std::uint64_t>();
        if (e.ehr_id.empty()) throw error(error_kind::validation, "index entry ehr_id is empty");
        if (!core::is_valid_hospital_id(e.location)) throw error(error_kind::validation, "index entry location is invalid");
        return e;
    } catch (const json::exception& ex) {
        throw error(error_kind::validation, "malformed index entry", ex.what());
    }
}

json to_json(const locate_query& q) {
    json types = json::array();
    for (auto t : q.types) types.push_back(core::to_string(t));
    json j{{"patient_ref", q.patient.digest()},
           {"date_from", q.date_from.to_rfc3339()},
           {"date_to", q.date_to.to_rfc3339()},
           {"ehr_types", types},
           {"hospitals", q.hospitals}};
    if (q.cursor) j["cursor"] = *q.cursor;
    return j;
}

void validate_query(const locate_query& q) {
    if (q.patient.empty()) throw error(error_kind::validation, "query patient_ref is required");
    if (earlier(q.date_to, q.date_from)) throw error(error_kind::validation, "date_from must not be after date_to");
}

locate_query locate_query_from_json(const json& doc) {
    if (!doc.is_object()) throw error(error_kind::validation, "locate query must be an object");
    for (const auto& [k, _] : doc.items()) {
        if (!query_fields.contains(k)) throw error(error_kind::validation, "unknown locate query field", k);
    }
    try {
        locate_query q;
        q.patient = core::patient_ref::parse(doc.at("patient_ref").get<std::string>());
        q.date_from = timestamp::parse(doc.at("date_from").get<std::string>(), "date_from");
        q.date_to = timestamp::parse(doc.at("date_to").get<std::string>(), "date_to");
        if (auto it = doc.find("ehr_types"); it != doc.end()) {
            for (const auto& t : *it) q.types.push_back(core::ehr_type_from_string(t.get<std::string>()));
        }
        if (auto it = doc.find("hospitals"); it != doc.end()) {
            for (const auto& h : *it) q.hospitals.push_back(h.get<std::string>());
        }
        if (auto it = doc.find("cursor"); it != doc.end() && !it->is_null()) q.cursor = it->get<std::string>();
        validate_query(q);
        return q;
    } catch (const json::exception& ex) {
        throw error(error_kind::validation, "malformed locate query", ex.what());
    }
}

json to_json(const locate_row& r) {
    return json{{"ehr_id", r.ehr_id},
                {"ehr_type", core::to_string(r.type)},
                {"date", r.recorded_at.date()},
                {"recorded_at", r.recorded_at.to_rfc3339()},
                {"location", r.location}};
}

locate_row locate_row_from_json(const json& doc) {
    try {
        return {doc.at("ehr_id").get<std::string>(), core::ehr_type_from_string(doc.at("ehr_type").get<std::string>()),
                timestamp::parse(doc.at("recorded_at").get<std::string>(), "recorded_at"),
                doc.at("location").get<std::string>()};
    } catch (const json::exception& ex) {
        throw error(error_kind::validation, "malformed locate row", ex.what());
    }
}

json to_json(const locate_result& r) {
    json rows = json::array();
    for (const auto& row : r.rows) rows.push_back(to_json(row));
    json j{{"rows", rows}};
    j["next_cursor"] = r.next_cursor ? json(*r.next_cursor) : json(nullptr);
    if (r.audit_event_id) j["audit_event_id"] = *r.audit_event_id;
    return j;
}

locate_result locate_result_from_json(const json& doc) {
    locate_result r;
    try {
        for (const auto& row : doc.at("rows")) r.rows.push_back(locate_row_from_json(row));
        if (auto it = doc.find("next_cursor"); it != doc.end() && !it->is_null()) r.next_cursor = it->get<std::string>();
        if (auto it = doc.find("audit_event_id"); it != doc.end() && !it->is_null())
            r.audit_event_id = it->get<std::uint64_t>();
    } catch (const json::exception& ex) {
        throw error(error_kind::validation, "malformed locate result", ex.what());
    }
    return r;
}

bool row_before(const locate_row& a, const locate_row& b) noexcept {
    if (a.recorded_at.utc_seconds != b.recorded_at.utc_seconds)
        return a.recorded_at.utc_seconds > b.recorded_at.utc_seconds;
    if (a.location != b.location) return a.location < b.location;
    return a.ehr_id < b.ehr_id;
}

bool entry_matches(const index_entry& e, const locate_query& q) {
    if (e.patient != q.patient) return false;
    if (earlier(e.recorded_at, q.date_from) || earlier(q.date_to, e.recorded_at)) return false;
    if (!q.types.empty() && std::find(q.types.begin(), q.types.end(), e.type) == q.types.end()) return false;
    if (!q.hospitals.empty() && std::find(q.hospitals.begin(), q.hospitals.end(), e.location) == q.hospitals.end())
        return false;
    return true;
}

locate_row project(const index_entry& e) { return {e.ehr_id, e.type, e.recorded_at, e.location}; }

patient_index::patient_index(std::optional<std::filesystem::path> change_log, bool sync_writes)
    : change_log_(std::move(change_log)), sync_writes_(sync_writes) {
    if (!change_log_) return;
    if (change_log_->has_parent_path()) std::filesystem::create_directories(change_log_->parent_path());
    std::ifstream in(*change_log_, std::ios::binary);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) {
            throw error(error_kind::storage, "corrupt index change log",
                        change_log_->string() + ":" + std::to_string(line_no));
        }
        apply_locked(index_entry_from_json(j));
    }
}

std::size_t patient_index::apply_locked(const index_entry& e) {
    key k{e.location, e.ehr_id};
    auto owner = patient_of_.find(k);
    if (owner != patient_of_.end()) {
        auto& bucket = by_patient_[owner->second];
        auto it = bucket.find(k);
        if (it->second.sync_version >= e.sync_version) return 0;
        bucket.erase(it);
        if (bucket.empty()) by_patient_.erase(owner->second);
    }
    by_patient_[e.patient.digest()][k] = e;
    patient_of_[k] = e.patient.digest();
    return 1;
}

std::size_t patient_index::upsert(std::span<const index_entry> entries) {
    for (const auto& e : entries) {
        if (e.patient.empty() || e.ehr_id.empty() || !core::is_valid_hospital_id(e.location)) {
            throw error(error_kind::validation, "malformed index entry", e.location + "/" + e.ehr_id);
        }
    }
    std::unique_lock lock(mutex_);
    std::string log_text;
    std::size_t applied = 0;
    for (const auto& e : entries) {
        if (apply_locked(e) == 1) {
            ++applied;
            if (change_log_) log_text += core::canonical_json(to_json(e)) + '\n';
        }
    }
    if (change_log_ && !log_text.empty()) append_lines(*change_log_, log_text, sync_writes_);
    return applied;
}

locate_result patient_index::locate_unchecked(const locate_query& query) const {
    validate_query(query);
    std::size_t offset = query.cursor ? read_cursor(*query.cursor, query) : 0;
    std::vector<locate_row> rows;
    {
        std::shared_lock lock(mutex_);
        auto it = by_patient_.find(query.patient.digest());
        if (it != by_patient_.end()) {
            for (const auto& [_, e] : it->second) {
                if (entry_matches(e, query)) rows.push_back(project(e));
            }
        }
    }
    std::sort(rows.begin(), rows.end(), row_before);
    locate_result result;
    if (offset < rows.size()) {
        std::size_t end = std::min(rows.size(), offset + page_size);
        result.rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(offset),
                           rows.begin() + static_cast<std::ptrdiff_t>(end));
        if (end < rows.size()) result.next_cursor = make_cursor(end, query);
    }
    return result;
}

std::size_t patient_index::size() const {
    std::shared_lock lock(mutex_);
    return patient_of_.size();
}

std::vector<index_entry> patient_index::entries() const {
    std::shared_lock lock(mutex_);
    std::vector<index_entry> out;
    out.reserve(patient_of_.size());
    for (const auto& [k, digest] : patient_of_) out.push_back(by_patient_.at(digest).at(k));
    return out;
}

std::string patient_index::fingerprint() const {
    std::string text;
    for (const auto& e : entries()) text += core::canonical_json(to_json(e)) + '\n';
    return crypto::to_hex(crypto::sha256(text));
}

index_service::index_service(std::string server_id, patient_index& index, audit::audit_log& log, auth::key_ring keys,
                             clock_fn clock)
    : server_id_(std::move(server_id)), index_(index), log_(log), keys_(std::move(keys)), clock_(std::move(clock)) {}

locate_result index_service::locate(const locate_query& query, const std::optional<std::string>& doctor_token,
                                    const std::optional<std::string>& consent_token) {
    timestamp now = clock_();
    auth::access_grant grant;
    try {
        grant = auth::authorize_access(doctor_token, consent_token, now, keys_);
        if (grant.consent.patient != query.patient) {
            throw error(error_kind::forbidden, "consent is for a different patient");
        }
        if (!auth::consent_covers(grant.consent, query.date_from, query.date_to, query.types)) {
            throw error(error_kind::forbidden, "consent scope does not cover the query");
        }
    } catch (const error& e) {
        audit::audit_record denied;
        if (doctor_token) {
            if (auto d = auth::verify_doctor_token(*doctor_token, now, keys_)) {
                denied.actor_doctor = d.claims().subject;
                denied.actor_hospital = d.claims().hospital_id;
            }
        }
        denied.what = audit::action::denied;
        denied.result = audit::outcome::denied;
        denied.patient = query.patient;
        denied.detail = "locate: " + std::string(e.what());
        log_.append(std::move(denied));
        throw;
    }

    locate_result result = index_.locate_unchecked(query);
    audit::audit_record rec;
    rec.actor_doctor = grant.doctor.subject;
    rec.actor_hospital = grant.doctor.hospital_id;
    rec.what = audit::action::locate;
    rec.result = audit::outcome::success;
    rec.patient = query.patient;
    rec.detail = "rows=" + std::to_string(result.rows.size());
    result.audit_event_id = log_.append(std::move(rec));
    return result;
}

std::size_t index_service::upsert_entries(std::span<const index_entry> entries,
                                          const std::optional<std::string>& node_token) {
    if (!node_token || node_token->empty()) throw error(error_kind::unauthenticated, "node token required");
    auto node = auth::verify_node_token(*node_token, clock_(), keys_);
    if (!node) throw error(error_kind::unauthenticated, "node token rejected", std::string(auth::to_string(node.reason())));
    for (const auto& e : entries) {
        if (e.location != node.claims().hospital_id) {
            throw error(error_kind::forbidden, "a hospital may only publish its own entries", e.location);
        }
    }
    return index_.upsert(entries);
}

std::vector<audit::audit_record> index_service::query_audit(std::string_view ehr_id, const timestamp& from,
                                                            const timestamp& to,
                                                            const std::optional<std::string>& admin_token) const {
    auth::authorize_admin(admin_token, clock_(), keys_);
    if (earlier(to, from)) throw error(error_kind::validation, "from must not be after to");
    return log_.query(ehr_id, from, to);
}

}  // namespace fedehr::index
