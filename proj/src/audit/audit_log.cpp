#include "fedehr/audit/audit_log.hpp"

#include "fedehr/crypto.hpp"
#include "fedehr/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>

#include <fcntl.h>
#include <unistd.h>

namespace fedehr::audit {

namespace {

std::string line_digest(std::string_view line) { return crypto::to_hex(crypto::sha256(line)); }

bool before(const audit_record& a, const audit_record& b) {
    if (a.occurred_at.utc_seconds != b.occurred_at.utc_seconds)
        return a.occurred_at.utc_seconds < b.occurred_at.utc_seconds;
    if (a.server_id != b.server_id) return a.server_id < b.server_id;
    return a.event_id < b.event_id;
}

}  // namespace

std::string_view to_string(action a) noexcept {
    switch (a) {
        case action::login: return "login";
        case action::consent_granted: return "consent_granted";
        case action::locate: return "locate";
        case action::transfer: return "transfer";
        case action::denied: return "denied";
    }
    return "denied";
}

std::string_view to_string(outcome o) noexcept {
    switch (o) {
        case outcome::success: return "success";
        case outcome::denied: return "denied";
        case outcome::error: return "error";
    }
    return "error";
}

std::optional<action> parse_action(std::string_view text) noexcept {
    for (auto a : {action::login, action::consent_granted, action::locate, action::transfer, action::denied}) {
        if (to_string(a) == text) return a;
    }
    return std::nullopt;
}

std::optional<outcome> parse_outcome(std::string_view text) noexcept {
    for (auto o : {outcome::success, outcome::denied, outcome::error}) {
        if (to_string(o) == text) return o;
    }
    return std::nullopt;
}

json to_json(const audit_record& r) {
    json j{{"event_id", r.event_id},
           {"occurred_at", r.occurred_at.to_rfc3339()},
           {"server_id", r.server_id},
           {"actor_doctor", r.actor_doctor},
           {"actor_hospital", r.actor_hospital},
           {"action", to_string(r.what)},
           {"outcome", to_string(r.result)},
           {"detail", r.detail}};
    j["ehr_id"] = r.ehr_id ? json(*r.ehr_id) : json(nullptr);
    j["patient_ref"] = r.patient ? json(r.patient->digest()) : json(nullptr);
    return j;
}

audit_record audit_record_from_json(const json& j) {
    try {
        audit_record r;
        r.event_id = j.at("event_id").get<std::uint64_t>();
        r.occurred_at = timestamp::parse(j.at("occurred_at").get<std::string>(), "occurred_at");
        r.server_id = j.at("server_id").get<std::string>();
        r.actor_doctor = j.at("actor_doctor").get<std::string>();
        r.actor_hospital = j.at("actor_hospital").get<std::string>();
        auto a = parse_action(j.at("action").get<std::string>());
        auto o = parse_outcome(j.at("outcome").get<std::string>());
        if (!a || !o) throw error(error_kind::validation, "unknown audit action or outcome");
        r.what = *a;
        r.result = *o;
        r.detail = j.value("detail", std::string{});
        if (auto it = j.find("ehr_id"); it != j.end() && !it->is_null()) r.ehr_id = it->get<std::string>();
        if (auto it = j.find("patient_ref"); it != j.end() && !it->is_null())
            r.patient = core::patient_ref::parse(it->get<std::string>());
        return r;
    } catch (const json::exception& e) {
        throw error(error_kind::validation, "malformed audit record", e.what());
    }
}

chain_check verify_chain(const std::filesystem::path& file) {
    chain_check check;
    std::ifstream in(file, std::ios::binary);
    if (!in) {
        check.ok = false;
        check.reason = "cannot open log";
        return check;
    }
    std::string prev = genesis_digest;
    std::uint64_t last_id = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        auto fail = [&](std::string reason) {
            check.ok = false;
            check.bad_line = line_no;
            check.reason = std::move(reason);
            return check;
        };
        json j = json::parse(line, nullptr, false);
        if (!j.is_object() || !j.contains("prev_digest") || !j["prev_digest"].is_string()) {
            return fail("unparseable line");
        }
        if (j["prev_digest"].get<std::string>() != prev) return fail("predecessor digest mismatch");
        if (core::canonical_json(j) != line) return fail("line is not in canonical form");
        std::uint64_t id = 0;
        try {
            id = audit_record_from_json(j).event_id;
        } catch (const std::exception&) {
            return fail("malformed record");
        }
        if (id <= last_id) return fail("event_id not strictly increasing");
        last_id = id;
        prev = line_digest(line);
        ++check.records;
    }
    return check;
}

audit_log::audit_log(std::filesystem::path file, std::string server_id, clock_fn clock, bool sync_writes)
    : file_(std::move(file)), server_id_(std::move(server_id)), clock_(std::move(clock)), sync_writes_(sync_writes) {
    if (file_.has_parent_path()) std::filesystem::create_directories(file_.parent_path());
    if (std::filesystem::exists(file_)) {
        auto check = verify_chain(file_);
        if (!check.ok) {
            throw error(error_kind::storage, "audit log failed chain verification",
                        file_.string() + ":" + std::to_string(check.bad_line) + " " + check.reason);
        }
        std::ifstream in(file_, std::ios::binary);
        std::string line;
        while (std::getline(in, line)) {
            records_.push_back(audit_record_from_json(json::parse(line)));
            last_digest_ = line_digest(line);
        }
    }
    fd_ = ::open(file_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0640);
    if (fd_ < 0) throw error(error_kind::storage, "cannot open audit log", file_.string() + ": " + std::strerror(errno));
}

audit_log::~audit_log() {
    if (fd_ >= 0) ::close(fd_);
}

std::uint64_t audit_log::append(audit_record record) {
    std::unique_lock lock(mutex_);
    if (fail_writes_) throw error(error_kind::storage, "audit log write failed", "simulated storage failure");
    record.event_id = records_.empty() ? 1 : records_.back().event_id + 1;
    record.occurred_at = clock_();
    record.server_id = server_id_;

    json j = to_json(record);
    j["prev_digest"] = last_digest_;
    std::string line = core::canonical_json(j);
    std::string buf = line + '\n';
    const char* p = buf.data();
    std::size_t left = buf.size();
    while (left > 0) {
        ssize_t n = ::write(fd_, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw error(error_kind::storage, "audit log write failed", std::strerror(errno));
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    if (sync_writes_ && ::fdatasync(fd_) != 0) {
        throw error(error_kind::storage, "audit log sync failed", std::strerror(errno));
    }
    last_digest_ = line_digest(line);
    records_.push_back(record);
    return record.event_id;
}

std::vector<audit_record> audit_log::query(std::string_view ehr_id, const timestamp& from,
                                           const timestamp& to) const {
    std::vector<audit_record> out;
    {
        std::shared_lock lock(mutex_);
        for (const auto& r : records_) {
            if (r.ehr_id && *r.ehr_id == ehr_id && !earlier(r.occurred_at, from) && !earlier(to, r.occurred_at)) {
                out.push_back(r);
            }
        }
    }
    std::stable_sort(out.begin(), out.end(), before);
    return out;
}

std::vector<audit_record> audit_log::all() const {
    std::shared_lock lock(mutex_);
    return records_;
}

std::size_t audit_log::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

std::vector<audit_record> merge_by_time(std::vector<std::vector<audit_record>> per_server) {
    std::vector<audit_record> out;
    for (auto& list : per_server) {
        out.insert(out.end(), std::make_move_iterator(list.begin()), std::make_move_iterator(list.end()));
    }
    std::stable_sort(out.begin(), out.end(), before);
    return out;
}

}  // namespace fedehr::audit
