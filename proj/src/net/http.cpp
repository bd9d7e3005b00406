#include "fedehr/net/http.hpp"

#include <httplib.h>

#include <thread>

namespace fedehr::net {

namespace {

const timestamp far_future = timestamp::from_utc_seconds(253402300799);  // 9999-12-31T23:59:59Z

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(core::canonical_json(body), "application/json");
}

void reply_error(httplib::Response& res, const error& e) { reply(res, http_status(e.kind()), error_body(e)); }

using handler = std::function<void(const httplib::Request&, httplib::Response&)>;

handler guarded(handler inner) {
    return [inner = std::move(inner)](const httplib::Request& req, httplib::Response& res) {
        try {
            inner(req, res);
        } catch (const error& e) {
            reply_error(res, e);
        } catch (const json::exception& e) {
            reply_error(res, error(error_kind::validation, "malformed request body", e.what()));
        } catch (const std::exception&) {
            reply_error(res, error(error_kind::internal, "internal error"));
        }
    };
}

json parse_body(const httplib::Request& req) {
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw error(error_kind::validation, "request body must be a JSON object");
    return j;
}

std::optional<std::string> header(const httplib::Request& req, std::string_view name) {
    std::string key(name);
    if (!req.has_header(key)) return std::nullopt;
    return req.get_header_value(key);
}

struct audit_params {
    std::string ehr_id;
    timestamp from;
    timestamp to;
};

audit_params read_audit_params(const httplib::Request& req) {
    if (!req.has_param("ehr_id")) throw error(error_kind::validation, "ehr_id parameter is required");
    audit_params p{req.get_param_value("ehr_id"), timestamp::epoch(), far_future};
    if (req.has_param("from")) p.from = timestamp::parse(req.get_param_value("from"), "from");
    if (req.has_param("to")) p.to = timestamp::parse(req.get_param_value("to"), "to");
    if (earlier(p.to, p.from)) throw error(error_kind::validation, "from must not be after to");
    return p;
}

json audit_json(const std::string& server_id, const std::vector<audit::audit_record>& records) {
    json rows = json::array();
    for (const auto& r : records) rows.push_back(audit::to_json(r));
    return json{{"server_id", server_id}, {"records", rows}};
}

audit_page audit_from_json(const json& j) {
    audit_page page;
    page.server_id = j.at("server_id").get<std::string>();
    for (const auto& r : j.at("records")) page.records.push_back(audit::audit_record_from_json(r));
    return page;
}

std::vector<core::ehr_type> types_from_json(const json& j) {
    std::vector<core::ehr_type> out;
    for (const auto& t : j) out.push_back(core::ehr_type_from_string(t.get<std::string>()));
    return out;
}

json types_to_json(const std::vector<core::ehr_type>& types) {
    json out = json::array();
    for (auto t : types) out.push_back(core::to_string(t));
    return out;
}

httplib::Headers token_headers(const std::optional<std::string>& doctor, const std::optional<std::string>& consent) {
    httplib::Headers h;
    if (doctor) h.emplace(std::string(auth::doctor_token_header), *doctor);
    if (consent) h.emplace(std::string(auth::consent_token_header), *consent);
    return h;
}

std::unique_ptr<httplib::Client> make_client(const endpoint& at, const client_timeouts& t) {
    auto c = std::make_unique<httplib::Client>(at.host, at.port);
    c->set_connection_timeout(t.connect);
    c->set_read_timeout(t.read);
    c->set_write_timeout(t.read);
    return c;
}

error transport_error(httplib::Error e, const endpoint& at) {
    auto what = httplib::to_string(e);
    if (e == httplib::Error::ConnectionTimeout) return error(error_kind::timeout, "connection timed out", at.url());
    if (e == httplib::Error::Read) return error(error_kind::unavailable, "no response: " + what, at.url());
    return error(error_kind::unavailable, "unreachable: " + what, at.url());
}

const httplib::Response& checked(const httplib::Result& r, const endpoint& at) {
    if (!r) throw transport_error(r.error(), at);
    if (r->status < 200 || r->status >= 300) throw error_from_response(r->status, r->body);
    return *r;
}

json checked_json(const httplib::Result& r, const endpoint& at) {
    const auto& res = checked(r, at);
    json j = json::parse(res.body, nullptr, false);
    if (j.is_discarded()) throw error(error_kind::internal, "service returned a non-JSON body", at.url());
    return j;
}

template <typename F>
auto decoding(const endpoint& at, F f) {
    try {
        return f();
    } catch (const json::exception& e) {
        throw error(error_kind::internal, "unexpected response shape", at.url() + ": " + e.what());
    }
}

}  // namespace

json error_body(const error& e) {
    return json{{"code", to_string(e.kind())}, {"message", e.what()}, {"detail", e.detail()}};
}

error error_from_response(int status, const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_object() && j.contains("code") && j["code"].is_string()) {
        auto kind = error_kind_from_code(j["code"].get<std::string>());
        std::string message = j.contains("message") && j["message"].is_string() ? j["message"].get<std::string>()
                                                                                : std::string("request failed");
        std::string detail = j.contains("detail") && j["detail"].is_string() ? j["detail"].get<std::string>() : "";
        return error(kind, message, detail);
    }
    return error(error_kind_from_status(status), "request failed with status " + std::to_string(status));
}

struct http_listener::impl {
    httplib::Server server;
    std::thread thread;
    endpoint bound;
};

http_listener::http_listener() : impl_(std::make_unique<impl>()) {
    auto& s = impl_->server;
    s.set_keep_alive_max_count(100000);
    s.set_keep_alive_timeout(2);
    s.set_read_timeout(30, 0);
    s.set_payload_max_length(64 * 1024 * 1024);
}

http_listener::~http_listener() { stop(); }

int http_listener::start(const std::string& host, int port) {
    auto& s = impl_->server;
    if (port == 0) {
        port = s.bind_to_any_port(host);
        if (port < 0) throw error(error_kind::unavailable, "cannot bind", host);
    } else if (!s.bind_to_port(host, port)) {
        throw error(error_kind::unavailable, "cannot bind", host + ":" + std::to_string(port));
    }
    impl_->bound = {host, port};
    impl_->thread = std::thread([&s] { s.listen_after_bind(); });
    s.wait_until_ready();
    return port;
}

void http_listener::stop() {
    if (!impl_) return;
    if (impl_->thread.joinable()) {
        impl_->server.stop();
        impl_->thread.join();
    }
}

bool http_listener::running() const { return impl_->server.is_running(); }

endpoint http_listener::bound() const { return impl_->bound; }

index_server::index_server(index::index_service& service) {
    auto& s = impl_->server;
    s.Get("/healthz", guarded([&service](const httplib::Request&, httplib::Response& res) {
              reply(res, 200, json{{"status", "ok"}, {"server_id", service.server_id()}});
          }));
    s.Post("/locate", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               auto query = index::locate_query_from_json(parse_body(req));
               auto result = service.locate(query, header(req, auth::doctor_token_header),
                                            header(req, auth::consent_token_header));
               reply(res, 200, to_json(result));
           }));
    s.Post("/index/upsert", guarded([&service](const httplib::Request& req, httplib::Response& res) {
               json body = parse_body(req);
               std::vector<index::index_entry> entries;
               for (const auto& e : body.at("entries")) entries.push_back(index::index_entry_from_json(e));
               auto applied = service.upsert_entries(entries, header(req, auth::node_token_header));
               reply(res, 200, json{{"applied", applied}});
           }));
    s.Get("/audit", guarded([&service](const httplib::Request& req, httplib::Response& res) {
              auto p = read_audit_params(req);
              auto rows = service.query_audit(p.ehr_id, p.from, p.to, header(req, auth::doctor_token_header));
              reply(res, 200, audit_json(service.server_id(), rows));
          }));
}

hospital_server::hospital_server(node::hospital_node& node) {
    auto& s = impl_->server;
    s.Get("/healthz", guarded([&node](const httplib::Request&, httplib::Response& res) {
              reply(res, 200, json{{"status", "ok"}, {"server_id", node.hospital_id()}});
          }));
    s.Post("/auth/login", guarded([&node](const httplib::Request& req, httplib::Response& res) {
               json body = parse_body(req);
               auto issued = node.login(body.at("doctor_id").get<std::string>(), body.at("secret").get<std::string>(),
                                        body.at("hospital_id").get<std::string>());
               reply(res, 200,
                     json{{"token", issued.token},
                          {"role", auth::to_string(issued.claims.doctor_role)},
                          {"hospital_id", issued.claims.hospital_id},
                          {"expires_at", issued.claims.expires_at.to_rfc3339()}});
           }));
    s.Post("/auth/consent", guarded([&node](const httplib::Request& req, httplib::Response& res) {
               auto doctor = header(req, auth::doctor_token_header);
               if (!doctor) throw error(error_kind::unauthenticated, "doctor token required");
               json body = parse_body(req);
               auth::consent_scope scope{timestamp::parse(body.at("scope_from").get<std::string>(), "scope_from"),
                                         timestamp::parse(body.at("scope_to").get<std::string>(), "scope_to"),
                                         body.contains("scope_types") ? types_from_json(body["scope_types"])
                                                                      : std::vector<core::ehr_type>{}};
               auto issued = node.grant_consent(body.at("scan").get<std::string>(), *doctor, scope);
               reply(res, 200,
                     json{{"token", issued.token},
                          {"patient_ref", issued.claims.patient.digest()},
                          {"expires_at", issued.claims.expires_at.to_rfc3339()}});
           }));
    s.Post("/transfer", guarded([&node](const httplib::Request& req, httplib::Response& res) {
               auto request = node::transfer_request_from_json(parse_body(req));
               auto outcome = node.transfer(request, header(req, auth::doctor_token_header),
                                            header(req, auth::consent_token_header));
               res.set_header(std::string(audit_event_header), std::to_string(outcome.audit_event_id));
               reply(res, 200, core::to_json(outcome.record));
           }));
    s.Post("/fanout", guarded([&node](const httplib::Request& req, httplib::Response& res) {
               auto doctor = header(req, auth::doctor_token_header);
               auto consent = header(req, auth::consent_token_header);
               auth::authorize_access(doctor, consent, node.auth().now(), node.auth().keys());
               json body = parse_body(req);
               std::vector<index::locate_row> rows;
               for (const auto& r : body.at("rows")) rows.push_back(index::locate_row_from_json(r));
               reply(res, 200, to_json(node.fanout_fetch(rows, *doctor, *consent)));
           }));
    s.Post("/sync/run", guarded([&node](const httplib::Request&, httplib::Response& res) {
               reply(res, 200, to_json(node.sync_run(node.auth().now())));
           }));
    s.Get("/audit", guarded([&node](const httplib::Request& req, httplib::Response& res) {
              auto p = read_audit_params(req);
              auto rows = node.query_audit(p.ehr_id, p.from, p.to, header(req, auth::doctor_token_header));
              reply(res, 200, audit_json(node.hospital_id(), rows));
          }));
}

index::locate_result index_client::locate(const index::locate_query& query,
                                          const std::optional<std::string>& doctor_token,
                                          const std::optional<std::string>& consent_token) const {
    auto c = make_client(at_, timeouts_);
    auto r = c->Post("/locate", token_headers(doctor_token, consent_token), core::canonical_json(to_json(query)),
                     "application/json");
    json j = checked_json(r, at_);
    return decoding(at_, [&] { return index::locate_result_from_json(j); });
}

index::locate_result index_client::locate_all(index::locate_query query, const std::string& doctor_token,
                                              const std::string& consent_token) const {
    query.cursor.reset();
    index::locate_result all;
    for (;;) {
        auto page = locate(query, doctor_token, consent_token);
        if (!all.audit_event_id) all.audit_event_id = page.audit_event_id;
        all.rows.insert(all.rows.end(), page.rows.begin(), page.rows.end());
        if (!page.next_cursor) break;
        query.cursor = page.next_cursor;
    }
    return all;
}

std::size_t index_client::upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) const {
    json list = json::array();
    for (const auto& e : entries) list.push_back(to_json(e));
    auto c = make_client(at_, timeouts_);
    httplib::Headers h{{std::string(auth::node_token_header), node_token}};
    auto r = c->Post("/index/upsert", h, core::canonical_json(json{{"entries", list}}), "application/json");
    json j = checked_json(r, at_);
    return decoding(at_, [&] { return j.at("applied").get<std::size_t>(); });
}

namespace {

audit_page fetch_audit(const endpoint& at, const client_timeouts& t, std::string_view ehr_id, const timestamp& from,
                       const timestamp& to, const std::optional<std::string>& admin_token) {
    auto c = make_client(at, t);
    httplib::Params params{{"ehr_id", std::string(ehr_id)}, {"from", from.to_rfc3339()}, {"to", to.to_rfc3339()}};
    auto r = c->Get("/audit", params, token_headers(admin_token, std::nullopt));
    json j = checked_json(r, at);
    return decoding(at, [&] { return audit_from_json(j); });
}

bool probe(const endpoint& at) {
    httplib::Client c(at.host, at.port);
    c.set_connection_timeout(std::chrono::milliseconds(500));
    c.set_read_timeout(std::chrono::seconds(2));
    auto r = c.Get("/healthz");
    return r && r->status == 200;
}

}  // namespace

audit_page index_client::audit(std::string_view ehr_id, const timestamp& from, const timestamp& to,
                               const std::optional<std::string>& admin_token) const {
    return fetch_audit(at_, timeouts_, ehr_id, from, to, admin_token);
}

bool index_client::healthy() const { return probe(at_); }

login_response hospital_client::login(std::string_view doctor_id, std::string_view secret,
                                      std::string_view hospital_id) const {
    auto c = make_client(at_, timeouts_);
    json body{{"doctor_id", doctor_id}, {"secret", secret}, {"hospital_id", hospital_id}};
    json j = checked_json(c->Post("/auth/login", core::canonical_json(body), "application/json"), at_);
    return decoding(at_, [&] {
        login_response out;
        out.token = j.at("token").get<std::string>();
        auto r = auth::parse_role(j.at("role").get<std::string>());
        if (!r) throw error(error_kind::internal, "unknown role in login response");
        out.doctor_role = *r;
        out.hospital_id = j.at("hospital_id").get<std::string>();
        out.expires_at = timestamp::parse(j.at("expires_at").get<std::string>(), "expires_at");
        return out;
    });
}

consent_response hospital_client::consent(std::string_view scan, const std::string& doctor_token,
                                          const auth::consent_scope& scope) const {
    auto c = make_client(at_, timeouts_);
    json body{{"scan", scan},
              {"scope_from", scope.from.to_rfc3339()},
              {"scope_to", scope.to.to_rfc3339()},
              {"scope_types", types_to_json(scope.types)}};
    json j = checked_json(c->Post("/auth/consent", token_headers(doctor_token, std::nullopt),
                                  core::canonical_json(body), "application/json"),
                          at_);
    return decoding(at_, [&] {
        consent_response out;
        out.token = j.at("token").get<std::string>();
        out.patient = core::patient_ref::parse(j.at("patient_ref").get<std::string>());
        out.expires_at = timestamp::parse(j.at("expires_at").get<std::string>(), "expires_at");
        return out;
    });
}

namespace {

node::transfer_outcome read_transfer(const httplib::Result& r, const endpoint& at) {
    const auto& res = checked(r, at);
    json j = json::parse(res.body, nullptr, false);
    if (j.is_discarded()) throw error(error_kind::internal, "transfer returned a non-JSON body", at.url());
    node::transfer_outcome out{core::unified_from_json(j), 0};
    auto id = res.get_header_value(std::string(audit_event_header));
    try {
        out.audit_event_id = std::stoull(id);
    } catch (const std::exception&) {
        throw error(error_kind::internal, "transfer response lacks an audit event id", at.url());
    }
    return out;
}

}  // namespace

node::transfer_outcome hospital_client::transfer(const node::transfer_request& request,
                                                 const std::optional<std::string>& doctor_token,
                                                 const std::optional<std::string>& consent_token) const {
    auto c = make_client(at_, timeouts_);
    auto r = c->Post("/transfer", token_headers(doctor_token, consent_token), core::canonical_json(to_json(request)),
                     "application/json");
    return read_transfer(r, at_);
}

node::fanout_result hospital_client::fanout(const std::vector<index::locate_row>& rows,
                                            const std::string& doctor_token, const std::string& consent_token) const {
    json list = json::array();
    for (const auto& row : rows) list.push_back(to_json(row));
    auto c = make_client(at_, timeouts_);
    auto r = c->Post("/fanout", token_headers(doctor_token, consent_token), core::canonical_json(json{{"rows", list}}),
                     "application/json");
    json j = checked_json(r, at_);
    return decoding(at_, [&] { return node::fanout_result_from_json(j); });
}

node::sync_report hospital_client::sync_run() const {
    auto c = make_client(at_, timeouts_);
    json j = checked_json(c->Post("/sync/run", "{}", "application/json"), at_);
    return decoding(at_, [&] { return node::sync_report_from_json(j); });
}

audit_page hospital_client::audit(std::string_view ehr_id, const timestamp& from, const timestamp& to,
                                  const std::optional<std::string>& admin_token) const {
    return fetch_audit(at_, timeouts_, ehr_id, from, to, admin_token);
}

bool hospital_client::healthy() const { return probe(at_); }

std::size_t http_index_sink::upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) {
    return client_.upsert(entries, node_token);
}

void http_peer_transport::set_peer(const std::string& hospital_id, endpoint at) {
    std::lock_guard lock(mutex_);
    peers_[hospital_id] = std::move(at);
}

std::vector<node::transfer_outcome> http_peer_transport::fetch(const std::string& hospital_id,
                                                               const std::vector<node::transfer_request>& requests,
                                                               const std::string& doctor_token,
                                                               const std::string& consent_token,
                                                               std::chrono::steady_clock::time_point deadline) {
    endpoint at;
    {
        std::lock_guard lock(mutex_);
        auto it = peers_.find(hospital_id);
        if (it == peers_.end()) throw error(error_kind::unavailable, "no address known for hospital", hospital_id);
        at = it->second;
    }

    httplib::Client c(at.host, at.port);
    c.set_keep_alive(true);
    auto headers = token_headers(doctor_token, consent_token);
    std::vector<node::transfer_outcome> out;
    out.reserve(requests.size());
    for (const auto& request : requests) {
        auto remaining = std::chrono::ceil<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (remaining.count() <= 0) throw error(error_kind::timeout, "transfer deadline passed", hospital_id);
        c.set_connection_timeout(remaining);
        c.set_read_timeout(remaining);
        c.set_write_timeout(remaining);
        auto r = c.Post("/transfer", headers, core::canonical_json(to_json(request)), "application/json");
        auto slack = std::chrono::milliseconds(20);
        if (!r && r.error() != httplib::Error::Connection && std::chrono::steady_clock::now() + slack >= deadline) {
            throw error(error_kind::timeout, "transfer deadline passed", hospital_id);
        }
        out.push_back(read_transfer(r, at));
    }
    return out;
}

}  // namespace fedehr::net
