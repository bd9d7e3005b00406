#pragma once

#include "fedehr/audit/audit_log.hpp"
#include "fedehr/auth/token.hpp"
#include "fedehr/error.hpp"
#include "fedehr/index/patient_index.hpp"
#include "fedehr/node/hospital_node.hpp"

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace fedehr::net {

using core::json;

inline constexpr std::string_view audit_event_header = "X-Audit-Event-Id";

struct endpoint {
    std::string host = "127.0.0.1";
    int port = 0;

    std::string url() const { return "http://" + host + ":" + std::to_string(port); }
    friend bool operator==(const endpoint&, const endpoint&) = default;
};

/// Wire form of a failure: {code, message, detail}.
json error_body(const error& e);
/// Rebuilds the error a service reported. `body` may be empty or not JSON.
error error_from_response(int status, const std::string& body);

/// Background HTTP listener. Handlers never log request bodies.
class http_listener {
public:
    virtual ~http_listener();
    http_listener(const http_listener&) = delete;
    http_listener& operator=(const http_listener&) = delete;

    /// Binds (port 0 picks a free port) and serves on a background thread. Returns the port.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    void stop();
    bool running() const;
    endpoint bound() const;

protected:
    http_listener();
    struct impl;
    std::unique_ptr<impl> impl_;
};

/// `POST /locate`, `POST /index/upsert`, `GET /audit`, `GET /healthz`.
class index_server : public http_listener {
public:
    explicit index_server(index::index_service& service);
};

/// `POST /auth/login`, `POST /auth/consent`, `POST /transfer`, `POST /fanout`, `POST /sync/run`,
/// `GET /audit`, `GET /healthz`.
class hospital_server : public http_listener {
public:
    explicit hospital_server(node::hospital_node& node);
};

struct client_timeouts {
    std::chrono::milliseconds connect{2000};
    std::chrono::milliseconds read{60000};
};

struct audit_page {
    std::string server_id;
    std::vector<audit::audit_record> records;
};

class index_client {
public:
    explicit index_client(endpoint at, client_timeouts timeouts = {}) : at_(std::move(at)), timeouts_(timeouts) {}

    index::locate_result locate(const index::locate_query& query, const std::optional<std::string>& doctor_token,
                                const std::optional<std::string>& consent_token) const;
    /// Follows continuation cursors until the result is complete.
    index::locate_result locate_all(index::locate_query query, const std::string& doctor_token,
                                    const std::string& consent_token) const;
    std::size_t upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) const;
    audit_page audit(std::string_view ehr_id, const timestamp& from, const timestamp& to,
                     const std::optional<std::string>& admin_token) const;
    bool healthy() const;

    const endpoint& at() const noexcept { return at_; }

private:
    endpoint at_;
    client_timeouts timeouts_;
};

struct login_response {
    std::string token;
    auth::role doctor_role = auth::role::doctor;
    std::string hospital_id;
    timestamp expires_at;
};

struct consent_response {
    std::string token;
    core::patient_ref patient;
    timestamp expires_at;
};

class hospital_client {
public:
    explicit hospital_client(endpoint at, client_timeouts timeouts = {}) : at_(std::move(at)), timeouts_(timeouts) {}

    login_response login(std::string_view doctor_id, std::string_view secret, std::string_view hospital_id) const;
    consent_response consent(std::string_view scan, const std::string& doctor_token,
                             const auth::consent_scope& scope) const;
    node::transfer_outcome transfer(const node::transfer_request& request,
                                    const std::optional<std::string>& doctor_token,
                                    const std::optional<std::string>& consent_token) const;
    node::fanout_result fanout(const std::vector<index::locate_row>& rows, const std::string& doctor_token,
                               const std::string& consent_token) const;
    node::sync_report sync_run() const;
    audit_page audit(std::string_view ehr_id, const timestamp& from, const timestamp& to,
                     const std::optional<std::string>& admin_token) const;
    bool healthy() const;

    const endpoint& at() const noexcept { return at_; }

private:
    endpoint at_;
    client_timeouts timeouts_;
};

/// Pushes sync batches to a remote index service.
class http_index_sink : public node::index_sink {
public:
    explicit http_index_sink(endpoint index) : client_(std::move(index)) {}
    std::size_t upsert(const std::vector<index::index_entry>& entries, const std::string& node_token) override;

private:
    index_client client_;
};

/// Calls peer hospitals' `/transfer` over one kept-alive connection per fetch, giving up at the deadline.
class http_peer_transport : public node::peer_transport {
public:
    explicit http_peer_transport(std::map<std::string, endpoint> peers = {}) : peers_(std::move(peers)) {}

    void set_peer(const std::string& hospital_id, endpoint at);

    std::vector<node::transfer_outcome> fetch(const std::string& hospital_id,
                                              const std::vector<node::transfer_request>& requests,
                                              const std::string& doctor_token, const std::string& consent_token,
                                              std::chrono::steady_clock::time_point deadline) override;

private:
    std::mutex mutex_;
    std::map<std::string, endpoint> peers_;
};

}  // namespace fedehr::net
