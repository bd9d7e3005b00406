#include "fedehr/harness/federation.hpp"

#include "fedehr/error.hpp"

namespace fedehr::harness {

const net::endpoint& service_map::hospital(std::string_view id) const {
    auto it = hospitals.find(std::string(id));
    if (it == hospitals.end()) throw error(error_kind::not_found, "hospital has no address", std::string(id));
    return it->second;
}

service_map services_from(const topology& topo) {
    service_map m;
    m.index = {topo.index.host, topo.index.port};
    for (const auto& h : topo.hospitals) m.hospitals[h.id] = {h.host, h.port};
    return m;
}

index_host::index_host(const topology& topo, const launch_options& options) : host_(topo.index.host) {
    fs::create_directories(topo.index.state_dir);
    index_ = std::make_unique<index::patient_index>(topo.index.state_dir / "index.log", options.sync_writes);
    log_ = std::make_unique<audit::audit_log>(topo.index.state_dir / "audit.log", topo.index.id, options.clock,
                                              options.sync_writes);
    service_ = std::make_unique<index::index_service>(topo.index.id, *index_, *log_, load_key_ring(topo),
                                                      options.clock);
}

index_host::~index_host() { stop(); }

int index_host::start(int port) {
    server_ = std::make_unique<net::index_server>(*service_);
    return server_->start(host_, port);
}

void index_host::stop() {
    if (server_) server_->stop();
}

net::endpoint index_host::at() const { return server_ ? server_->bound() : net::endpoint{host_, 0}; }

hospital_host::hospital_host(const topology& topo, const std::string& hospital_id, const net::endpoint& index_at,
                             const launch_options& options, std::shared_ptr<legacy::mapping_registry> registry)
    : registry_(registry ? std::move(registry) : std::make_shared<legacy::mapping_registry>()) {
    const auto& cfg = topo.hospital(hospital_id);
    host_ = cfg.host;
    auto mapping = legacy::load_mapping_file(cfg.mapping);
    if (mapping.hospital_id != hospital_id) {
        throw error(error_kind::validation, "mapping file belongs to another hospital", cfg.mapping.string());
    }
    registry_->register_mapping(std::move(mapping));

    auto federation_key = load_key_file(topo.federation_key_file);
    auto credentials = auth::credential_store::load(cfg.credentials);
    if (credentials.hospital_id() != hospital_id) {
        throw error(error_kind::validation, "credential table belongs to another hospital", cfg.credentials.string());
    }
    auth::auth_service auth(hospital_id, load_key_file(cfg.signing_key_file), federation_key, std::move(credentials),
                            load_key_ring(topo), options.clock);

    sink_ = std::make_unique<net::http_index_sink>(index_at);
    node::node_options opts;
    opts.hospital_id = hospital_id;
    opts.state_dir = cfg.state_dir;
    opts.transfer_timeout = options.transfer_timeout;
    opts.sync_writes = options.sync_writes;
    node_ = std::make_unique<node::hospital_node>(std::move(opts), std::move(auth), registry_,
                                                  legacy::legacy_store(cfg.legacy_store, hospital_id),
                                                  std::move(federation_key), sink_.get(), &peers_, options.clock);
    for (const auto& peer : topo.hospitals) {
        if (peer.id != hospital_id) peers_.set_peer(peer.id, {peer.host, peer.port});
    }
}

hospital_host::~hospital_host() { stop(); }

int hospital_host::start(int port) {
    server_ = std::make_unique<net::hospital_server>(*node_);
    return server_->start(host_, port);
}

void hospital_host::stop() {
    if (server_) server_->stop();
}

net::endpoint hospital_host::at() const { return server_ ? server_->bound() : net::endpoint{host_, 0}; }

bool hospital_host::serving() const { return server_ && server_->running(); }

sync_scheduler::sync_scheduler(node::hospital_node& node, std::chrono::seconds interval) {
    thread_ = std::thread([this, &node, interval] {
        std::unique_lock lock(mutex_);
        while (!stopping_) {
            lock.unlock();
            try {
                node.sync_run(node.auth().now());
            } catch (const std::exception&) {
                // The next tick retries from the unchanged high-water mark.
            }
            lock.lock();
            wake_.wait_for(lock, interval, [this] { return stopping_; });
        }
    });
}

sync_scheduler::~sync_scheduler() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    wake_.notify_all();
    thread_.join();
}

federation::federation(const topology& topo, launch_options options)
    : topo_(topo), options_(std::move(options)), registry_(std::make_shared<legacy::mapping_registry>()) {
    index_ = std::make_unique<index_host>(topo_, options_);
    index_->start(options_.ephemeral_ports ? 0 : topo_.index.port);
    for (const auto& h : topo_.hospitals) {
        auto host = std::make_unique<hospital_host>(topo_, h.id, index_->at(), options_, registry_);
        host->start(options_.ephemeral_ports ? 0 : h.port);
        hospitals_.emplace(h.id, std::move(host));
    }
    for (auto& [id, host] : hospitals_) {
        for (const auto& [peer, other] : hospitals_) {
            if (peer != id) host->set_peer(peer, other->at());
        }
    }
}

federation::~federation() {
    for (auto& [_, host] : hospitals_) host->stop();
    index_->stop();
}

service_map federation::services() const {
    service_map m;
    m.index = index_->at();
    for (const auto& [id, host] : hospitals_) m.hospitals[id] = host->at();
    return m;
}

hospital_host& federation::hospital(std::string_view id) {
    auto it = hospitals_.find(id);
    if (it == hospitals_.end()) throw error(error_kind::not_found, "hospital not in federation", std::string(id));
    return *it->second;
}

std::map<std::string, node::sync_report> federation::sync_all() {
    std::map<std::string, node::sync_report> out;
    for (const auto& h : topo_.hospitals) {
        auto& n = hospital(h.id).node();
        out[h.id] = n.sync_run(n.auth().now());
    }
    return out;
}

void federation::stop_hospital(std::string_view id) { hospital(id).stop(); }

void federation::redirect_peer(const std::string& id, const net::endpoint& at) {
    for (auto& [other, host] : hospitals_) {
        if (other != id) host->set_peer(id, at);
    }
}

}  // namespace fedehr::harness
