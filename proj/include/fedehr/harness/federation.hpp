#pragma once

#include "fedehr/harness/fixture.hpp"
#include "fedehr/net/http.hpp"

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <thread>

namespace fedehr::harness {

struct launch_options {
    /// Bind every listener to a free port instead of the topology's.
    bool ephemeral_ports = true;
    bool sync_writes = true;
    std::chrono::milliseconds transfer_timeout = node::default_transfer_timeout;
    clock_fn clock = system_now;
};

/// Addresses of a running federation.
struct service_map {
    net::endpoint index;
    std::map<std::string, net::endpoint> hospitals;

    const net::endpoint& hospital(std::string_view id) const;
};

/// Addresses as written in the topology file.
service_map services_from(const topology& topo);

/// The index server: patient index, its change log, audit log and HTTP listener.
class index_host {
public:
    index_host(const topology& topo, const launch_options& options);
    ~index_host();

    int start(int port);
    void stop();
    net::endpoint at() const;

    index::index_service& service() noexcept { return *service_; }
    index::patient_index& index() noexcept { return *index_; }
    audit::audit_log& log() noexcept { return *log_; }

private:
    std::unique_ptr<index::patient_index> index_;
    std::unique_ptr<audit::audit_log> log_;
    std::unique_ptr<index::index_service> service_;
    std::unique_ptr<net::index_server> server_;
    std::string host_;
};

/// One hospital node wired to the index over HTTP and to its peers through a transport.
class hospital_host {
public:
    /// Registers the hospital's own mapping into `registry`, or into a private one when null.
    hospital_host(const topology& topo, const std::string& hospital_id, const net::endpoint& index_at,
                  const launch_options& options, std::shared_ptr<legacy::mapping_registry> registry = nullptr);
    ~hospital_host();

    int start(int port);
    void stop();
    net::endpoint at() const;
    bool serving() const;

    void set_peer(const std::string& hospital_id, net::endpoint at) { peers_.set_peer(hospital_id, std::move(at)); }

    node::hospital_node& node() noexcept { return *node_; }

private:
    std::shared_ptr<legacy::mapping_registry> registry_;
    std::unique_ptr<net::http_index_sink> sink_;
    net::http_peer_transport peers_;
    std::unique_ptr<node::hospital_node> node_;
    std::unique_ptr<net::hospital_server> server_;
    std::string host_;
};

/// Runs sync on a fixed interval until destroyed; the first run happens immediately.
class sync_scheduler {
public:
    sync_scheduler(node::hospital_node& node, std::chrono::seconds interval);
    ~sync_scheduler();

private:
    std::mutex mutex_;
    std::condition_variable wake_;
    bool stopping_ = false;
    std::thread thread_;
};

/// Every service of a topology, in this process, on loopback.
class federation {
public:
    federation(const topology& topo, launch_options options = {});
    ~federation();

    const topology& topo() const noexcept { return topo_; }
    service_map services() const;

    index_host& index() { return *index_; }
    hospital_host& hospital(std::string_view id);
    /// One mapping per hospital, shared by the in-process nodes.
    const legacy::mapping_registry& registry() const { return *registry_; }

    /// Runs sync at every hospital in topology order.
    std::map<std::string, node::sync_report> sync_all();

    /// Closes a hospital's listener so peers see it as unreachable.
    void stop_hospital(std::string_view id);
    /// Makes every other hospital reach `id` at `at` instead.
    void redirect_peer(const std::string& id, const net::endpoint& at);

private:
    topology topo_;
    launch_options options_;
    std::shared_ptr<legacy::mapping_registry> registry_;
    std::unique_ptr<index_host> index_;
    std::map<std::string, std::unique_ptr<hospital_host>, std::less<>> hospitals_;
};

}  // namespace fedehr::harness
