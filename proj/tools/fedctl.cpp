// fedctl: seed fixtures, run a desk-scale federation, drive the see-doctor scenario, audit.
#include "fedehr/error.hpp"
#include "fedehr/harness/scenario.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <thread>

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace fedehr;
using harness::json;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_assertion = 1;
constexpr int exit_infra = 2;

struct globals {
    std::string topology;
    std::string out = "fixture";
    std::uint64_t seed = 42;
    std::size_t parallel = 1;

    fs::path topology_file() const { return topology.empty() ? fs::path(out) / "topology.json" : fs::path(topology); }
};

timestamp parse_day_or_instant(const std::string& text, bool end_of_day) {
    if (text.size() == 10) {
        int y = 0, m = 0, d = 0;
        if (std::sscanf(text.c_str(), "%4d-%2d-%2d", &y, &m, &d) == 3) {
            auto ts = end_of_day ? make_timestamp(y, m, d, 23, 59, 59, 8 * 60) : make_timestamp(y, m, d, 0, 0, 0, 8 * 60);
            if (ts) return *ts;
        }
        throw error(error_kind::validation, "bad date", text);
    }
    return timestamp::parse(text, "date");
}

std::vector<core::ehr_type> parse_types(const std::vector<std::string>& names) {
    std::vector<core::ehr_type> out;
    for (const auto& n : names) out.push_back(core::ehr_type_from_string(n));
    return out;
}

void write_file(const fs::path& file, const std::string& text) {
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    out << text;
    if (!out) throw error(error_kind::storage, "cannot write", file.string());
}

fs::path pid_file(const harness::topology& topo, const std::string& id) {
    return topo.base_dir / "state" / "pids" / (id + ".pid");
}

std::vector<std::pair<std::string, net::endpoint>> all_services(const harness::topology& topo) {
    std::vector<std::pair<std::string, net::endpoint>> out{{topo.index.id, {topo.index.host, topo.index.port}}};
    for (const auto& h : topo.hospitals) out.push_back({h.id, {h.host, h.port}});
    return out;
}

int cmd_seed(const globals& g, harness::seed_options o) {
    o.rng_seed = g.seed;
    auto m = harness::seed(g.out, o);
    std::cout << "seeded " << m.record_count() << " records for " << m.patients.size() << " patients across "
              << m.hospitals.size() << " hospitals into " << g.out << "\n"
              << "fingerprint " << harness::directory_fingerprint(g.out) << "\n";
    return exit_ok;
}

int serve(const globals& g, const std::string& id) {
    sigset_t set;
    sigemptyset(&set);
    sigaddset(&set, SIGINT);
    sigaddset(&set, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set, nullptr);

    auto topo = harness::load_topology(g.topology_file());
    harness::launch_options opts;
    opts.ephemeral_ports = false;
    std::unique_ptr<harness::index_host> index;
    std::unique_ptr<harness::hospital_host> hospital;
    std::unique_ptr<harness::sync_scheduler> scheduler;
    if (id == topo.index.id) {
        index = std::make_unique<harness::index_host>(topo, opts);
        index->start(topo.index.port);
    } else {
        const auto& cfg = topo.hospital(id);
        hospital = std::make_unique<harness::hospital_host>(topo, id, net::endpoint{topo.index.host, topo.index.port},
                                                            opts);
        hospital->start(cfg.port);
        scheduler = std::make_unique<harness::sync_scheduler>(hospital->node(),
                                                              std::chrono::seconds(topo.sync_interval_seconds));
    }
    std::cerr << id << " serving\n";
    int sig = 0;
    sigwait(&set, &sig);
    scheduler.reset();
    if (hospital) hospital->stop();
    if (index) index->stop();
    return exit_ok;
}

bool wait_healthy(const net::endpoint& at, std::chrono::seconds limit) {
    auto until = std::chrono::steady_clock::now() + limit;
    while (std::chrono::steady_clock::now() < until) {
        if (net::hospital_client(at).healthy()) return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(100));
    }
    return false;
}

int cmd_up(const globals& g) {
    auto topo = harness::load_topology(g.topology_file());
    fs::path self = fs::read_symlink("/proc/self/exe");
    fs::path topo_file = fs::absolute(g.topology_file());
    fs::create_directories(topo.base_dir / "state" / "pids");
    for (const auto& [id, at] : all_services(topo)) {
        if (at.port == 0) {
            std::cerr << "topology gives " << id << " no port; reseed with --base-port\n";
            return exit_infra;
        }
        fs::path log = topo.base_dir / "state" / (id + ".out");
        fs::create_directories(log.parent_path());
        pid_t pid = fork();
        if (pid < 0) {
            std::perror("fork");
            return exit_infra;
        }
        if (pid == 0) {
            setsid();
            int fd = ::open(log.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0640);
            if (fd >= 0) {
                dup2(fd, STDOUT_FILENO);
                dup2(fd, STDERR_FILENO);
                ::close(fd);
            }
            execl(self.c_str(), self.c_str(), "--topology", topo_file.c_str(), "serve", "--id", id.c_str(),
                  static_cast<char*>(nullptr));
            _exit(127);
        }
        write_file(pid_file(topo, id), std::to_string(pid) + "\n");
        if (!wait_healthy(at, std::chrono::seconds(15))) {
            std::cerr << id << " did not become healthy at " << at.url() << "\n";
            return exit_infra;
        }
        std::cout << id << " up at " << at.url() << " (pid " << pid << ")\n";
    }
    return exit_ok;
}

int cmd_down(const globals& g) {
    auto topo = harness::load_topology(g.topology_file());
    int rc = exit_ok;
    auto services = all_services(topo);
    for (auto it = services.rbegin(); it != services.rend(); ++it) {
        fs::path file = pid_file(topo, it->first);
        std::ifstream in(file);
        pid_t pid = 0;
        if (!(in >> pid) || pid <= 0) continue;
        in.close();
        if (::kill(pid, SIGTERM) == 0) {
            auto until = std::chrono::steady_clock::now() + std::chrono::seconds(10);
            while (::kill(pid, 0) == 0 && std::chrono::steady_clock::now() < until) {
                ::waitpid(pid, nullptr, WNOHANG);
                std::this_thread::sleep_for(std::chrono::milliseconds(50));
            }
            if (::kill(pid, 0) == 0) {
                std::cerr << it->first << " (pid " << pid << ") did not stop\n";
                rc = exit_infra;
                continue;
            }
        }
        fs::remove(file);
        std::cout << it->first << " down\n";
    }
    return rc;
}

bool busy(const node::sync_report& r) {
    return r.errors.size() == 1 && r.errors.front().reason == "sync already running";
}

int cmd_sync(const globals& g, const std::string& only) {
    auto topo = harness::load_topology(g.topology_file());
    int rc = exit_ok;
    for (const auto& h : topo.hospitals) {
        if (!only.empty() && h.id != only) continue;
        net::hospital_client client({h.host, h.port});
        auto report = client.sync_run();
        // The scheduler may be mid-run; wait for it instead of reporting the overlap.
        for (int tries = 0; tries < 300 && busy(report); ++tries) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
            report = client.sync_run();
        }
        std::cout << h.id << " " << to_json(report).dump() << "\n";
        if (!report.errors.empty()) rc = exit_infra;
    }
    return rc;
}

struct scenario_args {
    std::size_t patient = 0;
    std::size_t count = 0;
    std::string at = "HC";
    std::string from = "2010-01-01";
    std::string to = "2016-12-31";
    std::vector<std::string> types;
    std::vector<std::string> hospitals;
    std::string transcript;
    bool quiet = false;
};

int cmd_scenario(const globals& g, const scenario_args& a) {
    auto topo = harness::load_topology(g.topology_file());
    auto m = harness::load_manifest(topo.base_dir / "manifest.json");
    auto secrets = harness::load_secrets(topo.base_dir / "secrets.json");
    auto services = harness::services_from(topo);

    std::vector<harness::scenario_request> requests;
    if (a.count > 0) {
        requests = harness::scripted_scenarios(m, secrets, a.count, g.seed);
    } else {
        if (a.patient >= m.patients.size()) throw error(error_kind::validation, "no such patient in manifest");
        harness::scenario_request r;
        r.at_hospital = a.at;
        const auto& login = secrets.find(a.at, auth::role::doctor);
        r.doctor_id = login.doctor_id;
        r.secret = login.secret;
        r.scan = m.patients[a.patient].national_id;
        r.from = parse_day_or_instant(a.from, false);
        r.to = parse_day_or_instant(a.to, true);
        r.types = parse_types(a.types);
        r.hospitals = a.hospitals;
        requests.push_back(std::move(r));
    }

    auto results = harness::run_scenarios(services, requests, g.parallel);
    int rc = exit_ok;
    json all = json::array();
    for (std::size_t i = 0; i < results.size(); ++i) {
        const auto& r = results[i];
        if (!a.quiet) std::cout << harness::render_transcript(r);
        for (const auto& f : r.fetched.failures) {
            std::cout << "partial: " << f.hospital_id << " " << f.error_class << " (" << f.message << ")\n";
        }
        auto problems = harness::check_against_manifest(m, requests[i], r);
        for (const auto& p : problems) std::cout << "scenario " << i << ": " << p << "\n";
        if (!r.completed) {
            rc = std::max(rc, exit_infra);
        } else if (!problems.empty()) {
            rc = std::max(rc, exit_assertion);
        }
        all.push_back(to_json(r));
    }
    std::size_t records = 0;
    for (const auto& r : results) records += r.fetched.records.size();
    std::cout << results.size() << " scenario(s), " << records << " record(s) transferred\n";
    if (!a.transcript.empty()) write_file(a.transcript, (results.size() == 1 ? all[0] : all).dump(2) + "\n");
    return rc;
}

struct audit_args {
    std::string ehr_id;
    std::string from = "2000-01-01";
    std::string to = "2099-12-31";
    std::string hospital;
    std::string admin;
    std::string secret;
    std::string report;
};

int cmd_audit(const globals& g, const audit_args& a) {
    auto topo = harness::load_topology(g.topology_file());
    auto services = harness::services_from(topo);
    std::string hospital = a.hospital.empty() ? topo.hospitals.front().id : a.hospital;
    std::string admin = a.admin;
    std::string secret = a.secret;
    if (admin.empty() || secret.empty()) {
        auto secrets = harness::load_secrets(topo.base_dir / "secrets.json");
        const auto& login = admin.empty() ? secrets.find(hospital, auth::role::admin) : secrets.find_doctor(hospital, admin);
        if (admin.empty()) admin = login.doctor_id;
        if (secret.empty()) secret = login.secret;
    }
    auto login = net::hospital_client(services.hospital(hospital)).login(admin, secret, hospital);
    auto result = harness::federated_audit(services, a.ehr_id, parse_day_or_instant(a.from, false),
                                           parse_day_or_instant(a.to, true), login.token);
    std::cout << harness::render_audit_table(result);
    fs::path report = a.report.empty() ? topo.base_dir / ("audit_" + a.ehr_id + ".json") : fs::path(a.report);
    write_file(report, to_json(result).dump(2) + "\n");
    return result.failures.empty() ? exit_ok : exit_infra;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fedctl: desk-scale federated EHR exchange harness"};
    app.require_subcommand(1);
    globals g;
    app.add_option("--topology", g.topology, "Topology file (default <out>/topology.json)");
    app.add_option("--out", g.out, "Fixture directory");
    app.add_option("--seed", g.seed, "RNG seed for fixtures and scripted scenarios");
    app.add_option("--parallel", g.parallel, "Scenarios in flight at once")->check(CLI::Range(1, 64));

    harness::seed_options seed_opts;
    auto* seed_cmd = app.add_subcommand("seed", "Write a deterministic fixture");
    seed_cmd->add_option("--patients", seed_opts.patients);
    seed_cmd->add_option("--records", seed_opts.records);
    seed_cmd->add_option("--hospitals", seed_opts.hospitals)->delimiter(',');
    seed_cmd->add_option("--base-port", seed_opts.base_port, "Index port; hospitals follow (0 = ephemeral)");
    seed_cmd->add_option("--type-mix", seed_opts.type_mix, "Share of non-hemodialysis records");

    auto* up_cmd = app.add_subcommand("up", "Start every service as a local process");
    auto* down_cmd = app.add_subcommand("down", "Stop services started by up");

    std::string sync_id;
    auto* sync_cmd = app.add_subcommand("sync-now", "Trigger a sync run at each hospital");
    sync_cmd->add_option("--id", sync_id, "Only this hospital");

    scenario_args sargs;
    auto* scenario_cmd = app.add_subcommand("scenario", "Run a scripted scenario");
    scenario_cmd->require_subcommand(1);
    auto* see = scenario_cmd->add_subcommand("see-doctor", "Login, consent, locate and fan-out transfer");
    see->add_option("--patient", sargs.patient, "Manifest patient number");
    see->add_option("--count", sargs.count, "Run this many scripted scenarios instead");
    see->add_option("--at", sargs.at, "Requesting hospital");
    see->add_option("--from", sargs.from);
    see->add_option("--to", sargs.to);
    see->add_option("--types", sargs.types)->delimiter(',');
    see->add_option("--hospitals", sargs.hospitals)->delimiter(',');
    see->add_option("--transcript", sargs.transcript, "Write the transcript as JSON");
    see->add_flag("--quiet", sargs.quiet, "Only print the summary");

    audit_args aargs;
    auto* audit_cmd = app.add_subcommand("audit", "Federated audit query for one EHR id");
    audit_cmd->add_option("--ehr-id", aargs.ehr_id)->required();
    audit_cmd->add_option("--from", aargs.from);
    audit_cmd->add_option("--to", aargs.to);
    audit_cmd->add_option("--hospital", aargs.hospital, "Hospital the admin signs in at");
    audit_cmd->add_option("--admin", aargs.admin);
    audit_cmd->add_option("--secret", aargs.secret);
    audit_cmd->add_option("--report", aargs.report, "Machine-readable output file");

    std::string serve_id;
    auto* serve_cmd = app.add_subcommand("serve", "Run one service in the foreground");
    serve_cmd->group("");
    serve_cmd->add_option("--id", serve_id)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*seed_cmd) return cmd_seed(g, seed_opts);
        if (*up_cmd) return cmd_up(g);
        if (*down_cmd) return cmd_down(g);
        if (*sync_cmd) return cmd_sync(g, sync_id);
        if (*see) return cmd_scenario(g, sargs);
        if (*audit_cmd) return cmd_audit(g, aargs);
        if (*serve_cmd) return serve(g, serve_id);
    } catch (const error& e) {
        std::cerr << "fedctl: " << to_string(e.kind()) << ": " << e.what();
        if (!e.detail().empty()) std::cerr << " (" << e.detail() << ")";
        std::cerr << "\n";
        return exit_infra;
    } catch (const std::exception& e) {
        std::cerr << "fedctl: " << e.what() << "\n";
        return exit_infra;
    }
    return exit_infra;
}
