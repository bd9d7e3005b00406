#pragma once

#include "fedehr/crypto.hpp"
#include "fedehr/timestamp.hpp"

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

namespace fedehr::support {

namespace fs = std::filesystem;

/// Fresh directory removed on destruction. FEDEHR_KEEP_SCRATCH=1 keeps it for inspection.
class scratch_dir {
public:
    explicit scratch_dir(const std::string& tag) {
        static std::atomic<int> counter{0};
        fs::path base = fs::temp_directory_path();
        if (const char* env = std::getenv("FEDEHR_SCRATCH")) base = env;
        path_ = base / ("fedehr-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~scratch_dir() {
        const char* keep = std::getenv("FEDEHR_KEEP_SCRATCH");
        std::error_code ec;
        if (keep == nullptr || std::string(keep) != "1") fs::remove_all(path_, ec);
    }
    scratch_dir(const scratch_dir&) = delete;
    scratch_dir& operator=(const scratch_dir&) = delete;

    const fs::path& path() const noexcept { return path_; }
    fs::path operator/(const std::string& rel) const { return path_ / rel; }

private:
    fs::path path_;
};

/// Clock the test moves by hand.
class manual_clock {
public:
    explicit manual_clock(timestamp start) : now_(std::make_shared<std::atomic<std::int64_t>>(start.utc_seconds)) {}

    clock_fn fn() const {
        auto now = now_;
        return [now] { return timestamp::from_utc_seconds(now->load()); };
    }
    timestamp now() const { return timestamp::from_utc_seconds(now_->load()); }
    void advance(std::int64_t seconds) { *now_ += seconds; }

private:
    std::shared_ptr<std::atomic<std::int64_t>> now_;
};

inline crypto::secret_key sequential_key(std::uint8_t first = 0) {
    std::array<std::uint8_t, crypto::secret_key::size> bytes{};
    for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = static_cast<std::uint8_t>(first + i);
    return crypto::secret_key(bytes);
}

inline std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline timestamp macau(int y, int mo, int d, int h = 0, int mi = 0, int s = 0) {
    return *make_timestamp(y, mo, d, h, mi, s, 8 * 60);
}

/// Loopback socket that completes the TCP handshake but never answers.
class silent_listener {
public:
    silent_listener() {
        fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        ::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr);
        ::listen(fd_, 64);
        socklen_t len = sizeof addr;
        ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
        port_ = ntohs(addr.sin_port);
    }
    ~silent_listener() { ::close(fd_); }
    silent_listener(const silent_listener&) = delete;
    silent_listener& operator=(const silent_listener&) = delete;

    int port() const noexcept { return port_; }

private:
    int fd_ = -1;
    int port_ = 0;
};

}  // namespace fedehr::support
