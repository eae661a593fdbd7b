#include "mdsa/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace mdsa {

namespace {

uint32_t read_be32(const uint8_t* p) {
    return (uint32_t(p[0]) << 24) | (uint32_t(p[1]) << 16) | (uint32_t(p[2]) << 8) |
           uint32_t(p[3]);
}

void write_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

bool known_command(uint8_t cmd) {
    return cmd == static_cast<uint8_t>(FrameCmd::ScanRequest) ||
           cmd == static_cast<uint8_t>(FrameCmd::ScanResponse) ||
           cmd == static_cast<uint8_t>(FrameCmd::Error);
}

void check_header(std::span<const uint8_t> header) {
    if (header.size() < kFrameHeaderLen)
        throw ServiceError("truncated frame header");
    if (std::memcmp(header.data(), kFrameMagic, 4) != 0)
        throw ServiceError("bad magic");
    if (header[4] != kFrameVersion)
        throw ServiceError("unsupported version");
    if (!known_command(header[5]))
        throw ServiceError("unknown command");
    if (read_be32(header.data() + 6) > kMaxFramePayload)
        throw ServiceError("length overflow");
}

} // namespace

std::vector<uint8_t> encode_frame(const Frame& frame) {
    if (frame.payload.size() > kMaxFramePayload)
        throw ServiceError("length overflow");
    std::vector<uint8_t> out;
    out.reserve(kFrameHeaderLen + frame.payload.size());
    out.insert(out.end(), kFrameMagic, kFrameMagic + 4);
    out.push_back(frame.version);
    out.push_back(static_cast<uint8_t>(frame.command));
    write_be32(out, static_cast<uint32_t>(frame.payload.size()));
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

size_t frame_length(std::span<const uint8_t> header) {
    check_header(header);
    return kFrameHeaderLen + read_be32(header.data() + 6);
}

Frame decode_frame(std::span<const uint8_t> bytes) {
    check_header(bytes);
    const uint32_t len = read_be32(bytes.data() + 6);
    if (bytes.size() != kFrameHeaderLen + len)
        throw ServiceError("truncated frame");
    Frame f;
    f.version = bytes[4];
    f.command = static_cast<FrameCmd>(bytes[5]);
    f.payload.assign(bytes.begin() + kFrameHeaderLen, bytes.end());
    return f;
}

std::vector<uint8_t> encode_scan_payload(const ScanRequestConfig& cfg,
                                         std::span<const uint8_t> dump_bytes) {
    const std::string config = serialize_scan_request_config(cfg);
    std::vector<uint8_t> out;
    out.reserve(4 + config.size() + dump_bytes.size());
    write_be32(out, static_cast<uint32_t>(config.size()));
    out.insert(out.end(), config.begin(), config.end());
    out.insert(out.end(), dump_bytes.begin(), dump_bytes.end());
    return out;
}

std::vector<uint8_t> handle_scan_request(std::span<const uint8_t> payload) {
    if (payload.size() < 4)
        throw ServiceError("request payload too short for config length");
    const uint32_t config_len = read_be32(payload.data());
    if (4ull + config_len > payload.size())
        throw ServiceError("config length exceeds payload");
    const std::string config_text(payload.begin() + 4, payload.begin() + 4 + config_len);

    ScanRequestConfig cfg;
    try {
        cfg = parse_scan_request_config(config_text);
    } catch (const std::exception& e) {
        throw ServiceError(std::string("malformed config: ") + e.what());
    }

    const std::span<const uint8_t> dump_bytes = payload.subspan(4 + config_len);
    if (dump_bytes.empty())
        throw ServiceError("empty dump");

    try {
        const MemoryDump dump(std::vector<uint8_t>(dump_bytes.begin(), dump_bytes.end()), 0,
                              4096, "remote");
        const ScanReport rep = run_scan(dump, cfg.manifest, cfg.scan);
        const std::string canon = canonical_report(rep);
        return std::vector<uint8_t>(canon.begin(), canon.end());
    } catch (const std::exception& e) {
        throw ServiceError(std::string("scan failed: ") + e.what());
    }
}

namespace {

// Blocking send of the whole buffer.
bool send_all(int fd, const uint8_t* data, size_t len) {
    size_t sent = 0;
    while (sent < len) {
        const ssize_t n = ::send(fd, data + sent, len - sent, MSG_NOSIGNAL);
        if (n <= 0) {
            if (n < 0 && (errno == EINTR || errno == EAGAIN))
                continue;
            return false;
        }
        sent += static_cast<size_t>(n);
    }
    return true;
}

// Reads until `want` bytes are buffered, polling so a stop flag is
// honored between chunks. Returns false on EOF/error/stop.
bool recv_exact(int fd, std::vector<uint8_t>& buf, size_t want,
                const std::atomic<bool>* stopping) {
    while (buf.size() < want) {
        pollfd pfd{fd, POLLIN, 0};
        const int pr = ::poll(&pfd, 1, 200);
        if (stopping && stopping->load() && pr <= 0)
            return false;
        if (pr < 0) {
            if (errno == EINTR)
                continue;
            return false;
        }
        if (pr == 0)
            continue;
        uint8_t chunk[64 * 1024];
        const size_t room = std::min(sizeof(chunk), want - buf.size());
        const ssize_t n = ::recv(fd, chunk, room, 0);
        if (n <= 0) {
            if (n < 0 && (errno == EINTR || errno == EAGAIN))
                continue;
            return false;
        }
        buf.insert(buf.end(), chunk, chunk + n);
    }
    return true;
}

bool send_frame(int fd, FrameCmd cmd, std::span<const uint8_t> payload) {
    Frame f;
    f.command = cmd;
    f.payload.assign(payload.begin(), payload.end());
    const std::vector<uint8_t> bytes = encode_frame(f);
    return send_all(fd, bytes.data(), bytes.size());
}

bool send_error(int fd, const std::string& message) {
    return send_frame(fd, FrameCmd::Error,
                      std::span(reinterpret_cast<const uint8_t*>(message.data()),
                                message.size()));
}

int connect_to(const std::string& host, uint16_t port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0)
        throw std::runtime_error("socket failed");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw std::runtime_error("bad host address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw std::runtime_error("connect failed: " + std::string(std::strerror(errno)));
    }
    return fd;
}

std::optional<Frame> read_one_frame(int fd) {
    std::vector<uint8_t> buf;
    if (!recv_exact(fd, buf, kFrameHeaderLen, nullptr))
        return std::nullopt;
    size_t total;
    try {
        total = frame_length(buf);
    } catch (const ServiceError&) {
        return std::nullopt;
    }
    if (!recv_exact(fd, buf, total, nullptr))
        return std::nullopt;
    return decode_frame(buf);
}

} // namespace

ScanServer::ScanServer(const ServeOptions& opts) : opts_(opts) {
    if (opts_.max_concurrent == 0)
        throw std::invalid_argument("max_concurrent must be >= 1");
    if (const char* bind_env = std::getenv(kBindEnvVar)) {
        const std::string value = bind_env;
        const auto colon = value.rfind(':');
        if (colon == std::string::npos)
            throw std::invalid_argument(std::string(kBindEnvVar) + " must be host:port");
        opts_.bind_address = value.substr(0, colon);
        opts_.port = static_cast<uint16_t>(std::stoul(value.substr(colon + 1)));
    }

    listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (listen_fd_ < 0)
        throw std::runtime_error("socket failed");
    const int one = 1;
    ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(opts_.port);
    if (::inet_pton(AF_INET, opts_.bind_address.c_str(), &addr.sin_addr) != 1) {
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("bad bind address: " + opts_.bind_address);
    }
    if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
        ::listen(listen_fd_, 64) != 0) {
        const std::string why = std::strerror(errno);
        ::close(listen_fd_);
        listen_fd_ = -1;
        throw std::runtime_error("cannot bind " + opts_.bind_address + ":" +
                                 std::to_string(opts_.port) + ": " + why);
    }
    sockaddr_in bound{};
    socklen_t blen = sizeof(bound);
    ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &blen);
    port_ = ntohs(bound.sin_port);
}

ScanServer::~ScanServer() {
    stop();
    if (listen_fd_ >= 0)
        ::close(listen_fd_);
}

void ScanServer::start() {
    stopping_.store(false);
    acceptor_ = std::thread([this] { accept_loop(); });
    for (size_t i = 0; i < opts_.max_concurrent; ++i)
        handlers_.emplace_back([this] { handler_loop(); });
}

void ScanServer::stop() {
    if (stopping_.exchange(true))
        return;
    queue_cv_.notify_all();
    if (acceptor_.joinable())
        acceptor_.join();
    for (auto& h : handlers_)
        if (h.joinable())
            h.join();
    handlers_.clear();
    std::lock_guard lk(mx_);
    for (int fd : pending_)
        ::close(fd);
    pending_.clear();
}

void ScanServer::run() {
    start();
    while (!stopping_.load())
        std::this_thread::sleep_for(std::chrono::milliseconds(50));
    stop();
}

void ScanServer::accept_loop() {
    // The pending queue is bounded; when full the acceptor simply waits,
    // which backpressures new clients onto the listen backlog.
    constexpr size_t kPendingCap = 256;
    while (!stopping_.load()) {
        {
            std::unique_lock lk(mx_);
            if (pending_.size() >= kPendingCap) {
                lk.unlock();
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
                continue;
            }
        }
        pollfd pfd{listen_fd_, POLLIN, 0};
        const int pr = ::poll(&pfd, 1, 200);
        if (pr <= 0)
            continue;
        const int fd = ::accept(listen_fd_, nullptr, nullptr);
        if (fd < 0)
            continue;
        {
            std::lock_guard lk(mx_);
            pending_.push_back(fd);
        }
        queue_cv_.notify_one();
    }
}

void ScanServer::handler_loop() {
    while (true) {
        int fd = -1;
        {
            std::unique_lock lk(mx_);
            queue_cv_.wait(lk, [&] { return stopping_.load() || !pending_.empty(); });
            if (pending_.empty())
                return; // stopping and drained
            fd = pending_.front();
            pending_.erase(pending_.begin());
        }
        serve_connection(fd);
        ::close(fd);
    }
}

void ScanServer::serve_connection(int fd) {
    while (!stopping_.load()) {
        std::vector<uint8_t> buf;
        if (!recv_exact(fd, buf, kFrameHeaderLen, &stopping_))
            return;

        size_t total = 0;
        try {
            total = frame_length(buf);
        } catch (const ServiceError& e) {
            // Corrupt header: the stream cannot be re-synchronized, so
            // answer and drop the connection.
            send_error(fd, e.what());
            log_line("error " + std::string(e.what()));
            return;
        }
        // Keep reading the announced frame while data flows, even during
        // a stop; only a stalled client is dropped, so an in-flight
        // request still gets its response.
        if (!recv_exact(fd, buf, total, &stopping_))
            return;

        Frame frame;
        try {
            frame = decode_frame(buf);
        } catch (const ServiceError& e) {
            send_error(fd, e.what());
            log_line("error " + std::string(e.what()));
            return;
        }

        if (frame.command != FrameCmd::ScanRequest) {
            send_error(fd, "unexpected command");
            log_line("error unexpected command");
            continue; // well-framed, connection stays usable
        }

        try {
            const std::vector<uint8_t> response = handle_scan_request(frame.payload);
            persist_report(response);
            if (!send_frame(fd, FrameCmd::ScanResponse, response))
                return;
            log_line("scan ok payload=" + std::to_string(frame.payload.size()) +
                     " response=" + std::to_string(response.size()));
        } catch (const std::exception& e) {
            if (!send_error(fd, e.what()))
                return;
            log_line("scan error " + std::string(e.what()));
        }
        if (stopping_.load())
            return;
    }
}

void ScanServer::persist_report(std::span<const uint8_t> report) {
    if (opts_.report_dir.empty())
        return;
    const std::string path = opts_.report_dir + "/report-" + fnv1a64_hex(report) + ".json";
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        log_line("persist failed " + path);
        return;
    }
    out.write(reinterpret_cast<const char*>(report.data()),
              static_cast<std::streamsize>(report.size()));
    log_line("persisted " + path);
}

void ScanServer::log_line(const std::string& line) {
    if (opts_.request_log.empty())
        return;
    const auto now = std::chrono::system_clock::now().time_since_epoch();
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
    std::lock_guard lk(log_mx_);
    std::ofstream out(opts_.request_log, std::ios::app);
    out << ms << ' ' << line << '\n';
}

// Both client helpers half-close the write side once the request is out, so a
// server waiting for bytes that will never come sees EOF instead of wedging a
// handler slot while the client in turn waits for a reply.
Frame client_roundtrip(const std::string& host, uint16_t port, const Frame& request) {
    const int fd = connect_to(host, port);
    const std::vector<uint8_t> bytes = encode_frame(request);
    if (!send_all(fd, bytes.data(), bytes.size())) {
        ::close(fd);
        throw std::runtime_error("send failed");
    }
    ::shutdown(fd, SHUT_WR);
    const auto reply = read_one_frame(fd);
    ::close(fd);
    if (!reply)
        throw std::runtime_error("connection closed before a full response frame");
    return *reply;
}

std::optional<Frame> client_send_raw(const std::string& host, uint16_t port,
                                     std::span<const uint8_t> bytes) {
    const int fd = connect_to(host, port);
    if (!send_all(fd, bytes.data(), bytes.size())) {
        ::close(fd);
        return std::nullopt;
    }
    ::shutdown(fd, SHUT_WR);
    auto reply = read_one_frame(fd);
    ::close(fd);
    return reply;
}

} // namespace mdsa
