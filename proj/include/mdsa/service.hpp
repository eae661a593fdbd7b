#pragma once

#include "mdsa/report.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

namespace mdsa {

inline constexpr char kFrameMagic[4] = {'M', 'D', 'S', 'A'};
inline constexpr uint8_t kFrameVersion = 1;
inline constexpr size_t kFrameHeaderLen = 10;
inline constexpr uint32_t kMaxFramePayload = 256u * 1024 * 1024;

enum class FrameCmd : uint8_t {
    ScanRequest = 0x01,
    ScanResponse = 0x81,
    Error = 0x7F,
};

// magic, version, command, payload_len (4 bytes big-endian), payload.
struct Frame {
    uint8_t version = kFrameVersion;
    FrameCmd command = FrameCmd::ScanRequest;
    std::vector<uint8_t> payload;
};

std::vector<uint8_t> encode_frame(const Frame& frame);
// Requires the exact frame: header plus payload_len payload bytes.
Frame decode_frame(std::span<const uint8_t> bytes);
// Total frame length announced by a complete 10-byte header.
size_t frame_length(std::span<const uint8_t> header);

// Raised for malformed client input; the server answers these with an
// ERROR frame instead of dropping the connection.
struct ServiceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Request payload layout: 4-byte big-endian config length, config
// JSON (see ScanRequestConfig), then the raw dump bytes.
std::vector<uint8_t> encode_scan_payload(const ScanRequestConfig& cfg,
                                         std::span<const uint8_t> dump_bytes);
// Runs the scan and returns the canonical report JSON as bytes.
std::vector<uint8_t> handle_scan_request(std::span<const uint8_t> payload);

struct ServeOptions {
    std::string bind_address = "127.0.0.1";
    uint16_t port = 7641; // 0 picks an ephemeral port
    size_t max_concurrent = 4;
    std::string request_log; // append-only log file; empty disables
    std::string report_dir;  // persist each report as report-<hash>.json; empty disables
};

// Name of the environment variable overriding the bind address, as
// "host:port".
inline constexpr const char* kBindEnvVar = "MDSA_BIND";

class ScanServer {
public:
    // Binds and listens immediately; MDSA_BIND overrides the address.
    explicit ScanServer(const ServeOptions& opts);
    ~ScanServer();

    ScanServer(const ScanServer&) = delete;
    ScanServer& operator=(const ScanServer&) = delete;

    uint16_t port() const { return port_; }

    void start(); // background accept loop plus handler pool
    void stop();  // graceful: in-flight requests finish, then threads join
    void run();   // start() and block until stop() is called elsewhere

private:
    void accept_loop();
    void handler_loop();
    void serve_connection(int fd);
    void persist_report(std::span<const uint8_t> report);
    void log_line(const std::string& line);

    ServeOptions opts_;
    int listen_fd_ = -1;
    uint16_t port_ = 0;
    std::atomic<bool> stopping_{false};
    std::thread acceptor_;
    std::vector<std::thread> handlers_;

    std::mutex mx_;
    std::condition_variable queue_cv_;
    std::vector<int> pending_; // accepted fds waiting for a handler
    std::mutex log_mx_;
};

// Test/client helpers: one connection per call.
Frame client_roundtrip(const std::string& host, uint16_t port, const Frame& request);
// Sends raw bytes; returns the first response frame, or nullopt if the
// server closed the connection without completing one.
std::optional<Frame> client_send_raw(const std::string& host, uint16_t port,
                                     std::span<const uint8_t> bytes);

} // namespace mdsa
