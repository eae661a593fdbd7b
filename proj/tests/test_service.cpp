// Wire protocol and scan service: framing, request handling, socket
// round trips, connection error policy, persistence, and liveness.
#include <doctest.h>

#include "mdsa/evasion.hpp"
#include "mdsa/rng.hpp"
#include "mdsa/service.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

using namespace mdsa;

namespace {

std::vector<uint8_t> small_dump(uint64_t seed, size_t size = 64 * 1024) {
    return generate_payload(size, PayloadKind::Random, seed);
}

Frame scan_frame(std::span<const uint8_t> dump_bytes) {
    Frame f;
    f.command = FrameCmd::ScanRequest;
    f.payload = encode_scan_payload(ScanRequestConfig{}, dump_bytes);
    return f;
}

std::string payload_text(const Frame& f) {
    return std::string(f.payload.begin(), f.payload.end());
}

// Sends raw bytes, half-closes, then reads frames until the server
// closes the connection. Unlike client_send_raw this collects every
// response frame, which is what the keep-open policy tests need.
std::vector<Frame> raw_exchange(uint16_t port, std::span<const uint8_t> bytes) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    REQUIRE(fd >= 0);
    timeval tv{10, 0};
    ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    REQUIRE(::inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr) == 1);
    REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);

    size_t sent = 0;
    while (sent < bytes.size()) {
        const ssize_t n = ::send(fd, bytes.data() + sent, bytes.size() - sent, MSG_NOSIGNAL);
        REQUIRE(n > 0);
        sent += static_cast<size_t>(n);
    }
    ::shutdown(fd, SHUT_WR);

    std::vector<uint8_t> buf;
    uint8_t chunk[4096];
    for (;;) {
        const ssize_t n = ::recv(fd, chunk, sizeof(chunk), 0);
        if (n <= 0)
            break;
        buf.insert(buf.end(), chunk, chunk + n);
    }
    ::close(fd);

    std::vector<Frame> frames;
    size_t pos = 0;
    while (buf.size() - pos >= kFrameHeaderLen) {
        size_t total = 0;
        try {
            total = frame_length(std::span(buf).subspan(pos, kFrameHeaderLen));
        } catch (const ServiceError&) {
            break;
        }
        if (buf.size() - pos < total)
            break;
        frames.push_back(decode_frame(std::span(buf).subspan(pos, total)));
        pos += total;
    }
    return frames;
}

} // namespace

TEST_CASE("frame encoding is magic, version, command, be32 length, payload") {
    Frame f;
    f.command = FrameCmd::ScanResponse;
    f.payload = {0xDE, 0xAD, 0xBE};
    const std::vector<uint8_t> bytes = encode_frame(f);

    REQUIRE(bytes.size() == kFrameHeaderLen + 3);
    CHECK(bytes[0] == 'M');
    CHECK(bytes[1] == 'D');
    CHECK(bytes[2] == 'S');
    CHECK(bytes[3] == 'A');
    CHECK(bytes[4] == kFrameVersion);
    CHECK(bytes[5] == 0x81);
    CHECK(bytes[6] == 0);
    CHECK(bytes[7] == 0);
    CHECK(bytes[8] == 0);
    CHECK(bytes[9] == 3);
    CHECK(bytes[10] == 0xDE);
    CHECK(frame_length(std::span(bytes).first(kFrameHeaderLen)) == bytes.size());

    const Frame back = decode_frame(bytes);
    CHECK(back.version == f.version);
    CHECK(back.command == f.command);
    CHECK(back.payload == f.payload);
}

TEST_CASE("frame round trip fuzz") {
    Rng rng(0x46524d);
    const FrameCmd cmds[] = {FrameCmd::ScanRequest, FrameCmd::ScanResponse, FrameCmd::Error};
    for (int trial = 0; trial < 500; ++trial) {
        Frame f;
        f.command = cmds[rng.uniform(3)];
        f.payload.resize(rng.uniform(2000));
        for (auto& b : f.payload)
            b = rng.byte();
        const auto bytes = encode_frame(f);
        const Frame back = decode_frame(bytes);
        REQUIRE(back.command == f.command);
        REQUIRE(back.payload == f.payload);
        REQUIRE(frame_length(std::span(bytes).first(kFrameHeaderLen)) == bytes.size());
    }
}

TEST_CASE("frame validation rejects corrupt headers") {
    Frame f;
    f.payload = {1, 2, 3, 4};
    std::vector<uint8_t> good = encode_frame(f);

    CHECK_THROWS_WITH_AS(decode_frame(std::span(good).first(6)), "truncated frame header",
                         ServiceError);

    std::vector<uint8_t> magic = good;
    magic[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_frame(magic), "bad magic", ServiceError);

    std::vector<uint8_t> version = good;
    version[4] = 2;
    CHECK_THROWS_WITH_AS(decode_frame(version), "unsupported version", ServiceError);

    std::vector<uint8_t> cmd = good;
    cmd[5] = 0x02;
    CHECK_THROWS_WITH_AS(decode_frame(cmd), "unknown command", ServiceError);

    std::vector<uint8_t> overflow = good;
    overflow[6] = 0x10;
    overflow[7] = 0;
    overflow[8] = 0;
    overflow[9] = 1; // 256 MiB + 1
    CHECK_THROWS_WITH_AS(frame_length(std::span(overflow).first(kFrameHeaderLen)),
                         "length overflow", ServiceError);

    std::vector<uint8_t> short_body = good;
    short_body.pop_back();
    CHECK_THROWS_WITH_AS(decode_frame(short_body), "truncated frame", ServiceError);
    std::vector<uint8_t> long_body = good;
    long_body.push_back(0);
    CHECK_THROWS_WITH_AS(decode_frame(long_body), "truncated frame", ServiceError);
}

TEST_CASE("scan payload is config length, config json, dump bytes") {
    ScanRequestConfig cfg;
    cfg.scan.workers = 2;
    const std::vector<uint8_t> dump = {0xAA, 0xBB, 0xCC, 0xDD, 0xEE};
    const std::vector<uint8_t> payload = encode_scan_payload(cfg, dump);

    const std::string config = serialize_scan_request_config(cfg);
    REQUIRE(payload.size() == 4 + config.size() + dump.size());
    const uint32_t len = (uint32_t(payload[0]) << 24) | (uint32_t(payload[1]) << 16) |
                         (uint32_t(payload[2]) << 8) | uint32_t(payload[3]);
    CHECK(len == config.size());
    CHECK(std::string(payload.begin() + 4, payload.begin() + 4 + config.size()) == config);
    CHECK(std::equal(dump.begin(), dump.end(), payload.begin() + 4 + config.size()));
}

TEST_CASE("scan requests produce the canonical report bytes") {
    const std::vector<uint8_t> dump = small_dump(17);
    const std::vector<uint8_t> payload = encode_scan_payload(ScanRequestConfig{}, dump);
    const std::vector<uint8_t> response = handle_scan_request(payload);

    const MemoryDump local(std::vector<uint8_t>(dump), 0, 4096, "remote");
    const ScanReport rep = run_scan(local, RegionManifest{}, ScanConfig{});
    CHECK(std::string(response.begin(), response.end()) == canonical_report(rep));
}

TEST_CASE("scan request validation") {
    CHECK_THROWS_WITH_AS(handle_scan_request(std::vector<uint8_t>{1, 2}),
                         "request payload too short for config length", ServiceError);

    const std::vector<uint8_t> hungry = {0, 0, 0, 10};
    CHECK_THROWS_WITH_AS(handle_scan_request(hungry), "config length exceeds payload",
                         ServiceError);

    std::vector<uint8_t> bad_config = {0, 0, 0, 3, 'w', 'a', 't'};
    bad_config.push_back(0x90);
    try {
        handle_scan_request(bad_config);
        FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
        CHECK(std::string(e.what()).starts_with("malformed config: "));
    }

    const std::vector<uint8_t> no_dump = encode_scan_payload(ScanRequestConfig{}, {});
    CHECK_THROWS_WITH_AS(handle_scan_request(no_dump), "empty dump", ServiceError);

    ScanRequestConfig zero_window;
    zero_window.scan.window.window_len = 0;
    const std::vector<uint8_t> dump(1024, 0x41);
    try {
        handle_scan_request(encode_scan_payload(zero_window, dump));
        FAIL("expected ServiceError");
    } catch (const ServiceError& e) {
        CHECK(std::string(e.what()).starts_with("scan failed: "));
    }
}

TEST_CASE("server answers a scan over a real socket and persists the report") {
    const auto dir = std::filesystem::temp_directory_path() / "mdsa_test_reports";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    const auto log_path = std::filesystem::temp_directory_path() / "mdsa_test_requests.log";
    std::filesystem::remove(log_path);

    ServeOptions opts;
    opts.port = 0;
    opts.request_log = log_path.string();
    opts.report_dir = dir.string();
    ScanServer server(opts);
    server.start();
    REQUIRE(server.port() != 0);

    const std::vector<uint8_t> dump = small_dump(5);
    const Frame request = scan_frame(dump);
    const Frame reply = client_roundtrip("127.0.0.1", server.port(), request);
    CHECK(reply.command == FrameCmd::ScanResponse);
    CHECK(reply.payload == handle_scan_request(request.payload));

    // Same request again: byte-identical response.
    const Frame again = client_roundtrip("127.0.0.1", server.port(), request);
    CHECK(again.payload == reply.payload);

    server.stop();
    server.stop(); // idempotent

    const auto persisted = dir / ("report-" + fnv1a64_hex(reply.payload) + ".json");
    REQUIRE(std::filesystem::exists(persisted));
    std::ifstream in(persisted, std::ios::binary);
    const std::string stored((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
    CHECK(stored == std::string(reply.payload.begin(), reply.payload.end()));

    std::ifstream log(log_path);
    const std::string logged((std::istreambuf_iterator<char>(log)),
                             std::istreambuf_iterator<char>());
    CHECK(logged.find("scan ok") != std::string::npos);
    CHECK(logged.find("persisted") != std::string::npos);

    std::filesystem::remove_all(dir);
    std::filesystem::remove(log_path);
}

TEST_CASE("malformed client input follows the close policy") {
    ServeOptions opts;
    opts.port = 0;
    ScanServer server(opts);
    server.start();

    SUBCASE("well-framed unexpected command keeps the connection open") {
        Frame wrong;
        wrong.command = FrameCmd::ScanResponse;
        wrong.payload = {1, 2, 3};
        std::vector<uint8_t> stream = encode_frame(wrong);
        const std::vector<uint8_t> follow = encode_frame(scan_frame(small_dump(9, 8192)));
        stream.insert(stream.end(), follow.begin(), follow.end());

        const std::vector<Frame> replies = raw_exchange(server.port(), stream);
        REQUIRE(replies.size() == 2);
        CHECK(replies[0].command == FrameCmd::Error);
        CHECK(payload_text(replies[0]) == "unexpected command");
        CHECK(replies[1].command == FrameCmd::ScanResponse);
    }

    SUBCASE("corrupt header answers one error and closes") {
        std::vector<uint8_t> garbage(32, 'X');
        const std::vector<uint8_t> follow = encode_frame(scan_frame(small_dump(9, 8192)));
        garbage.insert(garbage.end(), follow.begin(), follow.end());

        const std::vector<Frame> replies = raw_exchange(server.port(), garbage);
        REQUIRE(replies.size() == 1);
        CHECK(replies[0].command == FrameCmd::Error);
        CHECK(payload_text(replies[0]) == "bad magic");
    }

    SUBCASE("truncated body closes silently") {
        std::vector<uint8_t> partial = encode_frame(scan_frame(small_dump(9, 8192)));
        partial.resize(partial.size() / 2);
        CHECK(raw_exchange(server.port(), partial).empty());
    }

    SUBCASE("pipelined requests all get answered") {
        const std::vector<uint8_t> one = encode_frame(scan_frame(small_dump(9, 8192)));
        std::vector<uint8_t> stream = one;
        stream.insert(stream.end(), one.begin(), one.end());
        const std::vector<Frame> replies = raw_exchange(server.port(), stream);
        REQUIRE(replies.size() == 2);
        CHECK(replies[0].command == FrameCmd::ScanResponse);
        CHECK(replies[0].payload == replies[1].payload);
    }

    SUBCASE("malformed scan payload answers an error and keeps serving") {
        Frame bad;
        bad.command = FrameCmd::ScanRequest;
        bad.payload = {0, 0, 0, 99};
        std::vector<uint8_t> stream = encode_frame(bad);
        const std::vector<uint8_t> follow = encode_frame(scan_frame(small_dump(9, 8192)));
        stream.insert(stream.end(), follow.begin(), follow.end());

        const std::vector<Frame> replies = raw_exchange(server.port(), stream);
        REQUIRE(replies.size() == 2);
        CHECK(replies[0].command == FrameCmd::Error);
        CHECK(payload_text(replies[0]) == "config length exceeds payload");
        CHECK(replies[1].command == FrameCmd::ScanResponse);
    }

    server.stop();
}

TEST_CASE("concurrent clients get independent reports") {
    ServeOptions opts;
    opts.port = 0;
    opts.max_concurrent = 4;
    ScanServer server(opts);
    server.start();

    const std::vector<uint8_t> dump_a = generate_payload(32 * 1024, PayloadKind::Random, 1);
    const std::vector<uint8_t> dump_b = generate_payload(48 * 1024, PayloadKind::Text, 2);
    Frame reply_a, reply_b;
    std::thread ta([&] { reply_a = client_roundtrip("127.0.0.1", server.port(), scan_frame(dump_a)); });
    std::thread tb([&] { reply_b = client_roundtrip("127.0.0.1", server.port(), scan_frame(dump_b)); });
    ta.join();
    tb.join();
    server.stop();

    REQUIRE(reply_a.command == FrameCmd::ScanResponse);
    REQUIRE(reply_b.command == FrameCmd::ScanResponse);
    CHECK(reply_a.payload == handle_scan_request(encode_scan_payload({}, dump_a)));
    CHECK(reply_b.payload == handle_scan_request(encode_scan_payload({}, dump_b)));
    const ScanReport rep_a = parse_report(payload_text(reply_a));
    const ScanReport rep_b = parse_report(payload_text(reply_b));
    CHECK(rep_a.dump_len == dump_a.size());
    CHECK(rep_b.dump_len == dump_b.size());
}

TEST_CASE("more clients than handler slots all complete") {
    ServeOptions opts;
    opts.port = 0;
    opts.max_concurrent = 2;
    ScanServer server(opts);
    server.start();

    std::vector<std::thread> clients;
    std::vector<int> ok(6, 0);
    for (size_t i = 0; i < ok.size(); ++i) {
        clients.emplace_back([&, i] {
            const Frame reply =
                client_roundtrip("127.0.0.1", server.port(), scan_frame(small_dump(i, 8192)));
            ok[i] = reply.command == FrameCmd::ScanResponse;
        });
    }
    for (auto& c : clients)
        c.join();
    server.stop();
    for (size_t i = 0; i < ok.size(); ++i)
        CHECK(ok[i] == 1);
}

TEST_CASE("bind environment variable overrides the options") {
    REQUIRE(::setenv(kBindEnvVar, "127.0.0.1:0", 1) == 0);
    ServeOptions opts;
    opts.port = 7641;
    try {
        ScanServer server(opts);
        ::unsetenv(kBindEnvVar);
        server.start();
        CHECK(server.port() != 0);
        CHECK(server.port() != 7641); // ephemeral pick, not the config port

        const Frame reply =
            client_roundtrip("127.0.0.1", server.port(), scan_frame(small_dump(3, 8192)));
        CHECK(reply.command == FrameCmd::ScanResponse);
    } catch (...) {
        ::unsetenv(kBindEnvVar);
        throw;
    }

    REQUIRE(::setenv(kBindEnvVar, "localhost", 1) == 0); // missing port
    CHECK_THROWS_AS(ScanServer{ServeOptions{}}, std::invalid_argument);
    ::unsetenv(kBindEnvVar);

    ServeOptions zero;
    zero.max_concurrent = 0;
    CHECK_THROWS_AS(ScanServer{zero}, std::invalid_argument);
}
