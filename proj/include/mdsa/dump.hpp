#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mdsa {

// Immutable byte image of a captured memory region. Shared read-only
// between scan workers; all offsets elsewhere in the toolkit are
// relative to byte 0 of the image.
class MemoryDump {
public:
    MemoryDump(std::vector<uint8_t> bytes, uint64_t base_address,
               uint32_t page_size = 4096, std::string source_id = "");

    std::span<const uint8_t> bytes() const { return {data_->data(), data_->size()}; }
    size_t size() const { return data_->size(); }
    uint64_t base_address() const { return base_address_; }
    uint32_t page_size() const { return page_size_; }
    const std::string& source_id() const { return source_id_; }

    std::span<const uint8_t> slice(uint64_t offset, size_t len) const;

private:
    std::shared_ptr<const std::vector<uint8_t>> data_;
    uint64_t base_address_ = 0;
    uint32_t page_size_ = 4096;
    std::string source_id_;
};

MemoryDump load_dump(const std::string& path, uint64_t base_address,
                     uint32_t page_size = 4096);

// Sliding-window geometry. Default 256-byte windows advancing by 252,
// i.e. consecutive windows overlap by 4 bytes.
struct WindowConfig {
    size_t window_len = 256;
    size_t stride = 252;

    void validate(size_t dump_len) const;
};

// Number of full windows over a dump of `len` bytes; the trailing
// partial window is not emitted.
size_t window_count(size_t len, const WindowConfig& cfg);

inline uint64_t window_offset(size_t index, const WindowConfig& cfg) {
    return static_cast<uint64_t>(index) * cfg.stride;
}

// Visit every (offset, window bytes) pair in offset order.
template <typename Fn>
void for_each_window(std::span<const uint8_t> bytes, const WindowConfig& cfg, Fn&& fn) {
    cfg.validate(bytes.size());
    const size_t count = window_count(bytes.size(), cfg);
    for (size_t i = 0; i < count; ++i) {
        const uint64_t off = window_offset(i, cfg);
        fn(off, bytes.subspan(off, cfg.window_len));
    }
}

// Half-open byte interval [start, start + length).
struct ByteSpan {
    uint64_t start = 0;
    uint64_t length = 0;

    uint64_t end() const { return start + length; }
    bool operator==(const ByteSpan&) const = default;
};

struct ByteHistogram {
    std::array<uint64_t, 256> counts{};
    uint64_t total = 0;
};

ByteHistogram byte_histogram(std::span<const uint8_t> bytes);

// Declared-region manifest: the "known modules" view a scan compares
// against. Entries are kept sorted and non-overlapping.
struct RegionManifest {
    struct Entry {
        std::string name;
        uint64_t start = 0;
        uint64_t length = 0;
        std::string kind;
    };
    std::vector<Entry> entries;

    bool covers(uint64_t offset) const;
};

RegionManifest parse_manifest(const std::string& text);
RegionManifest load_manifest(const std::string& path);
std::string serialize_manifest(const RegionManifest& manifest);
void save_manifest(const RegionManifest& manifest, const std::string& path);

// FNV-1a, the content fingerprint used for dumps and canonical reports.
uint64_t fnv1a64(std::span<const uint8_t> bytes);
std::string fnv1a64_hex(std::span<const uint8_t> bytes);

} // namespace mdsa
