#include "mdsa/dump.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mdsa {

MemoryDump::MemoryDump(std::vector<uint8_t> bytes, uint64_t base_address,
                       uint32_t page_size, std::string source_id)
    : data_(std::make_shared<const std::vector<uint8_t>>(std::move(bytes))),
      base_address_(base_address),
      page_size_(page_size),
      source_id_(std::move(source_id)) {
    if (data_->empty())
        throw std::invalid_argument("empty dump");
    if (page_size_ == 0 || !std::has_single_bit(page_size_))
        throw std::invalid_argument("page_size must be a power of two");
}

std::span<const uint8_t> MemoryDump::slice(uint64_t offset, size_t len) const {
    if (offset > size() || len > size() - offset)
        throw std::out_of_range("slice outside dump");
    return bytes().subspan(offset, len);
}

MemoryDump load_dump(const std::string& path, uint64_t base_address, uint32_t page_size) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open dump file: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                               std::istreambuf_iterator<char>());
    if (bytes.empty())
        throw std::runtime_error("empty dump: " + path);
    return MemoryDump(std::move(bytes), base_address, page_size, path);
}

void WindowConfig::validate(size_t dump_len) const {
    if (window_len == 0)
        throw std::invalid_argument("window_len must be positive");
    if (stride == 0 || stride > window_len)
        throw std::invalid_argument("stride must be in [1, window_len]");
    if (window_len > dump_len)
        throw std::invalid_argument("window_len exceeds dump length");
}

size_t window_count(size_t len, const WindowConfig& cfg) {
    cfg.validate(len);
    return (len - cfg.window_len) / cfg.stride + 1;
}

ByteHistogram byte_histogram(std::span<const uint8_t> bytes) {
    if (bytes.empty())
        throw std::invalid_argument("empty view");
    ByteHistogram h;
    for (uint8_t b : bytes)
        ++h.counts[b];
    h.total = bytes.size();
    return h;
}

bool RegionManifest::covers(uint64_t offset) const {
    for (const auto& e : entries)
        if (offset >= e.start && offset < e.start + e.length)
            return true;
    return false;
}

namespace {

uint64_t parse_hex(const std::string& tok, int line_no) {
    std::string_view sv = tok;
    if (sv.starts_with("0x") || sv.starts_with("0X"))
        sv.remove_prefix(2);
    uint64_t value = 0;
    auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), value, 16);
    if (ec != std::errc() || ptr != sv.data() + sv.size())
        throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                 ": bad hex field '" + tok + "'");
    return value;
}

} // namespace

RegionManifest parse_manifest(const std::string& text) {
    RegionManifest m;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.resize(hash);
        std::istringstream ls(line);
        std::string name, start_tok, len_tok, kind;
        if (!(ls >> name))
            continue; // blank line
        if (!(ls >> start_tok >> len_tok >> kind))
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": expected 'name start length kind'");
        std::string extra;
        if (ls >> extra)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": trailing field '" + extra + "'");
        RegionManifest::Entry e;
        e.name = name;
        e.start = parse_hex(start_tok, line_no);
        e.length = parse_hex(len_tok, line_no);
        e.kind = kind;
        if (e.length == 0)
            throw std::runtime_error("manifest line " + std::to_string(line_no) +
                                     ": zero-length entry");
        m.entries.push_back(std::move(e));
    }
    std::sort(m.entries.begin(), m.entries.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });
    for (size_t i = 1; i < m.entries.size(); ++i) {
        const auto& prev = m.entries[i - 1];
        if (m.entries[i].start < prev.start + prev.length)
            throw std::runtime_error("manifest entries overlap: '" + prev.name +
                                     "' and '" + m.entries[i].name + "'");
    }
    return m;
}

RegionManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open manifest: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_manifest(buf.str());
}

std::string serialize_manifest(const RegionManifest& manifest) {
    std::ostringstream out;
    out << "# name start length kind\n";
    out << std::hex;
    for (const auto& e : manifest.entries)
        out << e.name << " 0x" << e.start << " 0x" << e.length << ' ' << e.kind << '\n';
    return out.str();
}

void save_manifest(const RegionManifest& manifest, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw std::runtime_error("cannot write manifest: " + path);
    out << serialize_manifest(manifest);
}

uint64_t fnv1a64(std::span<const uint8_t> bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a64_hex(std::span<const uint8_t> bytes) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes)));
    return buf;
}

} // namespace mdsa
