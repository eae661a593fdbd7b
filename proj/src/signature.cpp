#include "mdsa/signature.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mdsa {

namespace {

uint16_t read_le16(std::span<const uint8_t> b, size_t at) {
    return static_cast<uint16_t>(b[at] | (b[at + 1] << 8));
}

uint32_t read_le32(std::span<const uint8_t> b, size_t at) {
    return static_cast<uint32_t>(b[at]) | (static_cast<uint32_t>(b[at + 1]) << 8) |
           (static_cast<uint32_t>(b[at + 2]) << 16) | (static_cast<uint32_t>(b[at + 3]) << 24);
}

bool is_pow2(size_t v) {
    return v != 0 && (v & (v - 1)) == 0;
}

bool masked_match(std::span<const uint8_t> bytes, size_t at, const Signature& sig) {
    for (size_t j = 0; j < sig.pattern.size(); ++j)
        if (((bytes[at + j] ^ sig.pattern[j]) & sig.mask[j]) != 0)
            return false;
    return true;
}

} // namespace

std::string sig_kind_name(SigKind kind) {
    switch (kind) {
    case SigKind::Exact: return "exact";
    case SigKind::Masked: return "masked";
    case SigKind::Tag: return "tag";
    case SigKind::Bitmask: return "bitmask";
    }
    throw std::logic_error("bad SigKind");
}

SigKind sig_kind_from_name(const std::string& name) {
    if (name == "exact") return SigKind::Exact;
    if (name == "masked") return SigKind::Masked;
    if (name == "tag") return SigKind::Tag;
    if (name == "bitmask") return SigKind::Bitmask;
    throw std::invalid_argument("unknown signature kind: " + name);
}

void Signature::validate() const {
    if (id.empty())
        throw std::invalid_argument("signature id empty");
    if (pattern.empty())
        throw std::invalid_argument("signature '" + id + "': empty pattern");
    const bool needs_mask = kind == SigKind::Masked || kind == SigKind::Bitmask;
    if (needs_mask && mask.size() != pattern.size())
        throw std::invalid_argument("signature '" + id + "': mask length must equal pattern length");
    if (!needs_mask && !mask.empty())
        throw std::invalid_argument("signature '" + id + "': mask not allowed for " + sig_kind_name(kind));
    if (!is_pow2(alignment))
        throw std::invalid_argument("signature '" + id + "': alignment must be a power of two");
}

SignatureSet SignatureSet::compile(std::vector<Signature> signatures) {
    SignatureSet set;
    set.sigs_ = std::move(signatures);

    for (size_t i = 0; i < set.sigs_.size(); ++i) {
        set.sigs_[i].validate();
        for (size_t j = i + 1; j < set.sigs_.size(); ++j)
            if (set.sigs_[i].id == set.sigs_[j].id)
                throw std::invalid_argument("duplicate signature id: " + set.sigs_[i].id);
        set.max_len_ = std::max(set.max_len_, set.sigs_[i].pattern.size());
    }

    // Trie over exact/tag patterns, then BFS fail links folded into a
    // dense goto table so scanning is one table lookup per byte.
    std::vector<std::array<int32_t, 256>> trie(1);
    trie[0].fill(-1);
    std::vector<std::vector<uint32_t>> out(1);
    for (uint32_t si = 0; si < set.sigs_.size(); ++si) {
        const Signature& sig = set.sigs_[si];
        if (sig.kind == SigKind::Masked || sig.kind == SigKind::Bitmask) {
            set.verify_sigs_.push_back(si);
            continue;
        }
        int32_t node = 0;
        for (uint8_t b : sig.pattern) {
            if (trie[static_cast<size_t>(node)][b] < 0) {
                trie[static_cast<size_t>(node)][b] = static_cast<int32_t>(trie.size());
                trie.emplace_back().fill(-1);
                out.emplace_back();
            }
            node = trie[static_cast<size_t>(node)][b];
        }
        out[static_cast<size_t>(node)].push_back(si);
    }

    std::vector<int32_t> fail(trie.size(), 0);
    std::vector<int32_t> queue;
    queue.reserve(trie.size());
    for (int c = 0; c < 256; ++c) {
        int32_t& child = trie[0][static_cast<size_t>(c)];
        if (child < 0) {
            child = 0;
        } else {
            fail[static_cast<size_t>(child)] = 0;
            queue.push_back(child);
        }
    }
    for (size_t head = 0; head < queue.size(); ++head) {
        const int32_t node = queue[head];
        const auto& fo = out[static_cast<size_t>(fail[static_cast<size_t>(node)])];
        out[static_cast<size_t>(node)].insert(out[static_cast<size_t>(node)].end(), fo.begin(), fo.end());
        for (int c = 0; c < 256; ++c) {
            int32_t& child = trie[static_cast<size_t>(node)][static_cast<size_t>(c)];
            const int32_t via_fail = trie[static_cast<size_t>(fail[static_cast<size_t>(node)])][static_cast<size_t>(c)];
            if (child < 0) {
                child = via_fail;
            } else {
                fail[static_cast<size_t>(child)] = via_fail;
                queue.push_back(child);
            }
        }
    }

    set.nodes_.resize(trie.size());
    for (size_t i = 0; i < trie.size(); ++i) {
        set.nodes_[i].next = trie[i];
        set.nodes_[i].out = std::move(out[i]);
    }
    return set;
}

std::vector<Match> SignatureSet::scan(std::span<const uint8_t> bytes, uint64_t base_offset) const {
    std::vector<Match> matches;
    int32_t state = 0;
    for (size_t i = 0; i < bytes.size(); ++i) {
        state = nodes_[static_cast<size_t>(state)].next[bytes[i]];
        for (uint32_t si : nodes_[static_cast<size_t>(state)].out) {
            const Signature& sig = sigs_[si];
            const size_t start = i + 1 - sig.pattern.size();
            const uint64_t abs = base_offset + start;
            if (abs % sig.alignment == 0)
                matches.push_back({sig.id, abs, sig.pattern.size()});
        }
        for (uint32_t si : verify_sigs_) {
            const Signature& sig = sigs_[si];
            const uint64_t abs = base_offset + i;
            if (abs % sig.alignment != 0 || i + sig.pattern.size() > bytes.size())
                continue;
            if (masked_match(bytes, i, sig))
                matches.push_back({sig.id, abs, sig.pattern.size()});
        }
    }
    std::sort(matches.begin(), matches.end(), [](const Match& a, const Match& b) {
        return a.offset != b.offset ? a.offset < b.offset : a.signature_id < b.signature_id;
    });
    return matches;
}

std::vector<Match> SignatureSet::scan(const MemoryDump& dump) const {
    return scan(dump.bytes(), 0);
}

std::vector<Match> scan_bitmask(std::span<const uint8_t> bytes, const Signature& sig,
                                uint64_t base_offset) {
    sig.validate();
    if (sig.mask.size() != sig.pattern.size())
        throw std::invalid_argument("scan_bitmask requires a care mask");
    std::vector<Match> matches;
    if (bytes.size() < sig.pattern.size())
        return matches;
    for (size_t i = 0; i + sig.pattern.size() <= bytes.size(); ++i) {
        const uint64_t abs = base_offset + i;
        if (abs % sig.alignment != 0)
            continue;
        if (masked_match(bytes, i, sig))
            matches.push_back({sig.id, abs, sig.pattern.size()});
    }
    return matches;
}

double kernel_pointer_density(std::span<const uint8_t> bytes, size_t width) {
    if (width < 4)
        throw std::invalid_argument("pointer width must be at least 4");
    if (bytes.size() < width)
        throw std::invalid_argument("view shorter than pointer width");
    size_t positions = 0, high = 0;
    for (size_t at = 0; at + 4 <= bytes.size(); at += width) {
        ++positions;
        if (read_le32(bytes, at) >= 0x80000000u)
            ++high;
    }
    return static_cast<double>(high) / static_cast<double>(positions);
}

std::vector<PeCandidate> pe_header_scan(std::span<const uint8_t> bytes) {
    std::vector<PeCandidate> found;
    if (bytes.size() < 0x40)
        return found;
    for (size_t i = 0; i + 0x40 <= bytes.size(); ++i) {
        if (bytes[i] != 'M' || bytes[i + 1] != 'Z')
            continue;
        const uint64_t pe_at = static_cast<uint64_t>(i) + read_le32(bytes, i + 0x3C);
        if (pe_at + 8 > bytes.size())
            continue;
        if (bytes[pe_at] != 'P' || bytes[pe_at + 1] != 'E' || bytes[pe_at + 2] != 0 ||
            bytes[pe_at + 3] != 0)
            continue;
        PeCandidate cand;
        cand.offset = i;
        cand.pe_offset = pe_at;
        cand.machine = read_le16(bytes, static_cast<size_t>(pe_at) + 4);
        cand.section_count = read_le16(bytes, static_cast<size_t>(pe_at) + 6);
        if (cand.section_count < 1 || cand.section_count > 96)
            continue;
        found.push_back(cand);
    }
    return found;
}

std::vector<PeCandidate> pe_header_scan(const MemoryDump& dump) {
    return pe_header_scan(dump.bytes());
}

const char* const kDosStubString = "This program cannot be run in DOS mode";

std::vector<Match> dos_stub_scan(std::span<const uint8_t> bytes) {
    const std::string_view needle = kDosStubString;
    std::vector<Match> matches;
    if (bytes.size() < needle.size())
        return matches;
    for (size_t i = 0; i + needle.size() <= bytes.size(); ++i) {
        if (std::equal(needle.begin(), needle.end(), bytes.begin() + static_cast<ptrdiff_t>(i),
                       [](char c, uint8_t b) { return static_cast<uint8_t>(c) == b; }))
            matches.push_back({"dos_stub", i, needle.size()});
    }
    return matches;
}

std::vector<Match> dos_stub_scan(const MemoryDump& dump) {
    return dos_stub_scan(dump.bytes());
}

namespace {

std::vector<uint8_t> parse_hex_bytes(const std::string& tok, const std::string& what) {
    if (tok.empty() || tok.size() % 2 != 0)
        throw std::invalid_argument(what + ": hex string must have even nonzero length");
    std::vector<uint8_t> bytes(tok.size() / 2);
    for (size_t i = 0; i < bytes.size(); ++i) {
        const auto nib = [&](char c) -> int {
            if (c >= '0' && c <= '9') return c - '0';
            if (c >= 'a' && c <= 'f') return c - 'a' + 10;
            if (c >= 'A' && c <= 'F') return c - 'A' + 10;
            throw std::invalid_argument(what + ": bad hex digit");
        };
        bytes[i] = static_cast<uint8_t>(nib(tok[2 * i]) * 16 + nib(tok[2 * i + 1]));
    }
    return bytes;
}

// Whitespace-separated tokens; a leading '"' opens a quoted token that
// may contain spaces; '#' outside quotes starts a comment.
std::vector<std::string> tokenize_line(const std::string& line, int lineno) {
    std::vector<std::string> toks;
    size_t i = 0;
    while (i < line.size()) {
        if (std::isspace(static_cast<unsigned char>(line[i]))) {
            ++i;
            continue;
        }
        if (line[i] == '#')
            break;
        if (line[i] == '"') {
            const size_t close = line.find('"', i + 1);
            if (close == std::string::npos)
                throw std::invalid_argument("signature file line " + std::to_string(lineno) +
                                            ": unterminated quote");
            toks.push_back(line.substr(i, close - i + 1));
            i = close + 1;
        } else {
            size_t end = i;
            while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end])) &&
                   line[end] != '#')
                ++end;
            toks.push_back(line.substr(i, end - i));
            i = end;
        }
    }
    return toks;
}

std::vector<uint8_t> parse_pattern_token(const std::string& tok, const std::string& what) {
    if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') {
        std::vector<uint8_t> bytes(tok.begin() + 1, tok.end() - 1);
        if (bytes.empty())
            throw std::invalid_argument(what + ": empty quoted pattern");
        return bytes;
    }
    return parse_hex_bytes(tok, what);
}

} // namespace

std::vector<Signature> parse_signature_file(const std::string& text) {
    std::vector<Signature> sigs;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto toks = tokenize_line(line, lineno);
        if (toks.empty())
            continue;
        const std::string where = "signature file line " + std::to_string(lineno);
        if (toks.size() < 3)
            throw std::invalid_argument(where + ": expected `id kind pattern [mask] [alignment]`");

        Signature sig;
        sig.id = toks[0];
        sig.kind = sig_kind_from_name(toks[1]);
        sig.pattern = parse_pattern_token(toks[2], where);

        size_t next = 3;
        if (sig.kind == SigKind::Masked || sig.kind == SigKind::Bitmask) {
            if (toks.size() < 4)
                throw std::invalid_argument(where + ": " + toks[1] + " signature needs a mask");
            sig.mask = parse_hex_bytes(toks[3], where);
            next = 4;
        }
        sig.alignment = sig.kind == SigKind::Tag ? 4 : 1;
        if (next < toks.size()) {
            try {
                sig.alignment = std::stoul(toks[next]);
            } catch (const std::exception&) {
                throw std::invalid_argument(where + ": bad alignment");
            }
            ++next;
        }
        if (next != toks.size())
            throw std::invalid_argument(where + ": trailing tokens");
        sig.validate();
        sigs.push_back(std::move(sig));
    }
    return sigs;
}

std::vector<Signature> load_signatures(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open signature file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_signature_file(buf.str());
}

std::string serialize_signatures(const std::vector<Signature>& sigs) {
    std::ostringstream out;
    out << "# id kind pattern [mask] [alignment]\n";
    for (const Signature& sig : sigs) {
        out << sig.id << ' ' << sig_kind_name(sig.kind) << ' ';
        const bool printable = std::all_of(sig.pattern.begin(), sig.pattern.end(), [](uint8_t b) {
            return b >= 0x20 && b < 0x7F && b != '"';
        });
        if (printable) {
            out << '"' << std::string(sig.pattern.begin(), sig.pattern.end()) << '"';
        } else {
            static const char* hexd = "0123456789abcdef";
            for (uint8_t b : sig.pattern)
                out << hexd[b >> 4] << hexd[b & 15];
        }
        if (!sig.mask.empty()) {
            out << ' ';
            static const char* hexd = "0123456789abcdef";
            for (uint8_t b : sig.mask)
                out << hexd[b >> 4] << hexd[b & 15];
        }
        const size_t default_align = sig.kind == SigKind::Tag ? 4 : 1;
        if (sig.alignment != default_align)
            out << ' ' << sig.alignment;
        out << '\n';
    }
    return out.str();
}

void save_signatures(const std::vector<Signature>& sigs, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write signature file: " + path);
    out << serialize_signatures(sigs);
}

std::vector<Signature> default_signatures() {
    const auto tag = [](std::string id, const char* chars) {
        Signature sig;
        sig.id = std::move(id);
        sig.kind = SigKind::Tag;
        sig.pattern.assign(chars, chars + 4);
        sig.alignment = 4;
        return sig;
    };
    std::vector<Signature> sigs;
    sigs.push_back(tag("tag_mmld", "MmLd"));
    sigs.push_back(tag("tag_serv", "sErv"));
    sigs.push_back(tag("tag_serh", "serH"));
    sigs.push_back(tag("tag_driv", "Driv"));
    Signature stub;
    stub.id = "dos_stub";
    stub.kind = SigKind::Exact;
    const std::string_view s = kDosStubString;
    stub.pattern.assign(s.begin(), s.end());
    stub.alignment = 1;
    sigs.push_back(std::move(stub));
    return sigs;
}

} // namespace mdsa
