#pragma once

#include "mdsa/dump.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mdsa {

enum class SigKind { Exact, Masked, Tag, Bitmask };

std::string sig_kind_name(SigKind kind);
SigKind sig_kind_from_name(const std::string& name);

// Tags are exact 4-byte patterns that default to pool-block alignment.
// Masked/bitmask patterns carry a care mask: a position matches iff
// (input XOR pattern) AND mask == 0 over the whole span.
struct Signature {
    std::string id;
    SigKind kind = SigKind::Exact;
    std::vector<uint8_t> pattern;
    std::vector<uint8_t> mask; // empty for exact/tag
    size_t alignment = 1;

    void validate() const;
};

struct Match {
    std::string signature_id;
    uint64_t offset = 0;
    size_t matched_len = 0;

    bool operator==(const Match&) const = default;
};

// Immutable compiled set: exact/tag patterns share one Aho-Corasick
// automaton; masked/bitmask patterns are verified per position in the
// same pass. Shareable across threads.
class SignatureSet {
public:
    static SignatureSet compile(std::vector<Signature> signatures);

    // Scans the span; reported offsets are base_offset + local position,
    // and alignment is checked against those absolute offsets.
    std::vector<Match> scan(std::span<const uint8_t> bytes, uint64_t base_offset = 0) const;
    std::vector<Match> scan(const MemoryDump& dump) const;

    size_t size() const { return sigs_.size(); }
    size_t max_pattern_len() const { return max_len_; }
    const std::vector<Signature>& signatures() const { return sigs_; }

private:
    struct AcNode {
        std::array<int32_t, 256> next;
        std::vector<uint32_t> out; // indexes into sigs_
    };

    std::vector<Signature> sigs_;
    std::vector<AcNode> nodes_;
    std::vector<uint32_t> verify_sigs_; // masked/bitmask indexes
    size_t max_len_ = 0;
};

std::vector<Match> scan_bitmask(std::span<const uint8_t> bytes, const Signature& sig,
                                uint64_t base_offset = 0);

// Fraction of width-aligned little-endian dwords valued like kernel
// pointers (>= 0x80000000).
double kernel_pointer_density(std::span<const uint8_t> bytes, size_t width = 4);

struct PeCandidate {
    uint64_t offset = 0;    // where "MZ" sits
    uint64_t pe_offset = 0; // where "PE\0\0" sits
    uint16_t machine = 0;
    uint16_t section_count = 0;
};

std::vector<PeCandidate> pe_header_scan(std::span<const uint8_t> bytes);
std::vector<PeCandidate> pe_header_scan(const MemoryDump& dump);

extern const char* const kDosStubString;
std::vector<Match> dos_stub_scan(std::span<const uint8_t> bytes);
std::vector<Match> dos_stub_scan(const MemoryDump& dump);

// Line format: `id kind pattern [mask] [alignment]`. Patterns and masks
// are hex strings; pattern may instead be ASCII in double quotes.
// '#' starts a comment.
std::vector<Signature> parse_signature_file(const std::string& text);
std::vector<Signature> load_signatures(const std::string& path);
std::string serialize_signatures(const std::vector<Signature>& sigs);
void save_signatures(const std::vector<Signature>& sigs, const std::string& path);

// Pool tags plus the DOS-stub marker string.
std::vector<Signature> default_signatures();

} // namespace mdsa
