#pragma once

#include "mdsa/dump.hpp"

#include <optional>
#include <string>
#include <vector>

namespace mdsa {

enum class PayloadKind { Code, Text, Random };

std::string payload_kind_name(PayloadKind kind);
PayloadKind payload_kind_from_name(const std::string& name);

// Deterministic synthetic content. Code payloads emit only decodable
// subset instructions (linear sweep sees valid_byte_ratio 1.0), with
// roughly one prolog/epilog pair per 256 bytes and in-bounds branches.
std::vector<uint8_t> generate_payload(size_t size, PayloadKind kind, uint64_t seed);

// Wraps a body in a minimal PE image: DOS header + stub text, PE
// signature at 0x80, two sections, header padded to 0x400, body after.
std::vector<uint8_t> make_pe_image(std::span<const uint8_t> body, uint64_t seed);
inline constexpr size_t kPeHeaderSize = 0x400;

// Anti-forensic transform: dilute a payload with low-entropy blocks,
// optionally wipe the PE header and XOR the payload bytes.
struct EvasionSpec {
    uint64_t insert_block_count = 0;
    size_t block_len_min = 0;
    size_t block_len_max = 0;
    size_t block_alphabet_size = 1; // 1 selects zero-entropy blocks
    bool wipe_pe_header = false;
    std::optional<uint8_t> xor_key;
    uint64_t rng_seed = 0;

    void validate() const;
};

struct GroundTruth {
    std::vector<ByteSpan> payload_spans;  // output coordinates
    std::vector<ByteSpan> inserted_spans; // output coordinates
    double original_entropy_bits = 0;
    double evaded_entropy_bits = 0;
};

struct EvadedImage {
    std::vector<uint8_t> bytes;
    GroundTruth truth;
};

EvadedImage apply_evasion(std::span<const uint8_t> payload, const EvasionSpec& spec);

// Published limits a hidden driver must respect: image at most 10 MiB,
// whole-image entropy reduced at least twofold.
struct ConstraintReport {
    bool size_ok = false;
    bool entropy_ok = false;
    uint64_t size_bytes = 0;
    double entropy_ratio = 0; // evaded / original
};

ConstraintReport verify_constraints(const EvadedImage& image);

struct ImageRecipe {
    std::string name;
    PayloadKind kind = PayloadKind::Code;
    size_t payload_size = 0;
    uint64_t placement = 0;
    bool declared = true; // listed in the manifest
    bool pe_wrap = true;  // wrap payload in a PE image before evasion
    EvasionSpec evasion;
};

enum class FillerKind { Zeros, Random, Text };

std::string filler_kind_name(FillerKind kind);
FillerKind filler_kind_from_name(const std::string& name);

struct DumpRecipe {
    std::vector<ImageRecipe> images;
    FillerKind filler = FillerKind::Zeros;
    size_t total_size = 0;
    uint64_t seed = 0;

    void validate() const;
};

struct PlacedImage {
    std::string name;
    uint64_t start = 0;
    uint64_t length = 0;
    bool declared = true;
    GroundTruth truth; // spans in dump coordinates
};

struct BuiltDump {
    MemoryDump dump;
    RegionManifest manifest; // declared images only
    std::vector<PlacedImage> images;
};

BuiltDump build_dump(const DumpRecipe& recipe);

// Key-value recipe text, one `key value` pair or `image k=v ...` per line.
DumpRecipe parse_recipe(const std::string& text);
DumpRecipe load_recipe(const std::string& path);
std::string serialize_recipe(const DumpRecipe& recipe);

// Presets: clean (declared image only), zeus (hidden image diluted by
// zero blocks), highstem (varied low-entropy blocks + header wipe).
DumpRecipe preset_recipe(const std::string& name, uint64_t seed);

} // namespace mdsa
