#include "mdsa/evasion.hpp"

#include "mdsa/rng.hpp"
#include "mdsa/signature.hpp"
#include "mdsa/stats.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace mdsa {

std::string payload_kind_name(PayloadKind kind) {
    switch (kind) {
    case PayloadKind::Code: return "code";
    case PayloadKind::Text: return "text";
    case PayloadKind::Random: return "random";
    }
    throw std::logic_error("bad PayloadKind");
}

PayloadKind payload_kind_from_name(const std::string& name) {
    if (name == "code") return PayloadKind::Code;
    if (name == "text") return PayloadKind::Text;
    if (name == "random") return PayloadKind::Random;
    throw std::invalid_argument("unknown payload kind: " + name);
}

std::string filler_kind_name(FillerKind kind) {
    switch (kind) {
    case FillerKind::Zeros: return "zeros";
    case FillerKind::Random: return "random";
    case FillerKind::Text: return "text";
    }
    throw std::logic_error("bad FillerKind");
}

FillerKind filler_kind_from_name(const std::string& name) {
    if (name == "zeros") return FillerKind::Zeros;
    if (name == "random") return FillerKind::Random;
    if (name == "text") return FillerKind::Text;
    throw std::invalid_argument("unknown filler kind: " + name);
}

namespace {

void append_random(std::vector<uint8_t>& out, size_t size, Rng& rng) {
    out.reserve(out.size() + size);
    for (size_t i = 0; i < size; ++i)
        out.push_back(rng.byte());
}

void append_text(std::vector<uint8_t>& out, size_t size, Rng& rng) {
    static const char* words[] = {
        "the",     "driver",  "memory",   "page",   "buffer", "handle", "request", "lock",
        "queue",   "object",  "table",    "index",  "kernel", "module", "thread",  "device",
        "status",  "value",   "region",   "system", "cache",  "block",  "entry",   "list",
        "context", "pointer", "resource", "flags",  "state",  "offset", "length",  "field",
        "worker",  "packet",  "session",  "timer",  "event",  "signal", "vector",  "record"};
    constexpr size_t word_count = sizeof(words) / sizeof(words[0]);

    out.reserve(out.size() + size);
    const size_t end = out.size() + size;
    size_t line = 0, sentence = 0;
    bool capitalize = true;
    while (out.size() < end) {
        const char* w = words[rng.uniform(word_count)];
        for (size_t i = 0; w[i] && out.size() < end; ++i) {
            char c = w[i];
            if (capitalize && i == 0)
                c = static_cast<char>(c - 'a' + 'A');
            out.push_back(static_cast<uint8_t>(c));
            ++line;
        }
        capitalize = false;
        ++sentence;
        if (out.size() >= end)
            break;
        if (sentence >= 6 + rng.uniform(8)) {
            out.push_back('.');
            sentence = 0;
            capitalize = true;
            ++line;
        } else if (rng.chance(0.08)) {
            out.push_back(',');
            ++line;
        }
        if (out.size() >= end)
            break;
        if (line >= 60 + rng.uniform(16)) {
            out.push_back('\n');
            line = 0;
        } else {
            out.push_back(' ');
            ++line;
        }
    }
}

// Emits only instructions the sweep decoder accepts, so the generated
// stream's valid_byte_ratio is exactly 1.0 from offset 0.
class CodeEmitter {
public:
    explicit CodeEmitter(Rng& rng, size_t size) : rng_(rng), size_(size) {
        out_.reserve(size);
    }

    std::vector<uint8_t> run() {
        while (size_ - out_.size() >= 192)
            emit_chunk();
        fill_single_bytes(size_ - out_.size());
        return std::move(out_);
    }

private:
    size_t left() const { return size_ - out_.size(); }
    void put(uint8_t b) { out_.push_back(b); }

    void put_imm32(uint32_t v) {
        put(static_cast<uint8_t>(v));
        put(static_cast<uint8_t>(v >> 8));
        put(static_cast<uint8_t>(v >> 16));
        put(static_cast<uint8_t>(v >> 24));
    }

    uint8_t reg() { return static_cast<uint8_t>(rng_.uniform(8)); }

    // General registers excluding esp/ebp so frame references stay sane.
    uint8_t gp_reg() {
        static const uint8_t regs[6] = {0, 1, 2, 3, 6, 7};
        return regs[rng_.uniform(6)];
    }

    uint8_t modrm_rr(uint8_t r, uint8_t rm) {
        return static_cast<uint8_t>(0xC0 | (r << 3) | rm);
    }

    // One whole instruction into `buf`; returns false if it would not fit
    // in `budget` bytes.
    bool gen_instr(std::vector<uint8_t>& buf, size_t budget) {
        buf.clear();
        const uint32_t pick = static_cast<uint32_t>(rng_.uniform(100));
        if (pick < 14) { // push reg
            buf.push_back(static_cast<uint8_t>(0x50 | gp_reg()));
        } else if (pick < 24) { // pop reg
            buf.push_back(static_cast<uint8_t>(0x58 | gp_reg()));
        } else if (pick < 38) { // mov reg, imm32: kernel pointers appear here
            buf.push_back(static_cast<uint8_t>(0xB8 | gp_reg()));
            uint32_t imm;
            if (rng_.chance(0.30))
                imm = 0x80000000u | static_cast<uint32_t>(rng_.next_u64());
            else if (rng_.chance(0.55))
                imm = static_cast<uint32_t>(rng_.uniform(0x10000));
            else
                imm = static_cast<uint32_t>(rng_.next_u64());
            buf.push_back(static_cast<uint8_t>(imm));
            buf.push_back(static_cast<uint8_t>(imm >> 8));
            buf.push_back(static_cast<uint8_t>(imm >> 16));
            buf.push_back(static_cast<uint8_t>(imm >> 24));
        } else if (pick < 46) { // mov reg, reg
            buf.push_back(0x8B);
            buf.push_back(modrm_rr(gp_reg(), gp_reg()));
        } else if (pick < 60) { // mov [ebp+disp8], reg / mov reg, [ebp+disp8]
            buf.push_back(rng_.chance(0.5) ? 0x89 : 0x8B);
            buf.push_back(static_cast<uint8_t>(0x40 | (gp_reg() << 3) | 5));
            buf.push_back(static_cast<uint8_t>(rng_.chance(0.5) ? rng_.uniform(0x70)
                                                                : 0x100 - 4 * rng_.range(1, 16)));
        } else if (pick < 72) { // alu reg, reg
            static const uint8_t ops[6] = {0x03, 0x0B, 0x13, 0x1B, 0x23, 0x2B};
            buf.push_back(ops[rng_.uniform(6)]);
            buf.push_back(modrm_rr(gp_reg(), gp_reg()));
        } else if (pick < 77) { // xor reg, reg (zeroing idiom)
            buf.push_back(0x33);
            const uint8_t r = gp_reg();
            buf.push_back(modrm_rr(r, r));
        } else if (pick < 85) { // cmp / test reg, reg
            buf.push_back(rng_.chance(0.5) ? 0x3B : 0x85);
            buf.push_back(modrm_rr(gp_reg(), gp_reg()));
        } else if (pick < 90) { // push imm
            if (rng_.chance(0.5)) {
                buf.push_back(0x6A);
                buf.push_back(rng_.byte());
            } else {
                buf.push_back(0x68);
                const uint32_t imm = static_cast<uint32_t>(rng_.next_u64());
                buf.push_back(static_cast<uint8_t>(imm));
                buf.push_back(static_cast<uint8_t>(imm >> 8));
                buf.push_back(static_cast<uint8_t>(imm >> 16));
                buf.push_back(static_cast<uint8_t>(imm >> 24));
            }
        } else if (pick < 98) { // jcc/jmp rel8 skipping 0 or 1 instruction
            std::vector<uint8_t> skipped;
            if (rng_.chance(0.5) && gen_simple(skipped)) {
                buf.push_back(rng_.chance(0.8) ? static_cast<uint8_t>(0x70 + rng_.uniform(16))
                                               : 0xEB);
                buf.push_back(static_cast<uint8_t>(skipped.size()));
                buf.insert(buf.end(), skipped.begin(), skipped.end());
            } else {
                buf.push_back(static_cast<uint8_t>(0x70 + rng_.uniform(16)));
                buf.push_back(0x00);
            }
        } else { // call rel32 to an earlier chunk start
            if (chunk_starts_.empty())
                return gen_instr(buf, budget);
            const uint64_t target = chunk_starts_[rng_.uniform(chunk_starts_.size())];
            const int64_t rel =
                static_cast<int64_t>(target) - static_cast<int64_t>(out_.size() + 5);
            buf.push_back(0xE8);
            const uint32_t u = static_cast<uint32_t>(static_cast<int32_t>(rel));
            buf.push_back(static_cast<uint8_t>(u));
            buf.push_back(static_cast<uint8_t>(u >> 8));
            buf.push_back(static_cast<uint8_t>(u >> 16));
            buf.push_back(static_cast<uint8_t>(u >> 24));
        }
        return buf.size() <= budget;
    }

    // Short register-only instruction used as a branch-skip body.
    bool gen_simple(std::vector<uint8_t>& buf) {
        buf.clear();
        switch (rng_.uniform(3)) {
        case 0: buf.push_back(static_cast<uint8_t>(0x50 | gp_reg())); break;
        case 1: buf.push_back(0x90); break;
        default:
            buf.push_back(0x8B);
            buf.push_back(modrm_rr(gp_reg(), gp_reg()));
            break;
        }
        return true;
    }

    void emit_chunk() {
        chunk_starts_.push_back(out_.size());
        const size_t target = std::min<size_t>(left(), rng_.range(192, 320));
        const size_t chunk_end = out_.size() + target;

        put(0x55); // push ebp
        put(0x8B); // mov ebp, esp
        put(0xEC);

        std::vector<uint8_t> instr;
        while (out_.size() + 2 < chunk_end) {
            if (!gen_instr(instr, chunk_end - 2 - out_.size()))
                break;
            out_.insert(out_.end(), instr.begin(), instr.end());
        }
        if (rng_.chance(0.5)) {
            put(0xC9); // leave
        } else {
            put(0x5D); // pop ebp
        }
        put(0xC3); // ret
    }

    // Diverse single-byte instructions; never long same-byte runs, which
    // would look like inserted filler to the evasion filter.
    void fill_single_bytes(size_t n) {
        for (size_t i = 0; i < n; ++i) {
            const uint32_t pick = static_cast<uint32_t>(rng_.uniform(20));
            if (pick < 14)
                put(static_cast<uint8_t>(0x50 | rng_.uniform(16))); // push/pop reg
            else if (pick < 17)
                put(0x90);
            else if (pick < 19)
                put(0xCC);
            else
                put(0xC3);
        }
    }

    Rng& rng_;
    size_t size_;
    std::vector<uint8_t> out_;
    std::vector<uint64_t> chunk_starts_;
};

} // namespace

std::vector<uint8_t> generate_payload(size_t size, PayloadKind kind, uint64_t seed) {
    if (size < 64)
        throw std::invalid_argument("payload size must be at least 64 bytes");
    Rng rng(seed ^ 0x70617961ULL); // domain-separated from other seed uses
    std::vector<uint8_t> out;
    switch (kind) {
    case PayloadKind::Random:
        append_random(out, size, rng);
        break;
    case PayloadKind::Text:
        append_text(out, size, rng);
        break;
    case PayloadKind::Code:
        out = CodeEmitter(rng, size).run();
        break;
    }
    return out;
}

std::vector<uint8_t> make_pe_image(std::span<const uint8_t> body, uint64_t seed) {
    Rng rng(seed ^ 0x70650000ULL);
    std::vector<uint8_t> img(kPeHeaderSize, 0);
    const auto put16 = [&](size_t at, uint16_t v) {
        img[at] = static_cast<uint8_t>(v);
        img[at + 1] = static_cast<uint8_t>(v >> 8);
    };
    const auto put32 = [&](size_t at, uint32_t v) {
        for (int i = 0; i < 4; ++i)
            img[at + static_cast<size_t>(i)] = static_cast<uint8_t>(v >> (8 * i));
    };

    // DOS header
    img[0] = 'M';
    img[1] = 'Z';
    put16(0x02, 0x0090);
    put16(0x04, 0x0003);
    put16(0x08, 0x0004);
    put16(0x0C, 0xFFFF);
    put16(0x10, 0x00B8);
    put16(0x18, 0x0040);
    put32(0x3C, 0x80); // e_lfanew
    // DOS stub: minimal int 21h exit code followed by the marker text
    static const uint8_t stub_code[] = {0x0E, 0x1F, 0xBA, 0x0E, 0x00, 0xB4, 0x09,
                                        0xCD, 0x21, 0xB8, 0x01, 0x4C, 0xCD, 0x21};
    std::memcpy(img.data() + 0x40, stub_code, sizeof(stub_code));
    const std::string_view msg = kDosStubString;
    std::memcpy(img.data() + 0x4E, msg.data(), msg.size());
    img[0x4E + msg.size()] = '.';
    img[0x4F + msg.size()] = '$';

    // PE signature + COFF header
    const size_t pe = 0x80;
    img[pe] = 'P';
    img[pe + 1] = 'E';
    put16(pe + 4, 0x014C); // i386
    put16(pe + 6, 2);      // sections
    put32(pe + 8, 0x50000000u + static_cast<uint32_t>(rng.uniform(0x08000000))); // timestamp
    put16(pe + 20, 0xE0);   // optional header size
    put16(pe + 22, 0x0102); // executable, 32-bit

    // Optional header (PE32)
    const size_t opt = pe + 24;
    put16(opt, 0x010B);
    img[opt + 2] = static_cast<uint8_t>(9 + rng.uniform(6)); // linker major
    img[opt + 3] = static_cast<uint8_t>(rng.uniform(30));    // linker minor
    const uint32_t code_size =
        (static_cast<uint32_t>(body.size()) + 0x3FFu) & ~0x3FFu;
    put32(opt + 4, code_size);
    put32(opt + 16, 0x400); // entry point
    put32(opt + 20, 0x400); // base of code
    put32(opt + 28, 0x80000000u | (static_cast<uint32_t>(rng.uniform(0x7000)) << 12)); // image base
    put32(opt + 32, 0x1000); // section alignment
    put32(opt + 36, 0x400);  // file alignment
    put16(opt + 40, 6);      // OS major
    put16(opt + 48, 6);      // subsystem version major
    put32(opt + 56, code_size + 0x2000);
    put32(opt + 60, 0x400); // headers size
    put16(opt + 68, 1);        // native subsystem
    put32(opt + 72, 0x100000); // stack reserve
    put32(opt + 76, 0x1000);   // stack commit
    put32(opt + 80, 0x100000); // heap reserve
    put32(opt + 84, 0x1000);   // heap commit
    put32(opt + 92, 16);       // data directory count

    // Section table
    const size_t sect = opt + 0xE0;
    std::memcpy(img.data() + sect, ".text\0\0\0", 8);
    put32(sect + 8, static_cast<uint32_t>(body.size()));
    put32(sect + 12, 0x400);
    put32(sect + 16, code_size);
    put32(sect + 20, 0x400);
    put32(sect + 36, 0x60000020); // code | execute | read
    std::memcpy(img.data() + sect + 40, ".data\0\0\0", 8);
    put32(sect + 48, 0x200);
    put32(sect + 52, 0x400 + code_size);
    put32(sect + 56, 0x400);
    put32(sect + 60, 0x400 + code_size);
    put32(sect + 76, 0xC0000040); // initialized | read | write

    img.insert(img.end(), body.begin(), body.end());
    return img;
}

void EvasionSpec::validate() const {
    if (block_len_min > block_len_max)
        throw std::invalid_argument("block length range inverted");
    if (insert_block_count > 0 && block_len_max == 0)
        throw std::invalid_argument("blocks requested with zero max length");
    if (block_alphabet_size < 1 || block_alphabet_size > 256)
        throw std::invalid_argument("block alphabet size must be in [1,256]");
}

EvadedImage apply_evasion(std::span<const uint8_t> payload, const EvasionSpec& spec) {
    spec.validate();
    if (payload.empty() && spec.insert_block_count > 0)
        throw std::invalid_argument("cannot insert blocks into an empty payload");

    std::vector<uint8_t> work(payload.begin(), payload.end());
    const double original = work.empty() ? 0.0 : shannon_entropy(byte_histogram(work));

    Rng rng(spec.rng_seed ^ 0x65766164ULL);
    if (spec.xor_key)
        for (uint8_t& b : work)
            b = static_cast<uint8_t>(b ^ *spec.xor_key);
    if (spec.wipe_pe_header)
        std::fill(work.begin(), work.begin() + static_cast<ptrdiff_t>(
                                                   std::min(work.size(), kPeHeaderSize)),
                  uint8_t{0});

    // One alphabet per image; symbol 0 is always 0x00 so single-symbol
    // blocks read as classic zero padding.
    std::vector<uint8_t> alphabet{0x00};
    while (alphabet.size() < spec.block_alphabet_size) {
        const uint8_t cand = rng.byte();
        if (std::find(alphabet.begin(), alphabet.end(), cand) == alphabet.end())
            alphabet.push_back(cand);
    }

    // Cut points inside the payload; blocks land between the fragments.
    std::vector<size_t> cuts(spec.insert_block_count);
    for (auto& c : cuts)
        c = work.size() > 1 ? 1 + rng.uniform(work.size() - 1) : 0;
    std::sort(cuts.begin(), cuts.end());

    EvadedImage out;
    out.bytes.reserve(work.size() +
                      spec.insert_block_count * (spec.block_len_min + spec.block_len_max) / 2);
    size_t consumed = 0;
    const auto copy_fragment = [&](size_t upto) {
        if (upto > consumed) {
            out.truth.payload_spans.push_back({out.bytes.size(), upto - consumed});
            out.bytes.insert(out.bytes.end(), work.begin() + static_cast<ptrdiff_t>(consumed),
                             work.begin() + static_cast<ptrdiff_t>(upto));
            consumed = upto;
        }
    };
    for (size_t cut : cuts) {
        copy_fragment(cut);
        const size_t len = spec.block_len_min == spec.block_len_max
                               ? spec.block_len_min
                               : rng.range(spec.block_len_min, spec.block_len_max);
        out.truth.inserted_spans.push_back({out.bytes.size(), len});
        for (size_t i = 0; i < len; ++i) {
            // Dominant first symbol, thin uniform tail over the rest.
            const bool dominant = alphabet.size() == 1 || rng.chance(0.875);
            out.bytes.push_back(dominant ? alphabet[0]
                                         : alphabet[1 + rng.uniform(alphabet.size() - 1)]);
        }
    }
    copy_fragment(work.size());
    // Merge adjacent inserted spans from coincident cuts.
    auto& ins = out.truth.inserted_spans;
    for (size_t i = 1; i < ins.size();) {
        if (ins[i - 1].end() == ins[i].start) {
            ins[i - 1].length += ins[i].length;
            ins.erase(ins.begin() + static_cast<ptrdiff_t>(i));
        } else {
            ++i;
        }
    }

    out.truth.original_entropy_bits = original;
    out.truth.evaded_entropy_bits =
        out.bytes.empty() ? 0.0 : shannon_entropy(byte_histogram(out.bytes));
    return out;
}

ConstraintReport verify_constraints(const EvadedImage& image) {
    ConstraintReport rep;
    rep.size_bytes = image.bytes.size();
    rep.size_ok = rep.size_bytes <= 10ull * 1024 * 1024;
    rep.entropy_ratio = image.truth.original_entropy_bits > 0
                            ? image.truth.evaded_entropy_bits / image.truth.original_entropy_bits
                            : 0.0;
    rep.entropy_ok = rep.entropy_ratio <= 0.5;
    return rep;
}

void DumpRecipe::validate() const {
    if (total_size == 0)
        throw std::invalid_argument("recipe total_size is zero");
    for (const auto& img : images)
        if (img.payload_size < 64)
            throw std::invalid_argument("image '" + img.name + "': payload too small");
}

BuiltDump build_dump(const DumpRecipe& recipe) {
    recipe.validate();
    Rng rng(recipe.seed ^ 0x64756d70ULL);

    std::vector<uint8_t> bytes;
    bytes.reserve(recipe.total_size);
    switch (recipe.filler) {
    case FillerKind::Zeros:
        bytes.assign(recipe.total_size, 0);
        break;
    case FillerKind::Random:
        append_random(bytes, recipe.total_size, rng);
        break;
    case FillerKind::Text:
        append_text(bytes, recipe.total_size, rng);
        break;
    }

    std::vector<PlacedImage> placed;
    for (size_t idx = 0; idx < recipe.images.size(); ++idx) {
        const ImageRecipe& ir = recipe.images[idx];
        const uint64_t payload_seed = recipe.seed * 1315423911ULL + idx;
        std::vector<uint8_t> payload = generate_payload(ir.payload_size, ir.kind, payload_seed);
        if (ir.pe_wrap)
            payload = make_pe_image(payload, payload_seed);
        EvasionSpec spec = ir.evasion;
        if (spec.rng_seed == 0)
            spec.rng_seed = payload_seed ^ 0xb10c5ULL;
        EvadedImage evaded = apply_evasion(payload, spec);

        if (ir.placement + evaded.bytes.size() > bytes.size())
            throw std::invalid_argument("image '" + ir.name + "' does not fit in the dump");
        std::copy(evaded.bytes.begin(), evaded.bytes.end(),
                  bytes.begin() + static_cast<ptrdiff_t>(ir.placement));

        PlacedImage pi;
        pi.name = ir.name.empty() ? "image" + std::to_string(idx) : ir.name;
        pi.start = ir.placement;
        pi.length = evaded.bytes.size();
        pi.declared = ir.declared;
        pi.truth = std::move(evaded.truth);
        for (auto& s : pi.truth.payload_spans)
            s.start += ir.placement;
        for (auto& s : pi.truth.inserted_spans)
            s.start += ir.placement;
        placed.push_back(std::move(pi));
    }

    // Overlap check over resolved sizes.
    std::vector<ByteSpan> spans;
    for (const auto& pi : placed)
        spans.push_back({pi.start, pi.length});
    std::sort(spans.begin(), spans.end(),
              [](const ByteSpan& a, const ByteSpan& b) { return a.start < b.start; });
    for (size_t i = 1; i < spans.size(); ++i)
        if (spans[i].start < spans[i - 1].end())
            throw std::invalid_argument("image placements overlap");

    RegionManifest manifest;
    for (const auto& pi : placed)
        if (pi.declared)
            manifest.entries.push_back({pi.name, pi.start, pi.length, "module"});
    std::sort(manifest.entries.begin(), manifest.entries.end(),
              [](const auto& a, const auto& b) { return a.start < b.start; });

    BuiltDump out{MemoryDump(std::move(bytes), 0x80000000ULL, 4096, "synthetic"),
                  std::move(manifest), std::move(placed)};
    return out;
}

namespace {

uint64_t parse_num(const std::string& tok, const std::string& where) {
    try {
        size_t pos = 0;
        const uint64_t v = std::stoull(tok, &pos, 0); // accepts 0x prefix
        if (pos != tok.size())
            throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument(where + ": bad number '" + tok + "'");
    }
}

ImageRecipe parse_image_line(const std::vector<std::string>& toks, const std::string& where) {
    ImageRecipe ir;
    for (size_t i = 1; i < toks.size(); ++i) {
        const auto eq = toks[i].find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(where + ": image fields are key=value");
        const std::string key = toks[i].substr(0, eq);
        const std::string val = toks[i].substr(eq + 1);
        if (key == "name")
            ir.name = val;
        else if (key == "kind")
            ir.kind = payload_kind_from_name(val);
        else if (key == "size")
            ir.payload_size = parse_num(val, where);
        else if (key == "place")
            ir.placement = parse_num(val, where);
        else if (key == "declared")
            ir.declared = parse_num(val, where) != 0;
        else if (key == "pe")
            ir.pe_wrap = parse_num(val, where) != 0;
        else if (key == "blocks")
            ir.evasion.insert_block_count = parse_num(val, where);
        else if (key == "block_min")
            ir.evasion.block_len_min = parse_num(val, where);
        else if (key == "block_max")
            ir.evasion.block_len_max = parse_num(val, where);
        else if (key == "alphabet")
            ir.evasion.block_alphabet_size = parse_num(val, where);
        else if (key == "wipe")
            ir.evasion.wipe_pe_header = parse_num(val, where) != 0;
        else if (key == "xor")
            ir.evasion.xor_key = static_cast<uint8_t>(parse_num(val, where));
        else if (key == "eseed")
            ir.evasion.rng_seed = parse_num(val, where);
        else
            throw std::invalid_argument(where + ": unknown image key '" + key + "'");
    }
    return ir;
}

} // namespace

DumpRecipe parse_recipe(const std::string& text) {
    DumpRecipe recipe;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos)
            line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> toks;
        for (std::string t; ls >> t;)
            toks.push_back(t);
        if (toks.empty())
            continue;
        const std::string where = "recipe line " + std::to_string(lineno);
        if (toks[0] == "image") {
            recipe.images.push_back(parse_image_line(toks, where));
        } else if (toks.size() == 2) {
            if (toks[0] == "total_size")
                recipe.total_size = parse_num(toks[1], where);
            else if (toks[0] == "filler")
                recipe.filler = filler_kind_from_name(toks[1]);
            else if (toks[0] == "seed")
                recipe.seed = parse_num(toks[1], where);
            else
                throw std::invalid_argument(where + ": unknown key '" + toks[0] + "'");
        } else {
            throw std::invalid_argument(where + ": expected `key value` or `image k=v ...`");
        }
    }
    recipe.validate();
    return recipe;
}

DumpRecipe load_recipe(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open recipe file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_recipe(buf.str());
}

std::string serialize_recipe(const DumpRecipe& recipe) {
    std::ostringstream out;
    out << "# dump recipe\n";
    out << "total_size " << recipe.total_size << '\n';
    out << "filler " << filler_kind_name(recipe.filler) << '\n';
    out << "seed " << recipe.seed << '\n';
    for (const auto& ir : recipe.images) {
        out << "image name=" << ir.name << " kind=" << payload_kind_name(ir.kind)
            << " size=" << ir.payload_size << " place=" << ir.placement
            << " declared=" << (ir.declared ? 1 : 0) << " pe=" << (ir.pe_wrap ? 1 : 0);
        const EvasionSpec& ev = ir.evasion;
        if (ev.insert_block_count > 0)
            out << " blocks=" << ev.insert_block_count << " block_min=" << ev.block_len_min
                << " block_max=" << ev.block_len_max << " alphabet=" << ev.block_alphabet_size;
        if (ev.wipe_pe_header)
            out << " wipe=1";
        if (ev.xor_key)
            out << " xor=" << static_cast<unsigned>(*ev.xor_key);
        if (ev.rng_seed != 0)
            out << " eseed=" << ev.rng_seed;
        out << '\n';
    }
    return out.str();
}

DumpRecipe preset_recipe(const std::string& name, uint64_t seed) {
    DumpRecipe recipe;
    recipe.seed = seed;
    recipe.filler = FillerKind::Zeros;
    const size_t mib = 1024 * 1024;

    ImageRecipe clean;
    clean.name = "svc_core";
    clean.kind = PayloadKind::Code;
    clean.payload_size = 256 * 1024;
    clean.declared = true;
    clean.pe_wrap = true;

    if (name == "clean") {
        recipe.total_size = 16 * mib;
        clean.placement = 4 * mib;
        recipe.images.push_back(clean);
        return recipe;
    }
    if (name == "zeus") {
        recipe.total_size = 32 * mib;
        clean.placement = 4 * mib;
        recipe.images.push_back(clean);

        ImageRecipe ghost;
        ghost.name = "ghost";
        ghost.kind = PayloadKind::Code;
        ghost.payload_size = 256 * 1024;
        ghost.placement = 16 * mib;
        ghost.declared = false;
        ghost.pe_wrap = true;
        ghost.evasion.insert_block_count = 1500;
        ghost.evasion.block_len_min = 1024;
        ghost.evasion.block_len_max = 8192;
        ghost.evasion.block_alphabet_size = 1; // zero-entropy blocks
        ghost.evasion.wipe_pe_header = true;
        recipe.images.push_back(ghost);
        return recipe;
    }
    if (name == "highstem") {
        recipe.total_size = 64 * mib;
        clean.placement = 8 * mib;
        recipe.images.push_back(clean);

        ImageRecipe ghost;
        ghost.name = "ghost";
        ghost.kind = PayloadKind::Code;
        ghost.payload_size = 256 * 1024;
        ghost.placement = 32 * mib;
        ghost.declared = false;
        ghost.pe_wrap = true;
        ghost.evasion.insert_block_count = 3200;
        ghost.evasion.block_len_min = 512;
        ghost.evasion.block_len_max = 4096;
        ghost.evasion.block_alphabet_size = 3; // low nonzero entropy
        ghost.evasion.wipe_pe_header = true;
        recipe.images.push_back(ghost);
        return recipe;
    }
    throw std::invalid_argument("unknown preset: " + name +
                                " (expected clean, zeus, or highstem)");
}

} // namespace mdsa
