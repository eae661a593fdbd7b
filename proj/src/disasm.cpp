#include "mdsa/disasm.hpp"

#include "mdsa/signature.hpp"

#include <algorithm>
#include <stdexcept>

namespace mdsa {

const char* reg_name(uint8_t reg) {
    static const char* names[8] = {"eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"};
    if (reg >= 8)
        throw std::out_of_range("register id out of range");
    return names[reg];
}

const char* mnemonic_class_name(MnemonicClass mc) {
    static const char* names[kMnemonicClassCount] = {
        "push", "pop", "mov", "arith", "cmp_test", "jcc", "jmp",
        "call", "ret", "leave", "nop", "int3", "xor", "unknown"};
    return names[static_cast<size_t>(mc)];
}

namespace {

constexpr uint8_t bit(uint8_t reg) {
    return static_cast<uint8_t>(1u << reg);
}

struct ModRm {
    uint8_t mod = 0, reg = 0, rm = 0;
    size_t extra = 0;       // SIB + displacement bytes after the ModRM byte
    uint8_t addr_reads = 0; // registers read to form a memory address
};

// `at` indexes the ModRM byte inside `b`; nullopt on truncation.
std::optional<ModRm> parse_modrm(std::span<const uint8_t> b, size_t at) {
    if (at >= b.size())
        return std::nullopt;
    const uint8_t m = b[at];
    ModRm r;
    r.mod = m >> 6;
    r.reg = (m >> 3) & 7;
    r.rm = m & 7;
    if (r.mod == 3)
        return r;

    const bool has_sib = r.rm == 4;
    uint8_t sib = 0;
    if (has_sib) {
        if (at + 1 >= b.size())
            return std::nullopt;
        sib = b[at + 1];
        r.extra += 1;
    }
    size_t disp = 0;
    if (r.mod == 1)
        disp = 1;
    else if (r.mod == 2)
        disp = 4;
    else if (has_sib ? (sib & 7) == 5 : r.rm == 5)
        disp = 4;
    r.extra += disp;
    if (at + 1 + r.extra > b.size())
        return std::nullopt;

    if (has_sib) {
        const uint8_t index = (sib >> 3) & 7;
        const uint8_t base = sib & 7;
        if (index != 4)
            r.addr_reads |= bit(index);
        if (!(base == 5 && r.mod == 0))
            r.addr_reads |= bit(base);
    } else if (!(r.mod == 0 && r.rm == 5)) {
        r.addr_reads |= bit(r.rm);
    }
    return r;
}

int32_t read_rel32(std::span<const uint8_t> b, size_t at) {
    const uint32_t v = static_cast<uint32_t>(b[at]) | (static_cast<uint32_t>(b[at + 1]) << 8) |
                       (static_cast<uint32_t>(b[at + 2]) << 16) |
                       (static_cast<uint32_t>(b[at + 3]) << 24);
    return static_cast<int32_t>(v);
}

} // namespace

DecodedInstr decode(std::span<const uint8_t> bytes, uint64_t offset) {
    if (offset >= bytes.size())
        throw std::out_of_range("decode offset out of range");
    const auto b = bytes.subspan(offset);
    const size_t avail = b.size();

    DecodedInstr ins;
    ins.offset = offset;
    ins.length = 1;
    ins.mnemonic = MnemonicClass::Unknown;

    const uint8_t op = b[0];
    const auto rel_target = [&](size_t len, int64_t rel) {
        return static_cast<int64_t>(offset) + static_cast<int64_t>(len) + rel;
    };

    if (op == 0x0F) { // two-byte escape: only jcc rel32 is decoded
        if (avail >= 6 && b[1] >= 0x80 && b[1] <= 0x8F) {
            ins.mnemonic = MnemonicClass::Jcc;
            ins.length = 6;
            ins.branch_target = rel_target(6, read_rel32(b, 2));
        }
        return ins;
    }

    if (op >= 0x50 && op <= 0x57) { // push reg
        ins.mnemonic = MnemonicClass::Push;
        ins.writes_reg = Esp;
        ins.reads_regs = static_cast<uint8_t>(bit(op & 7) | bit(Esp));
        return ins;
    }
    if (op >= 0x58 && op <= 0x5F) { // pop reg
        ins.mnemonic = MnemonicClass::Pop;
        ins.writes_reg = op & 7;
        ins.reads_regs = bit(Esp);
        return ins;
    }
    if (op >= 0xB8 && op <= 0xBF) { // mov reg, imm32
        if (avail < 5)
            return ins;
        ins.mnemonic = MnemonicClass::Mov;
        ins.length = 5;
        ins.writes_reg = op & 7;
        return ins;
    }

    if (op <= 0x3B && (op & 7) < 4) { // ALU r/m forms
        const auto mr = parse_modrm(b, 1);
        if (!mr)
            return ins;
        const uint8_t group = op >> 3; // add or adc sbb and sub xor cmp
        const bool is_cmp = group == 7;
        ins.mnemonic = is_cmp ? MnemonicClass::CmpTest
                              : (group == 6 ? MnemonicClass::Xor : MnemonicClass::Arith);
        ins.length = static_cast<uint8_t>(2 + mr->extra);
        const bool reg_is_dest = (op >> 1) & 1;
        if (mr->mod == 3) {
            const uint8_t dest = reg_is_dest ? mr->reg : mr->rm;
            const uint8_t src = reg_is_dest ? mr->rm : mr->reg;
            ins.reads_regs = static_cast<uint8_t>(bit(dest) | bit(src)); // ALU dest is read-modify-write
            if (!is_cmp)
                ins.writes_reg = dest;
        } else if (reg_is_dest) {
            ins.reads_regs = static_cast<uint8_t>(bit(mr->reg) | mr->addr_reads);
            if (!is_cmp)
                ins.writes_reg = mr->reg;
        } else { // memory destination: no register write tracked
            ins.reads_regs = static_cast<uint8_t>(bit(mr->reg) | mr->addr_reads);
        }
        return ins;
    }

    if (op >= 0x88 && op <= 0x8B) { // mov r/m forms
        const auto mr = parse_modrm(b, 1);
        if (!mr)
            return ins;
        ins.mnemonic = MnemonicClass::Mov;
        ins.length = static_cast<uint8_t>(2 + mr->extra);
        const bool reg_is_dest = (op >> 1) & 1;
        if (mr->mod == 3) {
            ins.writes_reg = reg_is_dest ? mr->reg : mr->rm;
            ins.reads_regs = bit(reg_is_dest ? mr->rm : mr->reg);
        } else if (reg_is_dest) { // load
            ins.writes_reg = mr->reg;
            ins.reads_regs = mr->addr_reads;
        } else { // store
            ins.reads_regs = static_cast<uint8_t>(bit(mr->reg) | mr->addr_reads);
        }
        return ins;
    }

    if (op == 0x84 || op == 0x85) { // test r/m, r
        const auto mr = parse_modrm(b, 1);
        if (!mr)
            return ins;
        ins.mnemonic = MnemonicClass::CmpTest;
        ins.length = static_cast<uint8_t>(2 + mr->extra);
        ins.reads_regs = static_cast<uint8_t>(
            bit(mr->reg) | (mr->mod == 3 ? bit(mr->rm) : mr->addr_reads));
        return ins;
    }

    switch (op) {
    case 0x68: // push imm32
        if (avail < 5)
            return ins;
        ins.mnemonic = MnemonicClass::Push;
        ins.length = 5;
        ins.writes_reg = Esp;
        ins.reads_regs = bit(Esp);
        return ins;
    case 0x6A: // push imm8
        if (avail < 2)
            return ins;
        ins.mnemonic = MnemonicClass::Push;
        ins.length = 2;
        ins.writes_reg = Esp;
        ins.reads_regs = bit(Esp);
        return ins;
    case 0xE8:
    case 0xE9:
        if (avail < 5)
            return ins;
        ins.mnemonic = op == 0xE8 ? MnemonicClass::Call : MnemonicClass::Jmp;
        ins.length = 5;
        ins.branch_target = rel_target(5, read_rel32(b, 1));
        return ins;
    case 0xEB:
        if (avail < 2)
            return ins;
        ins.mnemonic = MnemonicClass::Jmp;
        ins.length = 2;
        ins.branch_target = rel_target(2, static_cast<int8_t>(b[1]));
        return ins;
    case 0xC3:
        ins.mnemonic = MnemonicClass::Ret;
        return ins;
    case 0xC2:
        if (avail < 3)
            return ins;
        ins.mnemonic = MnemonicClass::Ret;
        ins.length = 3;
        return ins;
    case 0xC9:
        ins.mnemonic = MnemonicClass::Leave;
        ins.writes_reg = Ebp;
        ins.reads_regs = bit(Ebp);
        return ins;
    case 0x90:
        ins.mnemonic = MnemonicClass::Nop;
        return ins;
    case 0xCC:
        ins.mnemonic = MnemonicClass::Int3;
        return ins;
    case 0xFF: { // /2 indirect call, /4 indirect jmp
        const auto mr = parse_modrm(b, 1);
        if (!mr || (mr->reg != 2 && mr->reg != 4))
            return ins;
        ins.mnemonic = mr->reg == 2 ? MnemonicClass::Call : MnemonicClass::Jmp;
        ins.length = static_cast<uint8_t>(2 + mr->extra);
        ins.reads_regs = mr->mod == 3 ? bit(mr->rm) : mr->addr_reads;
        return ins;
    }
    default:
        break;
    }

    if (op >= 0x70 && op <= 0x7F) { // jcc rel8
        if (avail < 2)
            return ins;
        ins.mnemonic = MnemonicClass::Jcc;
        ins.length = 2;
        ins.branch_target = rel_target(2, static_cast<int8_t>(b[1]));
        return ins;
    }

    return ins; // unknown, length 1 (covers 66/67 prefixes too)
}

SweepResult linear_sweep(std::span<const uint8_t> bytes) {
    if (bytes.empty())
        throw std::invalid_argument("linear_sweep on empty view");
    SweepResult out;
    uint64_t valid_bytes = 0;
    uint64_t off = 0;
    while (off < bytes.size()) {
        DecodedInstr ins = decode(bytes, off);
        if (ins.mnemonic != MnemonicClass::Unknown)
            valid_bytes += ins.length;
        off += ins.length;
        out.instrs.push_back(std::move(ins));
    }
    out.valid_byte_ratio = static_cast<double>(valid_bytes) / static_cast<double>(bytes.size());
    return out;
}

std::array<uint64_t, kMnemonicClassCount> mnemonic_histogram(const std::vector<DecodedInstr>& instrs) {
    std::array<uint64_t, kMnemonicClassCount> hist{};
    for (const auto& ins : instrs)
        ++hist[static_cast<size_t>(ins.mnemonic)];
    return hist;
}

double prolog_epilog_density(std::span<const uint8_t> bytes) {
    if (bytes.empty())
        throw std::invalid_argument("prolog_epilog_density on empty view");
    uint64_t count = 0;
    for (size_t i = 0; i + 2 <= bytes.size(); ++i) {
        if (i + 3 <= bytes.size() && bytes[i] == 0x55 && bytes[i + 1] == 0x8B && bytes[i + 2] == 0xEC)
            ++count;
        if (bytes[i + 1] == 0xC3 && (bytes[i] == 0xC9 || bytes[i] == 0x5D))
            ++count;
    }
    return static_cast<double>(count) * 1024.0 / static_cast<double>(bytes.size());
}

namespace {

bool is_flow_break(MnemonicClass mc) {
    return mc == MnemonicClass::Jcc || mc == MnemonicClass::Jmp || mc == MnemonicClass::Call ||
           mc == MnemonicClass::Ret || mc == MnemonicClass::Unknown;
}

} // namespace

double dead_write_ratio(const std::vector<DecodedInstr>& instrs) {
    uint64_t writers = 0, dead = 0;
    std::array<bool, 8> pending{}; // write not yet read
    for (const auto& ins : instrs) {
        for (uint8_t r = 0; r < 8; ++r)
            if (ins.reads(r))
                pending[r] = false;
        if (is_flow_break(ins.mnemonic))
            pending.fill(false);
        if (ins.writes_reg) {
            ++writers;
            if (pending[*ins.writes_reg])
                ++dead;
            pending[*ins.writes_reg] = true;
        }
    }
    return writers == 0 ? 0.0 : static_cast<double>(dead) / static_cast<double>(writers);
}

Cfg build_cfg(const std::vector<DecodedInstr>& instrs, uint64_t base) {
    Cfg cfg;
    if (instrs.empty())
        return cfg;

    std::vector<uint64_t> boundaries;
    boundaries.reserve(instrs.size());
    for (const auto& ins : instrs)
        boundaries.push_back(ins.offset);
    const uint64_t span_begin = instrs.front().offset;
    const uint64_t span_end = instrs.back().offset + instrs.back().length;
    const auto on_boundary = [&](int64_t t) {
        return t >= 0 && std::binary_search(boundaries.begin(), boundaries.end(),
                                            static_cast<uint64_t>(t));
    };
    const auto in_region = [&](int64_t t) {
        return t >= static_cast<int64_t>(span_begin) && t < static_cast<int64_t>(span_end);
    };

    std::vector<uint64_t> leaders{span_begin};
    for (size_t i = 0; i < instrs.size(); ++i) {
        const auto& ins = instrs[i];
        const bool branches = ins.mnemonic == MnemonicClass::Jcc ||
                              ins.mnemonic == MnemonicClass::Jmp ||
                              ins.mnemonic == MnemonicClass::Call ||
                              ins.mnemonic == MnemonicClass::Ret;
        if (ins.branch_target) {
            if (in_region(*ins.branch_target) && on_boundary(*ins.branch_target))
                leaders.push_back(static_cast<uint64_t>(*ins.branch_target));
            else
                ++cfg.dangling_targets;
        }
        if (branches && i + 1 < instrs.size())
            leaders.push_back(instrs[i + 1].offset);
    }
    std::sort(leaders.begin(), leaders.end());
    leaders.erase(std::unique(leaders.begin(), leaders.end()), leaders.end());

    for (size_t i = 0; i < leaders.size(); ++i) {
        const uint64_t end = i + 1 < leaders.size() ? leaders[i + 1] : span_end;
        cfg.blocks.push_back({base + leaders[i], base + end});
    }
    const auto block_of = [&](uint64_t off) {
        const auto it = std::upper_bound(leaders.begin(), leaders.end(), off);
        return static_cast<size_t>(it - leaders.begin()) - 1;
    };

    // The last instruction of each block determines its out-edges.
    for (size_t i = 0; i < instrs.size(); ++i) {
        const auto& ins = instrs[i];
        const bool last_in_block =
            i + 1 == instrs.size() || block_of(instrs[i + 1].offset) != block_of(ins.offset);
        if (!last_in_block)
            continue;
        const size_t from = block_of(ins.offset);
        const bool has_next = i + 1 < instrs.size();
        const bool target_ok = ins.branch_target && in_region(*ins.branch_target) &&
                               on_boundary(*ins.branch_target);
        const auto target_block = [&] {
            return block_of(static_cast<uint64_t>(*ins.branch_target));
        };
        switch (ins.mnemonic) {
        case MnemonicClass::Jcc:
            if (target_ok)
                cfg.edges.push_back({from, target_block(), EdgeKind::Jump});
            if (has_next)
                cfg.edges.push_back({from, from + 1, EdgeKind::Fall});
            break;
        case MnemonicClass::Jmp:
            if (target_ok)
                cfg.edges.push_back({from, target_block(), EdgeKind::Jump});
            break;
        case MnemonicClass::Call:
            if (target_ok)
                cfg.edges.push_back({from, target_block(), EdgeKind::Call});
            if (has_next)
                cfg.edges.push_back({from, from + 1, EdgeKind::Fall});
            break;
        case MnemonicClass::Ret:
            break;
        default:
            if (has_next)
                cfg.edges.push_back({from, from + 1, EdgeKind::Fall});
            break;
        }
    }
    return cfg;
}

double code_likelihood(std::span<const uint8_t> bytes, const CodeLikelihoodWeights& w) {
    if (bytes.size() < 64)
        throw std::invalid_argument("code_likelihood needs at least 64 bytes");
    const SweepResult sweep = linear_sweep(bytes);

    std::vector<uint64_t> boundaries;
    boundaries.reserve(sweep.instrs.size());
    for (const auto& ins : sweep.instrs)
        boundaries.push_back(ins.offset);
    uint64_t branches = 0, in_bounds = 0;
    for (const auto& ins : sweep.instrs) {
        if (!ins.branch_target)
            continue;
        ++branches;
        const int64_t t = *ins.branch_target;
        if (t >= 0 && t < static_cast<int64_t>(bytes.size()) &&
            std::binary_search(boundaries.begin(), boundaries.end(), static_cast<uint64_t>(t)))
            ++in_bounds;
    }

    const double valid = sweep.valid_byte_ratio;
    const double prolog = std::min(prolog_epilog_density(bytes) / 4.0, 1.0);
    const double dead_inv = 1.0 - dead_write_ratio(sweep.instrs);
    const double branch =
        branches == 0 ? 0.0 : static_cast<double>(in_bounds) / static_cast<double>(branches);
    const double pointer = std::min(kernel_pointer_density(bytes) * 4.0, 1.0);
    return w.valid * valid + w.prolog * prolog + w.dead_inverse * dead_inv + w.branch * branch +
           w.pointer * pointer;
}

} // namespace mdsa
