#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mdsa {

// 32-bit general registers; bit positions in reads_regs masks.
enum Reg : uint8_t { Eax = 0, Ecx, Edx, Ebx, Esp, Ebp, Esi, Edi };

const char* reg_name(uint8_t reg);

enum class MnemonicClass : uint8_t {
    Push, Pop, Mov, Arith, CmpTest, Jcc, Jmp, Call, Ret, Leave, Nop, Int3, Xor, Unknown
};
inline constexpr size_t kMnemonicClassCount = 14;

const char* mnemonic_class_name(MnemonicClass mc);

// One decoded instruction. Unknown bytes always consume exactly 1 byte
// so a linear sweep can resynchronize. branch_target is view-relative
// and set only for relative branches; it may land outside the view.
struct DecodedInstr {
    uint64_t offset = 0;
    uint8_t length = 1;
    MnemonicClass mnemonic = MnemonicClass::Unknown;
    std::optional<uint8_t> writes_reg;
    uint8_t reads_regs = 0; // bitmask over Reg
    std::optional<int64_t> branch_target;

    bool reads(uint8_t reg) const { return (reads_regs >> reg) & 1; }
};

DecodedInstr decode(std::span<const uint8_t> bytes, uint64_t offset);

struct SweepResult {
    std::vector<DecodedInstr> instrs;
    double valid_byte_ratio = 0; // bytes under non-unknown instructions / total
};

SweepResult linear_sweep(std::span<const uint8_t> bytes);

std::array<uint64_t, kMnemonicClassCount> mnemonic_histogram(const std::vector<DecodedInstr>& instrs);

// Occurrences of prolog 55 8B EC and epilogs C9 C3 / 5D C3 per KiB,
// counted at byte granularity (overlaps allowed).
double prolog_epilog_density(std::span<const uint8_t> bytes);

// Fraction of register writes overwritten before any read of that
// register. Tracking resets at jcc/jmp/call/ret/unknown.
double dead_write_ratio(const std::vector<DecodedInstr>& instrs);

struct CfgBlock {
    uint64_t start = 0;
    uint64_t end = 0; // exclusive
};

enum class EdgeKind : uint8_t { Fall, Jump, Call };

struct CfgEdge {
    size_t from = 0;
    size_t to = 0;
    EdgeKind kind = EdgeKind::Fall;
};

struct Cfg {
    std::vector<CfgBlock> blocks;
    std::vector<CfgEdge> edges;
    size_t dangling_targets = 0; // branch targets off-boundary or out of region
};

Cfg build_cfg(const std::vector<DecodedInstr>& instrs, uint64_t base = 0);

// Convex fusion of sweep evidence into a code-presence score.
struct CodeLikelihoodWeights {
    double valid = 0.35;
    double prolog = 0.30;
    double dead_inverse = 0.15;
    double branch = 0.15;
    double pointer = 0.05;
};

double code_likelihood(std::span<const uint8_t> bytes,
                       const CodeLikelihoodWeights& weights = {});

} // namespace mdsa
