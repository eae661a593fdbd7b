#pragma once

#include "mdsa/dump.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mdsa {

// Per-window statistics. Offsets are dump-relative; entropies in bits.
struct WindowStats {
    uint64_t offset = 0;
    double shannon_bits = 0;     // [0, 8]
    double fast_entropy = 1;     // [1, 2 - 2^-16]
    double chi_square = 0;       // vs uniform expectation n/256
    double hamming_fraction = 0; // set bits / total bits
    double mean = 0;
    double stddev = 0;
    double kurtosis = 0;         // excess; 0 for zero-variance windows
    double bigram_bits = 0;      // entropy over overlapping byte pairs
    bool degenerate = false;     // zero-variance window
};

// Shannon entropy in bits, H = -sum p*log2(p) over non-zero counts.
double shannon_entropy(const ByteHistogram& hist);

// Cubic entropy surrogate F = sum p*(2 - p^2) = 2 - sum p^3.
// Range [1, 2 - 2^-16]; 1 exactly when a single symbol dominates the
// whole window, maximal on the uniform distribution.
double fast_entropy(const ByteHistogram& hist);

// Affine rescale of fast_entropy onto [0, 1] so thresholds are
// comparable with normalized Shannon entropy.
double fast_entropy_normalized(const ByteHistogram& hist);

// Chi-square statistic against the uniform expectation total/256.
double chi_square(const ByteHistogram& hist);

// Set-bit fraction: popcount / (8 * len).
double hamming_weight_fraction(std::span<const uint8_t> bytes);

struct Moments {
    double mean = 0;
    double stddev = 0;
    double kurtosis = 0; // excess kurtosis; sentinel 0 when degenerate
    bool degenerate = false;
};

// Population moments over byte values.
Moments moments(std::span<const uint8_t> bytes);

// Shannon entropy over overlapping n-grams, n in {1,2,3}.
// n = 1 coincides with shannon_entropy of the byte histogram.
double ngram_entropy(std::span<const uint8_t> bytes, int n);

WindowStats compute_window_stats(std::span<const uint8_t> window, uint64_t offset);

enum class Metric {
    Shannon,
    FastEntropy,
    FastEntropyNorm,
    ChiSquare,
    Hamming,
    Mean,
    Stddev,
    Kurtosis,
    Bigram,
};

const char* metric_name(Metric m);
Metric metric_from_name(const std::string& name);

// Declared [lo, hi] range of each metric, used for color mapping and
// threshold normalization.
void metric_range(Metric m, double& lo, double& hi);

struct EntropySeries {
    std::vector<double> values;
    size_t stride = 0;
    size_t window_len = 0;
    Metric metric = Metric::Shannon;
};

// One metric value per sliding window, in offset order.
EntropySeries entropy_series(const MemoryDump& dump, const WindowConfig& cfg, Metric metric);
EntropySeries entropy_series(std::span<const uint8_t> bytes, const WindowConfig& cfg, Metric metric);

} // namespace mdsa
