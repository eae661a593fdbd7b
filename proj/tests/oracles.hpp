#pragma once

// Naive reference implementations used to check the engine. Everything
// here is written for obviousness, not speed: counting with maps,
// direct formula evaluation, position-by-position scans. Agreement with
// the library is evidence precisely because nothing is shared.

#include "mdsa/rng.hpp"
#include "mdsa/signature.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline double shannon_bits(std::span<const uint8_t> bytes) {
    std::map<uint8_t, uint64_t> counts;
    for (uint8_t b : bytes)
        counts[b]++;
    const double n = static_cast<double>(bytes.size());
    double h = 0;
    for (const auto& [value, c] : counts) {
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h;
}

inline double fast_entropy(std::span<const uint8_t> bytes) {
    std::map<uint8_t, uint64_t> counts;
    for (uint8_t b : bytes)
        counts[b]++;
    const double n = static_cast<double>(bytes.size());
    double sum = 0;
    for (const auto& [value, c] : counts) {
        const double p = static_cast<double>(c) / n;
        sum += p * (2.0 - p * p);
    }
    return sum;
}

inline double chi_square(std::span<const uint8_t> bytes) {
    std::array<uint64_t, 256> counts{};
    for (uint8_t b : bytes)
        counts[b]++;
    const double expected = static_cast<double>(bytes.size()) / 256.0;
    double chi = 0;
    for (uint64_t c : counts) {
        const double d = static_cast<double>(c) - expected;
        chi += d * d / expected;
    }
    return chi;
}

inline double hamming_fraction(std::span<const uint8_t> bytes) {
    uint64_t set = 0;
    for (uint8_t b : bytes)
        for (int i = 0; i < 8; ++i)
            set += (b >> i) & 1;
    return static_cast<double>(set) / (8.0 * static_cast<double>(bytes.size()));
}

struct Moments {
    double mean = 0, stddev = 0, kurtosis = 0;
};

inline Moments moments(std::span<const uint8_t> bytes) {
    const double n = static_cast<double>(bytes.size());
    double sum = 0;
    for (uint8_t b : bytes)
        sum += b;
    const double mean = sum / n;
    double m2 = 0, m4 = 0;
    for (uint8_t b : bytes) {
        const double d = static_cast<double>(b) - mean;
        m2 += d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m4 /= n;
    Moments m;
    m.mean = mean;
    m.stddev = std::sqrt(m2);
    m.kurtosis = m2 > 0 ? m4 / (m2 * m2) - 3.0 : 0.0;
    return m;
}

inline double ngram_entropy(std::span<const uint8_t> bytes, int n) {
    std::map<std::vector<uint8_t>, uint64_t> counts;
    for (size_t i = 0; i + n <= bytes.size(); ++i)
        counts[std::vector<uint8_t>(bytes.begin() + i, bytes.begin() + i + n)]++;
    const double total = static_cast<double>(bytes.size() - n + 1);
    double h = 0;
    for (const auto& [gram, c] : counts) {
        const double p = static_cast<double>(c) / total;
        h -= p * std::log2(p);
    }
    return h;
}

// Position-by-position multi-pattern scan, alignment and care masks
// applied literally.
inline std::vector<mdsa::Match> naive_scan(std::span<const uint8_t> input,
                                           const std::vector<mdsa::Signature>& sigs) {
    std::vector<mdsa::Match> out;
    for (uint64_t pos = 0; pos < input.size(); ++pos) {
        for (const auto& s : sigs) {
            if (pos % s.alignment != 0)
                continue;
            if (pos + s.pattern.size() > input.size())
                continue;
            bool ok = true;
            for (size_t i = 0; ok && i < s.pattern.size(); ++i) {
                const uint8_t care = s.mask.empty() ? 0xFF : s.mask[i];
                ok = ((input[pos + i] ^ s.pattern[i]) & care) == 0;
            }
            if (ok)
                out.push_back({s.id, pos, s.pattern.size()});
        }
    }
    std::stable_sort(out.begin(), out.end(), [](const mdsa::Match& a, const mdsa::Match& b) {
        return a.offset != b.offset ? a.offset < b.offset : a.signature_id < b.signature_id;
    });
    return out;
}

// Hilbert curve by quadrant recursion: each order glues four copies of
// the previous one (transposed, shifted, shifted, anti-transposed).
// Independent of the bit-manipulation form in the library.
inline std::vector<std::pair<uint32_t, uint32_t>> hilbert_cells(int order) {
    std::vector<std::pair<uint32_t, uint32_t>> cur = {{0, 0}};
    uint32_t s = 1;
    for (int lvl = 0; lvl < order; ++lvl) {
        std::vector<std::pair<uint32_t, uint32_t>> next;
        next.reserve(cur.size() * 4);
        for (auto [x, y] : cur)
            next.emplace_back(y, x);
        for (auto [x, y] : cur)
            next.emplace_back(x, y + s);
        for (auto [x, y] : cur)
            next.emplace_back(x + s, y + s);
        for (auto [x, y] : cur)
            next.emplace_back(2 * s - 1 - y, s - 1 - x);
        cur = std::move(next);
        s *= 2;
    }
    return cur;
}

// Magnitude of one DFT bin, evaluated directly from the definition.
inline double dft_bin_magnitude(std::span<const double> values, size_t k) {
    double re = 0, im = 0;
    const double n = static_cast<double>(values.size());
    for (size_t t = 0; t < values.size(); ++t) {
        const double phase = -2.0 * M_PI * static_cast<double>(k) * static_cast<double>(t) / n;
        re += values[t] * std::cos(phase);
        im += values[t] * std::sin(phase);
    }
    return std::sqrt(re * re + im * im);
}

inline std::vector<double> ranks_with_ties(const std::vector<double>& xs) {
    const size_t n = xs.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return xs[a] < xs[b]; });
    std::vector<double> ranks(n);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && xs[idx[j + 1]] == xs[idx[i]])
            ++j;
        const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t t = i; t <= j; ++t)
            ranks[idx[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double pearson(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
    const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
    return pearson(ranks_with_ties(xs), ranks_with_ties(ys));
}

// Mann-Whitney AUC: probability a positive scores above a negative,
// ties counted half.
inline double auc(const std::vector<double>& positives, const std::vector<double>& negatives) {
    double wins = 0;
    for (double p : positives)
        for (double q : negatives)
            wins += p > q ? 1.0 : (p == q ? 0.5 : 0.0);
    return wins / (static_cast<double>(positives.size()) * static_cast<double>(negatives.size()));
}

// Exact Zipf-Mandelbrot frequencies f(r) = c / (r + q)^s for r = 1..ranks.
inline std::vector<double> zipf_frequencies(double s, double q, double c, int ranks) {
    std::vector<double> f;
    f.reserve(ranks);
    for (int r = 1; r <= ranks; ++r)
        f.push_back(c / std::pow(static_cast<double>(r) + q, s));
    return f;
}

inline std::vector<uint8_t> random_bytes(mdsa::Rng& rng, size_t n) {
    std::vector<uint8_t> v(n);
    for (auto& b : v)
        b = rng.byte();
    return v;
}

inline bool close_rel(double a, double b, double tol) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

} // namespace oracle
