#include "mdsa/stats.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <stdexcept>

namespace mdsa {

namespace {

void require_nonempty(const ByteHistogram& hist) {
    if (hist.total == 0)
        throw std::invalid_argument("empty histogram");
}

} // namespace

double shannon_entropy(const ByteHistogram& hist) {
    require_nonempty(hist);
    const double n = static_cast<double>(hist.total);
    double h = 0;
    for (uint64_t c : hist.counts) {
        if (c == 0)
            continue;
        const double p = static_cast<double>(c) / n;
        h -= p * std::log2(p);
    }
    return h < 0 ? 0 : h;
}

double fast_entropy(const ByteHistogram& hist) {
    require_nonempty(hist);
    const double n = static_cast<double>(hist.total);
    double cubes = 0;
    for (uint64_t c : hist.counts) {
        if (c == 0)
            continue;
        const double p = static_cast<double>(c) / n;
        cubes += p * p * p;
    }
    return 2.0 - cubes;
}

double fast_entropy_normalized(const ByteHistogram& hist) {
    constexpr double kMax = 1.0 - 0x1.0p-16; // range width of fast_entropy
    return (fast_entropy(hist) - 1.0) / kMax;
}

double chi_square(const ByteHistogram& hist) {
    require_nonempty(hist);
    const double expected = static_cast<double>(hist.total) / 256.0;
    double chi = 0;
    for (uint64_t c : hist.counts) {
        const double d = static_cast<double>(c) - expected;
        chi += d * d / expected;
    }
    return chi;
}

double hamming_weight_fraction(std::span<const uint8_t> bytes) {
    if (bytes.empty())
        throw std::invalid_argument("empty view");
    uint64_t bits = 0;
    size_t i = 0;
    for (; i + 8 <= bytes.size(); i += 8) {
        uint64_t w;
        std::memcpy(&w, bytes.data() + i, 8);
        bits += std::popcount(w);
    }
    for (; i < bytes.size(); ++i)
        bits += std::popcount(static_cast<unsigned>(bytes[i]));
    return static_cast<double>(bits) / (8.0 * static_cast<double>(bytes.size()));
}

Moments moments(std::span<const uint8_t> bytes) {
    if (bytes.empty())
        throw std::invalid_argument("empty view");
    const double n = static_cast<double>(bytes.size());
    uint64_t sum = 0;
    for (uint8_t b : bytes)
        sum += b;
    Moments m;
    m.mean = static_cast<double>(sum) / n;
    double m2 = 0, m4 = 0;
    for (uint8_t b : bytes) {
        const double d = static_cast<double>(b) - m.mean;
        const double d2 = d * d;
        m2 += d2;
        m4 += d2 * d2;
    }
    m2 /= n;
    m4 /= n;
    if (m2 <= 0) {
        m.degenerate = true;
        return m; // stddev 0, kurtosis sentinel 0
    }
    m.stddev = std::sqrt(m2);
    m.kurtosis = m4 / (m2 * m2) - 3.0;
    return m;
}

double ngram_entropy(std::span<const uint8_t> bytes, int n) {
    if (n < 1 || n > 3)
        throw std::invalid_argument("n must be 1, 2 or 3");
    if (bytes.size() < static_cast<size_t>(n))
        throw std::invalid_argument("view shorter than n");
    if (n == 1)
        return shannon_entropy(byte_histogram(bytes));

    // Overlapping n-grams packed into integers, counted via sort.
    std::vector<uint32_t> grams;
    grams.reserve(bytes.size() - n + 1);
    for (size_t i = 0; i + n <= bytes.size(); ++i) {
        uint32_t key = 0;
        for (int k = 0; k < n; ++k)
            key = (key << 8) | bytes[i + k];
        grams.push_back(key);
    }
    std::sort(grams.begin(), grams.end());
    const double total = static_cast<double>(grams.size());
    double h = 0;
    size_t i = 0;
    while (i < grams.size()) {
        size_t j = i;
        while (j < grams.size() && grams[j] == grams[i])
            ++j;
        const double p = static_cast<double>(j - i) / total;
        h -= p * std::log2(p);
        i = j;
    }
    return h < 0 ? 0 : h;
}

WindowStats compute_window_stats(std::span<const uint8_t> window, uint64_t offset) {
    const ByteHistogram hist = byte_histogram(window);
    WindowStats s;
    s.offset = offset;
    s.shannon_bits = shannon_entropy(hist);
    s.fast_entropy = fast_entropy(hist);
    s.chi_square = chi_square(hist);
    s.hamming_fraction = hamming_weight_fraction(window);
    const Moments m = moments(window);
    s.mean = m.mean;
    s.stddev = m.stddev;
    s.kurtosis = m.kurtosis;
    s.degenerate = m.degenerate;
    s.bigram_bits = window.size() >= 2 ? ngram_entropy(window, 2) : 0.0;
    return s;
}

const char* metric_name(Metric m) {
    switch (m) {
    case Metric::Shannon: return "shannon";
    case Metric::FastEntropy: return "fast_entropy";
    case Metric::FastEntropyNorm: return "fast_entropy_norm";
    case Metric::ChiSquare: return "chi2";
    case Metric::Hamming: return "hamming";
    case Metric::Mean: return "mean";
    case Metric::Stddev: return "stddev";
    case Metric::Kurtosis: return "kurtosis";
    case Metric::Bigram: return "bigram";
    }
    return "unknown";
}

Metric metric_from_name(const std::string& name) {
    for (int i = 0; i <= static_cast<int>(Metric::Bigram); ++i) {
        const Metric m = static_cast<Metric>(i);
        if (name == metric_name(m))
            return m;
    }
    throw std::invalid_argument("unknown metric: " + name);
}

void metric_range(Metric m, double& lo, double& hi) {
    switch (m) {
    case Metric::Shannon: lo = 0; hi = 8; return;
    case Metric::FastEntropy: lo = 1; hi = 2.0 - 0x1.0p-16; return;
    case Metric::FastEntropyNorm: lo = 0; hi = 1; return;
    case Metric::ChiSquare: lo = 0; hi = 65536; return;
    case Metric::Hamming: lo = 0; hi = 1; return;
    case Metric::Mean: lo = 0; hi = 255; return;
    case Metric::Stddev: lo = 0; hi = 128; return;
    case Metric::Kurtosis: lo = -3; hi = 13; return;
    case Metric::Bigram: lo = 0; hi = 16; return;
    }
    lo = 0;
    hi = 1;
}

namespace {

double metric_of_window(std::span<const uint8_t> window, Metric metric) {
    switch (metric) {
    case Metric::Shannon: return shannon_entropy(byte_histogram(window));
    case Metric::FastEntropy: return fast_entropy(byte_histogram(window));
    case Metric::FastEntropyNorm: return fast_entropy_normalized(byte_histogram(window));
    case Metric::ChiSquare: return chi_square(byte_histogram(window));
    case Metric::Hamming: return hamming_weight_fraction(window);
    case Metric::Mean: return moments(window).mean;
    case Metric::Stddev: return moments(window).stddev;
    case Metric::Kurtosis: return moments(window).kurtosis;
    case Metric::Bigram: return ngram_entropy(window, 2);
    }
    return 0;
}

} // namespace

EntropySeries entropy_series(std::span<const uint8_t> bytes, const WindowConfig& cfg, Metric metric) {
    EntropySeries series;
    series.stride = cfg.stride;
    series.window_len = cfg.window_len;
    series.metric = metric;
    series.values.reserve(window_count(bytes.size(), cfg));
    for_each_window(bytes, cfg, [&](uint64_t, std::span<const uint8_t> w) {
        series.values.push_back(metric_of_window(w, metric));
    });
    return series;
}

EntropySeries entropy_series(const MemoryDump& dump, const WindowConfig& cfg, Metric metric) {
    return entropy_series(dump.bytes(), cfg, metric);
}

} // namespace mdsa
