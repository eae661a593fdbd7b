#include "mdsa/transforms.hpp"

#include "doctest.h"
#include "oracles.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

using namespace mdsa;

namespace {

double energy(const std::vector<double>& v) {
    double e = 0;
    for (double x : v)
        e += x * x;
    return e;
}

double pyramid_energy(const HaarPyramid& p) {
    double e = energy(p.approximation);
    for (const auto& level : p.details)
        e += energy(level);
    return e;
}

} // namespace

TEST_CASE("stft of a constant series concentrates at DC") {
    std::vector<double> constant(64, 3.25);
    const Spectrogram spec = stft(constant, 8, 4);
    CHECK(spec.magnitudes.size() == (64 - 8) / 4 + 1);
    for (const auto& frame : spec.magnitudes) {
        REQUIRE(frame.size() == 5); // bins 0..4 for frame 8
        CHECK(frame[0] == doctest::Approx(8.0 * 3.25).epsilon(1e-12));
        for (size_t k = 1; k < frame.size(); ++k)
            CHECK(frame[k] < 1e-9);
    }
}

TEST_CASE("stft of an alternating series concentrates at Nyquist") {
    std::vector<double> alt(32);
    for (size_t i = 0; i < alt.size(); ++i)
        alt[i] = (i % 2 == 0) ? 1.0 : -1.0;
    const Spectrogram spec = stft(alt, 8, 8);
    for (const auto& frame : spec.magnitudes) {
        const size_t nyquist = frame.size() - 1;
        CHECK(frame[nyquist] == doctest::Approx(8.0).epsilon(1e-12));
        for (size_t k = 0; k < nyquist; ++k)
            CHECK(frame[k] < 1e-9);
    }
}

TEST_CASE("stft bins match the direct DFT definition") {
    Rng rng(91);
    std::vector<double> values(40);
    for (auto& v : values)
        v = rng.unit() * 8.0;
    const size_t frame = 16, hop = 8;
    const Spectrogram spec = stft(values, frame, hop);
    REQUIRE(spec.magnitudes.size() == (values.size() - frame) / hop + 1);
    for (size_t f = 0; f < spec.magnitudes.size(); ++f) {
        std::span<const double> window(values.data() + f * hop, frame);
        for (size_t k = 0; k < spec.magnitudes[f].size(); ++k)
            CHECK(spec.magnitudes[f][k] ==
                  doctest::Approx(oracle::dft_bin_magnitude(window, k)).epsilon(1e-9));
    }
}

TEST_CASE("stft rejects frames longer than the series") {
    std::vector<double> five(5, 1.0);
    CHECK_THROWS_AS(stft(five, 8, 4), std::invalid_argument);
    CHECK_THROWS_AS(stft(five, 4, 0), std::invalid_argument);
}

TEST_CASE("haar transform preserves energy and inverts exactly") {
    Rng rng(101);
    for (int trial = 0; trial < 50; ++trial) {
        const size_t len = 32 + rng.uniform(512);
        const size_t levels = 1 + rng.uniform(5);
        std::vector<double> values(len);
        for (auto& v : values)
            v = rng.unit() * 16.0 - 8.0;
        if (len < (size_t{1} << levels))
            continue;

        const HaarPyramid pyr = haar_wavelet(values, levels);
        const size_t used = pyr.used_length;
        CHECK(used % (size_t{1} << levels) == 0);
        CHECK(used <= len);

        const double in_energy =
            energy(std::vector<double>(values.begin(), values.begin() + used));
        CHECK(oracle::close_rel(in_energy, pyramid_energy(pyr), 1e-9));

        const std::vector<double> back = haar_inverse(pyr);
        REQUIRE(back.size() == used);
        for (size_t i = 0; i < used; ++i)
            CHECK(back[i] == doctest::Approx(values[i]).epsilon(1e-12));
    }
}

TEST_CASE("haar details vanish on constant series") {
    std::vector<double> constant(64, 2.0);
    const HaarPyramid pyr = haar_wavelet(constant, 3);
    for (const auto& level : pyr.details)
        for (double d : level)
            CHECK(std::abs(d) < 1e-12);
    CHECK_THROWS_AS(haar_wavelet(std::vector<double>(4, 1.0), 12), std::invalid_argument);
}

TEST_CASE("zipf fit recovers synthesized parameters") {
    // Exact law with s = 1.2, q = 2: the grid must select q = 2 and land
    // within 5% on s.
    const auto freqs = oracle::zipf_frequencies(1.2, 2.0, 1000.0, 100);
    const ZipfFit fit = zipf_fit(freqs);
    CHECK(fit.shift_q == doctest::Approx(2.0));
    CHECK(std::abs(fit.exponent_s - 1.2) <= 0.05 * 1.2);
    CHECK(fit.r_squared > 0.9999);
    CHECK(fit.ranks_used == 100);
}

TEST_CASE("zipf fit on flat data reports near-zero exponent") {
    const std::vector<double> flat(64, 5.0);
    const ZipfFit fit = zipf_fit(flat);
    CHECK(std::abs(fit.exponent_s) <= 0.05);
}

TEST_CASE("zipf fit requires three ranks and ignores order") {
    CHECK_THROWS_AS(zipf_fit(std::vector<double>{3.0, 1.0}), std::invalid_argument);
    // Input order is irrelevant: ranks come from sorting by frequency.
    const auto sorted = oracle::zipf_frequencies(1.0, 0.0, 100.0, 50);
    std::vector<double> shuffled = sorted;
    Rng rng(111);
    for (size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[rng.uniform(i)]);
    const ZipfFit a = zipf_fit(sorted);
    const ZipfFit b = zipf_fit(shuffled);
    CHECK(a.exponent_s == doctest::Approx(b.exponent_s).epsilon(1e-12));
    CHECK(a.shift_q == b.shift_q);
}

TEST_CASE("zipf fit from histogram uses non-zero counts") {
    ByteHistogram h{};
    h.counts[10] = 400;
    h.counts[20] = 200;
    h.counts[30] = 100;
    h.counts[40] = 50;
    h.total = 750;
    const ZipfFit fit = zipf_fit(h);
    CHECK(fit.ranks_used == 4);
    // Frequencies halve per rank: close to f ~ 2^-r, i.e. steep decay.
    CHECK(fit.exponent_s > 0.5);
}
