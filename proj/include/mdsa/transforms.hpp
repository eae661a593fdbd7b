#pragma once

#include "mdsa/stats.hpp"

#include <vector>

namespace mdsa {

// Short-term Fourier analysis of a metric series. Rectangular window;
// each row holds magnitude bins 0..frame/2 (DC through Nyquist).
struct Spectrogram {
    size_t frame = 0;
    size_t hop = 0;
    std::vector<std::vector<double>> magnitudes; // frames x (frame/2 + 1)
};

Spectrogram stft(const EntropySeries& series, size_t frame, size_t hop);
Spectrogram stft(const std::vector<double>& values, size_t frame, size_t hop);

// Orthonormal Haar decomposition. Input is truncated to the largest
// multiple of 2^levels; energy is preserved by construction.
struct HaarPyramid {
    size_t levels = 0;
    size_t used_length = 0;                   // truncated input length
    std::vector<double> approximation;        // coarsest averages
    std::vector<std::vector<double>> details; // details[0] is finest
};

HaarPyramid haar_wavelet(const EntropySeries& series, size_t levels);
HaarPyramid haar_wavelet(const std::vector<double>& values, size_t levels);
std::vector<double> haar_inverse(const HaarPyramid& pyramid);

// Least-squares fit of the rank-frequency model f(r) = C / (r + q)^s
// on log f vs log(r + q); the shift q is grid-searched over
// {0, 0.5, ..., 10} and the fit with the best r^2 wins.
struct ZipfFit {
    double exponent_s = 0;
    double shift_q = 0;
    double log_intercept = 0; // natural-log intercept, ln C
    double r_squared = 0;
    int ranks_used = 0;
};

ZipfFit zipf_fit(std::vector<double> frequencies);
ZipfFit zipf_fit(const ByteHistogram& hist);

} // namespace mdsa
