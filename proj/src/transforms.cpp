#include "mdsa/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace mdsa {

Spectrogram stft(const std::vector<double>& values, size_t frame, size_t hop) {
    if (frame == 0)
        throw std::invalid_argument("stft frame must be positive");
    if (hop == 0)
        throw std::invalid_argument("stft hop must be positive");
    if (values.size() < frame)
        throw std::invalid_argument("stft frame exceeds series length");

    Spectrogram out;
    out.frame = frame;
    out.hop = hop;

    const size_t bins = frame / 2 + 1;
    const double step = 2.0 * std::numbers::pi / static_cast<double>(frame);
    for (size_t start = 0; start + frame <= values.size(); start += hop) {
        std::vector<double> row(bins);
        for (size_t k = 0; k < bins; ++k) {
            double re = 0, im = 0;
            for (size_t n = 0; n < frame; ++n) {
                const double angle = step * static_cast<double>(k * n % frame);
                re += values[start + n] * std::cos(angle);
                im -= values[start + n] * std::sin(angle);
            }
            row[k] = std::hypot(re, im);
        }
        out.magnitudes.push_back(std::move(row));
    }
    return out;
}

Spectrogram stft(const EntropySeries& series, size_t frame, size_t hop) {
    return stft(series.values, frame, hop);
}

HaarPyramid haar_wavelet(const std::vector<double>& values, size_t levels) {
    if (levels == 0)
        throw std::invalid_argument("haar levels must be positive");
    if (levels >= 63 || values.size() < (size_t{1} << levels))
        throw std::invalid_argument("haar levels too large for series");
    const size_t chunk = size_t{1} << levels;
    const size_t used = values.size() / chunk * chunk;

    HaarPyramid out;
    out.levels = levels;
    out.used_length = used;

    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    std::vector<double> current(values.begin(), values.begin() + static_cast<ptrdiff_t>(used));
    for (size_t level = 0; level < levels; ++level) {
        const size_t half = current.size() / 2;
        std::vector<double> approx(half), detail(half);
        for (size_t i = 0; i < half; ++i) {
            approx[i] = (current[2 * i] + current[2 * i + 1]) * inv_sqrt2;
            detail[i] = (current[2 * i] - current[2 * i + 1]) * inv_sqrt2;
        }
        out.details.push_back(std::move(detail));
        current = std::move(approx);
    }
    out.approximation = std::move(current);
    return out;
}

HaarPyramid haar_wavelet(const EntropySeries& series, size_t levels) {
    return haar_wavelet(series.values, levels);
}

std::vector<double> haar_inverse(const HaarPyramid& pyramid) {
    if (pyramid.details.size() != pyramid.levels)
        throw std::invalid_argument("haar pyramid is inconsistent");

    const double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
    std::vector<double> current = pyramid.approximation;
    for (size_t level = pyramid.levels; level-- > 0;) {
        const auto& detail = pyramid.details[level];
        if (detail.size() != current.size())
            throw std::invalid_argument("haar pyramid is inconsistent");
        std::vector<double> next(current.size() * 2);
        for (size_t i = 0; i < current.size(); ++i) {
            next[2 * i] = (current[i] + detail[i]) * inv_sqrt2;
            next[2 * i + 1] = (current[i] - detail[i]) * inv_sqrt2;
        }
        current = std::move(next);
    }
    return current;
}

namespace {

struct LineFit {
    double slope = 0;
    double intercept = 0;
    double r_squared = 0;
};

LineFit least_squares(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double denom = n * sxx - sx * sx;
    LineFit fit;
    if (std::abs(denom) < 1e-30) {
        fit.intercept = sy / n;
        fit.r_squared = 0;
        return fit;
    }
    fit.slope = (n * sxy - sx * sy) / denom;
    fit.intercept = (sy - fit.slope * sx) / n;

    double ss_res = 0, ss_tot = 0;
    const double mean_y = sy / n;
    for (size_t i = 0; i < xs.size(); ++i) {
        const double pred = fit.slope * xs[i] + fit.intercept;
        ss_res += (ys[i] - pred) * (ys[i] - pred);
        ss_tot += (ys[i] - mean_y) * (ys[i] - mean_y);
    }
    // Flat data fit exactly by a flat line: treat as a perfect fit.
    if (ss_tot < 1e-30)
        fit.r_squared = ss_res < 1e-30 ? 1.0 : 0.0;
    else
        fit.r_squared = 1.0 - ss_res / ss_tot;
    return fit;
}

} // namespace

ZipfFit zipf_fit(std::vector<double> frequencies) {
    std::erase_if(frequencies, [](double f) { return !(f > 0); });
    std::sort(frequencies.begin(), frequencies.end(), std::greater<>());
    if (frequencies.size() < 3)
        throw std::invalid_argument("zipf fit needs at least 3 nonzero ranks");

    std::vector<double> log_f(frequencies.size());
    for (size_t i = 0; i < frequencies.size(); ++i)
        log_f[i] = std::log(frequencies[i]);

    ZipfFit best;
    best.ranks_used = static_cast<int>(frequencies.size());
    bool have = false;
    std::vector<double> log_r(frequencies.size());
    for (int step = 0; step <= 20; ++step) {
        const double q = 0.5 * step;
        for (size_t i = 0; i < frequencies.size(); ++i)
            log_r[i] = std::log(static_cast<double>(i + 1) + q);
        const LineFit fit = least_squares(log_r, log_f);
        if (!have || fit.r_squared > best.r_squared) {
            have = true;
            best.exponent_s = -fit.slope;
            best.shift_q = q;
            best.log_intercept = fit.intercept;
            best.r_squared = fit.r_squared;
        }
    }
    return best;
}

ZipfFit zipf_fit(const ByteHistogram& hist) {
    std::vector<double> freqs;
    freqs.reserve(256);
    for (uint64_t c : hist.counts)
        if (c > 0)
            freqs.push_back(static_cast<double>(c));
    return zipf_fit(std::move(freqs));
}

} // namespace mdsa
