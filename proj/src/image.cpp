#include "mdsa/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mdsa {

std::string encode_ppm(const Image& img) {
    if (img.width == 0 || img.height == 0)
        throw std::invalid_argument("empty image");
    std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                      "\n255\n";
    out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
    return out;
}

void save_ppm(const Image& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write image: " + path);
    const std::string bytes = encode_ppm(img);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

namespace {

void heat_color(double t, uint8_t& r, uint8_t& g, uint8_t& b) {
    t = std::clamp(t, 0.0, 1.0);
    const auto chan = [](double v) {
        return static_cast<uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    };
    if (t < 1.0 / 3.0) {
        r = chan(3.0 * t);
        g = 0;
        b = 0;
    } else if (t < 2.0 / 3.0) {
        r = 255;
        g = chan(3.0 * t - 1.0);
        b = 0;
    } else {
        r = 255;
        g = 255;
        b = chan(3.0 * t - 2.0);
    }
}

} // namespace

Image render_heatmap(const EntropySeries& series, size_t width) {
    if (series.values.empty())
        throw std::invalid_argument("empty series");
    if (width == 0)
        throw std::invalid_argument("width must be positive");
    double lo = 0, hi = 1;
    metric_range(series.metric, lo, hi);
    const size_t height = (series.values.size() + width - 1) / width;
    Image img(width, height);
    for (size_t i = 0; i < series.values.size(); ++i) {
        const double t = (series.values[i] - lo) / (hi - lo);
        uint8_t r, g, b;
        heat_color(t, r, g, b);
        img.set(i % width, i / width, r, g, b);
    }
    return img;
}

Image render_byteplot(std::span<const uint8_t> bytes, size_t width) {
    if (bytes.empty())
        throw std::invalid_argument("empty dump");
    if (width == 0)
        throw std::invalid_argument("width must be positive");
    const size_t height = (bytes.size() + width - 1) / width;
    Image img(width, height);
    for (size_t i = 0; i < bytes.size(); ++i)
        img.set(i % width, i / width, bytes[i], bytes[i], bytes[i]);
    return img;
}

std::pair<uint32_t, uint32_t> hilbert_order(uint64_t d, unsigned order) {
    if (order == 0 || order > 31)
        throw std::invalid_argument("hilbert order must be in [1, 31]");
    const uint64_t side = 1ULL << order;
    if (d >= side * side)
        throw std::out_of_range("hilbert index out of range");
    uint64_t x = 0, y = 0, t = d;
    for (uint64_t s = 1; s < side; s <<= 1) {
        const uint64_t rx = 1 & (t / 2);
        const uint64_t ry = 1 & (t ^ rx);
        if (ry == 0) {
            if (rx == 1) {
                x = s - 1 - x;
                y = s - 1 - y;
            }
            std::swap(x, y);
        }
        x += s * rx;
        y += s * ry;
        t /= 4;
    }
    return {static_cast<uint32_t>(x), static_cast<uint32_t>(y)};
}

Image render_hilbert(std::span<const uint8_t> bytes, unsigned order) {
    if (bytes.empty())
        throw std::invalid_argument("empty dump");
    const uint64_t side = 1ULL << order;
    const uint64_t cells = side * side;
    Image img(side, side);
    const uint64_t n = std::min<uint64_t>(bytes.size(), cells);
    for (uint64_t d = 0; d < n; ++d) {
        const auto [x, y] = hilbert_order(d, order);
        img.set(x, y, bytes[d], bytes[d], bytes[d]);
    }
    return img;
}

} // namespace mdsa
