#pragma once

#include "mdsa/stats.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace mdsa {

struct Image {
    size_t width = 0;
    size_t height = 0;
    std::vector<uint8_t> pixels; // rgb, row-major

    Image() = default;
    Image(size_t w, size_t h) : width(w), height(h), pixels(w * h * 3, 0) {}

    void set(size_t x, size_t y, uint8_t r, uint8_t g, uint8_t b) {
        const size_t i = (y * width + x) * 3;
        pixels[i] = r;
        pixels[i + 1] = g;
        pixels[i + 2] = b;
    }
};

// Binary portable pixmap (P6), the uncompressed reference format the
// deterministic image tests hash.
std::string encode_ppm(const Image& img);
void save_ppm(const Image& img, const std::string& path);

// One pixel per series value, row-major wrap at `width`; black -> red
// -> yellow -> white ramp over the metric's declared range. Pixels
// past the last value stay black.
Image render_heatmap(const EntropySeries& series, size_t width);

// One gray pixel per byte, row-major: 0x00 black, 0xFF white.
Image render_byteplot(std::span<const uint8_t> bytes, size_t width);

// Position of index d on the order-n Hilbert curve over the 2^n x 2^n
// grid. Consecutive indices land on 4-neighbor-adjacent cells.
std::pair<uint32_t, uint32_t> hilbert_order(uint64_t d, unsigned order);

// Bytes laid along the Hilbert curve, gray like the byteplot; cells
// past the last byte stay black.
Image render_hilbert(std::span<const uint8_t> bytes, unsigned order);

} // namespace mdsa
