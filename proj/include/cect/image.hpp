#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cect {

/// Single 2D image of HU values, row-major.
struct Slice {
    int width = 0;
    int height = 0;
    std::vector<float> hu;

    Slice() = default;
    Slice(int w, int h, float fill = 0.0f)
        : width(w), height(h), hu(static_cast<size_t>(w) * h, fill) {}

    float& at(int x, int y) { return hu[static_cast<size_t>(y) * width + x]; }
    float at(int x, int y) const { return hu[static_cast<size_t>(y) * width + x]; }
    int64_t numel() const { return static_cast<int64_t>(width) * height; }
};

/// Stack of slices sharing a pixel grid, with physical spacing in mm.
/// Values are stored slice-major then row-major.
struct Volume {
    int width = 0;
    int height = 0;
    int depth = 0;
    float spacing_x = 1.0f;
    float spacing_y = 1.0f;
    float spacing_z = 1.0f;
    std::vector<float> hu;

    Volume() = default;
    Volume(int w, int h, int d, float fill = 0.0f)
        : width(w), height(h), depth(d), hu(static_cast<size_t>(w) * h * d, fill) {}

    int64_t numel() const { return static_cast<int64_t>(width) * height * depth; }
    Slice slice(int z) const;
    void set_slice(int z, const Slice& s);
    static Volume from_slice(const Slice& s);
};

void save_volume(const Volume& v, const std::string& path);
Volume load_volume(const std::string& path);

} // namespace cect
