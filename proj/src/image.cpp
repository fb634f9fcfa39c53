#include "cect/image.hpp"

#include "cect/errors.hpp"

#include <cstring>
#include <fstream>

namespace cect {

Slice Volume::slice(int z) const {
    if (z < 0 || z >= depth) throw ShapeError("slice index out of range");
    Slice s(width, height);
    const size_t n = static_cast<size_t>(width) * height;
    std::copy(hu.begin() + z * n, hu.begin() + (z + 1) * n, s.hu.begin());
    return s;
}

void Volume::set_slice(int z, const Slice& s) {
    if (z < 0 || z >= depth) throw ShapeError("slice index out of range");
    if (s.width != width || s.height != height)
        throw ShapeError("slice size does not match volume");
    const size_t n = static_cast<size_t>(width) * height;
    std::copy(s.hu.begin(), s.hu.end(), hu.begin() + z * n);
}

Volume Volume::from_slice(const Slice& s) {
    Volume v(s.width, s.height, 1);
    v.hu = s.hu;
    return v;
}

// HUV1 layout: magic "HUV1", u16 version, u32 width/height/depth,
// f32 spacing x/y/z, then width*height*depth f32 values, all little-endian.

namespace {

constexpr uint16_t kVolumeVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw FormatError("truncated volume file");
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

} // namespace

void save_volume(const Volume& v, const std::string& path) {
    if (v.numel() != static_cast<int64_t>(v.hu.size()))
        throw ShapeError("volume payload does not match dimensions");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("HUV1", 4);
    write_le<uint16_t>(os, kVolumeVersion);
    write_le<uint32_t>(os, static_cast<uint32_t>(v.width));
    write_le<uint32_t>(os, static_cast<uint32_t>(v.height));
    write_le<uint32_t>(os, static_cast<uint32_t>(v.depth));
    write_le<float>(os, v.spacing_x);
    write_le<float>(os, v.spacing_y);
    write_le<float>(os, v.spacing_z);
    for (float x : v.hu) write_le<float>(os, x);
    if (!os) throw IoError("write failed: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "HUV1", 4) != 0)
        throw FormatError("not a HUV1 volume: " + path);
    const uint16_t version = read_le<uint16_t>(is);
    if (version != kVolumeVersion)
        throw FormatError("unsupported volume version " + std::to_string(version));
    Volume v;
    v.width = static_cast<int>(read_le<uint32_t>(is));
    v.height = static_cast<int>(read_le<uint32_t>(is));
    v.depth = static_cast<int>(read_le<uint32_t>(is));
    if (v.width <= 0 || v.height <= 0 || v.depth <= 0)
        throw FormatError("invalid volume dimensions in " + path);
    v.spacing_x = read_le<float>(is);
    v.spacing_y = read_le<float>(is);
    v.spacing_z = read_le<float>(is);
    v.hu.resize(static_cast<size_t>(v.numel()));
    for (float& x : v.hu) x = read_le<float>(is);
    // exactly at end of file: any trailing bytes mean the header lied
    is.peek();
    if (!is.eof()) throw FormatError("volume payload longer than header claims: " + path);
    return v;
}

} // namespace cect
