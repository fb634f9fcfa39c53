#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cect/errors.hpp"
#include "cect/image.hpp"
#include "cect/rng.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace cect;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const std::string& name) {
    return (fs::temp_directory_path() / ("cect_image_test_" + name)).string();
}

std::vector<char> read_all(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::vector<char>(std::istreambuf_iterator<char>(is), {});
}

void write_all(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Volume random_volume(int w, int h, int d, uint64_t seed) {
    Volume v(w, h, d);
    v.spacing_x = 0.7f;
    v.spacing_y = 0.7f;
    v.spacing_z = 3.0f;
    Rng rng(seed);
    for (float& hu : v.hu) hu = static_cast<float>(rng.uniform(-1000.0, 3000.0));
    return v;
}

} // namespace

TEST_CASE("volume round trip is bit exact") {
    const Volume v = random_volume(7, 5, 3, 42);
    const std::string path = temp_path("roundtrip.huv");
    save_volume(v, path);
    const Volume r = load_volume(path);
    CHECK(r.width == v.width);
    CHECK(r.height == v.height);
    CHECK(r.depth == v.depth);
    CHECK(r.spacing_x == v.spacing_x);
    CHECK(r.spacing_y == v.spacing_y);
    CHECK(r.spacing_z == v.spacing_z);
    CHECK(r.hu == v.hu);
    std::remove(path.c_str());
}

TEST_CASE("masks stay exactly binary through a round trip") {
    Volume m(6, 6, 2);
    Rng rng(9);
    for (float& hu : m.hu) hu = rng.uniform() < 0.5 ? 0.0f : 1.0f;
    const std::string path = temp_path("mask.huv");
    save_volume(m, path);
    const Volume r = load_volume(path);
    CHECK(r.hu == m.hu);
    for (float v : r.hu) CHECK((v == 0.0f || v == 1.0f));
    std::remove(path.c_str());
}

TEST_CASE("corrupted magic is rejected") {
    const Volume v = random_volume(4, 4, 1, 1);
    const std::string path = temp_path("magic.huv");
    save_volume(v, path);
    auto bytes = read_all(path);
    bytes[0] = 'X';
    write_all(path, bytes);
    CHECK_THROWS_AS(load_volume(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("unsupported version is rejected") {
    const Volume v = random_volume(4, 4, 1, 2);
    const std::string path = temp_path("version.huv");
    save_volume(v, path);
    auto bytes = read_all(path);
    bytes[4] = 99; // version field follows the 4-byte magic
    write_all(path, bytes);
    CHECK_THROWS_AS(load_volume(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("truncated payload is rejected") {
    const Volume v = random_volume(8, 8, 2, 3);
    const std::string path = temp_path("trunc.huv");
    save_volume(v, path);
    auto bytes = read_all(path);
    bytes.resize(bytes.size() - 5);
    write_all(path, bytes);
    CHECK_THROWS_AS(load_volume(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("trailing bytes after the payload are rejected") {
    const Volume v = random_volume(3, 3, 1, 4);
    const std::string path = temp_path("trailing.huv");
    save_volume(v, path);
    auto bytes = read_all(path);
    bytes.push_back(0);
    write_all(path, bytes);
    CHECK_THROWS_AS(load_volume(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("header dimensions disagreeing with payload length are rejected") {
    const Volume v = random_volume(4, 4, 2, 5);
    const std::string path = temp_path("dims.huv");
    save_volume(v, path);
    auto bytes = read_all(path);
    // width field is the u32 right after magic + u16 version
    bytes[6] = 5;
    write_all(path, bytes);
    CHECK_THROWS_AS(load_volume(path), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("missing file raises an io error naming the path") {
    const std::string path = temp_path("does_not_exist.huv");
    try {
        load_volume(path);
        FAIL("expected IoError");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find(path) != std::string::npos);
    }
}

TEST_CASE("slice extraction and insertion are inverses") {
    const Volume v = random_volume(5, 4, 3, 6);
    Volume w(5, 4, 3);
    for (int z = 0; z < 3; ++z) w.set_slice(z, v.slice(z));
    CHECK(w.hu == v.hu);
    const Slice s = v.slice(1);
    CHECK(s.width == 5);
    CHECK(s.height == 4);
    CHECK(s.at(2, 3) == v.hu[static_cast<size_t>(1) * 20 + 3 * 5 + 2]);
}

TEST_CASE("from_slice wraps a slice as a single-slice volume") {
    Slice s(3, 2);
    for (int i = 0; i < 6; ++i) s.hu[static_cast<size_t>(i)] = static_cast<float>(i);
    const Volume v = Volume::from_slice(s);
    CHECK(v.width == 3);
    CHECK(v.height == 2);
    CHECK(v.depth == 1);
    CHECK(v.hu == s.hu);
}
