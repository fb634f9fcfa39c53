#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cect/errors.hpp"
#include "cect/phantom.hpp"
#include "cect/registration.hpp"
#include "cect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

using namespace cect;

namespace {

Slice random_slice(int w, int h, uint64_t seed, double lo = 0.0, double hi = 1000.0) {
    Slice s(w, h);
    Rng rng(seed);
    for (float& v : s.hu) v = static_cast<float>(rng.uniform(lo, hi));
    return s;
}

// Independent entropy oracle: equal-width histogram over the observed range,
// plug-in entropy in nats.
double entropy_oracle(const Slice& img, int bins) {
    float lo = img.hu[0], hi = img.hu[0];
    for (float v : img.hu) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::vector<double> counts(static_cast<size_t>(bins), 0.0);
    for (float v : img.hu) {
        int b = hi > lo ? static_cast<int>((v - lo) / (hi - lo) * bins) : 0;
        b = std::clamp(b, 0, bins - 1);
        counts[static_cast<size_t>(b)] += 1.0;
    }
    const double n = static_cast<double>(img.hu.size());
    double h = 0.0;
    for (double c : counts)
        if (c > 0) h -= c / n * std::log(c / n);
    return h;
}

} // namespace

TEST_CASE("mutual information of an image with itself is its entropy") {
    const Slice a = random_slice(32, 32, 1);
    const double mi = mutual_information(a, a, 32);
    CHECK(mi == doctest::Approx(entropy_oracle(a, 32)).epsilon(1e-12));
}

TEST_CASE("mutual information of independent noise is near zero") {
    const Slice a = random_slice(128, 128, 2);
    const Slice b = random_slice(128, 128, 3);
    const double mi = mutual_information(a, b, 32);
    CHECK(mi >= 0.0);
    CHECK(mi <= 0.05);
}

TEST_CASE("monotone remap preserves mutual information") {
    // affine remaps keep equal-width bin assignments identical
    const Slice a = random_slice(64, 64, 4);
    Slice b = a;
    for (float& v : b.hu) v = 2.0f * v + 5.0f;
    const double h = entropy_oracle(a, 32);
    CHECK(mutual_information(a, b, 32) == doctest::Approx(h).epsilon(1e-9));
}

TEST_CASE("mutual information is symmetric") {
    const Slice a = random_slice(48, 48, 5);
    Slice b = random_slice(48, 48, 6);
    // correlate them somewhat
    for (size_t i = 0; i < b.hu.size(); ++i) b.hu[i] = 0.5f * b.hu[i] + 0.5f * a.hu[i];
    CHECK(std::abs(mutual_information(a, b, 32) - mutual_information(b, a, 32)) <= 1e-12);
}

TEST_CASE("constant images carry zero information") {
    Slice a(16, 16, 40.0f);
    const Slice b = random_slice(16, 16, 7);
    CHECK(mutual_information(a, a, 32) == 0.0);
    CHECK(mutual_information(a, b, 32) == 0.0);
}

TEST_CASE("mutual information respects the validity mask") {
    const Slice a = random_slice(24, 24, 8);
    Slice b = a;
    // destroy the relationship only where the mask is off
    Slice valid(24, 24, 1.0f);
    Rng rng(9);
    for (int i = 0; i < 200; ++i) {
        const size_t k = rng.below(b.hu.size());
        valid.hu[k] = 0.0f;
        b.hu[k] = static_cast<float>(rng.uniform(0.0, 1000.0));
    }
    // restricted to valid pixels, b == a, so MI equals the masked entropy
    Slice masked_a(24, 24);
    masked_a.hu.clear();
    for (size_t i = 0; i < a.hu.size(); ++i)
        if (valid.hu[i] == 1.0f) masked_a.hu.push_back(a.hu[i]);
    masked_a.width = static_cast<int>(masked_a.hu.size());
    masked_a.height = 1;
    CHECK(mutual_information(a, b, 32, &valid) ==
          doctest::Approx(entropy_oracle(masked_a, 32)).epsilon(1e-12));
}

TEST_CASE("mi rejects invalid arguments") {
    const Slice a = random_slice(8, 8, 10);
    const Slice b = random_slice(8, 7, 11);
    CHECK_THROWS_AS(mutual_information(a, b, 32), ShapeError);
    CHECK_THROWS_AS(mutual_information(a, a, 1), UsageError);
}

TEST_CASE("rigid transform inverse composes to identity") {
    const RigidTransform2D t{3.2, -2.1, 7.0};
    const RigidTransform2D inv = t.inverse();
    // compose by resampling twice and checking a smooth image survives
    Slice img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            img.at(x, y) = static_cast<float>(std::sin(x * 0.2) * std::cos(y * 0.17) * 100.0);
    const Slice once = resample(img, t, Interp::Bilinear, 0.0f);
    const Slice back = resample(once, inv, Interp::Bilinear, 0.0f);
    double err = 0.0;
    int counted = 0;
    for (int y = 16; y < 48; ++y)
        for (int x = 16; x < 48; ++x) {
            err += std::abs(back.at(x, y) - img.at(x, y));
            ++counted;
        }
    CHECK(err / counted < 2.0); // interpolation blur only
    CHECK(t.inverse().inverse().tx == doctest::Approx(t.tx).epsilon(1e-12));
    CHECK(t.inverse().inverse().theta_deg == doctest::Approx(t.theta_deg).epsilon(1e-12));
}

TEST_CASE("resample with the identity transform is exact") {
    const Slice img = random_slice(33, 47, 12);
    const Slice out = resample(img, RigidTransform2D{}, Interp::Bilinear, -1000.0f);
    CHECK(out.hu == img.hu);
    const Slice out_n = resample(img, RigidTransform2D{}, Interp::Nearest, -1000.0f);
    CHECK(out_n.hu == img.hu);
}

TEST_CASE("integer translation with nearest interpolation shifts exactly") {
    const Slice img = random_slice(16, 16, 13);
    const Slice out = resample(img, RigidTransform2D{1.0, 0.0, 0.0}, Interp::Nearest, -7.0f);
    for (int y = 0; y < 16; ++y) {
        CHECK(out.at(0, y) == -7.0f); // newly exposed column takes the fill
        for (int x = 1; x < 16; ++x) CHECK(out.at(x, y) == img.at(x - 1, y));
    }
}

TEST_CASE("rotation round trip stays within interpolation blur") {
    Slice img(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x)
            img.at(x, y) = static_cast<float>(50.0 * std::sin(0.3 * x) + 30.0 * std::cos(0.2 * y));
    const RigidTransform2D rot{0.0, 0.0, 9.0};
    const Slice there = resample(img, rot, Interp::Bilinear, 0.0f);
    const Slice back = resample(there, RigidTransform2D{0.0, 0.0, -9.0}, Interp::Bilinear, 0.0f);
    double se = 0.0;
    int counted = 0;
    for (int y = 20; y < 44; ++y)
        for (int x = 20; x < 44; ++x) {
            const double d = back.at(x, y) - img.at(x, y);
            se += d * d;
            ++counted;
        }
    CHECK(std::sqrt(se / counted) < 3.0);
}

TEST_CASE("registering an image to itself returns near identity") {
    PhantomConfig cfg;
    const PhantomPair p = generate_pair(cfg, 101);
    const RegisterResult res = register_rigid(p.ct, p.ct);
    CHECK(res.transform.near_identity(0.5, 0.5));
    CHECK(res.mi_final >= res.mi_initial);
}

TEST_CASE("known displacement is recovered within tolerance") {
    PhantomConfig cfg;
    cfg.noise_sigma = 5.0f; // keep the MI landscape sharp enough for 0.5-degree
                            // recovery; heavy noise is exercised elsewhere
    const PhantomPair p = generate_pair(cfg, 202);
    const RigidTransform2D applied{3.2, -2.1, 7.0};
    const Slice displaced = resample(p.cect, applied, Interp::Bilinear, p.background_hu);

    const RegisterResult res = register_rigid(displaced, p.ct);
    const RigidTransform2D expected = applied.inverse();
    CHECK(std::abs(res.transform.tx - expected.tx) <= 0.5);
    CHECK(std::abs(res.transform.ty - expected.ty) <= 0.5);
    CHECK(std::abs(res.transform.theta_deg - expected.theta_deg) <= 0.5);
    CHECK(res.mi_final >= res.mi_initial);
}

TEST_CASE("registration is deterministic") {
    PhantomConfig cfg;
    const PhantomPair p = generate_pair(cfg, 303);
    const Slice displaced =
        resample(p.cect, RigidTransform2D{-4.0, 2.5, -6.0}, Interp::Bilinear, p.background_hu);
    const RegisterResult a = register_rigid(displaced, p.ct);
    const RegisterResult b = register_rigid(displaced, p.ct);
    CHECK(a.transform.tx == b.transform.tx);
    CHECK(a.transform.ty == b.transform.ty);
    CHECK(a.transform.theta_deg == b.transform.theta_deg);
    CHECK(a.mi_final == b.mi_final);
}

TEST_CASE("downsample keeps constants constant") {
    Slice img(64, 64, 123.5f);
    const Slice out = downsample_to(img, 16);
    CHECK(out.width == 16);
    CHECK(out.height == 16);
    for (float v : out.hu) CHECK(v == doctest::Approx(123.5).epsilon(1e-6));
}

TEST_CASE("downsampling a 2x checkerboard averages to the midpoint") {
    Slice img(8, 8);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) img.at(x, y) = ((x + y) % 2 == 0) ? 0.0f : 100.0f;
    const Slice out = downsample_to(img, 4);
    for (float v : out.hu) CHECK(v == doctest::Approx(50.0).epsilon(1e-6));
}

TEST_CASE("downsampling preserves the mean") {
    PhantomConfig cfg;
    cfg.image_size = 512;
    const PhantomPair p = generate_pair(cfg, 404);
    const Slice small = downsample_to(p.ct, 128);
    double mean_full = 0.0, mean_small = 0.0;
    for (float v : p.ct.hu) mean_full += v;
    for (float v : small.hu) mean_small += v;
    mean_full /= static_cast<double>(p.ct.hu.size());
    mean_small /= static_cast<double>(small.hu.size());
    CHECK(std::abs(mean_full - mean_small) <= 0.5);
}

TEST_CASE("upsampling requests are rejected") {
    Slice img(16, 16, 0.0f);
    CHECK_THROWS_AS(downsample_to(img, 32), UsageError);
}
