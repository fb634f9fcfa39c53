#include "cect/phantom.hpp"

#include "cect/errors.hpp"
#include "cect/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cect {

void PhantomConfig::validate() const {
    if (image_size < 16) throw ConfigError("phantom image_size must be at least 16");
    if (slices_per_volume < 1) throw ConfigError("slices_per_volume must be at least 1");
    if (!(left_enhanced_min > 300.0f))
        throw ConfigError("left-chamber enhancement must stay above 300 HU");
    if (left_enhanced_max < left_enhanced_min)
        throw ConfigError("left enhancement range is inverted");
    if (!(right_enhanced_max < 300.0f))
        throw ConfigError("right-chamber enhancement must stay below 300 HU");
    if (right_enhanced_min > right_enhanced_max)
        throw ConfigError("right enhancement range is inverted");
    if (noise_sigma < 0) throw ConfigError("noise_sigma must be non-negative");
    if (center_jitter < 0 || radius_jitter < 0 || radius_jitter >= 1.0f)
        throw ConfigError("jitter fractions must be in [0,1)");
    if (heart_rotation_max_deg < 0) throw ConfigError("heart rotation range must be non-negative");
    if (shading_hu < 0) throw ConfigError("shading_hu must be non-negative");
    const float max_soft = std::max({hu_soft_tissue, hu_myocardium, hu_blood_unenhanced});
    if (max_soft + shading_hu >= 300.0f)
        throw ConfigError("soft-tissue palette plus shading must stay below 300 HU");
    if (spacing_xy_mm <= 0 || spacing_z_mm <= 0) throw ConfigError("spacings must be positive");
}

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

struct Chamber {
    double cu, cv; // center in heart-normalized coordinates
    double ru, rv; // radii as fractions of the heart semi-axes
    bool left;
    double enhanced_hu;
};

struct Anatomy {
    double body_cx, body_cy, body_a, body_b;
    double heart_cx, heart_cy, heart_a, heart_b, heart_phi_rad;
    Chamber chambers[4];
    double shade_fx, shade_fy, shade_px, shade_py; // shading field frequencies/phases
};

// Nominal four-chamber layout in heart-normalized coordinates; left side at
// negative u. The left chambers are drawn larger, mirroring LV/LA dominance.
constexpr Chamber kLayout[4] = {
    {-0.42, +0.30, 0.30, 0.30, true, 0},  // LV
    {-0.40, -0.42, 0.24, 0.20, true, 0},  // LA
    {+0.40, +0.30, 0.26, 0.26, false, 0}, // RV
    {+0.40, -0.42, 0.22, 0.18, false, 0}, // RA
};

bool geometry_ok(const Anatomy& an) {
    // chamber boundaries sampled densely; everything works in the heart's
    // normalized frame where the heart boundary is the unit circle
    const double margin_u = 1.0 / an.heart_a; // ~1 px margins
    const double margin_v = 1.0 / an.heart_b;
    for (int i = 0; i < 4; ++i) {
        const Chamber& c = an.chambers[i];
        for (int k = 0; k < 64; ++k) {
            const double t = 2.0 * std::numbers::pi * k / 64;
            const double pu = c.cu + (c.ru + margin_u) * std::cos(t);
            const double pv = c.cv + (c.rv + margin_v) * std::sin(t);
            if (pu * pu + pv * pv >= 1.0) return false; // pokes through the wall
            for (int j = 0; j < 4; ++j) {
                if (j == i) continue;
                const Chamber& o = an.chambers[j];
                const double du = (pu - o.cu) / (o.ru + margin_u);
                const double dv = (pv - o.cv) / (o.rv + margin_v);
                if (du * du + dv * dv < 1.0) return false; // touches a neighbor
            }
        }
    }
    return true;
}

Anatomy draw_anatomy(const PhantomConfig& cfg, Rng& rng) {
    const double S = cfg.image_size;
    for (int attempt = 0; attempt < 64; ++attempt) {
        Anatomy an;
        an.body_cx = (S - 1) / 2.0 + rng.uniform(-0.02, 0.02) * S;
        an.body_cy = (S - 1) / 2.0 + rng.uniform(-0.02, 0.02) * S;
        an.body_a = 0.44 * S * (1.0 + rng.uniform(-0.05, 0.05));
        an.body_b = 0.40 * S * (1.0 + rng.uniform(-0.05, 0.05));
        an.heart_cx = (S - 1) / 2.0 + rng.uniform(-0.04, 0.04) * S;
        an.heart_cy = (S - 1) / 2.0 + rng.uniform(-0.04, 0.04) * S;
        an.heart_a = 0.30 * S * (1.0 + rng.uniform(-0.08, 0.08));
        an.heart_b = 0.24 * S * (1.0 + rng.uniform(-0.08, 0.08));
        an.heart_phi_rad =
            rng.uniform(-cfg.heart_rotation_max_deg, cfg.heart_rotation_max_deg) * kDegToRad;
        for (int i = 0; i < 4; ++i) {
            Chamber c = kLayout[i];
            c.cu += rng.uniform(-cfg.center_jitter, cfg.center_jitter);
            c.cv += rng.uniform(-cfg.center_jitter, cfg.center_jitter);
            c.ru *= 1.0 + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter);
            c.rv *= 1.0 + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter);
            c.enhanced_hu = c.left ? rng.uniform(cfg.left_enhanced_min, cfg.left_enhanced_max)
                                   : rng.uniform(cfg.right_enhanced_min, cfg.right_enhanced_max);
            an.chambers[i] = c;
        }
        an.shade_fx = 1.0 + rng.uniform(0.0, 1.0);
        an.shade_fy = 1.0 + rng.uniform(0.0, 1.0);
        an.shade_px = rng.uniform(0.0, 1.0);
        an.shade_py = rng.uniform(0.0, 1.0);
        if (geometry_ok(an)) return an;
    }
    throw Error("phantom geometry rejected after 64 attempts; relax the jitter settings");
}

// Renders one slice of the anatomy; z_scale shrinks the heart and chambers
// away from the volume's central slice.
PhantomPair rasterize(const PhantomConfig& cfg, const Anatomy& an, double z_scale, Rng& noise_ct,
                      Rng& noise_cect) {
    const int S = cfg.image_size;
    PhantomPair p;
    p.ct = Slice(S, S);
    p.cect = Slice(S, S);
    p.chamber_mask = Slice(S, S);
    p.heart_mask = Slice(S, S);
    p.background_hu = cfg.hu_air;

    const double ha = an.heart_a * z_scale, hb = an.heart_b * z_scale;
    const double cphi = std::cos(an.heart_phi_rad), sphi = std::sin(an.heart_phi_rad);
    const double two_pi = 2.0 * std::numbers::pi;

    for (int y = 0; y < S; ++y)
        for (int x = 0; x < S; ++x) {
            const double bx = (x - an.body_cx) / an.body_a;
            const double by = (y - an.body_cy) / an.body_b;
            const bool in_body = bx * bx + by * by <= 1.0;

            const double dx = x - an.heart_cx, dy = y - an.heart_cy;
            const double u = (cphi * dx + sphi * dy) / ha;
            const double v = (-sphi * dx + cphi * dy) / hb;
            const bool in_heart = in_body && u * u + v * v <= 1.0;

            int chamber = -1;
            if (in_heart)
                for (int i = 0; i < 4 && chamber < 0; ++i) {
                    const Chamber& c = an.chambers[i];
                    const double cu = (u - c.cu) / c.ru;
                    const double cv = (v - c.cv) / c.rv;
                    if (cu * cu + cv * cv <= 1.0) chamber = i;
                }

            double ct_hu, cect_hu;
            if (!in_body) {
                ct_hu = cect_hu = cfg.hu_air;
            } else if (!in_heart) {
                ct_hu = cect_hu = cfg.hu_soft_tissue;
            } else if (chamber < 0) {
                ct_hu = cect_hu = cfg.hu_myocardium;
            } else {
                ct_hu = cfg.hu_blood_unenhanced;
                cect_hu = an.chambers[chamber].enhanced_hu;
            }

            if (in_body && cfg.shading_hu > 0) {
                const double shade = cfg.shading_hu *
                                     std::sin(two_pi * (an.shade_fx * x / S + an.shade_px)) *
                                     std::sin(two_pi * (an.shade_fy * y / S + an.shade_py));
                ct_hu += shade;
                cect_hu += shade;
            }
            if (in_heart) {
                // keep the 300 HU threshold a perfect separator
                if (chamber >= 0 && an.chambers[chamber].left)
                    cect_hu = std::max(cect_hu, 301.0);
                else
                    cect_hu = std::min(cect_hu, 299.0);
            }

            p.ct.at(x, y) = static_cast<float>(ct_hu);
            p.cect.at(x, y) = static_cast<float>(cect_hu);
            p.heart_mask.at(x, y) = in_heart ? 1.0f : 0.0f;
            const bool in_left = chamber >= 0 && an.chambers[chamber].left;
            p.chamber_mask.at(x, y) = in_left ? 1.0f : 0.0f;
            if (in_left) ++p.chamber_area_px;
        }

    if (cfg.noise_sigma > 0) {
        for (float& hu : p.ct.hu) hu += static_cast<float>(noise_ct.normal(0.0, cfg.noise_sigma));
        for (float& hu : p.cect.hu)
            hu += static_cast<float>(noise_cect.normal(0.0, cfg.noise_sigma));
    }
    return p;
}

} // namespace

PhantomPair generate_pair(const PhantomConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng geo(seed_for(seed, "phantom-anatomy"));
    const Anatomy an = draw_anatomy(cfg, geo);
    Rng nct(seed_for(seed, "phantom-noise-ct", 0));
    Rng ncect(seed_for(seed, "phantom-noise-cect", 0));
    return rasterize(cfg, an, 1.0, nct, ncect);
}

PhantomVolume generate_volume(const PhantomConfig& cfg, uint64_t seed) {
    cfg.validate();
    Rng geo(seed_for(seed, "phantom-anatomy"));
    const Anatomy an = draw_anatomy(cfg, geo);
    const int d = cfg.slices_per_volume;

    PhantomVolume vol;
    vol.background_hu = cfg.hu_air;
    auto init = [&](Volume& v) {
        v = Volume(cfg.image_size, cfg.image_size, d);
        v.spacing_x = v.spacing_y = cfg.spacing_xy_mm;
        v.spacing_z = cfg.spacing_z_mm;
    };
    init(vol.ct);
    init(vol.cect);
    init(vol.chamber_mask);
    init(vol.heart_mask);

    const double zc = (d - 1) / 2.0;
    for (int z = 0; z < d; ++z) {
        // chambers taper toward the volume ends
        const double scale = d == 1 ? 1.0 : 1.0 - 0.25 * std::abs(z - zc) / std::max(1.0, zc);
        Rng nct(seed_for(seed, "phantom-noise-ct", static_cast<uint64_t>(z)));
        Rng ncect(seed_for(seed, "phantom-noise-cect", static_cast<uint64_t>(z)));
        PhantomPair p = rasterize(cfg, an, scale, nct, ncect);
        vol.ct.set_slice(z, p.ct);
        vol.cect.set_slice(z, p.cect);
        vol.chamber_mask.set_slice(z, p.chamber_mask);
        vol.heart_mask.set_slice(z, p.heart_mask);
        vol.chamber_voxels += p.chamber_area_px;
    }
    return vol;
}

PhantomPair rotate_pair(const PhantomPair& pair, double theta_deg) {
    const RigidTransform2D rot{0.0, 0.0, theta_deg};
    PhantomPair out;
    out.ct = resample(pair.ct, rot, Interp::Bilinear, pair.background_hu);
    out.cect = resample(pair.cect, rot, Interp::Bilinear, pair.background_hu);
    out.chamber_mask = resample(pair.chamber_mask, rot, Interp::Nearest, 0.0f);
    out.heart_mask = resample(pair.heart_mask, rot, Interp::Nearest, 0.0f);
    out.background_hu = pair.background_hu;
    out.displacement = pair.displacement;
    out.chamber_area_px = 0;
    for (float v : out.chamber_mask.hu)
        if (v == 1.0f) ++out.chamber_area_px;
    return out;
}

PhantomPair augment(const PhantomPair& pair, uint64_t seed, double max_angle_deg) {
    Rng rng(seed);
    return rotate_pair(pair, rng.uniform(-max_angle_deg, max_angle_deg));
}

DatasetSplit split_dataset(int n_total, uint64_t seed) {
    if (n_total < 3) throw UsageError("split needs at least 3 volumes");
    const int n_train = static_cast<int>(std::llround(n_total * (120.0 / 150.0)));
    const int n_val = static_cast<int>(std::llround(n_total * (10.0 / 150.0)));
    const int n_test = n_total - n_train - n_val;
    if (n_train < 1 || n_val < 1 || n_test < 1)
        throw UsageError("dataset too small: the 120:10:20 split leaves an empty subset");

    std::vector<int> idx(n_total);
    for (int i = 0; i < n_total; ++i) idx[i] = i;
    Rng rng(seed_for(seed, "dataset-split"));
    for (int i = n_total - 1; i > 0; --i)
        std::swap(idx[i], idx[static_cast<int>(rng.below(static_cast<uint64_t>(i) + 1))]);

    DatasetSplit split;
    split.train.assign(idx.begin(), idx.begin() + n_train);
    split.val.assign(idx.begin() + n_train, idx.begin() + n_train + n_val);
    split.test.assign(idx.begin() + n_train + n_val, idx.end());
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.val.begin(), split.val.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

} // namespace cect
