#pragma once

#include "cect/image.hpp"
#include "cect/registration.hpp"

#include <cstdint>

namespace cect {

/// Palette and geometry knobs for the synthetic cardiac slices. Left-chamber
/// enhancement must stay above 300 HU and right-chamber enhancement below it,
/// so a 300 HU threshold separates the two phases by construction.
struct PhantomConfig {
    int image_size = 64;
    int slices_per_volume = 1;
    float spacing_xy_mm = 1.0f;
    float spacing_z_mm = 3.0f;

    float hu_air = -1000.0f;
    float hu_soft_tissue = 40.0f;
    float hu_blood_unenhanced = 40.0f;
    float hu_myocardium = 50.0f;
    float left_enhanced_min = 350.0f;
    float left_enhanced_max = 500.0f;
    float right_enhanced_min = 120.0f;
    float right_enhanced_max = 250.0f;
    float noise_sigma = 15.0f;

    float center_jitter = 0.10f;          // chamber centers, fraction of heart axes
    float radius_jitter = 0.25f;          // multiplicative, per chamber axis
    float heart_rotation_max_deg = 20.0f; // whole-heart orientation
    float shading_hu = 0.0f;              // smooth deterministic intensity modulation

    uint64_t seed = 0;

    void validate() const;
};

/// One paired slice with its labels. `displacement` records a rigid transform
/// applied to the cect after generation (identity unless injected).
struct PhantomPair {
    Slice ct;
    Slice cect;
    Slice chamber_mask; // LA ∪ LV, the enhanced left chambers
    Slice heart_mask;
    int64_t chamber_area_px = 0;
    float background_hu = -1000.0f;
    RigidTransform2D displacement{};
};

/// Volume variant: a stack of slices sharing one anatomy with smoothly
/// varying chamber radii along z.
struct PhantomVolume {
    Volume ct;
    Volume cect;
    Volume chamber_mask;
    Volume heart_mask;
    int64_t chamber_voxels = 0;
    float background_hu = -1000.0f;
};

PhantomPair generate_pair(const PhantomConfig& cfg, uint64_t seed);
PhantomVolume generate_volume(const PhantomConfig& cfg, uint64_t seed);

/// Rotates all four images by the same angle about the image center: HU
/// images bilinearly (background fill), masks nearest-neighbor.
PhantomPair rotate_pair(const PhantomPair& pair, double theta_deg);

/// Training augmentation: one rotation angle drawn uniformly from
/// [-max_angle_deg, +max_angle_deg].
PhantomPair augment(const PhantomPair& pair, uint64_t seed, double max_angle_deg = 25.0);

struct DatasetSplit {
    std::vector<int> train;
    std::vector<int> val;
    std::vector<int> test;
};

/// Seeded disjoint split with 120:10:20 proportions at the volume level.
DatasetSplit split_dataset(int n_total, uint64_t seed);

} // namespace cect
