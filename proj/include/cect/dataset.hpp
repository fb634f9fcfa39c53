#pragma once

#include "cect/loss.hpp"
#include "cect/phantom.hpp"

#include <string>
#include <vector>

namespace cect {

/// One generated volume as recorded in a dataset manifest. Paths are stored
/// relative to the manifest file.
struct DatasetEntry {
    std::string id;
    std::string ct_path;
    std::string cect_path;
    std::string chamber_path;
    std::string heart_path;
    uint64_t seed = 0;
    int64_t chamber_voxels = 0;
    float background_hu = -1000.0f; // fill value for rotations (air)
    bool displaced = false;
    RigidTransform2D displacement{};
};

struct Manifest {
    std::vector<DatasetEntry> entries;

    void save(const std::string& path) const;
    static Manifest load(const std::string& path);
};

/// A loaded volume, split into per-slice pairs ready for training.
struct VolumeSample {
    std::string id;
    std::vector<PhantomPair> slices;
    double voxel_ml = 0.0;
};

VolumeSample load_volume_sample(const DatasetEntry& entry, const std::string& base_dir);

/// All volumes of a manifest, in manifest order.
std::vector<VolumeSample> load_dataset(const std::string& manifest_path);

/// Normalized tensors for the loss: images mapped by hu_normalize, masks kept
/// 0/1. All tensors are [1,1,H,W].
TrainingSample to_training_sample(const PhantomPair& pair);

} // namespace cect
