#include "cect/dataset.hpp"

#include "cect/errors.hpp"
#include "cect/hu.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>

namespace cect {

namespace fs = std::filesystem;
using nlohmann::json;

void Manifest::save(const std::string& path) const {
    json arr = json::array();
    for (const DatasetEntry& e : entries) {
        json row{{"id", e.id},
                 {"ct", e.ct_path},
                 {"cect", e.cect_path},
                 {"chamber_mask", e.chamber_path},
                 {"heart_mask", e.heart_path},
                 {"seed", e.seed},
                 {"chamber_voxels", e.chamber_voxels},
                 {"background_hu", e.background_hu}};
        if (e.displaced)
            row["displacement"] = {{"tx", e.displacement.tx},
                                   {"ty", e.displacement.ty},
                                   {"theta_deg", e.displacement.theta_deg}};
        arr.push_back(std::move(row));
    }
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << json{{"volumes", arr}}.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + path);
}

Manifest Manifest::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw FormatError("bad manifest JSON in " + path + ": " + e.what());
    }
    Manifest m;
    try {
        for (const json& row : doc.at("volumes")) {
            DatasetEntry e;
            e.id = row.at("id").get<std::string>();
            e.ct_path = row.at("ct").get<std::string>();
            e.cect_path = row.at("cect").get<std::string>();
            e.chamber_path = row.at("chamber_mask").get<std::string>();
            e.heart_path = row.at("heart_mask").get<std::string>();
            e.seed = row.at("seed").get<uint64_t>();
            e.chamber_voxels = row.at("chamber_voxels").get<int64_t>();
            e.background_hu = row.at("background_hu").get<float>();
            if (row.contains("displacement")) {
                e.displaced = true;
                e.displacement.tx = row.at("displacement").at("tx").get<double>();
                e.displacement.ty = row.at("displacement").at("ty").get<double>();
                e.displacement.theta_deg = row.at("displacement").at("theta_deg").get<double>();
            }
            m.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw FormatError("manifest missing fields in " + path + ": " + e.what());
    }
    return m;
}

VolumeSample load_volume_sample(const DatasetEntry& entry, const std::string& base_dir) {
    auto resolve = [&base_dir](const std::string& p) {
        fs::path fp(p);
        return fp.is_absolute() ? fp.string() : (fs::path(base_dir) / fp).string();
    };
    const Volume ct = load_volume(resolve(entry.ct_path));
    const Volume cect = load_volume(resolve(entry.cect_path));
    const Volume chamber = load_volume(resolve(entry.chamber_path));
    const Volume heart = load_volume(resolve(entry.heart_path));
    if (ct.width != cect.width || ct.height != cect.height || ct.depth != cect.depth ||
        ct.width != chamber.width || ct.height != chamber.height || ct.depth != chamber.depth ||
        ct.width != heart.width || ct.height != heart.height || ct.depth != heart.depth)
        throw FormatError("volume shapes disagree for dataset entry " + entry.id);

    VolumeSample v;
    v.id = entry.id;
    v.voxel_ml = double(ct.spacing_x) * ct.spacing_y * ct.spacing_z / 1000.0;
    for (int z = 0; z < ct.depth; ++z) {
        PhantomPair p;
        p.ct = ct.slice(z);
        p.cect = cect.slice(z);
        p.chamber_mask = chamber.slice(z);
        p.heart_mask = heart.slice(z);
        p.displacement = entry.displacement;
        p.background_hu = entry.background_hu;
        for (float m : p.chamber_mask.hu)
            if (m == 1.0f) ++p.chamber_area_px;
        v.slices.push_back(std::move(p));
    }
    return v;
}

std::vector<VolumeSample> load_dataset(const std::string& manifest_path) {
    const Manifest m = Manifest::load(manifest_path);
    const std::string base = fs::path(manifest_path).parent_path().string();
    std::vector<VolumeSample> out;
    out.reserve(m.entries.size());
    for (const DatasetEntry& e : m.entries) out.push_back(load_volume_sample(e, base));
    return out;
}

TrainingSample to_training_sample(const PhantomPair& pair) {
    const int W = pair.ct.width, H = pair.ct.height;
    auto normalized = [W, H](const Slice& s) {
        std::vector<double> v(s.hu.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = hu_normalize(s.hu[i]);
        return Tensor({1, 1, H, W}, std::move(v));
    };
    auto binary = [W, H](const Slice& s) {
        std::vector<double> v(s.hu.size());
        for (size_t i = 0; i < v.size(); ++i) v[i] = s.hu[i];
        return Tensor({1, 1, H, W}, std::move(v));
    };
    TrainingSample t;
    t.ct = normalized(pair.ct);
    t.cect = normalized(pair.cect);
    t.chamber_mask = binary(pair.chamber_mask);
    t.heart_mask = binary(pair.heart_mask);
    return t;
}

} // namespace cect
