// cect-forge: phantom generation, rigid registration, training, evaluation,
// and standalone metrics over HUV1 volumes. Every command writes a resolved
// configuration next to its outputs and exits 0 only when all requested
// outputs landed; partial outputs are cleaned up on failure.

#include "cect/dataset.hpp"
#include "cect/errors.hpp"
#include "cect/metrics.hpp"
#include "cect/registration.hpp"
#include "cect/rng.hpp"
#include "cect/run_config.hpp"
#include "cect/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cect;

namespace {

/// Files and directories created by the running command. Unless commit() is
/// reached, everything tracked is removed again, so failures never leave
/// partial outputs behind.
struct Outputs {
    std::vector<fs::path> files;
    std::vector<fs::path> dirs; // removed (recursively) only if we made them
    bool committed = false;

    ~Outputs() {
        if (committed) return;
        std::error_code ec;
        for (const fs::path& f : files) fs::remove(f, ec);
        for (auto it = dirs.rbegin(); it != dirs.rend(); ++it) fs::remove_all(*it, ec);
    }

    fs::path file(const fs::path& p) {
        files.push_back(p);
        return p;
    }
    fs::path dir(const fs::path& p) {
        if (!fs::exists(p)) {
            fs::create_directories(p);
            dirs.push_back(p);
        }
        return p;
    }
    void commit() { committed = true; }
    void keep_everything_written() { // for aborts that retain checkpoints
        files.clear();
        dirs.clear();
    }
};

std::string vol_name(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "vol_%03d", i);
    return buf;
}

json json_number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "+inf" : "-inf";
}

Slice flatten_volume(const Volume& v) {
    Slice s(v.width, v.height * v.depth);
    s.hu = v.hu;
    return s;
}

Volume displace_volume(const Volume& v, const RigidTransform2D& t, Interp interp, float fill) {
    Volume out = v;
    for (int z = 0; z < v.depth; ++z) out.set_slice(z, resample(v.slice(z), t, interp, fill));
    return out;
}

// ---- generate -----------------------------------------------------------

struct GenerateArgs {
    std::string out_dir;
    int count = 0;
    uint64_t seed = 0;
    bool seed_given = false;
    bool displace = false;
    std::string config_path;
    std::vector<std::string> sets;
};

void cmd_generate(const GenerateArgs& a) {
    if (a.count <= 0) throw UsageError("--count must be positive");
    RunConfig cfg = RunConfig::load(a.config_path, a.sets);
    if (a.seed_given) {
        cfg.seed = a.seed;
        cfg.finalize();
    }

    Outputs out;
    out.dir(a.out_dir);
    Manifest manifest;
    for (int i = 0; i < a.count; ++i) {
        const uint64_t vseed = seed_for(cfg.seed, "volume", static_cast<uint64_t>(i));
        PhantomVolume pv = generate_volume(cfg.phantom, vseed);

        DatasetEntry e;
        e.id = vol_name(i);
        e.seed = vseed;
        e.chamber_voxels = pv.chamber_voxels;
        e.background_hu = pv.background_hu;
        if (a.displace) {
            Rng r(seed_for(cfg.seed, "displace", static_cast<uint64_t>(i)));
            e.displaced = true;
            e.displacement.tx = r.uniform(-6.0, 6.0);
            e.displacement.ty = r.uniform(-6.0, 6.0);
            e.displacement.theta_deg = r.uniform(-12.0, 12.0);
            pv.cect = displace_volume(pv.cect, e.displacement, Interp::Bilinear,
                                      pv.background_hu);
        }
        e.ct_path = e.id + "_ct.huv";
        e.cect_path = e.id + "_cect.huv";
        e.chamber_path = e.id + "_chambers.huv";
        e.heart_path = e.id + "_heart.huv";
        save_volume(pv.ct, out.file(fs::path(a.out_dir) / e.ct_path));
        save_volume(pv.cect, out.file(fs::path(a.out_dir) / e.cect_path));
        save_volume(pv.chamber_mask, out.file(fs::path(a.out_dir) / e.chamber_path));
        save_volume(pv.heart_mask, out.file(fs::path(a.out_dir) / e.heart_path));
        manifest.entries.push_back(std::move(e));
    }
    manifest.save(out.file(fs::path(a.out_dir) / "manifest.json"));
    cfg.save(out.file(fs::path(a.out_dir) / "resolved.cfg"));
    out.commit();
    std::cout << "wrote " << a.count << " volumes to " << a.out_dir << "\n";
}

// ---- register -----------------------------------------------------------

struct RegisterArgs {
    std::string moving_path, fixed_path, out_path;
    std::string config_path;
    std::vector<std::string> sets;
};

void cmd_register(const RegisterArgs& a) {
    RunConfig cfg = RunConfig::load(a.config_path, a.sets);
    const Volume moving = load_volume(a.moving_path);
    const Volume fixed = load_volume(a.fixed_path);
    if (moving.width != fixed.width || moving.height != fixed.height ||
        moving.depth != fixed.depth)
        throw ShapeError("moving and fixed volumes have different dimensions");

    // One in-plane transform for the whole stack, estimated on the mid slice.
    const int mid = moving.depth / 2;
    const RegisterResult res = register_rigid(moving.slice(mid), fixed.slice(mid), cfg.reg);

    Outputs out;
    const Volume resampled =
        displace_volume(moving, res.transform, Interp::Bilinear, cfg.reg.fill);
    save_volume(resampled, out.file(a.out_path));
    out.commit();

    json j{{"tx", res.transform.tx},
           {"ty", res.transform.ty},
           {"theta_deg", res.transform.theta_deg},
           {"mi_initial", res.mi_initial},
           {"mi_final", res.mi_final},
           {"converged", res.converged}};
    std::cout << j.dump(2) << "\n";
}

// ---- train --------------------------------------------------------------

struct TrainArgs {
    std::string config_path, data_dir, out_dir;
    std::vector<std::string> sets;
};

void split_sets(const std::vector<VolumeSample>& all, uint64_t master_seed,
                std::vector<VolumeSample>* train_set, std::vector<VolumeSample>* val_set,
                std::vector<VolumeSample>* test_set) {
    const DatasetSplit split =
        split_dataset(static_cast<int>(all.size()), seed_for(master_seed, "split"));
    auto pick = [&](const std::vector<int>& idx, std::vector<VolumeSample>* dst) {
        if (!dst) return;
        for (int i : idx) dst->push_back(all[i]);
    };
    pick(split.train, train_set);
    pick(split.val, val_set);
    pick(split.test, test_set);
}

void cmd_train(const TrainArgs& a) {
    RunConfig cfg = RunConfig::load(a.config_path, a.sets);
    const std::vector<VolumeSample> all =
        load_dataset((fs::path(a.data_dir) / "manifest.json").string());
    std::vector<VolumeSample> train_set, val_set;
    split_sets(all, cfg.seed, &train_set, &val_set, nullptr);

    Outputs out;
    out.dir(a.out_dir);
    const fs::path ckpt_dir = fs::path(a.out_dir) / "checkpoints";
    out.dir(ckpt_dir);
    cfg.save(out.file(fs::path(a.out_dir) / "resolved.cfg"));

    Model model(cfg.model);
    std::vector<Tensor> params;
    for (const auto& [name, t] : model.trainable()) params.push_back(t);
    AdamOptimizer opt(params, cfg.train.learning_rate, cfg.train.beta1, cfg.train.beta2,
                      cfg.train.epsilon);

    TrainOutcome outcome;
    try {
        outcome = train(model, opt, train_set, val_set, cfg.train, ckpt_dir.string());
    } catch (const TrainingError&) {
        // keep resolved.cfg and any completed checkpoints for post-mortem
        out.keep_everything_written();
        throw;
    }
    model.save(out.file(fs::path(a.out_dir) / "weights.cwt"));
    outcome.history.save_csv(out.file(fs::path(a.out_dir) / "history.csv"));
    out.commit();
    std::cout << "trained " << cfg.train.epochs << " epochs; weights at "
              << (fs::path(a.out_dir) / "weights.cwt").string() << "\n";
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    std::string weights_path, data_dir, out_dir;
    std::string config_path;
    std::vector<std::string> sets;
};

void cmd_eval(const EvalArgs& a) {
    std::string config_path = a.config_path;
    if (config_path.empty()) {
        const fs::path sidecar = fs::path(a.weights_path).parent_path() / "resolved.cfg";
        if (!fs::exists(sidecar))
            throw UsageError("no --config given and no resolved.cfg beside the weights");
        config_path = sidecar.string();
    }
    RunConfig cfg = RunConfig::load(config_path, a.sets);

    const std::vector<VolumeSample> all =
        load_dataset((fs::path(a.data_dir) / "manifest.json").string());
    std::vector<VolumeSample> test_set;
    split_sets(all, cfg.seed, nullptr, nullptr, &test_set);

    Model model(cfg.model);
    model.load(a.weights_path);

    Outputs out;
    out.dir(a.out_dir);
    const EvalReport report = evaluate(model, test_set, cfg.eval);
    report.save(out.file(fs::path(a.out_dir) / "report.json"));
    write_bland_altman_csv(report.volume_agreement,
                           out.file(fs::path(a.out_dir) / "bland_altman.csv"));
    cfg.save(out.file(fs::path(a.out_dir) / "resolved.cfg"));

    for (const VolumeSample& vol : test_set) {
        Volume pred(0, 0, 0), seg(0, 0, 0);
        for (size_t z = 0; z < vol.slices.size(); ++z) {
            const PhantomPair& pair = vol.slices[z];
            const Slice p = predict_slice(model, pair);
            const Slice s =
                threshold_segment(p, static_cast<float>(cfg.eval.v_th_hu), pair.heart_mask);
            if (z == 0) {
                pred = Volume(p.width, p.height, static_cast<int>(vol.slices.size()));
                seg = Volume(p.width, p.height, static_cast<int>(vol.slices.size()));
                pred.spacing_x = seg.spacing_x = cfg.phantom.spacing_xy_mm;
                pred.spacing_y = seg.spacing_y = cfg.phantom.spacing_xy_mm;
                pred.spacing_z = seg.spacing_z = cfg.phantom.spacing_z_mm;
            }
            pred.set_slice(static_cast<int>(z), p);
            seg.set_slice(static_cast<int>(z), s);
        }
        save_volume(pred, out.file(fs::path(a.out_dir) / (vol.id + "_pred.huv")));
        save_volume(seg, out.file(fs::path(a.out_dir) / (vol.id + "_seg.huv")));
    }
    out.commit();
    std::cout << "evaluated " << test_set.size() << " test volumes; report at "
              << (fs::path(a.out_dir) / "report.json").string() << "\n";
}

// ---- metrics ------------------------------------------------------------

struct MetricsArgs {
    std::string a_path, b_path, mask_path;
    bool want_dice = false;
};

void cmd_metrics(const MetricsArgs& a) {
    const Volume va = load_volume(a.a_path);
    const Volume vb = load_volume(a.b_path);
    if (va.width != vb.width || va.height != vb.height || va.depth != vb.depth)
        throw ShapeError("inputs have different dimensions");
    const Slice sa = flatten_volume(va);
    const Slice sb = flatten_volume(vb);

    Slice mask;
    if (!a.mask_path.empty()) {
        const Volume vm = load_volume(a.mask_path);
        if (vm.width != va.width || vm.height != va.height || vm.depth != va.depth)
            throw ShapeError("mask dimensions do not match the inputs");
        mask = flatten_volume(vm);
    } else {
        mask = Slice(sa.width, sa.height, 1.0f);
    }

    json j;
    j["nmi"] = json_number(nmi(sa, sb, mask));
    j["psnr_db"] = json_number(psnr(sa, sb, mask));
    if (a.want_dice) {
        if (a.mask_path.empty()) throw UsageError("--dice needs --mask (the heart region)");
        const Slice seg_a = threshold_segment(sa, 300.0f, mask);
        const Slice seg_b = threshold_segment(sb, 300.0f, mask);
        j["dice"] = json_number(dice(seg_a, seg_b));
    }
    std::cout << j.dump(2) << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic contrast enhancement pipeline"};
    app.require_subcommand(1);

    GenerateArgs ga;
    CLI::App* gen = app.add_subcommand("generate", "write phantom volumes and a manifest");
    gen->add_option("--out", ga.out_dir, "output directory")->required();
    gen->add_option("--count", ga.count, "number of volumes")->required();
    CLI::Option* seed_opt = gen->add_option("--seed", ga.seed, "master seed");
    gen->add_flag("--displace", ga.displace, "apply a random rigid shift to each cect");
    gen->add_option("--config", ga.config_path, "configuration file");
    gen->add_option("--set", ga.sets, "key=value override (repeatable)");

    RegisterArgs ra;
    CLI::App* reg = app.add_subcommand("register", "rigid-align moving to fixed");
    reg->add_option("--moving", ra.moving_path, "moving volume (HUV1)")->required();
    reg->add_option("--fixed", ra.fixed_path, "fixed volume (HUV1)")->required();
    reg->add_option("--out", ra.out_path, "resampled output volume")->required();
    reg->add_option("--config", ra.config_path, "configuration file");
    reg->add_option("--set", ra.sets, "key=value override (repeatable)");

    TrainArgs ta;
    CLI::App* tr = app.add_subcommand("train", "train on a generated dataset");
    tr->add_option("--config", ta.config_path, "configuration file");
    tr->add_option("--data", ta.data_dir, "dataset directory (with manifest.json)")->required();
    tr->add_option("--out", ta.out_dir, "output directory")->required();
    tr->add_option("--set", ta.sets, "key=value override (repeatable)");

    EvalArgs ea;
    CLI::App* ev = app.add_subcommand("eval", "evaluate weights on the test split");
    ev->add_option("--weights", ea.weights_path, "weights file (CWT1)")->required();
    ev->add_option("--data", ea.data_dir, "dataset directory (with manifest.json)")->required();
    ev->add_option("--out", ea.out_dir, "output directory")->required();
    ev->add_option("--config", ea.config_path,
                   "configuration file (default: resolved.cfg beside the weights)");
    ev->add_option("--set", ea.sets, "key=value override (repeatable)");

    MetricsArgs ma;
    CLI::App* me = app.add_subcommand("metrics", "print metrics for one volume pair");
    me->add_option("--a", ma.a_path, "first volume")->required();
    me->add_option("--b", ma.b_path, "second volume")->required();
    me->add_option("--mask", ma.mask_path, "region mask");
    me->add_flag("--dice", ma.want_dice, "also report Dice of 300 HU segmentations");

    CLI11_PARSE(app, argc, argv);
    ga.seed_given = seed_opt->count() > 0;

    try {
        if (gen->parsed()) cmd_generate(ga);
        else if (reg->parsed()) cmd_register(ra);
        else if (tr->parsed()) cmd_train(ta);
        else if (ev->parsed()) cmd_eval(ea);
        else if (me->parsed()) cmd_metrics(ma);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
