#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cect/image.hpp"

#include <json.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

using namespace cect;
using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        static int n = 0;
        path = fs::temp_directory_path() /
               ("cect_cli_" + tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(n++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string str() const { return path.string(); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

RunResult run_cli(const std::string& args) {
    static int n = 0;
    const std::string base =
        (fs::temp_directory_path() / ("cect_cli_io_" + std::to_string(::getpid()) + "_" +
                                      std::to_string(n++)))
            .string();
    const std::string cmd =
        std::string(CECT_FORGE_BIN) + " " + args + " >" + base + ".out 2>" + base + ".err";
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(base + ".out");
    r.err = slurp(base + ".err");
    fs::remove(base + ".out");
    fs::remove(base + ".err");
    return r;
}

bool same_bytes(const std::string& a, const std::string& b) { return slurp(a) == slurp(b); }

// the tiny network used everywhere below to keep runtimes low
const std::string kTinyModel =
    " --set model.encoder_channels=2,2,3,3,4,4,5,5 --set model.bottleneck_channels=5"
    " --set model.decoder_channels=5,4,4,3,3,2,2,2";

} // namespace

TEST_CASE("the binary demands a subcommand") {
    CHECK(run_cli("").exit_code != 0);
    CHECK(run_cli("frobnicate").exit_code != 0);
}

TEST_CASE("generate writes a complete, reproducible dataset") {
    TempDir a("gen_a"), b("gen_b"), c("gen_c");
    const std::string common = " --count 4 --seed 77 --set phantom.slices_per_volume=2";

    const RunResult ra = run_cli("generate --out " + a.str() + common);
    CHECK(ra.exit_code == 0);

    const json manifest = json::parse(slurp(a.file("manifest.json")));
    const auto& vols = manifest.at("volumes");
    REQUIRE(vols.size() == 4);
    CHECK(vols[0].at("id") == "vol_000");
    CHECK(vols[3].at("id") == "vol_003");
    for (const json& v : vols) {
        for (const char* key : {"ct", "cect", "chamber_mask", "heart_mask"}) {
            const std::string rel = v.at(key).get<std::string>();
            CHECK(fs::exists(a.path / rel));
        }
        CHECK(v.at("chamber_voxels").get<int64_t>() > 0);
        CHECK_FALSE(v.contains("displacement"));
    }
    const std::string resolved = slurp(a.file("resolved.cfg"));
    CHECK(resolved.find("seed = 77") != std::string::npos);
    CHECK(resolved.find("phantom.slices_per_volume = 2") != std::string::npos);

    // same seed, same bytes
    CHECK(run_cli("generate --out " + b.str() + common).exit_code == 0);
    CHECK(same_bytes(a.file("vol_000_ct.huv"), b.file("vol_000_ct.huv")));
    CHECK(same_bytes(a.file("vol_003_cect.huv"), b.file("vol_003_cect.huv")));
    CHECK(same_bytes(a.file("manifest.json"), b.file("manifest.json")));

    // different seed, different noise
    CHECK(run_cli("generate --out " + c.str() +
                  " --count 4 --seed 78 --set phantom.slices_per_volume=2")
              .exit_code == 0);
    CHECK_FALSE(same_bytes(a.file("vol_000_ct.huv"), c.file("vol_000_ct.huv")));
}

TEST_CASE("generate rejects bad requests and leaves nothing behind") {
    TempDir d("gen_bad");
    const std::string out = (d.path / "ds").string();
    CHECK(run_cli("generate --out " + out + " --count 0 --seed 1").exit_code != 0);
    CHECK_FALSE(fs::exists(out));
    CHECK(run_cli("generate --out " + out + " --count 2 --seed 1 --set no.such.key=5")
              .exit_code != 0);
    CHECK_FALSE(fs::exists(out));
    const RunResult r =
        run_cli("generate --out " + out + " --count 2 --seed 1 --set train.epochs=0");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("error:") != std::string::npos);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("metrics scores identical volumes as a perfect match") {
    TempDir d("metrics");
    REQUIRE(run_cli("generate --out " + d.str() +
                    " --count 1 --seed 5 --set phantom.noise_sigma=0")
                .exit_code == 0);
    const std::string ct = d.file("vol_000_ct.huv");
    const std::string cect = d.file("vol_000_cect.huv");
    const std::string heart = d.file("vol_000_heart.huv");

    const RunResult self = run_cli("metrics --a " + cect + " --b " + cect + " --mask " +
                                   heart + " --dice");
    REQUIRE(self.exit_code == 0);
    const json j = json::parse(self.out);
    CHECK(j.at("nmi").get<double>() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(j.at("psnr_db") == "+inf");
    CHECK(j.at("dice").get<double>() == 1.0);

    // different volumes score strictly lower
    const RunResult cross =
        run_cli("metrics --a " + ct + " --b " + cect + " --mask " + heart);
    REQUIRE(cross.exit_code == 0);
    const json jc = json::parse(cross.out);
    CHECK(jc.at("nmi").get<double>() < 1.0);
    CHECK(jc.at("psnr_db").is_number());
    CHECK_FALSE(jc.contains("dice"));

    // dice needs the mask that gates the segmentation
    CHECK(run_cli("metrics --a " + ct + " --b " + cect + " --dice").exit_code != 0);
}

TEST_CASE("metrics names the missing file") {
    TempDir d("metrics_missing");
    REQUIRE(run_cli("generate --out " + d.str() + " --count 1 --seed 6").exit_code == 0);
    const RunResult r = run_cli("metrics --a " + d.file("vol_000_ct.huv") + " --b " +
                                d.file("nope.huv"));
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("nope.huv") != std::string::npos);
}

TEST_CASE("register recovers the displacement recorded in the manifest") {
    TempDir d("register");
    // 128-px phantoms: rotation recovery error shrinks with image size, and
    // the CLI-level tolerance below assumes at least this much resolution
    REQUIRE(run_cli("generate --out " + d.str() +
                    " --count 2 --seed 41 --displace --set phantom.noise_sigma=5"
                    " --set phantom.image_size=128")
                .exit_code == 0);
    const json manifest = json::parse(slurp(d.file("manifest.json")));
    const json& disp = manifest.at("volumes").at(0).at("displacement");
    const double tx = disp.at("tx").get<double>();
    const double ty = disp.at("ty").get<double>();
    const double theta = disp.at("theta_deg").get<double>();
    CHECK(std::abs(tx) <= 6.0);
    CHECK(std::abs(ty) <= 6.0);
    CHECK(std::abs(theta) <= 12.0);

    // registration should find the inverse of the injected transform
    const double rad = theta * std::numbers::pi / 180.0;
    const double exp_tx = -(std::cos(rad) * tx + std::sin(rad) * ty);
    const double exp_ty = -(-std::sin(rad) * tx + std::cos(rad) * ty);

    const RunResult r = run_cli("register --moving " + d.file("vol_000_cect.huv") +
                                " --fixed " + d.file("vol_000_ct.huv") + " --out " +
                                d.file("aligned.huv"));
    REQUIRE(r.exit_code == 0);
    const json j = json::parse(r.out);
    CHECK(std::abs(j.at("tx").get<double>() - exp_tx) <= 0.75);
    CHECK(std::abs(j.at("ty").get<double>() - exp_ty) <= 0.75);
    CHECK(std::abs(j.at("theta_deg").get<double>() - (-theta)) <= 0.75);
    CHECK(j.at("mi_final").get<double>() > j.at("mi_initial").get<double>());
    CHECK(j.at("converged").get<bool>());
    CHECK(fs::exists(d.file("aligned.huv")));

    const Volume aligned = load_volume(d.file("aligned.huv"));
    const Volume fixed = load_volume(d.file("vol_000_ct.huv"));
    CHECK(aligned.width == fixed.width);
    CHECK(aligned.depth == fixed.depth);
}

TEST_CASE("register rejects mismatched shapes") {
    TempDir d("register_shape");
    REQUIRE(run_cli("generate --out " + d.str() + " --count 1 --seed 9").exit_code == 0);
    Volume small;
    small.width = small.height = 32;
    small.depth = 1;
    small.hu.assign(32 * 32, 0.0f);
    save_volume(small, d.file("small.huv"));
    CHECK(run_cli("register --moving " + d.file("small.huv") + " --fixed " +
                  d.file("vol_000_ct.huv") + " --out " + d.file("x.huv"))
              .exit_code != 0);
}

TEST_CASE("train, retrain, and eval round trip") {
    TempDir d("pipeline");
    const std::string ds = (d.path / "ds").string();
    REQUIRE(run_cli("generate --out " + ds + " --count 15 --seed 33"
                    " --set phantom.noise_sigma=0" +
                    kTinyModel)
                .exit_code == 0);

    const std::string train_sets =
        " --set train.epochs=2 --set train.batch_size=4 --set train.checkpoint_every=2"
        " --set train.augment=false";
    const std::string cfg = " --config " + ds + "/resolved.cfg";

    const std::string run1 = (d.path / "run1").string();
    const RunResult t1 = run_cli("train --data " + ds + " --out " + run1 + cfg + train_sets);
    REQUIRE(t1.exit_code == 0);
    CHECK(fs::exists(run1 + "/weights.cwt"));
    CHECK(fs::exists(run1 + "/resolved.cfg"));
    CHECK(fs::exists(run1 + "/checkpoints/checkpoint_2.cwt"));
    {
        std::ifstream hist(run1 + "/history.csv");
        std::string line;
        int rows = -1; // discount the header
        while (std::getline(hist, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 2);
    }

    // identical config and data: identical weights
    const std::string run2 = (d.path / "run2").string();
    REQUIRE(run_cli("train --data " + ds + " --out " + run2 + cfg + train_sets).exit_code ==
            0);
    CHECK(same_bytes(run1 + "/weights.cwt", run2 + "/weights.cwt"));
    CHECK(same_bytes(run1 + "/history.csv", run2 + "/history.csv"));

    // eval picks up the resolved config beside the weights
    const std::string ev = (d.path / "eval").string();
    REQUIRE(run_cli("eval --weights " + run1 + "/weights.cwt --data " + ds + " --out " + ev)
                .exit_code == 0);
    CHECK(fs::exists(ev + "/report.json"));
    CHECK(fs::exists(ev + "/bland_altman.csv"));
    CHECK(fs::exists(ev + "/resolved.cfg"));

    const json report = json::parse(slurp(ev + "/report.json"));
    // 15 volumes split 12:1:2, so the test split holds 2 volumes
    CHECK(report.at("volumes").size() == 2);
    CHECK(report.at("slices").size() == 2);
    CHECK(report.at("aggregates").contains("dice"));
    for (const json& v : report.at("volumes")) {
        const std::string id = v.at("id").get<std::string>();
        CHECK(fs::exists(ev + "/" + id + "_pred.huv"));
        CHECK(fs::exists(ev + "/" + id + "_seg.huv"));
    }
    {
        std::ifstream ba(ev + "/bland_altman.csv");
        std::string header;
        REQUIRE(std::getline(ba, header));
        CHECK(header == "mean,diff");
        int rows = 0;
        std::string line;
        while (std::getline(ba, line))
            if (!line.empty()) ++rows;
        CHECK(rows == 2);
    }

    // segmentations on disk are strictly binary
    const json first_vol = report.at("volumes").at(0);
    const Volume seg =
        load_volume(ev + "/" + first_vol.at("id").get<std::string>() + "_seg.huv");
    for (float v : seg.hu) CHECK((v == 0.0f || v == 1.0f));
}

TEST_CASE("train failures keep diagnostics but never fake success") {
    TempDir d("train_fail");
    const std::string ds = (d.path / "ds").string();
    REQUIRE(run_cli("generate --out " + ds + " --count 15 --seed 34"
                    " --set phantom.noise_sigma=0" +
                    kTinyModel)
                .exit_code == 0);

    // poison every cect so the failing volume is in the train split for sure
    const json manifest = json::parse(slurp(ds + "/manifest.json"));
    for (const json& v : manifest.at("volumes")) {
        const std::string path = ds + "/" + v.at("cect").get<std::string>();
        Volume vol = load_volume(path);
        const Volume heart = load_volume(ds + "/" + v.at("heart_mask").get<std::string>());
        for (size_t i = 0; i < vol.hu.size(); ++i)
            if (heart.hu[i] == 1.0f) {
                vol.hu[i] = std::nanf("");
                break;
            }
        save_volume(vol, path);
    }

    const std::string out = (d.path / "run").string();
    const RunResult r = run_cli("train --data " + ds + " --out " + out + " --config " + ds +
                                "/resolved.cfg --set train.epochs=2"
                                " --set train.batch_size=2 --set train.checkpoint_every=1");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("non-finite") != std::string::npos);
    CHECK(fs::exists(out + "/resolved.cfg")); // diagnostics survive
    CHECK_FALSE(fs::exists(out + "/weights.cwt"));
    CHECK_FALSE(fs::exists(out + "/history.csv"));
}

TEST_CASE("train validates its configuration before writing anything") {
    TempDir d("train_badcfg");
    const std::string ds = (d.path / "ds").string();
    REQUIRE(run_cli("generate --out " + ds + " --count 4 --seed 35" + kTinyModel).exit_code ==
            0);
    const std::string out = (d.path / "run").string();
    CHECK(run_cli("train --data " + ds + " --out " + out + " --config " + ds +
                  "/resolved.cfg --set train.epochs=0")
              .exit_code != 0);
    CHECK_FALSE(fs::exists(out));
    CHECK(run_cli("train --data " + ds + " --out " + out + " --set no.key=1").exit_code != 0);
    CHECK_FALSE(fs::exists(out));
}

TEST_CASE("eval without a config next to the weights fails cleanly") {
    TempDir d("eval_nocfg");
    const std::string ds = (d.path / "ds").string();
    REQUIRE(run_cli("generate --out " + ds + " --count 4 --seed 36" + kTinyModel).exit_code ==
            0);
    // a weights file in a bare directory, no resolved.cfg alongside
    const std::string orphan = d.file("orphan.cwt");
    std::ofstream(orphan) << "not a real weights file";
    const std::string out = (d.path / "ev").string();
    const RunResult r = run_cli("eval --weights " + orphan + " --data " + ds + " --out " + out);
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("resolved.cfg") != std::string::npos);
    CHECK_FALSE(fs::exists(out));
}
