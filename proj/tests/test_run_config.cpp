#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cect/errors.hpp"
#include "cect/hu.hpp"
#include "cect/run_config.hpp"

#include <filesystem>
#include <fstream>
#include <string>

using namespace cect;
namespace fs = std::filesystem;

namespace {

std::string write_temp(const std::string& body) {
    static int n = 0;
    const std::string path =
        (fs::temp_directory_path() /
         ("cect_cfg_" + std::to_string(::getpid()) + "_" + std::to_string(n++) + ".cfg"))
            .string();
    std::ofstream(path) << body;
    return path;
}

} // namespace

TEST_CASE("defaults finalize cleanly") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.finalize());
    CHECK(cfg.model.input_size == 64);
    CHECK(cfg.train.batch_size == 8);
    CHECK(cfg.loss.v_th == doctest::Approx(hu_normalize(300.0)).epsilon(1e-15));
}

TEST_CASE("empty path loads pure defaults") {
    const RunConfig cfg = RunConfig::load("");
    const RunConfig fresh = [] {
        RunConfig c;
        c.finalize();
        return c;
    }();
    CHECK(cfg.to_text() == fresh.to_text());
}

TEST_CASE("unknown keys are rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.apply("train.momentum", "0.9"), ConfigError);
    const std::string p = write_temp("phantom.imagesize = 64\n");
    CHECK_THROWS_AS(RunConfig::load(p), ConfigError);
    fs::remove(p);
}

TEST_CASE("parser handles comments, blanks, and whitespace") {
    const std::string p = write_temp(
        "# full-line comment\n"
        "\n"
        "  seed = 77   \n"
        "train.epochs=3\n"
        "phantom.noise_sigma = 2.5 # trailing comment\n");
    const RunConfig cfg = RunConfig::load(p);
    fs::remove(p);
    CHECK(cfg.seed == 77);
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.phantom.noise_sigma == 2.5f);
}

TEST_CASE("syntax errors carry the line number") {
    const std::string p = write_temp("seed = 1\nthis line has no equals\n");
    try {
        RunConfig::load(p);
        FAIL("expected a ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("2") != std::string::npos);
    }
    fs::remove(p);
}

TEST_CASE("overrides beat the file which beats the defaults") {
    const std::string p = write_temp("train.epochs = 5\ntrain.batch_size = 4\n");
    const RunConfig cfg = RunConfig::load(p, {"train.epochs=7"});
    fs::remove(p);
    CHECK(cfg.train.epochs == 7);   // override wins
    CHECK(cfg.train.batch_size == 4); // file wins over default 8
    CHECK(cfg.train.checkpoint_every == 50); // default untouched
}

TEST_CASE("malformed overrides are rejected") {
    CHECK_THROWS_AS(RunConfig::load("", {"train.epochs"}), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("", {"train.epochs=zero"}), ConfigError);
}

TEST_CASE("resolved text round trips exactly") {
    RunConfig cfg;
    cfg.seed = 123456789;
    cfg.phantom.noise_sigma = 7.25f;
    cfg.loss_v_th_hu = 310.0;
    cfg.loss.alpha = 1.5;
    cfg.train.learning_rate = 3e-4;
    cfg.train.epochs = 17;
    cfg.model.encoder_channels = {4, 8, 8, 16, 16, 32, 32, 32};
    cfg.finalize();

    const std::string text = cfg.to_text();
    const std::string p = write_temp(text);
    const RunConfig back = RunConfig::load(p);
    fs::remove(p);
    CHECK(back.to_text() == text);
    CHECK(back.seed == cfg.seed);
    CHECK(back.train.learning_rate == cfg.train.learning_rate);
    CHECK(back.model.encoder_channels == cfg.model.encoder_channels);
}

TEST_CASE("every recognized key appears in the resolved text") {
    RunConfig cfg;
    cfg.finalize();
    const std::string text = cfg.to_text();
    for (const std::string& k : RunConfig::keys())
        CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("threshold is stated in HU and derived in normalized units") {
    const RunConfig cfg = RunConfig::load("", {"loss.v_th_hu=350"});
    CHECK(cfg.loss_v_th_hu == 350.0);
    CHECK(cfg.loss.v_th == doctest::Approx(hu_normalize(350.0)).epsilon(1e-15));
    CHECK(cfg.train.loss.v_th == cfg.loss.v_th); // synced into the trainer
}

TEST_CASE("the master seed fans out to every stage") {
    const RunConfig cfg = RunConfig::load("", {"seed=20210115"});
    CHECK(cfg.phantom.seed == 20210115);
    CHECK(cfg.model.seed == 20210115);
    CHECK(cfg.train.seed == 20210115);
}

TEST_CASE("channel lists parse and are length-checked") {
    const RunConfig cfg =
        RunConfig::load("", {"model.encoder_channels=2,2,3,3,4,4,5,5",
                             "model.decoder_channels=5,4,4,3,3,2,2,2",
                             "model.bottleneck_channels=5", "model.input_size=16"});
    CHECK(cfg.model.encoder_channels == std::vector<int>{2, 2, 3, 3, 4, 4, 5, 5});
    CHECK_THROWS_AS(RunConfig::load("", {"model.encoder_channels=4,8"}), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("", {"model.encoder_channels=4,x,8"}), ConfigError);
}

TEST_CASE("invalid values fail at finalize") {
    CHECK_THROWS_AS(RunConfig::load("", {"train.epochs=0"}), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("", {"train.learning_rate=0"}), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("", {"phantom.left_enhanced_min=100"}), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("", {"eval.bins=1"}), ConfigError);
    CHECK_THROWS_AS(RunConfig::load("", {"reg.translation_step_px=0"}), ConfigError);
}

TEST_CASE("booleans accept canonical spellings only") {
    CHECK(RunConfig::load("", {"train.augment=false"}).train.augment == false);
    CHECK(RunConfig::load("", {"train.augment=true"}).train.augment == true);
    CHECK(RunConfig::load("", {"train.augment=0"}).train.augment == false);
    CHECK(RunConfig::load("", {"train.augment=1"}).train.augment == true);
    CHECK_THROWS_AS(RunConfig::load("", {"train.augment=yes"}), ConfigError);
}

TEST_CASE("save writes a loadable file") {
    RunConfig cfg;
    cfg.seed = 42;
    cfg.finalize();
    const std::string p = write_temp("");
    cfg.save(p);
    const RunConfig back = RunConfig::load(p);
    fs::remove(p);
    CHECK(back.seed == 42);
    CHECK(back.to_text() == cfg.to_text());
}

TEST_CASE("missing config files are reported as I/O failures") {
    CHECK_THROWS_AS(RunConfig::load("/nonexistent/dir/x.cfg"), IoError);
}
