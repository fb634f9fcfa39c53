#include "cect/run_config.hpp"

#include "cect/errors.hpp"
#include "cect/hu.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace cect {

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        if (!std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad number for " + key + ": '" + v + "'");
    }
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        long n = std::stol(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return static_cast<int>(n);
    } catch (const std::exception&) {
        throw ConfigError("bad integer for " + key + ": '" + v + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long n = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return n;
    } catch (const std::exception&) {
        throw ConfigError("bad seed for " + key + ": '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "' (use true/false)");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    if (out.empty()) throw ConfigError("empty list for " + key);
    return out;
}

// shortest representation that parses back to the same double
std::string fmt(double d) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, d);
    (void)ec;
    return std::string(buf, p);
}

std::string fmt(float f) { return fmt(static_cast<double>(f)); }
std::string fmt(int i) { return std::to_string(i); }
std::string fmt(uint64_t u) { return std::to_string(u); }
std::string fmt(bool b) { return b ? "true" : "false"; }

std::string fmt(const std::vector<int>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(v[i]);
    }
    return out;
}

struct Key {
    const char* name;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define FIELD_D(keyname, member)                                                       \
    Key{keyname, [](RunConfig& c, const std::string& v) { c.member = parse_double(keyname, v); }, \
        [](const RunConfig& c) { return fmt(c.member); }}
#define FIELD_F(keyname, member)                                                       \
    Key{keyname,                                                                       \
        [](RunConfig& c, const std::string& v) {                                       \
            c.member = static_cast<float>(parse_double(keyname, v));                   \
        },                                                                             \
        [](const RunConfig& c) { return fmt(c.member); }}
#define FIELD_I(keyname, member)                                                       \
    Key{keyname, [](RunConfig& c, const std::string& v) { c.member = parse_int(keyname, v); },    \
        [](const RunConfig& c) { return fmt(c.member); }}
#define FIELD_B(keyname, member)                                                       \
    Key{keyname, [](RunConfig& c, const std::string& v) { c.member = parse_bool(keyname, v); },   \
        [](const RunConfig& c) { return fmt(c.member); }}
#define FIELD_L(keyname, member)                                                       \
    Key{keyname,                                                                       \
        [](RunConfig& c, const std::string& v) { c.member = parse_int_list(keyname, v); },        \
        [](const RunConfig& c) { return fmt(c.member); }}

const std::vector<Key>& key_table() {
    static const std::vector<Key> table = {
        Key{"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const RunConfig& c) { return fmt(c.seed); }},
        FIELD_I("phantom.image_size", phantom.image_size),
        FIELD_I("phantom.slices_per_volume", phantom.slices_per_volume),
        FIELD_F("phantom.spacing_xy_mm", phantom.spacing_xy_mm),
        FIELD_F("phantom.spacing_z_mm", phantom.spacing_z_mm),
        FIELD_F("phantom.hu_air", phantom.hu_air),
        FIELD_F("phantom.hu_soft_tissue", phantom.hu_soft_tissue),
        FIELD_F("phantom.hu_blood", phantom.hu_blood_unenhanced),
        FIELD_F("phantom.hu_myocardium", phantom.hu_myocardium),
        FIELD_F("phantom.left_enhanced_min", phantom.left_enhanced_min),
        FIELD_F("phantom.left_enhanced_max", phantom.left_enhanced_max),
        FIELD_F("phantom.right_enhanced_min", phantom.right_enhanced_min),
        FIELD_F("phantom.right_enhanced_max", phantom.right_enhanced_max),
        FIELD_F("phantom.noise_sigma", phantom.noise_sigma),
        FIELD_F("phantom.center_jitter", phantom.center_jitter),
        FIELD_F("phantom.radius_jitter", phantom.radius_jitter),
        FIELD_F("phantom.heart_rotation_max_deg", phantom.heart_rotation_max_deg),
        FIELD_F("phantom.shading_hu", phantom.shading_hu),
        FIELD_I("model.input_size", model.input_size),
        FIELD_L("model.encoder_channels", model.encoder_channels),
        FIELD_I("model.bottleneck_channels", model.bottleneck_channels),
        FIELD_L("model.decoder_channels", model.decoder_channels),
        FIELD_D("loss.alpha", loss.alpha),
        FIELD_D("loss.beta", loss.beta),
        FIELD_D("loss.lambda", loss.lambda),
        FIELD_D("loss.s", loss.s),
        FIELD_D("loss.v_th_hu", loss_v_th_hu),
        FIELD_D("train.learning_rate", train.learning_rate),
        FIELD_I("train.batch_size", train.batch_size),
        FIELD_I("train.epochs", train.epochs),
        FIELD_D("train.beta1", train.beta1),
        FIELD_D("train.beta2", train.beta2),
        FIELD_D("train.epsilon", train.epsilon),
        FIELD_B("train.augment", train.augment),
        FIELD_D("train.max_rotation_deg", train.max_rotation_deg),
        FIELD_I("train.checkpoint_every", train.checkpoint_every),
        FIELD_I("eval.bins", eval.bins),
        FIELD_D("eval.peak_hu", eval.peak_hu),
        FIELD_D("eval.v_th_hu", eval.v_th_hu),
        FIELD_I("reg.bins", reg.bins),
        FIELD_D("reg.translation_range_px", reg.translation_range),
        FIELD_D("reg.translation_step_px", reg.translation_step),
        FIELD_D("reg.theta_range_deg", reg.theta_range),
        FIELD_D("reg.theta_step_deg", reg.theta_step),
        FIELD_I("reg.refine_iterations", reg.refine_iterations),
        FIELD_F("reg.fill_hu", reg.fill),
    };
    return table;
}

#undef FIELD_D
#undef FIELD_F
#undef FIELD_I
#undef FIELD_B
#undef FIELD_L

} // namespace

const std::vector<std::string>& RunConfig::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const Key& k : key_table()) out.push_back(k.name);
        return out;
    }();
    return names;
}

void RunConfig::apply(const std::string& key, const std::string& value) {
    for (const Key& k : key_table()) {
        if (key == k.name) {
            k.set(*this, value);
            return;
        }
    }
    throw ConfigError("unknown configuration key: '" + key + "'");
}

void RunConfig::finalize() {
    loss.v_th = hu_normalize(loss_v_th_hu);
    phantom.seed = seed;
    model.seed = seed;
    train.seed = seed;
    train.loss = loss;
    train.model = model;

    phantom.validate();
    train.validate(); // covers loss and model too
    if (eval.bins < 2) throw ConfigError("eval.bins must be at least 2");
    if (!(eval.peak_hu > 0)) throw ConfigError("eval.peak_hu must be positive");
    if (reg.bins < 2) throw ConfigError("reg.bins must be at least 2");
    if (!(reg.translation_range >= 0) || !(reg.translation_step > 0))
        throw ConfigError("reg translation grid must have positive step");
    if (!(reg.theta_range >= 0) || !(reg.theta_step > 0))
        throw ConfigError("reg angle grid must have positive step");
    if (reg.refine_iterations < 0) throw ConfigError("reg.refine_iterations must be >= 0");
}

std::string RunConfig::to_text() const {
    std::string out;
    out += "# resolved configuration; every recognized key, in canonical order\n";
    for (const Key& k : key_table()) {
        out += k.name;
        out += " = ";
        out += k.get(*this);
        out += '\n';
    }
    return out;
}

void RunConfig::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << to_text();
    if (!os) throw IoError("write failed: " + path);
}

RunConfig RunConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            if (size_t hash = line.find('#'); hash != std::string::npos) line.resize(hash);
            line = trim(line);
            if (line.empty()) continue;
            size_t eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
            cfg.apply(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }
    for (const std::string& ov : overrides) {
        size_t eq = ov.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must be key=value: '" + ov + "'");
        cfg.apply(trim(ov.substr(0, eq)), trim(ov.substr(eq + 1)));
    }
    cfg.finalize();
    return cfg;
}

} // namespace cect
