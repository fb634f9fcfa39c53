#include "cect/model.hpp"

#include "cect/errors.hpp"
#include "cect/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace cect {

void ModelConfig::validate() const {
    if (encoder_channels.size() != 8)
        throw ConfigError("encoder_channels must list exactly 8 layers");
    if (decoder_channels.size() != 8)
        throw ConfigError("decoder_channels must list exactly 8 layers");
    if (input_size <= 0 || input_size % 16 != 0)
        throw ConfigError("input_size must be a positive multiple of 16, got " +
                          std::to_string(input_size));
    for (int c : encoder_channels)
        if (c <= 0) throw ConfigError("encoder channel counts must be positive");
    for (int c : decoder_channels)
        if (c <= 0) throw ConfigError("decoder channel counts must be positive");
    if (bottleneck_channels <= 0) throw ConfigError("bottleneck_channels must be positive");
}

ModelConfig ModelConfig::desk_scale(int input_size, uint64_t seed) {
    ModelConfig cfg;
    cfg.input_size = input_size;
    for (int& c : cfg.encoder_channels) c = std::max(1, c / 4);
    cfg.bottleneck_channels = std::max(1, cfg.bottleneck_channels / 4);
    for (int& c : cfg.decoder_channels) c = std::max(1, c / 4);
    cfg.seed = seed;
    return cfg;
}

std::vector<LayerDesc> describe_layers(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<LayerDesc> layers;
    int in_ch = 1;
    for (int i = 0; i < 8; ++i) {
        // 1-based even encoder layers halve the resolution
        const int stride = (i + 1) % 2 == 0 ? 2 : 1;
        layers.push_back({"enc" + std::to_string(i + 1), LayerDesc::Conv, in_ch,
                          cfg.encoder_channels[i], 3, stride});
        in_ch = cfg.encoder_channels[i];
    }
    layers.push_back({"mid", LayerDesc::Conv, in_ch, cfg.bottleneck_channels, 3, 1});
    in_ch = cfg.bottleneck_channels;
    for (int i = 0; i < 8; ++i) {
        // 1-based odd decoder layers upsample with 2x2 transposed convolutions
        const bool up = (i + 1) % 2 == 1;
        layers.push_back({"dec" + std::to_string(i + 1),
                          up ? LayerDesc::TransposeConv : LayerDesc::Conv, in_ch,
                          cfg.decoder_channels[i], up ? 2 : 3, up ? 2 : 1});
        in_ch = cfg.decoder_channels[i];
    }
    layers.push_back({"head", LayerDesc::Conv, in_ch, 1, 3, 1});
    layers.push_back({"skip", LayerDesc::Conv, 1, 1, 1, 1});
    return layers;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    const auto layers = describe_layers(cfg_);
    Rng rng(seed_for(cfg_.seed, "model-init"));

    auto he_tensor = [&rng](const Shape& shape, int fan_in) {
        const double std = std::sqrt(2.0 / fan_in);
        std::vector<double> v(shape_numel(shape));
        for (double& x : v) x = rng.normal(0.0, std);
        Tensor t(shape, std::move(v));
        t.set_requires_grad(true);
        return t;
    };

    auto add_conv = [&](const LayerDesc& d) {
        ConvSpec c;
        c.stride = d.stride;
        c.transpose = d.kind == LayerDesc::TransposeConv;
        const int fan_in = d.in_channels * d.kernel * d.kernel;
        if (c.transpose)
            c.w = he_tensor({d.in_channels, d.out_channels, d.kernel, d.kernel}, fan_in);
        else
            c.w = he_tensor({d.out_channels, d.in_channels, d.kernel, d.kernel}, fan_in);
        c.b = Tensor::zeros({d.out_channels}, true);
        trainable_.emplace_back(d.name + "/w", c.w);
        trainable_.emplace_back(d.name + "/b", c.b);
        tensors_.emplace_back(d.name + "/w", c.w);
        tensors_.emplace_back(d.name + "/b", c.b);
        return c;
    };
    auto add_bn = [&](const std::string& name, int channels) {
        BnSpec bn;
        bn.gamma = Tensor::full({channels}, 1.0, true);
        bn.beta = Tensor::zeros({channels}, true);
        bn.state = BatchNormState::init(channels);
        trainable_.emplace_back(name + "/bn/gamma", bn.gamma);
        trainable_.emplace_back(name + "/bn/beta", bn.beta);
        tensors_.emplace_back(name + "/bn/gamma", bn.gamma);
        tensors_.emplace_back(name + "/bn/beta", bn.beta);
        tensors_.emplace_back(name + "/bn/running_mean", bn.state.running_mean);
        tensors_.emplace_back(name + "/bn/running_var", bn.state.running_var);
        return bn;
    };

    for (const LayerDesc& d : layers) {
        if (d.name == "head") {
            head_ = add_conv(d);
        } else if (d.name == "skip") {
            skip_ = add_conv(d);
        } else {
            body_.push_back(add_conv(d));
            bn_.push_back(add_bn(d.name, d.out_channels));
        }
    }
}

Tensor Model::forward(const Tensor& x, Mode mode) {
    if (x.shape().size() != 4 || x.shape()[1] != 1 || x.shape()[2] != cfg_.input_size ||
        x.shape()[3] != cfg_.input_size)
        throw ShapeError("model input must be [N,1," + std::to_string(cfg_.input_size) + "," +
                         std::to_string(cfg_.input_size) + "], got " + shape_str(x.shape()));
    Tensor h = x;
    for (size_t i = 0; i < body_.size(); ++i) {
        const ConvSpec& c = body_[i];
        h = c.transpose ? conv2d_transpose(h, c.w, c.b) : conv2d(h, c.w, c.b, c.stride);
        h = relu(batch_norm(h, bn_[i].gamma, bn_[i].beta, bn_[i].state, mode));
    }
    Tensor out = conv2d(h, head_.w, head_.b, 1);
    Tensor residual = conv2d(x, skip_.w, skip_.b, 1);
    return add(out, residual);
}

std::vector<Tensor> Model::decay_weights() const {
    std::vector<Tensor> ws;
    for (const auto& [name, t] : trainable_)
        if (name.size() >= 2 && name.compare(name.size() - 2, 2, "/w") == 0) ws.push_back(t);
    return ws;
}

void Model::save(const std::string& path) const { save_tensors(path, tensors_); }

void Model::load(const std::string& path) {
    auto loaded = load_tensors(path);
    std::unordered_map<std::string, Tensor*> by_name;
    for (auto& [name, t] : loaded) by_name[name] = &t;
    if (by_name.size() != tensors_.size())
        throw FormatError("weights file has " + std::to_string(by_name.size()) +
                          " tensors, model needs " + std::to_string(tensors_.size()));
    for (auto& [name, t] : tensors_) {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw FormatError("weights file is missing tensor " + name);
        if (it->second->shape() != t.shape())
            throw FormatError("shape mismatch for " + name + ": file has " +
                              shape_str(it->second->shape()) + ", model needs " +
                              shape_str(t.shape()));
    }
    // all records validated; only now touch the model
    for (auto& [name, t] : tensors_) t.data() = by_name.find(name)->second->data();
}

// CWT1 layout: magic "CWT1", u16 version, u32 record count; per record a u16
// name length, the UTF-8 name, u8 ndim, ndim u32 dims, then f64 values. All
// integers and floats little-endian.

namespace {

constexpr uint16_t kWeightsVersion = 1;

template <typename T>
void write_le(std::ostream& os, T value) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &value, sizeof(T));
    os.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
    unsigned char buf[sizeof(T)];
    is.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!is) throw FormatError("truncated weights file");
    T value;
    std::memcpy(&value, buf, sizeof(T));
    return value;
}

} // namespace

void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("CWT1", 4);
    write_le<uint16_t>(os, kWeightsVersion);
    write_le<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw UsageError("tensor name too long");
        write_le<uint16_t>(os, static_cast<uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_le<uint8_t>(os, static_cast<uint8_t>(t.shape().size()));
        for (int d : t.shape()) write_le<uint32_t>(os, static_cast<uint32_t>(d));
        for (double v : t.data()) write_le<double>(os, v);
    }
    if (!os) throw IoError("write failed: " + path);
}

std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CWT1", 4) != 0)
        throw FormatError("not a CWT1 weights file: " + path);
    const uint16_t version = read_le<uint16_t>(is);
    if (version != kWeightsVersion)
        throw FormatError("unsupported weights version " + std::to_string(version));
    const uint32_t count = read_le<uint32_t>(is);
    std::vector<std::pair<std::string, Tensor>> out;
    out.reserve(count);
    for (uint32_t r = 0; r < count; ++r) {
        const uint16_t name_len = read_le<uint16_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("truncated weights file");
        const uint8_t ndim = read_le<uint8_t>(is);
        Shape shape(ndim);
        for (auto& d : shape) {
            const uint32_t v = read_le<uint32_t>(is);
            if (v == 0 || v > 1u << 30) throw FormatError("invalid dimension in " + path);
            d = static_cast<int>(v);
        }
        std::vector<double> data(shape_numel(shape));
        for (double& v : data) v = read_le<double>(is);
        out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    is.peek();
    if (!is.eof()) throw FormatError("weights payload longer than header claims: " + path);
    return out;
}

} // namespace cect
