#pragma once

#include "cect/tensor.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace cect {

struct ModelConfig {
    int input_size = 128;
    std::vector<int> encoder_channels{16, 16, 32, 32, 64, 64, 128, 128};
    int bottleneck_channels = 128;
    std::vector<int> decoder_channels{128, 64, 64, 32, 32, 16, 16, 16};
    uint64_t seed = 0;

    void validate() const; // throws ConfigError on bad sizes
    static ModelConfig desk_scale(int input_size = 64, uint64_t seed = 0);
};

/// Static description of one layer, for introspection and tests.
struct LayerDesc {
    std::string name;
    enum Kind { Conv, TransposeConv } kind;
    int in_channels;
    int out_channels;
    int kernel;
    int stride;
};

std::vector<LayerDesc> describe_layers(const ModelConfig& cfg);

/// Encoder/decoder network: 8 conv layers down (stride 2 on layers 2,4,6,8),
/// a bottleneck conv, 8 layers up (transposed conv on layers 1,3,5,7), a linear
/// 3x3 head, and a 1x1 skip from the raw input added to the head output.
class Model {
public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }

    Tensor forward(const Tensor& x, Mode mode);

    /// Parameters updated by the optimizer, in a fixed order.
    const std::vector<std::pair<std::string, Tensor>>& trainable() const { return trainable_; }
    /// All tensors including batch-norm running stats, in serialization order.
    const std::vector<std::pair<std::string, Tensor>>& all_tensors() const { return tensors_; }
    /// Convolution/transposed-convolution kernels subject to weight decay.
    std::vector<Tensor> decay_weights() const;

    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    struct ConvSpec {
        Tensor w, b;
        int stride = 1;
        bool transpose = false;
    };
    struct BnSpec {
        Tensor gamma, beta;
        BatchNormState state{Tensor(), Tensor()};
    };

    ModelConfig cfg_;
    std::vector<ConvSpec> body_;  // encoder, bottleneck, decoder in order
    std::vector<BnSpec> bn_;      // one per body layer
    ConvSpec head_;
    ConvSpec skip_;
    std::vector<std::pair<std::string, Tensor>> trainable_;
    std::vector<std::pair<std::string, Tensor>> tensors_;
};

/// CWT1 tensor container, also used for optimizer state snapshots.
void save_tensors(const std::string& path,
                  const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> load_tensors(const std::string& path);

} // namespace cect
