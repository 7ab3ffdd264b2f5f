#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "abn/ops.hpp"
#include "abn/tensor.hpp"

namespace abn {

// Zero-mean gaussian init with stddev sqrt(2/fan_in), deterministic per seed.
Tensor he_initialize(Shape shape, std::size_t fan_in, std::uint64_t seed);

inline double he_stddev(std::size_t fan_in) {
    return std::sqrt(2.0 / static_cast<double>(fan_in));
}

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

// Convolution layer with parameters. Weight seeds are derived from the layer
// name so shared sub-networks initialize identically across model variants.
struct Conv2dLayer {
    Tensor weight;  // [K,C,kh,kw]
    Tensor bias;    // [K] or undefined
    std::size_t stride = 1;
    std::size_t pad = 0;

    static Conv2dLayer make(std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                            std::size_t stride, std::size_t pad, bool with_bias,
                            const std::string& name, std::uint64_t seed);

    Tensor forward(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad); }
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& state) const;
};

struct BatchNorm {
    Tensor gamma, beta;               // [C], trainable
    Tensor running_mean, running_var; // [C], state
    double momentum = 0.1;
    double eps = 1e-5;
    bool training = true;

    static BatchNorm make(std::size_t channels);

    // Train mode normalizes by batch statistics (biased variance) and folds
    // them into the running statistics; eval mode is a fixed affine map.
    Tensor forward(const Tensor& x);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& state) const;
};

Tensor batch_norm_forward(const Tensor& x, BatchNorm& bn);

enum class Act { none, relu, sigmoid };

struct ConvBlock {
    Conv2dLayer conv;
    std::optional<BatchNorm> bn;
    Act act = Act::relu;

    // Bias is attached only when the conv is not followed by BN.
    static ConvBlock make(std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                          std::size_t stride, std::size_t pad, bool with_bn, Act act,
                          const std::string& name, std::uint64_t seed);

    Tensor forward(const Tensor& x);
    void set_training(bool train);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& state) const;
};

// Two 3x3 conv+BN layers with identity (or projected 1x1 conv+BN) shortcut:
// out = relu(main(x) + shortcut(x)).
struct ResidualBlock {
    ConvBlock first;   // conv-bn-relu
    ConvBlock second;  // conv-bn
    std::optional<ConvBlock> projection;  // 1x1 stride-matched conv-bn

    static ResidualBlock make(std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                              const std::string& name, std::uint64_t seed);

    Tensor forward(const Tensor& x);
    void set_training(bool train);
    void collect(const std::string& prefix, std::vector<NamedTensor>& params,
                 std::vector<NamedTensor>& state) const;
};

Tensor residual_block_forward(const Tensor& x, ResidualBlock& block);

}  // namespace abn
