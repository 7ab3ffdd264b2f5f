#pragma once

#include <cstdint>
#include <utility>
#include <variant>
#include <vector>

#include "abn/layers.hpp"

namespace abn {

enum class Baseline { resnet_cifar, small_vgg };

// How the attention map is applied to the extractor's feature map:
//   dot       g' = M * g
//   residual  g' = (1 + M) * g
//   none      g' = g (plain split baseline)
enum class Mechanism { none, dot, residual };

struct NetworkSpec {
    Baseline baseline = Baseline::resnet_cifar;
    std::size_t depth = 20;        // resnet_cifar: 6n+2
    std::size_t num_classes = 10;  // K
    std::size_t in_channels = 3;
    // Number of leading stages kept in the feature extractor; the remaining
    // stages are duplicated into the attention branch (all strides forced to
    // 1) and form the perception branch unchanged.
    std::size_t split_point = 2;
    Mechanism mechanism = Mechanism::residual;
    std::size_t task_count = 1;  // T > 1 selects the multi-task variant

    // small_vgg only: stage widths and 3x3 convs per stage.
    std::vector<std::size_t> vgg_widths = {16, 32, 64};
    std::size_t vgg_convs_per_stage = 2;

    std::size_t num_stages() const {
        return baseline == Baseline::resnet_cifar ? 3 : vgg_widths.size();
    }
};

void validate_spec(const NetworkSpec& spec);

struct AbnOutput {
    Tensor att_scores;     // [N,K] softmax probabilities, or [N,T] sigmoid scores
    Tensor per_scores;     // [N,K] probabilities, or [N,T,2] per-task pairs
    Tensor attention_map;  // [N,1,h,w], or [N,T,h,w]
    Tensor feature_map;    // [N,C,h,w] extractor output
    Tensor k_maps;         // per-class (or per-task) response maps, pre-sigmoid
    // Multi-task only: the T tape-connected [N,2] probability tensors that
    // per_scores was assembled from.
    std::vector<Tensor> per_task_scores;
};

using Block = std::variant<ConvBlock, ResidualBlock>;

Tensor block_forward(Block& block, const Tensor& x);

class AbnModel {
public:
    struct AttentionResult {
        Tensor att_scores;
        Tensor attention_map;
        Tensor k_maps;
    };

    const NetworkSpec& spec() const { return spec_; }
    void set_training(bool train);
    bool training() const { return training_; }

    Tensor extract_features(const Tensor& images);
    AttentionResult attention_branch(const Tensor& feature_map);
    // Remaining baseline blocks + GAP + classifier + softmax.
    Tensor perception_branch(const Tensor& attended);
    AbnOutput forward(const Tensor& images);

    // Trainable tensors / full state (trainables + BN running statistics),
    // in a fixed order.
    std::vector<NamedTensor> named_parameters() const;
    std::vector<NamedTensor> named_state() const;
    void collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>& state) const;

    // assembled by build_abn
    NetworkSpec spec_;
    std::vector<Block> extractor_;
    std::vector<Block> att_blocks_;
    BatchNorm att_bn_;
    Conv2dLayer att_class_conv_;  // Kx1x1 (or Tx1x1), with bias
    Conv2dLayer att_map_conv_;    // 1x1x1 aggregation, with bias; single-task only
    std::vector<Block> per_blocks_;
    Tensor fc_weight_;  // [C_last, K] or [C_last, 2]
    Tensor fc_bias_;

private:
    bool training_ = true;
};

AbnModel build_abn(const NetworkSpec& spec, std::uint64_t seed);

AbnModel::AttentionResult attention_branch_forward(AbnModel& model, const Tensor& feature_map);
Tensor perception_branch_forward(AbnModel& model, const Tensor& attended);
AbnOutput abn_forward(AbnModel& model, const Tensor& images);
AbnOutput multitask_forward(AbnModel& model, const Tensor& images);

Tensor attention_apply(const Tensor& feature_map, const Tensor& attention_map, Mechanism mechanism);

// Weighted combination of the per-class response maps for visualization.
Tensor cam_attention_map(const Tensor& k_maps, const Tensor& class_weights);
Tensor cam_attention_map(const Tensor& k_maps, std::size_t cls);

// Returns (GAP-then-linear, 1x1-conv-then-GAP) class scores under tied
// weights; the two routes agree by linearity.
std::pair<Tensor, Tensor> cam_head_equivalence(const Tensor& k_maps, const Tensor& weights,
                                               const Tensor& bias);

// The unsplit baseline the ABN was derived from, sharing parameter storage
// with the given model: extractor blocks + perception blocks + classifier.
class BaselineModel {
public:
    std::vector<Block> blocks_;
    Tensor fc_weight_;
    Tensor fc_bias_;

    Tensor forward(const Tensor& images);
    void set_training(bool train);
};

BaselineModel split_baseline(const AbnModel& model);

}  // namespace abn
