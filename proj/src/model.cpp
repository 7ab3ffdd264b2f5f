#include "abn/model.hpp"

#include <cstring>
#include <string>

#include "abn/rng.hpp"

namespace abn {

namespace {

struct BlockPlan {
    std::size_t in_ch, out_ch, stride;
    bool residual;
    std::string name;  // relative to branch prefix
};

// Per-stage block layout of the baseline; shared by extractor, attention
// branch and perception branch assembly.
std::vector<std::vector<BlockPlan>> stage_plans(const NetworkSpec& spec) {
    std::vector<std::vector<BlockPlan>> stages;
    if (spec.baseline == Baseline::resnet_cifar) {
        const std::size_t n = (spec.depth - 2) / 6;
        const std::size_t widths[3] = {16, 32, 64};
        std::size_t in_ch = 16;
        for (std::size_t s = 0; s < 3; ++s) {
            std::vector<BlockPlan> stage;
            for (std::size_t b = 0; b < n; ++b) {
                std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
                stage.push_back({in_ch, widths[s], stride, true,
                                 "stage" + std::to_string(s) + ".block" + std::to_string(b)});
                in_ch = widths[s];
            }
            stages.push_back(std::move(stage));
        }
    } else {
        std::size_t in_ch = spec.in_channels;
        for (std::size_t s = 0; s < spec.vgg_widths.size(); ++s) {
            std::vector<BlockPlan> stage;
            for (std::size_t b = 0; b < spec.vgg_convs_per_stage; ++b) {
                std::size_t stride = (b == 0 && s > 0) ? 2 : 1;
                stage.push_back({in_ch, spec.vgg_widths[s], stride, false,
                                 "stage" + std::to_string(s) + ".block" + std::to_string(b)});
                in_ch = spec.vgg_widths[s];
            }
            stages.push_back(std::move(stage));
        }
    }
    return stages;
}

Block make_block(const BlockPlan& plan, const std::string& prefix, std::uint64_t seed,
                 bool force_stride1) {
    const std::size_t stride = force_stride1 ? 1 : plan.stride;
    const std::string name = prefix + "." + plan.name;
    if (plan.residual) {
        return ResidualBlock::make(plan.in_ch, plan.out_ch, stride, name, seed);
    }
    return ConvBlock::make(plan.in_ch, plan.out_ch, 3, stride, 1, true, Act::relu, name, seed);
}

void collect_block(const Block& block, const std::string& prefix, std::vector<NamedTensor>& params,
                   std::vector<NamedTensor>& state) {
    std::visit([&](const auto& b) { b.collect(prefix, params, state); }, block);
}

}  // namespace

void validate_spec(const NetworkSpec& spec) {
    if (spec.num_classes < 2) throw ValueError("num_classes must be >= 2");
    if (spec.task_count < 1) throw ValueError("task_count must be >= 1");
    if (spec.in_channels < 1) throw ValueError("in_channels must be >= 1");
    if (spec.baseline == Baseline::resnet_cifar) {
        if (spec.depth < 8 || (spec.depth - 2) % 6 != 0) {
            throw ValueError("resnet_cifar depth must be 6n+2 with n >= 1, got " +
                             std::to_string(spec.depth));
        }
    } else {
        if (spec.vgg_widths.empty()) throw ValueError("small_vgg needs at least one stage width");
        if (spec.vgg_convs_per_stage < 1) throw ValueError("vgg_convs_per_stage must be >= 1");
    }
    const std::size_t stages = spec.num_stages();
    if (spec.split_point < 1 || spec.split_point >= stages) {
        throw ValueError("split_point must lie strictly inside the baseline (1.." +
                         std::to_string(stages - 1) + "), got " + std::to_string(spec.split_point));
    }
}

Tensor block_forward(Block& block, const Tensor& x) {
    return std::visit([&](auto& b) { return b.forward(x); }, block);
}

AbnModel build_abn(const NetworkSpec& spec, std::uint64_t seed) {
    validate_spec(spec);
    AbnModel model;
    model.spec_ = spec;

    auto stages = stage_plans(spec);

    if (spec.baseline == Baseline::resnet_cifar) {
        model.extractor_.push_back(
            ConvBlock::make(spec.in_channels, 16, 3, 1, 1, true, Act::relu, "extractor.stem", seed));
    }
    for (std::size_t s = 0; s < spec.split_point; ++s) {
        for (const auto& plan : stages[s]) {
            model.extractor_.push_back(make_block(plan, "extractor", seed, false));
        }
    }
    for (std::size_t s = spec.split_point; s < stages.size(); ++s) {
        for (const auto& plan : stages[s]) {
            model.att_blocks_.push_back(make_block(plan, "attention", seed, true));
            model.per_blocks_.push_back(make_block(plan, "perception", seed, false));
        }
    }

    const std::size_t top_ch =
        spec.baseline == Baseline::resnet_cifar ? 64 : spec.vgg_widths.back();
    const std::size_t head_ch = spec.task_count > 1 ? spec.task_count : spec.num_classes;

    model.att_bn_ = BatchNorm::make(top_ch);
    model.att_class_conv_ =
        Conv2dLayer::make(top_ch, head_ch, 1, 1, 0, true, "attention.class_conv", seed);
    if (spec.task_count == 1) {
        model.att_map_conv_ =
            Conv2dLayer::make(spec.num_classes, 1, 1, 1, 0, true, "attention.map_conv", seed);
    }

    const std::size_t fc_out = spec.task_count > 1 ? 2 : spec.num_classes;
    model.fc_weight_ = he_initialize({top_ch, fc_out}, top_ch, derive_seed(seed, "perception.fc.weight"));
    model.fc_bias_ = Tensor::zeros({fc_out}, true);
    return model;
}

void AbnModel::set_training(bool train) {
    training_ = train;
    auto set_block = [train](Block& b) {
        std::visit([train](auto& blk) { blk.set_training(train); }, b);
    };
    for (Block& b : extractor_) set_block(b);
    for (Block& b : att_blocks_) set_block(b);
    for (Block& b : per_blocks_) set_block(b);
    att_bn_.training = train;
}

Tensor AbnModel::extract_features(const Tensor& images) {
    Tensor x = images;
    for (Block& b : extractor_) x = block_forward(b, x);
    return x;
}

AbnModel::AttentionResult AbnModel::attention_branch(const Tensor& feature_map) {
    Tensor x = feature_map;
    for (Block& b : att_blocks_) x = block_forward(b, x);
    x = att_bn_.forward(x);
    Tensor k_maps = att_class_conv_.forward(x);

    AttentionResult res;
    res.k_maps = k_maps;
    if (spec_.task_count > 1) {
        res.att_scores = sigmoid(global_average_pool(k_maps));  // [N,T]
        res.attention_map = sigmoid(k_maps);                    // [N,T,h,w]
    } else {
        res.att_scores = softmax_rows(global_average_pool(k_maps));  // [N,K]
        res.attention_map = sigmoid(att_map_conv_.forward(k_maps));  // [N,1,h,w]
    }
    return res;
}

Tensor AbnModel::perception_branch(const Tensor& attended) {
    Tensor x = attended;
    for (Block& b : per_blocks_) x = block_forward(b, x);
    x = global_average_pool(x);
    x = linear(x, fc_weight_, fc_bias_);
    return softmax_rows(x);
}

AbnOutput AbnModel::forward(const Tensor& images) {
    if (spec_.task_count > 1) return multitask_forward(*this, images);

    AbnOutput out;
    out.feature_map = extract_features(images);
    AttentionResult att = attention_branch(out.feature_map);
    out.att_scores = att.att_scores;
    out.attention_map = att.attention_map;
    out.k_maps = att.k_maps;

    Tensor attended = attention_apply(out.feature_map, out.attention_map, spec_.mechanism);
    out.per_scores = perception_branch(attended);
    return out;
}

void AbnModel::collect_all(std::vector<NamedTensor>& params, std::vector<NamedTensor>& state) const {
    auto stages = stage_plans(spec_);
    std::size_t idx = 0;
    if (spec_.baseline == Baseline::resnet_cifar) {
        collect_block(extractor_[idx++], "extractor.stem", params, state);
    }
    for (std::size_t s = 0; s < spec_.split_point; ++s) {
        for (const auto& plan : stages[s]) {
            collect_block(extractor_[idx++], "extractor." + plan.name, params, state);
        }
    }
    std::size_t branch_idx = 0;
    for (std::size_t s = spec_.split_point; s < stages.size(); ++s) {
        for (const auto& plan : stages[s]) {
            collect_block(att_blocks_[branch_idx], "attention." + plan.name, params, state);
            collect_block(per_blocks_[branch_idx], "perception." + plan.name, params, state);
            ++branch_idx;
        }
    }
    att_bn_.collect("attention.bn", params, state);
    att_class_conv_.collect("attention.class_conv", params, state);
    if (spec_.task_count == 1) att_map_conv_.collect("attention.map_conv", params, state);
    params.push_back({"perception.fc.weight", fc_weight_});
    params.push_back({"perception.fc.bias", fc_bias_});
    state.push_back({"perception.fc.weight", fc_weight_});
    state.push_back({"perception.fc.bias", fc_bias_});
}

std::vector<NamedTensor> AbnModel::named_parameters() const {
    std::vector<NamedTensor> params, state;
    collect_all(params, state);
    return params;
}

std::vector<NamedTensor> AbnModel::named_state() const {
    std::vector<NamedTensor> params, state;
    collect_all(params, state);
    return state;
}

AbnModel::AttentionResult attention_branch_forward(AbnModel& model, const Tensor& feature_map) {
    return model.attention_branch(feature_map);
}

Tensor perception_branch_forward(AbnModel& model, const Tensor& attended) {
    return model.perception_branch(attended);
}

AbnOutput abn_forward(AbnModel& model, const Tensor& images) {
    return model.forward(images);
}

AbnOutput multitask_forward(AbnModel& model, const Tensor& images) {
    if (model.spec_.task_count < 2) {
        throw ValueError("multitask_forward requires a spec with task_count > 1");
    }
    AbnOutput out;
    out.feature_map = model.extract_features(images);
    AbnModel::AttentionResult att = model.attention_branch(out.feature_map);
    out.att_scores = att.att_scores;
    out.attention_map = att.attention_map;
    out.k_maps = att.k_maps;

    const std::size_t n = images.dim(0);
    const std::size_t t_count = model.spec_.task_count;
    out.per_scores = Tensor::zeros({n, t_count, 2});
    for (std::size_t t = 0; t < t_count; ++t) {
        Tensor m_t = channel_slice(out.attention_map, t);
        Tensor attended = mul(out.feature_map, m_t);  // Eq. 4 form: g' = M^t * g
        Tensor probs = model.perception_branch(attended);  // [N,2], shared parameters
        out.per_task_scores.push_back(probs);
        for (std::size_t i = 0; i < n; ++i) {
            out.per_scores.values()[(i * t_count + t) * 2 + 0] = probs.at2(i, 0);
            out.per_scores.values()[(i * t_count + t) * 2 + 1] = probs.at2(i, 1);
        }
    }
    return out;
}

Tensor attention_apply(const Tensor& feature_map, const Tensor& attention_map, Mechanism mechanism) {
    switch (mechanism) {
        case Mechanism::none:
            return feature_map;
        case Mechanism::dot:
            return mul(feature_map, attention_map);
        case Mechanism::residual:
            return mul(feature_map, add_scalar(attention_map, 1.0));
    }
    throw ValueError("unknown mechanism");
}

Tensor cam_attention_map(const Tensor& k_maps, const Tensor& class_weights) {
    if (k_maps.rank() != 4) throw ShapeError("cam_attention_map expects [N,K,h,w] maps");
    const std::size_t n = k_maps.dim(0), k = k_maps.dim(1), hw = k_maps.dim(2) * k_maps.dim(3);
    if (class_weights.rank() != 1 || class_weights.dim(0) != k) {
        throw ShapeError("class_weights must be [" + std::to_string(k) + "], got " +
                         shape_str(class_weights.shape()));
    }
    Tensor out = Tensor::zeros({n, 1, k_maps.dim(2), k_maps.dim(3)});
    for (std::size_t in = 0; in < n; ++in) {
        double* dst = out.data() + in * hw;
        for (std::size_t ik = 0; ik < k; ++ik) {
            const double w = class_weights.values()[ik];
            const double* src = k_maps.data() + (in * k + ik) * hw;
            for (std::size_t i = 0; i < hw; ++i) dst[i] += w * src[i];
        }
    }
    return out;
}

Tensor cam_attention_map(const Tensor& k_maps, std::size_t cls) {
    if (k_maps.rank() != 4) throw ShapeError("cam_attention_map expects [N,K,h,w] maps");
    if (cls >= k_maps.dim(1)) {
        throw ValueError("class index " + std::to_string(cls) + " out of range [0," +
                         std::to_string(k_maps.dim(1)) + ")");
    }
    Tensor onehot = Tensor::zeros({k_maps.dim(1)});
    onehot.values()[cls] = 1.0;
    return cam_attention_map(k_maps, onehot);
}

std::pair<Tensor, Tensor> cam_head_equivalence(const Tensor& k_maps, const Tensor& weights,
                                               const Tensor& bias) {
    if (k_maps.rank() != 4) throw ShapeError("cam_head_equivalence expects [N,Q,h,w] maps");
    if (weights.rank() != 2 || weights.dim(0) != k_maps.dim(1)) {
        throw ShapeError("weights must be [Q,M] with Q = " + std::to_string(k_maps.dim(1)));
    }
    const std::size_t q = weights.dim(0), m = weights.dim(1);

    // route a: GAP then fully-connected
    Tensor a = linear(global_average_pool(k_maps), weights, bias);

    // route b: the same weights as an Mx(Qx1x1) convolution, then GAP
    Tensor conv_w = Tensor::zeros({m, q, 1, 1});
    for (std::size_t iq = 0; iq < q; ++iq) {
        for (std::size_t im = 0; im < m; ++im) {
            conv_w.values()[im * q + iq] = weights.values()[iq * m + im];
        }
    }
    Tensor b = global_average_pool(conv2d(k_maps, conv_w, bias, 1, 0));
    return {a, b};
}

Tensor BaselineModel::forward(const Tensor& images) {
    Tensor x = images;
    for (Block& b : blocks_) x = block_forward(b, x);
    x = global_average_pool(x);
    x = linear(x, fc_weight_, fc_bias_);
    return softmax_rows(x);
}

void BaselineModel::set_training(bool train) {
    for (Block& b : blocks_) {
        std::visit([train](auto& blk) { blk.set_training(train); }, b);
    }
}

BaselineModel split_baseline(const AbnModel& model) {
    BaselineModel baseline;
    baseline.blocks_ = model.extractor_;   // Tensor handles shared
    for (const Block& b : model.per_blocks_) baseline.blocks_.push_back(b);
    baseline.fc_weight_ = model.fc_weight_;
    baseline.fc_bias_ = model.fc_bias_;
    return baseline;
}

}  // namespace abn
