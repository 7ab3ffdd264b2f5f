#include <doctest.h>

#include <cmath>

#include "abn/model.hpp"
#include "abn/ops.hpp"
#include "abn/rng.hpp"
#include "oracles.hpp"

using namespace abn;

namespace {

NetworkSpec micro_spec(std::size_t classes = 2, Mechanism mech = Mechanism::residual) {
    NetworkSpec spec;
    spec.baseline = Baseline::small_vgg;
    spec.vgg_widths = {3, 4};
    spec.vgg_convs_per_stage = 1;
    spec.split_point = 1;
    spec.num_classes = classes;
    spec.in_channels = 1;
    spec.mechanism = mech;
    return spec;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("resnet20 shape trace at split 2") {
    NetworkSpec spec;
    spec.depth = 20;
    spec.num_classes = 10;
    spec.split_point = 2;
    AbnModel model = build_abn(spec, 1);
    model.set_training(false);

    Rng rng(2);
    Tensor x = oracle::random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);

    // extractor output is 16x16 after the single stride-2 stage; the
    // attention branch preserves that resolution (strides forced to 1)
    CHECK(out.feature_map.shape() == Shape{1, 32, 16, 16});
    CHECK(out.attention_map.shape() == Shape{1, 1, 16, 16});
    CHECK(out.k_maps.shape() == Shape{1, 10, 16, 16});
    CHECK(out.att_scores.shape() == Shape{1, 10});
    CHECK(out.per_scores.shape() == Shape{1, 10});
}

TEST_CASE("resolution preservation holds for every valid split") {
    for (std::size_t split : {1ul, 2ul}) {
        NetworkSpec spec;
        spec.depth = 8;
        spec.split_point = split;
        AbnModel model = build_abn(spec, 3);
        model.set_training(false);
        Rng rng(4);
        Tensor x = oracle::random_tensor({1, 3, 32, 32}, rng, 0.0, 1.0);
        AbnOutput out = model.forward(x);
        CHECK(out.attention_map.dim(2) == out.feature_map.dim(2));
        CHECK(out.attention_map.dim(3) == out.feature_map.dim(3));
    }
}

TEST_CASE("multi-task heads produce T maps and T score pairs") {
    NetworkSpec spec = micro_spec();
    spec.task_count = 3;
    AbnModel model = build_abn(spec, 5);
    model.set_training(false);

    Rng rng(6);
    Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);
    CHECK(out.attention_map.shape() == Shape{2, 3, 8, 8});
    CHECK(out.att_scores.shape() == Shape{2, 3});
    CHECK(out.per_scores.shape() == Shape{2, 3, 2});
    CHECK(out.per_task_scores.size() == 3);

    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t t = 0; t < 3; ++t) {
            double p0 = out.per_scores.values()[(i * 3 + t) * 2];
            double p1 = out.per_scores.values()[(i * 3 + t) * 2 + 1];
            CHECK(std::abs(p0 + p1 - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("same seed gives bit-identical parameters") {
    NetworkSpec spec;
    spec.depth = 8;
    AbnModel a = build_abn(spec, 99);
    AbnModel b = build_abn(spec, 99);
    auto sa = a.named_state(), sb = b.named_state();
    REQUIRE(sa.size() == sb.size());
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].name == sb[i].name);
        CHECK(sa[i].tensor.values() == sb[i].tensor.values());
    }

    AbnModel c = build_abn(spec, 100);
    bool any_diff = false;
    auto sc = c.named_state();
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i].tensor.values() != sc[i].tensor.values()) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("invalid specs are rejected") {
    NetworkSpec bad_depth;
    bad_depth.depth = 21;
    CHECK_THROWS_AS(build_abn(bad_depth, 1), ValueError);

    NetworkSpec bad_split;
    bad_split.split_point = 3;
    CHECK_THROWS_AS(build_abn(bad_split, 1), ValueError);
    bad_split.split_point = 0;
    CHECK_THROWS_AS(build_abn(bad_split, 1), ValueError);

    NetworkSpec bad_classes = micro_spec();
    bad_classes.num_classes = 1;
    CHECK_THROWS_AS(build_abn(bad_classes, 1), ValueError);
}

TEST_CASE("zeroed aggregation conv gives a flat 0.5 attention map") {
    AbnModel model = build_abn(micro_spec(), 7);
    model.set_training(false);
    for (double& v : model.att_map_conv_.weight.values()) v = 0.0;
    for (double& v : model.att_map_conv_.bias.values()) v = 0.0;

    Rng rng(8);
    Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);
    for (double v : out.attention_map.values()) CHECK(v == 0.5);
}

TEST_CASE("attention scores are a probability row") {
    AbnModel model = build_abn(micro_spec(4), 9);
    model.set_training(false);
    Rng rng(10);
    Tensor x = oracle::random_tensor({3, 1, 8, 8}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 4; ++j) row += out.att_scores.at2(i, j);
        CHECK(std::abs(row - 1.0) <= 1e-12);
    }
    for (double v : out.attention_map.values()) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
}

TEST_CASE("attention map is the sigmoid of the aggregated k-maps") {
    AbnModel model = build_abn(micro_spec(3), 11);
    model.set_training(true);
    Rng rng(12);
    Tensor x = oracle::random_tensor({2, 1, 2, 2}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);

    const Tensor& w = model.att_map_conv_.weight;  // [1,K,1,1]
    const double bias = model.att_map_conv_.bias.values()[0];
    const std::size_t k = out.k_maps.dim(1), h = out.k_maps.dim(2), wd = out.k_maps.dim(3);
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t xx = 0; xx < wd; ++xx) {
            double acc = bias;
            for (std::size_t ik = 0; ik < k; ++ik) acc += w.values()[ik] * out.k_maps.at4(0, ik, y, xx);
            double want = 1.0 / (1.0 + std::exp(-acc));
            CHECK(std::abs(out.attention_map.at4(0, 0, y, xx) - want) <= 1e-12);
        }
    }
}

TEST_CASE("attention mechanism identities and values") {
    Rng rng(13);
    Tensor g = oracle::random_tensor({2, 3, 4, 4}, rng);
    Tensor zero_map = Tensor::zeros({2, 1, 4, 4});
    Tensor one_map = Tensor::full({2, 1, 4, 4}, 1.0);

    Tensor residual0 = attention_apply(g, zero_map, Mechanism::residual);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(residual0.values()[i] == g.values()[i]);

    Tensor dot1 = attention_apply(g, one_map, Mechanism::dot);
    for (std::size_t i = 0; i < g.size(); ++i) CHECK(dot1.values()[i] == g.values()[i]);

    Tensor none = attention_apply(g, zero_map, Mechanism::none);
    CHECK(none.same_storage(g));

    Tensor half = Tensor::full({1, 1, 1, 1}, 0.5);
    Tensor two = Tensor::full({1, 1, 1, 1}, 2.0);
    CHECK(attention_apply(two, half, Mechanism::dot).item() == 1.0);
    CHECK(attention_apply(two, half, Mechanism::residual).item() == 3.0);

    Tensor bad = Tensor::zeros({2, 1, 5, 4});
    CHECK_THROWS_AS(attention_apply(g, bad, Mechanism::dot), ShapeError);
}

TEST_CASE("perception branch probabilities") {
    AbnModel model = build_abn(micro_spec(5), 14);
    model.set_training(false);
    Rng rng(15);
    Tensor x = oracle::random_tensor({3, 1, 8, 8}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);
    for (std::size_t i = 0; i < 3; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < 5; ++j) row += out.per_scores.at2(i, j);
        CHECK(std::abs(row - 1.0) <= 1e-12);
    }

    for (double& v : model.fc_weight_.values()) v = 0.0;
    for (double& v : model.fc_bias_.values()) v = 0.0;
    AbnOutput uniform = model.forward(x);
    for (double v : uniform.per_scores.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("both branch losses reach every extractor parameter") {
    AbnModel model = build_abn(micro_spec(2), 16);
    model.set_training(true);
    Rng rng(17);
    Tensor x = oracle::random_tensor({3, 1, 8, 8}, rng, 0.0, 1.0);
    std::vector<int> labels = {0, 1, 0};

    auto extractor_grad_norms = [&](bool att_side) {
        for (NamedTensor& p : model.named_parameters()) p.tensor.drop_grad();
        Tape tape;
        AbnOutput out = model.forward(x);
        Tensor loss = att_side ? cross_entropy(out.att_scores, labels)
                               : cross_entropy(out.per_scores, labels);
        tape.backward(loss);
        std::vector<double> norms;
        std::vector<NamedTensor> params, state;
        model.collect_all(params, state);
        for (NamedTensor& p : params) {
            if (p.name.rfind("extractor.", 0) != 0) continue;
            double mx = 0.0;
            if (p.tensor.has_grad()) {
                for (double g : p.tensor.grad()) mx = std::max(mx, std::abs(g));
            }
            norms.push_back(mx);
        }
        return norms;
    };

    std::vector<double> from_att = extractor_grad_norms(true);
    std::vector<double> from_per = extractor_grad_norms(false);
    REQUIRE(!from_att.empty());
    REQUIRE(from_att.size() == from_per.size());
    for (std::size_t i = 0; i < from_att.size(); ++i) {
        CHECK(from_att[i] > 0.0);
        CHECK(from_per[i] > 0.0);
    }
}

TEST_CASE("mechanism none reproduces the split baseline bitwise") {
    NetworkSpec spec;
    spec.depth = 8;
    spec.num_classes = 4;
    spec.mechanism = Mechanism::none;
    AbnModel model = build_abn(spec, 18);
    model.set_training(false);
    BaselineModel baseline = split_baseline(model);
    baseline.set_training(false);

    Rng rng(19);
    Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);
    Tensor plain = baseline.forward(x);
    REQUIRE(out.per_scores.shape() == plain.shape());
    for (std::size_t i = 0; i < plain.size(); ++i) {
        CHECK(out.per_scores.values()[i] == plain.values()[i]);
    }
}

TEST_CASE("micro model full gradient check") {
    AbnModel model = build_abn(micro_spec(2), 20);
    model.set_training(true);
    Rng rng(21);
    Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    std::vector<int> labels = {0, 1};

    auto loss_fn = [&] {
        AbnOutput out = model.forward(x);
        return add(cross_entropy(out.att_scores, labels), cross_entropy(out.per_scores, labels));
    };

    std::vector<NamedTensor> params = model.named_parameters();
    for (NamedTensor& p : params) p.tensor.drop_grad();
    {
        Tape tape;
        tape.backward(loss_fn());
    }
    for (NamedTensor& p : params) {
        Tensor analytic = p.tensor.has_grad() ? Tensor::from_values(p.tensor.shape(), p.tensor.grad())
                                              : Tensor::zeros(p.tensor.shape());
        Tensor fd = finite_diff_grad(
            [&](const Tensor& probe) {
                std::vector<double> saved = p.tensor.values();
                p.tensor.values() = probe.values();
                double v = loss_fn().item();
                p.tensor.values() = saved;
                return v;
            },
            p.tensor, 1e-4);
        INFO("parameter ", p.name);
        CHECK(oracle::grad_rel_error(analytic, fd) <= 1e-4);
    }
}

TEST_CASE("cam_attention_map selection and oracle") {
    Rng rng(22);
    Tensor k_maps = oracle::random_tensor({2, 4, 3, 3}, rng);

    Tensor picked = cam_attention_map(k_maps, 2);
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t y = 0; y < 3; ++y) {
            for (std::size_t x = 0; x < 3; ++x) {
                CHECK(picked.at4(n, 0, y, x) == k_maps.at4(n, 2, y, x));
            }
        }
    }

    Tensor uniform_w = Tensor::full({4}, 0.25);
    Tensor mean_map = cam_attention_map(k_maps, uniform_w);
    Tensor want_mean = oracle::cam_ref(k_maps, {0.25, 0.25, 0.25, 0.25});
    CHECK(oracle::max_abs_diff(mean_map, want_mean) <= 1e-12);

    Tensor w = oracle::random_tensor({4}, rng);
    std::vector<double> wv(w.values().begin(), w.values().end());
    CHECK(oracle::max_abs_diff(cam_attention_map(k_maps, w), oracle::cam_ref(k_maps, wv)) <= 1e-12);

    CHECK_THROWS_AS(cam_attention_map(k_maps, 4), ValueError);
}

TEST_CASE("cam head commutes: GAP-then-linear equals conv-then-GAP") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor k_maps = oracle::random_tensor({2, 5, 4, 4}, rng, -2.0, 2.0);
        Tensor w = oracle::random_tensor({5, 3}, rng);
        Tensor b = oracle::random_tensor({3}, rng);
        auto [a, bb] = cam_head_equivalence(k_maps, w, b);
        CHECK(oracle::max_abs_diff(a, bb) <= 1e-9);
    }

    Tensor k_maps = oracle::random_tensor({1, 4, 2, 2}, rng);
    Tensor zero_w = Tensor::zeros({4, 3});
    auto [za, zb] = cam_head_equivalence(k_maps, zero_w, Tensor());
    for (double v : za.values()) CHECK(v == 0.0);
    for (double v : zb.values()) CHECK(v == 0.0);

    Tensor point_maps = oracle::random_tensor({2, 4, 1, 1}, rng);
    Tensor w2 = oracle::random_tensor({4, 3}, rng);
    auto [pa, pb] = cam_head_equivalence(point_maps, w2, Tensor());
    Tensor flat = Tensor::zeros({2, 4});
    for (std::size_t n = 0; n < 2; ++n) {
        for (std::size_t c = 0; c < 4; ++c) flat.at2(n, c) = point_maps.at4(n, c, 0, 0);
    }
    Tensor plain = linear(flat, w2, Tensor());
    CHECK(oracle::max_abs_diff(pa, plain) <= 1e-12);
    CHECK(oracle::max_abs_diff(pb, plain) <= 1e-12);
}

TEST_CASE("multi-task isolation: one task's map only feeds that task") {
    NetworkSpec spec = micro_spec();
    spec.task_count = 3;
    AbnModel model = build_abn(spec, 24);
    model.set_training(false);

    Rng rng(25);
    Tensor x = oracle::random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
    AbnOutput out = model.forward(x);

    // recompute task 1's attended features from the published outputs
    Tensor m1 = channel_slice(out.attention_map, 1);
    Tensor attended = mul(out.feature_map, m1);
    Tensor probs = model.perception_branch(attended);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(probs.at2(i, 0) == out.per_scores.values()[(i * 3 + 1) * 2]);
        CHECK(probs.at2(i, 1) == out.per_scores.values()[(i * 3 + 1) * 2 + 1]);
    }

    // zeroed map slice zeroes exactly that task's attended features
    Tensor zero_map = Tensor::zeros({2, 1, 8, 8});
    Tensor dead = mul(out.feature_map, zero_map);
    for (double v : dead.values()) CHECK(v == 0.0);

    // and perturbing task 2's map leaves task 0/1 products untouched
    Tensor bumped = out.attention_map.clone();
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 64; ++j) {
            bumped.values()[(i * 3 + 2) * 64 + j] += 0.1;
        }
    }
    for (std::size_t t = 0; t < 2; ++t) {
        Tensor before = mul(out.feature_map, channel_slice(out.attention_map, t));
        Tensor after = mul(out.feature_map, channel_slice(bumped, t));
        CHECK(oracle::max_abs_diff(before, after) == 0.0);
    }
}

TEST_CASE("multitask_forward requires T > 1") {
    AbnModel model = build_abn(micro_spec(), 26);
    Tensor x = Tensor::zeros({1, 1, 8, 8});
    CHECK_THROWS_AS(multitask_forward(model, x), ValueError);
}

}  // TEST_SUITE
