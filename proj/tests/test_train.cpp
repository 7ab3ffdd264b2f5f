#include <doctest.h>

#include <cmath>

#include "abn/train.hpp"
#include "oracles.hpp"

using namespace abn;

namespace {

NetworkSpec micro_spec(std::size_t classes = 2) {
    NetworkSpec spec;
    spec.baseline = Baseline::small_vgg;
    spec.vgg_widths = {3, 4};
    spec.vgg_convs_per_stage = 1;
    spec.split_point = 1;
    spec.num_classes = classes;
    spec.in_channels = 1;
    return spec;
}

Dataset micro_dataset(std::size_t per_class, std::size_t classes, std::uint64_t seed) {
    return make_synthetic(per_class, classes, 1, 8, 8, 4, 4, 0.05, seed);
}

AbnOutput fake_single_output(const Tensor& att, const Tensor& per) {
    AbnOutput out;
    out.att_scores = att;
    out.per_scores = per;
    return out;
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("combined loss on perfect and uniform predictions") {
    Tensor perfect = Tensor::from_values({2, 3}, {1, 0, 0, 0, 0, 1});
    std::vector<int> labels = {0, 2};
    double loss = combined_loss(fake_single_output(perfect, perfect), labels).item();
    CHECK(loss >= 0.0);
    CHECK(loss <= 2.0 * -std::log(1.0 - 1e-12) + 1e-15);

    // uniform predictions: CE = log K on each branch
    Tensor uniform = Tensor::full({4, 5}, 0.2);
    std::vector<int> any = {0, 1, 2, 3};
    double lu = combined_loss(fake_single_output(uniform, uniform), any).item();
    CHECK(std::abs(lu - 2.0 * std::log(5.0)) <= 1e-12);
}

TEST_CASE("combined loss equals the sum of branch losses") {
    Rng rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor att = softmax_rows(oracle::random_tensor({6, 4}, rng, -2.0, 2.0));
        Tensor per = softmax_rows(oracle::random_tensor({6, 4}, rng, -2.0, 2.0));
        std::vector<int> labels;
        for (int i = 0; i < 6; ++i) labels.push_back(static_cast<int>(rng.below(4)));
        double total = combined_loss(fake_single_output(att, per), labels).item();
        double parts = cross_entropy(att, labels).item() + cross_entropy(per, labels).item();
        CHECK(std::abs(total - parts) <= 1e-12);
    }
}

TEST_CASE("combined loss rejects bad labels") {
    Tensor probs = Tensor::full({2, 3}, 1.0 / 3.0);
    CHECK_THROWS_AS(combined_loss(fake_single_output(probs, probs), {0, 5}), ValueError);
}

TEST_CASE("multi-task loss is BCE plus per-task perception terms") {
    Rng rng(32);
    const std::size_t n = 4, t_count = 3;
    AbnOutput out;
    out.att_scores = oracle::random_tensor({n, t_count}, rng, 0.1, 0.9);
    Tensor labels = Tensor::zeros({n, t_count});
    for (double& v : labels.values()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    out.per_scores = Tensor::zeros({n, t_count, 2});
    for (std::size_t t = 0; t < t_count; ++t) {
        Tensor probs = softmax_rows(oracle::random_tensor({n, 2}, rng, -1.0, 1.0));
        out.per_task_scores.push_back(probs);
        for (std::size_t i = 0; i < n; ++i) {
            out.per_scores.values()[(i * t_count + t) * 2] = probs.at2(i, 0);
            out.per_scores.values()[(i * t_count + t) * 2 + 1] = probs.at2(i, 1);
        }
    }
    double total = combined_loss(out, labels).item();

    double want = binary_cross_entropy(out.att_scores, labels).item();
    for (std::size_t t = 0; t < t_count; ++t) {
        std::vector<int> task_labels;
        for (std::size_t i = 0; i < n; ++i) task_labels.push_back(labels.at2(i, t) > 0.5 ? 1 : 0);
        want += cross_entropy(out.per_task_scores[t], task_labels).item();
    }
    CHECK(std::abs(total - want) <= 1e-12);
}

TEST_CASE("sgd momentum step") {
    // momentum 0, wd 0: plain SGD
    Tensor p = Tensor::from_values({3}, {1.0, 2.0, 3.0}, true);
    p.grad() = {0.5, -0.5, 1.0};
    std::vector<NamedTensor> params = {{"p", p}};
    OptimizerState state = OptimizerState::make(params);
    sgd_momentum_step(params, state, 0.1, 0.0, 0.0);
    CHECK(p.values()[0] == doctest::Approx(0.95).epsilon(1e-15));
    CHECK(p.values()[1] == doctest::Approx(2.05).epsilon(1e-15));
    CHECK(p.values()[2] == doctest::Approx(2.9).epsilon(1e-15));

    // zero grad, zero velocity: params unchanged
    Tensor q = Tensor::from_values({2}, {1.0, -1.0}, true);
    std::vector<NamedTensor> qp = {{"q", q}};
    OptimizerState qs = OptimizerState::make(qp);
    sgd_momentum_step(qp, qs, 0.1, 0.9, 0.0);
    CHECK(q.values()[0] == 1.0);
    CHECK(q.values()[1] == -1.0);

    // two steps against the scalar recurrence v <- m v + g, p <- p - lr v
    const double g = 0.25, lr = 0.01, m = 0.9;
    Tensor r = Tensor::from_values({1}, {1.0}, true);
    std::vector<NamedTensor> rp = {{"r", r}};
    OptimizerState rs = OptimizerState::make(rp);
    double v_ref = 0.0, p_ref = 1.0;
    for (int step = 0; step < 2; ++step) {
        r.zero_grad();
        r.grad()[0] = g;
        sgd_momentum_step(rp, rs, lr, m, 0.0);
        v_ref = m * v_ref + g;
        p_ref -= lr * v_ref;
    }
    CHECK(r.values()[0] == doctest::Approx(p_ref).epsilon(1e-15));
    CHECK(r.values()[0] == doctest::Approx(1.0 - lr * g * (1.0 + 1.9)).epsilon(1e-12));

    // weight decay enters the gradient before the velocity update
    Tensor s = Tensor::from_values({1}, {2.0}, true);
    std::vector<NamedTensor> sp = {{"s", s}};
    OptimizerState ss = OptimizerState::make(sp);
    s.grad() = {0.0};
    sgd_momentum_step(sp, ss, 0.1, 0.0, 0.01);
    CHECK(s.values()[0] == doctest::Approx(2.0 - 0.1 * (0.01 * 2.0)).epsilon(1e-15));
}

TEST_CASE("learning rate schedule") {
    TrainConfig cfg;
    cfg.epochs = 300;
    cfg.lr0 = 0.1;
    CHECK(lr_at(0, cfg) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(lr_at(149, cfg) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(lr_at(150, cfg) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lr_at(224, cfg) == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(lr_at(225, cfg) == doctest::Approx(0.001).epsilon(1e-15));
    CHECK(lr_at(299, cfg) == doctest::Approx(0.001).epsilon(1e-15));

    cfg.epochs = 4;
    CHECK(lr_at(0, cfg) == doctest::Approx(0.1));
    CHECK(lr_at(1, cfg) == doctest::Approx(0.1));
    CHECK(lr_at(2, cfg) == doctest::Approx(0.01));
    CHECK(lr_at(3, cfg) == doctest::Approx(0.001));

    cfg.epochs = 37;
    double prev = cfg.lr0;
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
        double lr = lr_at(e, cfg);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(lr_at(37, cfg), ValueError);

    TrainConfig bad;
    bad.schedule = {{0.75, 0.1}, {0.5, 0.01}};
    CHECK_THROWS_AS(validate_config(bad), ValueError);
}

TEST_CASE("top1_error counting") {
    Tensor probs = Tensor::from_values({4, 3},
                                       {0.7, 0.2, 0.1,    // -> 0
                                        0.1, 0.8, 0.1,    // -> 1
                                        0.3, 0.3, 0.4,    // -> 2
                                        0.5, 0.5, 0.0});  // tie -> 0
    CHECK(top1_error(probs, {0, 1, 2, 0}) == 0.0);
    CHECK(top1_error(probs, {1, 0, 1, 1}) == 100.0);
    CHECK(top1_error(probs, {0, 1, 0, 1}) == 50.0);

    // hand-labeled 10-sample set
    Tensor p10 = Tensor::zeros({10, 2});
    std::vector<int> labels(10);
    int wrong = 0;
    for (std::size_t i = 0; i < 10; ++i) {
        bool predict_one = i % 3 == 0;
        p10.at2(i, 0) = predict_one ? 0.2 : 0.8;
        p10.at2(i, 1) = predict_one ? 0.8 : 0.2;
        labels[i] = static_cast<int>(i % 2);
        int predicted = predict_one ? 1 : 0;
        if (predicted != labels[i]) ++wrong;
    }
    CHECK(top1_error(p10, labels) == doctest::Approx(10.0 * wrong).epsilon(1e-15));
}

TEST_CASE("multitask accuracy counting") {
    Tensor scores = Tensor::from_values({2, 2, 2},
                                        {0.9, 0.1, 0.2, 0.8,
                                         0.4, 0.6, 0.7, 0.3});
    Tensor labels = Tensor::from_values({2, 2}, {0, 1, 1, 1});
    // predictions: (0,1),(1,0); correct for entries 0,1,2 and wrong for 3
    CHECK(multitask_accuracy(scores, labels) == doctest::Approx(75.0).epsilon(1e-15));
}

TEST_CASE("rigged classifier makes evaluation predictable") {
    AbnModel model = build_abn(micro_spec(4), 40);
    for (double& v : model.fc_weight_.values()) v = 0.0;
    model.fc_bias_.values() = {0.0, 0.0, 5.0, 0.0};  // always predicts class 2

    Dataset ds = micro_dataset(5, 4, 41);
    TrainConfig cfg;
    cfg.batch_size = 8;
    double err = evaluate_top1(model, ds, cfg);
    int mism = 0;
    for (int y : ds.labels) {
        if (y != 2) ++mism;
    }
    CHECK(err == doctest::Approx(100.0 * mism / static_cast<double>(ds.size())).epsilon(1e-12));
}

TEST_CASE("zero learning rate is an exact parameter no-op") {
    AbnModel model = build_abn(micro_spec(), 42);
    Dataset train = micro_dataset(4, 2, 43);
    Dataset test = micro_dataset(2, 2, 44);

    std::vector<std::vector<double>> before;
    for (const NamedTensor& p : model.named_parameters()) before.push_back(p.tensor.values());

    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 4;
    cfg.lr0 = 0.0;
    cfg.weight_decay = 0.0;
    cfg.seed = 7;
    train_epochs(model, train, test, cfg);

    std::vector<NamedTensor> params = model.named_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        CHECK(params[i].tensor.values() == before[i]);
    }
}

TEST_CASE("training is deterministic per seed") {
    Dataset train = micro_dataset(6, 2, 50);
    Dataset test = micro_dataset(3, 2, 51);
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.lr0 = 0.05;
    cfg.seed = 9;
    cfg.augment = true;
    cfg.aug = AugmentConfig{1, 8, 8, 0.5};

    AbnModel a = build_abn(micro_spec(), cfg.seed);
    std::vector<EpochStats> ha = train_epochs(a, train, test, cfg);
    AbnModel b = build_abn(micro_spec(), cfg.seed);
    std::vector<EpochStats> hb = train_epochs(b, train, test, cfg);

    REQUIRE(ha.size() == hb.size());
    for (std::size_t i = 0; i < ha.size(); ++i) {
        CHECK(ha[i].train_loss == hb[i].train_loss);
        CHECK(ha[i].eval_metric == hb[i].eval_metric);
    }
    auto sa = a.named_state(), sb = b.named_state();
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].tensor.values() == sb[i].tensor.values());
    }
}

TEST_CASE("a micro model memorizes a single sample") {
    AbnModel model = build_abn(micro_spec(), 60);

    Dataset full = micro_dataset(1, 2, 61);
    Dataset single = gather(full, {0});

    TrainConfig cfg;
    cfg.epochs = 200;  // one sample per batch: 200 steps
    cfg.batch_size = 1;
    cfg.lr0 = 0.05;
    cfg.momentum = 0.9;
    cfg.weight_decay = 0.0;
    cfg.schedule = {};
    cfg.seed = 3;
    std::vector<EpochStats> history = train_epochs(model, single, single, cfg);
    CHECK(history.back().train_loss < 0.01);
}

TEST_CASE("mechanism comparison emits one row per mechanism, deterministically") {
    Dataset train = micro_dataset(4, 2, 70);
    Dataset test = micro_dataset(2, 2, 71);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    cfg.lr0 = 0.01;
    cfg.seed = 5;

    std::vector<NetworkSpec> specs;
    for (Mechanism m : {Mechanism::none, Mechanism::dot, Mechanism::residual}) {
        NetworkSpec s = micro_spec();
        s.mechanism = m;
        specs.push_back(s);
    }
    auto rows = mechanism_comparison(specs, train, test, cfg);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].label == "g(x)");
    CHECK(rows[1].label == "g(x)*M(x)");
    CHECK(rows[2].label == "g(x)*(1+M(x))");

    auto rows2 = mechanism_comparison(specs, train, test, cfg);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(rows[i].top1_error == rows2[i].top1_error);
    }
}

TEST_CASE("attention mass fraction oracle") {
    // 2x2 map upsampled to 4x4; all mass sits in the bright right half
    Tensor map = Tensor::from_values({1, 1, 2, 2}, {0.0, 1.0, 0.0, 1.0});
    std::vector<std::vector<Rect>> regions = {{Rect{2, 0, 4, 4}}};
    CHECK(attention_mass_fraction(map, 0, regions, 0, 4, 4) == doctest::Approx(1.0).epsilon(1e-15));

    Tensor flat = Tensor::full({1, 1, 2, 2}, 0.5);
    std::vector<std::vector<Rect>> quarter = {{Rect{0, 0, 2, 2}}};
    CHECK(attention_mass_fraction(flat, 0, quarter, 0, 4, 4) == doctest::Approx(0.25).epsilon(1e-15));

    std::vector<std::vector<Rect>> invalid = {{Rect::none()}};
    CHECK_THROWS_AS(attention_mass_fraction(flat, 0, invalid, 0, 4, 4), ValueError);
}

}  // TEST_SUITE
