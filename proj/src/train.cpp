#include "abn/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "abn/image.hpp"

namespace abn {

void validate_config(const TrainConfig& cfg) {
    // lr0 == 0 is admitted as the degenerate no-op run
    if (cfg.lr0 < 0.0) throw ValueError("lr0 must not be negative");
    if (cfg.batch_size < 1) throw ValueError("batch_size must be >= 1");
    if (cfg.weight_decay < 0.0) throw ValueError("weight_decay must be >= 0");
    double prev = 0.0;
    for (const auto& [frac, mult] : cfg.schedule) {
        if (frac <= prev || frac >= 1.0) {
            throw ValueError("schedule fractions must be strictly increasing within (0,1)");
        }
        (void)mult;
        prev = frac;
    }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    if (cfg.epochs > 0 && epoch >= cfg.epochs) throw ValueError("epoch out of range");
    double mult = 1.0;
    for (const auto& [frac, m] : cfg.schedule) {
        if (static_cast<double>(epoch) >= frac * static_cast<double>(cfg.epochs)) mult = m;
    }
    return cfg.lr0 * mult;
}

OptimizerState OptimizerState::make(const std::vector<NamedTensor>& params) {
    OptimizerState state;
    state.velocity.reserve(params.size());
    for (const NamedTensor& p : params) state.velocity.push_back(Tensor::zeros(p.tensor.shape()));
    return state;
}

void sgd_momentum_step(std::vector<NamedTensor>& params, OptimizerState& state, double lr,
                       double momentum, double weight_decay) {
    if (state.velocity.size() != params.size()) {
        throw ValueError("optimizer state does not match parameter list");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].tensor;
        Tensor& v = state.velocity[i];
        if (v.shape() != p.shape()) throw ShapeError("velocity shape mismatch for " + params[i].name);
        const std::size_t n = p.size();
        const bool has_grad = p.has_grad();
        const double* g = has_grad ? p.grad().data() : nullptr;
        for (std::size_t j = 0; j < n; ++j) {
            double grad = (has_grad ? g[j] : 0.0) + weight_decay * p.values()[j];
            v.values()[j] = momentum * v.values()[j] + grad;
            p.values()[j] -= lr * v.values()[j];
        }
    }
}

Tensor combined_loss(const AbnOutput& out, const std::vector<int>& labels) {
    return add(cross_entropy(out.att_scores, labels), cross_entropy(out.per_scores, labels));
}

Tensor combined_loss(const AbnOutput& out, const Tensor& multi_labels) {
    if (!multi_labels.defined() || multi_labels.rank() != 2) {
        throw ShapeError("multi-task labels must be [N,T]");
    }
    const std::size_t n = multi_labels.dim(0), t_count = multi_labels.dim(1);
    if (out.att_scores.shape() != Shape{n, t_count}) {
        throw ShapeError("attention scores " + shape_str(out.att_scores.shape()) +
                         " do not match labels [N,T] = " + shape_str(multi_labels.shape()));
    }
    if (out.per_task_scores.size() != t_count) {
        throw ShapeError("per-task score count does not match task count");
    }
    for (std::size_t i = 0; i < multi_labels.size(); ++i) {
        double v = multi_labels.values()[i];
        if (v != 0.0 && v != 1.0) throw ValueError("multi-task labels must be 0/1");
    }
    // attention side: binary cross-entropy per task, summed over tasks
    Tensor loss = binary_cross_entropy(out.att_scores, multi_labels);
    // perception side: per-task two-way cross-entropy, summed over tasks
    for (std::size_t t = 0; t < t_count; ++t) {
        std::vector<int> task_labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            task_labels[i] = multi_labels.at2(i, t) > 0.5 ? 1 : 0;
        }
        loss = add(loss, cross_entropy(out.per_task_scores[t], task_labels));
    }
    return loss;
}

double top1_error(const Tensor& probs, const std::vector<int>& labels) {
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    if (labels.size() != n) throw ShapeError("labels do not match probability rows");
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = probs.data() + i * k;
        std::size_t best = 0;
        for (std::size_t j = 1; j < k; ++j) {
            if (row[j] > row[best]) best = j;  // ties keep the lowest index
        }
        if (static_cast<int>(best) != labels[i]) ++wrong;
    }
    return 100.0 * static_cast<double>(wrong) / static_cast<double>(n);
}

double multitask_accuracy(const Tensor& per_scores, const Tensor& multi_labels) {
    if (per_scores.rank() != 3 || per_scores.dim(2) != 2) {
        throw ShapeError("multi-task scores must be [N,T,2]");
    }
    const std::size_t n = per_scores.dim(0), t_count = per_scores.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t t = 0; t < t_count; ++t) {
            const double p0 = per_scores.values()[(i * t_count + t) * 2 + 0];
            const double p1 = per_scores.values()[(i * t_count + t) * 2 + 1];
            const int pred = p1 > p0 ? 1 : 0;
            const int truth = multi_labels.at2(i, t) > 0.5 ? 1 : 0;
            if (pred == truth) ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(n * t_count);
}

namespace {

Batch prepare_eval_batch(const Dataset& ds, const std::vector<std::size_t>& idx,
                         const TrainConfig& cfg) {
    Batch batch = gather(ds, idx);
    if (!cfg.norm_mean.empty()) normalize_images(batch.images, cfg.norm_mean, cfg.norm_std);
    return batch;
}

}  // namespace

double evaluate_top1(AbnModel& model, const Dataset& ds, const TrainConfig& cfg) {
    const bool was_training = model.training();
    model.set_training(false);
    NoGradGuard no_grad;

    const std::size_t n = ds.size();
    const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start; i < std::min(n, start + bs); ++i) idx.push_back(i);
        Batch batch = prepare_eval_batch(ds, idx, cfg);
        AbnOutput out = model.forward(batch.images);
        double metric = ds.multitask() ? multitask_accuracy(out.per_scores, batch.multi_labels)
                                       : top1_error(out.per_scores, batch.labels);
        weighted += metric * static_cast<double>(idx.size());
    }
    model.set_training(was_training);
    return weighted / static_cast<double>(n);
}

std::vector<EpochStats> train_epochs(AbnModel& model, const Dataset& train, const Dataset& eval,
                                     const TrainConfig& cfg) {
    validate_config(cfg);
    if (train.size() == 0) throw ValueError("training dataset is empty");

    std::vector<NamedTensor> params = model.named_parameters();
    OptimizerState opt = OptimizerState::make(params);
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    Rng augment_rng(derive_seed(cfg.seed, "augment"));

    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochStats> history;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        model.set_training(true);
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            std::vector<std::size_t> idx(order.begin() + start,
                                         order.begin() + std::min(order.size(), start + cfg.batch_size));
            Batch batch = gather(train, idx);
            if (cfg.augment) batch = augment(batch, cfg.aug, augment_rng);
            if (!cfg.norm_mean.empty()) normalize_images(batch.images, cfg.norm_mean, cfg.norm_std);

            Tape tape;
            AbnOutput out = model.forward(batch.images);
            Tensor loss = train.multitask() ? combined_loss(out, batch.multi_labels)
                                            : combined_loss(out, batch.labels);
            const double loss_value = loss.item();
            if (!std::isfinite(loss_value)) {
                throw DivergenceError("training diverged: loss " + std::to_string(loss_value) +
                                      " at epoch " + std::to_string(epoch) + ", batch offset " +
                                      std::to_string(start));
            }
            loss_sum += loss_value * static_cast<double>(idx.size());
            tape.backward(loss);
            sgd_momentum_step(params, opt, lr, cfg.momentum, cfg.weight_decay);
            for (NamedTensor& p : params) p.tensor.drop_grad();
        }

        EpochStats stats;
        stats.epoch = epoch;
        stats.train_loss = loss_sum / static_cast<double>(order.size());
        stats.eval_metric = evaluate_top1(model, eval, cfg);
        history.push_back(stats);

        if (cfg.early_stop_target >= 0.0) {
            const bool reached = train.multitask() ? stats.eval_metric >= cfg.early_stop_target
                                                   : stats.eval_metric <= cfg.early_stop_target;
            if (reached) break;
        }
    }
    return history;
}

std::string mechanism_label(Mechanism m) {
    switch (m) {
        case Mechanism::none: return "g(x)";
        case Mechanism::dot: return "g(x)*M(x)";
        case Mechanism::residual: return "g(x)*(1+M(x))";
    }
    return "?";
}

std::vector<MechanismRow> mechanism_comparison(const std::vector<NetworkSpec>& specs,
                                               const Dataset& train, const Dataset& eval,
                                               const TrainConfig& cfg) {
    std::vector<MechanismRow> rows;
    for (const NetworkSpec& spec : specs) {
        AbnModel model = build_abn(spec, cfg.seed);
        train_epochs(model, train, eval, cfg);
        MechanismRow row;
        row.mechanism = spec.mechanism;
        row.label = mechanism_label(spec.mechanism);
        row.top1_error = evaluate_top1(model, eval, cfg);
        rows.push_back(row);
    }
    return rows;
}

namespace {

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValueError("cannot write " + path);
    out << "epoch,train_loss,eval_top1\n";
    for (const EpochStats& s : history) {
        out << s.epoch << "," << format_double(s.train_loss) << "," << format_double(s.eval_metric)
            << "\n";
    }
}

void write_mechanism_csv(const std::vector<MechanismRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValueError("cannot write " + path);
    out << "mechanism,top1_error\n";
    for (const MechanismRow& r : rows) {
        out << r.label << "," << format_double(r.top1_error) << "\n";
    }
}

double attention_mass_fraction(const Tensor& attention_map, std::size_t channel,
                               const std::vector<std::vector<Rect>>& regions,
                               std::size_t region_idx, std::size_t height, std::size_t width) {
    if (attention_map.rank() != 4) throw ShapeError("attention map must be [N,C,h,w]");
    const std::size_t n = attention_map.dim(0);
    if (channel >= attention_map.dim(1)) throw ValueError("attention map channel out of range");
    if (regions.size() != n) throw ShapeError("one region list per sample required");

    Tensor up = upsample_nearest(attention_map, height, width);
    double total_fraction = 0.0;
    std::size_t counted = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (region_idx >= regions[i].size()) continue;
        const Rect& r = regions[i][region_idx];
        if (!r.valid()) continue;
        const double* map = up.data() + (i * up.dim(1) + channel) * height * width;
        double inside = 0.0, total = 0.0;
        for (std::size_t y = 0; y < height; ++y) {
            for (std::size_t x = 0; x < width; ++x) {
                double v = map[y * width + x];
                total += v;
                if (static_cast<long>(x) >= r.x0 && static_cast<long>(x) < r.x1 &&
                    static_cast<long>(y) >= r.y0 && static_cast<long>(y) < r.y1) {
                    inside += v;
                }
            }
        }
        if (total > 0.0) {
            total_fraction += inside / total;
            ++counted;
        }
    }
    if (counted == 0) throw ValueError("no valid ground-truth regions to measure");
    return total_fraction / static_cast<double>(counted);
}

}  // namespace abn
