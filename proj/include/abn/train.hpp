#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "abn/data.hpp"
#include "abn/model.hpp"

namespace abn {

class DivergenceError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double lr0 = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    // (fraction-of-epochs, multiplier on lr0); defaults give lr0 before 50%,
    // lr0/10 in [50%,75%), lr0/100 from 75%.
    std::vector<std::pair<double, double>> schedule = {{0.5, 0.1}, {0.75, 0.01}};
    std::uint64_t seed = 1;

    bool augment = false;
    AugmentConfig aug;

    // Channelwise normalization applied to every batch after augmentation;
    // empty vectors disable it.
    std::vector<double> norm_mean;
    std::vector<double> norm_std;

    // Stop once the eval metric reaches this target (top-1 error <= target
    // for single-task runs, mean per-task accuracy >= target for multi-task
    // runs). Negative disables early stopping.
    double early_stop_target = -1.0;
};

void validate_config(const TrainConfig& cfg);

// Piecewise-constant schedule value for one epoch.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct OptimizerState {
    std::vector<Tensor> velocity;
    static OptimizerState make(const std::vector<NamedTensor>& params);
};

// Classic (heavy-ball) momentum:
//   v <- momentum*v + (grad + weight_decay*param); param <- param - lr*v
void sgd_momentum_step(std::vector<NamedTensor>& params, OptimizerState& state, double lr,
                       double momentum, double weight_decay);

// Eq.-style two-branch loss: attention-branch loss plus perception-branch
// loss, unweighted.
Tensor combined_loss(const AbnOutput& out, const std::vector<int>& labels);
Tensor combined_loss(const AbnOutput& out, const Tensor& multi_labels);

// Fraction (%) of rows whose argmax (ties to the lowest index) mismatches
// the label.
double top1_error(const Tensor& probs, const std::vector<int>& labels);
// Mean per-task accuracy (%) of [N,T,2] pairs against 0/1 labels.
double multitask_accuracy(const Tensor& per_scores, const Tensor& multi_labels);

// Single-task: top-1 error in [0,100]. Multi-task: mean per-task accuracy.
// Runs in eval mode and restores the previous mode.
double evaluate_top1(AbnModel& model, const Dataset& ds, const TrainConfig& cfg);

struct EpochStats {
    std::size_t epoch;
    double train_loss;
    double eval_metric;
};

std::vector<EpochStats> train_epochs(AbnModel& model, const Dataset& train, const Dataset& eval,
                                     const TrainConfig& cfg);

struct MechanismRow {
    Mechanism mechanism;
    std::string label;
    double top1_error;
};

// Table-1-style harness: trains one fresh model per spec under the shared
// config/seed and reports test top-1 errors.
std::vector<MechanismRow> mechanism_comparison(const std::vector<NetworkSpec>& specs,
                                               const Dataset& train, const Dataset& eval,
                                               const TrainConfig& cfg);

std::string mechanism_label(Mechanism m);

void write_history_csv(const std::vector<EpochStats>& history, const std::string& path);
void write_mechanism_csv(const std::vector<MechanismRow>& rows, const std::string& path);

// Mean over samples of the attention-mass share inside the ground-truth
// rectangle, with the map channel nearest-upsampled to H x W. Multi-task:
// pass the task as `channel`/`region_idx` and only positive samples (valid
// rects) contribute.
double attention_mass_fraction(const Tensor& attention_map, std::size_t channel,
                               const std::vector<std::vector<Rect>>& regions,
                               std::size_t region_idx, std::size_t height, std::size_t width);

}  // namespace abn
