#include "abn/cli_app.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "abn/checkpoint.hpp"
#include "abn/gemm.hpp"
#include "abn/image.hpp"
#include "abn/train.hpp"

namespace abn {

namespace {

struct DataOptions {
    std::string dataset;  // cifar10 | synthetic
    std::string data_dir;
    std::size_t classes = 4;
    std::size_t train_per_class = 100;
    std::size_t test_per_class = 50;
    std::size_t tasks = 1;
    std::size_t train_samples = 300;  // multi-task
    std::size_t test_samples = 150;   // multi-task
    double noise_std = 0.1;
    std::size_t image_size = 32;
    std::size_t patch = 8;
    std::size_t channels = 3;
    std::uint64_t data_seed = 7;
};

struct ModelOptions {
    std::string baseline = "resnet";
    std::size_t depth = 20;
    std::size_t split = 2;
    std::string mechanism = "residual";
};

void add_data_options(CLI::App* cmd, DataOptions& opt) {
    cmd->add_option("--dataset", opt.dataset, "dataset: cifar10 or synthetic")
        ->required()
        ->check(CLI::IsMember({"cifar10", "synthetic"}));
    cmd->add_option("--data-dir", opt.data_dir, "directory with CIFAR-10 binary batches");
    cmd->add_option("--classes", opt.classes, "synthetic: number of classes");
    cmd->add_option("--train-per-class", opt.train_per_class, "synthetic: training samples per class");
    cmd->add_option("--test-per-class", opt.test_per_class, "synthetic: test samples per class");
    cmd->add_option("--tasks", opt.tasks, "task count; >1 selects the multi-task variant");
    cmd->add_option("--train-samples", opt.train_samples, "multi-task synthetic: training samples");
    cmd->add_option("--test-samples", opt.test_samples, "multi-task synthetic: test samples");
    cmd->add_option("--noise-std", opt.noise_std, "synthetic: background noise stddev");
    cmd->add_option("--image-size", opt.image_size, "synthetic: square image extent");
    cmd->add_option("--patch", opt.patch, "synthetic: square glyph extent");
    cmd->add_option("--channels", opt.channels, "synthetic: image channels");
    cmd->add_option("--data-seed", opt.data_seed, "synthetic: dataset seed");
}

void add_model_options(CLI::App* cmd, ModelOptions& opt) {
    cmd->add_option("--baseline", opt.baseline, "baseline family")
        ->check(CLI::IsMember({"resnet", "vgg"}));
    cmd->add_option("--depth", opt.depth, "resnet depth (6n+2)");
    cmd->add_option("--split", opt.split, "stages kept in the feature extractor");
    cmd->add_option("--mechanism", opt.mechanism, "attention mechanism")
        ->check(CLI::IsMember({"none", "dot", "residual"}));
}

void add_train_options(CLI::App* cmd, TrainConfig& cfg, bool& augment_set) {
    cmd->add_option("--epochs", cfg.epochs, "training epochs");
    cmd->add_option("--batch-size", cfg.batch_size, "minibatch size");
    cmd->add_option("--lr", cfg.lr0, "initial learning rate");
    cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
    cmd->add_option("--weight-decay", cfg.weight_decay, "L2 weight decay");
    cmd->add_option("--seed", cfg.seed, "run seed (init, shuffling, augmentation)");
    cmd->add_option("--early-stop", cfg.early_stop_target,
                    "stop when the eval metric reaches this target (<0 disables)");
    auto* aug = cmd->add_flag("--augment,!--no-augment", cfg.augment,
                              "pad-4 random crop + random horizontal flip");
    cmd->callback([aug, &augment_set] { augment_set = aug->count() > 0; });
}

Mechanism parse_mechanism(const std::string& s) {
    if (s == "none") return Mechanism::none;
    if (s == "dot") return Mechanism::dot;
    return Mechanism::residual;
}

NetworkSpec make_spec(const ModelOptions& m, const DataOptions& d) {
    NetworkSpec spec;
    spec.baseline = m.baseline == "resnet" ? Baseline::resnet_cifar : Baseline::small_vgg;
    spec.depth = m.depth;
    spec.split_point = m.split;
    spec.mechanism = parse_mechanism(m.mechanism);
    spec.task_count = d.tasks;
    spec.num_classes = d.dataset == "cifar10" ? 10 : std::max<std::size_t>(d.classes, 2);
    spec.in_channels = d.dataset == "cifar10" ? 3 : d.channels;
    return spec;
}

struct LoadedData {
    Dataset train;
    Dataset test;
};

LoadedData load_data(const DataOptions& d) {
    LoadedData out;
    if (d.dataset == "cifar10") {
        if (d.data_dir.empty()) throw ValueError("--data-dir is required for cifar10");
        auto [train, test] = load_cifar10(d.data_dir);
        out.train = std::move(train);
        out.test = std::move(test);
        return out;
    }
    if (d.tasks > 1) {
        out.train = make_synthetic_multitask(d.train_samples, d.tasks, d.channels, d.image_size,
                                             d.image_size, d.patch, d.patch, d.noise_std,
                                             d.data_seed);
        out.test = make_synthetic_multitask(d.test_samples, d.tasks, d.channels, d.image_size,
                                            d.image_size, d.patch, d.patch, d.noise_std,
                                            d.data_seed + 1);
    } else {
        out.train = make_synthetic(d.train_per_class, d.classes, d.channels, d.image_size,
                                   d.image_size, d.patch, d.patch, d.noise_std, d.data_seed);
        out.test = make_synthetic(d.test_per_class, d.classes, d.channels, d.image_size,
                                  d.image_size, d.patch, d.patch, d.noise_std, d.data_seed + 1);
    }
    return out;
}

void apply_normalization(TrainConfig& cfg, const Dataset& train) {
    auto [mean, sd] = channel_stats(train.images);
    cfg.norm_mean = mean;
    cfg.norm_std = sd;
}

std::vector<std::uint8_t> image_to_gray(const Tensor& images, std::size_t idx) {
    const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::vector<std::uint8_t> gray(h * w);
    for (std::size_t i = 0; i < h * w; ++i) {
        double acc = 0.0;
        for (std::size_t ic = 0; ic < c; ++ic) acc += images.data()[(idx * c + ic) * h * w + i];
        double v = std::clamp(acc / static_cast<double>(c), 0.0, 1.0);
        gray[i] = static_cast<std::uint8_t>(std::llround(v * 255.0));
    }
    return gray;
}

int cmd_train(const DataOptions& d, const ModelOptions& m, TrainConfig cfg, bool augment_set,
              const std::string& out_path, const std::string& history_path) {
    LoadedData data = load_data(d);
    if (!augment_set && d.dataset == "cifar10") {
        cfg.augment = true;  // paper protocol: pad-4 crop + mirror for CIFAR
    }
    cfg.aug.pad = 4;
    cfg.aug.crop_h = data.train.images.dim(2);
    cfg.aug.crop_w = data.train.images.dim(3);
    apply_normalization(cfg, data.train);

    NetworkSpec spec = make_spec(m, d);
    AbnModel model = build_abn(spec, cfg.seed);
    std::vector<EpochStats> history = train_epochs(model, data.train, data.test, cfg);

    save_checkpoint(model, out_path);
    if (!history_path.empty()) write_history_csv(history, history_path);
    if (!history.empty()) {
        std::fprintf(stdout, "final epoch %zu: train_loss %.6f, eval %.4f\n",
                     history.back().epoch, history.back().train_loss, history.back().eval_metric);
    }
    return 0;
}

int cmd_eval(const DataOptions& d, const std::string& ckpt_path) {
    AbnModel model = load_checkpoint(ckpt_path);
    LoadedData data = load_data(d);
    if (model.spec().in_channels != data.test.images.dim(1)) {
        throw ValueError("checkpoint expects " + std::to_string(model.spec().in_channels) +
                         " input channels, dataset has " + std::to_string(data.test.images.dim(1)));
    }
    if ((model.spec().task_count > 1) != data.test.multitask()) {
        throw ValueError("checkpoint task layout does not match dataset labels");
    }
    TrainConfig cfg;
    cfg.batch_size = 64;
    apply_normalization(cfg, data.train);
    const double metric = evaluate_top1(model, data.test, cfg);
    const char* name = data.test.multitask() ? "mean_task_accuracy" : "top1_error";
    std::fprintf(stdout, "%s,%.17g\n", name, metric);
    return 0;
}

int cmd_visualize(const DataOptions& d, const std::string& ckpt_path,
                  const std::vector<std::size_t>& indices, long cam_class, std::size_t task,
                  bool bilinear, const std::string& outdir) {
    AbnModel model = load_checkpoint(ckpt_path);
    LoadedData data = load_data(d);
    TrainConfig cfg;
    apply_normalization(cfg, data.train);

    std::filesystem::create_directories(outdir);
    model.set_training(false);
    NoGradGuard no_grad;

    const std::size_t h = data.test.images.dim(2), w = data.test.images.dim(3);
    for (std::size_t idx : indices) {
        if (idx >= data.test.size()) throw ValueError("sample index " + std::to_string(idx) + " out of range");
        Batch batch = gather(data.test, {idx});
        Tensor raw = batch.images;
        normalize_images(batch.images, cfg.norm_mean, cfg.norm_std);
        AbnOutput out = model.forward(batch.images);

        const std::string stem = outdir + "/sample_" + std::to_string(idx);
        write_pgm(stem + "_input.pgm", w, h, image_to_gray(raw, 0));

        if (task >= out.attention_map.dim(1)) {
            throw ValueError("task index " + std::to_string(task) + " out of range");
        }
        Tensor map = bilinear ? upsample_bilinear(out.attention_map, h, w)
                              : upsample_nearest(out.attention_map, h, w);
        std::vector<double> plane(h * w);
        const double* src = map.data() + task * h * w;
        std::copy(src, src + h * w, plane.begin());
        const std::string map_name = model.spec().task_count > 1
                                         ? stem + "_attention_task" + std::to_string(task) + ".pgm"
                                         : stem + "_attention.pgm";
        write_pgm(map_name, w, h, to_gray_u8(plane));

        if (cam_class >= 0) {
            Tensor cam = cam_attention_map(out.k_maps, static_cast<std::size_t>(cam_class));
            Tensor cam_up = bilinear ? upsample_bilinear(cam, h, w) : upsample_nearest(cam, h, w);
            std::vector<double> cam_plane(cam_up.values().begin(), cam_up.values().end());
            write_pgm(stem + "_cam_class" + std::to_string(cam_class) + ".pgm", w, h,
                      to_gray_u8(cam_plane));
        }
    }
    return 0;
}

int cmd_compare(const DataOptions& d, const ModelOptions& m, TrainConfig cfg,
                const std::string& out_path) {
    LoadedData data = load_data(d);
    cfg.aug.pad = 4;
    cfg.aug.crop_h = data.train.images.dim(2);
    cfg.aug.crop_w = data.train.images.dim(3);
    apply_normalization(cfg, data.train);

    std::vector<NetworkSpec> specs;
    for (Mechanism mech : {Mechanism::none, Mechanism::dot, Mechanism::residual}) {
        NetworkSpec spec = make_spec(m, d);
        spec.mechanism = mech;
        specs.push_back(spec);
    }
    std::vector<MechanismRow> rows = mechanism_comparison(specs, data.train, data.test, cfg);
    write_mechanism_csv(rows, out_path);
    for (const MechanismRow& r : rows) {
        std::fprintf(stdout, "%s,%.4f\n", r.label.c_str(), r.top1_error);
    }
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{"Attention Branch Network trainer and visualizer"};
    app.require_subcommand(1);

    unsigned threads = 0;
    app.add_option("--threads", threads, "GEMM worker threads (0 = auto)");

    DataOptions data_opt;
    ModelOptions model_opt;
    TrainConfig cfg;
    bool augment_set = false;
    std::string out_path, history_path, ckpt_path, outdir;
    std::vector<std::size_t> indices;
    long cam_class = -1;
    std::size_t task = 0;
    bool bilinear = false;

    CLI::App* train = app.add_subcommand("train", "train a model and write a checkpoint");
    add_data_options(train, data_opt);
    add_model_options(train, model_opt);
    add_train_options(train, cfg, augment_set);
    train->add_option("--out", out_path, "output checkpoint path")->required();
    train->add_option("--history", history_path, "per-epoch CSV history path");

    CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
    add_data_options(eval, data_opt);
    eval->add_option("--ckpt", ckpt_path, "checkpoint path")->required();

    CLI::App* vis = app.add_subcommand("visualize", "export attention maps as PGM images");
    add_data_options(vis, data_opt);
    vis->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    vis->add_option("--indices", indices, "test-sample indices to export")->required();
    vis->add_option("--cam-class", cam_class, "class whose CAM map to export (-1 = none)");
    vis->add_option("--task", task, "task whose attention map to export (multi-task)");
    vis->add_flag("--bilinear", bilinear, "bilinear instead of nearest-neighbor upsampling");
    vis->add_option("--outdir", outdir, "output directory")->required();

    CLI::App* cmp = app.add_subcommand("compare", "mechanism comparison table (none/dot/residual)");
    add_data_options(cmp, data_opt);
    add_model_options(cmp, model_opt);
    add_train_options(cmp, cfg, augment_set);
    cmp->add_option("--out", out_path, "output CSV path")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (threads > 0) set_gemm_threads(threads);
    try {
        if (*train) return cmd_train(data_opt, model_opt, cfg, augment_set, out_path, history_path);
        if (*eval) return cmd_eval(data_opt, ckpt_path);
        if (*vis) return cmd_visualize(data_opt, ckpt_path, indices, cam_class, task, bilinear, outdir);
        if (*cmp) return cmd_compare(data_opt, model_opt, cfg, out_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace abn
