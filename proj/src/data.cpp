#include "abn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace abn {

Batch gather(const Dataset& ds, const std::vector<std::size_t>& indices) {
    const std::size_t c = ds.images.dim(1), h = ds.images.dim(2), w = ds.images.dim(3);
    const std::size_t sample = c * h * w;
    Batch out;
    out.images = Tensor::zeros({indices.size(), c, h, w});
    for (std::size_t i = 0; i < indices.size(); ++i) {
        std::size_t src = indices[i];
        if (src >= ds.size()) throw ValueError("gather index out of range");
        std::memcpy(out.images.data() + i * sample, ds.images.data() + src * sample,
                    sizeof(double) * sample);
    }
    if (!ds.labels.empty()) {
        out.labels.reserve(indices.size());
        for (std::size_t src : indices) out.labels.push_back(ds.labels[src]);
    }
    if (ds.multi_labels.defined()) {
        const std::size_t t = ds.multi_labels.dim(1);
        out.multi_labels = Tensor::zeros({indices.size(), t});
        for (std::size_t i = 0; i < indices.size(); ++i) {
            std::memcpy(out.multi_labels.data() + i * t, ds.multi_labels.data() + indices[i] * t,
                        sizeof(double) * t);
        }
    }
    if (!ds.gt_regions.empty()) {
        out.gt_regions.reserve(indices.size());
        for (std::size_t src : indices) out.gt_regions.push_back(ds.gt_regions[src]);
    }
    return out;
}

Tensor pad_images(const Tensor& images, std::size_t pad) {
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor out = Tensor::zeros({n, c, h + 2 * pad, w + 2 * pad});
    const std::size_t ow = w + 2 * pad;
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = images.data() + i * h * w;
        double* dst = out.data() + i * (h + 2 * pad) * ow + pad * ow + pad;
        for (std::size_t y = 0; y < h; ++y) {
            std::memcpy(dst + y * ow, src + y * w, sizeof(double) * w);
        }
    }
    return out;
}

Tensor crop_images(const Tensor& images, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
    const std::size_t n = images.dim(0), c = images.dim(1), ih = images.dim(2), iw = images.dim(3);
    if (y0 + h > ih || x0 + w > iw) {
        throw ShapeError("crop " + std::to_string(h) + "x" + std::to_string(w) + " at (" +
                         std::to_string(y0) + "," + std::to_string(x0) + ") exceeds " +
                         shape_str(images.shape()));
    }
    Tensor out = Tensor::zeros({n, c, h, w});
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = images.data() + i * ih * iw;
        double* dst = out.data() + i * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            std::memcpy(dst + y * w, src + (y0 + y) * iw + x0, sizeof(double) * w);
        }
    }
    return out;
}

Tensor hflip_images(const Tensor& images) {
    const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    Tensor out = Tensor::zeros(images.shape());
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* src = images.data() + i * h * w;
        double* dst = out.data() + i * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            for (std::size_t x = 0; x < w; ++x) dst[y * w + x] = src[y * w + (w - 1 - x)];
        }
    }
    return out;
}

Rect shift_clip_rect(const Rect& r, long dy, long dx, long h, long w) {
    if (!r.valid()) return Rect::none();
    Rect out{std::clamp(r.x0 + dx, 0l, w), std::clamp(r.y0 + dy, 0l, h),
             std::clamp(r.x1 + dx, 0l, w), std::clamp(r.y1 + dy, 0l, h)};
    return out.valid() ? out : Rect::none();
}

Rect hflip_rect(const Rect& r, long w) {
    if (!r.valid()) return Rect::none();
    return Rect{w - r.x1, r.y0, w - r.x0, r.y1};
}

Batch augment(const Batch& batch, const AugmentConfig& cfg, Rng& rng) {
    const std::size_t n = batch.images.dim(0), c = batch.images.dim(1);
    const std::size_t h = batch.images.dim(2), w = batch.images.dim(3);
    const std::size_t ph = h + 2 * cfg.pad, pw = w + 2 * cfg.pad;
    if (cfg.crop_h > ph || cfg.crop_w > pw) {
        throw ShapeError("crop " + std::to_string(cfg.crop_h) + "x" + std::to_string(cfg.crop_w) +
                         " larger than padded image " + std::to_string(ph) + "x" + std::to_string(pw));
    }
    Tensor padded = pad_images(batch.images, cfg.pad);

    Batch out;
    out.labels = batch.labels;
    out.multi_labels = batch.multi_labels.defined() ? batch.multi_labels.clone() : Tensor();
    out.images = Tensor::zeros({n, c, cfg.crop_h, cfg.crop_w});
    out.gt_regions = batch.gt_regions;

    const std::size_t plane = ph * pw;
    const std::size_t oplane = cfg.crop_h * cfg.crop_w;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t y0 = rng.below(static_cast<std::uint32_t>(ph - cfg.crop_h + 1));
        std::size_t x0 = rng.below(static_cast<std::uint32_t>(pw - cfg.crop_w + 1));
        bool flip = rng.bernoulli(cfg.hflip_prob);
        for (std::size_t ic = 0; ic < c; ++ic) {
            const double* src = padded.data() + (i * c + ic) * plane;
            double* dst = out.images.data() + (i * c + ic) * oplane;
            for (std::size_t y = 0; y < cfg.crop_h; ++y) {
                const double* row = src + (y0 + y) * pw + x0;
                double* drow = dst + y * cfg.crop_w;
                if (flip) {
                    for (std::size_t x = 0; x < cfg.crop_w; ++x) drow[x] = row[cfg.crop_w - 1 - x];
                } else {
                    std::memcpy(drow, row, sizeof(double) * cfg.crop_w);
                }
            }
        }
        if (i < out.gt_regions.size()) {
            for (Rect& r : out.gt_regions[i]) {
                r = shift_clip_rect(r, static_cast<long>(cfg.pad) - static_cast<long>(y0),
                                    static_cast<long>(cfg.pad) - static_cast<long>(x0),
                                    static_cast<long>(cfg.crop_h), static_cast<long>(cfg.crop_w));
                if (flip) r = hflip_rect(r, static_cast<long>(cfg.crop_w));
            }
        }
    }
    return out;
}

void normalize_images(Tensor& images, const std::vector<double>& mean, const std::vector<double>& stddev) {
    const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
    if (mean.size() != c || stddev.size() != c) {
        throw ShapeError("normalization stats must have one entry per channel");
    }
    for (double s : stddev) {
        if (s <= 0.0) throw ValueError("normalization std must be positive");
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ic = 0; ic < c; ++ic) {
            double* p = images.data() + (i * c + ic) * hw;
            const double m = mean[ic], inv = 1.0 / stddev[ic];
            for (std::size_t j = 0; j < hw; ++j) p[j] = (p[j] - m) * inv;
        }
    }
}

Batch normalize(const Batch& batch, const std::vector<double>& mean, const std::vector<double>& stddev) {
    Batch out = batch;
    out.images = batch.images.clone();
    normalize_images(out.images, mean, stddev);
    return out;
}

std::pair<std::vector<double>, std::vector<double>> channel_stats(const Tensor& images) {
    const std::size_t n = images.dim(0), c = images.dim(1), hw = images.dim(2) * images.dim(3);
    std::vector<double> mean(c, 0.0), sd(c, 0.0);
    const double count = static_cast<double>(n * hw);
    for (std::size_t ic = 0; ic < c; ++ic) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = images.data() + (i * c + ic) * hw;
            for (std::size_t j = 0; j < hw; ++j) acc += p[j];
        }
        mean[ic] = acc / count;
        double vacc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double* p = images.data() + (i * c + ic) * hw;
            for (std::size_t j = 0; j < hw; ++j) {
                double d = p[j] - mean[ic];
                vacc += d * d;
            }
        }
        sd[ic] = std::sqrt(vacc / count);
    }
    return {mean, sd};
}

namespace {
constexpr std::size_t kCifarRecord = 3073;
constexpr std::size_t kCifarPixels = 3072;
}  // namespace

Dataset load_cifar10_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    in.seekg(0, std::ios::end);
    const std::size_t bytes = static_cast<std::size_t>(in.tellg());
    in.seekg(0);
    if (bytes == 0 || bytes % kCifarRecord != 0) {
        throw FormatError(path + ": size " + std::to_string(bytes) +
                          " is not a positive multiple of 3073; record truncated at byte offset " +
                          std::to_string((bytes / kCifarRecord) * kCifarRecord));
    }
    const std::size_t n = bytes / kCifarRecord;
    Dataset ds;
    ds.images = Tensor::zeros({n, 3, 32, 32});
    ds.labels.resize(n);
    std::vector<unsigned char> record(kCifarRecord);
    for (std::size_t i = 0; i < n; ++i) {
        in.read(reinterpret_cast<char*>(record.data()), kCifarRecord);
        if (!in) {
            throw FormatError(path + ": read failed at byte offset " +
                              std::to_string(i * kCifarRecord));
        }
        if (record[0] > 9) {
            throw FormatError(path + ": label byte " + std::to_string(record[0]) +
                              " out of range at byte offset " + std::to_string(i * kCifarRecord));
        }
        ds.labels[i] = record[0];
        double* img = ds.images.data() + i * kCifarPixels;
        for (std::size_t j = 0; j < kCifarPixels; ++j) {
            img[j] = static_cast<double>(record[1 + j]) / 255.0;
        }
    }
    return ds;
}

std::pair<Dataset, Dataset> load_cifar10(const std::string& dir) {
    Dataset train;
    for (int i = 1; i <= 5; ++i) {
        Dataset part = load_cifar10_file(dir + "/data_batch_" + std::to_string(i) + ".bin");
        if (!train.images.defined()) {
            train = std::move(part);
            continue;
        }
        const std::size_t old_n = train.size(), add_n = part.size();
        Tensor merged = Tensor::zeros({old_n + add_n, 3, 32, 32});
        std::memcpy(merged.data(), train.images.data(), sizeof(double) * old_n * kCifarPixels);
        std::memcpy(merged.data() + old_n * kCifarPixels, part.images.data(),
                    sizeof(double) * add_n * kCifarPixels);
        train.images = merged;
        train.labels.insert(train.labels.end(), part.labels.begin(), part.labels.end());
    }
    Dataset test = load_cifar10_file(dir + "/test_batch.bin");
    return {std::move(train), std::move(test)};
}

void save_records(const Dataset& ds, const std::string& path) {
    if (ds.images.dim(1) != 3 || ds.images.dim(2) != 32 || ds.images.dim(3) != 32) {
        throw FormatError("record format requires 3x32x32 images, got " +
                          shape_str(ds.images.shape()));
    }
    if (ds.labels.size() != ds.size()) throw FormatError("record format requires class labels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write " + path);
    std::vector<unsigned char> record(kCifarRecord);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.labels[i] < 0 || ds.labels[i] > 9) {
            throw FormatError("label " + std::to_string(ds.labels[i]) + " not representable");
        }
        record[0] = static_cast<unsigned char>(ds.labels[i]);
        const double* img = ds.images.data() + i * kCifarPixels;
        for (std::size_t j = 0; j < kCifarPixels; ++j) {
            record[1 + j] = static_cast<unsigned char>(std::llround(img[j] * 255.0));
        }
        out.write(reinterpret_cast<const char*>(record.data()), kCifarRecord);
    }
}

void save_regions(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path);
    for (std::size_t i = 0; i < ds.gt_regions.size(); ++i) {
        if (ds.gt_regions[i].size() != 1) {
            throw FormatError("region sidecar format holds one rect per sample");
        }
        const Rect& r = ds.gt_regions[i][0];
        out << i << " " << r.x0 << " " << r.y0 << " " << r.x1 << " " << r.y1 << "\n";
    }
}

std::vector<std::vector<Rect>> load_regions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<std::vector<Rect>> regions;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::size_t idx;
        Rect r;
        if (!(is >> idx >> r.x0 >> r.y0 >> r.x1 >> r.y1)) {
            throw FormatError(path + ": malformed region line: " + line);
        }
        if (idx != regions.size()) throw FormatError(path + ": region lines out of order");
        regions.push_back({r});
    }
    return regions;
}

std::vector<std::uint8_t> glyph_pattern(std::size_t cls, std::size_t ph, std::size_t pw) {
    std::vector<std::uint8_t> g(ph * pw, 0);
    auto set = [&](std::size_t y, std::size_t x) { g[y * pw + x] = 1; };
    const std::size_t cy = ph / 2, cx = pw / 2;
    switch (cls) {
        case 0:  // horizontal bar
            for (std::size_t x = 0; x < pw; ++x) {
                set(cy - 1, x);
                set(cy, x);
            }
            break;
        case 1:  // vertical bar
            for (std::size_t y = 0; y < ph; ++y) {
                set(y, cx - 1);
                set(y, cx);
            }
            break;
        case 2:  // thick plus
            for (std::size_t x = 0; x < pw; ++x) {
                set(cy - 1, x);
                set(cy, x);
            }
            for (std::size_t y = 0; y < ph; ++y) {
                set(y, cx - 1);
                set(y, cx);
            }
            break;
        case 3:  // hollow box
            for (std::size_t x = 0; x < pw; ++x) {
                set(0, x);
                set(ph - 1, x);
            }
            for (std::size_t y = 0; y < ph; ++y) {
                set(y, 0);
                set(y, pw - 1);
            }
            break;
        case 4:  // X (mirror-symmetric)
            for (std::size_t y = 0; y < ph; ++y) {
                set(y, (y * pw) / ph);
                set(y, pw - 1 - (y * pw) / ph);
            }
            break;
        case 5:  // double horizontal bars
            for (std::size_t x = 0; x < pw; ++x) {
                set(1, x);
                set(ph - 2, x);
            }
            break;
        case 6:  // double vertical bars
            for (std::size_t y = 0; y < ph; ++y) {
                set(y, 1);
                set(y, pw - 2);
            }
            break;
        case 7:  // filled center block
            for (std::size_t y = ph / 4; y < ph - ph / 4; ++y) {
                for (std::size_t x = pw / 4; x < pw - pw / 4; ++x) set(y, x);
            }
            break;
        default: {
            // seeded random pattern, mirrored for hflip symmetry
            Rng rng(derive_seed(0x61626e676c797068ull, "glyph" + std::to_string(cls)));
            for (std::size_t y = 0; y < ph; ++y) {
                for (std::size_t x = 0; x <= (pw - 1) / 2; ++x) {
                    if (rng.bernoulli(0.5)) {
                        set(y, x);
                        set(y, pw - 1 - x);
                    }
                }
            }
            break;
        }
    }
    return g;
}

namespace {

double quantize_byte(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return static_cast<double>(std::llround(v * 255.0)) / 255.0;
}

void stamp_glyph(Tensor& images, std::size_t sample, std::size_t cls, std::size_t y0,
                 std::size_t x0, std::size_t ph, std::size_t pw) {
    const std::size_t c = images.dim(1), h = images.dim(2), w = images.dim(3);
    std::vector<std::uint8_t> g = glyph_pattern(cls, ph, pw);
    for (std::size_t y = 0; y < ph; ++y) {
        for (std::size_t x = 0; x < pw; ++x) {
            if (!g[y * pw + x]) continue;
            for (std::size_t ic = 0; ic < c; ++ic) {
                images.data()[((sample * c + ic) * h + y0 + y) * w + x0 + x] = 1.0;
            }
        }
    }
}

}  // namespace

Dataset make_synthetic(std::size_t num_per_class, std::size_t num_classes, std::size_t channels,
                       std::size_t height, std::size_t width, std::size_t patch_h,
                       std::size_t patch_w, double noise_std, std::uint64_t seed) {
    if (patch_h > height || patch_w > width) throw ValueError("patch does not fit in image");
    const std::size_t n = num_per_class * num_classes;
    Dataset ds;
    ds.images = Tensor::zeros({n, channels, height, width});
    ds.labels.resize(n);
    ds.gt_regions.resize(n);
    Rng rng(derive_seed(seed, "synthetic"));
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t cls = i % num_classes;
        ds.labels[i] = static_cast<int>(cls);
        if (noise_std > 0.0) {
            double* img = ds.images.data() + i * channels * height * width;
            for (std::size_t j = 0; j < channels * height * width; ++j) {
                img[j] = quantize_byte(rng.gauss(0.0, noise_std));
            }
        }
        const std::size_t y0 = rng.below(static_cast<std::uint32_t>(height - patch_h + 1));
        const std::size_t x0 = rng.below(static_cast<std::uint32_t>(width - patch_w + 1));
        stamp_glyph(ds.images, i, cls, y0, x0, patch_h, patch_w);
        ds.gt_regions[i] = {Rect{static_cast<long>(x0), static_cast<long>(y0),
                                 static_cast<long>(x0 + patch_w), static_cast<long>(y0 + patch_h)}};
    }
    return ds;
}

Dataset make_synthetic_multitask(std::size_t num_samples, std::size_t num_tasks,
                                 std::size_t channels, std::size_t height, std::size_t width,
                                 std::size_t patch_h, std::size_t patch_w, double noise_std,
                                 std::uint64_t seed) {
    if (patch_h > height || patch_w > width) throw ValueError("patch does not fit in image");
    Dataset ds;
    ds.images = Tensor::zeros({num_samples, channels, height, width});
    ds.multi_labels = Tensor::zeros({num_samples, num_tasks});
    ds.gt_regions.assign(num_samples, std::vector<Rect>(num_tasks, Rect::none()));
    Rng rng(derive_seed(seed, "synthetic_multitask"));
    for (std::size_t i = 0; i < num_samples; ++i) {
        if (noise_std > 0.0) {
            double* img = ds.images.data() + i * channels * height * width;
            for (std::size_t j = 0; j < channels * height * width; ++j) {
                img[j] = quantize_byte(rng.gauss(0.0, noise_std));
            }
        }
        for (std::size_t t = 0; t < num_tasks; ++t) {
            if (!rng.bernoulli(0.5)) continue;
            ds.multi_labels.at2(i, t) = 1.0;
            const std::size_t y0 = rng.below(static_cast<std::uint32_t>(height - patch_h + 1));
            const std::size_t x0 = rng.below(static_cast<std::uint32_t>(width - patch_w + 1));
            stamp_glyph(ds.images, i, t, y0, x0, patch_h, patch_w);
            ds.gt_regions[i][t] = Rect{static_cast<long>(x0), static_cast<long>(y0),
                                       static_cast<long>(x0 + patch_w),
                                       static_cast<long>(y0 + patch_h)};
        }
    }
    return ds;
}

}  // namespace abn
