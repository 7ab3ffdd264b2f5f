#include "abn/layers.hpp"

#include <cmath>

#include "abn/rng.hpp"

namespace abn {

Tensor he_initialize(Shape shape, std::size_t fan_in, std::uint64_t seed) {
    if (fan_in < 1) throw ValueError("he_initialize fan_in must be >= 1");
    Tensor t = Tensor::zeros(std::move(shape), true);
    Rng rng(seed);
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) v = rng.gauss(0.0, stddev);
    return t;
}

Conv2dLayer Conv2dLayer::make(std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                              std::size_t stride, std::size_t pad, bool with_bias,
                              const std::string& name, std::uint64_t seed) {
    Conv2dLayer layer;
    layer.stride = stride;
    layer.pad = pad;
    layer.weight = he_initialize({out_ch, in_ch, ksize, ksize}, in_ch * ksize * ksize,
                                 derive_seed(seed, name + ".weight"));
    if (with_bias) layer.bias = Tensor::zeros({out_ch}, true);
    return layer;
}

void Conv2dLayer::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                          std::vector<NamedTensor>& state) const {
    params.push_back({prefix + ".weight", weight});
    state.push_back({prefix + ".weight", weight});
    if (bias.defined()) {
        params.push_back({prefix + ".bias", bias});
        state.push_back({prefix + ".bias", bias});
    }
}

BatchNorm BatchNorm::make(std::size_t channels) {
    BatchNorm bn;
    bn.gamma = Tensor::full({channels}, 1.0, true);
    bn.beta = Tensor::zeros({channels}, true);
    bn.running_mean = Tensor::zeros({channels});
    bn.running_var = Tensor::full({channels}, 1.0);
    return bn;
}

Tensor BatchNorm::forward(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("batch_norm input must be [N,C,H,W], got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != gamma.dim(0)) {
        throw ShapeError("batch_norm channel mismatch: input " + shape_str(x.shape()) +
                         " vs gamma " + shape_str(gamma.shape()));
    }
    const std::size_t m = n * h * w;  // reduction count per channel
    const std::size_t hw = h * w;
    Tensor out = Tensor::zeros(x.shape());

    if (!training) {
        for (std::size_t ic = 0; ic < c; ++ic) {
            const double scale = gamma.values()[ic] / std::sqrt(running_var.values()[ic] + eps);
            const double shift = beta.values()[ic] - scale * running_mean.values()[ic];
            for (std::size_t in = 0; in < n; ++in) {
                const double* xp = x.data() + (in * c + ic) * hw;
                double* op = out.data() + (in * c + ic) * hw;
                for (std::size_t i = 0; i < hw; ++i) op[i] = scale * xp[i] + shift;
            }
        }
        if (Tape::current() != nullptr && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
            out.set_requires_grad(true);
            Tensor xi = x, g = gamma, b = beta, rm = running_mean, rv = running_var;
            const double e = eps;
            Tape::current()->record(out, [xi, g, b, rm, rv, e, n, c, hw](const Tensor& o) mutable {
                const double* go = o.grad().data();
                for (std::size_t ic = 0; ic < c; ++ic) {
                    const double inv_sd = 1.0 / std::sqrt(rv.values()[ic] + e);
                    const double scale = g.values()[ic] * inv_sd;
                    double gsum = 0.0, gxhat = 0.0;
                    for (std::size_t in = 0; in < n; ++in) {
                        const std::size_t off = (in * c + ic) * hw;
                        for (std::size_t i = 0; i < hw; ++i) {
                            double gv = go[off + i];
                            gsum += gv;
                            gxhat += gv * (xi.values()[off + i] - rm.values()[ic]) * inv_sd;
                        }
                    }
                    if (g.requires_grad()) g.grad()[ic] += gxhat;
                    if (b.requires_grad()) b.grad()[ic] += gsum;
                    if (xi.requires_grad()) {
                        double* gx = xi.grad().data();
                        for (std::size_t in = 0; in < n; ++in) {
                            const std::size_t off = (in * c + ic) * hw;
                            for (std::size_t i = 0; i < hw; ++i) gx[off + i] += go[off + i] * scale;
                        }
                    }
                }
            });
        }
        return out;
    }

    if (m < 2) throw ValueError("batch_norm train mode requires N*H*W >= 2");

    // batch statistics (biased variance)
    std::vector<double> mean(c, 0.0), var(c, 0.0), inv_sd(c, 0.0);
    for (std::size_t ic = 0; ic < c; ++ic) {
        double acc = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
            const double* xp = x.data() + (in * c + ic) * hw;
            for (std::size_t i = 0; i < hw; ++i) acc += xp[i];
        }
        mean[ic] = acc / static_cast<double>(m);
        double vacc = 0.0;
        for (std::size_t in = 0; in < n; ++in) {
            const double* xp = x.data() + (in * c + ic) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                double d = xp[i] - mean[ic];
                vacc += d * d;
            }
        }
        var[ic] = vacc / static_cast<double>(m);
        inv_sd[ic] = 1.0 / std::sqrt(var[ic] + eps);
    }

    for (std::size_t ic = 0; ic < c; ++ic) {
        const double scale = gamma.values()[ic] * inv_sd[ic];
        const double shift = beta.values()[ic] - scale * mean[ic];
        for (std::size_t in = 0; in < n; ++in) {
            const double* xp = x.data() + (in * c + ic) * hw;
            double* op = out.data() + (in * c + ic) * hw;
            for (std::size_t i = 0; i < hw; ++i) op[i] = scale * xp[i] + shift;
        }
    }

    for (std::size_t ic = 0; ic < c; ++ic) {
        running_mean.values()[ic] = (1.0 - momentum) * running_mean.values()[ic] + momentum * mean[ic];
        running_var.values()[ic] = (1.0 - momentum) * running_var.values()[ic] + momentum * var[ic];
    }

    if (Tape::current() != nullptr && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad())) {
        out.set_requires_grad(true);
        Tensor xi = x, g = gamma, b = beta;
        std::vector<double> mu = mean, isd = inv_sd;
        Tape::current()->record(out, [xi, g, b, mu, isd, n, c, hw, m](const Tensor& o) mutable {
            const double* go = o.grad().data();
            const double inv_m = 1.0 / static_cast<double>(m);
            for (std::size_t ic = 0; ic < c; ++ic) {
                double gsum = 0.0, gxhat = 0.0;
                for (std::size_t in = 0; in < n; ++in) {
                    const std::size_t off = (in * c + ic) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        double gv = go[off + i];
                        gsum += gv;
                        gxhat += gv * (xi.values()[off + i] - mu[ic]) * isd[ic];
                    }
                }
                if (g.requires_grad()) g.grad()[ic] += gxhat;
                if (b.requires_grad()) b.grad()[ic] += gsum;
                if (xi.requires_grad()) {
                    // dL/dx = gamma*inv_sd * (dy - mean(dy) - xhat*mean(dy*xhat))
                    const double scale = g.values()[ic] * isd[ic];
                    const double mean_g = gsum * inv_m;
                    const double mean_gx = gxhat * inv_m;
                    double* gx = xi.grad().data();
                    for (std::size_t in = 0; in < n; ++in) {
                        const std::size_t off = (in * c + ic) * hw;
                        for (std::size_t i = 0; i < hw; ++i) {
                            double xhat = (xi.values()[off + i] - mu[ic]) * isd[ic];
                            gx[off + i] += scale * (go[off + i] - mean_g - xhat * mean_gx);
                        }
                    }
                }
            }
        });
    }
    return out;
}

void BatchNorm::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& state) const {
    params.push_back({prefix + ".gamma", gamma});
    params.push_back({prefix + ".beta", beta});
    state.push_back({prefix + ".gamma", gamma});
    state.push_back({prefix + ".beta", beta});
    state.push_back({prefix + ".running_mean", running_mean});
    state.push_back({prefix + ".running_var", running_var});
}

Tensor batch_norm_forward(const Tensor& x, BatchNorm& bn) {
    return bn.forward(x);
}

ConvBlock ConvBlock::make(std::size_t in_ch, std::size_t out_ch, std::size_t ksize,
                          std::size_t stride, std::size_t pad, bool with_bn, Act act,
                          const std::string& name, std::uint64_t seed) {
    ConvBlock block;
    block.conv = Conv2dLayer::make(in_ch, out_ch, ksize, stride, pad, !with_bn, name + ".conv", seed);
    if (with_bn) block.bn = BatchNorm::make(out_ch);
    block.act = act;
    return block;
}

Tensor ConvBlock::forward(const Tensor& x) {
    Tensor y = conv.forward(x);
    if (bn) y = bn->forward(y);
    switch (act) {
        case Act::none: return y;
        case Act::relu: return relu(y);
        case Act::sigmoid: return sigmoid(y);
    }
    return y;
}

void ConvBlock::set_training(bool train) {
    if (bn) bn->training = train;
}

void ConvBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                        std::vector<NamedTensor>& state) const {
    conv.collect(prefix + ".conv", params, state);
    if (bn) bn->collect(prefix + ".bn", params, state);
}

ResidualBlock ResidualBlock::make(std::size_t in_ch, std::size_t out_ch, std::size_t stride,
                                  const std::string& name, std::uint64_t seed) {
    ResidualBlock block;
    block.first = ConvBlock::make(in_ch, out_ch, 3, stride, 1, true, Act::relu, name + ".conv1", seed);
    block.second = ConvBlock::make(out_ch, out_ch, 3, 1, 1, true, Act::none, name + ".conv2", seed);
    if (stride != 1 || in_ch != out_ch) {
        block.projection =
            ConvBlock::make(in_ch, out_ch, 1, stride, 0, true, Act::none, name + ".proj", seed);
    }
    return block;
}

Tensor ResidualBlock::forward(const Tensor& x) {
    Tensor main = second.forward(first.forward(x));
    Tensor shortcut = projection ? projection->forward(x) : x;
    if (main.shape() != shortcut.shape()) {
        throw ShapeError("residual shortcut shape " + shape_str(shortcut.shape()) +
                         " does not match main path " + shape_str(main.shape()));
    }
    return relu(add(main, shortcut));
}

void ResidualBlock::set_training(bool train) {
    first.set_training(train);
    second.set_training(train);
    if (projection) projection->set_training(train);
}

void ResidualBlock::collect(const std::string& prefix, std::vector<NamedTensor>& params,
                            std::vector<NamedTensor>& state) const {
    first.collect(prefix + ".conv1", params, state);
    second.collect(prefix + ".conv2", params, state);
    if (projection) projection->collect(prefix + ".proj", params, state);
}

Tensor residual_block_forward(const Tensor& x, ResidualBlock& block) {
    return block.forward(x);
}

}  // namespace abn
