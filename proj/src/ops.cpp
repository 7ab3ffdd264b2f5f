#include "abn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>

#include "abn/gemm.hpp"

namespace abn {

namespace {

bool want_grad(std::initializer_list<const Tensor*> inputs) {
    if (Tape::current() == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->defined() && t->requires_grad()) return true;
    }
    return false;
}

void check_rank(const Tensor& t, std::size_t rank, const char* what) {
    if (t.rank() != rank) {
        throw ShapeError(std::string(what) + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
    }
}

struct ConvDims {
    std::size_t n, c, h, w;    // input
    std::size_t k, kh, kw;     // kernel
    std::size_t oh, ow;        // output
    std::size_t ckk;           // c*kh*kw
    std::size_t cols;          // n*oh*ow
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, std::size_t stride, std::size_t pad) {
    check_rank(input, 4, "conv2d input");
    check_rank(weight, 4, "conv2d weight");
    if (stride < 1) throw ValueError("conv2d stride must be >= 1");
    ConvDims d;
    d.n = input.dim(0);
    d.c = input.dim(1);
    d.h = input.dim(2);
    d.w = input.dim(3);
    d.k = weight.dim(0);
    d.kh = weight.dim(2);
    d.kw = weight.dim(3);
    if (weight.dim(1) != d.c) {
        throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) +
                         " vs weight " + shape_str(weight.shape()));
    }
    std::size_t ph = d.h + 2 * pad;
    std::size_t pw = d.w + 2 * pad;
    if (d.kh > ph || d.kw > pw) {
        throw ShapeError("conv2d kernel " + shape_str(weight.shape()) +
                         " larger than padded input " + shape_str(input.shape()));
    }
    d.oh = (ph - d.kh) / stride + 1;
    d.ow = (pw - d.kw) / stride + 1;
    d.ckk = d.c * d.kh * d.kw;
    d.cols = d.n * d.oh * d.ow;
    return d;
}

// Patch-flattening: col is (c*kh*kw) x (n*oh*ow), row-major.
void im2col(const double* x, const ConvDims& d, std::size_t stride, std::size_t pad, double* col) {
    std::memset(col, 0, sizeof(double) * d.ckk * d.cols);
    const long H = static_cast<long>(d.h);
    const long W = static_cast<long>(d.w);
    for (std::size_t n = 0; n < d.n; ++n) {
        const double* xn = x + n * d.c * d.h * d.w;
        for (std::size_t c = 0; c < d.c; ++c) {
            const double* xc = xn + c * d.h * d.w;
            for (std::size_t i = 0; i < d.kh; ++i) {
                for (std::size_t j = 0; j < d.kw; ++j) {
                    double* row = col + ((c * d.kh + i) * d.kw + j) * d.cols + n * d.oh * d.ow;
                    for (std::size_t oh = 0; oh < d.oh; ++oh) {
                        long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                        if (ih < 0 || ih >= H) continue;
                        const double* xr = xc + ih * W;
                        double* dst = row + oh * d.ow;
                        for (std::size_t ow = 0; ow < d.ow; ++ow) {
                            long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                            if (iw < 0 || iw >= W) continue;
                            dst[ow] = xr[iw];
                        }
                    }
                }
            }
        }
    }
}

// Scatter-add of a col-shaped gradient back onto the input layout.
void col2im_add(const double* col, const ConvDims& d, std::size_t stride, std::size_t pad, double* gx) {
    const long H = static_cast<long>(d.h);
    const long W = static_cast<long>(d.w);
    for (std::size_t n = 0; n < d.n; ++n) {
        double* gn = gx + n * d.c * d.h * d.w;
        for (std::size_t c = 0; c < d.c; ++c) {
            double* gc = gn + c * d.h * d.w;
            for (std::size_t i = 0; i < d.kh; ++i) {
                for (std::size_t j = 0; j < d.kw; ++j) {
                    const double* row = col + ((c * d.kh + i) * d.kw + j) * d.cols + n * d.oh * d.ow;
                    for (std::size_t oh = 0; oh < d.oh; ++oh) {
                        long ih = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
                        if (ih < 0 || ih >= H) continue;
                        double* gr = gc + ih * W;
                        const double* src = row + oh * d.ow;
                        for (std::size_t ow = 0; ow < d.ow; ++ow) {
                            long iw = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
                            if (iw < 0 || iw >= W) continue;
                            gr[iw] += src[ow];
                        }
                    }
                }
            }
        }
    }
}

// out tensor layout [N,K,OH,OW] <-> gemm layout [K, N*OH*OW]
void mat_to_nchw(const double* mat, const ConvDims& d, double* out) {
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t k = 0; k < d.k; ++k) {
            const double* src = mat + k * d.cols + n * d.oh * d.ow;
            double* dst = out + (n * d.k + k) * d.oh * d.ow;
            std::memcpy(dst, src, sizeof(double) * d.oh * d.ow);
        }
    }
}

void nchw_to_mat(const double* out, const ConvDims& d, double* mat) {
    for (std::size_t n = 0; n < d.n; ++n) {
        for (std::size_t k = 0; k < d.k; ++k) {
            const double* src = out + (n * d.k + k) * d.oh * d.ow;
            double* dst = mat + k * d.cols + n * d.oh * d.ow;
            std::memcpy(dst, src, sizeof(double) * d.oh * d.ow);
        }
    }
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride, std::size_t pad) {
    ConvDims d = conv_dims(input, weight, stride, pad);
    if (bias.defined()) {
        if (bias.rank() != 1 || bias.dim(0) != d.k) {
            throw ShapeError("conv2d bias must be [" + std::to_string(d.k) + "], got " +
                             shape_str(bias.shape()));
        }
    }

    std::vector<double> col(d.ckk * d.cols);
    im2col(input.data(), d, stride, pad, col.data());

    std::vector<double> out_mat(d.k * d.cols, 0.0);
    gemm_nn(d.k, d.cols, d.ckk, weight.data(), d.ckk, col.data(), d.cols, out_mat.data(), d.cols);
    if (bias.defined()) {
        for (std::size_t k = 0; k < d.k; ++k) {
            double b = bias.values()[k];
            double* row = out_mat.data() + k * d.cols;
            for (std::size_t i = 0; i < d.cols; ++i) row[i] += b;
        }
    }

    Tensor out = Tensor::zeros({d.n, d.k, d.oh, d.ow});
    mat_to_nchw(out_mat.data(), d, out.data());

    if (want_grad({&input, &weight, &bias})) {
        out.set_requires_grad(true);
        Tensor in = input, w = weight, b = bias;
        Tape::current()->record(out, [in, w, b, d, stride, pad](const Tensor& o) mutable {
            std::vector<double> gmat(d.k * d.cols);
            nchw_to_mat(o.grad().data(), d, gmat.data());

            if (b.defined() && b.requires_grad()) {
                std::vector<double>& gb = b.grad();
                for (std::size_t k = 0; k < d.k; ++k) {
                    const double* row = gmat.data() + k * d.cols;
                    double acc = 0.0;
                    for (std::size_t i = 0; i < d.cols; ++i) acc += row[i];
                    gb[k] += acc;
                }
            }

            const bool need_w = w.requires_grad();
            const bool need_x = in.requires_grad();
            if (need_w || need_x) {
                if (need_w) {
                    std::vector<double> col(d.ckk * d.cols);
                    im2col(in.data(), d, stride, pad, col.data());
                    gemm_nt(d.k, d.ckk, d.cols, gmat.data(), d.cols, col.data(), d.cols,
                            w.grad().data(), d.ckk);
                }
                if (need_x) {
                    std::vector<double> gcol(d.ckk * d.cols, 0.0);
                    gemm_tn(d.ckk, d.cols, d.k, w.data(), d.ckk, gmat.data(), d.cols,
                            gcol.data(), d.cols);
                    col2im_add(gcol.data(), d, stride, pad, in.grad().data());
                }
            }
        });
    }
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_rank(x, 2, "linear input");
    check_rank(w, 2, "linear weight");
    const std::size_t n = x.dim(0), dIn = x.dim(1);
    const std::size_t m = w.dim(1);
    if (w.dim(0) != dIn) {
        throw ShapeError("linear inner dimensions disagree: " + shape_str(x.shape()) + " vs " +
                         shape_str(w.shape()));
    }
    if (b.defined() && (b.rank() != 1 || b.dim(0) != m)) {
        throw ShapeError("linear bias must be [" + std::to_string(m) + "], got " +
                         shape_str(b.shape()));
    }

    Tensor out = Tensor::zeros({n, m});
    gemm_nn(n, m, dIn, x.data(), dIn, w.data(), m, out.data(), m);
    if (b.defined()) {
        for (std::size_t i = 0; i < n; ++i) {
            double* row = out.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) row[j] += b.values()[j];
        }
    }

    if (want_grad({&x, &w, &b})) {
        out.set_requires_grad(true);
        Tensor xi = x, wi = w, bi = b;
        Tape::current()->record(out, [xi, wi, bi, n, dIn, m](const Tensor& o) mutable {
            const double* go = o.grad().data();
            if (xi.requires_grad()) {
                gemm_nt(n, dIn, m, go, m, wi.data(), m, xi.grad().data(), dIn);
            }
            if (wi.requires_grad()) {
                gemm_tn(dIn, m, n, xi.data(), dIn, go, m, wi.grad().data(), m);
            }
            if (bi.defined() && bi.requires_grad()) {
                std::vector<double>& gb = bi.grad();
                for (std::size_t i = 0; i < n; ++i) {
                    for (std::size_t j = 0; j < m; ++j) gb[j] += go[i * m + j];
                }
            }
        });
    }
    return out;
}

Tensor global_average_pool(const Tensor& x) {
    check_rank(x, 4, "global_average_pool input");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    Tensor out = Tensor::zeros({n, c});
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
        const double* p = x.data() + i * hw;
        double acc = 0.0;
        for (std::size_t j = 0; j < hw; ++j) acc += p[j];
        out.values()[i] = acc * inv;
    }
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi, n, c, hw, inv](const Tensor& o) mutable {
            double* gx = xi.grad().data();
            const double* go = o.grad().data();
            for (std::size_t i = 0; i < n * c; ++i) {
                double g = go[i] * inv;
                double* p = gx + i * hw;
                for (std::size_t j = 0; j < hw; ++j) p[j] += g;
            }
        });
    }
    return out;
}

Tensor relu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] > 0.0 ? x.values()[i] : 0.0;
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi](const Tensor& o) mutable {
            double* gx = xi.grad().data();
            const double* go = o.grad().data();
            for (std::size_t i = 0; i < xi.size(); ++i) {
                if (xi.values()[i] > 0.0) gx[i] += go[i];
            }
        });
    }
    return out;
}

Tensor sigmoid(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x.values()[i];
        if (v >= 0.0) {
            double t = std::exp(-v);
            out.values()[i] = 1.0 / (1.0 + t);
        } else {
            double t = std::exp(v);
            out.values()[i] = t / (1.0 + t);
        }
    }
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi](const Tensor& o) mutable {
            double* gx = xi.grad().data();
            const double* go = o.grad().data();
            const double* y = o.values().data();
            for (std::size_t i = 0; i < xi.size(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
        });
    }
    return out;
}

Tensor softmax_rows(const Tensor& x) {
    check_rank(x, 2, "softmax_rows input");
    const std::size_t n = x.dim(0), k = x.dim(1);
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = x.data() + i * k;
        double* orow = out.data() + i * k;
        double mx = row[0];
        for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            orow[j] = std::exp(row[j] - mx);
            denom += orow[j];
        }
        for (std::size_t j = 0; j < k; ++j) orow[j] /= denom;
    }
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi, n, k](const Tensor& o) mutable {
            double* gx = xi.grad().data();
            const double* go = o.grad().data();
            const double* y = o.values().data();
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < k; ++j) dot += go[i * k + j] * y[i * k + j];
                for (std::size_t j = 0; j < k; ++j) {
                    gx[i * k + j] += y[i * k + j] * (go[i * k + j] - dot);
                }
            }
        });
    }
    return out;
}

Tensor activation(const Tensor& x, ActivationKind kind) {
    switch (kind) {
        case ActivationKind::relu: return relu(x);
        case ActivationKind::sigmoid: return sigmoid(x);
        case ActivationKind::softmax_rows: return softmax_rows(x);
    }
    throw ValueError("unknown activation kind");
}

namespace {

// true: identical shapes; false: b is [N,1,H,W] broadcast against [N,C,H,W].
bool broadcast_layout(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) return true;
    if (a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && b.dim(1) == 1 &&
        a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3)) {
        return false;
    }
    throw ShapeError("shapes not elementwise-compatible: " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    const bool same = broadcast_layout(a, b);
    Tensor out = Tensor::zeros(a.shape());
    if (same) {
        for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + b.values()[i];
    } else {
        const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
        for (std::size_t in = 0; in < n; ++in) {
            const double* bp = b.data() + in * hw;
            for (std::size_t ic = 0; ic < c; ++ic) {
                const double* ap = a.data() + (in * c + ic) * hw;
                double* op = out.data() + (in * c + ic) * hw;
                for (std::size_t i = 0; i < hw; ++i) op[i] = ap[i] + bp[i];
            }
        }
    }
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ai = a, bi = b;
        Tape::current()->record(out, [ai, bi, same](const Tensor& o) mutable {
            const double* go = o.grad().data();
            if (ai.requires_grad()) ai.accumulate_grad(go, ai.size());
            if (bi.requires_grad()) {
                if (same) {
                    bi.accumulate_grad(go, bi.size());
                } else {
                    const std::size_t n = ai.dim(0), c = ai.dim(1), hw = ai.dim(2) * ai.dim(3);
                    double* gb = bi.grad().data();
                    for (std::size_t in = 0; in < n; ++in) {
                        for (std::size_t ic = 0; ic < c; ++ic) {
                            const double* gp = go + (in * c + ic) * hw;
                            double* dst = gb + in * hw;
                            for (std::size_t i = 0; i < hw; ++i) dst[i] += gp[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    const bool same = broadcast_layout(a, b);
    Tensor out = Tensor::zeros(a.shape());
    if (same) {
        for (std::size_t i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] * b.values()[i];
    } else {
        const std::size_t n = a.dim(0), c = a.dim(1), hw = a.dim(2) * a.dim(3);
        for (std::size_t in = 0; in < n; ++in) {
            const double* bp = b.data() + in * hw;
            for (std::size_t ic = 0; ic < c; ++ic) {
                const double* ap = a.data() + (in * c + ic) * hw;
                double* op = out.data() + (in * c + ic) * hw;
                for (std::size_t i = 0; i < hw; ++i) op[i] = ap[i] * bp[i];
            }
        }
    }
    if (want_grad({&a, &b})) {
        out.set_requires_grad(true);
        Tensor ai = a, bi = b;
        Tape::current()->record(out, [ai, bi, same](const Tensor& o) mutable {
            const double* go = o.grad().data();
            if (same) {
                if (ai.requires_grad()) {
                    double* ga = ai.grad().data();
                    for (std::size_t i = 0; i < ai.size(); ++i) ga[i] += go[i] * bi.values()[i];
                }
                if (bi.requires_grad()) {
                    double* gb = bi.grad().data();
                    for (std::size_t i = 0; i < bi.size(); ++i) gb[i] += go[i] * ai.values()[i];
                }
            } else {
                const std::size_t n = ai.dim(0), c = ai.dim(1), hw = ai.dim(2) * ai.dim(3);
                if (ai.requires_grad()) {
                    double* ga = ai.grad().data();
                    for (std::size_t in = 0; in < n; ++in) {
                        const double* bp = bi.values().data() + in * hw;
                        for (std::size_t ic = 0; ic < c; ++ic) {
                            const std::size_t off = (in * c + ic) * hw;
                            for (std::size_t i = 0; i < hw; ++i) ga[off + i] += go[off + i] * bp[i];
                        }
                    }
                }
                if (bi.requires_grad()) {
                    double* gb = bi.grad().data();
                    for (std::size_t in = 0; in < n; ++in) {
                        for (std::size_t ic = 0; ic < c; ++ic) {
                            const std::size_t off = (in * c + ic) * hw;
                            const double* ap = ai.values().data() + off;
                            double* dst = gb + in * hw;
                            for (std::size_t i = 0; i < hw; ++i) dst[i] += go[off + i] * ap[i];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor elementwise(const Tensor& a, const Tensor& b, ElementwiseKind kind) {
    return kind == ElementwiseKind::add ? add(a, b) : mul(a, b);
}

Tensor add_scalar(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] + s;
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi](const Tensor& o) mutable {
            xi.accumulate_grad(o.grad().data(), xi.size());
        });
    }
    return out;
}

Tensor mul_scalar(const Tensor& x, double s) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out.values()[i] = x.values()[i] * s;
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi, s](const Tensor& o) mutable {
            double* gx = xi.grad().data();
            const double* go = o.grad().data();
            for (std::size_t i = 0; i < xi.size(); ++i) gx[i] += go[i] * s;
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi](const Tensor& o) mutable {
            double g = o.grad()[0];
            double* gx = xi.grad().data();
            for (std::size_t i = 0; i < xi.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor mean_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double inv = 1.0 / static_cast<double>(x.size());
    Tensor out = Tensor::scalar(acc * inv);
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi, inv](const Tensor& o) mutable {
            double g = o.grad()[0] * inv;
            double* gx = xi.grad().data();
            for (std::size_t i = 0; i < xi.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor channel_slice(const Tensor& x, std::size_t c) {
    check_rank(x, 4, "channel_slice input");
    const std::size_t n = x.dim(0), ch = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (c >= ch) throw ValueError("channel_slice index " + std::to_string(c) + " out of range");
    Tensor out = Tensor::zeros({n, 1, x.dim(2), x.dim(3)});
    for (std::size_t in = 0; in < n; ++in) {
        std::memcpy(out.data() + in * hw, x.data() + (in * ch + c) * hw, sizeof(double) * hw);
    }
    if (want_grad({&x})) {
        out.set_requires_grad(true);
        Tensor xi = x;
        Tape::current()->record(out, [xi, c, n, ch, hw](const Tensor& o) mutable {
            double* gx = xi.grad().data();
            const double* go = o.grad().data();
            for (std::size_t in = 0; in < n; ++in) {
                double* dst = gx + (in * ch + c) * hw;
                const double* src = go + in * hw;
                for (std::size_t i = 0; i < hw; ++i) dst[i] += src[i];
            }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& probs, const std::vector<int>& labels) {
    check_rank(probs, 2, "cross_entropy probs");
    const std::size_t n = probs.dim(0), k = probs.dim(1);
    if (labels.size() != n) {
        throw ShapeError("cross_entropy labels size " + std::to_string(labels.size()) +
                         " does not match batch " + std::to_string(n));
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= k) {
            throw ValueError("cross_entropy label " + std::to_string(y) + " out of range [0," +
                             std::to_string(k) + ")");
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double p = probs.values()[i * k + static_cast<std::size_t>(labels[i])];
        acc -= std::log(std::max(p, kProbClamp));
    }
    const double inv = 1.0 / static_cast<double>(n);
    Tensor out = Tensor::scalar(acc * inv);
    if (want_grad({&probs})) {
        out.set_requires_grad(true);
        Tensor pi = probs;
        std::vector<int> ls = labels;
        Tape::current()->record(out, [pi, ls, n, k, inv](const Tensor& o) mutable {
            double g = o.grad()[0] * inv;
            double* gp = pi.grad().data();
            for (std::size_t i = 0; i < n; ++i) {
                std::size_t idx = i * k + static_cast<std::size_t>(ls[i]);
                double p = pi.values()[idx];
                if (p > kProbClamp) gp[idx] -= g / p;
            }
        });
    }
    return out;
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& targets) {
    if (probs.shape() != targets.shape()) {
        throw ShapeError("binary_cross_entropy shape mismatch: " + shape_str(probs.shape()) +
                         " vs " + shape_str(targets.shape()));
    }
    const std::size_t rows = probs.dim(0);
    const double hi = 1.0 - kProbClamp;
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        double p = std::clamp(probs.values()[i], kProbClamp, hi);
        double t = targets.values()[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    const double inv = 1.0 / static_cast<double>(rows);
    Tensor out = Tensor::scalar(acc * inv);
    if (want_grad({&probs})) {
        out.set_requires_grad(true);
        Tensor pi = probs;
        Tensor ti = targets;
        Tape::current()->record(out, [pi, ti, inv, hi](const Tensor& o) mutable {
            double g = o.grad()[0] * inv;
            double* gp = pi.grad().data();
            for (std::size_t i = 0; i < pi.size(); ++i) {
                double p = pi.values()[i];
                if (p <= kProbClamp || p >= hi) continue;
                double t = ti.values()[i];
                gp[i] += g * (-t / p + (1.0 - t) / (1.0 - p));
            }
        });
    }
    return out;
}

}  // namespace abn
