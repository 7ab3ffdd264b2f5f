#include "abn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <utility>

namespace abn {

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    for (std::size_t d : shape) {
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    }
    Tensor t;
    t.impl_ = std::make_shared<Impl>();
    t.impl_->shape = std::move(shape);
    t.impl_->values.assign(shape_size(t.impl_->shape), 0.0);
    t.impl_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.values()) v = value;
    return t;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    Tensor t = zeros(std::move(shape), requires_grad);
    t.impl_->values = std::move(values);
    return t;
}

Tensor Tensor::scalar(double value) {
    return from_values({1}, {value});
}

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() requires a single-element tensor, got " + shape_str(shape()));
    return values()[0];
}

double& Tensor::at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    const Shape& s = shape();
    if (s.size() != 4) throw ShapeError("at4 requires rank-4 tensor, got " + shape_str(s));
    return impl().values[((n * s[1] + c) * s[2] + h) * s[3] + w];
}

double Tensor::at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return const_cast<Tensor*>(this)->at4(n, c, h, w);
}

double& Tensor::at2(std::size_t r, std::size_t c) {
    const Shape& s = shape();
    if (s.size() != 2) throw ShapeError("at2 requires rank-2 tensor, got " + shape_str(s));
    return impl().values[r * s[1] + c];
}

double Tensor::at2(std::size_t r, std::size_t c) const {
    return const_cast<Tensor*>(this)->at2(r, c);
}

std::vector<double>& Tensor::grad() {
    Impl& im = impl();
    if (im.grad.empty()) im.grad.assign(im.values.size(), 0.0);
    return im.grad;
}

const std::vector<double>& Tensor::grad() const {
    const Impl& im = impl();
    if (im.grad.empty()) throw ValueError("tensor has no gradient");
    return im.grad;
}

void Tensor::zero_grad() {
    Impl& im = impl();
    im.grad.assign(im.values.size(), 0.0);
}

void Tensor::accumulate_grad(const double* g, std::size_t n) {
    std::vector<double>& gr = grad();
    if (n != gr.size()) throw ShapeError("gradient size mismatch");
    for (std::size_t i = 0; i < n; ++i) gr[i] += g[i];
}

Tensor Tensor::clone() const {
    return from_values(shape(), values(), requires_grad());
}

namespace {
thread_local Tape* g_current_tape = nullptr;
}

Tape::Tape() {
    prev_ = g_current_tape;
    g_current_tape = this;
}

Tape::~Tape() {
    g_current_tape = prev_;
}

Tape* Tape::current() {
    return g_current_tape;
}

void Tape::record(Tensor output, std::function<void(const Tensor&)> backward_rule) {
    entries_.push_back(Entry{std::move(output), std::move(backward_rule)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ShapeError("backward requires a scalar loss, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    }
    bool on_tape = false;
    for (const Entry& e : entries_) {
        if (e.output.same_storage(loss)) {
            on_tape = true;
            break;
        }
    }
    if (!on_tape) throw ValueError("loss was not produced on this tape");

    const_cast<Tensor&>(loss).grad()[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        // Entries whose output never received a gradient contribute nothing.
        if (!it->output.has_grad()) continue;
        it->fn(it->output);
    }
}

void backward(const Tensor& loss, Tape& tape) {
    tape.backward(loss);
}

NoGradGuard::NoGradGuard() {
    saved_ = g_current_tape;
    g_current_tape = nullptr;
}

NoGradGuard::~NoGradGuard() {
    g_current_tape = saved_;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps) {
    NoGradGuard no_grad;
    Tensor probe = x.clone();
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        double orig = probe.values()[i];
        probe.values()[i] = orig + eps;
        double fp = f(probe);
        probe.values()[i] = orig - eps;
        double fm = f(probe);
        probe.values()[i] = orig;
        out.values()[i] = (fp - fm) / (2.0 * eps);
    }
    return out;
}

}  // namespace abn
