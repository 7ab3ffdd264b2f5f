#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace abn {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& s);
std::string shape_str(const Shape& s);

class ShapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValueError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor of doubles with an optional gradient buffer.
// Copies share the underlying storage (handle semantics); clone() makes a
// deep copy.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl().shape; }
    std::size_t rank() const { return impl().shape.size(); }
    std::size_t dim(std::size_t i) const { return impl().shape.at(i); }
    std::size_t size() const { return impl().values.size(); }

    std::vector<double>& values() { return impl().values; }
    const std::vector<double>& values() const { return impl().values; }
    double* data() { return impl().values.data(); }
    const double* data() const { return impl().values.data(); }

    // Scalar (rank-0 or single-element) read.
    double item() const;

    // NCHW convenience accessors.
    double& at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w);
    double at4(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const;
    double& at2(std::size_t r, std::size_t c);
    double at2(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return impl().requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        impl().requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return defined() && !impl_->grad.empty(); }
    // Gradient buffer, allocated zero-filled on first use.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad();
    void drop_grad() { impl().grad.clear(); }
    void accumulate_grad(const double* g, std::size_t n);

    // Deep copy of values (fresh storage, no grad).
    Tensor clone() const;

    bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
    const void* storage_id() const { return impl_.get(); }

private:
    struct Impl {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty or same length as values
        bool requires_grad = false;
    };

    Impl& impl() {
        if (!impl_) throw ValueError("use of undefined tensor");
        return *impl_;
    }
    const Impl& impl() const {
        if (!impl_) throw ValueError("use of undefined tensor");
        return *impl_;
    }

    std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Operations record themselves on the innermost active
// Tape (if any); backward() replays the records in reverse. Construction
// makes the tape current for this thread, destruction restores the previous
// one.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current();

    // backward_rule reads output.grad() and accumulates into the inputs it
    // captured. Records must be pushed in execution order.
    void record(Tensor output, std::function<void(const Tensor& output)> backward_rule);

    std::size_t size() const { return entries_.size(); }

    // Seeds d(loss)/d(loss)=1 and replays the tape in reverse. loss must be a
    // scalar produced on this tape.
    void backward(const Tensor& loss);

private:
    struct Entry {
        Tensor output;
        std::function<void(const Tensor&)> fn;
    };
    std::vector<Entry> entries_;
    Tape* prev_ = nullptr;
};

void backward(const Tensor& loss, Tape& tape);

// Forward-only region: suspends recording on the current tape (used by
// evaluation and the finite-difference oracle).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    Tape* saved_;
};

// Central-difference gradient estimate of a scalar-valued function at x:
// (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps) per element. Runs f with recording
// suspended, so it is independent of the tape machinery it is used to check.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace abn
