#pragma once

#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ct/error.hpp"

namespace ct {

using Shape = std::vector<int64_t>;

inline int64_t numel_of(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

// Row-major strides.
inline std::vector<int64_t> strides_of(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int i = (int)s.size() - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
    return st;
}

template <typename T>
struct TensorImpl {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // allocated lazily; empty means "all zero, untouched"
    bool requires_grad = false;

    int64_t numel() const { return numel_of(shape); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), T(0));
    }
};

// Shared-handle n-d array. Copies alias the same storage; ops never mutate
// their inputs, so aliasing is only observable through in-place parameter
// updates done by the optimizer.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data.assign((size_t)t.impl_->numel(), T(0));
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor full(Shape shape, T value) {
        Tensor t = zeros(std::move(shape));
        std::fill(t.data().begin(), t.data().end(), value);
        return t;
    }

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (numel_of(shape) != (int64_t)values.size())
            throw ShapeError("from(): " + shape_str(shape) + " incompatible with buffer of " +
                             std::to_string(values.size()) + " elements");
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = std::move(shape);
        t.impl_->data = std::move(values);
        t.impl_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(T value) { return from({1}, {value}); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int64_t dim(int i) const { return impl_->shape[(size_t)i]; }
    int rank() const { return (int)impl_->shape.size(); }
    int64_t numel() const { return impl_->numel(); }

    std::vector<T>& data() { return impl_->data; }
    const std::vector<T>& data() const { return impl_->data; }
    T* ptr() { return impl_->data.data(); }
    const T* ptr() const { return impl_->data.data(); }

    bool requires_grad() const { return impl_ && impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

    std::vector<T>& grad() {
        impl_->ensure_grad();
        return impl_->grad;
    }
    const std::vector<T>& grad_view() const { return impl_->grad; }
    void zero_grad() {
        if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
    }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
        return impl_->data[0];
    }

    // Value copy with no gradient participation and no tape ancestry.
    Tensor detach() const {
        Tensor t;
        t.impl_ = std::make_shared<TensorImpl<T>>();
        t.impl_->shape = impl_->shape;
        t.impl_->data = impl_->data;
        t.impl_->requires_grad = false;
        return t;
    }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(impl_->data.size());
        for (size_t i = 0; i < out.size(); ++i) out[i] = (U)impl_->data[i];
        return Tensor<U>::from(impl_->shape, std::move(out));
    }

    const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

private:
    std::shared_ptr<TensorImpl<T>> impl_;
};

template <typename T>
bool same_values(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() && a.data() == b.data();
}

}  // namespace ct
