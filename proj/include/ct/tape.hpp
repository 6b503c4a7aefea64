#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <vector>

#include "ct/tensor.hpp"

namespace ct {

// Reverse-mode tape. Ops append nodes in execution order, which is already a
// topological order (an op's operands exist before the op runs). backward()
// zeroes every node output's gradient, seeds the loss with 1 and sweeps the
// nodes once in reverse. Leaf gradients (parameters, inputs created outside
// the tape) are only ever accumulated into, so repeated backward calls add up
// until the caller zeroes them.
template <typename T>
class GradTape {
public:
    struct Node {
        std::shared_ptr<TensorImpl<T>> out;
        std::function<void()> backward;
    };

    void record(std::shared_ptr<TensorImpl<T>> out, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(out), std::move(backward)});
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(const Tensor<T>& loss) {
        if (loss.numel() != 1)
            throw ShapeError("backward() requires a scalar loss, got " + shape_str(loss.shape()));
        for (auto& n : nodes_) {
            n.out->ensure_grad();
            std::fill(n.out->grad.begin(), n.out->grad.end(), T(0));
        }
        loss.impl()->ensure_grad();
        loss.impl()->grad[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->backward();
    }

    // Active tape for the current thread; null means ops run untaped.
    static GradTape*& active() {
        thread_local GradTape* current = nullptr;
        return current;
    }

private:
    std::vector<Node> nodes_;
};

template <typename T>
class TapeScope {
public:
    explicit TapeScope(GradTape<T>& tape) : prev_(GradTape<T>::active()) {
        GradTape<T>::active() = &tape;
    }
    ~TapeScope() { GradTape<T>::active() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    GradTape<T>* prev_;
};

// Temporarily disables recording (evaluation inside a training scope).
template <typename T>
class NoTapeScope {
public:
    NoTapeScope() : prev_(GradTape<T>::active()) { GradTape<T>::active() = nullptr; }
    ~NoTapeScope() { GradTape<T>::active() = prev_; }
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    GradTape<T>* prev_;
};

// True when the op about to be recorded should participate in the tape.
template <typename T>
inline bool taping(std::initializer_list<const Tensor<T>*> inputs) {
    if (GradTape<T>::active() == nullptr) return false;
    for (const Tensor<T>* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

}  // namespace ct
