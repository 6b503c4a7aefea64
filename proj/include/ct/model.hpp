#pragma once

#include <memory>
#include <string>
#include <vector>

#include "ct/nn_ops.hpp"
#include "ct/params.hpp"

namespace ct {

// A backbone instance: paradigm tag, parameter set, and forward-pass counters
// (the per-iteration forward accounting feeds the compute-cost report).
template <typename T>
class ModelHandle {
public:
    virtual ~ModelHandle() = default;

    // Returns logits [N, K, H, W] at input resolution.
    virtual Tensor<T> forward(const Tensor<T>& batch, bool training, bool update_stats = true) = 0;

    // Human-readable layer roles, in order; used to audit paradigm separation.
    virtual std::vector<std::string> layer_list() const = 0;

    // key = value lines echoing the construction config.
    virtual std::string config_echo() const = 0;

    Paradigm paradigm() const { return params_.paradigm(); }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    int64_t forward_count() const { return forward_count_; }
    int64_t images_forwarded() const { return images_forwarded_; }
    void reset_counters() { forward_count_ = 0; images_forwarded_ = 0; }

protected:
    void count_forward(int64_t images) {
        ++forward_count_;
        images_forwarded_ += images;
    }

    ParamSet<T> params_;
    int64_t forward_count_ = 0;
    int64_t images_forwarded_ = 0;
};

// Softmax probabilities over the class axis, never recorded on a tape.
template <typename T>
Tensor<T> predict_probs(ModelHandle<T>& model, const Tensor<T>& batch) {
    NoTapeScope<T> guard;
    return softmax(model.forward(batch, /*training=*/false), 1);
}

}  // namespace ct
