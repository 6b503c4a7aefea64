#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "ct/ops.hpp"

namespace ct {

enum class LossKind { CE, DICE, CE_PLUS_DICE };
enum class SupervisionMode { CNN_TRANS_CT, CNN_CNN_CT, TRANS_TRANS_CT, CNN_TRANS_CR, LS };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::CE: return "CE";
        case LossKind::DICE: return "DICE";
        default: return "CE_PLUS_DICE";
    }
}

inline const char* mode_name(SupervisionMode m) {
    switch (m) {
        case SupervisionMode::CNN_TRANS_CT: return "CNN_TRANS_CT";
        case SupervisionMode::CNN_CNN_CT: return "CNN_CNN_CT";
        case SupervisionMode::TRANS_TRANS_CT: return "TRANS_TRANS_CT";
        case SupervisionMode::CNN_TRANS_CR: return "CNN_TRANS_CR";
        default: return "LS";
    }
}

// Per-pixel integer class map, shaped [N,H,W] (or [D,H,W] for volumes).
struct Labels {
    Shape shape;
    std::vector<int64_t> v;

    int64_t numel() const { return (int64_t)v.size(); }
};

template <typename T>
Tensor<T> onehot(const Labels& labels, int64_t num_classes) {
    if (labels.shape.size() != 3)
        throw ShapeError("onehot: expected [N,H,W] labels, got " + shape_str(labels.shape));
    const int64_t N = labels.shape[0], H = labels.shape[1], W = labels.shape[2];
    Tensor<T> out = Tensor<T>::zeros({N, num_classes, H, W});
    T* po = out.ptr();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < H * W; ++i) {
            const int64_t k = labels.v[(size_t)(n * H * W + i)];
            if (k < 0 || k >= num_classes)
                throw ShapeError("onehot: label " + std::to_string(k) + " out of range for K=" +
                                 std::to_string(num_classes));
            po[(n * num_classes + k) * H * W + i] = T(1);
        }
    return out;
}

// Soft dice loss over the foreground categories (background excluded unless
// include_background). Intersections and sums pool over batch and space.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& probs, const Tensor<T>& target_onehot, T eps = T(1e-5),
                    bool include_background = false) {
    if (probs.shape() != target_onehot.shape())
        throw ShapeError("dice_loss: probs " + shape_str(probs.shape()) + " vs target " +
                         shape_str(target_onehot.shape()));
    const int64_t K = probs.dim(1);
    Tensor<T> inter = sum(mul(probs, target_onehot), {0, 2, 3});  // [K]
    Tensor<T> psum = sum(probs, {0, 2, 3});
    Tensor<T> gsum = sum(target_onehot, {0, 2, 3});
    Tensor<T> dice = div(add_scalar(mul_scalar(inter, T(2)), eps), add_scalar(add(psum, gsum), eps));
    Tensor<T> per_cat = add_scalar(neg(dice), T(1));  // 1 - dice, [K]

    const int64_t k0 = include_background ? 0 : 1;
    Tensor<T> mask = Tensor<T>::zeros({K});
    for (int64_t k = k0; k < K; ++k) mask.data()[(size_t)k] = T(1);
    return mul_scalar(sum_all(mul(per_cat, mask)), T(1) / T(K - k0));
}

// Mean pixel cross-entropy of row-stochastic probs against integer labels,
// clamped so a zero probability on the true class stays finite.
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& probs, const Labels& labels, T clamp = T(1e-12)) {
    const int64_t K = probs.dim(1);
    Tensor<T> target = onehot<T>(labels, K);  // validates label range
    Tensor<T> p_true = sum(mul(probs, target), {1});  // [N,H,W]
    return neg(mean_all(log(clamp_min(p_true, clamp))));
}

// Eq.-style pseudo labels: per-pixel argmax of detached probabilities, ties to
// the lowest category index. Integer output carries no tape ancestry.
template <typename T>
Labels make_pseudo_label(const Tensor<T>& probs) {
    if (probs.rank() != 4) throw ShapeError("make_pseudo_label: expected [N,K,H,W]");
    Labels out;
    out.shape = {probs.dim(0), probs.dim(2), probs.dim(3)};
    out.v = argmax_axis(probs, 1);
    return out;
}

template <typename T>
Tensor<T> loss_against_labels(const Tensor<T>& probs, const Labels& labels, LossKind kind) {
    switch (kind) {
        case LossKind::CE: return ce_loss(probs, labels);
        case LossKind::DICE: return dice_loss(probs, onehot<T>(labels, probs.dim(1)));
        default:
            return add(ce_loss(probs, labels), dice_loss(probs, onehot<T>(labels, probs.dim(1))));
    }
}

// Bidirectional cross-teaching terms. Each branch is trained against the
// other branch's hard pseudo label; the pseudo labels are gradient-free, so
// term_first only touches the first network and term_second only the second.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cross_teaching_loss(const Tensor<T>& p_first,
                                                    const Tensor<T>& p_second, LossKind kind) {
    if (p_first.shape() != p_second.shape())
        throw ShapeError("cross_teaching_loss: " + shape_str(p_first.shape()) + " vs " +
                         shape_str(p_second.shape()));
    const Labels pl_first = make_pseudo_label(p_second);   // teacher: second branch
    const Labels pl_second = make_pseudo_label(p_first);   // teacher: first branch
    Tensor<T> term_first = loss_against_labels(p_first, pl_first, kind);
    Tensor<T> term_second = loss_against_labels(p_second, pl_second, kind);
    return {term_first, term_second};
}

// Consistency-regularization ablation: plain MSE between the two probability
// maps, gradients flow into both branches.
template <typename T>
Tensor<T> consistency_loss(const Tensor<T>& p_first, const Tensor<T>& p_second) {
    if (p_first.shape() != p_second.shape())
        throw ShapeError("consistency_loss: " + shape_str(p_first.shape()) + " vs " +
                         shape_str(p_second.shape()));
    Tensor<T> d = sub(p_first, p_second);
    return mean_all(mul(d, d));
}

struct ScheduleState {
    int64_t t_i = 0;
    int64_t t_total = 1;
};

// Gaussian warm-up weight: 0.1 * exp(-5 * (1 - t/T)^2).
inline double lambda_weight(const ScheduleState& s) {
    if (s.t_total <= 0) throw ConfigError("lambda_weight: t_total must be positive");
    if (s.t_i < 0 || s.t_i > s.t_total)
        throw ConfigError("lambda_weight: iteration " + std::to_string(s.t_i) +
                          " outside [0, " + std::to_string(s.t_total) + "]");
    const double r = 1.0 - (double)s.t_i / (double)s.t_total;
    return 0.1 * std::exp(-5.0 * r * r);
}

template <typename T>
Tensor<T> supervised_loss(const Tensor<T>& probs, const Labels& labels) {
    return add(ce_loss(probs, labels), dice_loss(probs, onehot<T>(labels, probs.dim(1))));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& sup, const Tensor<T>& ctl, const ScheduleState& s) {
    return add(sup, mul_scalar(ctl, (T)lambda_weight(s)));
}

}  // namespace ct
