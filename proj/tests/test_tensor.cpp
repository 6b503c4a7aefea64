#include <doctest.h>

#include <cmath>

#include "ct/losses.hpp"
#include "ct/nn_ops.hpp"
#include "ct/ops.hpp"
#include "ct/params.hpp"
#include "ct/tape.hpp"

using namespace ct;

namespace {

template <typename T>
Tensor<T> leaf(Shape shape, std::vector<T> v) {
    return Tensor<T>::from(std::move(shape), std::move(v), /*requires_grad=*/true);
}

}  // namespace

TEST_CASE("conv2d identity kernel reproduces the image") {
    std::vector<double> img(2 * 1 * 4 * 4);
    Rng rng(7);
    for (auto& v : img) v = rng.uniform(-1, 1);
    auto x = Tensor<double>::from({2, 1, 4, 4}, img);
    auto k = Tensor<double>::zeros({1, 1, 3, 3});
    k.data()[4] = 1.0;  // center tap
    auto y = conv2d(x, k, {}, 1, 1);
    REQUIRE(y.shape() == Shape{2, 1, 4, 4});
    for (size_t i = 0; i < img.size(); ++i) CHECK(y.data()[i] == doctest::Approx(img[i]).epsilon(1e-12));
}

TEST_CASE("conv2d 2x2 ones kernel sums the window") {
    auto x = Tensor<double>::from({1, 1, 2, 2}, {1, 2, 3, 4});
    auto k = Tensor<double>::full({1, 1, 2, 2}, 1.0);
    auto y = conv2d(x, k);
    REQUIRE(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == doctest::Approx(10.0));
}

TEST_CASE("conv2d output spatial dims follow the stride/padding formula") {
    auto x = Tensor<float>::zeros({1, 3, 9, 11});
    auto k = Tensor<float>::zeros({5, 3, 3, 3});
    auto y = conv2d(x, k, {}, 2, 1);
    CHECK(y.shape() == Shape{1, 5, (9 + 2 - 3) / 2 + 1, (11 + 2 - 3) / 2 + 1});
    CHECK_THROWS_AS(conv2d(x, Tensor<float>::zeros({5, 4, 3, 3})), ShapeError);
}

TEST_CASE("relu and matmul basics") {
    auto x = Tensor<double>::from({2}, {-3.0, 2.0});
    auto y = relu(x);
    CHECK(y.data()[0] == 0.0);
    CHECK(y.data()[1] == 2.0);

    auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
    auto a = Tensor<double>::from({2, 2}, {3, -1, 2, 5});
    CHECK(same_values(matmul(eye, a), a));
}

TEST_CASE("max_pool2x2 then nearest_upsample2x fixes constants") {
    auto x = Tensor<float>::full({1, 2, 4, 4}, 0.75f);
    auto y = nearest_upsample2x(max_pool2x2(x));
    CHECK(same_values(y, x));
    CHECK_THROWS_AS(max_pool2x2(Tensor<float>::zeros({1, 1, 3, 4})), ShapeError);
}

TEST_CASE("softmax closed forms and stability") {
    auto y = softmax(Tensor<double>::from({2}, {0.0, 0.0}), 0);
    CHECK(y.data()[0] == doctest::Approx(0.5));

    auto z = softmax(Tensor<double>::from({2}, {1.0, 0.0}), 0);
    CHECK(z.data()[0] == doctest::Approx(0.73106).epsilon(1e-4));
    CHECK(z.data()[1] == doctest::Approx(0.26894).epsilon(1e-4));

    auto big = softmax(Tensor<double>::from({2}, {1000.0, 0.0}), 0);
    CHECK(all_finite(big));
    CHECK(big.data()[0] == doctest::Approx(1.0));
    CHECK(big.data()[1] == doctest::Approx(0.0));
}

TEST_CASE("softmax rows sum to 1 for large-magnitude logits") {
    Rng rng(11);
    for (int seed = 0; seed < 5; ++seed) {
        std::vector<double> v(3 * 4 * 5);
        for (auto& x : v) x = rng.uniform(-1e3, 1e3);
        auto p = softmax(Tensor<double>::from({3, 4, 5}, v), 1);
        for (int64_t o = 0; o < 3; ++o)
            for (int64_t i = 0; i < 5; ++i) {
                double s = 0;
                for (int64_t k = 0; k < 4; ++k) s += p.data()[(size_t)(o * 20 + k * 5 + i)];
                CHECK(std::abs(s - 1.0) < 1e-6);
            }
    }
}

TEST_CASE("batch_norm2d constant channel yields beta in training mode") {
    auto x = Tensor<float>::full({2, 3, 4, 4}, 5.0f);
    auto gamma = Tensor<float>::full({3}, 1.0f);
    auto beta = Tensor<float>::from({3}, {0.1f, -0.2f, 0.3f});
    auto rm = Tensor<float>::zeros({3});
    auto rv = Tensor<float>::full({3}, 1.0f);
    auto y = batch_norm2d(x, gamma, beta, rm, rv, /*training=*/true);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < 16; ++i)
            CHECK(y.data()[(size_t)(c * 16 + i)] == doctest::Approx(beta.data()[(size_t)c]));
}

TEST_CASE("batch_norm2d is near-identity on standardized input") {
    Rng rng(3);
    const int64_t N = 4, C = 2, H = 8, W = 8;
    std::vector<float> v(N * C * H * W);
    for (auto& x : v) x = (float)rng.normal();
    // standardize per channel
    for (int64_t c = 0; c < C; ++c) {
        double m = 0, m2 = 0;
        int64_t cnt = 0;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < H * W; ++i) {
                m += v[(size_t)((n * C + c) * H * W + i)];
                ++cnt;
            }
        m /= (double)cnt;
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < H * W; ++i) {
                auto& x = v[(size_t)((n * C + c) * H * W + i)];
                x = (float)(x - m);
                m2 += (double)x * x;
            }
        const double sd = std::sqrt(m2 / (double)cnt);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t i = 0; i < H * W; ++i) v[(size_t)((n * C + c) * H * W + i)] /= (float)sd;
    }
    auto x = Tensor<float>::from({N, C, H, W}, v);
    auto gamma = Tensor<float>::full({C}, 1.0f);
    auto beta = Tensor<float>::zeros({C});
    auto rm = Tensor<float>::zeros({C});
    auto rv = Tensor<float>::full({C}, 1.0f);
    auto y = batch_norm2d(x, gamma, beta, rm, rv, true);
    for (size_t i = 0; i < v.size(); ++i) CHECK(std::abs(y.data()[i] - v[i]) < 1e-4f);
}

TEST_CASE("layer_norm constant token yields beta; otherwise mean 0 var 1") {
    auto x = Tensor<double>::full({2, 3, 5}, 4.0);
    auto gamma = Tensor<double>::full({5}, 1.0);
    auto beta = Tensor<double>::full({5}, 0.25);
    auto y = layer_norm(x, gamma, beta);
    for (double v : y.data()) CHECK(v == doctest::Approx(0.25));

    Rng rng(5);
    std::vector<double> v(2 * 3 * 8);
    for (auto& w : v) w = rng.uniform(-2, 2);
    auto z = layer_norm(Tensor<double>::from({2, 3, 8}, v), Tensor<double>::full({8}, 1.0),
                        Tensor<double>::zeros({8}));
    for (int64_t t = 0; t < 6; ++t) {
        double m = 0, m2 = 0;
        for (int64_t d = 0; d < 8; ++d) m += z.data()[(size_t)(t * 8 + d)];
        m /= 8;
        for (int64_t d = 0; d < 8; ++d) {
            const double c = z.data()[(size_t)(t * 8 + d)] - m;
            m2 += c * c;
        }
        CHECK(std::abs(m) < 1e-4);
        CHECK(std::abs(m2 / 8 - 1.0) < 1e-3);
    }
}

TEST_CASE("detach: value identity, broken gradient flow, product rule check") {
    auto x = leaf<double>({3}, {1.0, 2.0, 3.0});
    auto d = detach(x);
    CHECK(same_values(d, x));
    CHECK_FALSE(d.requires_grad());

    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        // loss = sum(x * detach(x)); dloss/dx must be detach(x).data, not 2x.
        auto loss = sum_all(mul(x, detach(x)));
        tape.backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(2.0));
    CHECK(x.grad()[2] == doctest::Approx(3.0));

    // an expression entirely of detached values contributes nothing
    x.zero_grad();
    GradTape<double> tape2;
    {
        TapeScope<double> scope(tape2);
        auto loss = add(sum_all(mul(detach(x), detach(x))), sum_all(x));
        tape2.backward(loss);
    }
    CHECK(x.grad()[0] == doctest::Approx(1.0));
    CHECK(x.grad()[1] == doctest::Approx(1.0));
}

TEST_CASE("backward: linear gradient, accumulation, scalar-only contract") {
    auto w = leaf<double>({3}, {0.5, -1.0, 2.0});
    auto x = Tensor<double>::from({3}, {3.0, 4.0, 5.0});
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = sum_all(mul(w, x));
        tape.backward(loss);
        for (int i = 0; i < 3; ++i) CHECK(w.grad()[(size_t)i] == doctest::Approx(x.data()[(size_t)i]));
        tape.backward(loss);  // accumulates
        for (int i = 0; i < 3; ++i)
            CHECK(w.grad()[(size_t)i] == doctest::Approx(2 * x.data()[(size_t)i]));
        CHECK_THROWS_AS(tape.backward(mul(w, x)), ShapeError);
    }
}

TEST_CASE("requires_grad=false tensors never accumulate gradient") {
    auto a = Tensor<double>::from({2}, {1.0, 2.0});  // requires_grad = false
    auto w = leaf<double>({2}, {3.0, 4.0});
    GradTape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = sum_all(mul(a, w));
        tape.backward(loss);
    }
    CHECK(a.grad_view().empty());
    CHECK(w.grad()[0] == doctest::Approx(1.0));
}

TEST_CASE("window_attention: shape, row-stochastic rows, uniform-attention mean") {
    const int64_t B = 2, win = 2, D = 4, heads = 2, N = 8;  // two windows of 4 tokens
    Rng rng(17);
    std::vector<double> tok((size_t)(B * N * D));
    for (auto& v : tok) v = rng.uniform(-1, 1);
    auto tokens = Tensor<double>::from({B, N, D}, tok);

    // zero Q,K rows -> uniform attention; V slice and proj are identity
    auto wqkv = Tensor<double>::zeros({D, 3 * D});
    for (int64_t i = 0; i < D; ++i) wqkv.data()[(size_t)(i * 3 * D + 2 * D + i)] = 1.0;  // V = I
    auto bqkv = Tensor<double>::zeros({3 * D});
    auto wproj = Tensor<double>::zeros({D, D});
    for (int64_t i = 0; i < D; ++i) wproj.data()[(size_t)(i * D + i)] = 1.0;
    auto bproj = Tensor<double>::zeros({D});

    Tensor<double> attn;
    auto out = window_attention(tokens, wqkv, bqkv, wproj, bproj, heads, win, &attn);
    REQUIRE(out.shape() == tokens.shape());

    // attention rows sum to 1
    const int64_t rows = attn.numel() / attn.dim(3);
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0;
        for (int64_t c = 0; c < attn.dim(3); ++c) s += attn.data()[(size_t)(r * attn.dim(3) + c)];
        CHECK(std::abs(s - 1.0) < 1e-6);
    }

    // each token's output equals the mean of its window's tokens
    for (int64_t b = 0; b < B; ++b)
        for (int64_t w = 0; w < 2; ++w) {
            std::vector<double> m(D, 0.0);
            for (int64_t t = 0; t < 4; ++t)
                for (int64_t d = 0; d < D; ++d)
                    m[(size_t)d] += tok[(size_t)((b * N + w * 4 + t) * D + d)] / 4.0;
            for (int64_t t = 0; t < 4; ++t)
                for (int64_t d = 0; d < D; ++d)
                    CHECK(out.data()[(size_t)((b * N + w * 4 + t) * D + d)] ==
                          doctest::Approx(m[(size_t)d]).epsilon(1e-9));
        }

    CHECK_THROWS_AS(window_attention(tokens, wqkv, bqkv, wproj, bproj, 3, win), ShapeError);
    CHECK_THROWS_AS(window_attention(tokens, wqkv, bqkv, wproj, bproj, heads, 3), ShapeError);
}

TEST_CASE("forward primitives keep finite data on finite inputs") {
    Rng rng(23);
    std::vector<float> v(2 * 4 * 6 * 6);
    for (auto& x : v) x = (float)rng.uniform(-50, 50);
    auto t = Tensor<float>::from({2, 4, 6, 6}, v);
    CHECK(all_finite(softmax(t, 1)));
    CHECK(all_finite(gelu(t)));
    CHECK(all_finite(relu(t)));
    CHECK(all_finite(max_pool2x2(t)));
    auto gamma = Tensor<float>::full({4}, 1.0f);
    auto beta = Tensor<float>::zeros({4});
    auto rm = Tensor<float>::zeros({4});
    auto rv = Tensor<float>::full({4}, 1.0f);
    CHECK(all_finite(batch_norm2d(t, gamma, beta, rm, rv, true)));
}

TEST_CASE("determinism: identical seeds give bit-identical initializers") {
    Rng a(99), b(99);
    auto t1 = kaiming_uniform<float>({8, 4, 3, 3}, 36, a);
    auto t2 = kaiming_uniform<float>({8, 4, 3, 3}, 36, b);
    CHECK(t1.data() == t2.data());
    auto n1 = trunc_normal<float>({16, 16}, 0.02, a);
    auto n2 = trunc_normal<float>({16, 16}, 0.02, b);
    CHECK(n1.data() == n2.data());
}

TEST_CASE("argmax ties break to the lowest index") {
    auto p = Tensor<float>::from({1, 4, 1, 1}, {0.5f, 0.5f, 0.0f, 0.0f});
    auto lab = make_pseudo_label(p);
    CHECK(lab.v[0] == 0);
    auto q = Tensor<float>::from({1, 4, 1, 1}, {0.2f, 0.7f, 0.1f, 0.0f});
    CHECK(make_pseudo_label(q).v[0] == 1);
}
