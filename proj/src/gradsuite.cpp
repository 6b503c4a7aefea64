#include "gradsuite.hpp"

#include <functional>
#include <sstream>

#include "ct/losses.hpp"
#include "ct/nn_ops.hpp"
#include "ct/swin.hpp"
#include "ct/unet.hpp"

namespace ct {

namespace {

Tensor<double> rnd(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t = Tensor<double>::zeros(std::move(shape));
    for (auto& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

Tensor<double> rnd_nokink(Shape shape, Rng& rng, double kink = 0.0) {
    Tensor<double> t = rnd(std::move(shape), rng);
    for (auto& v : t.data())
        if (std::abs(v - kink) < 0.05) v = kink + (v >= kink ? 0.05 : -0.05);
    return t;
}

// run-set in T, oracle-set in double, mirrored to the T-rounded values
template <typename T>
struct Mirror {
    ParamSet<T> run;
    ParamSet<double> oracle;
    void add(const std::string& name, const Tensor<double>& v) {
        Tensor<T> vt = v.cast<T>();
        run.add_param(name, vt);
        oracle.add_param(name, vt.template cast<double>());
    }
    Tensor<T>& p(size_t i) { return run.params()[i].second; }
    Tensor<double>& o(size_t i) { return oracle.params()[i].second; }
};

template <typename T>
GradCheckReport check_with(Mirror<T>& m, const std::function<Tensor<T>()>& ft,
                           const std::function<double()>& f64, double eps,
                           int64_t max_coords = 0) {
    Rng coords(20260808);
    return grad_check<T>(m.run, ft, m.oracle, f64, eps, 1e-2, max_coords, coords);
}

template <typename T>
GradCheckReport run_elementwise() {
    Rng rng(101);
    Mirror<T> m;
    m.add("a", rnd({2, 3, 4}, rng));
    m.add("b", rnd({2, 3, 4}, rng));
    m.add("c", rnd({1, 3, 1}, rng));
    Tensor<double> d64 = rnd({2, 3, 4}, rng, 0.5, 1.5);
    m.add("d", d64);
    const auto proj64 = rnd({2, 3, 4}, rng);
    const auto projT = proj64.cast<T>();
    const auto proj2_64 = rnd({3}, rng);
    const auto proj2T = proj2_64.cast<T>();

    auto fwd = [](auto& a, auto& b, auto& c, auto& d, const auto& pj, const auto& pj2) {
        auto u = add(mul(a, b), div(sub(a, c), d));
        auto r = mean(u, {0, 2});
        auto t = transpose(reshape(sum_all(mul(u, pj)), {1}), {0});
        return add(sum_all(mul(r, pj2)), sum_all(t));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), m.p(2), m.p(3), projT, proj2T); };
    auto f64 = [&]() { return fwd(m.o(0), m.o(1), m.o(2), m.o(3), proj64, proj2_64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_unary() {
    Rng rng(202);
    Mirror<T> m;
    m.add("x", rnd_nokink({3, 5}, rng));
    m.add("p", rnd({3, 5}, rng, 0.2, 1.2));
    m.add("y", rnd_nokink({3, 5}, rng, 0.3));
    const auto proj64 = rnd({3, 5}, rng);
    const auto projT = proj64.cast<T>();
    auto fwd = [](auto& x, auto& p, auto& y, const auto& pj) {
        auto u = add(add(relu(x), gelu(x)), add(exp(x), neg(x)));
        u = add(u, add(log(p), sqrt(p)));
        u = add(u, clamp_min(y, decltype(y.item())(0.3)));
        return sum_all(mul(u, pj));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), m.p(2), projT); };
    auto f64 = [&]() { return fwd(m.o(0), m.o(1), m.o(2), proj64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_matmul_linear() {
    Rng rng(303);
    Mirror<T> m;
    m.add("a", rnd({3, 4}, rng));
    m.add("b", rnd({4, 5}, rng));
    m.add("ab", rnd({2, 2, 3, 4}, rng));
    m.add("bb", rnd({2, 2, 4, 5}, rng));
    m.add("w", rnd({5, 4}, rng));
    m.add("bias", rnd({4}, rng));
    const auto pm64 = rnd({3, 5}, rng), pb64 = rnd({2, 2, 3, 5}, rng), pl64 = rnd({3, 4}, rng);
    const auto pmT = pm64.cast<T>(), pbT = pb64.cast<T>(), plT = pl64.cast<T>();
    auto fwd = [](auto& a, auto& b, auto& ab, auto& bb, auto& w, auto& bias, const auto& pm,
                  const auto& pb, const auto& pl) {
        auto mm = sum_all(mul(matmul(a, b), pm));
        auto bmm = sum_all(mul(matmul(ab, bb), pb));
        auto li = sum_all(mul(linear(matmul(a, b), w, bias), pl));
        return add(mm, add(bmm, li));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), m.p(2), m.p(3), m.p(4), m.p(5), pmT, pbT, plT); };
    auto f64 = [&]() {
        return fwd(m.o(0), m.o(1), m.o(2), m.o(3), m.o(4), m.o(5), pm64, pb64, pl64).item();
    };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_softmax() {
    Rng rng(404);
    Mirror<T> m;
    m.add("x", rnd({2, 4, 3}, rng));
    const auto proj64 = rnd({2, 4, 3}, rng);
    const auto projT = proj64.cast<T>();
    auto fwd = [](auto& x, const auto& pj) { return sum_all(mul(softmax(x, 1), pj)); };
    auto ft = [&]() { return fwd(m.p(0), projT); };
    auto f64 = [&]() { return fwd(m.o(0), proj64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_shape_ops() {
    Rng rng(505);
    Mirror<T> m;
    m.add("a", rnd({3, 4}, rng));
    m.add("y", rnd({1, 8, 3, 3}, rng));
    const auto pd64 = rnd({1, 2, 6, 6}, rng);
    const auto pdT = pd64.cast<T>();
    const auto pu64 = rnd({1, 8, 6, 6}, rng);
    const auto puT = pu64.cast<T>();
    auto fwd = [](auto& a, auto& y, const auto& pd, const auto& pu) {
        auto cc = concat<std::decay_t<decltype(a.item())>>({narrow(a, 1, 0, 2), narrow(a, 1, 2, 2)}, 1);
        auto d2s = sum_all(mul(depth_to_space(y, 2), pd));
        auto up = sum_all(mul(nearest_upsample2x(y), pu));
        return add(sum_all(mul(cc, a)), add(d2s, up));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), pdT, puT); };
    auto f64 = [&]() { return fwd(m.o(0), m.o(1), pd64, pu64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_conv() {
    Rng rng(606);
    Mirror<T> m;
    m.add("x", rnd({2, 2, 6, 6}, rng));
    m.add("k", rnd({3, 2, 3, 3}, rng));
    m.add("bias", rnd({3}, rng));
    m.add("k2", rnd({2, 3, 2, 2}, rng));
    const auto p164 = rnd({2, 3, 6, 6}, rng), p264 = rnd({2, 2, 3, 3}, rng);
    const auto p1T = p164.cast<T>(), p2T = p264.cast<T>();
    auto fwd = [](auto& x, auto& k, auto& bias, auto& k2, const auto& p1, const auto& p2) {
        auto y = conv2d(x, k, bias, 1, 1);
        auto z = conv2d(y, k2, {}, 2, 0);
        return add(sum_all(mul(y, p1)), sum_all(mul(z, p2)));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), m.p(2), m.p(3), p1T, p2T); };
    auto f64 = [&]() { return fwd(m.o(0), m.o(1), m.o(2), m.o(3), p164, p264).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_max_pool() {
    Rng rng(707);
    Tensor<double> x64 = Tensor<double>::zeros({2, 2, 4, 4});
    {
        std::vector<double> vals(x64.data().size());
        for (size_t i = 0; i < vals.size(); ++i) vals[i] = -1.0 + 0.013 * (double)i;
        for (size_t i = vals.size() - 1; i > 0; --i) std::swap(vals[i], vals[(size_t)rng.index((int64_t)i + 1)]);
        x64.data() = vals;
    }
    Mirror<T> m;
    m.add("x", x64);
    const auto proj64 = rnd({2, 2, 2, 2}, rng);
    const auto projT = proj64.cast<T>();
    auto fwd = [](auto& x, const auto& pj) { return sum_all(mul(max_pool2x2(x), pj)); };
    auto ft = [&]() { return fwd(m.p(0), projT); };
    auto f64 = [&]() { return fwd(m.o(0), proj64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_batch_norm() {
    Rng rng(808);
    Mirror<T> m;
    m.add("x", rnd({3, 2, 4, 4}, rng));
    m.add("g", rnd({2}, rng, 0.5, 1.5));
    m.add("b", rnd({2}, rng));
    const auto proj64 = rnd({3, 2, 4, 4}, rng);
    const auto projT = proj64.cast<T>();
    auto rmT = Tensor<T>::zeros({2});
    auto rvT = Tensor<T>::full({2}, T(1));
    auto rm64 = Tensor<double>::zeros({2});
    auto rv64 = Tensor<double>::full({2}, 1.0);
    auto ft = [&]() {
        return sum_all(mul(batch_norm2d(m.p(0), m.p(1), m.p(2), rmT, rvT, true, false), projT));
    };
    auto f64 = [&]() {
        return sum_all(mul(batch_norm2d(m.o(0), m.o(1), m.o(2), rm64, rv64, true, false), proj64))
            .item();
    };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_layer_norm() {
    Rng rng(909);
    Mirror<T> m;
    m.add("x", rnd({2, 6, 5}, rng));
    m.add("g", rnd({5}, rng, 0.5, 1.5));
    m.add("b", rnd({5}, rng));
    const auto proj64 = rnd({2, 6, 5}, rng);
    const auto projT = proj64.cast<T>();
    auto fwd = [](auto& x, auto& g, auto& b, const auto& pj) {
        return sum_all(mul(layer_norm(x, g, b), pj));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), m.p(2), projT); };
    auto f64 = [&]() { return fwd(m.o(0), m.o(1), m.o(2), proj64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_attention() {
    Rng rng(111);
    Mirror<T> m;
    m.add("tokens", rnd({2, 8, 4}, rng));
    m.add("wqkv", rnd({4, 12}, rng));
    m.add("bqkv", rnd({12}, rng));
    m.add("wproj", rnd({4, 4}, rng));
    m.add("bproj", rnd({4}, rng));
    const auto proj64 = rnd({2, 8, 4}, rng);
    const auto projT = proj64.cast<T>();
    auto fwd = [](auto& t, auto& wq, auto& bq, auto& wp, auto& bp, const auto& pj) {
        return sum_all(mul(window_attention(t, wq, bq, wp, bp, 2, 2), pj));
    };
    auto ft = [&]() { return fwd(m.p(0), m.p(1), m.p(2), m.p(3), m.p(4), projT); };
    auto f64 = [&]() { return fwd(m.o(0), m.o(1), m.o(2), m.o(3), m.o(4), proj64).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_detach_semantics() {
    Rng rng(121);
    Mirror<T> m;
    m.add("w", rnd({4}, rng));
    auto frozenT = m.p(0).detach();
    auto frozen64 = m.o(0).detach();
    auto ft = [&]() { return sum_all(mul(m.p(0), frozenT)); };
    auto f64 = [&]() { return sum_all(mul(m.o(0), frozen64)).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

template <typename T>
GradCheckReport run_unet_check() {
    MiniUNetConfig cfg;
    cfg.base_channels = 4;
    cfg.depth = 2;
    cfg.num_classes = 3;
    MiniUNet<T> netT(cfg, 21);
    MiniUNet<double> net64(cfg, 21);
    for (size_t i = 0; i < netT.params().params().size(); ++i)
        for (size_t j = 0; j < netT.params().params()[i].second.data().size(); ++j)
            net64.params().params()[i].second.data()[j] =
                (double)netT.params().params()[i].second.data()[j];

    Rng rng(33);
    auto x64 = rnd({1, 1, 16, 16}, rng, 0.0, 1.0);
    auto xT = x64.cast<T>();
    Labels target;
    target.shape = {1, 16, 16};
    for (int i = 0; i < 256; ++i) target.v.push_back(rng.index(3));

    auto ft = [&]() {
        auto probs = softmax(netT.forward(xT, true, false), 1);
        return dice_loss(probs, onehot<T>(target, 3));
    };
    auto f64 = [&]() {
        auto probs = softmax(net64.forward(x64, true, false), 1);
        return dice_loss(probs, onehot<double>(target, 3)).item();
    };
    Rng coords(20260808);
    return grad_check<T>(netT.params(), ft, net64.params(), f64, 1e-5, 1e-2, 6, coords);
}

template <typename T>
GradCheckReport run_swin_check() {
    MiniSwinConfig cfg;
    cfg.patch_size = 2;
    cfg.embed_dim = 8;
    cfg.depths = {2, 2};
    cfg.num_heads = {2, 2};
    cfg.window = 2;
    cfg.num_classes = 3;
    MiniSwinUNet<T> netT(cfg, 23);
    MiniSwinUNet<double> net64(cfg, 23);
    for (size_t i = 0; i < netT.params().params().size(); ++i)
        for (size_t j = 0; j < netT.params().params()[i].second.data().size(); ++j)
            net64.params().params()[i].second.data()[j] =
                (double)netT.params().params()[i].second.data()[j];

    Rng rng(44);
    auto x64 = rnd({1, 1, 16, 16}, rng, 0.0, 1.0);
    auto xT = x64.cast<T>();
    Labels target;
    target.shape = {1, 16, 16};
    for (int i = 0; i < 256; ++i) target.v.push_back(rng.index(3));

    auto ft = [&]() {
        auto probs = softmax(netT.forward(xT, true, false), 1);
        return dice_loss(probs, onehot<T>(target, 3));
    };
    auto f64 = [&]() {
        auto probs = softmax(net64.forward(x64, true, false), 1);
        return dice_loss(probs, onehot<double>(target, 3)).item();
    };
    Rng coords(20260808);
    return grad_check<T>(netT.params(), ft, net64.params(), f64, 1e-5, 1e-2, 4, coords);
}

// Fixture with a deliberately wrong backward rule: forward 2x, backward 3x.
template <typename T>
Tensor<T> corrupted_scale(const Tensor<T>& a) {
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    for (int64_t i = 0; i < a.numel(); ++i) out.data()[(size_t)i] = T(2) * a.data()[(size_t)i];
    if (taping<T>({&a})) {
        out.set_requires_grad(true);
        auto ai = a.impl(), oi = out.impl();
        GradTape<T>::active()->record(oi, [ai, oi]() {
            if (!ai->requires_grad) return;
            ai->ensure_grad();
            for (size_t i = 0; i < oi->grad.size(); ++i) ai->grad[i] += T(3) * oi->grad[i];
        });
    }
    return out;
}

template <typename T>
GradCheckReport run_corrupted() {
    Rng rng(131);
    Mirror<T> m;
    m.add("w", rnd({4}, rng));
    auto ft = [&]() { return sum_all(corrupted_scale(m.p(0))); };
    auto f64 = [&]() { return sum_all(corrupted_scale(m.o(0))).item(); };
    return check_with<T>(m, ft, f64, 1e-4);
}

struct CheckDef {
    const char* name;
    GradCheckReport (*run32)();
    GradCheckReport (*run64)();
};

const CheckDef kChecks[] = {
    {"elementwise_and_reductions", run_elementwise<float>, run_elementwise<double>},
    {"unary_nonlinearities", run_unary<float>, run_unary<double>},
    {"matmul_linear", run_matmul_linear<float>, run_matmul_linear<double>},
    {"softmax", run_softmax<float>, run_softmax<double>},
    {"shape_ops", run_shape_ops<float>, run_shape_ops<double>},
    {"conv2d", run_conv<float>, run_conv<double>},
    {"max_pool2x2", run_max_pool<float>, run_max_pool<double>},
    {"batch_norm2d", run_batch_norm<float>, run_batch_norm<double>},
    {"layer_norm", run_layer_norm<float>, run_layer_norm<double>},
    {"window_attention", run_attention<float>, run_attention<double>},
    {"detach_semantics", run_detach_semantics<float>, run_detach_semantics<double>},
    {"mini_unet_dice", run_unet_check<float>, run_unet_check<double>},
    {"mini_swin_dice", run_swin_check<float>, run_swin_check<double>},
};

}  // namespace

std::vector<SuiteResult> run_gradcheck_suite(const std::string& corrupt_name) {
    std::vector<SuiteResult> out;
    auto push = [&](const std::string& name, const char* dtype, double tol,
                    GradCheckReport report) {
        SuiteResult r;
        r.name = name;
        r.dtype = dtype;
        r.tolerance = tol;
        r.pass = report.pass(tol);
        r.report = std::move(report);
        out.push_back(std::move(r));
    };
    for (const auto& def : kChecks) {
        push(def.name, "float32", 1e-3, def.run32());
        push(def.name, "float64", 1e-5, def.run64());
    }
    if (!corrupt_name.empty()) {
        push(corrupt_name, "float32", 1e-3, run_corrupted<float>());
        push(corrupt_name, "float64", 1e-5, run_corrupted<double>());
    }
    return out;
}

bool suite_passed(const std::vector<SuiteResult>& results) {
    for (const auto& r : results)
        if (!r.pass) return false;
    return true;
}

std::string suite_summary(const std::vector<SuiteResult>& results) {
    std::ostringstream os;
    for (const auto& r : results) {
        os << (r.pass ? "[ok]   " : "[FAIL] ") << r.name << " (" << r.dtype << ", tol " << r.tolerance
           << "): max_rel_err=" << std::scientific << r.report.max_rel_err << "\n";
        if (!r.pass) os << r.report.summary();
        os.unsetf(std::ios::scientific);
    }
    return os.str();
}

}  // namespace ct
