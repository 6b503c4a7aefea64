#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "ct/params.hpp"
#include "metrics.hpp"

using namespace ct;

namespace {

// Independent brute-force HD oracle: its own boundary extraction and its own
// percentile arithmetic.
struct BruteOracle {
    static std::vector<std::array<double, 3>> boundary(const std::vector<uint8_t>& m, int64_t D,
                                                       int64_t H, int64_t W,
                                                       const std::array<float, 3>& sp) {
        static const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0},
                                      {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
        std::vector<std::array<double, 3>> out;
        for (int64_t z = 0; z < D; ++z)
            for (int64_t y = 0; y < H; ++y)
                for (int64_t x = 0; x < W; ++x) {
                    if (!m[(size_t)((z * H + y) * W + x)]) continue;
                    bool edge = false;
                    for (const auto& o : off) {
                        const int64_t zz = z + o[0], yy = y + o[1], xx = x + o[2];
                        if (zz < 0 || zz >= D || yy < 0 || yy >= H || xx < 0 || xx >= W ||
                            !m[(size_t)((zz * H + yy) * W + xx)]) {
                            edge = true;
                            break;
                        }
                    }
                    if (edge) out.push_back({(double)z * sp[2], (double)y * sp[0], (double)x * sp[1]});
                }
        return out;
    }

    static double hd(const std::vector<uint8_t>& a, const std::vector<uint8_t>& b, int64_t D,
                     int64_t H, int64_t W, const std::array<float, 3>& sp, double q) {
        auto ba = boundary(a, D, H, W, sp);
        auto bb = boundary(b, D, H, W, sp);
        if (ba.empty() && bb.empty()) return 0.0;
        if (ba.empty() || bb.empty()) return std::numeric_limits<double>::quiet_NaN();
        std::vector<double> pool;
        auto push_directed = [&](const auto& from, const auto& to) {
            for (const auto& p : from) {
                double best = 1e300;
                for (const auto& t : to) {
                    const double d = (p[0] - t[0]) * (p[0] - t[0]) + (p[1] - t[1]) * (p[1] - t[1]) +
                                     (p[2] - t[2]) * (p[2] - t[2]);
                    best = std::min(best, d);
                }
                pool.push_back(std::sqrt(best));
            }
        };
        push_directed(ba, bb);
        push_directed(bb, ba);
        std::sort(pool.begin(), pool.end());
        const double pos = q / 100.0 * (double)(pool.size() - 1);
        const size_t lo = (size_t)pos;
        if (lo + 1 >= pool.size()) return pool.back();
        return pool[lo] * (1.0 - (pos - (double)lo)) + pool[lo + 1] * (pos - (double)lo);
    }
};

std::vector<uint8_t> random_mask(int64_t n, double density, Rng& rng) {
    std::vector<uint8_t> m((size_t)n);
    for (auto& v : m) v = rng.uniform() < density;
    return m;
}

}  // namespace

TEST_CASE("dice coefficient closed forms") {
    std::vector<uint8_t> a{1, 1, 0, 0}, b{1, 1, 0, 0};
    CHECK(dice_coefficient(a, b) == 1.0);
    std::vector<uint8_t> c{0, 0, 1, 1};
    CHECK(dice_coefficient(a, c) == 0.0);

    // |A|=4, |B|=8, overlap 4 -> 2*4/12
    std::vector<uint8_t> p(16, 0), q(16, 0);
    for (int i = 0; i < 4; ++i) p[(size_t)i] = 1;
    for (int i = 0; i < 8; ++i) q[(size_t)i] = 1;
    CHECK(dice_coefficient(p, q) == doctest::Approx(2.0 * 4 / 12));

    std::vector<uint8_t> e(16, 0);
    CHECK(dice_coefficient(e, e) == 1.0);  // both empty
}

TEST_CASE("dice symmetry and range on random masks") {
    Rng rng(31);
    for (int trial = 0; trial < 50; ++trial) {
        auto a = random_mask(64, 0.3, rng);
        auto b = random_mask(64, 0.5, rng);
        const double ab = dice_coefficient(a, b);
        CHECK(ab == dice_coefficient(b, a));
        CHECK(ab >= 0.0);
        CHECK(ab <= 1.0);
    }
}

TEST_CASE("hd95 closed forms") {
    const std::array<float, 3> sp{1, 1, 1};
    std::vector<uint8_t> a(8 * 8, 0), b(8 * 8, 0);
    a[(size_t)(3 * 8 + 1)] = 1;
    b[(size_t)(3 * 8 + 6)] = 1;  // 5 voxels apart in-plane
    CHECK(hd95(a, b, 1, 8, 8, sp) == doctest::Approx(5.0));
    CHECK(hd95(a, a, 1, 8, 8, sp) == 0.0);

    std::vector<uint8_t> e(8 * 8, 0);
    CHECK(hd95(e, e, 1, 8, 8, sp) == 0.0);
    CHECK(std::isnan(hd95(a, e, 1, 8, 8, sp)));
}

TEST_CASE("hd95 matches the brute-force oracle on unit squares and random masks") {
    const std::array<float, 3> sp{1, 1, 1};
    // 3x3 square vs the same square shifted by one voxel
    std::vector<uint8_t> a(8 * 8, 0), b(8 * 8, 0);
    for (int64_t y = 2; y < 5; ++y)
        for (int64_t x = 2; x < 5; ++x) {
            a[(size_t)(y * 8 + x)] = 1;
            b[(size_t)(y * 8 + x + 1)] = 1;
        }
    CHECK(hd95(a, b, 1, 8, 8, sp) ==
          doctest::Approx(BruteOracle::hd(a, b, 1, 8, 8, sp, 95)).epsilon(1e-12));

    Rng rng(47);
    for (int trial = 0; trial < 60; ++trial) {
        const int64_t D = 2, H = 8, W = 8;
        auto ma = random_mask(D * H * W, 0.25, rng);
        auto mb = random_mask(D * H * W, 0.25, rng);
        const std::array<float, 3> spc{1.0f, 1.5f, 4.0f};
        const double mine = hd95(ma, mb, D, H, W, spc);
        const double oracle = BruteOracle::hd(ma, mb, D, H, W, spc, 95);
        if (std::isnan(oracle)) {
            CHECK(std::isnan(mine));
        } else {
            CHECK(mine == doctest::Approx(oracle).epsilon(1e-9));
            // symmetry of the pooled definition
            CHECK(hd95(mb, ma, D, H, W, spc) == doctest::Approx(mine).epsilon(1e-12));
            // hd95 <= exact Hausdorff
            CHECK(mine <= hd95(ma, mb, D, H, W, spc, 100.0) + 1e-12);
        }
    }
}

TEST_CASE("hd95 scales linearly with spacing") {
    Rng rng(53);
    auto a = random_mask(2 * 8 * 8, 0.3, rng);
    auto b = random_mask(2 * 8 * 8, 0.3, rng);
    const std::array<float, 3> sp1{1, 1, 1};
    const std::array<float, 3> sp3{3, 3, 3};
    const double h1 = hd95(a, b, 2, 8, 8, sp1);
    const double h3 = hd95(a, b, 2, 8, 8, sp3);
    if (!std::isnan(h1)) CHECK(h3 == doctest::Approx(3.0 * h1).epsilon(1e-12));
}

TEST_CASE("aggregate: single volume, hand means, overall consistency") {
    VolumeMetrics v1;
    v1.volume_id = 0;
    v1.dsc = {0, 0.8, 0.6, 0.7};
    v1.hd = {0, 1.0, 2.0, 3.0};
    auto single = aggregate({v1}, 4);
    CHECK(single.per_category[1].dsc_mean == doctest::Approx(0.8));
    CHECK(single.per_category[1].dsc_std == 0.0);
    CHECK(single.per_category[1].n == 1);

    VolumeMetrics v2 = v1;
    v2.volume_id = 1;
    v2.dsc = {0, 0.9, 0.8, 0.9};
    v2.hd = {0, 2.0, 1.0, 5.0};
    auto r = aggregate({v1, v2}, 4);
    CHECK(r.per_category[1].dsc_mean == doctest::Approx(0.85));
    CHECK(r.per_category[1].dsc_std == doctest::Approx(0.0707).epsilon(1e-2));
    const double overall =
        (r.per_category[1].dsc_mean + r.per_category[2].dsc_mean + r.per_category[3].dsc_mean) / 3.0;
    CHECK(r.overall.dsc_mean == doctest::Approx(overall).epsilon(1e-12));

    // missing HD is excluded and counted
    VolumeMetrics v3 = v2;
    v3.volume_id = 2;
    v3.hd[1] = std::numeric_limits<double>::quiet_NaN();
    auto r3 = aggregate({v1, v2, v3}, 4);
    CHECK(r3.per_category[1].hd_missing == 1);
    CHECK(r3.per_category[1].hd_mean == doctest::Approx(1.5));
    CHECK(r3.to_csv().find("missing") != std::string::npos);
}

namespace {
// High-precision numerical integration of the t density (Simpson's rule).
double t_two_sided_p_oracle(double t, int64_t df) {
    const double v = (double)df;
    const double lognorm = std::lgamma((v + 1) / 2) - std::lgamma(v / 2) - 0.5 * std::log(v * 3.14159265358979323846);
    auto pdf = [&](double x) { return std::exp(lognorm - (v + 1) / 2 * std::log1p(x * x / v)); };
    const double a = 0.0, b = std::abs(t);
    const int n = 20000;
    const double h = (b - a) / n;
    double s = pdf(a) + pdf(b);
    for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
    const double integral = s * h / 3.0;
    return 2.0 * (0.5 - integral);
}
}  // namespace

TEST_CASE("paired t-test: closed forms and numerical-integration oracle") {
    // differences {1,2,3}: t = 2 / (1/sqrt(3))
    std::vector<double> a{2, 3, 4}, b{1, 1, 1};
    auto r = paired_t_test(a, b);
    CHECK(r.t == doctest::Approx(3.4641).epsilon(1e-4));
    CHECK(r.df == 2);
    CHECK(r.p == doctest::Approx(0.0742).epsilon(2e-2));
    CHECK(std::abs(r.p - t_two_sided_p_oracle(r.t, r.df)) < 1e-3);

    // identical samples -> p = 1
    auto same = paired_t_test(a, a);
    CHECK(same.p == 1.0);
    CHECK(same.t == 0.0);

    // swapping negates t, p unchanged
    auto sw = paired_t_test(b, a);
    CHECK(sw.t == doctest::Approx(-r.t));
    CHECK(sw.p == doctest::Approx(r.p));

    // zero-variance nonzero-mean differences -> degenerate, p ~ 0
    std::vector<double> c{2, 3, 4}, d{1, 2, 3};
    auto deg = paired_t_test(c, d);
    CHECK(deg.degenerate);
    CHECK(deg.p == 0.0);
}

TEST_CASE("student t CDF agrees with the df=1 closed form and the integrator") {
    for (double t : {0.3, 1.0, 2.5, 7.0}) {
        CHECK(student_t_two_sided_p(t, 1) ==
              doctest::Approx(1.0 - 2.0 / 3.14159265358979 * std::atan(t)).epsilon(1e-10));
        for (int64_t df : {2, 3, 10, 29})
            CHECK(std::abs(student_t_two_sided_p(t, df) - t_two_sided_p_oracle(t, df)) < 1e-6);
    }
}
