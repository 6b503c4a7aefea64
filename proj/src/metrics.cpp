#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "ct/error.hpp"

namespace ct {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Voxels of the mask with at least one 6-neighbour outside the mask (or on
// the volume border).
std::vector<std::array<int64_t, 3>> boundary_voxels(const std::vector<uint8_t>& mask, int64_t D,
                                                    int64_t H, int64_t W) {
    std::vector<std::array<int64_t, 3>> out;
    auto at = [&](int64_t z, int64_t y, int64_t x) -> bool {
        if (z < 0 || z >= D || y < 0 || y >= H || x < 0 || x >= W) return false;
        return mask[(size_t)((z * H + y) * W + x)] != 0;
    };
    for (int64_t z = 0; z < D; ++z)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                if (!at(z, y, x)) continue;
                if (!at(z - 1, y, x) || !at(z + 1, y, x) || !at(z, y - 1, x) || !at(z, y + 1, x) ||
                    !at(z, y, x - 1) || !at(z, y, x + 1))
                    out.push_back({z, y, x});
            }
    return out;
}

void directed_distances(const std::vector<std::array<int64_t, 3>>& from,
                        const std::vector<std::array<int64_t, 3>>& to,
                        const std::array<float, 3>& spacing, std::vector<double>& pool) {
    const double sy = spacing[0], sx = spacing[1], sz = spacing[2];
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            const double dz = (double)(a[0] - b[0]) * sz;
            const double dy = (double)(a[1] - b[1]) * sy;
            const double dx = (double)(a[2] - b[2]) * sx;
            const double d2 = dz * dz + dy * dy + dx * dx;
            if (d2 < best) best = d2;
        }
        pool.push_back(std::sqrt(best));
    }
}

double linear_percentile(std::vector<double>& values, double q) {
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    if (n == 1) return values[0];
    const double pos = q / 100.0 * (double)(n - 1);
    const size_t lo = (size_t)std::floor(pos);
    const size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - (double)lo;
    return values[lo] + frac * (values[hi] - values[lo]);
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / (double)v.size();
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (double)(v.size() - 1));
}

}  // namespace

double dice_coefficient(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth) {
    if (pred.size() != truth.size()) throw ShapeError("dice_coefficient: size mismatch");
    int64_t inter = 0, a = 0, b = 0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const bool pa = pred[i] != 0, pb = truth[i] != 0;
        inter += (pa && pb);
        a += pa;
        b += pb;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * (double)inter / (double)(a + b);
}

double hd95(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth, int64_t D,
            int64_t H, int64_t W, const std::array<float, 3>& spacing, double percentile) {
    if (pred.size() != truth.size() || (int64_t)pred.size() != D * H * W)
        throw ShapeError("hd95: mask dims mismatch");
    const auto ba = boundary_voxels(pred, D, H, W);
    const auto bb = boundary_voxels(truth, D, H, W);
    if (ba.empty() && bb.empty()) return 0.0;
    if (ba.empty() || bb.empty()) return kNaN;  // one-sided empty: missing
    std::vector<double> pool;
    pool.reserve(ba.size() + bb.size());
    directed_distances(ba, bb, spacing, pool);
    directed_distances(bb, ba, spacing, pool);
    return linear_percentile(pool, percentile);
}

VolumeMetrics evaluate_volume(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                              int64_t D, int64_t H, int64_t W,
                              const std::array<float, 3>& spacing, int64_t K, int64_t volume_id,
                              bool with_hd) {
    VolumeMetrics vm;
    vm.volume_id = volume_id;
    vm.dsc.assign((size_t)K, 0.0);
    vm.hd.assign((size_t)K, kNaN);
    std::vector<uint8_t> mp(pred.size()), mt(truth.size());
    for (int64_t k = 1; k < K; ++k) {
        for (size_t i = 0; i < pred.size(); ++i) {
            mp[i] = pred[i] == k;
            mt[i] = truth[i] == k;
        }
        vm.dsc[(size_t)k] = dice_coefficient(mp, mt);
        if (with_hd) vm.hd[(size_t)k] = hd95(mp, mt, D, H, W, spacing);
    }
    return vm;
}

MetricsReport aggregate(const std::vector<VolumeMetrics>& volumes, int64_t K) {
    if (volumes.empty()) throw ConfigError("aggregate: no volumes");
    MetricsReport r;
    r.num_categories = K;
    r.volumes = volumes;
    r.per_category.assign((size_t)K, {});
    std::vector<double> cat_dsc_means, cat_hd_means;
    for (int64_t k = 1; k < K; ++k) {
        std::vector<double> ds, hs;
        int64_t missing = 0;
        for (const auto& vm : volumes) {
            ds.push_back(vm.dsc[(size_t)k]);
            const double h = vm.hd[(size_t)k];
            if (std::isnan(h)) ++missing;
            else hs.push_back(h);
        }
        CategoryAggregate& agg = r.per_category[(size_t)k];
        agg.n = (int64_t)ds.size();
        agg.hd_missing = missing;
        agg.dsc_mean = mean_of(ds);
        agg.dsc_std = sample_std(ds);
        if (!hs.empty()) {
            agg.hd_mean = mean_of(hs);
            agg.hd_std = sample_std(hs);
        } else {
            agg.hd_mean = kNaN;
            agg.hd_std = kNaN;
        }
        cat_dsc_means.push_back(agg.dsc_mean);
        if (!hs.empty()) cat_hd_means.push_back(agg.hd_mean);
    }
    r.overall.n = (int64_t)volumes.size();
    r.overall.dsc_mean = mean_of(cat_dsc_means);
    {
        std::vector<double> per_vol;
        for (const auto& vm : volumes) {
            double s = 0;
            for (int64_t k = 1; k < K; ++k) s += vm.dsc[(size_t)k];
            per_vol.push_back(s / (double)(K - 1));
        }
        r.overall.dsc_std = sample_std(per_vol);
    }
    r.overall.hd_mean = cat_hd_means.empty() ? kNaN : mean_of(cat_hd_means);
    r.overall.hd_std = 0;
    return r;
}

std::string MetricsReport::to_csv() const {
    std::ostringstream os;
    os << "volume,category,dsc,hd95\n";
    for (const auto& vm : volumes)
        for (int64_t k = 1; k < num_categories; ++k) {
            os << vm.volume_id << "," << k << "," << vm.dsc[(size_t)k] << ",";
            if (std::isnan(vm.hd[(size_t)k])) os << "missing";
            else os << vm.hd[(size_t)k];
            os << "\n";
        }
    return os.str();
}

std::string MetricsReport::to_table() const {
    static const char* names[] = {"BG", "RV", "Myo", "LV"};
    auto cat_name = [&](int64_t k) {
        return k < 4 ? std::string(names[k]) : "C" + std::to_string(k);
    };
    auto fmt = [](double mean, double stdev) {
        if (std::isnan(mean)) return std::string("missing");
        std::ostringstream o;
        o.setf(std::ios::fixed);
        o.precision(3);
        o << mean << "(" << stdev << ")";
        return o.str();
    };
    std::ostringstream os;
    os << "category  DSC mean(std)   HD95 mean(std) mm\n";
    for (int64_t k = 1; k < num_categories; ++k) {
        const auto& a = per_category[(size_t)k];
        std::string row = cat_name(k);
        row.resize(10, ' ');
        std::string d = fmt(a.dsc_mean, a.dsc_std);
        d.resize(16, ' ');
        os << row << d << fmt(a.hd_mean, a.hd_std);
        if (a.hd_missing > 0) os << "  [" << a.hd_missing << " hd missing]";
        if (a.n == 1) os << "  [n=1, std reported as 0]";
        os << "\n";
    }
    std::string row = "mean";
    row.resize(10, ' ');
    std::string d = fmt(overall.dsc_mean, overall.dsc_std);
    d.resize(16, ' ');
    os << row << d << fmt(overall.hd_mean, 0.0) << "\n";
    return os.str();
}

// ---------------------------------------------------------------------------
// Student t distribution via the regularized incomplete beta function
// ---------------------------------------------------------------------------

namespace {

double betacf(double a, double b, double x) {
    // continued fraction for the incomplete beta function (modified Lentz)
    const int max_iter = 300;
    const double eps = 3e-14, fpmin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::abs(d) < fpmin) d = fpmin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= max_iter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < fpmin) d = fpmin;
        c = 1.0 + aa / c;
        if (std::abs(c) < fpmin) c = fpmin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < eps) break;
    }
    return h;
}

double betai(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, int64_t df) {
    if (df < 1) throw ConfigError("student_t_two_sided_p: df must be >= 1");
    const double x = (double)df / ((double)df + t * t);
    return betai((double)df / 2.0, 0.5, x);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ConfigError("paired_t_test: unequal sample sizes");
    if (a.size() < 2) throw ConfigError("paired_t_test: need n >= 2 pairs");
    std::vector<double> d(a.size());
    for (size_t i = 0; i < a.size(); ++i) d[i] = a[i] - b[i];
    const double m = mean_of(d);
    const double sd = sample_std(d);
    const int64_t n = (int64_t)d.size();
    TTestResult r;
    r.df = n - 1;
    if (sd == 0.0) {
        if (m == 0.0) {
            r.t = 0.0;
            r.p = 1.0;
        } else {
            r.t = m > 0 ? std::numeric_limits<double>::infinity()
                        : -std::numeric_limits<double>::infinity();
            r.p = 0.0;
            r.degenerate = true;
        }
        return r;
    }
    r.t = m / (sd / std::sqrt((double)n));
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

}  // namespace ct
