#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace ct {

// Binary 3-D Dice coefficient; both-empty pairs score 1 by convention.
double dice_coefficient(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth);

// 95th percentile of the pooled directed surface distances, in millimetres.
// Boundaries are 6-connectivity surface voxels; the percentile uses linear
// interpolation over the pooled set. Returns 0 when both masks are empty and
// NaN (missing) when exactly one is empty.
double hd95(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth, int64_t depth,
            int64_t height, int64_t width, const std::array<float, 3>& spacing,
            double percentile = 95.0);

struct VolumeMetrics {
    int64_t volume_id = 0;
    // per category 1..K-1 (foreground); index 0 unused
    std::vector<double> dsc;
    std::vector<double> hd;  // NaN = missing (one-sided empty mask)
};

struct CategoryAggregate {
    double dsc_mean = 0, dsc_std = 0;
    double hd_mean = 0, hd_std = 0;
    int64_t n = 0;          // volumes contributing DSC
    int64_t hd_missing = 0; // volumes excluded from the HD mean
};

struct TTestResult {
    double t = 0;
    int64_t df = 0;
    double p = 1.0;
    bool degenerate = false;  // zero-variance differences with nonzero mean
};

struct MetricsReport {
    int64_t num_categories = 0;  // K including background
    std::vector<VolumeMetrics> volumes;
    std::vector<CategoryAggregate> per_category;  // index 1..K-1 used
    CategoryAggregate overall;                    // mean over categories

    std::string to_csv() const;     // volume,category,dsc,hd95
    std::string to_table() const;   // mean(std) layout
};

MetricsReport aggregate(const std::vector<VolumeMetrics>& volumes, int64_t num_categories);

// Per volume: DSC and HD95 for every foreground category.
VolumeMetrics evaluate_volume(const std::vector<uint8_t>& pred, const std::vector<uint8_t>& truth,
                              int64_t depth, int64_t height, int64_t width,
                              const std::array<float, 3>& spacing, int64_t num_categories,
                              int64_t volume_id, bool with_hd = true);

// Two-sided paired t-test over equal-length samples.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// Two-sided p for a t statistic; regularized incomplete beta implementation.
double student_t_two_sided_p(double t, int64_t df);

}  // namespace ct
