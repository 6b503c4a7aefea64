#pragma once

#include <string>
#include <vector>

namespace ct {

struct TimelineRow {
    int64_t iter = 0;
    double lr = 0, lambda = 0;
    double sup_cnn = 0, sup_trans = 0, ctl_cnn = 0, ctl_trans = 0;
    bool has_val = false;
    double val_mean = 0, val_c1 = 0, val_c2 = 0, val_c3 = 0;

    double total() const { return sup_cnn + sup_trans + lambda * (ctl_cnn + ctl_trans); }
};

// Parses a timeline.csv; throws IoError with the offending row number.
std::vector<TimelineRow> parse_timeline(const std::string& path);

struct Series {
    std::string name;
    std::vector<double> x, y;
};

// Self-contained SVG 1.1 line chart, one polyline per series.
std::string render_line_chart(const std::string& title, const std::vector<Series>& series,
                              int width = 860, int height = 420);

// Emits loss/lambda/lr/val-DSC charts plus a merged summary.csv into out_dir.
void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace ct
