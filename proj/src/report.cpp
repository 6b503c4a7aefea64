#include "report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ct/error.hpp"

namespace fs = std::filesystem;

namespace ct {

std::vector<TimelineRow> parse_timeline(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open timeline: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError(path + ":1: empty timeline");
    std::vector<TimelineRow> rows;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) cols.push_back(tok);
        while (cols.size() < 11) cols.push_back("");
        TimelineRow r;
        try {
            r.iter = std::stoll(cols[0]);
            r.lr = std::stod(cols[1]);
            r.lambda = std::stod(cols[2]);
            r.sup_cnn = std::stod(cols[3]);
            r.sup_trans = std::stod(cols[4]);
            r.ctl_cnn = std::stod(cols[5]);
            r.ctl_trans = std::stod(cols[6]);
            if (!cols[7].empty()) {
                r.has_val = true;
                r.val_mean = std::stod(cols[7]);
                r.val_c1 = std::stod(cols[8]);
                r.val_c2 = std::stod(cols[9]);
                r.val_c3 = std::stod(cols[10]);
            }
        } catch (const std::exception&) {
            throw IoError(path + ":" + std::to_string(lineno) + ": malformed timeline row");
        }
        rows.push_back(r);
    }
    return rows;
}

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '&': out += "&amp;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#17becf", "#7f7f7f", "#bcbd22", "#e377c2"};

std::string fmt_tick(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

}  // namespace

std::string render_line_chart(const std::string& title, const std::vector<Series>& series,
                              int width, int height) {
    const double ml = 70, mr = 20, mt = 36, mb = 40;
    const double pw = width - ml - mr, ph = height - mt - mb;

    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            if (first) {
                xmin = xmax = s.x[i];
                ymin = ymax = s.y[i];
                first = false;
            }
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, s.y[i]);
            ymax = std::max(ymax, s.y[i]);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) { return ml + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return mt + ph - (y - ymin) / (ymax - ymin) * ph; };

    std::ostringstream os;
    os << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    os << "<rect width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-family=\"sans-serif\" "
          "font-size=\"15\">"
       << xml_escape(title) << "</text>\n";
    // axes
    os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << mt + ph
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << ml << "\" y1=\"" << mt + ph << "\" x2=\"" << ml + pw << "\" y2=\""
       << mt + ph << "\" stroke=\"black\"/>\n";
    // ticks
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        os << "<text x=\"" << ml - 6 << "\" y=\"" << py(yv) + 4
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(yv)
           << "</text>\n";
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        os << "<text x=\"" << px(xv) << "\" y=\"" << mt + ph + 16
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt_tick(xv)
           << "</text>\n";
    }
    // series
    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const char* color = kPalette[si % (sizeof kPalette / sizeof *kPalette)];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.y[i])) continue;
            os << px(s.x[i]) << "," << py(s.y[i]) << " ";
        }
        os << "\"/>\n";
        os << "<text x=\"" << ml + 8 << "\" y=\"" << mt + 14 + 15 * (double)si
           << "\" font-family=\"sans-serif\" font-size=\"12\" fill=\"" << color << "\">"
           << xml_escape(s.name) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

void write_report(const std::vector<std::string>& run_dirs, const std::string& out_dir) {
    if (run_dirs.empty()) throw ConfigError("report: no run directories given");
    fs::create_directories(out_dir);

    struct Run {
        std::string name;
        std::vector<TimelineRow> rows;
    };
    std::vector<Run> runs;
    for (const auto& dir : run_dirs) {
        Run r;
        r.name = fs::path(dir).filename().string();
        if (r.name.empty()) r.name = dir;
        r.rows = parse_timeline((fs::path(dir) / "timeline.csv").string());
        runs.push_back(std::move(r));
    }

    auto chart = [&](const std::string& file, const std::string& title, auto getter,
                     bool val_only) {
        std::vector<Series> series;
        for (const auto& run : runs) {
            Series s;
            s.name = run.name;
            for (const auto& row : run.rows) {
                if (val_only && !row.has_val) continue;
                s.x.push_back((double)row.iter);
                s.y.push_back(getter(row));
            }
            series.push_back(std::move(s));
        }
        std::ofstream f((fs::path(out_dir) / file).string(), std::ios::trunc);
        f << render_line_chart(title, series);
    };

    chart("loss.svg", "total training loss", [](const TimelineRow& r) { return r.total(); }, false);
    chart("lambda.svg", "unsupervised weight lambda(t)",
          [](const TimelineRow& r) { return r.lambda; }, false);
    chart("lr.svg", "learning rate", [](const TimelineRow& r) { return r.lr; }, false);
    chart("val_dsc.svg", "validation mean foreground DSC",
          [](const TimelineRow& r) { return r.val_mean; }, true);

    std::ofstream sum((fs::path(out_dir) / "summary.csv").string(), std::ios::trunc);
    sum << "run,iter,lr,lambda,loss_sup_cnn,loss_sup_trans,loss_ctl_cnn,loss_ctl_trans,total,"
           "val_dsc_mean\n";
    char buf[512];
    for (const auto& run : runs)
        for (const auto& row : run.rows) {
            std::snprintf(buf, sizeof buf, "%s,%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,",
                          run.name.c_str(), (long long)row.iter, row.lr, row.lambda, row.sup_cnn,
                          row.sup_trans, row.ctl_cnn, row.ctl_trans, row.total());
            sum << buf;
            if (row.has_val) sum << row.val_mean;
            sum << "\n";
        }
}

}  // namespace ct
