#include "ablate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

namespace fs = std::filesystem;

namespace ct {

namespace {

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        const size_t a = tok.find_first_not_of(" \t");
        const size_t b = tok.find_last_not_of(" \t");
        if (a != std::string::npos) out.push_back(tok.substr(a, b - a + 1));
    }
    return out;
}

}  // namespace

GridConfig GridConfig::from_config(const Config& c) {
    GridConfig g;
    g.base = TrainConfig::from_config(c);
    for (const auto& m : split_list(c.get_or("grid.modes", "LS,CNN_TRANS_CT")))
        g.modes.push_back(mode_from_string(m));
    for (const auto& l : split_list(c.get_or("grid.losses", "DICE")))
        g.losses.push_back(loss_kind_from_string(l));
    for (int64_t v : c.get_int_list_or("grid.labeled_counts", {0})) g.labeled_counts.push_back(v);
    for (int64_t v : c.get_int_list_or("grid.seeds", {1, 2, 3})) g.seeds.push_back((uint64_t)v);
    g.out_dir = c.get_or("grid.out_dir", g.base.out_dir);
    g.workers = (int)c.get_int_or("grid.workers", 1);
    if (g.out_dir.empty()) throw ConfigError("grid.out_dir is required");
    if (g.modes.empty() || g.seeds.empty()) throw ConfigError("grid axes must be non-empty");
    return g;
}

std::string cell_dir_name(SupervisionMode mode, LossKind loss, int64_t labeled, uint64_t seed) {
    std::ostringstream os;
    os << mode_name(mode);
    if (mode != SupervisionMode::LS && mode != SupervisionMode::CNN_TRANS_CR)
        os << "_" << loss_kind_name(loss);
    os << "_lab" << labeled << "_seed" << seed;
    return os.str();
}

namespace {

SourceAggregate aggregate_source(const std::vector<VolumeMetrics>& vms, int64_t K) {
    auto rep = aggregate(vms, K);
    SourceAggregate s;
    s.dsc_cat.assign((size_t)K, 0.0);
    s.hd_cat.assign((size_t)K, 0.0);
    for (int64_t k = 1; k < K; ++k) {
        s.dsc_cat[(size_t)k] = rep.per_category[(size_t)k].dsc_mean;
        s.hd_cat[(size_t)k] = rep.per_category[(size_t)k].hd_mean;
    }
    s.dsc_mean = rep.overall.dsc_mean;
    s.hd_mean = rep.overall.hd_mean;
    return s;
}

// branches.csv: source,volume,category,dsc,hd95 — written once a cell is done
void write_branches(const std::string& path,
                    const std::vector<std::pair<std::string, std::vector<VolumeMetrics>>>& data,
                    int64_t K) {
    std::ofstream f(path + ".tmp", std::ios::trunc);
    f.precision(17);
    f << "source,volume,category,dsc,hd95\n";
    for (const auto& [src, vms] : data)
        for (const auto& vm : vms)
            for (int64_t k = 1; k < K; ++k) {
                f << src << "," << vm.volume_id << "," << k << "," << vm.dsc[(size_t)k] << ",";
                if (std::isnan(vm.hd[(size_t)k])) f << "missing";
                else f << vm.hd[(size_t)k];
                f << "\n";
            }
    f.close();
    fs::rename(path + ".tmp", path);
}

std::vector<std::pair<std::string, std::vector<VolumeMetrics>>> read_branches(
    const std::string& path, int64_t K) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    std::getline(f, line);
    std::vector<std::pair<std::string, std::vector<VolumeMetrics>>> out;
    auto find_src = [&](const std::string& s) -> std::vector<VolumeMetrics>& {
        for (auto& kv : out)
            if (kv.first == s) return kv.second;
        out.emplace_back(s, std::vector<VolumeMetrics>{});
        return out.back().second;
    };
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string src, vol, cat, dsc, hd;
        std::getline(ls, src, ',');
        std::getline(ls, vol, ',');
        std::getline(ls, cat, ',');
        std::getline(ls, dsc, ',');
        std::getline(ls, hd, ',');
        auto& vms = find_src(src);
        const int64_t vid = std::stoll(vol);
        auto it = std::find_if(vms.begin(), vms.end(),
                               [&](const VolumeMetrics& v) { return v.volume_id == vid; });
        if (it == vms.end()) {
            VolumeMetrics vm;
            vm.volume_id = vid;
            vm.dsc.assign((size_t)K, 0.0);
            vm.hd.assign((size_t)K, std::numeric_limits<double>::quiet_NaN());
            vms.push_back(vm);
            it = vms.end() - 1;
        }
        const int64_t k = std::stoll(cat);
        it->dsc[(size_t)k] = std::stod(dsc);
        it->hd[(size_t)k] = hd == "missing" ? std::numeric_limits<double>::quiet_NaN() : std::stod(hd);
    }
    return out;
}

CellResult run_cell(const GridConfig& grid, SupervisionMode mode, LossKind loss, int64_t labeled,
                    uint64_t seed) {
    CellResult cell;
    cell.mode = mode;
    cell.loss = loss;
    cell.labeled = labeled;
    cell.seed = seed;
    cell.name = cell_dir_name(mode, loss, labeled, seed);
    const fs::path dir = fs::path(grid.out_dir) / cell.name;
    const std::string branches_path = (dir / "branches.csv").string();
    const int64_t K = grid.base.unet.num_classes;

    try {
        if (fs::exists(branches_path)) {
            cell.skipped = true;
            for (const auto& [src, vms] : read_branches(branches_path, K))
                cell.sources.emplace_back(src, aggregate_source(vms, K));
            cell.ok = true;
            return cell;
        }

        TrainConfig cfg = grid.base;
        cfg.mode = mode;
        cfg.ct_loss = loss;
        cfg.labeled_count = labeled;
        cfg.seed = seed;
        cfg.out_dir = dir.string();
        Trainer trainer(cfg);
        const bool resume = fs::exists(dir / "checkpoint.xtck");
        cell.counters = trainer.run_training(resume);

        std::vector<std::pair<std::string, std::vector<VolumeMetrics>>> data;
        std::vector<PredSource> sources{PredSource::CNN_BRANCH};
        if (trainer.model2()) {
            sources.push_back(PredSource::TRANS_BRANCH);
            sources.push_back(PredSource::ENSEMBLE);
        }
        for (PredSource src : sources) {
            std::vector<VolumeMetrics> vms;
            for (int64_t id : trainer.dataset().split.validation) {
                const Volume& vol = trainer.dataset().volumes[(size_t)id];
                auto pred = infer_volume(trainer.model1(), trainer.model2(), vol, src);
                vms.push_back(evaluate_prediction(pred, vol, K, /*with_hd=*/true));
            }
            data.emplace_back(pred_source_name(src), vms);
        }
        write_branches(branches_path, data, K);
        for (const auto& [src, vms] : data) cell.sources.emplace_back(src, aggregate_source(vms, K));
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
    }
    return cell;
}

double mean_of(const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / (double)v.size();
}

double std_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (double)(v.size() - 1));
}

}  // namespace

std::vector<CellResult> run_grid(const GridConfig& grid) {
    fs::create_directories(grid.out_dir);

    struct Job {
        SupervisionMode mode;
        LossKind loss;
        int64_t labeled;
        uint64_t seed;
    };
    std::vector<Job> jobs;
    for (int64_t lab : grid.labeled_counts)
        for (SupervisionMode mode : grid.modes) {
            // the loss axis only differentiates cross-teaching cells
            const bool uses_loss =
                mode != SupervisionMode::LS && mode != SupervisionMode::CNN_TRANS_CR;
            const std::vector<LossKind> losses =
                uses_loss ? grid.losses : std::vector<LossKind>{LossKind::DICE};
            for (LossKind loss : losses)
                for (uint64_t seed : grid.seeds) jobs.push_back({mode, loss, lab, seed});
        }

    std::vector<CellResult> results(jobs.size());
    std::mutex io_mutex;
    size_t next = 0;
    std::mutex queue_mutex;
    auto worker = [&]() {
        for (;;) {
            size_t idx;
            {
                std::lock_guard<std::mutex> lock(queue_mutex);
                if (next >= jobs.size()) return;
                idx = next++;
            }
            const Job& j = jobs[idx];
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                std::printf("[grid] start %s\n",
                            cell_dir_name(j.mode, j.loss, j.labeled, j.seed).c_str());
                std::fflush(stdout);
            }
            results[idx] = run_cell(grid, j.mode, j.loss, j.labeled, j.seed);
            {
                std::lock_guard<std::mutex> lock(io_mutex);
                const auto& r = results[idx];
                std::printf("[grid] %-5s %s%s%s\n", r.ok ? "done" : "FAIL", r.name.c_str(),
                            r.skipped ? " (cached)" : "", r.ok ? "" : (" :: " + r.error).c_str());
                std::fflush(stdout);
            }
        }
    };
    const int n_workers = std::max(1, std::min<int>(grid.workers, (int)jobs.size()));
    std::vector<std::thread> threads;
    for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();

    // ---------------- consolidated tables ----------------
    struct GroupKey {
        SupervisionMode mode;
        LossKind loss;
        int64_t labeled;
        std::string source;
        bool operator==(const GroupKey& o) const {
            return mode == o.mode && loss == o.loss && labeled == o.labeled && source == o.source;
        }
    };
    struct Group {
        GroupKey key;
        std::vector<double> dsc, hd;                    // per seed, overall means
        std::vector<std::vector<double>> dsc_cat, hd_cat;  // per seed, per category
        std::vector<uint64_t> seeds;
    };
    std::vector<Group> groups;
    auto group_of = [&](const GroupKey& k) -> Group& {
        for (auto& g : groups)
            if (g.key == k) return g;
        groups.push_back({k, {}, {}, {}, {}, {}});
        return groups.back();
    };
    for (const auto& cell : results) {
        if (!cell.ok) continue;
        for (const auto& [src, agg] : cell.sources) {
            Group& g = group_of({cell.mode, cell.loss, cell.labeled, src});
            g.dsc.push_back(agg.dsc_mean);
            g.hd.push_back(agg.hd_mean);
            g.dsc_cat.push_back(agg.dsc_cat);
            g.hd_cat.push_back(agg.hd_cat);
            g.seeds.push_back(cell.seed);
        }
    }

    // paired t-test of each group's per-seed DSC against the LS baseline
    auto ls_values = [&](int64_t labeled, const std::vector<uint64_t>& seeds) {
        std::vector<double> out;
        for (uint64_t s : seeds) {
            for (const auto& g : groups) {
                if (g.key.mode != SupervisionMode::LS || g.key.labeled != labeled ||
                    g.key.source != "cnn")
                    continue;
                for (size_t i = 0; i < g.seeds.size(); ++i)
                    if (g.seeds[i] == s) out.push_back(g.dsc[i]);
            }
        }
        return out;
    };

    const int64_t K = grid.base.unet.num_classes;
    std::ofstream csv(fs::path(grid.out_dir) / "ablation.csv", std::ios::trunc);
    csv << "mode,ct_loss,labeled,source,n_seeds,dsc_mean,dsc_std,hd95_mean,hd95_std";
    static const char* cat_names[] = {"", "rv", "myo", "lv"};
    for (int64_t k = 1; k < K; ++k)
        csv << ",dsc_" << (k < 4 ? cat_names[k] : ("c" + std::to_string(k)).c_str()) << ",hd95_"
            << (k < 4 ? cat_names[k] : ("c" + std::to_string(k)).c_str());
    csv << ",t_vs_ls,p_vs_ls\n";

    std::ofstream md(fs::path(grid.out_dir) / "ablation.md", std::ios::trunc);
    md << "| method | loss | labeled | source | mean DSC (std) | mean HD95 (std) | p vs LS |\n";
    md << "|---|---|---|---|---|---|---|\n";

    char buf[256];
    for (const auto& g : groups) {
        const double dm = mean_of(g.dsc), ds = std_of(g.dsc);
        const double hm = mean_of(g.hd), hs = std_of(g.hd);
        csv << mode_name(g.key.mode) << "," << loss_kind_name(g.key.loss) << "," << g.key.labeled
            << "," << g.key.source << "," << g.seeds.size() << ",";
        std::snprintf(buf, sizeof buf, "%.4f,%.4f,%.3f,%.3f", dm, ds, hm, hs);
        csv << buf;
        for (int64_t k = 1; k < K; ++k) {
            std::vector<double> dc, hc;
            for (size_t i = 0; i < g.seeds.size(); ++i) {
                dc.push_back(g.dsc_cat[i][(size_t)k]);
                hc.push_back(g.hd_cat[i][(size_t)k]);
            }
            std::snprintf(buf, sizeof buf, ",%.4f,%.3f", mean_of(dc), mean_of(hc));
            csv << buf;
        }
        std::string pcol = ",,";
        std::string md_p = "-";
        const bool is_ls = g.key.mode == SupervisionMode::LS && g.key.source == "cnn";
        if (!is_ls && g.seeds.size() >= 2) {
            auto baseline = ls_values(g.key.labeled, g.seeds);
            if (baseline.size() == g.seeds.size()) {
                auto tt = paired_t_test(g.dsc, baseline);
                std::snprintf(buf, sizeof buf, ",%.4f,%.6f", tt.t, tt.p);
                pcol = buf;
                std::snprintf(buf, sizeof buf, "%.4f%s", tt.p, tt.p < 0.05 ? " *" : "");
                md_p = buf;
            }
        }
        csv << pcol << "\n";

        std::snprintf(buf, sizeof buf, "%.3f (%.3f)", dm, ds);
        std::string dsc_cell = buf;
        std::snprintf(buf, sizeof buf, "%.2f (%.2f)", hm, hs);
        md << "| " << mode_name(g.key.mode) << " | " << loss_kind_name(g.key.loss) << " | "
           << g.key.labeled << " | " << g.key.source << " | " << dsc_cell << " | " << buf << " | "
           << md_p << " |\n";
    }
    return results;
}

}  // namespace ct
