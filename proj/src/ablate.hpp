#pragma once

#include <string>
#include <vector>

#include "metrics.hpp"
#include "trainer.hpp"

namespace ct {

struct GridConfig {
    TrainConfig base;
    std::vector<SupervisionMode> modes;
    std::vector<LossKind> losses;
    std::vector<int64_t> labeled_counts;  // 0 entry = manifest split
    std::vector<uint64_t> seeds;
    std::string out_dir;
    int workers = 1;

    static GridConfig from_config(const Config& c);
};

struct SourceAggregate {
    // per foreground category and overall, aggregated over validation volumes
    std::vector<double> dsc_cat, hd_cat;  // index 1..K-1
    double dsc_mean = 0, hd_mean = 0;
};

struct CellResult {
    std::string name;
    SupervisionMode mode = SupervisionMode::LS;
    LossKind loss = LossKind::DICE;
    int64_t labeled = 0;
    uint64_t seed = 0;
    bool ok = false;
    bool skipped = false;  // found complete on disk
    std::string error;
    // keyed by pred_source_name(); single-branch cells carry "cnn" only
    std::vector<std::pair<std::string, SourceAggregate>> sources;
    RunCounters counters;
};

// Runs every grid cell (resuming or skipping completed ones), then writes
// ablation.csv and ablation.md with mean(std) DSC / HD95 per cell and paired
// t-tests against the LS baseline at the same labeled count.
std::vector<CellResult> run_grid(const GridConfig& grid);

std::string cell_dir_name(SupervisionMode mode, LossKind loss, int64_t labeled, uint64_t seed);

}  // namespace ct
