// crossteach: synthetic-benchmark semi-supervised segmentation harness.
// Commands: synth | train | ablate | gradcheck | report.

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ablate.hpp"
#include "config.hpp"
#include "ct/error.hpp"
#include "gradsuite.hpp"
#include "report.hpp"
#include "trainer.hpp"

namespace fs = std::filesystem;
using namespace ct;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;
constexpr int kExitVerification = 5;

struct Args {
    std::string command;
    std::string config_path;
    std::string out_dir;
    std::string corrupt;
    int64_t seed = -1;
    int workers = 0;
    bool resume = false;
    std::vector<std::string> positional;
};

void usage() {
    std::puts(
        "usage: crossteach <command> [options] [args]\n"
        "\n"
        "commands:\n"
        "  synth      generate the phantom dataset and split manifest\n"
        "  train      run one training configuration\n"
        "  ablate     run a mode/loss/labeled/seed grid and consolidate the results\n"
        "  gradcheck  verify every primitive and both backbones against finite differences\n"
        "  report     render SVG training curves and a merged summary from run dirs\n"
        "\n"
        "options:\n"
        "  --config PATH   configuration file (key = value with [sections])\n"
        "  --seed N        override the configured seed\n"
        "  --workers N     parallel grid workers (ablate)\n"
        "  --resume        continue an interrupted run from its checkpoint\n"
        "  --out DIR       override the output directory\n"
        "  --corrupt NAME  gradcheck only: include a deliberately broken backward fixture");
}

Args parse_args(int argc, char** argv) {
    Args a;
    if (argc < 2) throw ConfigError("missing command (try --help)");
    a.command = argv[1];
    for (int i = 2; i < argc; ++i) {
        const std::string arg = argv[i];
        auto next = [&](const char* flag) -> std::string {
            if (i + 1 >= argc) throw ConfigError(std::string(flag) + " requires a value");
            return argv[++i];
        };
        if (arg == "--config") a.config_path = next("--config");
        else if (arg == "--seed") a.seed = std::stoll(next("--seed"));
        else if (arg == "--workers") a.workers = (int)std::stoll(next("--workers"));
        else if (arg == "--resume") a.resume = true;
        else if (arg == "--out") a.out_dir = next("--out");
        else if (arg == "--corrupt") a.corrupt = next("--corrupt");
        else if (arg == "--help" || arg == "-h") a.command = "help";
        else if (arg.rfind("--", 0) == 0) throw ConfigError("unknown flag: " + arg);
        else a.positional.push_back(arg);
    }
    return a;
}

Config load_config(const Args& a) {
    if (a.config_path.empty()) throw ConfigError("--config is required for this command");
    return Config::parse_file(a.config_path);
}

int cmd_synth(const Args& args) {
    Config c = load_config(args);
    PhantomParams params;
    params.grid_h = c.get_int_or("phantom.grid_h", 64);
    params.grid_w = c.get_int_or("phantom.grid_w", 64);
    params.slices_per_volume = c.get_int_or("phantom.slices_per_volume", 8);
    params.lv_radius = c.get_double_or("phantom.lv_radius", params.lv_radius);
    params.lv_radius_jitter = c.get_double_or("phantom.lv_radius_jitter", params.lv_radius_jitter);
    params.myo_thickness = c.get_double_or("phantom.myo_thickness", params.myo_thickness);
    params.myo_thickness_jitter =
        c.get_double_or("phantom.myo_thickness_jitter", params.myo_thickness_jitter);
    params.rv_eccentricity = c.get_double_or("phantom.rv_eccentricity", params.rv_eccentricity);
    params.rv_eccentricity_jitter =
        c.get_double_or("phantom.rv_eccentricity_jitter", params.rv_eccentricity_jitter);
    params.noise_std = c.get_double_or("phantom.noise_std", params.noise_std);
    params.bias_field_strength =
        c.get_double_or("phantom.bias_field_strength", params.bias_field_strength);
    params.seed = (uint64_t)c.get_int_or("phantom.seed", 1);
    if (args.seed >= 0) params.seed = (uint64_t)args.seed;

    const int64_t n_volumes = c.get_int_or("split.n_volumes", 50);
    const int64_t labeled = c.get_int_or("split.labeled", 2);
    const int64_t val = c.get_int_or("split.val", 10);

    std::string out = args.out_dir.empty() ? c.get_or("data.dir", "data/phantom") : args.out_dir;
    fs::create_directories(out);

    int64_t voxel_count[kPhantomCategories] = {0, 0, 0, 0};
    for (int64_t i = 0; i < n_volumes; ++i) {
        Volume v = generate_phantom(params, i);
        for (uint8_t l : v.label) ++voxel_count[l];
        char name[32];
        std::snprintf(name, sizeof name, "vol_%03lld.xtv", (long long)i);
        save_volume((fs::path(out) / name).string(), v);
    }
    SplitManifest manifest = make_splits(n_volumes, labeled, val, params.seed);
    save_manifest((fs::path(out) / "splits.txt").string(), manifest);

    std::printf("dataset: %s\n", out.c_str());
    std::printf("volumes: %lld (%lld labeled, %lld unlabeled, %lld validation)\n",
                (long long)n_volumes, (long long)manifest.labeled.size(),
                (long long)manifest.unlabeled.size(), (long long)manifest.validation.size());
    std::printf("labeled fraction of training volumes: %.3f\n", manifest.labeled_fraction);
    static const char* names[] = {"background", "RV", "Myo", "LV"};
    for (int k = 0; k < kPhantomCategories; ++k)
        std::printf("voxels[%s] = %lld\n", names[k], (long long)voxel_count[k]);
    return kExitOk;
}

int cmd_train(const Args& args) {
    Config c = load_config(args);
    TrainConfig cfg = TrainConfig::from_config(c);
    if (args.seed >= 0) cfg.seed = (uint64_t)args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;

    Trainer trainer(cfg);
    RunCounters counters = trainer.run_training(args.resume);
    std::printf("run complete: %s\n", cfg.out_dir.c_str());
    std::printf("ftimes_per_iter = %.3f\n", counters.ftimes_per_iter);
    std::printf("wall_train_seconds = %.1f\n", counters.wall_train_seconds);
    std::printf("per_case_infer_seconds = %.4f\n", counters.per_case_infer_seconds);
    std::printf("%s", trainer.last_report().to_table().c_str());
    return kExitOk;
}

int cmd_ablate(const Args& args) {
    Config c = load_config(args);
    GridConfig grid = GridConfig::from_config(c);
    if (!args.out_dir.empty()) grid.out_dir = args.out_dir;
    if (args.workers > 0) grid.workers = args.workers;

    auto results = run_grid(grid);
    int failures = 0;
    for (const auto& r : results)
        if (!r.ok) ++failures;
    std::printf("grid: %zu cells, %d failed; tables in %s\n", results.size(), failures,
                grid.out_dir.c_str());
    return failures == 0 ? kExitOk : kExitVerification;
}

int cmd_gradcheck(const Args& args) {
    auto results = run_gradcheck_suite(args.corrupt);
    std::printf("%s", suite_summary(results).c_str());
    if (!suite_passed(results)) {
        for (const auto& r : results)
            if (!r.pass)
                std::printf("verification failed: %s (%s) exceeded tolerance %g\n", r.name.c_str(),
                            r.dtype.c_str(), r.tolerance);
        return kExitVerification;
    }
    std::puts("all gradient checks passed");
    return kExitOk;
}

int cmd_report(const Args& args) {
    if (args.positional.empty()) throw ConfigError("report: pass one or more run directories");
    const std::string out = args.out_dir.empty() ? "report" : args.out_dir;
    write_report(args.positional, out);
    std::printf("report written to %s\n", out.c_str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        Args args = parse_args(argc, argv);
        if (args.command == "help") {
            usage();
            return kExitOk;
        }
        if (args.command == "synth") return cmd_synth(args);
        if (args.command == "train") return cmd_train(args);
        if (args.command == "ablate") return cmd_ablate(args);
        if (args.command == "gradcheck") return cmd_gradcheck(args);
        if (args.command == "report") return cmd_report(args);
        usage();
        throw ConfigError("unknown command: " + args.command);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitConfig;
    } catch (const ShapeError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitConfig;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitNumeric;
    } catch (const IoError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return kExitNumeric;
    }
}
