#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "ct/checkpoint.hpp"
#include "trainer.hpp"

using namespace ct;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

// Writes a small phantom dataset and returns its directory.
std::string make_dataset(const std::string& name, int64_t n_volumes, int64_t labeled,
                         int64_t val, int64_t slices = 4, uint64_t seed = 9) {
    const fs::path dir = fs::temp_directory_path() / "ct_trainer_tests" / name;
    fs::create_directories(dir);
    PhantomParams params;
    params.slices_per_volume = slices;
    params.seed = seed;
    for (int64_t i = 0; i < n_volumes; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "vol_%03lld.xtv", (long long)i);
        save_volume((dir / buf).string(), generate_phantom(params, i));
    }
    save_manifest((dir / "splits.txt").string(), make_splits(n_volumes, labeled, val, seed));
    return dir.string();
}

TrainConfig small_config(const std::string& dataset, const std::string& out) {
    TrainConfig cfg;
    cfg.dataset_dir = dataset;
    cfg.out_dir = out;
    cfg.t_total = 10;
    cfg.eval_every = 0;  // final-row eval only
    cfg.checkpoint_every = 5;
    cfg.unet.base_channels = 4;
    cfg.unet.depth = 2;
    cfg.swin.patch_size = 2;
    cfg.swin.embed_dim = 8;
    cfg.swin.depths = {2, 2};
    cfg.swin.num_heads = {2, 2};
    cfg.swin.window = 2;
    cfg.crop = 64;
    return cfg;
}

}  // namespace

TEST_CASE("poly_lr endpoints and midpoint") {
    TrainConfig cfg;
    cfg.base_lr = 0.01;
    cfg.lr_power = 0.9;
    cfg.t_total = 1000;
    CHECK(poly_lr(0, cfg) == doctest::Approx(0.01).epsilon(1e-12));
    CHECK(poly_lr(1000, cfg) == 0.0);
    CHECK(poly_lr(500, cfg) == doctest::Approx(0.01 * std::pow(0.5, 0.9)).epsilon(1e-12));
    CHECK(poly_lr(500, cfg) == doctest::Approx(5.3589e-3).epsilon(1e-4));
    double prev = 1.0;
    for (int64_t t = 0; t <= 1000; t += 50) {
        CHECK(poly_lr(t, cfg) < prev);
        prev = poly_lr(t, cfg);
    }
}

TEST_CASE("sgd_step hand-computed updates and NaN abort") {
    ParamSet<float> ps;
    auto w = ps.add_param("w", Tensor<float>::from({1}, {1.0f}));
    std::vector<std::vector<float>> mom{{0.0f}};

    // zero gradient: parameters unchanged, momentum decays
    w.grad()[0] = 0.0f;
    mom[0][0] = 1.0f;
    sgd_step(ps, mom, 0.1, 0.9, 0.0);
    CHECK(w.data()[0] == doctest::Approx(1.0f - 0.1f * 0.9f));  // buffer decayed to 0.9
    CHECK(mom[0][0] == doctest::Approx(0.9f));

    // single step, no momentum: w = 1 - 0.1*1
    w.data()[0] = 1.0f;
    mom[0][0] = 0.0f;
    w.grad()[0] = 1.0f;
    sgd_step(ps, mom, 0.1, 0.0, 0.0);
    CHECK(w.data()[0] == doctest::Approx(0.9f));

    // two steps with momentum 0.9, constant grad 1: w = 1 - 0.1 - 0.1*1.9
    w.data()[0] = 1.0f;
    mom[0][0] = 0.0f;
    w.grad()[0] = 1.0f;
    sgd_step(ps, mom, 0.1, 0.9, 0.0);
    w.grad()[0] = 1.0f;
    sgd_step(ps, mom, 0.1, 0.9, 0.0);
    CHECK(w.data()[0] == doctest::Approx(0.71f));

    // gradients are zeroed afterwards
    CHECK(w.grad()[0] == 0.0f);

    w.grad()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(sgd_step(ps, mom, 0.1, 0.9, 0.0), doctest::Contains("w"), NumericError);
}

TEST_CASE("sample_batch: half labeled composition, determinism, uniformity") {
    const auto dataset = make_dataset("sampling", 12, 2, 2, 4);
    auto cfg = small_config(dataset, "");
    Trainer trainer(cfg);

    Rng rng(101);
    for (int i = 0; i < 10; ++i) {
        auto b = trainer.sample_batch(rng);
        CHECK(b.n_labeled == 2);
        CHECK(b.images.dim(0) == 4);
    }

    Rng r1(7), r2(7);
    auto b1 = trainer.sample_batch(r1);
    auto b2 = trainer.sample_batch(r2);
    CHECK(b1.images.data() == b2.images.data());
    CHECK(b1.labels.v == b2.labels.v);

    // selection frequency of each labeled slice within 3 sigma of uniform
    // (2 labeled volumes x 4 slices = 8 slices; identify by content hash)
    Trainer flat(cfg);
    Rng r3(11);
    std::map<size_t, int64_t> freq;
    const int64_t draws = 5000;
    auto t0cfg = cfg;
    t0cfg.max_angle_deg = 0;  // disable augmentation so slices hash stably
    t0cfg.flip_h = t0cfg.flip_v = false;
    Trainer plain(t0cfg);
    for (int64_t i = 0; i < draws; ++i) {
        auto b = plain.sample_batch(r3);
        for (int64_t s = 0; s < b.n_labeled; ++s) {
            size_t h = 1469598103934665603ull;
            for (int64_t j = 0; j < 64 * 64; ++j) {
                uint32_t bits;
                std::memcpy(&bits, &b.images.data()[(size_t)(s * 64 * 64 + j)], 4);
                h = (h ^ bits) * 1099511628211ull;
            }
            freq[h]++;
        }
    }
    CHECK(freq.size() == 8);
    const double n = (double)draws * 2;
    const double p = 1.0 / 8.0;
    const double sigma = std::sqrt(n * p * (1 - p));
    for (const auto& [h, count] : freq) CHECK(std::abs((double)count - n * p) <= 3 * sigma);
}

TEST_CASE("train_step: lambda gating, degenerate all-labeled split, FTimes") {
    // normal semi-supervised step at t=0: unsupervised contribution is tiny
    const auto dataset = make_dataset("step", 8, 2, 2, 4);
    auto cfg = small_config(dataset, "");
    cfg.t_total = 1000;
    Trainer trainer(cfg);
    auto batch = trainer.sample_batch(trainer.rng());
    auto rep = trainer.train_step(batch, 0);
    const double ctl = rep.ctl1 + rep.ctl2;
    CHECK(std::abs(rep.total - (rep.sup1 + rep.sup2)) <= 1e-3 * std::abs(ctl) + 1e-7);
    CHECK(rep.lambda == doctest::Approx(0.1 * std::exp(-5.0)));
    // every image passed both networks exactly once
    CHECK(rep.forwards == 2 * rep.images_consumed);
    CHECK((double)rep.forwards / (double)rep.images_consumed == 2.0);

    // all-labeled degenerate split: the unsupervised term is absent
    const auto sup_dataset = make_dataset("alllabeled", 3, 2, 1, 4);
    Trainer sup_trainer(small_config(sup_dataset, ""));
    auto sup_batch = sup_trainer.sample_batch(sup_trainer.rng());
    CHECK(sup_batch.n_labeled == sup_batch.images.dim(0));
    auto sup_rep = sup_trainer.train_step(sup_batch, 0);
    CHECK(sup_rep.ctl1 == 0.0);
    CHECK(sup_rep.ctl2 == 0.0);
    CHECK(sup_rep.total == doctest::Approx(sup_rep.sup1 + sup_rep.sup2).epsilon(1e-6));

    // LS baseline: one forward per labeled image, unlabeled not consumed
    auto ls_cfg = small_config(dataset, "");
    ls_cfg.mode = SupervisionMode::LS;
    Trainer ls(ls_cfg);
    auto ls_batch = ls.sample_batch(ls.rng());
    auto ls_rep = ls.train_step(ls_batch, 0);
    CHECK(ls_rep.images_consumed == 2);
    CHECK(ls_rep.forwards == 2);
    CHECK(ls_rep.sup2 == 0.0);
}

TEST_CASE("train_step: loss decreases over a short fully-supervised run") {
    const auto dataset = make_dataset("learn", 3, 2, 1, 4);
    auto cfg = small_config(dataset, "");
    cfg.mode = SupervisionMode::LS;
    cfg.t_total = 60;
    cfg.max_angle_deg = 0;
    cfg.flip_h = cfg.flip_v = false;
    Trainer trainer(cfg);
    double first = 0, last = 0;
    for (int64_t t = 0; t < 60; ++t) {
        auto rep = trainer.train_step(trainer.sample_batch(trainer.rng()), t);
        if (t == 0) first = rep.total;
        last = rep.total;
    }
    CHECK(last < 0.7 * first);
}

TEST_CASE("run_training: smoke run writes the full contract") {
    const auto dataset = make_dataset("smoke", 6, 2, 2, 4);
    const auto out = (fs::temp_directory_path() / "ct_trainer_tests" / "smoke_run").string();
    fs::remove_all(out);
    auto cfg = small_config(dataset, out);
    Trainer trainer(cfg);
    auto counters = trainer.run_training();
    CHECK(counters.ftimes_per_iter == doctest::Approx(2.0));

    // exactly: config echo, checkpoint, timeline, metrics
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(out)) files.push_back(e.path().filename().string());
    std::sort(files.begin(), files.end());
    CHECK(files == std::vector<std::string>{"checkpoint.xtck", "config.txt", "metrics.csv",
                                            "timeline.csv"});

    // timeline: header + one row per iteration; lr decreasing, lambda increasing
    std::ifstream tl(out + "/timeline.csv");
    std::string line;
    std::getline(tl, line);
    CHECK(line ==
          "iter,lr,lambda,loss_sup_cnn,loss_sup_trans,loss_ctl_cnn,loss_ctl_trans,"
          "val_dsc_mean,val_dsc_c1,val_dsc_c2,val_dsc_c3");
    int rows = 0;
    double prev_lr = 1e9, prev_lambda = -1;
    while (std::getline(tl, line)) {
        ++rows;
        std::istringstream ls(line);
        std::string iter, lr, lambda;
        std::getline(ls, iter, ',');
        std::getline(ls, lr, ',');
        std::getline(ls, lambda, ',');
        CHECK(std::stod(lr) < prev_lr);
        CHECK(std::stod(lambda) > prev_lambda);
        prev_lr = std::stod(lr);
        prev_lambda = std::stod(lambda);
    }
    CHECK(rows == 10);

    // metrics.csv uses the spec schema
    std::ifstream mf(out + "/metrics.csv");
    std::getline(mf, line);
    CHECK(line == "volume,category,dsc,hd95");

    // config echo parses back to the same mode
    auto echoed = Config::parse_file(out + "/config.txt");
    CHECK(echoed.get("train.mode") == "CNN_TRANS_CT");
}

TEST_CASE("run_training: interrupted run resumes bit-identically") {
    const auto dataset = make_dataset("resume", 6, 2, 2, 4);
    const auto out_full = (fs::temp_directory_path() / "ct_trainer_tests" / "full_run").string();
    const auto out_resume = (fs::temp_directory_path() / "ct_trainer_tests" / "resumed_run").string();
    fs::remove_all(out_full);
    fs::remove_all(out_resume);

    auto cfg = small_config(dataset, out_full);
    cfg.t_total = 12;
    cfg.checkpoint_every = 4;
    Trainer full(cfg);
    full.run_training();

    auto cfg2 = cfg;
    cfg2.out_dir = out_resume;
    Trainer interrupted(cfg2);
    interrupted.run_training(false, /*stop_after_iters=*/7);  // dies between checkpoints
    Trainer resumed(cfg2);
    resumed.run_training(true);

    CHECK(read_file(out_full + "/checkpoint.xtck") != "");
    CHECK(read_file(out_full + "/timeline.csv") == read_file(out_resume + "/timeline.csv"));

    // checkpoints differ only in the echoed out_dir inside the manifest;
    // compare the arrays and iteration instead of raw bytes
    auto a = load_checkpoint(out_full + "/checkpoint.xtck");
    auto b = load_checkpoint(out_resume + "/checkpoint.xtck");
    REQUIRE(a.arrays.size() == b.arrays.size());
    for (size_t i = 0; i < a.arrays.size(); ++i) {
        CHECK(a.arrays[i].first == b.arrays[i].first);
        CHECK(a.arrays[i].second.data() == b.arrays[i].second.data());
    }
    CHECK(a.manifest.substr(0, a.manifest.find("out_dir")) ==
          b.manifest.substr(0, b.manifest.find("out_dir")));
}

namespace {

// Fixed-logit stub for exercising the ensemble rule without training.
class FixedLogits : public ModelHandle<float> {
public:
    FixedLogits(Paradigm p, std::vector<float> per_class_logits)
        : logits_(std::move(per_class_logits)) {
        params_.set_paradigm(p);
    }
    Tensor<float> forward(const Tensor<float>& batch, bool, bool) override {
        count_forward(batch.dim(0));
        const int64_t N = batch.dim(0), H = batch.dim(2), W = batch.dim(3);
        const int64_t K = (int64_t)logits_.size();
        Tensor<float> out = Tensor<float>::zeros({N, K, H, W});
        for (int64_t n = 0; n < N; ++n)
            for (int64_t k = 0; k < K; ++k)
                for (int64_t i = 0; i < H * W; ++i)
                    out.data()[(size_t)((n * K + k) * H * W + i)] = logits_[(size_t)k];
        return out;
    }
    std::vector<std::string> layer_list() const override { return {"fixed"}; }
    std::string config_echo() const override { return ""; }

private:
    std::vector<float> logits_;
};

}  // namespace

TEST_CASE("infer_volume: branch agreement, ensemble average, tie rule") {
    PhantomParams params;
    params.slices_per_volume = 2;
    auto vol = generate_phantom(params, 0);

    // p1 = softmax([ln .6, ln .4]) = [0.6, 0.4]; p2 = [0.2, 0.8] -> mean favours class 1
    FixedLogits m1(Paradigm::CNN, {std::log(0.6f), std::log(0.4f)});
    FixedLogits m2(Paradigm::TRANSFORMER, {std::log(0.2f), std::log(0.8f)});
    auto ens = infer_volume(&m1, &m2, vol, PredSource::ENSEMBLE);
    for (uint8_t l : ens.labels) CHECK(l == 1);

    // mean [0.5, 0.5] -> tie resolves to the lower category
    FixedLogits m3(Paradigm::TRANSFORMER, {std::log(0.4f), std::log(0.6f)});
    auto tie = infer_volume(&m1, &m3, vol, PredSource::ENSEMBLE);
    for (uint8_t l : tie.labels) CHECK(l == 0);

    // where branches agree, the ensemble agrees with both
    auto b1 = infer_volume(&m1, &m3, vol, PredSource::CNN_BRANCH);
    auto b2 = infer_volume(&m1, &m3, vol, PredSource::TRANS_BRANCH);
    FixedLogits m4(Paradigm::TRANSFORMER, {std::log(0.7f), std::log(0.3f)});
    auto agree_ens = infer_volume(&m1, &m4, vol, PredSource::ENSEMBLE);
    auto agree_b1 = infer_volume(&m1, &m4, vol, PredSource::CNN_BRANCH);
    for (size_t i = 0; i < agree_ens.labels.size(); ++i)
        if (agree_b1.labels[i] == infer_volume(&m4, nullptr, vol, PredSource::CNN_BRANCH).labels[i])
            CHECK(agree_ens.labels[i] == agree_b1.labels[i]);
    (void)b1;
    (void)b2;
}

TEST_CASE("cross-teaching step: first-branch gradients are independent of the second branch's terms") {
    const auto dataset = make_dataset("isolation", 8, 2, 2, 4);
    auto cfg = small_config(dataset, "");
    cfg.t_total = 100;

    // same seed twice: identical init, identical batch
    Trainer a(cfg), b(cfg);
    auto batch_a = a.sample_batch(a.rng());
    auto batch_b = b.sample_batch(b.rng());
    REQUIRE(batch_a.images.data() == batch_b.images.data());

    const int64_t t = 5;
    const double lambda = lambda_weight({t, cfg.t_total});
    const int64_t n_lab = batch_a.n_labeled;
    const int64_t K = cfg.unet.num_classes;

    auto grads_of = [](ModelHandle<float>& m) {
        std::vector<std::vector<float>> out;
        for (auto& kv : m.params().params()) out.push_back(kv.second.grad_view());
        return out;
    };

    // full objective on trainer a
    {
        GradTape<float> tape;
        TapeScope<float> scope(tape);
        Labels lab;
        lab.shape = {n_lab, cfg.crop, cfg.crop};
        lab.v.assign(batch_a.labels.v.begin(), batch_a.labels.v.begin() + n_lab * cfg.crop * cfg.crop);
        auto p1 = softmax(a.model1()->forward(batch_a.images, true, false), 1);
        auto p2 = softmax(a.model2()->forward(batch_a.images, true, false), 1);
        auto sup1 = add(ce_loss(narrow(p1, 0, 0, n_lab), lab),
                        dice_loss(narrow(p1, 0, 0, n_lab), onehot<float>(lab, K)));
        auto sup2 = add(ce_loss(narrow(p2, 0, 0, n_lab), lab),
                        dice_loss(narrow(p2, 0, 0, n_lab), onehot<float>(lab, K)));
        auto [t1, t2] = cross_teaching_loss(narrow(p1, 0, n_lab, 2), narrow(p2, 0, n_lab, 2),
                                            LossKind::DICE);
        auto total = add(add(sup1, sup2), mul_scalar(add(t1, t2), (float)lambda));
        tape.backward(total);
    }
    // only the first branch's own terms on trainer b
    {
        GradTape<float> tape;
        TapeScope<float> scope(tape);
        Labels lab;
        lab.shape = {n_lab, cfg.crop, cfg.crop};
        lab.v.assign(batch_b.labels.v.begin(), batch_b.labels.v.begin() + n_lab * cfg.crop * cfg.crop);
        auto p1 = softmax(b.model1()->forward(batch_b.images, true, false), 1);
        auto p2 = softmax(b.model2()->forward(batch_b.images, true, false), 1);
        auto sup1 = add(ce_loss(narrow(p1, 0, 0, n_lab), lab),
                        dice_loss(narrow(p1, 0, 0, n_lab), onehot<float>(lab, K)));
        auto [t1, t2] = cross_teaching_loss(narrow(p1, 0, n_lab, 2), narrow(p2, 0, n_lab, 2),
                                            LossKind::DICE);
        (void)t2;
        auto partial = add(sup1, mul_scalar(t1, (float)lambda));
        tape.backward(partial);
    }
    // identical gradients on every first-branch parameter
    auto ga = grads_of(*a.model1());
    auto gb = grads_of(*b.model1());
    REQUIRE(ga.size() == gb.size());
    for (size_t i = 0; i < ga.size(); ++i) CHECK(ga[i] == gb[i]);
}
