#pragma once

#include <memory>
#include <string>
#include <vector>

#include "config.hpp"
#include "ct/losses.hpp"
#include "ct/model.hpp"
#include "ct/swin.hpp"
#include "ct/unet.hpp"
#include "eval.hpp"
#include "phantom.hpp"

namespace ct {

struct TrainConfig {
    SupervisionMode mode = SupervisionMode::CNN_TRANS_CT;
    LossKind ct_loss = LossKind::DICE;
    int64_t batch_size = 4;  // half labeled, half unlabeled
    double base_lr = 0.01;
    double lr_power = 0.9;
    int64_t t_total = 2000;
    uint64_t seed = 1;
    std::string dataset_dir;
    std::string out_dir;
    int64_t eval_every = 200;
    int64_t checkpoint_every = 500;

    // augmentation; crop equal to the grid disables cropping
    int64_t crop = 64;
    double max_angle_deg = 25.0;
    bool flip_h = true;
    bool flip_v = true;

    double momentum = 0.9;
    double weight_decay = 1e-4;
    bool ctl_on_labeled_too = false;   // apply the unsupervised term to the whole batch
    bool average_sup_losses = false;   // average instead of summing the two supervised terms
    bool dice_include_background = false;
    Paradigm ls_paradigm = Paradigm::CNN;
    int64_t labeled_count = 0;  // 0 = take the split from the dataset manifest

    MiniUNetConfig unet;
    MiniSwinConfig swin;

    static TrainConfig from_config(const Config& c);
    Config to_config() const;
};

double poly_lr(int64_t t, const TrainConfig& cfg);

SupervisionMode mode_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);

// Classic momentum SGD over a ParamSet; gradients are zeroed after the step.
// A non-finite gradient aborts with the parameter's name.
void sgd_step(ParamSet<float>& params, std::vector<std::vector<float>>& momentum_buffers,
              double lr, double momentum, double weight_decay);

struct Dataset {
    std::vector<Volume> volumes;  // indexed by volume id
    SplitManifest split;
    int64_t height = 0, width = 0, slices = 0;

    static Dataset load(const std::string& dir);
};

struct SampledBatch {
    Tensor<float> images;  // [N,1,S,S], labeled slices first
    Labels labels;         // ground truth for the labeled half; zeros elsewhere
    int64_t n_labeled = 0;
};

struct StepReport {
    double lr = 0, lambda = 0;
    double sup1 = 0, sup2 = 0;
    double ctl1 = 0, ctl2 = 0;
    double total = 0;
    int64_t images_consumed = 0;
    int64_t forwards = 0;  // image passes through any network this step
};

struct RunCounters {
    double ftimes_per_iter = 0;
    double wall_train_seconds = 0;
    double per_case_infer_seconds = 0;
};

class Trainer {
public:
    explicit Trainer(TrainConfig cfg);

    // Uniform with replacement: batch_size/2 labeled + batch_size/2 unlabeled
    // slices, augmented. With an empty unlabeled pool the whole batch is
    // labeled (degenerate fully-supervised split).
    SampledBatch sample_batch(Rng& rng) const;

    StepReport train_step(const SampledBatch& batch, int64_t t);

    // Full loop: timeline.csv, periodic eval, latest-checkpoint persistence.
    // With resume=true continues bit-exactly from the checkpoint in out_dir.
    // stop_after_iters >= 0 aborts after that many total iterations without
    // final metrics, leaving on-disk state as an interrupted run would.
    RunCounters run_training(bool resume = false, int64_t stop_after_iters = -1);

    ModelHandle<float>* model1() { return m1_.get(); }
    ModelHandle<float>* model2() { return m2_.get(); }
    const TrainConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return data_; }
    Rng& rng() { return rng_; }

    // Mean validation DSC per foreground category for the first branch.
    std::vector<double> validation_dsc();

    // Aggregated final metrics from the last completed run_training call.
    const MetricsReport& last_report() const { return last_report_; }

    void save_checkpoint_file(const std::string& path, int64_t next_iter) const;
    int64_t load_checkpoint_file(const std::string& path);

private:
    bool two_models() const { return cfg_.mode != SupervisionMode::LS; }

    TrainConfig cfg_;
    Dataset data_;
    std::unique_ptr<ModelHandle<float>> m1_, m2_;
    std::vector<std::vector<float>> mom1_, mom2_;
    std::vector<std::pair<int64_t, int64_t>> labeled_pool_, unlabeled_pool_;  // (volume, slice)
    Rng rng_;
    MetricsReport last_report_;
};

}  // namespace ct
