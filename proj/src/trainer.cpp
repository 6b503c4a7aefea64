#include "trainer.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ct/checkpoint.hpp"
#include "ct/tape.hpp"

namespace fs = std::filesystem;

namespace ct {

SupervisionMode mode_from_string(const std::string& s) {
    if (s == "CNN_TRANS_CT") return SupervisionMode::CNN_TRANS_CT;
    if (s == "CNN_CNN_CT") return SupervisionMode::CNN_CNN_CT;
    if (s == "TRANS_TRANS_CT") return SupervisionMode::TRANS_TRANS_CT;
    if (s == "CNN_TRANS_CR") return SupervisionMode::CNN_TRANS_CR;
    if (s == "LS") return SupervisionMode::LS;
    throw ConfigError("unknown supervision mode: " + s);
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "CE") return LossKind::CE;
    if (s == "DICE") return LossKind::DICE;
    if (s == "CE_PLUS_DICE") return LossKind::CE_PLUS_DICE;
    throw ConfigError("unknown cross-teaching loss: " + s);
}

TrainConfig TrainConfig::from_config(const Config& c) {
    TrainConfig t;
    t.mode = mode_from_string(c.get_or("train.mode", "CNN_TRANS_CT"));
    t.ct_loss = loss_kind_from_string(c.get_or("train.ct_loss", "DICE"));
    t.batch_size = c.get_int_or("train.batch_size", 4);
    if (t.batch_size < 2 || t.batch_size % 2 != 0)
        throw ConfigError("train.batch_size must be even and >= 2");
    t.base_lr = c.get_double_or("train.base_lr", 0.01);
    t.lr_power = c.get_double_or("train.lr_power", 0.9);
    t.t_total = c.get_int_or("train.t_total", 2000);
    if (t.t_total <= 0) throw ConfigError("train.t_total must be positive");
    t.seed = (uint64_t)c.get_int_or("train.seed", 1);
    t.dataset_dir = c.get_or("train.dataset_dir", "");
    t.out_dir = c.get_or("train.out_dir", "");
    t.eval_every = c.get_int_or("train.eval_every", 200);
    t.checkpoint_every = c.get_int_or("train.checkpoint_every", 500);
    t.crop = c.get_int_or("train.crop", 64);
    t.max_angle_deg = c.get_double_or("train.max_angle_deg", 25.0);
    t.flip_h = c.get_bool_or("train.flip_h", true);
    t.flip_v = c.get_bool_or("train.flip_v", true);
    t.momentum = c.get_double_or("train.momentum", 0.9);
    t.weight_decay = c.get_double_or("train.weight_decay", 1e-4);
    t.ctl_on_labeled_too = c.get_bool_or("train.ctl_on_labeled_too", false);
    t.average_sup_losses = c.get_bool_or("train.average_sup_losses", false);
    t.dice_include_background = c.get_bool_or("train.dice_include_background", false);
    t.ls_paradigm = c.get_or("train.ls_paradigm", "CNN") == "TRANSFORMER" ? Paradigm::TRANSFORMER
                                                                          : Paradigm::CNN;
    t.labeled_count = c.get_int_or("train.labeled_count", 0);
    t.unet.in_channels = c.get_int_or("unet.in_channels", 1);
    t.unet.num_classes = c.get_int_or("unet.num_classes", 4);
    t.unet.base_channels = c.get_int_or("unet.base_channels", 16);
    t.unet.depth = c.get_int_or("unet.depth", 3);
    t.swin.in_channels = c.get_int_or("swin.in_channels", 1);
    t.swin.num_classes = c.get_int_or("swin.num_classes", 4);
    t.swin.patch_size = c.get_int_or("swin.patch_size", 4);
    t.swin.embed_dim = c.get_int_or("swin.embed_dim", 24);
    t.swin.depths = c.get_int_list_or("swin.depths", {2, 2});
    t.swin.num_heads = c.get_int_list_or("swin.num_heads", {3, 3});
    t.swin.window = c.get_int_or("swin.window", 4);
    t.swin.mlp_ratio = c.get_double_or("swin.mlp_ratio", 2.0);
    return t;
}

Config TrainConfig::to_config() const {
    Config c;
    c.set("train.mode", mode_name(mode));
    c.set("train.ct_loss", loss_kind_name(ct_loss));
    c.set_int("train.batch_size", batch_size);
    c.set_double("train.base_lr", base_lr);
    c.set_double("train.lr_power", lr_power);
    c.set_int("train.t_total", t_total);
    c.set_int("train.seed", (int64_t)seed);
    c.set("train.dataset_dir", dataset_dir);
    c.set("train.out_dir", out_dir);
    c.set_int("train.eval_every", eval_every);
    c.set_int("train.checkpoint_every", checkpoint_every);
    c.set_int("train.crop", crop);
    c.set_double("train.max_angle_deg", max_angle_deg);
    c.set("train.flip_h", flip_h ? "true" : "false");
    c.set("train.flip_v", flip_v ? "true" : "false");
    c.set_double("train.momentum", momentum);
    c.set_double("train.weight_decay", weight_decay);
    c.set("train.ctl_on_labeled_too", ctl_on_labeled_too ? "true" : "false");
    c.set("train.average_sup_losses", average_sup_losses ? "true" : "false");
    c.set("train.dice_include_background", dice_include_background ? "true" : "false");
    c.set("train.ls_paradigm", paradigm_name(ls_paradigm));
    c.set_int("train.labeled_count", labeled_count);
    c.set_int("unet.in_channels", unet.in_channels);
    c.set_int("unet.num_classes", unet.num_classes);
    c.set_int("unet.base_channels", unet.base_channels);
    c.set_int("unet.depth", unet.depth);
    c.set_int("swin.in_channels", swin.in_channels);
    c.set_int("swin.num_classes", swin.num_classes);
    c.set_int("swin.patch_size", swin.patch_size);
    c.set_int("swin.embed_dim", swin.embed_dim);
    {
        std::ostringstream os;
        for (size_t i = 0; i < swin.depths.size(); ++i) os << (i ? "," : "") << swin.depths[i];
        c.set("swin.depths", os.str());
        std::ostringstream oh;
        for (size_t i = 0; i < swin.num_heads.size(); ++i) oh << (i ? "," : "") << swin.num_heads[i];
        c.set("swin.num_heads", oh.str());
    }
    c.set_int("swin.window", swin.window);
    c.set_double("swin.mlp_ratio", swin.mlp_ratio);
    return c;
}

double poly_lr(int64_t t, const TrainConfig& cfg) {
    if (t < 0 || t > cfg.t_total) throw ConfigError("poly_lr: t outside [0, t_total]");
    return cfg.base_lr * std::pow(1.0 - (double)t / (double)cfg.t_total, cfg.lr_power);
}

void sgd_step(ParamSet<float>& params, std::vector<std::vector<float>>& momentum_buffers,
              double lr, double momentum, double weight_decay) {
    if (momentum_buffers.size() != params.params().size())
        throw ConfigError("sgd_step: momentum buffers not initialized");
    for (size_t pi = 0; pi < params.params().size(); ++pi) {
        auto& [name, p] = params.params()[pi];
        auto& buf = momentum_buffers[pi];
        auto& grad = p.grad();
        auto& data = p.data();
        for (size_t i = 0; i < data.size(); ++i) {
            const float g = grad[i];
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in parameter " + name);
            const float step = g + (float)weight_decay * data[i];
            buf[i] = (float)momentum * buf[i] + step;
            data[i] -= (float)lr * buf[i];
        }
        std::fill(grad.begin(), grad.end(), 0.0f);
    }
}

Dataset Dataset::load(const std::string& dir) {
    Dataset d;
    d.split = load_manifest((fs::path(dir) / "splits.txt").string());
    int64_t max_id = -1;
    auto consider = [&](const std::vector<int64_t>& ids) {
        for (int64_t id : ids) max_id = std::max(max_id, id);
    };
    consider(d.split.labeled);
    consider(d.split.unlabeled);
    consider(d.split.validation);
    if (max_id < 0) throw ConfigError("dataset manifest is empty: " + dir);
    d.volumes.resize((size_t)max_id + 1);
    auto load_ids = [&](const std::vector<int64_t>& ids) {
        for (int64_t id : ids) {
            char name[32];
            std::snprintf(name, sizeof name, "vol_%03lld.xtv", (long long)id);
            d.volumes[(size_t)id] = load_volume((fs::path(dir) / name).string());
        }
    };
    load_ids(d.split.labeled);
    load_ids(d.split.unlabeled);
    load_ids(d.split.validation);
    const Volume& first = d.volumes[(size_t)(d.split.labeled.empty() ? d.split.validation[0]
                                                                     : d.split.labeled[0])];
    d.height = first.height;
    d.width = first.width;
    d.slices = first.depth;
    return d;
}

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)), data_(Dataset::load(cfg_.dataset_dir)),
      rng_(derive_seed(cfg_.seed, 1000)) {
    if (cfg_.labeled_count > 0 &&
        cfg_.labeled_count != (int64_t)data_.split.labeled.size()) {
        const int64_t total = (int64_t)(data_.split.labeled.size() + data_.split.unlabeled.size() +
                                        data_.split.validation.size());
        data_.split = make_splits(total, cfg_.labeled_count,
                                  (int64_t)data_.split.validation.size(), data_.split.seed);
    }
    const uint64_t s1 = derive_seed(cfg_.seed, 1);
    const uint64_t s2 = derive_seed(cfg_.seed, 2);
    switch (cfg_.mode) {
        case SupervisionMode::CNN_TRANS_CT:
        case SupervisionMode::CNN_TRANS_CR:
            m1_ = std::make_unique<MiniUNet<float>>(cfg_.unet, s1);
            m2_ = std::make_unique<MiniSwinUNet<float>>(cfg_.swin, s2);
            break;
        case SupervisionMode::CNN_CNN_CT:
            m1_ = std::make_unique<MiniUNet<float>>(cfg_.unet, s1);
            m2_ = std::make_unique<MiniUNet<float>>(cfg_.unet, s2);
            break;
        case SupervisionMode::TRANS_TRANS_CT:
            m1_ = std::make_unique<MiniSwinUNet<float>>(cfg_.swin, s1);
            m2_ = std::make_unique<MiniSwinUNet<float>>(cfg_.swin, s2);
            break;
        case SupervisionMode::LS:
            if (cfg_.ls_paradigm == Paradigm::CNN)
                m1_ = std::make_unique<MiniUNet<float>>(cfg_.unet, s1);
            else
                m1_ = std::make_unique<MiniSwinUNet<float>>(cfg_.swin, s1);
            break;
    }
    auto init_buffers = [](ModelHandle<float>& m, std::vector<std::vector<float>>& bufs) {
        bufs.clear();
        for (auto& kv : m.params().params())
            bufs.emplace_back(kv.second.data().size(), 0.0f);
    };
    init_buffers(*m1_, mom1_);
    if (m2_) init_buffers(*m2_, mom2_);

    for (int64_t id : data_.split.labeled)
        for (int64_t z = 0; z < data_.volumes[(size_t)id].depth; ++z)
            labeled_pool_.push_back({id, z});
    for (int64_t id : data_.split.unlabeled)
        for (int64_t z = 0; z < data_.volumes[(size_t)id].depth; ++z)
            unlabeled_pool_.push_back({id, z});
    if (labeled_pool_.empty()) throw ConfigError("trainer: labeled pool is empty");
}

SampledBatch Trainer::sample_batch(Rng& rng) const {
    const int64_t half = cfg_.batch_size / 2;
    const bool degenerate = unlabeled_pool_.empty();  // fully supervised
    const int64_t n_lab = degenerate ? cfg_.batch_size : half;
    const int64_t n_unl = degenerate ? 0 : half;

    std::vector<std::pair<int64_t, int64_t>> picks;
    for (int64_t i = 0; i < n_lab; ++i)
        picks.push_back(labeled_pool_[(size_t)rng.index((int64_t)labeled_pool_.size())]);
    for (int64_t i = 0; i < n_unl; ++i)
        picks.push_back(unlabeled_pool_[(size_t)rng.index((int64_t)unlabeled_pool_.size())]);

    const int64_t S = cfg_.crop;
    AugmentConfig acfg;
    acfg.crop = S;
    acfg.max_angle_deg = cfg_.max_angle_deg;
    acfg.flip_h = cfg_.flip_h;
    acfg.flip_v = cfg_.flip_v;

    SampledBatch batch;
    batch.n_labeled = n_lab;
    batch.images = Tensor<float>::zeros({(int64_t)picks.size(), 1, S, S});
    batch.labels.shape = {(int64_t)picks.size(), S, S};
    batch.labels.v.assign((size_t)((int64_t)picks.size() * S * S), 0);

    std::vector<float> img;
    std::vector<uint8_t> lab;
    for (size_t i = 0; i < picks.size(); ++i) {
        const Volume& vol = data_.volumes[(size_t)picks[i].first];
        const int64_t z = picks[i].second;
        const int64_t HW = vol.height * vol.width;
        std::vector<float> slice_img(vol.image.begin() + z * HW, vol.image.begin() + (z + 1) * HW);
        std::vector<uint8_t> slice_lab(vol.label.begin() + z * HW, vol.label.begin() + (z + 1) * HW);
        augment(slice_img, slice_lab, vol.height, vol.width, acfg, rng, img, lab);
        std::copy(img.begin(), img.end(), batch.images.data().begin() + (int64_t)i * S * S);
        for (int64_t j = 0; j < S * S; ++j)
            batch.labels.v[(size_t)((int64_t)i * S * S + j)] = lab[(size_t)j];
    }
    return batch;
}

StepReport Trainer::train_step(const SampledBatch& batch, int64_t t) {
    StepReport rep;
    rep.lr = poly_lr(t, cfg_);
    rep.lambda = lambda_weight({t, cfg_.t_total});

    const int64_t n_total = batch.images.dim(0);
    const int64_t n_lab = batch.n_labeled;
    const int64_t n_unl = n_total - n_lab;
    const int64_t K = cfg_.unet.num_classes;
    const int64_t S = batch.images.dim(2);

    Labels labels_l;
    labels_l.shape = {n_lab, S, S};
    labels_l.v.assign(batch.labels.v.begin(), batch.labels.v.begin() + n_lab * S * S);

    const int64_t fwd_before =
        m1_->images_forwarded() + (m2_ ? m2_->images_forwarded() : 0);

    GradTape<float> tape;
    {
        TapeScope<float> scope(tape);

        auto sup_of = [&](const Tensor<float>& probs_l) {
            Tensor<float> ce = ce_loss(probs_l, labels_l);
            Tensor<float> dl = dice_loss(probs_l, onehot<float>(labels_l, K), 1e-5f,
                                         cfg_.dice_include_background);
            return add(ce, dl);
        };

        Tensor<float> total;
        if (cfg_.mode == SupervisionMode::LS) {
            Tensor<float> images_l = narrow(batch.images, 0, 0, n_lab);
            Tensor<float> probs = softmax(m1_->forward(images_l, true), 1);
            Tensor<float> sup = sup_of(probs);
            rep.sup1 = sup.item();
            total = sup;
        } else {
            Tensor<float> probs1 = softmax(m1_->forward(batch.images, true), 1);
            Tensor<float> probs2 = softmax(m2_->forward(batch.images, true), 1);
            Tensor<float> sup1 = sup_of(narrow(probs1, 0, 0, n_lab));
            Tensor<float> sup2 = sup_of(narrow(probs2, 0, 0, n_lab));
            rep.sup1 = sup1.item();
            rep.sup2 = sup2.item();
            Tensor<float> sup = add(sup1, sup2);
            if (cfg_.average_sup_losses) sup = mul_scalar(sup, 0.5f);

            Tensor<float> unsup;
            const int64_t u_start = cfg_.ctl_on_labeled_too ? 0 : n_lab;
            const int64_t u_len = cfg_.ctl_on_labeled_too ? n_total : n_unl;
            if (u_len > 0) {
                Tensor<float> u1 = narrow(probs1, 0, u_start, u_len);
                Tensor<float> u2 = narrow(probs2, 0, u_start, u_len);
                if (cfg_.mode == SupervisionMode::CNN_TRANS_CR) {
                    unsup = consistency_loss(u1, u2);
                    rep.ctl1 = unsup.item();
                } else {
                    auto [t1, t2] = cross_teaching_loss(u1, u2, cfg_.ct_loss);
                    rep.ctl1 = t1.item();
                    rep.ctl2 = t2.item();
                    unsup = add(t1, t2);
                }
            }
            total = unsup.defined() ? add(sup, mul_scalar(unsup, (float)rep.lambda)) : sup;
        }
        rep.total = total.item();
        tape.backward(total);
    }

    sgd_step(m1_->params(), mom1_, rep.lr, cfg_.momentum, cfg_.weight_decay);
    if (m2_) sgd_step(m2_->params(), mom2_, rep.lr, cfg_.momentum, cfg_.weight_decay);

    rep.images_consumed = cfg_.mode == SupervisionMode::LS ? n_lab : n_total;
    rep.forwards = m1_->images_forwarded() + (m2_ ? m2_->images_forwarded() : 0) - fwd_before;
    return rep;
}

std::vector<double> Trainer::validation_dsc() {
    const int64_t K = cfg_.unet.num_classes;
    std::vector<double> acc((size_t)K, 0.0);
    for (int64_t id : data_.split.validation) {
        const Volume& vol = data_.volumes[(size_t)id];
        auto pred = infer_volume(m1_.get(), m2_.get(), vol, PredSource::CNN_BRANCH);
        auto vm = evaluate_prediction(pred, vol, K, /*with_hd=*/false);
        for (int64_t k = 1; k < K; ++k) acc[(size_t)k] += vm.dsc[(size_t)k];
    }
    const double n = (double)data_.split.validation.size();
    for (auto& v : acc) v /= n;
    return acc;  // index 0 unused
}

void Trainer::save_checkpoint_file(const std::string& path, int64_t next_iter) const {
    CheckpointData ckpt;
    std::ostringstream man;
    man << "iteration = " << next_iter << "\n";
    man << "rng = " << rng_.serialize() << "\n";
    man << cfg_.to_config().serialize();
    ckpt.manifest = man.str();
    append_param_arrays(m1_->params(), "m1.", ckpt);
    for (size_t i = 0; i < mom1_.size(); ++i)
        ckpt.arrays.emplace_back("opt1." + m1_->params().params()[i].first,
                                 Tensor<float>::from({(int64_t)mom1_[i].size()}, mom1_[i]));
    if (m2_) {
        append_param_arrays(m2_->params(), "m2.", ckpt);
        for (size_t i = 0; i < mom2_.size(); ++i)
            ckpt.arrays.emplace_back("opt2." + m2_->params().params()[i].first,
                                     Tensor<float>::from({(int64_t)mom2_[i].size()}, mom2_[i]));
    }
    save_checkpoint(path, ckpt);
}

int64_t Trainer::load_checkpoint_file(const std::string& path) {
    CheckpointData ckpt = load_checkpoint(path);
    int64_t iter = -1;
    std::istringstream man(ckpt.manifest);
    std::string line;
    while (std::getline(man, line)) {
        if (line.rfind("iteration = ", 0) == 0) iter = std::stoll(line.substr(12));
        if (line.rfind("rng = ", 0) == 0) rng_.deserialize(line.substr(6));
    }
    if (iter < 0) throw IoError("checkpoint manifest lacks an iteration: " + path);
    restore_param_arrays(m1_->params(), "m1.", ckpt);
    for (size_t i = 0; i < mom1_.size(); ++i) {
        const Tensor<float>* t = ckpt.find("opt1." + m1_->params().params()[i].first);
        if (!t) throw IoError("checkpoint missing optimizer state opt1." +
                              m1_->params().params()[i].first);
        mom1_[i] = t->data();
    }
    if (m2_) {
        restore_param_arrays(m2_->params(), "m2.", ckpt);
        for (size_t i = 0; i < mom2_.size(); ++i) {
            const Tensor<float>* t = ckpt.find("opt2." + m2_->params().params()[i].first);
            if (!t) throw IoError("checkpoint missing optimizer state opt2." +
                                  m2_->params().params()[i].first);
            mom2_[i] = t->data();
        }
    }
    return iter;
}

RunCounters Trainer::run_training(bool resume, int64_t stop_after_iters) {
    if (cfg_.out_dir.empty()) throw ConfigError("train.out_dir is required");
    fs::create_directories(cfg_.out_dir);
    const std::string ckpt_path = (fs::path(cfg_.out_dir) / "checkpoint.xtck").string();
    const std::string timeline_path = (fs::path(cfg_.out_dir) / "timeline.csv").string();
    const std::string config_path = (fs::path(cfg_.out_dir) / "config.txt").string();
    const std::string metrics_path = (fs::path(cfg_.out_dir) / "metrics.csv").string();

    static const char* kHeader =
        "iter,lr,lambda,loss_sup_cnn,loss_sup_trans,loss_ctl_cnn,loss_ctl_trans,"
        "val_dsc_mean,val_dsc_c1,val_dsc_c2,val_dsc_c3";

    int64_t start = 0;
    if (resume) {
        if (!fs::exists(ckpt_path)) throw IoError("resume requested but no checkpoint at " + ckpt_path);
        start = load_checkpoint_file(ckpt_path);
        // truncate the timeline to the checkpointed iteration
        std::ifstream in(timeline_path);
        if (!in) throw IoError("resume: cannot open " + timeline_path);
        std::string line;
        std::vector<std::string> keep;
        while (std::getline(in, line)) keep.push_back(line);
        in.close();
        const size_t want = (size_t)start + 1;  // header + start rows
        if (keep.size() < want) throw IoError("resume: timeline shorter than checkpoint iteration");
        keep.resize(want);
        std::ofstream out(timeline_path, std::ios::trunc);
        for (const auto& l : keep) out << l << "\n";
    } else {
        std::ofstream cfg_echo(config_path, std::ios::trunc);
        cfg_echo << cfg_.to_config().serialize();
        std::ofstream tl(timeline_path, std::ios::trunc);
        tl << kHeader << "\n";
    }

    std::ofstream tl(timeline_path, std::ios::app);
    if (!tl) throw IoError("cannot open " + timeline_path);
    char buf[512];

    const auto wall_start = std::chrono::steady_clock::now();
    double ftimes_acc = 0;
    int64_t ftimes_n = 0;

    for (int64_t t = start; t < cfg_.t_total; ++t) {
        if (stop_after_iters >= 0 && t >= stop_after_iters) {
            RunCounters partial;
            partial.ftimes_per_iter = ftimes_n ? ftimes_acc / (double)ftimes_n : 0.0;
            return partial;  // interrupted run: no final metrics
        }
        SampledBatch batch = sample_batch(rng_);
        StepReport rep = train_step(batch, t);
        ftimes_acc += (double)rep.forwards / (double)rep.images_consumed;
        ++ftimes_n;

        std::string val_cols = ",,,";
        const bool do_eval =
            (cfg_.eval_every > 0 && (t + 1) % cfg_.eval_every == 0) || t + 1 == cfg_.t_total;
        if (do_eval) {
            auto dsc = validation_dsc();
            double mean = 0;
            for (size_t k = 1; k < dsc.size(); ++k) mean += dsc[k];
            mean /= (double)(dsc.size() - 1);
            std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g", mean, dsc[1],
                          dsc.size() > 2 ? dsc[2] : 0.0, dsc.size() > 3 ? dsc[3] : 0.0);
            val_cols = buf;
        }
        std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,", (long long)(t + 1),
                      rep.lr, rep.lambda, rep.sup1, rep.sup2, rep.ctl1, rep.ctl2);
        tl << buf << val_cols << "\n";
        tl.flush();

        if ((cfg_.checkpoint_every > 0 && (t + 1) % cfg_.checkpoint_every == 0) ||
            t + 1 == cfg_.t_total)
            save_checkpoint_file(ckpt_path, t + 1);
    }

    RunCounters counters;
    counters.wall_train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
    counters.ftimes_per_iter = ftimes_n ? ftimes_acc / (double)ftimes_n : 0.0;

    // final metrics for the first branch, with HD95, over validation volumes
    const int64_t K = cfg_.unet.num_classes;
    std::vector<VolumeMetrics> vms;
    double infer_seconds = 0;
    for (int64_t id : data_.split.validation) {
        const Volume& vol = data_.volumes[(size_t)id];
        const auto t0 = std::chrono::steady_clock::now();
        auto pred = infer_volume(m1_.get(), m2_.get(), vol, PredSource::CNN_BRANCH);
        infer_seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        vms.push_back(evaluate_prediction(pred, vol, K, /*with_hd=*/true));
    }
    counters.per_case_infer_seconds = infer_seconds / (double)data_.split.validation.size();
    last_report_ = aggregate(vms, K);
    std::ofstream mf(metrics_path, std::ios::trunc);
    mf << last_report_.to_csv();

    return counters;
}

}  // namespace ct
