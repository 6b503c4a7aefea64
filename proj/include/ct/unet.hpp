#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "ct/model.hpp"

namespace ct {

struct MiniUNetConfig {
    int64_t in_channels = 1;
    int64_t num_classes = 4;
    int64_t base_channels = 16;
    int64_t depth = 3;  // number of down/up levels

    int64_t level_channels(int64_t level) const { return base_channels << level; }
};

// Miniature UNet: one conv+BN+ReLU block per level, 2x max-pool downsampling,
// nearest-neighbour upsampling with skip concatenation, 1x1 head. The channel
// plan is base<<level on the way down with the bottleneck capped at the
// deepest width.
template <typename T>
class MiniUNet : public ModelHandle<T> {
public:
    MiniUNet(MiniUNetConfig cfg, uint64_t seed) : cfg_(cfg) {
        if (cfg_.num_classes < 2) throw ConfigError("MiniUNet: num_classes must be >= 2");
        this->params_.set_paradigm(Paradigm::CNN);
        Rng rng(seed);

        int64_t in_ch = cfg_.in_channels;
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            enc_.push_back(make_block("enc" + std::to_string(i), in_ch, cfg_.level_channels(i), rng));
            in_ch = cfg_.level_channels(i);
        }
        const int64_t deep = cfg_.level_channels(cfg_.depth - 1);
        bott_ = make_block("bott", deep, deep, rng);

        int64_t prev = deep;
        for (int64_t i = cfg_.depth - 1; i >= 0; --i) {
            const int64_t out_ch = i == 0 ? cfg_.base_channels : cfg_.level_channels(i - 1);
            dec_.push_back(make_block("dec" + std::to_string(i), prev + cfg_.level_channels(i),
                                      out_ch, rng));
            prev = out_ch;
        }

        head_w_ = this->params_.add_param(
            "head.weight", kaiming_uniform<T>({cfg_.num_classes, prev, 1, 1}, prev, rng));
        head_b_ = this->params_.add_param("head.bias", Tensor<T>::zeros({cfg_.num_classes}));
    }

    const MiniUNetConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& batch, bool training, bool update_stats = true) override {
        if (batch.rank() != 4) throw ShapeError("MiniUNet: expected NCHW input");
        const int64_t div = int64_t(1) << cfg_.depth;
        if (batch.dim(2) % div != 0)
            throw ConfigError("MiniUNet: input H=" + std::to_string(batch.dim(2)) +
                              " not divisible by " + std::to_string(div));
        if (batch.dim(3) % div != 0)
            throw ConfigError("MiniUNet: input W=" + std::to_string(batch.dim(3)) +
                              " not divisible by " + std::to_string(div));
        if (batch.dim(1) != cfg_.in_channels)
            throw ShapeError("MiniUNet: input channels " + std::to_string(batch.dim(1)) +
                             " != configured " + std::to_string(cfg_.in_channels));
        this->count_forward(batch.dim(0));

        Tensor<T> x = batch;
        std::vector<Tensor<T>> skips;
        for (auto& blk : enc_) {
            x = run_block(blk, x, training, update_stats);
            skips.push_back(x);
            x = max_pool2x2(x);
        }
        x = run_block(bott_, x, training, update_stats);
        for (size_t d = 0; d < dec_.size(); ++d) {
            x = nearest_upsample2x(x);
            x = concat<T>({x, skips[skips.size() - 1 - d]}, 1);
            x = run_block(dec_[d], x, training, update_stats);
        }
        return conv2d(x, head_w_, head_b_, 1, 0);
    }

    std::vector<std::string> layer_list() const override {
        std::vector<std::string> l;
        auto block = [&](const std::string& name, int64_t ic, int64_t oc) {
            std::ostringstream os;
            os << name << ": conv3x3 " << ic << "->" << oc << " + batch_norm + relu";
            l.push_back(os.str());
        };
        int64_t in_ch = cfg_.in_channels;
        for (int64_t i = 0; i < cfg_.depth; ++i) {
            block("enc" + std::to_string(i), in_ch, cfg_.level_channels(i));
            l.push_back("max_pool2x2");
            in_ch = cfg_.level_channels(i);
        }
        const int64_t deep = cfg_.level_channels(cfg_.depth - 1);
        block("bott", deep, deep);
        int64_t prev = deep;
        for (int64_t i = cfg_.depth - 1; i >= 0; --i) {
            l.push_back("nearest_upsample2x + concat");
            const int64_t out_ch = i == 0 ? cfg_.base_channels : cfg_.level_channels(i - 1);
            block("dec" + std::to_string(i), prev + cfg_.level_channels(i), out_ch);
            prev = out_ch;
        }
        l.push_back("head: conv1x1 " + std::to_string(prev) + "->" + std::to_string(cfg_.num_classes));
        return l;
    }

    std::string config_echo() const override {
        std::ostringstream os;
        os << "arch = mini_unet\n"
           << "in_channels = " << cfg_.in_channels << "\n"
           << "num_classes = " << cfg_.num_classes << "\n"
           << "base_channels = " << cfg_.base_channels << "\n"
           << "depth = " << cfg_.depth << "\n";
        return os.str();
    }

private:
    struct Block {
        Tensor<T> w, gamma, beta;
        Tensor<T> running_mean, running_var;
    };

    Block make_block(const std::string& name, int64_t in_ch, int64_t out_ch, Rng& rng) {
        Block b;
        b.w = this->params_.add_param(name + ".conv.weight",
                                      kaiming_uniform<T>({out_ch, in_ch, 3, 3}, in_ch * 9, rng));
        b.gamma = this->params_.add_param(name + ".bn.gamma", Tensor<T>::full({out_ch}, T(1)));
        b.beta = this->params_.add_param(name + ".bn.beta", Tensor<T>::zeros({out_ch}));
        b.running_mean = this->params_.add_buffer(name + ".bn.running_mean", Tensor<T>::zeros({out_ch}));
        b.running_var = this->params_.add_buffer(name + ".bn.running_var", Tensor<T>::full({out_ch}, T(1)));
        return b;
    }

    Tensor<T> run_block(Block& b, const Tensor<T>& x, bool training, bool update_stats) {
        Tensor<T> y = conv2d(x, b.w, {}, 1, 1);
        y = batch_norm2d(y, b.gamma, b.beta, b.running_mean, b.running_var, training, update_stats);
        return relu(y);
    }

    MiniUNetConfig cfg_;
    std::vector<Block> enc_;
    Block bott_;
    std::vector<Block> dec_;
    Tensor<T> head_w_, head_b_;
};

}  // namespace ct
