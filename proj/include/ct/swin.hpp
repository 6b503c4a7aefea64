#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "ct/model.hpp"

namespace ct {

struct MiniSwinConfig {
    int64_t in_channels = 1;
    int64_t num_classes = 4;
    int64_t patch_size = 4;
    int64_t embed_dim = 24;
    std::vector<int64_t> depths{2, 2};
    std::vector<int64_t> num_heads{3, 3};
    int64_t window = 4;
    double mlp_ratio = 2.0;

    int64_t stage_dim(size_t s) const { return embed_dim << s; }
};

// Miniature Swin-UNet: patch embedding, encoder stages of plain (non-shifted)
// window-attention blocks with patch merging, a bottleneck at the deepest
// width, and a symmetric decoder whose skips are added after a linear
// projection. Patch expansion is a learned linear into r^2 sub-pixel feature
// vectors followed by depth-to-space, so the head sees per-pixel features.
//
// Init: linears are kaiming-uniform scaled by kSgdInitGain. Every linear sits
// behind a LayerNorm, which makes the forward pass scale-invariant but makes
// the relative SGD step size grow as the init shrinks; plain SGD at lr 0.01
// cannot move kaiming-sized token linears. Residual-writing layers (attention
// proj, mlp fc2) carry an extra 1/sqrt(2*blocks) damping, and biases of the
// embedding and expansions are random so constant input patches never reach a
// LayerNorm with zero variance.
inline constexpr double kSgdInitGain = 0.25;

template <typename T>
class MiniSwinUNet : public ModelHandle<T> {
public:
    MiniSwinUNet(MiniSwinConfig cfg, uint64_t seed) : cfg_(cfg) {
        if (cfg_.depths.size() != cfg_.num_heads.size() || cfg_.depths.empty())
            throw ConfigError("MiniSwinUNet: depths and num_heads must be non-empty and equal length");
        if (cfg_.num_classes < 2) throw ConfigError("MiniSwinUNet: num_classes must be >= 2");
        for (size_t s = 0; s < cfg_.depths.size(); ++s)
            if (cfg_.stage_dim(s) % cfg_.num_heads[s] != 0)
                throw ConfigError("MiniSwinUNet: stage dim " + std::to_string(cfg_.stage_dim(s)) +
                                  " not divisible by heads " + std::to_string(cfg_.num_heads[s]));
        this->params_.set_paradigm(Paradigm::TRANSFORMER);
        Rng rng(seed);

        const int64_t E = cfg_.embed_dim;
        const int64_t p = cfg_.patch_size;
        embed_w_ = this->params_.add_param(
            "embed.conv.weight",
            scaled(kaiming_uniform<T>({E, cfg_.in_channels, p, p}, cfg_.in_channels * p * p, rng),
                   kSgdInitGain));
        embed_b_ = this->params_.add_param("embed.conv.bias",
                                           uniform_bias<T>({E}, cfg_.in_channels * p * p, rng));
        embed_ln_ = make_norm("embed.norm", E);

        const size_t S = cfg_.depths.size();
        int64_t total_blocks = cfg_.depths[S - 1];
        for (int64_t d : cfg_.depths) total_blocks += 2 * d;
        residual_scale_ = 1.0 / std::sqrt(2.0 * (double)total_blocks);
        for (size_t s = 0; s < S; ++s) {
            std::vector<BlockP> blocks;
            for (int64_t b = 0; b < cfg_.depths[s]; ++b)
                blocks.push_back(make_block("enc" + std::to_string(s) + ".block" + std::to_string(b),
                                            cfg_.stage_dim(s), cfg_.num_heads[s], rng));
            enc_stages_.push_back(std::move(blocks));
            if (s + 1 < S) merges_.push_back(make_merge("merge" + std::to_string(s), cfg_.stage_dim(s), rng));
        }
        for (int64_t b = 0; b < cfg_.depths[S - 1]; ++b)
            bott_.push_back(make_block("bott.block" + std::to_string(b), cfg_.stage_dim(S - 1),
                                       cfg_.num_heads[S - 1], rng));
        for (size_t si = 0; si < S; ++si) {
            const size_t s = S - 1 - si;  // deepest first
            const int64_t dim = cfg_.stage_dim(s);
            DecLevel lvl;
            lvl.skip_w = this->params_.add_param(
                "dec" + std::to_string(s) + ".skip.weight",
                scaled(kaiming_uniform<T>({dim, dim}, dim, rng), kSgdInitGain));
            lvl.skip_b = this->params_.add_param("dec" + std::to_string(s) + ".skip.bias",
                                                 Tensor<T>::zeros({dim}));
            for (int64_t b = 0; b < cfg_.depths[s]; ++b)
                lvl.blocks.push_back(make_block("dec" + std::to_string(s) + ".block" + std::to_string(b),
                                                dim, cfg_.num_heads[s], rng));
            if (s > 0)
                lvl.expand = make_expand("dec" + std::to_string(s) + ".expand", dim, 2, dim / 2, rng);
            dec_levels_.push_back(std::move(lvl));
        }
        final_ln_ = make_norm("final.norm", E);
        final_expand_ = make_expand("final.expand", E, p, E, rng);
        head_w_ = this->params_.add_param("head.weight",
                                          trunc_normal<T>({E, cfg_.num_classes}, 0.1, rng));
        head_b_ = this->params_.add_param("head.bias", Tensor<T>::zeros({cfg_.num_classes}));
    }

    const MiniSwinConfig& config() const { return cfg_; }

    Tensor<T> forward(const Tensor<T>& batch, bool training, bool update_stats = true) override {
        (void)training;
        (void)update_stats;  // no batch statistics anywhere in this backbone
        if (batch.rank() != 4) throw ShapeError("MiniSwinUNet: expected NCHW input");
        const int64_t B = batch.dim(0), H = batch.dim(2), W = batch.dim(3);
        if (H != W) throw ConfigError("MiniSwinUNet: input must be square, got H=" +
                                      std::to_string(H) + " W=" + std::to_string(W));
        if (H % cfg_.patch_size != 0)
            throw ConfigError("MiniSwinUNet: input H=" + std::to_string(H) +
                              " not divisible by patch_size=" + std::to_string(cfg_.patch_size));
        const size_t S = cfg_.depths.size();
        const int64_t G0 = H / cfg_.patch_size;
        for (size_t s = 0; s < S; ++s) {
            const int64_t g = G0 >> s;
            if (g % cfg_.window != 0)
                throw ConfigError("MiniSwinUNet: stage " + std::to_string(s) + " token grid " +
                                  std::to_string(g) + " not divisible by window=" +
                                  std::to_string(cfg_.window));
            if (s + 1 < S && g % 2 != 0)
                throw ConfigError("MiniSwinUNet: token grid " + std::to_string(g) +
                                  " not divisible by 2 for patch merging");
        }
        this->count_forward(B);

        Tensor<T> x = conv2d(batch, embed_w_, embed_b_, cfg_.patch_size, 0);
        x = nchw_to_tokens(x);
        x = layer_norm(x, embed_ln_.g, embed_ln_.b);

        std::vector<Tensor<T>> skips;
        for (size_t s = 0; s < S; ++s) {
            const int64_t g = G0 >> s;
            for (auto& blk : enc_stages_[s]) x = run_block(blk, x, g);
            skips.push_back(x);
            if (s + 1 < S) x = run_merge(merges_[s], x, g);
        }
        {
            const int64_t g = G0 >> (S - 1);
            for (auto& blk : bott_) x = run_block(blk, x, g);
        }
        for (size_t si = 0; si < S; ++si) {
            const size_t s = S - 1 - si;
            const int64_t g = G0 >> s;
            DecLevel& lvl = dec_levels_[si];
            x = add(x, linear(skips[s], lvl.skip_w, lvl.skip_b));
            for (auto& blk : lvl.blocks) x = run_block(blk, x, g);
            if (s > 0) x = run_expand(lvl.expand, x, g);
        }
        x = layer_norm(x, final_ln_.g, final_ln_.b);
        x = run_expand(final_expand_, x, G0);
        x = linear(x, head_w_, head_b_);                       // [B, H*W, K]
        x = transpose(reshape(x, {B, H, W, cfg_.num_classes}), {0, 3, 1, 2});
        return x;
    }

    std::vector<std::string> layer_list() const override {
        std::vector<std::string> l;
        std::ostringstream em;
        em << "patch_embed: conv" << cfg_.patch_size << "x" << cfg_.patch_size << " "
           << cfg_.in_channels << "->" << cfg_.embed_dim << " stride " << cfg_.patch_size
           << " + layer_norm";
        l.push_back(em.str());
        const size_t S = cfg_.depths.size();
        auto blocks = [&](const std::string& name, size_t s) {
            for (int64_t b = 0; b < cfg_.depths[s]; ++b)
                l.push_back(name + ".block" + std::to_string(b) + ": window_attention dim" +
                            std::to_string(cfg_.stage_dim(s)) + " heads" +
                            std::to_string(cfg_.num_heads[s]) + " win" + std::to_string(cfg_.window) +
                            " + mlp");
        };
        for (size_t s = 0; s < S; ++s) {
            blocks("enc" + std::to_string(s), s);
            if (s + 1 < S)
                l.push_back("merge" + std::to_string(s) + ": patch_merge " +
                            std::to_string(cfg_.stage_dim(s)) + "->" + std::to_string(cfg_.stage_dim(s + 1)));
        }
        blocks("bott", S - 1);
        for (size_t si = 0; si < S; ++si) {
            const size_t s = S - 1 - si;
            l.push_back("dec" + std::to_string(s) + ".skip: linear add");
            blocks("dec" + std::to_string(s), s);
            if (s > 0)
                l.push_back("dec" + std::to_string(s) + ".expand: patch_expand x2 " +
                            std::to_string(cfg_.stage_dim(s)) + "->" + std::to_string(cfg_.stage_dim(s) / 2));
        }
        l.push_back("final.expand: patch_expand x" + std::to_string(cfg_.patch_size));
        l.push_back("head: linear " + std::to_string(cfg_.embed_dim) + "->" +
                    std::to_string(cfg_.num_classes));
        return l;
    }

    std::string config_echo() const override {
        std::ostringstream os;
        os << "arch = mini_swin_unet\n"
           << "in_channels = " << cfg_.in_channels << "\n"
           << "num_classes = " << cfg_.num_classes << "\n"
           << "patch_size = " << cfg_.patch_size << "\n"
           << "embed_dim = " << cfg_.embed_dim << "\n";
        os << "depths =";
        for (auto d : cfg_.depths) os << " " << d;
        os << "\nnum_heads =";
        for (auto h : cfg_.num_heads) os << " " << h;
        os << "\nwindow = " << cfg_.window << "\n"
           << "mlp_ratio = " << cfg_.mlp_ratio << "\n";
        return os.str();
    }

private:
    struct Norm {
        Tensor<T> g, b;
    };
    struct BlockP {
        Norm ln1, ln2;
        Tensor<T> wqkv, bqkv, wproj, bproj;
        Tensor<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
        int64_t heads = 1;
    };
    struct MergeP {
        Norm ln;
        Tensor<T> w;
    };
    struct ExpandP {
        Tensor<T> w, b;
        Norm ln;
        int64_t r = 2, c_out = 0;
    };
    struct DecLevel {
        Tensor<T> skip_w, skip_b;
        std::vector<BlockP> blocks;
        ExpandP expand;
    };

    static Tensor<T> scaled(Tensor<T> t, double f) {
        for (auto& v : t.data()) v = (T)((double)v * f);
        return t;
    }

    Norm make_norm(const std::string& name, int64_t dim) {
        Norm n;
        n.g = this->params_.add_param(name + ".gamma", Tensor<T>::full({dim}, T(1)));
        n.b = this->params_.add_param(name + ".beta", Tensor<T>::zeros({dim}));
        return n;
    }

    BlockP make_block(const std::string& name, int64_t dim, int64_t heads, Rng& rng) {
        BlockP b;
        b.heads = heads;
        b.ln1 = make_norm(name + ".norm1", dim);
        b.wqkv = this->params_.add_param(name + ".attn.qkv.weight",
                                         scaled(kaiming_uniform<T>({dim, 3 * dim}, dim, rng),
                                                kSgdInitGain));
        b.bqkv = this->params_.add_param(name + ".attn.qkv.bias", Tensor<T>::zeros({3 * dim}));
        b.wproj = this->params_.add_param(
            name + ".attn.proj.weight",
            scaled(kaiming_uniform<T>({dim, dim}, dim, rng), kSgdInitGain * residual_scale_));
        b.bproj = this->params_.add_param(name + ".attn.proj.bias", Tensor<T>::zeros({dim}));
        b.ln2 = make_norm(name + ".norm2", dim);
        const int64_t hidden = (int64_t)((double)dim * cfg_.mlp_ratio);
        b.mlp_w1 = this->params_.add_param(
            name + ".mlp.fc1.weight",
            scaled(kaiming_uniform<T>({dim, hidden}, dim, rng), kSgdInitGain));
        b.mlp_b1 = this->params_.add_param(name + ".mlp.fc1.bias", Tensor<T>::zeros({hidden}));
        b.mlp_w2 = this->params_.add_param(
            name + ".mlp.fc2.weight",
            scaled(kaiming_uniform<T>({hidden, dim}, hidden, rng), kSgdInitGain * residual_scale_));
        b.mlp_b2 = this->params_.add_param(name + ".mlp.fc2.bias", Tensor<T>::zeros({dim}));
        return b;
    }

    MergeP make_merge(const std::string& name, int64_t dim, Rng& rng) {
        MergeP m;
        m.ln = make_norm(name + ".norm", 4 * dim);
        m.w = this->params_.add_param(
            name + ".reduce.weight",
            scaled(kaiming_uniform<T>({4 * dim, 2 * dim}, 4 * dim, rng), kSgdInitGain));
        return m;
    }

    ExpandP make_expand(const std::string& name, int64_t dim, int64_t r, int64_t c_out, Rng& rng) {
        ExpandP e;
        e.r = r;
        e.c_out = c_out;
        e.w = this->params_.add_param(
            name + ".weight",
            scaled(kaiming_uniform<T>({dim, r * r * c_out}, dim, rng), kSgdInitGain));
        e.b = this->params_.add_param(name + ".bias", uniform_bias<T>({r * r * c_out}, dim, rng));
        e.ln = make_norm(name + ".norm", c_out);
        return e;
    }

    static Tensor<T> nchw_to_tokens(const Tensor<T>& x) {
        const int64_t B = x.dim(0), C = x.dim(1), G = x.dim(2);
        return reshape(transpose(x, {0, 2, 3, 1}), {B, G * x.dim(3), C});
    }

    static Tensor<T> tokens_to_nchw(const Tensor<T>& t, int64_t G) {
        const int64_t B = t.dim(0), C = t.dim(2);
        return transpose(reshape(t, {B, G, G, C}), {0, 3, 1, 2});
    }

    // Reorders row-major grid tokens so each run of window^2 tokens is one window.
    Tensor<T> window_partition(const Tensor<T>& t, int64_t G) const {
        const int64_t B = t.dim(0), D = t.dim(2), w = cfg_.window;
        Tensor<T> x = reshape(t, {B, G / w, w, G / w, w, D});
        x = transpose(x, {0, 1, 3, 2, 4, 5});
        return reshape(x, {B, G * G, D});
    }

    Tensor<T> window_reverse(const Tensor<T>& t, int64_t G) const {
        const int64_t B = t.dim(0), D = t.dim(2), w = cfg_.window;
        Tensor<T> x = reshape(t, {B, G / w, G / w, w, w, D});
        x = transpose(x, {0, 1, 3, 2, 4, 5});
        return reshape(x, {B, G * G, D});
    }

    Tensor<T> run_block(BlockP& b, const Tensor<T>& x, int64_t G) {
        Tensor<T> h = layer_norm(x, b.ln1.g, b.ln1.b);
        h = window_partition(h, G);
        h = window_attention(h, b.wqkv, b.bqkv, b.wproj, b.bproj, b.heads, cfg_.window);
        h = window_reverse(h, G);
        Tensor<T> y = add(x, h);
        Tensor<T> m = layer_norm(y, b.ln2.g, b.ln2.b);
        m = linear(m, b.mlp_w1, b.mlp_b1);
        m = gelu(m);
        m = linear(m, b.mlp_w2, b.mlp_b2);
        return add(y, m);
    }

    Tensor<T> run_merge(MergeP& m, const Tensor<T>& t, int64_t G) {
        const int64_t B = t.dim(0), C = t.dim(2);
        Tensor<T> x = reshape(t, {B, G / 2, 2, G / 2, 2, C});
        x = transpose(x, {0, 1, 3, 2, 4, 5});
        x = reshape(x, {B, (G / 2) * (G / 2), 4 * C});
        x = layer_norm(x, m.ln.g, m.ln.b);
        return linear(x, m.w);
    }

    Tensor<T> run_expand(ExpandP& e, const Tensor<T>& t, int64_t G) {
        Tensor<T> x = linear(t, e.w, e.b);                   // [B, G^2, r^2*c_out]
        x = tokens_to_nchw(x, G);
        x = depth_to_space(x, e.r);
        x = nchw_to_tokens(x);
        return layer_norm(x, e.ln.g, e.ln.b);
    }

    MiniSwinConfig cfg_;
    double residual_scale_ = 1.0;
    Tensor<T> embed_w_, embed_b_;
    Norm embed_ln_;
    std::vector<std::vector<BlockP>> enc_stages_;
    std::vector<MergeP> merges_;
    std::vector<BlockP> bott_;
    std::vector<DecLevel> dec_levels_;
    Norm final_ln_;
    ExpandP final_expand_;
    Tensor<T> head_w_, head_b_;
};

}  // namespace ct
