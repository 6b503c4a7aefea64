#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "ct/tensor.hpp"

namespace ct {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and volume formats are little-endian; big-endian hosts unsupported");

// Single-file checkpoint: magic, a text manifest (config echo, iteration, RNG
// state), then length-prefixed named float32 arrays. Round-trips bit-exactly.
struct CheckpointData {
    std::string manifest;
    std::vector<std::pair<std::string, Tensor<float>>> arrays;

    const Tensor<float>* find(const std::string& name) const {
        for (const auto& kv : arrays)
            if (kv.first == name) return &kv.second;
        return nullptr;
    }
};

namespace detail {
inline void write_u32(std::ostream& os, uint32_t v) { os.write((const char*)&v, 4); }
inline void write_u64(std::ostream& os, uint64_t v) { os.write((const char*)&v, 8); }
inline uint32_t read_u32(std::istream& is, const std::string& path) {
    uint32_t v = 0;
    if (!is.read((char*)&v, 4)) throw IoError("truncated file (u32 expected): " + path);
    return v;
}
inline uint64_t read_u64(std::istream& is, const std::string& path) {
    uint64_t v = 0;
    if (!is.read((char*)&v, 8)) throw IoError("truncated file (u64 expected): " + path);
    return v;
}
}  // namespace detail

// Parameters and buffers of a ParamSet as named float32 arrays.
template <typename ParamSetT>
inline void append_param_arrays(const ParamSetT& ps, const std::string& prefix,
                                CheckpointData& ckpt) {
    for (const auto& [name, t] : ps.params())
        ckpt.arrays.emplace_back(prefix + "param." + name, t.template cast<float>());
    for (const auto& [name, t] : ps.buffers())
        ckpt.arrays.emplace_back(prefix + "buffer." + name, t.template cast<float>());
}

template <typename ParamSetT>
inline void restore_param_arrays(ParamSetT& ps, const std::string& prefix,
                                 const CheckpointData& ckpt) {
    auto restore = [&](auto& kv, const char* kind) {
        const Tensor<float>* src = ckpt.find(prefix + kind + kv.first);
        if (!src) throw IoError("checkpoint missing array: " + prefix + kind + kv.first);
        if (src->shape() != kv.second.shape())
            throw IoError("checkpoint shape mismatch for " + kv.first + ": " +
                          shape_str(src->shape()) + " vs " + shape_str(kv.second.shape()));
        for (size_t i = 0; i < kv.second.data().size(); ++i)
            kv.second.data()[i] = (typename std::decay_t<decltype(kv.second.data()[i])>)src->data()[i];
    };
    for (auto& kv : ps.params()) restore(kv, "param.");
    for (auto& kv : ps.buffers()) restore(kv, "buffer.");
}

inline void save_checkpoint(const std::string& path, const CheckpointData& ckpt) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("XTCK", 4);
    detail::write_u32(os, 1);  // version
    detail::write_u64(os, ckpt.manifest.size());
    os.write(ckpt.manifest.data(), (std::streamsize)ckpt.manifest.size());
    detail::write_u32(os, (uint32_t)ckpt.arrays.size());
    for (const auto& [name, t] : ckpt.arrays) {
        detail::write_u32(os, (uint32_t)name.size());
        os.write(name.data(), (std::streamsize)name.size());
        detail::write_u32(os, (uint32_t)t.shape().size());
        for (int64_t d : t.shape()) detail::write_u32(os, (uint32_t)d);
        os.write((const char*)t.ptr(), (std::streamsize)(t.numel() * 4));
    }
    if (!os) throw IoError("write failed: " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "XTCK", 4) != 0)
        throw IoError("bad checkpoint magic in " + path);
    const uint32_t version = detail::read_u32(is, path);
    if (version != 1) throw IoError("unsupported checkpoint version " + std::to_string(version));
    CheckpointData ckpt;
    const uint64_t mlen = detail::read_u64(is, path);
    ckpt.manifest.resize(mlen);
    if (!is.read(ckpt.manifest.data(), (std::streamsize)mlen))
        throw IoError("truncated manifest in " + path);
    const uint32_t n = detail::read_u32(is, path);
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t nlen = detail::read_u32(is, path);
        std::string name(nlen, '\0');
        if (!is.read(name.data(), nlen)) throw IoError("truncated array name in " + path);
        const uint32_t ndim = detail::read_u32(is, path);
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = detail::read_u32(is, path);
        Tensor<float> t = Tensor<float>::zeros(shape);
        if (!is.read((char*)t.ptr(), (std::streamsize)(t.numel() * 4)))
            throw IoError("truncated array data for '" + name + "' in " + path);
        ckpt.arrays.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace ct
