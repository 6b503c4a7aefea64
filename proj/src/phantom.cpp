#include "phantom.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ct/checkpoint.hpp"  // little-endian static assert + read/write helpers
#include "ct/error.hpp"

namespace ct {

namespace {

struct SliceGeometry {
    double cx, cy;
    double lv_r;
    double myo_outer;
    double rv_cx, rv_cy;
    double rv_radial, rv_tangent;  // ellipse half-axes: radial (short), tangential (long)
    double rv_cos, rv_sin;         // radial direction from the LV centre
};

uint8_t classify(const SliceGeometry& g, double x, double y) {
    const double dx = x - g.cx, dy = y - g.cy;
    const double d2 = dx * dx + dy * dy;
    if (d2 <= g.lv_r * g.lv_r) return 3;               // LV
    if (d2 <= g.myo_outer * g.myo_outer) return 2;     // Myo
    // RV: inside the ellipse whose long axis wraps around the ring, outside myo
    const double ex = x - g.rv_cx, ey = y - g.rv_cy;
    const double u = ex * g.rv_cos + ey * g.rv_sin;    // radial component
    const double v = -ex * g.rv_sin + ey * g.rv_cos;   // tangential component
    if ((u * u) / (g.rv_radial * g.rv_radial) + (v * v) / (g.rv_tangent * g.rv_tangent) <= 1.0)
        return 1;
    return 0;
}

}  // namespace

Volume generate_phantom(const PhantomParams& p, int64_t volume_index) {
    Rng rng(derive_seed(p.seed, (uint64_t)volume_index));

    const int64_t D = p.slices_per_volume, H = p.grid_h, W = p.grid_w;
    Volume vol;
    vol.depth = D;
    vol.height = H;
    vol.width = W;
    vol.volume_id = (uint64_t)volume_index;
    vol.image.assign((size_t)(D * H * W), 0.0f);
    vol.label.assign((size_t)(D * H * W), 0);

    // per-volume anatomy; the RV can sit at any angle, so a couple of labeled
    // volumes never cover the pose variety of the unlabeled pool
    const double cx = (double)W / 2.0 + rng.uniform(-6.0, 6.0);
    const double cy = (double)H / 2.0 + rng.uniform(-6.0, 6.0);
    const double lv_r = p.lv_radius + rng.uniform(-p.lv_radius_jitter, p.lv_radius_jitter);
    const double myo_t = p.myo_thickness + rng.uniform(-p.myo_thickness_jitter, p.myo_thickness_jitter);
    const double ecc = p.rv_eccentricity + rng.uniform(-p.rv_eccentricity_jitter, p.rv_eccentricity_jitter);
    const double rv_r = lv_r * rng.uniform(0.60, 0.85);
    const double rv_angle = rng.uniform(-3.14159265358979, 3.14159265358979);
    const double apex_shrink = rng.uniform(0.28, 0.40);

    // per-volume appearance: wide ranges that overlap across volumes, so a
    // couple of labeled volumes cannot span the appearance distribution; the
    // two blood pools share an intensity and separate by shape only
    const double base_bg = 0.22 + rng.uniform(-0.10, 0.10);
    const double base_myo = 0.45 + rng.uniform(-0.15, 0.15);
    const double base_lv = 0.78 + rng.uniform(-0.15, 0.15);
    const double base_rv = base_lv + rng.uniform(-0.08, 0.08);
    const double ba = rng.uniform(-1, 1), bb = rng.uniform(-1, 1), bc = rng.uniform(-1, 1);

    const double myo_outer0 = lv_r + myo_t;
    const double reach = std::max(myo_outer0 + 1.3 * rv_r,
                                  std::hypot(myo_outer0 + 0.3 * rv_r, rv_r * ecc));
    const double margin = std::min(std::min(cx, cy), std::min((double)W - 1.0 - cx, (double)H - 1.0 - cy));
    if (margin < reach + 1.0)
        throw ConfigError("phantom geometry overflows the grid: reach " + std::to_string(reach) +
                          " exceeds margin " + std::to_string(margin) + " at centre (" +
                          std::to_string(cx) + "," + std::to_string(cy) + ")");

    std::vector<double> shaded((size_t)(H * W));
    for (int64_t z = 0; z < D; ++z) {
        const double t = D > 1 ? (double)z / (double)(D - 1) : 0.0;
        const double scale = 1.0 - apex_shrink * t;

        SliceGeometry g;
        g.cx = cx;
        g.cy = cy;
        g.lv_r = lv_r * scale;
        g.myo_outer = g.lv_r + std::max(1.2, myo_t * scale);
        const double ra = rv_r * scale;
        g.rv_radial = ra;
        g.rv_tangent = ra * ecc;
        // centre placed so the ellipse straddles the myo boundary (crescent)
        const double dist = g.myo_outer + 0.3 * ra;
        g.rv_cx = cx + dist * std::cos(rv_angle);
        g.rv_cy = cy + dist * std::sin(rv_angle);
        g.rv_cos = std::cos(rv_angle);
        g.rv_sin = std::sin(rv_angle);

        double lo = 1e300, hi = -1e300;
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const uint8_t lab = classify(g, (double)x, (double)y);
                vol.label[(size_t)((z * H + y) * W + x)] = lab;
                double base = base_bg;
                if (lab == 1) base = base_rv;
                else if (lab == 2) base = base_myo;
                else if (lab == 3) base = base_lv;
                const double u = 2.0 * (double)x / (double)(W - 1) - 1.0;
                const double v = 2.0 * (double)y / (double)(H - 1) - 1.0;
                const double bias = 1.0 + p.bias_field_strength * 0.5 * (ba * u + bb * v + bc * u * v);
                double val = base * bias + rng.normal(0.0, p.noise_std);
                shaded[(size_t)(y * W + x)] = val;
                lo = std::min(lo, val);
                hi = std::max(hi, val);
            }
        }
        // per-slice rescale to [0,1]
        const double range = hi - lo;
        for (int64_t i = 0; i < H * W; ++i) {
            const double val = range > 1e-12 ? (shaded[(size_t)i] - lo) / range : 0.0;
            vol.image[(size_t)(z * H * W + i)] = (float)val;
        }
    }
    return vol;
}

// ---------------------------------------------------------------------------
// XTV1 volume format
// header: magic "XTV1" | u32 version | u64 volume_id  (16 bytes)
//         dims D,H,W as u32 LE (12 bytes) | spacing 3 x f32 (12 bytes)
// payload: image f32 LE, then label u8
// ---------------------------------------------------------------------------

void save_volume(const std::string& path, const Volume& v) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write("XTV1", 4);
    detail::write_u32(os, 1);
    detail::write_u64(os, v.volume_id);
    detail::write_u32(os, (uint32_t)v.depth);
    detail::write_u32(os, (uint32_t)v.height);
    detail::write_u32(os, (uint32_t)v.width);
    os.write((const char*)v.spacing.data(), 12);
    os.write((const char*)v.image.data(), (std::streamsize)(v.image.size() * 4));
    os.write((const char*)v.label.data(), (std::streamsize)v.label.size());
    if (!os) throw IoError("write failed: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream is(path, std::ios::binary | std::ios::ate);
    if (!is) throw IoError("cannot open: " + path);
    const int64_t actual_size = (int64_t)is.tellg();
    is.seekg(0);
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "XTV1", 4) != 0)
        throw IoError(path + ": bad magic at byte 0 (expected XTV1)");
    const uint32_t version = detail::read_u32(is, path);
    if (version != 1) throw IoError(path + ": unsupported version " + std::to_string(version));
    Volume v;
    v.volume_id = detail::read_u64(is, path);
    v.depth = detail::read_u32(is, path);
    v.height = detail::read_u32(is, path);
    v.width = detail::read_u32(is, path);
    if (!is.read((char*)v.spacing.data(), 12)) throw IoError(path + ": truncated spacing at byte 28");
    const int64_t n = v.voxels();
    const int64_t expected = 40 + n * 4 + n;
    if (actual_size != expected)
        throw IoError(path + ": expected " + std::to_string(expected) + " bytes for dims " +
                      std::to_string(v.depth) + "x" + std::to_string(v.height) + "x" +
                      std::to_string(v.width) + ", file has " + std::to_string(actual_size));
    v.image.resize((size_t)n);
    v.label.resize((size_t)n);
    if (!is.read((char*)v.image.data(), n * 4)) throw IoError(path + ": truncated image at byte 40");
    if (!is.read((char*)v.label.data(), n))
        throw IoError(path + ": truncated label at byte " + std::to_string(40 + n * 4));
    return v;
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

SplitManifest make_splits(int64_t n_volumes, int64_t labeled_count, int64_t val_count,
                          uint64_t seed) {
    if (labeled_count + val_count > n_volumes)
        throw ConfigError("make_splits: labeled " + std::to_string(labeled_count) + " + val " +
                          std::to_string(val_count) + " exceeds " + std::to_string(n_volumes) +
                          " volumes");
    if (labeled_count < 1 || val_count < 1)
        throw ConfigError("make_splits: labeled_count and val_count must be positive");
    std::vector<int64_t> ids(n_volumes);
    for (int64_t i = 0; i < n_volumes; ++i) ids[(size_t)i] = i;
    Rng rng(derive_seed(seed, 0x5117));
    for (int64_t i = n_volumes - 1; i > 0; --i)
        std::swap(ids[(size_t)i], ids[(size_t)rng.index(i + 1)]);

    // validation comes from the end of the permutation so it stays fixed when
    // only labeled_count varies (grid cells share the same validation set)
    SplitManifest m;
    m.seed = seed;
    m.labeled.assign(ids.begin(), ids.begin() + labeled_count);
    m.validation.assign(ids.end() - val_count, ids.end());
    m.unlabeled.assign(ids.begin() + labeled_count, ids.end() - val_count);
    std::sort(m.labeled.begin(), m.labeled.end());
    std::sort(m.validation.begin(), m.validation.end());
    std::sort(m.unlabeled.begin(), m.unlabeled.end());
    m.labeled_fraction = (double)labeled_count / (double)(n_volumes - val_count);
    return m;
}

void save_manifest(const std::string& path, const SplitManifest& m) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "# seed = " << m.seed << "\n";
    os << "# labeled_fraction = " << m.labeled_fraction << "\n";
    os << "LABELED\n";
    for (int64_t id : m.labeled) os << id << "\n";
    os << "UNLABELED\n";
    for (int64_t id : m.unlabeled) os << id << "\n";
    os << "VAL\n";
    for (int64_t id : m.validation) os << id << "\n";
    if (!os) throw IoError("write failed: " + path);
}

SplitManifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    SplitManifest m;
    std::vector<int64_t>* target = nullptr;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::istringstream ls(line.substr(1));
            std::string key, eq;
            ls >> key >> eq;
            if (key == "seed") ls >> m.seed;
            if (key == "labeled_fraction") ls >> m.labeled_fraction;
            continue;
        }
        if (line == "LABELED") { target = &m.labeled; continue; }
        if (line == "UNLABELED") { target = &m.unlabeled; continue; }
        if (line == "VAL") { target = &m.validation; continue; }
        if (!target) throw IoError(path + ":" + std::to_string(lineno) + ": id before section header");
        try {
            target->push_back(std::stoll(line));
        } catch (...) {
            throw IoError(path + ":" + std::to_string(lineno) + ": bad volume id `" + line + "`");
        }
    }
    return m;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

void apply_transform(const std::vector<float>& image, const std::vector<uint8_t>& label, int64_t h,
                     int64_t w, double angle_rad, int64_t oy, int64_t ox, int64_t crop,
                     bool flip_h, bool flip_v, std::vector<float>& out_image,
                     std::vector<uint8_t>& out_label) {
    if ((int64_t)image.size() != h * w || label.size() != image.size())
        throw ShapeError("augment: slice buffers disagree with " + std::to_string(h) + "x" +
                         std::to_string(w));
    if (crop < 1 || crop > h || crop > w || oy < 0 || ox < 0 || oy + crop > h || ox + crop > w)
        throw ConfigError("augment: crop " + std::to_string(crop) + " at (" + std::to_string(oy) +
                          "," + std::to_string(ox) + ") invalid for " + std::to_string(h) + "x" +
                          std::to_string(w));
    const bool fh = flip_h;
    const bool fv = flip_v;
    const double cyc = (double)(h - 1) / 2.0, cxc = (double)(w - 1) / 2.0;
    const double ca = std::cos(angle_rad), sa = std::sin(angle_rad);

    const int64_t S = crop;
    out_image.assign((size_t)(S * S), 0.0f);
    out_label.assign((size_t)(S * S), 0);

    for (int64_t y = 0; y < S; ++y) {
        for (int64_t x = 0; x < S; ++x) {
            int64_t dy = y + oy, dx = x + ox;
            if (fh) dx = (ox + S - 1) - (dx - ox);
            if (fv) dy = (oy + S - 1) - (dy - oy);
            // inverse rotation about the slice centre
            const double ry = (double)dy - cyc, rx = (double)dx - cxc;
            const double sx = ca * rx + sa * ry + cxc;
            const double sy = -sa * rx + ca * ry + cyc;

            // nearest for the label
            const int64_t ny = (int64_t)std::llround(sy), nx = (int64_t)std::llround(sx);
            uint8_t lab = 0;
            if (ny >= 0 && ny < h && nx >= 0 && nx < w) lab = label[(size_t)(ny * w + nx)];
            out_label[(size_t)(y * S + x)] = lab;

            // bilinear for the image, zero outside
            const int64_t y0 = (int64_t)std::floor(sy), x0 = (int64_t)std::floor(sx);
            const double fy = sy - (double)y0, fx = sx - (double)x0;
            double acc = 0.0;
            for (int ddy = 0; ddy <= 1; ++ddy)
                for (int ddx = 0; ddx <= 1; ++ddx) {
                    const int64_t yy = y0 + ddy, xx = x0 + ddx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    const double wgt = (ddy ? fy : 1.0 - fy) * (ddx ? fx : 1.0 - fx);
                    acc += wgt * (double)image[(size_t)(yy * w + xx)];
                }
            out_image[(size_t)(y * S + x)] = (float)acc;
        }
    }
}

void augment(const std::vector<float>& image, const std::vector<uint8_t>& label, int64_t h,
             int64_t w, const AugmentConfig& cfg, Rng& rng, std::vector<float>& out_image,
             std::vector<uint8_t>& out_label) {
    if (cfg.crop < 1 || cfg.crop > h || cfg.crop > w)
        throw ConfigError("augment: crop " + std::to_string(cfg.crop) + " invalid for " +
                          std::to_string(h) + "x" + std::to_string(w));
    // fixed draw order: angle, crop offsets, flips
    const double angle =
        rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg) * 3.14159265358979 / 180.0;
    const int64_t oy = rng.index(h - cfg.crop + 1);
    const int64_t ox = rng.index(w - cfg.crop + 1);
    const bool fh = rng.coin() && cfg.flip_h;
    const bool fv = rng.coin() && cfg.flip_v;
    apply_transform(image, label, h, w, angle, oy, ox, cfg.crop, fh, fv, out_image, out_label);
}

}  // namespace ct
