#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "drfuse/rng.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Synthetic paired infrared/visible sequences with exact ground truth.
// Objects translate rigidly over a static textured background, so the
// backward flow and occlusion masks are known analytically: warping frame
// t-1 by the flow reproduces frame t on unoccluded pixels (exactly, for
// integer velocities and clean frames).

struct SceneObject {
    int kind = 0;  // 0 = rectangle, 1 = disk
    double cx = 0.0, cy = 0.0;  // center at frame 0, pixels
    double half = 3.0;  // half-extent (rect) or radius (disk)
    double vx = 0.0, vy = 0.0;  // pixels per frame
    double ir_intensity = 0.85;
    int vi_texture = 0;
};

struct SceneConfig {
    int height = 24;
    int width = 24;
    int frames = 16;
    std::vector<SceneObject> objects;
    std::uint64_t background_seed = 0;
    double flicker_amplitude = 0.0;  // in [0, 0.5]
    double ir_noise_sigma = 0.0;
};

struct GroundTruthBundle {
    std::vector<Tensor> ir;   // [H,W] each
    std::vector<Tensor> vi;   // [H,W] each (exported as RGB by replication)
    std::vector<Tensor> flow;  // [2,H,W] per pair t-1 -> t; plane 0 = dx, 1 = dy
    std::vector<Tensor> occ;   // [H,W] per pair; 1 = valid source in previous frame
    std::vector<Tensor> objmap;  // [H,W] per frame; object index + 1, 0 = background
    std::vector<double> flicker;  // recorded a_t per frame
};

namespace scenedetail {

inline double hash01(std::uint64_t a, std::uint64_t b, std::uint64_t c) {
    std::uint64_t h = Rng::mix(a * 0x9E3779B97F4A7C15ull ^ Rng::mix(b + 0x7F4A7C15ull) ^
                               Rng::mix(c + 0x94D049BB133111EBull));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Smooth value noise: bilinear blend of a hashed coarse grid. Static, so the
// background trivially satisfies zero-flow warp exactness.
inline double background_at(std::uint64_t seed, int y, int x, double lo, double hi) {
    const int cell = 6;
    int gy = y / cell, gx = x / cell;
    double fy = static_cast<double>(y % cell) / cell;
    double fx = static_cast<double>(x % cell) / cell;
    double v00 = hash01(seed, static_cast<std::uint64_t>(gy), static_cast<std::uint64_t>(gx));
    double v01 = hash01(seed, static_cast<std::uint64_t>(gy), static_cast<std::uint64_t>(gx + 1));
    double v10 = hash01(seed, static_cast<std::uint64_t>(gy + 1), static_cast<std::uint64_t>(gx));
    double v11 = hash01(seed, static_cast<std::uint64_t>(gy + 1), static_cast<std::uint64_t>(gx + 1));
    double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
    return lo + (hi - lo) * v;
}

// Continuous object texture in object-local coordinates; translates with the
// object, so integer motion preserves samples exactly.
inline double object_texture(int tex_id, double ly, double lx) {
    double k1 = 0.7 + 0.5 * hash01(11, static_cast<std::uint64_t>(tex_id), 1);
    double k2 = 0.7 + 0.5 * hash01(11, static_cast<std::uint64_t>(tex_id), 2);
    double phase = 6.283185307179586 * hash01(11, static_cast<std::uint64_t>(tex_id), 3);
    return 0.55 + 0.35 * std::sin(k1 * lx + 1.37 * k2 * ly + phase);
}

inline bool covers(const SceneObject& o, int frame, double y, double x) {
    double cy = o.cy + frame * o.vy;
    double cx = o.cx + frame * o.vx;
    double ly = y - cy, lx = x - cx;
    if (o.kind == 0) return std::abs(ly) <= o.half && std::abs(lx) <= o.half;
    return ly * ly + lx * lx <= o.half * o.half;
}

// Later objects in the list render on top.
inline int top_object(const SceneConfig& cfg, int frame, double y, double x) {
    for (int i = static_cast<int>(cfg.objects.size()) - 1; i >= 0; --i)
        if (covers(cfg.objects[static_cast<std::size_t>(i)], frame, y, x)) return i;
    return -1;
}

}  // namespace scenedetail

// Per-frame multiplicative brightness jitter: frame t scaled by (1 + a_t)
// with a_t ~ U[-amplitude, amplitude], then clamped to [0,1]. Returns the
// drawn a_t values. amplitude 0 leaves frames untouched byte for byte.
inline std::vector<double> add_flicker(std::vector<Tensor>& frames, double amplitude, Rng& rng) {
    if (amplitude < 0.0 || amplitude > 0.5)
        throw std::invalid_argument("add_flicker: amplitude must lie in [0, 0.5]");
    std::vector<double> a(frames.size(), 0.0);
    if (amplitude == 0.0) return a;
    for (std::size_t t = 0; t < frames.size(); ++t) {
        a[t] = rng.uniform(-amplitude, amplitude);
        for (double& v : frames[t].data) v = std::min(1.0, std::max(0.0, v * (1.0 + a[t])));
    }
    return a;
}

inline GroundTruthBundle generate_sequence(const SceneConfig& cfg, Rng& rng) {
    if (cfg.height < 16 || cfg.width < 16)
        throw std::invalid_argument("generate_sequence: frame size must be at least 16x16");
    if (cfg.frames < 1) throw std::invalid_argument("generate_sequence: need at least one frame");
    if (cfg.flicker_amplitude < 0.0 || cfg.flicker_amplitude > 0.5)
        throw std::invalid_argument("generate_sequence: flicker amplitude must lie in [0, 0.5]");
    if (cfg.ir_noise_sigma < 0.0)
        throw std::invalid_argument("generate_sequence: noise sigma must be non-negative");

    using namespace scenedetail;
    const int h = cfg.height, w = cfg.width;
    GroundTruthBundle out;
    Rng noise_rng = rng.split(1);
    Rng flicker_rng = rng.split(2);

    for (int t = 0; t < cfg.frames; ++t) {
        Tensor ir({h, w}), vi({h, w}), omap({h, w});
        Rng frame_noise = noise_rng.split(static_cast<std::uint64_t>(t));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int i = top_object(cfg, t, y, x);
                omap.at(y, x) = i + 1;
                if (i < 0) {
                    ir.at(y, x) = background_at(cfg.background_seed, y, x, 0.08, 0.22);
                    vi.at(y, x) = background_at(cfg.background_seed + 1, y, x, 0.25, 0.45);
                } else {
                    const SceneObject& o = cfg.objects[static_cast<std::size_t>(i)];
                    ir.at(y, x) = o.ir_intensity;
                    vi.at(y, x) = object_texture(o.vi_texture, y - (o.cy + t * o.vy),
                                                 x - (o.cx + t * o.vx));
                }
            }
        if (cfg.ir_noise_sigma > 0.0)
            for (double& v : ir.data)
                v = std::min(1.0, std::max(0.0, v + cfg.ir_noise_sigma * frame_noise.normal()));
        out.ir.push_back(std::move(ir));
        out.vi.push_back(std::move(vi));
        out.objmap.push_back(std::move(omap));
    }

    out.flicker = add_flicker(out.vi, cfg.flicker_amplitude, flicker_rng);

    for (int t = 1; t < cfg.frames; ++t) {
        Tensor flow({2, h, w}), occ({h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int i = top_object(cfg, t, y, x);
                double vx = 0.0, vy = 0.0;
                if (i >= 0) {
                    vx = cfg.objects[static_cast<std::size_t>(i)].vx;
                    vy = cfg.objects[static_cast<std::size_t>(i)].vy;
                }
                flow.at(0, y, x) = vx;
                flow.at(1, y, x) = vy;
                double sx = x - vx, sy = y - vy;
                bool valid = sx >= 0.0 && sx <= w - 1.0 && sy >= 0.0 && sy <= h - 1.0;
                // source must show the same surface, else the warp would copy
                // another object's (or the background's) appearance
                occ.at(y, x) = (valid && top_object(cfg, t - 1, sy, sx) == i) ? 1.0 : 0.0;
            }
        out.flow.push_back(std::move(flow));
        out.occ.push_back(std::move(occ));
    }
    return out;
}

// Deterministic randomized scene used by the CLI and the benchmark harness.
// Integer velocities keep the ground-truth flow warp-exact.
inline SceneConfig make_random_scene(int height, int width, int frames, int n_objects,
                                     int max_speed, double flicker, double ir_noise, Rng& rng) {
    SceneConfig cfg;
    cfg.height = height;
    cfg.width = width;
    cfg.frames = frames;
    cfg.flicker_amplitude = flicker;
    cfg.ir_noise_sigma = ir_noise;
    cfg.background_seed = rng.next_u64();
    int max_half = std::max(2, std::min(height, width) / 6);
    for (int k = 0; k < n_objects; ++k) {
        Rng orng = rng.split(100 + static_cast<std::uint64_t>(k));
        SceneObject o;
        o.kind = static_cast<int>(orng.below(2));
        o.half = 2.0 + static_cast<double>(orng.below(static_cast<std::uint64_t>(max_half - 1)));
        o.cx = o.half + orng.uniform() * (width - 1 - 2 * o.half);
        o.cy = o.half + orng.uniform() * (height - 1 - 2 * o.half);
        if (max_speed > 0) {
            o.vx = static_cast<double>(static_cast<long long>(orng.below(2ull * max_speed + 1)) - max_speed);
            o.vy = static_cast<double>(static_cast<long long>(orng.below(2ull * max_speed + 1)) - max_speed);
        }
        o.ir_intensity = orng.uniform(0.65, 0.95);
        o.vi_texture = static_cast<int>(orng.below(1u << 16));
        cfg.objects.push_back(o);
    }
    return cfg;
}

}  // namespace drfuse
