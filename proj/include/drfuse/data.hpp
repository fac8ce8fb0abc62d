#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/config.hpp"
#include "drfuse/image_io.hpp"
#include "drfuse/scene.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// On-disk sequence layout: a directory with one manifest listing every file
// in frame order plus the generation metadata. IR frames are PGM, VI frames
// PPM (gray replicated to RGB), flow/mask/object-map tensors DRFT.

struct SequenceData {
    std::vector<Tensor> ir, vi;        // [H,W], intensities in [0,1]
    std::vector<Tensor> flow, occ;     // pixel-resolution ground truth, per pair
    std::vector<Tensor> objmap;        // per frame; empty for external data
    double flicker_amplitude = 0.0;
    double ir_noise_sigma = 0.0;
};

inline void save_sequence(const std::string& dir, const GroundTruthBundle& b,
                          const SceneConfig& cfg) {
    std::filesystem::create_directories(dir);
    KeyValueFile m;
    m.set_int("width", cfg.width);
    m.set_int("height", cfg.height);
    m.set_int("frames", cfg.frames);
    m.set_double("flicker_amplitude", cfg.flicker_amplitude);
    m.set_double("ir_noise_sigma", cfg.ir_noise_sigma);
    m.set_int("objects", static_cast<long long>(cfg.objects.size()));
    auto key_of = [](const char* prefix, int t) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s_%04d", prefix, t);
        return std::string(buf);
    };
    for (std::size_t tt = 0; tt < b.ir.size(); ++tt) {
        int t = static_cast<int>(tt);
        std::string ir_f = frame_name("ir", t, "pgm");
        std::string vi_f = frame_name("vi", t, "ppm");
        std::string om_f = frame_name("objmap", t, "drft");
        save_pgm(dir + "/" + ir_f, b.ir[tt]);
        save_ppm(dir + "/" + vi_f, gray_to_rgb(b.vi[tt]));
        save_drft(dir + "/" + om_f, b.objmap[tt], DrftType::f64);
        m.set(key_of("ir", t), ir_f);
        m.set(key_of("vi", t), vi_f);
        m.set(key_of("objmap", t), om_f);
    }
    for (std::size_t p = 0; p < b.flow.size(); ++p) {
        int t = static_cast<int>(p) + 1;
        std::string fl_f = frame_name("flow", t, "drft");
        std::string oc_f = frame_name("occ", t, "drft");
        save_drft(dir + "/" + fl_f, b.flow[p], DrftType::f64);
        save_drft(dir + "/" + oc_f, b.occ[p], DrftType::f64);
        m.set(key_of("flow", t), fl_f);
        m.set(key_of("occ", t), oc_f);
    }
    m.save(dir + "/manifest.txt");
}

// Reads frames listed under `prefix_0000`-style keys; PGM loads as gray, PPM
// collapses to gray by channel mean.
inline std::vector<Tensor> load_frame_list(const KeyValueFile& m, const std::string& dir,
                                           const std::string& prefix) {
    std::vector<Tensor> frames;
    for (int t = 0;; ++t) {
        char key[64];
        std::snprintf(key, sizeof(key), "%s_%04d", prefix.c_str(), t);
        if (!m.has(key)) break;
        std::string path = join_path(dir, m.get(key));
        if (path.size() >= 4 && path.substr(path.size() - 4) == ".ppm")
            frames.push_back(rgb_to_gray(load_ppm(path)));
        else if (path.size() >= 5 && path.substr(path.size() - 5) == ".drft")
            frames.push_back(load_drft(path));
        else
            frames.push_back(load_pgm(path));
    }
    return frames;
}

inline SequenceData load_sequence(const std::string& manifest_path) {
    KeyValueFile m = KeyValueFile::load(manifest_path);
    std::string dir = dir_of(manifest_path);
    SequenceData s;
    s.ir = load_frame_list(m, dir, "ir");
    s.vi = load_frame_list(m, dir, "vi");
    s.objmap = load_frame_list(m, dir, "objmap");
    s.flicker_amplitude = m.get_double_or("flicker_amplitude", 0.0);
    s.ir_noise_sigma = m.get_double_or("ir_noise_sigma", 0.0);
    // flow/occ are indexed from 1 (pair t-1 -> t)
    for (int t = 1;; ++t) {
        char fk[64], ok[64];
        std::snprintf(fk, sizeof(fk), "flow_%04d", t);
        std::snprintf(ok, sizeof(ok), "occ_%04d", t);
        if (!m.has(fk) || !m.has(ok)) break;
        s.flow.push_back(load_drft(join_path(dir, m.get(fk))));
        s.occ.push_back(load_drft(join_path(dir, m.get(ok))));
    }
    if (s.ir.empty() && s.vi.empty())
        throw std::runtime_error(manifest_path + ": no frames listed");
    return s;
}

struct Dataset {
    std::vector<SequenceData> seqs;
};

inline Dataset load_dataset(const std::string& dir) {
    KeyValueFile m = KeyValueFile::load(dir + "/manifest.txt");
    Dataset d;
    long long n = m.get_int("sequences");
    for (long long i = 0; i < n; ++i) {
        char key[64];
        std::snprintf(key, sizeof(key), "seq_%04d", static_cast<int>(i));
        d.seqs.push_back(load_sequence(join_path(dir, m.get(key))));
    }
    if (d.seqs.empty()) throw std::runtime_error(dir + ": empty dataset");
    return d;
}

}  // namespace drfuse
