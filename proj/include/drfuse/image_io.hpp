#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "drfuse/tensor.hpp"

namespace drfuse {

// Binary netpbm I/O. Grayscale frames travel as P5 (PGM), color frames as P6
// (PPM), both maxval 255. Tensors hold intensities in [0,1]; quantization to
// 8 bits happens only here.

inline std::uint8_t quantize_u8(double v) {
    double c = std::min(1.0, std::max(0.0, v));
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

namespace pnmdetail {

inline int next_token_int(std::istream& in, const std::string& path) {
    // netpbm headers allow '#' comments anywhere between tokens
    for (;;) {
        int c = in.peek();
        if (c == EOF) throw std::runtime_error(path + ": truncated header");
        if (std::isspace(c)) {
            in.get();
            continue;
        }
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        break;
    }
    int v = 0;
    if (!(in >> v)) throw std::runtime_error(path + ": malformed header");
    return v;
}

inline void read_header(std::istream& in, const std::string& path, const char* magic, int& w,
                        int& h) {
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != magic[0] || m1 != magic[1])
        throw std::runtime_error(path + ": expected " + magic + " image");
    w = next_token_int(in, path);
    h = next_token_int(in, path);
    int maxval = next_token_int(in, path);
    if (w < 1 || h < 1) throw std::runtime_error(path + ": bad dimensions");
    if (maxval != 255) throw std::runtime_error(path + ": only maxval 255 supported");
    in.get();  // single whitespace byte before raster
}

}  // namespace pnmdetail

inline void save_pgm(const std::string& path, const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("save_pgm: image must be [H,W]");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P5\n" << img.size(1) << " " << img.size(0) << "\n255\n";
    std::string raster(img.data.size(), '\0');
    for (std::size_t i = 0; i < img.data.size(); ++i)
        raster[i] = static_cast<char>(quantize_u8(img.data[i]));
    out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    int w = 0, h = 0;
    pnmdetail::read_header(in, path, "P5", w, h);
    Tensor img({h, w});
    std::string raster(static_cast<std::size_t>(w) * h, '\0');
    in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size()))
        throw std::runtime_error(path + ": truncated raster");
    for (std::size_t i = 0; i < raster.size(); ++i)
        img.data[i] = static_cast<std::uint8_t>(raster[i]) / 255.0;
    return img;
}

inline void save_ppm(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || img.size(0) != 3)
        throw std::invalid_argument("save_ppm: image must be [3,H,W]");
    const int h = img.size(1), w = img.size(2);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::string raster(static_cast<std::size_t>(3) * h * w, '\0');
    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) raster[k++] = static_cast<char>(quantize_u8(img.at(c, y, x)));
    out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline Tensor load_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path);
    int w = 0, h = 0;
    pnmdetail::read_header(in, path, "P6", w, h);
    Tensor img({3, h, w});
    std::string raster(static_cast<std::size_t>(3) * w * h, '\0');
    in.read(raster.data(), static_cast<std::streamsize>(raster.size()));
    if (in.gcount() != static_cast<std::streamsize>(raster.size()))
        throw std::runtime_error(path + ": truncated raster");
    std::size_t k = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<std::uint8_t>(raster[k++]) / 255.0;
    return img;
}

// Grayscale tensor replicated into three channels, for PPM export.
inline Tensor gray_to_rgb(const Tensor& img) {
    if (img.rank() != 2) throw std::invalid_argument("gray_to_rgb: image must be [H,W]");
    Tensor out({3, img.size(0), img.size(1)});
    for (int c = 0; c < 3; ++c)
        std::copy(img.data.begin(), img.data.end(),
                  out.data.begin() + static_cast<std::ptrdiff_t>(c) * img.numel());
    return out;
}

inline Tensor rgb_to_gray(const Tensor& img) {
    if (img.rank() != 3 || img.size(0) != 3)
        throw std::invalid_argument("rgb_to_gray: image must be [3,H,W]");
    Tensor out({img.size(1), img.size(2)});
    const std::size_t plane = out.data.size();
    for (std::size_t i = 0; i < plane; ++i)
        out.data[i] = (img.data[i] + img.data[plane + i] + img.data[2 * plane + i]) / 3.0;
    return out;
}

inline std::string dir_of(const std::string& path) {
    auto slash = path.find_last_of('/');
    return slash == std::string::npos ? std::string(".") : path.substr(0, slash);
}

inline std::string join_path(const std::string& dir, const std::string& rel) {
    if (!rel.empty() && rel[0] == '/') return rel;
    if (dir.empty() || dir == ".") return rel;
    return dir + "/" + rel;
}

inline std::string frame_name(const std::string& stem, int index, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%04d", index);
    return stem + "_" + buf + "." + ext;
}

}  // namespace drfuse
