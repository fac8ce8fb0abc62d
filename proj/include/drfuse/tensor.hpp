#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/rng.hpp"

namespace drfuse {

// Dense row-major real array. All computation is done in 64-bit; the DRFT
// file format additionally supports 32-bit payloads.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(checked_numel(shape)), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (checked_numel(shape) != static_cast<long long>(data.size()))
            throw std::invalid_argument("Tensor: shape/data size mismatch");
    }

    static long long checked_numel(const std::vector<int>& s) {
        long long n = 1;
        for (int d : s) {
            if (d <= 0) throw std::invalid_argument("Tensor: dimensions must be positive");
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    long long numel() const { return static_cast<long long>(data.size()); }
    int size(int i) const { return shape.at(static_cast<std::size_t>(i)); }

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    // 2-D / 3-D accessors (row-major; innermost index last).
    double& at(int y, int x) { return data[static_cast<std::size_t>(y) * shape[1] + x]; }
    double at(int y, int x) const { return data[static_cast<std::size_t>(y) * shape[1] + x]; }
    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const char* context) const {
        if (!all_finite()) throw std::runtime_error(std::string(context) + ": non-finite values");
    }

    double sum() const { return std::accumulate(data.begin(), data.end(), 0.0); }
    double mean() const { return data.empty() ? 0.0 : sum() / static_cast<double>(data.size()); }
    double min() const { return *std::min_element(data.begin(), data.end()); }
    double max() const { return *std::max_element(data.begin(), data.end()); }

    void clamp_(double lo, double hi) {
        for (double& v : data) v = std::min(hi, std::max(lo, v));
    }
};

inline std::string shape_str(const std::vector<int>& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += ",";
    }
    return out + "]";
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

// i.i.d. standard-normal entries, deterministic under the rng state.
inline Tensor seeded_gaussian(const std::vector<int>& shape, Rng& rng) {
    if (shape.empty()) throw std::invalid_argument("seeded_gaussian: empty shape");
    Tensor t(shape);
    for (double& v : t.data) v = rng.normal();
    return t;
}

inline double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.data.size());
}

// Peak signal-to-noise ratio on unit dynamic range.
inline double psnr(const Tensor& a, const Tensor& b) {
    double m = mse(a, b);
    if (m <= 0.0) return 99.0;
    return -10.0 * std::log10(m);
}

// ---------------------------------------------------------------------------
// DRFT tensor file: "DRFT" magic, version byte, u8 dtype (0=f32, 1=f64),
// u8 rank, little-endian u32 dims, raw little-endian values.

enum class DrftType : std::uint8_t { f32 = 0, f64 = 1 };

namespace detail {

static_assert(sizeof(float) == 4 && sizeof(double) == 8, "unexpected float sizes");

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xFF));
    out.push_back(static_cast<char>((v >> 8) & 0xFF));
    out.push_back(static_cast<char>((v >> 16) & 0xFF));
    out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

inline std::string drft_encode(const Tensor& t, DrftType dtype = DrftType::f64) {
    if (t.rank() == 0 || t.rank() > 255) throw std::invalid_argument("drft: bad rank");
    std::string out;
    out.reserve(16 + t.data.size() * 8);
    out += "DRFT";
    out.push_back(1);  // version
    out.push_back(static_cast<char>(dtype));
    out.push_back(static_cast<char>(t.rank()));
    for (int d : t.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    if (dtype == DrftType::f64) {
        for (double v : t.data) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, 8);
            for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    } else {
        for (double v : t.data) {
            float f = static_cast<float>(v);
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
        }
    }
    return out;
}

inline void save_drft(const std::string& path, const Tensor& t, DrftType dtype = DrftType::f64) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_drft: cannot open " + path);
    std::string bytes = drft_encode(t, dtype);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("save_drft: write failed for " + path);
}

inline Tensor drft_decode(const std::string& bytes) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(bytes.data());
    std::size_t n = bytes.size();
    if (n < 7 || std::memcmp(p, "DRFT", 4) != 0) throw std::runtime_error("drft: bad magic");
    if (p[4] != 1) throw std::runtime_error("drft: unsupported version");
    DrftType dtype = static_cast<DrftType>(p[5]);
    if (dtype != DrftType::f32 && dtype != DrftType::f64)
        throw std::runtime_error("drft: bad dtype code");
    int rank = p[6];
    if (rank == 0) throw std::runtime_error("drft: zero rank");
    std::size_t off = 7;
    if (n < off + 4u * rank) throw std::runtime_error("drft: truncated dims");
    std::vector<int> shape(static_cast<std::size_t>(rank));
    long long count = 1;
    for (int i = 0; i < rank; ++i) {
        std::uint32_t d = detail::get_u32(p + off);
        off += 4;
        if (d == 0) throw std::runtime_error("drft: zero dimension");
        shape[static_cast<std::size_t>(i)] = static_cast<int>(d);
        count *= d;
    }
    std::size_t vs = (dtype == DrftType::f64) ? 8 : 4;
    if (n != off + vs * static_cast<std::size_t>(count)) throw std::runtime_error("drft: size mismatch");
    Tensor t(shape);
    for (long long i = 0; i < count; ++i) {
        if (dtype == DrftType::f64) {
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[off + b]) << (8 * b);
            std::memcpy(&t.data[static_cast<std::size_t>(i)], &bits, 8);
            off += 8;
        } else {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[off + b]) << (8 * b);
            float f;
            std::memcpy(&f, &bits, 4);
            t.data[static_cast<std::size_t>(i)] = static_cast<double>(f);
            off += 4;
        }
    }
    return t;
}

inline Tensor load_drft(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_drft: cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return drft_decode(bytes);
}

}  // namespace drfuse
