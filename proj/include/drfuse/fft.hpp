#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "drfuse/tensor.hpp"

namespace drfuse {

namespace fftdetail {

inline bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform, unnormalized. inverse flips the
// twiddle sign only; no 1/n scaling is applied anywhere in this file.
inline void fft_pow2(std::vector<std::complex<double>>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    for (int i = 1, j = 0; i < n; ++i) {
        int bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[static_cast<std::size_t>(i)], a[static_cast<std::size_t>(j)]);
    }
    for (int len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * M_PI / len * (inverse ? 1.0 : -1.0);
        std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (int i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (int k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[static_cast<std::size_t>(i + k)];
                std::complex<double> v = a[static_cast<std::size_t>(i + k + len / 2)] * w;
                a[static_cast<std::size_t>(i + k)] = u + v;
                a[static_cast<std::size_t>(i + k + len / 2)] = u - v;
                w *= wlen;
            }
        }
    }
}

inline void dft_naive(std::vector<std::complex<double>>& a, bool inverse) {
    const int n = static_cast<int>(a.size());
    std::vector<std::complex<double>> out(static_cast<std::size_t>(n));
    const double sign = inverse ? 1.0 : -1.0;
    for (int k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (int p = 0; p < n; ++p) {
            double ang = sign * 2.0 * M_PI * k * p / n;
            acc += a[static_cast<std::size_t>(p)] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[static_cast<std::size_t>(k)] = acc;
    }
    a = std::move(out);
}

inline void transform_1d(std::vector<std::complex<double>>& a, bool inverse) {
    if (is_pow2(static_cast<int>(a.size())))
        fft_pow2(a, inverse);
    else
        dft_naive(a, inverse);
}

}  // namespace fftdetail

// 2-D transform of an H*W complex grid stored row-major, unnormalized.
inline void fft2(std::vector<std::complex<double>>& a, int h, int w, bool inverse) {
    if (static_cast<int>(a.size()) != h * w) throw std::invalid_argument("fft2: size mismatch");
    std::vector<std::complex<double>> line;
    for (int y = 0; y < h; ++y) {
        line.assign(a.begin() + static_cast<std::ptrdiff_t>(y) * w,
                    a.begin() + static_cast<std::ptrdiff_t>(y + 1) * w);
        fftdetail::transform_1d(line, inverse);
        std::copy(line.begin(), line.end(), a.begin() + static_cast<std::ptrdiff_t>(y) * w);
    }
    line.resize(static_cast<std::size_t>(h));
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) line[static_cast<std::size_t>(y)] = a[static_cast<std::size_t>(y) * w + x];
        fftdetail::transform_1d(line, inverse);
        for (int y = 0; y < h; ++y) a[static_cast<std::size_t>(y) * w + x] = line[static_cast<std::size_t>(y)];
    }
}

// Forward 2-D DFT of a real image; fills re and im planes ([H,W] each).
inline void dft2_forward(const Tensor& x, Tensor& re, Tensor& im) {
    if (x.rank() != 2) throw std::invalid_argument("dft2_forward: input must be 2-D");
    const int h = x.size(0), w = x.size(1);
    std::vector<std::complex<double>> a(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = {x.data[i], 0.0};
    fft2(a, h, w, false);
    re = Tensor({h, w});
    im = Tensor({h, w});
    for (std::size_t i = 0; i < a.size(); ++i) {
        re.data[i] = a[i].real();
        im.data[i] = a[i].imag();
    }
}

// Adjoint of dft2_forward: given cotangents of (re, im), the cotangent of the
// real input is Re of the unnormalized inverse transform of (gre + i*gim).
inline Tensor dft2_adjoint(const Tensor& gre, const Tensor& gim) {
    require_same_shape(gre, gim, "dft2_adjoint");
    if (gre.rank() != 2) throw std::invalid_argument("dft2_adjoint: inputs must be 2-D");
    const int h = gre.size(0), w = gre.size(1);
    std::vector<std::complex<double>> a(static_cast<std::size_t>(h) * w);
    for (std::size_t i = 0; i < a.size(); ++i) a[i] = {gre.data[i], gim.data[i]};
    fft2(a, h, w, true);
    Tensor out({h, w});
    for (std::size_t i = 0; i < a.size(); ++i) out.data[i] = a[i].real();
    return out;
}

// Squared DFT magnitudes. Parseval: sum(spectrum) == H*W * sum(x^2).
inline Tensor power_spectrum_2d(const Tensor& x) {
    if (x.rank() != 2) throw std::invalid_argument("power_spectrum_2d: input must be 2-D");
    Tensor re, im;
    dft2_forward(x, re, im);
    Tensor out({x.size(0), x.size(1)});
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = re.data[i] * re.data[i] + im.data[i] * im.data[i];
    return out;
}

}  // namespace drfuse
