#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/denoiser.hpp"
#include "drfuse/fft.hpp"
#include "drfuse/rng.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Stabilized history guidance: three parallel views of the same history
// window differing only in how much noise the slots carry, combined into a
// single guided velocity.

enum class HistoryVariant {
    baseline,            // every slot replaced by standard Gaussian noise
    stabilized,          // every slot lightly re-noised at sigma_stab
    context_suppressed,  // only the most recent frame, unmodulated
};

struct GuidanceSettings {
    double scale = 2.0;       // guidance strength s
    double sigma_stab = 0.02; // modulation level for the stabilized branch
};

// Variance-preserving noise modulation: sqrt(1 - lambda^2) z + lambda eps.
// lambda 0 is the exact identity (no draw); lambda 1 is pure noise,
// statistically independent of z.
inline Tensor modulate(const Tensor& z, double lambda, Rng& rng) {
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("modulate: lambda must lie in [0,1]");
    if (lambda == 0.0) return z;
    Tensor out(z.shape);
    if (lambda == 1.0) {
        for (double& v : out.data) v = rng.normal();
        return out;
    }
    const double alpha = std::sqrt(1.0 - lambda * lambda);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        out.data[i] = alpha * z.data[i] + lambda * rng.normal();
    return out;
}

// Builds the attention-window slots for one guidance branch. Slot i draws
// its modulation noise from rng.split(i), so branches with disjoint parent
// streams never share draws.
inline std::vector<HistorySlot> make_history_config(const std::vector<const Tensor*>& history,
                                                    HistoryVariant variant,
                                                    const GuidanceSettings& settings, Rng& rng) {
    std::vector<HistorySlot> slots;
    switch (variant) {
        case HistoryVariant::baseline:
            for (std::size_t i = 0; i < history.size(); ++i) {
                Rng r = rng.split(i);
                slots.push_back({modulate(*history[i], 1.0, r), 1.0});
            }
            break;
        case HistoryVariant::stabilized:
            for (std::size_t i = 0; i < history.size(); ++i) {
                Rng r = rng.split(i);
                slots.push_back({modulate(*history[i], settings.sigma_stab, r),
                                 settings.sigma_stab});
            }
            break;
        case HistoryVariant::context_suppressed:
            if (history.empty())
                throw std::invalid_argument(
                    "make_history_config: context-suppressed variant needs history");
            slots.push_back({*history.back(), 0.0});
            break;
    }
    return slots;
}

// v0 + s (v1 - v2), elementwise: baseline velocity plus the scaled gap
// between the stabilized-context and suppressed-context estimates.
inline Tensor compose_guidance(const Tensor& v0, const Tensor& v1, const Tensor& v2, double s) {
    require_same_shape(v0, v1, "compose_guidance");
    require_same_shape(v0, v2, "compose_guidance");
    Tensor out(v0.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = v0.data[i] + s * (v1.data[i] - v2.data[i]);
    return out;
}

struct SpectralBandRow {
    double band_low = 0.0;
    double band_high = 0.0;
    double retention = 0.0;           // alpha^2, band-independent
    double corruption = 0.0;          // measured noise-to-signal power ratio
    double corruption_closed_form = 0.0;
    long long bins = 0;
};

// Monte Carlo verification that modulation attenuates where the signal
// spectrum is weak: per radial frequency band, the injected noise power
// relative to the retained signal power. Closed form per band:
// sigma^2 N / (alpha^2 P(band)), with N the pixel count and P the mean
// squared spectrum magnitude of z over the band.
inline std::vector<SpectralBandRow> spectral_attenuation_report(const Tensor& z, double lambda,
                                                                Rng& rng, int trials,
                                                                int n_bands = 4) {
    if (z.rank() != 2) throw std::invalid_argument("spectral_attenuation_report: z must be 2-D");
    if (trials < 100)
        throw std::invalid_argument("spectral_attenuation_report: need at least 100 trials");
    if (lambda < 0.0 || lambda > 1.0)
        throw std::invalid_argument("spectral_attenuation_report: lambda must lie in [0,1]");
    if (n_bands < 1) throw std::invalid_argument("spectral_attenuation_report: need >= 1 band");
    const int h = z.size(0), w = z.size(1);
    const double n = static_cast<double>(z.numel());
    Tensor zre, zim;
    dft2_forward(z, zre, zim);

    auto band_of = [&](int u, int v) {
        double fu = static_cast<double>(std::min(u, h - u)) / h;
        double fv = static_cast<double>(std::min(v, w - v)) / w;
        double r = std::sqrt(fu * fu + fv * fv);
        const double rmax = std::sqrt(0.5) * (1.0 + 1e-12);
        int b = static_cast<int>(r / rmax * n_bands);
        return std::min(b, n_bands - 1);
    };

    std::vector<double> signal_power(static_cast<std::size_t>(n_bands), 0.0);
    std::vector<long long> bins(static_cast<std::size_t>(n_bands), 0);
    for (int u = 0; u < h; ++u)
        for (int v = 0; v < w; ++v) {
            int b = band_of(u, v);
            signal_power[static_cast<std::size_t>(b)] +=
                zre.at(u, v) * zre.at(u, v) + zim.at(u, v) * zim.at(u, v);
            ++bins[static_cast<std::size_t>(b)];
        }
    double total_signal = 0.0;
    for (double p : signal_power) total_signal += p;
    if (total_signal == 0.0)
        throw std::invalid_argument("spectral_attenuation_report: all-zero input spectrum");
    for (int b = 0; b < n_bands; ++b)
        signal_power[static_cast<std::size_t>(b)] /= static_cast<double>(bins[static_cast<std::size_t>(b)]);

    const double alpha = std::sqrt(1.0 - lambda * lambda);
    std::vector<double> noise_power(static_cast<std::size_t>(n_bands), 0.0);
    for (int trial = 0; trial < trials; ++trial) {
        Rng r = rng.split(static_cast<std::uint64_t>(trial));
        Tensor out = modulate(z, lambda, r);
        Tensor ore, oim;
        dft2_forward(out, ore, oim);
        for (int u = 0; u < h; ++u)
            for (int v = 0; v < w; ++v) {
                double dre = ore.at(u, v) - alpha * zre.at(u, v);
                double dim = oim.at(u, v) - alpha * zim.at(u, v);
                noise_power[static_cast<std::size_t>(band_of(u, v))] += dre * dre + dim * dim;
            }
    }

    std::vector<SpectralBandRow> rows;
    const double rmax = std::sqrt(0.5);
    for (int b = 0; b < n_bands; ++b) {
        SpectralBandRow row;
        row.band_low = rmax * b / n_bands;
        row.band_high = rmax * (b + 1) / n_bands;
        row.retention = alpha * alpha;
        row.bins = bins[static_cast<std::size_t>(b)];
        double mean_noise = noise_power[static_cast<std::size_t>(b)] /
                            (static_cast<double>(trials) * static_cast<double>(row.bins));
        double ps = signal_power[static_cast<std::size_t>(b)];
        row.corruption = ps > 0.0 && alpha > 0.0 ? mean_noise / (alpha * alpha * ps) : 0.0;
        row.corruption_closed_form =
            ps > 0.0 && alpha > 0.0 ? lambda * lambda * n / (alpha * alpha * ps) : 0.0;
        rows.push_back(row);
    }
    return rows;
}

inline void save_spectral_csv(const std::string& path, const std::vector<SpectralBandRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "band_low,band_high,retention,corruption\n";
    char buf[200];
    for (const SpectralBandRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g\n", r.band_low, r.band_high,
                      r.retention, r.corruption);
        out << buf;
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace drfuse
