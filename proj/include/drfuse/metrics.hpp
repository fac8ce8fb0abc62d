#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/autodiff.hpp"
#include "drfuse/flow.hpp"
#include "drfuse/image_io.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Pearson correlation of flattened pixels; defined as 0 when either input is
// constant (zero variance).
inline double pearson_cc(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "pearson_cc");
    const double n = static_cast<double>(a.numel());
    double ma = a.mean(), mb = b.mean();
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double da = a.data[i] - ma, db = b.data[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return (cov / n) / std::sqrt((va / n) * (vb / n));
}

// Shannon entropy (bits) of the 8-bit histogram. Quantization matches PGM
// export, so entropy of a tensor equals entropy of its exported image.
inline double entropy_bits(const Tensor& a) {
    if (a.numel() == 0) throw std::invalid_argument("entropy_bits: empty image");
    std::vector<long long> hist(256, 0);
    for (double v : a.data) ++hist[quantize_u8(v)];
    const double n = static_cast<double>(a.numel());
    double h = 0.0;
    for (long long c : hist) {
        if (c == 0) continue;
        double p = c / n;
        h -= p * std::log2(p);
    }
    return h;
}

inline Tensor gaussian_kernel_2d(int window, double sigma) {
    if (window < 1 || window % 2 == 0)
        throw std::invalid_argument("gaussian_kernel_2d: window must be odd and positive");
    Tensor k({window, window});
    const int r = window / 2;
    double s = 0.0;
    for (int y = 0; y < window; ++y)
        for (int x = 0; x < window; ++x) {
            double dy = y - r, dx = x - r;
            k.at(y, x) = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            s += k.at(y, x);
        }
    for (double& v : k.data) v /= s;
    return k;
}

namespace ssimdetail {

inline Tensor conv_valid(const Tensor& img, const Tensor& k) {
    const int h = img.size(0), w = img.size(1), kh = k.size(0), kw = k.size(1);
    Tensor out({h - kh + 1, w - kw + 1});
    for (int oy = 0; oy < out.size(0); ++oy)
        for (int ox = 0; ox < out.size(1); ++ox) {
            double acc = 0.0;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) acc += img.at(oy + ky, ox + kx) * k.at(ky, kx);
            out.at(oy, ox) = acc;
        }
    return out;
}

}  // namespace ssimdetail

// Mean local structural similarity with a Gaussian window over the valid
// region; unit dynamic range stabilizers C1=(0.01)^2, C2=(0.03)^2.
inline double ssim(const Tensor& a, const Tensor& b, int window = 11, double sigma = 1.5,
                   double c1 = 0.0001, double c2 = 0.0009) {
    require_same_shape(a, b, "ssim");
    if (a.rank() != 2) throw std::invalid_argument("ssim: images must be [H,W]");
    if (a.size(0) < window || a.size(1) < window)
        throw std::invalid_argument("ssim: image smaller than window");
    using ssimdetail::conv_valid;
    Tensor k = gaussian_kernel_2d(window, sigma);
    Tensor aa(a.shape), bb(a.shape), ab(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        aa.data[i] = a.data[i] * a.data[i];
        bb.data[i] = b.data[i] * b.data[i];
        ab.data[i] = a.data[i] * b.data[i];
    }
    Tensor ua = conv_valid(a, k), ub = conv_valid(b, k);
    Tensor uaa = conv_valid(aa, k), ubb = conv_valid(bb, k), uab = conv_valid(ab, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < ua.data.size(); ++i) {
        double ma = ua.data[i], mb = ub.data[i];
        double va = uaa.data[i] - ma * ma;
        double vb = ubb.data[i] - mb * mb;
        double cov = uab.data[i] - ma * mb;
        double l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        double s = (2.0 * cov + c2) / (va + vb + c2);
        acc += l * s;
    }
    return acc / static_cast<double>(ua.numel());
}

// Differentiable SSIM of a against a fixed reference; mirrors ssim() term for
// term so the two agree to rounding.
inline Val ssim_ad(Tape& tape, Val a, const Tensor& ref, int window = 11, double sigma = 1.5,
                   double c1 = 0.0001, double c2 = 0.0009) {
    const Tensor& A = tape.val(a);
    require_same_shape(A, ref, "ssim_ad");
    if (A.rank() != 2) throw std::invalid_argument("ssim_ad: images must be [H,W]");
    if (A.size(0) < window || A.size(1) < window)
        throw std::invalid_argument("ssim_ad: image smaller than window");
    Tensor k = gaussian_kernel_2d(window, sigma);
    Val b = tape.constant(ref);
    Val ua = ad::conv2d_valid_fixed(a, k);
    Val ub = ad::conv2d_valid_fixed(b, k);
    Val uaa = ad::conv2d_valid_fixed(ad::mul(a, a), k);
    Val ubb = ad::conv2d_valid_fixed(ad::mul(b, b), k);
    Val uab = ad::conv2d_valid_fixed(ad::mul(a, b), k);
    Val va = ad::sub(uaa, ad::mul(ua, ua));
    Val vb = ad::sub(ubb, ad::mul(ub, ub));
    Val cov = ad::sub(uab, ad::mul(ua, ub));
    Val l = ad::div(ad::add_scalar(ad::mul_scalar(ad::mul(ua, ub), 2.0), c1),
                    ad::add_scalar(ad::add(ad::mul(ua, ua), ad::mul(ub, ub)), c1));
    Val s = ad::div(ad::add_scalar(ad::mul_scalar(cov, 2.0), c2),
                    ad::add_scalar(ad::add(va, vb), c2));
    return ad::mean(ad::mul(l, s));
}

// Mean squared inter-frame difference per adjacent pair; zero iff constant.
inline std::vector<double> frame_diff_energy(const std::vector<Tensor>& seq) {
    if (seq.size() < 2) throw std::invalid_argument("frame_diff_energy: need at least two frames");
    std::vector<double> out;
    for (std::size_t t = 1; t < seq.size(); ++t) {
        require_same_shape(seq[t - 1], seq[t], "frame_diff_energy");
        double acc = 0.0;
        for (std::size_t i = 0; i < seq[t].data.size(); ++i) {
            double d = seq[t].data[i] - seq[t - 1].data[i];
            acc += d * d;
        }
        out.push_back(acc / static_cast<double>(seq[t].numel()));
    }
    return out;
}

// Occlusion-masked warping error per adjacent pair, evaluated on output
// frames with the supplied (typically ground-truth) flow.
inline std::vector<double> warped_residual(const std::vector<Tensor>& seq,
                                           const std::vector<Tensor>& flows,
                                           const std::vector<Tensor>& masks) {
    if (seq.size() < 2) throw std::invalid_argument("warped_residual: need at least two frames");
    if (flows.size() != seq.size() - 1 || masks.size() != seq.size() - 1)
        throw std::invalid_argument("warped_residual: flows/masks must have length frames-1");
    std::vector<double> out;
    for (std::size_t t = 1; t < seq.size(); ++t)
        out.push_back(temporal_loss(seq[t - 1], seq[t], flows[t - 1], masks[t - 1]));
    return out;
}

// Signed inter-frame difference on a symmetric red-white-blue scale: zero
// maps to white, positive to red, negative to blue. One fixed scale (the
// largest absolute difference) across the whole sequence.
inline std::vector<Tensor> diff_map_render(const std::vector<Tensor>& seq) {
    if (seq.size() < 2) throw std::invalid_argument("diff_map_render: need at least two frames");
    double scale = 0.0;
    for (std::size_t t = 1; t < seq.size(); ++t) {
        require_same_shape(seq[t - 1], seq[t], "diff_map_render");
        for (std::size_t i = 0; i < seq[t].data.size(); ++i)
            scale = std::max(scale, std::abs(seq[t].data[i] - seq[t - 1].data[i]));
    }
    std::vector<Tensor> maps;
    const int h = seq[0].size(0), w = seq[0].size(1);
    for (std::size_t t = 1; t < seq.size(); ++t) {
        Tensor m({3, h, w});
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double d = scale == 0.0 ? 0.0 : (seq[t].at(y, x) - seq[t - 1].at(y, x)) / scale;
                double r = 1.0, g = 1.0, b = 1.0;
                if (d > 0.0) {
                    g = 1.0 - d;
                    b = 1.0 - d;
                } else if (d < 0.0) {
                    r = 1.0 + d;
                    g = 1.0 + d;
                }
                m.at(0, y, x) = r;
                m.at(1, y, x) = g;
                m.at(2, y, x) = b;
            }
        maps.push_back(std::move(m));
    }
    return maps;
}

struct MetricsRow {
    int frame = 0;
    double cc_ir = 0.0, cc_vi = 0.0, cc = 0.0;
    double en = 0.0;
    double ssim_ir = 0.0, ssim_vi = 0.0, ssim = 0.0;
    double diff_energy = 0.0;       // 0 for the first frame
    double warped_residual = 0.0;   // 0 for the first frame
};

inline const char* metrics_csv_header() {
    return "frame,cc_ir,cc_vi,cc,en,ssim_ir,ssim_vi,ssim,diff_energy,warped_residual";
}

inline std::string metrics_csv_line(const MetricsRow& r) {
    char buf[400];
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", r.frame,
                  r.cc_ir, r.cc_vi, r.cc, r.en, r.ssim_ir, r.ssim_vi, r.ssim, r.diff_energy,
                  r.warped_residual);
    return buf;
}

inline void save_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << metrics_csv_header() << "\n";
    for (const MetricsRow& r : rows) out << metrics_csv_line(r) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::vector<MetricsRow> load_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty csv");
    if (line != metrics_csv_header())
        throw std::runtime_error(path + ": unexpected csv header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        MetricsRow r;
        if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf,%lf", &r.frame, &r.cc_ir,
                        &r.cc_vi, &r.cc, &r.en, &r.ssim_ir, &r.ssim_vi, &r.ssim, &r.diff_energy,
                        &r.warped_residual) != 10)
            throw std::runtime_error(path + ": malformed csv row: " + line);
        rows.push_back(r);
    }
    return rows;
}

// Per-frame metrics of a fused grayscale sequence against its sources.
inline std::vector<MetricsRow> evaluate_sequence(const std::vector<Tensor>& fused,
                                                 const std::vector<Tensor>& ir,
                                                 const std::vector<Tensor>& vi,
                                                 const std::vector<Tensor>& flows,
                                                 const std::vector<Tensor>& masks) {
    if (fused.size() != ir.size() || fused.size() != vi.size())
        throw std::invalid_argument("evaluate_sequence: sequence length mismatch");
    if (fused.empty()) throw std::invalid_argument("evaluate_sequence: empty sequence");
    const bool temporal = fused.size() >= 2 && flows.size() == fused.size() - 1 &&
                          masks.size() == fused.size() - 1;
    std::vector<MetricsRow> rows;
    for (std::size_t t = 0; t < fused.size(); ++t) {
        MetricsRow r;
        r.frame = static_cast<int>(t);
        r.cc_ir = pearson_cc(fused[t], ir[t]);
        r.cc_vi = pearson_cc(fused[t], vi[t]);
        r.cc = 0.5 * (r.cc_ir + r.cc_vi);
        r.en = entropy_bits(fused[t]);
        r.ssim_ir = ssim(fused[t], ir[t]);
        r.ssim_vi = ssim(fused[t], vi[t]);
        r.ssim = 0.5 * (r.ssim_ir + r.ssim_vi);
        if (t >= 1) {
            double acc = 0.0;
            for (std::size_t i = 0; i < fused[t].data.size(); ++i) {
                double d = fused[t].data[i] - fused[t - 1].data[i];
                acc += d * d;
            }
            r.diff_energy = acc / static_cast<double>(fused[t].numel());
            if (temporal)
                r.warped_residual =
                    temporal_loss(fused[t - 1], fused[t], flows[t - 1], masks[t - 1]);
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace drfuse
