#pragma once

#include <cmath>
#include <stdexcept>

#include "drfuse/autodiff.hpp"
#include "drfuse/codec.hpp"
#include "drfuse/fft.hpp"
#include "drfuse/metrics.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Frequency-weighted spectral loss: mean over frequency bins of
// w(u,v) |X(u,v) - Y(u,v)|^2, where the weight matrix is the spectrum gap
// |X - Y| itself, normalized by its maximum and treated as a constant
// (detached) during differentiation. Zero iff x == y.
inline Tensor focal_frequency_weights(const Tensor& x, const Tensor& y) {
    require_same_shape(x, y, "focal_frequency_weights");
    if (x.rank() != 2) throw std::invalid_argument("focal_frequency_weights: inputs must be 2-D");
    Tensor d(x.shape);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = x.data[i] - y.data[i];
    Tensor re, im;
    dft2_forward(d, re, im);
    Tensor w(x.shape);
    double mx = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        w.data[i] = std::sqrt(re.data[i] * re.data[i] + im.data[i] * im.data[i]);
        mx = std::max(mx, w.data[i]);
    }
    if (mx > 0.0)
        for (double& v : w.data) v /= mx;
    return w;
}

inline double focal_frequency_loss(const Tensor& x, const Tensor& y) {
    Tensor w = focal_frequency_weights(x, y);
    Tensor d(x.shape);
    for (std::size_t i = 0; i < d.data.size(); ++i) d.data[i] = x.data[i] - y.data[i];
    Tensor re, im;
    dft2_forward(d, re, im);
    double acc = 0.0;
    for (std::size_t i = 0; i < w.data.size(); ++i)
        acc += w.data[i] * (re.data[i] * re.data[i] + im.data[i] * im.data[i]);
    return acc / static_cast<double>(x.numel());
}

// Differentiable version; pass fixed_weights to freeze the weight matrix
// (required for finite-difference checks, where the detached weights would
// otherwise change under perturbation).
inline Val focal_frequency_loss_ad(Tape& t, Val x, const Tensor& y,
                                   const Tensor* fixed_weights = nullptr) {
    const Tensor& X = t.val(x);
    require_same_shape(X, y, "focal_frequency_loss_ad");
    const int h = X.size(0), w = X.size(1);
    Tensor weights = fixed_weights ? *fixed_weights : focal_frequency_weights(X, y);
    Val d = ad::sub(x, t.constant(y));
    Val spec = ad::dft2(d);  // [2,h,w]
    Val flat = ad::reshape(spec, {2, h * w});
    Val dre = ad::slice_rows(flat, 0, 1);
    Val dim = ad::slice_rows(flat, 1, 2);
    Val mag2 = ad::add(ad::square(dre), ad::square(dim));
    Tensor wrow(std::vector<int>{1, h * w}, weights.data);
    Val weighted = ad::mul(mag2, t.constant(wrow));
    return ad::mul_scalar(ad::sum(weighted), 1.0 / static_cast<double>(X.numel()));
}

// Forward-difference image gradients with a one-cell valid crop, as fixed
// correlation kernels so the taped and plain versions share arithmetic.
inline Tensor grad_kernel_dx() {
    Tensor k({1, 2});
    k.at(0, 0) = -1.0;
    k.at(0, 1) = 1.0;
    return k;
}

inline Tensor grad_kernel_dy() {
    Tensor k({2, 1});
    k.at(0, 0) = -1.0;
    k.at(1, 0) = 1.0;
    return k;
}

inline Tensor image_grad_dx(const Tensor& img) { return ssimdetail::conv_valid(img, grad_kernel_dx()); }

inline Tensor image_grad_dy(const Tensor& img) { return ssimdetail::conv_valid(img, grad_kernel_dy()); }

// Per-pixel composite keeping the larger intensity.
inline Tensor max_composite(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_composite");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = std::max(a.data[i], b.data[i]);
    return out;
}

// Per-pixel gradient target keeping whichever source gradient has the larger
// magnitude (sign preserved); ties take the first argument.
inline Tensor max_magnitude(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_magnitude");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < a.data.size(); ++i)
        out.data[i] = std::abs(a.data[i]) >= std::abs(b.data[i]) ? a.data[i] : b.data[i];
    return out;
}

// Mean squared intensity gap against the max(IR, VI) composite.
inline Val intensity_loss_ad(Tape& t, Val pred, const Tensor& ir, const Tensor& vi) {
    Tensor target = max_composite(ir, vi);
    Val d = ad::sub(pred, t.constant(target));
    return ad::mean(ad::square(d));
}

// Mean squared gradient gap against the strongest source gradients, averaged
// over the horizontal and vertical directions.
inline Val gradient_loss_ad(Tape& t, Val pred, const Tensor& ir, const Tensor& vi) {
    Tensor tx = max_magnitude(image_grad_dx(ir), image_grad_dx(vi));
    Tensor ty = max_magnitude(image_grad_dy(ir), image_grad_dy(vi));
    Val px = ad::conv2d_valid_fixed(pred, grad_kernel_dx());
    Val py = ad::conv2d_valid_fixed(pred, grad_kernel_dy());
    Val lx = ad::mean(ad::square(ad::sub(px, t.constant(tx))));
    Val ly = ad::mean(ad::square(ad::sub(py, t.constant(ty))));
    return ad::mul_scalar(ad::add(lx, ly), 0.5);
}

inline double intensity_loss(const Tensor& pred, const Tensor& ir, const Tensor& vi) {
    Tensor target = max_composite(ir, vi);
    return mse(pred, target);
}

inline double gradient_loss(const Tensor& pred, const Tensor& ir, const Tensor& vi) {
    Tensor tx = max_magnitude(image_grad_dx(ir), image_grad_dx(vi));
    Tensor ty = max_magnitude(image_grad_dy(ir), image_grad_dy(vi));
    return 0.5 * (mse(image_grad_dx(pred), tx) + mse(image_grad_dy(pred), ty));
}

// Feature-space distance using the frozen Stage-I encoder as the feature
// extractor: L2 between continuous latents of prediction and target.
inline Val perceptual_loss_ad(Tape& t, Codec& codec, Val pred, const Tensor& target) {
    Val fp = codec.encode_ad(t, pred, true);
    Tensor ft = codec.encode(target);
    return ad::mean(ad::square(ad::sub(fp, t.constant(ft))));
}

struct FusionLossWeights {
    double perceptual = 0.1;
    double ssim = 1.0;
    double gradient = 1.0;
    double intensity = 1.0;
};

// Pixel-space training objective for Stage II: weighted sum of perceptual,
// structural (1 - SSIM), gradient and intensity terms between a decoded
// prediction and the saliency composite implied by the IR/VI pair.
inline Val fusion_loss_ad(Tape& t, Codec& codec, Val pred, const Tensor& ir, const Tensor& vi,
                          const FusionLossWeights& w, int ssim_window = 11) {
    Tensor target = max_composite(ir, vi);
    Val total = t.constant(Tensor::scalar(0.0));
    if (w.perceptual > 0.0)
        total = ad::add(total, ad::mul_scalar(perceptual_loss_ad(t, codec, pred, target), w.perceptual));
    if (w.ssim > 0.0) {
        Val s = ssim_ad(t, pred, target, ssim_window);
        Val one_minus = ad::add_scalar(ad::mul_scalar(s, -1.0), 1.0);
        total = ad::add(total, ad::mul_scalar(one_minus, w.ssim));
    }
    if (w.gradient > 0.0)
        total = ad::add(total, ad::mul_scalar(gradient_loss_ad(t, pred, ir, vi), w.gradient));
    if (w.intensity > 0.0)
        total = ad::add(total, ad::mul_scalar(intensity_loss_ad(t, pred, ir, vi), w.intensity));
    return total;
}

// Same objective evaluated without a tape, for held-out scoring.
inline double fusion_loss_value(Codec& codec, const Tensor& pred, const Tensor& ir,
                                const Tensor& vi, const FusionLossWeights& w,
                                int ssim_window = 11) {
    Tensor target = max_composite(ir, vi);
    double total = 0.0;
    if (w.perceptual > 0.0) total += w.perceptual * mse(codec.encode(pred), codec.encode(target));
    if (w.ssim > 0.0) total += w.ssim * (1.0 - ssim(pred, target, ssim_window));
    if (w.gradient > 0.0) total += w.gradient * gradient_loss(pred, ir, vi);
    if (w.intensity > 0.0) total += w.intensity * intensity_loss(pred, ir, vi);
    return total;
}

}  // namespace drfuse
