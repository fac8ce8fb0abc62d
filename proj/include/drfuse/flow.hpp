#pragma once

#include <cmath>
#include <stdexcept>

#include "drfuse/autodiff.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Optical flow, warping and the occlusion-aware temporal consistency loss.
// Flow tensors are [2,H,W] with plane 0 = dx and plane 1 = dy; masks are
// [H,W] with values in {0,1}.

inline double bilinear_at_clamped(const Tensor& img, int c, double sy, double sx) {
    const bool chan = img.rank() == 3;
    const int h = chan ? img.size(1) : img.size(0);
    const int w = chan ? img.size(2) : img.size(1);
    sx = std::min(static_cast<double>(w - 1), std::max(0.0, sx));
    sy = std::min(static_cast<double>(h - 1), std::max(0.0, sy));
    int x0 = static_cast<int>(std::floor(sx));
    int y0 = static_cast<int>(std::floor(sy));
    int x1 = std::min(x0 + 1, w - 1);
    int y1 = std::min(y0 + 1, h - 1);
    double fx = sx - x0, fy = sy - y0;
    auto px = [&](int y, int x) { return chan ? img.at(c, y, x) : img.at(y, x); };
    return (1 - fx) * (1 - fy) * px(y0, x0) + fx * (1 - fy) * px(y0, x1) +
           (1 - fx) * fy * px(y1, x0) + fx * fy * px(y1, x1);
}

// Backward warp: out(p) = bilinear sample of z at p - flow(p), borders
// clamped. Same sampling rule as the differentiable version in autodiff.hpp.
inline Tensor warp_bilinear(const Tensor& z, const Tensor& flow) {
    if (flow.rank() != 3 || flow.size(0) != 2)
        throw std::invalid_argument("warp_bilinear: flow must be [2,H,W]");
    const bool chan = z.rank() == 3;
    const int c = chan ? z.size(0) : 1;
    const int h = chan ? z.size(1) : z.size(0);
    const int w = chan ? z.size(2) : z.size(1);
    if (flow.size(1) != h || flow.size(2) != w)
        throw std::invalid_argument("warp_bilinear: flow dims must match input dims");
    Tensor out(z.shape);
    for (int ci = 0; ci < c; ++ci)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double sx = x - flow.at(0, y, x);
                double sy = y - flow.at(1, y, x);
                double v = bilinear_at_clamped(z, ci, sy, sx);
                if (chan)
                    out.at(ci, y, x) = v;
                else
                    out.at(y, x) = v;
            }
    return out;
}

// Block matching: per-tile integer displacement minimizing the sum of
// absolute differences against the previous frame (reads border-clamped).
// Ties break toward the smallest squared displacement, then lexicographic
// (dy, dx), which makes the result independent of search order.
inline Tensor estimate_flow(const Tensor& prev, const Tensor& curr, int block, int radius) {
    require_same_shape(prev, curr, "estimate_flow");
    if (prev.rank() != 2) throw std::invalid_argument("estimate_flow: frames must be [H,W]");
    if (block < 4) throw std::invalid_argument("estimate_flow: block must be at least 4");
    if (radius < 1) throw std::invalid_argument("estimate_flow: radius must be at least 1");
    const int h = prev.size(0), w = prev.size(1);
    if (block > h || block > w) throw std::invalid_argument("estimate_flow: block larger than frame");
    Tensor flow({2, h, w});
    auto prev_clamped = [&](int y, int x) {
        y = std::min(h - 1, std::max(0, y));
        x = std::min(w - 1, std::max(0, x));
        return prev.at(y, x);
    };
    for (int by = 0; by < h; by += block)
        for (int bx = 0; bx < w; bx += block) {
            const int y1 = std::min(by + block, h), x1 = std::min(bx + block, w);
            double best_sad = 0.0;
            int best_dy = 0, best_dx = 0;
            bool first = true;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    double sad = 0.0;
                    for (int y = by; y < y1; ++y)
                        for (int x = bx; x < x1; ++x)
                            sad += std::abs(curr.at(y, x) - prev_clamped(y - dy, x - dx));
                    int mag = dy * dy + dx * dx;
                    int best_mag = best_dy * best_dy + best_dx * best_dx;
                    bool better = first || sad < best_sad ||
                                  (sad == best_sad &&
                                   (mag < best_mag ||
                                    (mag == best_mag &&
                                     (dy < best_dy || (dy == best_dy && dx < best_dx)))));
                    if (better) {
                        best_sad = sad;
                        best_dy = dy;
                        best_dx = dx;
                        first = false;
                    }
                }
            for (int y = by; y < y1; ++y)
                for (int x = bx; x < x1; ++x) {
                    flow.at(0, y, x) = best_dx;
                    flow.at(1, y, x) = best_dy;
                }
        }
    return flow;
}

// Forward-backward consistency: a cell is occluded when following the forward
// flow and then the backward flow fails to return within tau pixels.
inline Tensor occlusion_mask(const Tensor& flow_fwd, const Tensor& flow_bwd, double tau = 1.0) {
    require_same_shape(flow_fwd, flow_bwd, "occlusion_mask");
    if (flow_fwd.rank() != 3 || flow_fwd.size(0) != 2)
        throw std::invalid_argument("occlusion_mask: flows must be [2,H,W]");
    const int h = flow_fwd.size(1), w = flow_fwd.size(2);
    Tensor mask({h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double fx = flow_fwd.at(0, y, x);
            double fy = flow_fwd.at(1, y, x);
            double bx = bilinear_at_clamped(flow_bwd, 0, y - fy, x - fx);
            double by = bilinear_at_clamped(flow_bwd, 1, y - fy, x - fx);
            double ex = fx + bx, ey = fy + by;
            mask.at(y, x) = (std::sqrt(ex * ex + ey * ey) > tau) ? 0.0 : 1.0;
        }
    return mask;
}

// Occlusion-aware warping error between consecutive latents:
// || M (.) (W(z_prev, flow) - z_curr) ||^2 / (||M||_1 + eps).
// The denominator counts mask cells once; the numerator sums over channels.
inline double temporal_loss(const Tensor& z_prev, const Tensor& z_curr, const Tensor& flow,
                            const Tensor& mask, double eps = 1e-6) {
    require_same_shape(z_prev, z_curr, "temporal_loss");
    if (eps <= 0.0) throw std::invalid_argument("temporal_loss: eps must be positive");
    Tensor warped = warp_bilinear(z_prev, flow);
    const bool chan = z_prev.rank() == 3;
    const int c = chan ? z_prev.size(0) : 1;
    const int h = chan ? z_prev.size(1) : z_prev.size(0);
    const int w = chan ? z_prev.size(2) : z_prev.size(1);
    if (mask.rank() != 2 || mask.size(0) != h || mask.size(1) != w)
        throw std::invalid_argument("temporal_loss: mask dims must match latent dims");
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    double num = 0.0;
    for (int ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < plane; ++p) {
            double d = mask.data[p] * (warped.data[ci * plane + p] - z_curr.data[ci * plane + p]);
            num += d * d;
        }
    return num / (mask.sum() + eps);
}

// Differentiable version built from tape ops; same taps and summation order
// as temporal_loss, agreeing up to rounding of the final normalization.
inline Val temporal_loss_ad(Tape& tape, Val z_prev, Val z_curr, const Tensor& flow,
                            const Tensor& mask, double eps = 1e-6) {
    if (eps <= 0.0) throw std::invalid_argument("temporal_loss_ad: eps must be positive");
    const Tensor& Z = tape.val(z_prev);
    const bool chan = Z.rank() == 3;
    const int c = chan ? Z.size(0) : 1;
    const int h = chan ? Z.size(1) : Z.size(0);
    const int w = chan ? Z.size(2) : Z.size(1);
    if (mask.rank() != 2 || mask.size(0) != h || mask.size(1) != w)
        throw std::invalid_argument("temporal_loss_ad: mask dims must match latent dims");
    Tensor mask_c(Z.shape);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci)
        std::copy(mask.data.begin(), mask.data.end(),
                  mask_c.data.begin() + static_cast<std::ptrdiff_t>(ci) * static_cast<std::ptrdiff_t>(plane));
    Val warped = ad::bilinear_warp(z_prev, flow);
    Val diff = ad::sub(warped, z_curr);
    Val masked = ad::mul(diff, tape.constant(mask_c));
    Val num = ad::sum(ad::square(masked));
    return ad::mul_scalar(num, 1.0 / (mask.sum() + eps));
}

// Average-pool pixel flow onto the latent grid; displacements shrink by the
// downsampling factor because latent cells are f pixels wide.
inline Tensor flow_to_latent(const Tensor& flow, int f) {
    if (flow.rank() != 3 || flow.size(0) != 2)
        throw std::invalid_argument("flow_to_latent: flow must be [2,H,W]");
    if (f < 1 || flow.size(1) % f != 0 || flow.size(2) % f != 0)
        throw std::invalid_argument("flow_to_latent: dims must divide by factor");
    const int lh = flow.size(1) / f, lw = flow.size(2) / f;
    Tensor out({2, lh, lw});
    for (int p = 0; p < 2; ++p)
        for (int y = 0; y < lh; ++y)
            for (int x = 0; x < lw; ++x) {
                double s = 0.0;
                for (int i = 0; i < f; ++i)
                    for (int j = 0; j < f; ++j) s += flow.at(p, y * f + i, x * f + j);
                out.at(p, y, x) = s / (f * f) / f;
            }
    return out;
}

// Majority vote per latent cell; exact ties count as unoccluded.
inline Tensor mask_to_latent(const Tensor& mask, int f) {
    if (mask.rank() != 2) throw std::invalid_argument("mask_to_latent: mask must be [H,W]");
    if (f < 1 || mask.size(0) % f != 0 || mask.size(1) % f != 0)
        throw std::invalid_argument("mask_to_latent: dims must divide by factor");
    const int lh = mask.size(0) / f, lw = mask.size(1) / f;
    Tensor out({lh, lw});
    for (int y = 0; y < lh; ++y)
        for (int x = 0; x < lw; ++x) {
            double s = 0.0;
            for (int i = 0; i < f; ++i)
                for (int j = 0; j < f; ++j) s += mask.at(y * f + i, x * f + j);
            out.at(y, x) = (2.0 * s >= f * f) ? 1.0 : 0.0;
        }
    return out;
}

}  // namespace drfuse
