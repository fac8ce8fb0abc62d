#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <vector>

#include "drfuse/codec.hpp"
#include "drfuse/denoiser.hpp"
#include "drfuse/guidance.hpp"
#include "drfuse/losses.hpp"
#include "drfuse/rng.hpp"
#include "drfuse/tensor.hpp"
#include "drfuse/threads.hpp"

namespace drfuse {

// Deterministic reverse diffusion in v-parameterization over a cosine
// variance-preserving schedule, with periodic gradient-based latent
// refinement and history-guided velocity composition.

struct NoiseSchedule {
    int steps = 0;
    std::vector<double> alpha, sigma;  // steps+1 points; alpha[0]=1, alpha[steps]~0

    static NoiseSchedule build(int K) {
        if (K < 1) throw std::invalid_argument("NoiseSchedule: need at least one step");
        NoiseSchedule s;
        s.steps = K;
        const double half_pi = 1.5707963267948966;
        for (int i = 0; i <= K; ++i) {
            double t = static_cast<double>(i) / K;
            s.alpha.push_back(std::cos(half_pi * t));
            s.sigma.push_back(std::sin(half_pi * t));
        }
        return s;
    }
};

struct DdimStep {
    Tensor z_prev;
    Tensor z0_hat;
};

inline void check_step_index(const NoiseSchedule& sched, int k) {
    if (k < 0 || k > sched.steps) throw std::invalid_argument("ddim: step index out of range");
}

inline Tensor ddim_z0(const Tensor& z_k, const Tensor& v, const NoiseSchedule& sched, int k) {
    check_step_index(sched, k);
    require_same_shape(z_k, v, "ddim");
    Tensor z0(z_k.shape);
    for (std::size_t i = 0; i < z0.data.size(); ++i)
        z0.data[i] = sched.alpha[static_cast<std::size_t>(k)] * z_k.data[i] -
                     sched.sigma[static_cast<std::size_t>(k)] * v.data[i];
    return z0;
}

inline Tensor ddim_eps(const Tensor& z_k, const Tensor& v, const NoiseSchedule& sched, int k) {
    check_step_index(sched, k);
    require_same_shape(z_k, v, "ddim");
    Tensor eps(z_k.shape);
    for (std::size_t i = 0; i < eps.data.size(); ++i)
        eps.data[i] = sched.sigma[static_cast<std::size_t>(k)] * z_k.data[i] +
                      sched.alpha[static_cast<std::size_t>(k)] * v.data[i];
    return eps;
}

inline Tensor ddim_recompose(const Tensor& z0, const Tensor& eps, const NoiseSchedule& sched,
                             int k) {
    check_step_index(sched, k);
    require_same_shape(z0, eps, "ddim");
    Tensor z(z0.shape);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = sched.alpha[static_cast<std::size_t>(k)] * z0.data[i] +
                    sched.sigma[static_cast<std::size_t>(k)] * eps.data[i];
    return z;
}

// One deterministic reverse step: recover the clean estimate and the noise
// direction from the velocity, then re-noise to the previous schedule point.
// At k=0 the clean estimate is returned unchanged.
inline DdimStep ddim_step(const Tensor& z_k, const Tensor& v, int k, const NoiseSchedule& sched) {
    check_step_index(sched, k);
    DdimStep out;
    out.z0_hat = ddim_z0(z_k, v, sched, k);
    if (k == 0) {
        out.z_prev = out.z0_hat;
        return out;
    }
    Tensor eps = ddim_eps(z_k, v, sched, k);
    out.z_prev = ddim_recompose(out.z0_hat, eps, sched, k - 1);
    return out;
}

inline Tensor blend(const Tensor& a, const Tensor& b, double gamma) {
    require_same_shape(a, b, "blend");
    Tensor out(a.shape);
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = (1.0 - gamma) * a.data[i] + gamma * b.data[i];
    return out;
}

struct RefinementSettings {
    double gamma = 0.3;       // blend weight toward the refined latent
    double lambda_reg = 1.0;  // pull toward the sampler's own estimate
    int inner_steps = 10;
    double step_size = 0.1;
    int cadence = 5;          // refine when the step index divides by this
    double w_grad = 1.0;
    double w_int = 1.0;
};

// Decoder hook: maps a latent Val to an image Val with frozen parameters.
using DecoderFn = std::function<Val(Tape&, Val)>;

// Alignment energy plus proximity regularizer, all squared-sum terms:
//   w_g ||grad D(z) - max-magnitude(grad IR, grad VI)||^2
// + w_i ||D(z) - max(IR, VI)||^2 + lambda_reg ||z - z0_hat||^2.
// Minimized by a short gradient descent with backtracking halving; accepted
// iterates never increase the energy, and a non-finite trial aborts with the
// last finite iterate. Returns (1-gamma) z0_hat + gamma z*.
inline Tensor refine_latent(const Tensor& z0_hat, const Tensor& ir, const Tensor& vi,
                            const DecoderFn& decoder, const RefinementSettings& rs) {
    if (rs.gamma < 0.0 || rs.gamma > 1.0)
        throw std::invalid_argument("refine_latent: gamma must lie in [0,1]");
    if (rs.lambda_reg < 0.0)
        throw std::invalid_argument("refine_latent: lambda_reg must be non-negative");
    if (rs.gamma == 0.0) return z0_hat;

    Tensor target_int = max_composite(ir, vi);
    Tensor target_dx = max_magnitude(image_grad_dx(ir), image_grad_dx(vi));
    Tensor target_dy = max_magnitude(image_grad_dy(ir), image_grad_dy(vi));

    auto energy = [&](Tensor& z, Tensor* grad_out) {
        Tape t;
        Val zv = grad_out != nullptr ? t.param(z) : t.constant(z);
        Val img = decoder(t, zv);
        Val total = t.constant(Tensor::scalar(0.0));
        if (rs.w_grad > 0.0) {
            Val px = ad::conv2d_valid_fixed(img, grad_kernel_dx());
            Val py = ad::conv2d_valid_fixed(img, grad_kernel_dy());
            Val gx = ad::sum(ad::square(ad::sub(px, t.constant(target_dx))));
            Val gy = ad::sum(ad::square(ad::sub(py, t.constant(target_dy))));
            total = ad::add(total, ad::mul_scalar(ad::add(gx, gy), rs.w_grad));
        }
        if (rs.w_int > 0.0) {
            Val di = ad::sub(img, t.constant(target_int));
            total = ad::add(total, ad::mul_scalar(ad::sum(ad::square(di)), rs.w_int));
        }
        if (rs.lambda_reg > 0.0) {
            Val dz = ad::sub(zv, t.constant(z0_hat));
            total = ad::add(total, ad::mul_scalar(ad::sum(ad::square(dz)), rs.lambda_reg));
        }
        double e = t.val(total).data[0];
        if (grad_out != nullptr) {
            t.backward(total);
            *grad_out = t.grad_of(z);
        }
        return e;
    };

    Tensor z = z0_hat;
    Tensor grad;
    double e_curr = energy(z, &grad);
    if (!std::isfinite(e_curr)) return blend(z0_hat, z0_hat, rs.gamma);
    double step = rs.step_size;
    for (int it = 0; it < rs.inner_steps; ++it) {
        Tensor trial(z.shape);
        double e_trial = 0.0;
        bool accepted = false;
        double s = step;
        for (int halvings = 0; halvings < 20; ++halvings) {
            for (std::size_t i = 0; i < z.data.size(); ++i)
                trial.data[i] = z.data[i] - s * grad.data[i];
            e_trial = energy(trial, nullptr);
            if (std::isfinite(e_trial) && e_trial <= e_curr) {
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if (!accepted) break;
        z = trial;
        e_curr = e_trial;
        step = s;
        if (it + 1 < rs.inner_steps) energy(z, &grad);  // refresh gradient at the accepted point
    }
    return blend(z0_hat, z, rs.gamma);
}

inline Tensor refine_latent(const Tensor& z0_hat, const Tensor& ir, const Tensor& vi, Codec& codec,
                            const RefinementSettings& rs) {
    DecoderFn dec = [&codec](Tape& t, Val z) { return codec.decode_ad(t, z, true); };
    return refine_latent(z0_hat, ir, vi, dec, rs);
}

struct SamplerSettings {
    int steps = 50;
    GuidanceSettings guidance;
    RefinementSettings refine;
    bool ablate_guidance = false;  // single branch over clean history
    bool ablate_adapter = false;   // drop the IR condition tokens
    bool ablate_refine = false;    // skip latent refinement
    bool ablate_h2 = false;        // replace the suppressed branch by the baseline
    std::uint64_t seed = 1;
};

struct FusionModels {
    Codec* codec = nullptr;
    Denoiser* dit = nullptr;
    ConditionAdapter* adapter = nullptr;
};

struct RolloutState {
    std::deque<Tensor> history;  // clean fused latents, oldest first
    int frame = 0;
};

// Generates one fused frame by the full reverse loop and appends its latent
// to the sliding history. Deterministic in (settings.seed, state.frame).
inline Tensor fuse_frame(const Tensor& ir, const Tensor& vi, RolloutState& state,
                         const FusionModels& models, const SamplerSettings& settings) {
    if (models.codec == nullptr || models.dit == nullptr || models.adapter == nullptr)
        throw std::invalid_argument("fuse_frame: missing models");
    Denoiser& dit = *models.dit;
    const DenoiserConfig& dc = dit.cfg;
    if (ir.rank() != 2 || ir.shape != vi.shape)
        throw std::invalid_argument("fuse_frame: frames must be equal-shape [H,W]");
    if (ir.size(0) != dc.latent_h * CodecConfig::factor ||
        ir.size(1) != dc.latent_w * CodecConfig::factor)
        throw std::invalid_argument("fuse_frame: frame dims do not match the model");

    NoiseSchedule sched = NoiseSchedule::build(settings.steps);
    Rng frame_rng = Rng(settings.seed).split(static_cast<std::uint64_t>(state.frame));
    Rng init_rng = frame_rng.split(0);
    Tensor z = seeded_gaussian({dc.channels, dc.latent_h, dc.latent_w}, init_rng);

    Tensor c_tokens;
    bool have_cond = !settings.ablate_adapter;
    if (have_cond) c_tokens = models.adapter->forward(ir);

    std::vector<const Tensor*> hist;
    {
        std::size_t start = state.history.size() > static_cast<std::size_t>(dc.window)
                                ? state.history.size() - static_cast<std::size_t>(dc.window)
                                : 0;
        for (std::size_t i = start; i < state.history.size(); ++i)
            hist.push_back(&state.history[i]);
    }

    for (int k = settings.steps; k >= 1; --k) {
        Rng step_rng = frame_rng.split(1000 + static_cast<std::uint64_t>(k));
        double t_frac = static_cast<double>(k) / settings.steps;
        const Tensor* cs = have_cond ? &c_tokens : nullptr;
        Tensor v;
        if (settings.ablate_guidance || hist.empty()) {
            // vanilla conditional step: clean history (empty on the first
            // frame, making it a plain unconditional step), single velocity
            std::vector<HistorySlot> slots;
            for (const Tensor* hz : hist) slots.push_back({*hz, 0.0});
            v = dit.predict_velocity(slots, z, t_frac, cs);
        } else if (settings.guidance.scale == 0.0) {
            // guidance off: only the baseline branch is ever evaluated, so a
            // scale-zero run is bitwise identical to a baseline-only run
            Rng b0 = step_rng.split(0);
            std::vector<HistorySlot> slots =
                make_history_config(hist, HistoryVariant::baseline, settings.guidance, b0);
            v = dit.predict_velocity(slots, z, t_frac, cs);
        } else {
            // dropping the suppressed branch turns the difference term into
            // stabilized-minus-baseline over the shared baseline velocity
            const int n_branches = settings.ablate_h2 ? 2 : 3;
            Tensor vs[3];
            parallel_for(n_branches, [&](int b) {
                Rng brng = step_rng.split(static_cast<std::uint64_t>(b));
                HistoryVariant variant = b == 0 ? HistoryVariant::baseline
                                      : b == 1 ? HistoryVariant::stabilized
                                               : HistoryVariant::context_suppressed;
                std::vector<HistorySlot> slots =
                    make_history_config(hist, variant, settings.guidance, brng);
                vs[b] = dit.predict_velocity(slots, z, t_frac, cs);
            });
            const Tensor& v2 = settings.ablate_h2 ? vs[0] : vs[2];
            v = compose_guidance(vs[0], vs[1], v2, settings.guidance.scale);
        }
        DdimStep stepped = ddim_step(z, v, k, sched);
        if (!settings.ablate_refine && settings.refine.cadence > 0 &&
            k % settings.refine.cadence == 0) {
            Tensor z0_ref = refine_latent(stepped.z0_hat, ir, vi, *models.codec, settings.refine);
            Tensor eps = ddim_eps(z, v, sched, k);
            stepped.z_prev = ddim_recompose(z0_ref, eps, sched, k - 1);
        }
        z = std::move(stepped.z_prev);
    }

    Tensor fused = models.codec->decode(z);
    state.history.push_back(std::move(z));
    while (state.history.size() > static_cast<std::size_t>(dc.window)) state.history.pop_front();
    ++state.frame;
    return fused;
}

// Sequential fusion of an aligned IR/VI sequence.
inline std::vector<Tensor> rollout(const std::vector<Tensor>& ir_seq,
                                   const std::vector<Tensor>& vi_seq, const FusionModels& models,
                                   const SamplerSettings& settings) {
    if (ir_seq.size() != vi_seq.size())
        throw std::invalid_argument("rollout: sequence length mismatch");
    RolloutState state;
    std::vector<Tensor> fused;
    for (std::size_t t = 0; t < ir_seq.size(); ++t)
        fused.push_back(fuse_frame(ir_seq[t], vi_seq[t], state, models, settings));
    return fused;
}

}  // namespace drfuse
