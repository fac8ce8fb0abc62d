#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/codec.hpp"
#include "drfuse/data.hpp"
#include "drfuse/denoiser.hpp"
#include "drfuse/flow.hpp"
#include "drfuse/guidance.hpp"
#include "drfuse/losses.hpp"
#include "drfuse/optim.hpp"
#include "drfuse/sampler.hpp"

namespace drfuse {

// Gradients in optimizer attach order; parameters that never touched the
// tape this step (frozen or unused) get zeros.
inline std::vector<Tensor> collect_grads(const Tape& t, const NamedTensors& named) {
    std::vector<Tensor> g;
    g.reserve(named.size());
    for (const auto& [name, p] : named)
        g.push_back(t.has_param(*p) ? t.grad_of(*p) : Tensor::zeros(p->shape));
    return g;
}

template <typename T>
inline void shuffle_with(std::vector<T>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i)
        std::swap(v[i - 1], v[static_cast<std::size_t>(rng.below(i))]);
}

// ---------------------------------------------------------------------------
// Stage I: codec training on two-frame clips.
//
// Every consecutive frame pair contributes three clips (IR, VI, saliency
// composite) so the encoder sees all the distributions it serves later. The
// temporal term acts on continuous pre-quantization latents with the ground
// truth flow/occlusion downsampled to latent resolution.

enum class Modality { ir = 0, vi = 1, comp = 2 };

struct ClipRef {
    int seq = 0;
    int pair = 0;  // frames (pair, pair+1)
    Modality mod = Modality::ir;
};

struct Stage1Settings {
    int epochs = 2;
    int batch = 4;
    AdamW::Settings opt;
    double lambda_vq = 1.0;
    double lambda_freq = 0.1;
    double lambda_temp = 1.0;
    std::uint64_t seed = 1;
};

struct Stage1Row {
    long long step = 0;
    double rec = 0, vq = 0, freq = 0, temp = 0, total = 0;
};

inline Tensor clip_frame(const SequenceData& s, Modality m, int t) {
    switch (m) {
        case Modality::ir: return s.ir[static_cast<std::size_t>(t)];
        case Modality::vi: return s.vi[static_cast<std::size_t>(t)];
        default: return max_composite(s.ir[static_cast<std::size_t>(t)],
                                      s.vi[static_cast<std::size_t>(t)]);
    }
}

inline std::vector<ClipRef> build_clips(const Dataset& d) {
    std::vector<ClipRef> clips;
    for (std::size_t si = 0; si < d.seqs.size(); ++si) {
        const SequenceData& s = d.seqs[si];
        if (s.flow.size() + 1 != s.ir.size())
            throw std::runtime_error("build_clips: sequence lacks per-pair flow ground truth");
        for (std::size_t p = 0; p < s.flow.size(); ++p)
            for (Modality m : {Modality::ir, Modality::vi, Modality::comp})
                clips.push_back({static_cast<int>(si), static_cast<int>(p), m});
    }
    if (clips.empty()) throw std::runtime_error("build_clips: no trainable frame pairs");
    return clips;
}

inline Stage1Row stage1_step(Codec& codec, const Dataset& d, const std::vector<ClipRef>& batch,
                             const Stage1Settings& st, AdamW& opt, const NamedTensors& named) {
    Tape t;
    Val total = t.constant(Tensor::scalar(0.0));
    Stage1Row row;
    const double inv_b = 1.0 / static_cast<double>(batch.size());
    for (const ClipRef& c : batch) {
        const SequenceData& s = d.seqs[static_cast<std::size_t>(c.seq)];
        Tensor f1 = clip_frame(s, c.mod, c.pair);
        Tensor f2 = clip_frame(s, c.mod, c.pair + 1);
        Val z1 = codec.encode_ad(t, t.constant(f1), false);
        Val z2 = codec.encode_ad(t, t.constant(f2), false);
        Val clip_loss = t.constant(Tensor::scalar(0.0));
        const Val zs[2] = {z1, z2};
        const Tensor* fs[2] = {&f1, &f2};
        for (int fi = 0; fi < 2; ++fi) {
            Val z = zs[fi];
            const Tensor& f = *fs[fi];
            QuantizeResult q = codec.quantize(t.val(z));
            Val rec = codec.decode_ad(t, Codec::straight_through(t, z, q.z_q), false);
            Val l_rec = ad::mean(ad::square(ad::sub(rec, t.constant(f))));
            Val l_vq = codec.vq_loss_ad(t, z, q, false);
            Val l_ff = focal_frequency_loss_ad(t, rec, f);
            // two frames per clip, so each contributes half
            clip_loss = ad::add(clip_loss, ad::mul_scalar(l_rec, 0.5));
            clip_loss = ad::add(clip_loss, ad::mul_scalar(l_vq, 0.5 * st.lambda_vq));
            clip_loss = ad::add(clip_loss, ad::mul_scalar(l_ff, 0.5 * st.lambda_freq));
            row.rec += 0.5 * inv_b * t.val(l_rec).data[0];
            row.vq += 0.5 * inv_b * t.val(l_vq).data[0];
            row.freq += 0.5 * inv_b * t.val(l_ff).data[0];
        }
        if (st.lambda_temp > 0.0) {
            Tensor lflow = flow_to_latent(s.flow[static_cast<std::size_t>(c.pair)],
                                          CodecConfig::factor);
            Tensor lmask = mask_to_latent(s.occ[static_cast<std::size_t>(c.pair)],
                                          CodecConfig::factor);
            Val l_t = temporal_loss_ad(t, z1, z2, lflow, lmask);
            clip_loss = ad::add(clip_loss, ad::mul_scalar(l_t, st.lambda_temp));
            row.temp += inv_b * t.val(l_t).data[0];
        }
        total = ad::add(total, ad::mul_scalar(clip_loss, inv_b));
    }
    row.total = t.val(total).data[0];
    t.backward(total);
    opt.step(collect_grads(t, named));
    return row;
}

inline std::vector<Stage1Row> stage1_train(Codec& codec, const Dataset& d,
                                           const Stage1Settings& st) {
    if (st.epochs < 1 || st.batch < 1)
        throw std::invalid_argument("stage1_train: epochs and batch must be positive");
    NamedTensors named = codec.named_tensors();
    AdamW opt(st.opt);
    opt.attach_all(named);
    std::vector<ClipRef> clips = build_clips(d);
    Rng rng = Rng(st.seed).split(77);
    std::vector<Stage1Row> rows;
    long long step = 0;
    for (int e = 0; e < st.epochs; ++e) {
        Rng erng = rng.split(static_cast<std::uint64_t>(e));
        shuffle_with(clips, erng);
        for (std::size_t i = 0; i < clips.size(); i += static_cast<std::size_t>(st.batch)) {
            std::size_t hi = std::min(clips.size(), i + static_cast<std::size_t>(st.batch));
            std::vector<ClipRef> batch(clips.begin() + static_cast<std::ptrdiff_t>(i),
                                       clips.begin() + static_cast<std::ptrdiff_t>(hi));
            Stage1Row row = stage1_step(codec, d, batch, st, opt, named);
            row.step = step++;
            rows.push_back(row);
        }
    }
    return rows;
}

// Mean latent-space warping error over every pair/modality of the given
// sequences; the score Stage I's temporal term optimizes, measured on
// held-out data.
inline double temporal_eval(const Codec& codec, const std::vector<const SequenceData*>& seqs) {
    double sum = 0.0;
    long long n = 0;
    for (const SequenceData* sp : seqs) {
        const SequenceData& s = *sp;
        for (std::size_t p = 0; p < s.flow.size(); ++p) {
            Tensor lflow = flow_to_latent(s.flow[p], CodecConfig::factor);
            Tensor lmask = mask_to_latent(s.occ[p], CodecConfig::factor);
            for (Modality m : {Modality::ir, Modality::vi, Modality::comp}) {
                Tensor z1 = codec.encode(clip_frame(s, m, static_cast<int>(p)));
                Tensor z2 = codec.encode(clip_frame(s, m, static_cast<int>(p) + 1));
                sum += temporal_loss(z1, z2, lflow, lmask);
                ++n;
            }
        }
    }
    if (n == 0) throw std::runtime_error("temporal_eval: no pairs");
    return sum / static_cast<double>(n);
}

inline void save_stage1_csv(const std::string& path, const std::vector<Stage1Row>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "step,rec,vq,freq,temp,total\n";
    char buf[256];
    for (const Stage1Row& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.step, r.rec, r.vq,
                      r.freq, r.temp, r.total);
        f << buf;
    }
}

// ---------------------------------------------------------------------------
// Stage II: denoiser pretraining (phase A) plus adapter fine-tuning (phase B).
//
// Phase A fits the velocity objective on saliency-composite latent sequences.
// History slots are drawn with random length and a per-slot noise mixture
// (pure noise / clean / lightly modulated / uniform), which puts every
// guidance branch the sampler later evaluates inside the training
// distribution. Phase B freezes the backbone by default and trains the
// zero-initialized structure adapter through one-step predictions decoded to
// pixel space.

struct Stage2Settings {
    int steps_a = 200;
    int steps_b = 120;
    int batch = 2;
    AdamW::Settings opt_a, opt_b;
    int schedule_steps = 50;
    double sigma_stab = 0.02;
    bool freeze_backbone_b = true;
    FusionLossWeights fusion;
    std::uint64_t seed = 2;
};

struct Stage2Row {
    long long step = 0;
    int phase = 0;  // 0 = A, 1 = B
    double loss = 0;
};

// Continuous composite latents per sequence frame, the rollout's "ideal
// output" stand-in used as diffusion targets.
inline std::vector<std::vector<Tensor>> composite_latents(const Codec& codec, const Dataset& d) {
    std::vector<std::vector<Tensor>> out(d.seqs.size());
    for (std::size_t si = 0; si < d.seqs.size(); ++si) {
        const SequenceData& s = d.seqs[si];
        out[si].reserve(s.ir.size());
        for (std::size_t t = 0; t < s.ir.size(); ++t)
            out[si].push_back(codec.encode(max_composite(s.ir[t], s.vi[t])));
    }
    return out;
}

inline std::vector<HistorySlot> random_history(const std::vector<Tensor>& lat, int t, int window,
                                               double sigma_stab, Rng& rng) {
    int avail = std::min(t, window);
    int h_len = static_cast<int>(rng.below(static_cast<std::uint64_t>(avail) + 1));
    std::vector<HistorySlot> slots;
    for (int i = 0; i < h_len; ++i) {
        const Tensor& z = lat[static_cast<std::size_t>(t - h_len + i)];
        double lam;
        switch (rng.below(4)) {
            case 0: lam = 1.0; break;
            case 1: lam = 0.0; break;
            case 2: lam = sigma_stab; break;
            default: lam = rng.uniform(); break;
        }
        Rng srng = rng.split(1000 + static_cast<std::uint64_t>(i));
        slots.push_back({modulate(z, lam, srng), lam});
    }
    return slots;
}

inline std::vector<Stage2Row> stage2_pretrain(Denoiser& dit, const Codec& codec, const Dataset& d,
                                              const Stage2Settings& st) {
    NamedTensors named = dit.named_tensors();
    AdamW opt(st.opt_a);
    opt.attach_all(named);
    NoiseSchedule sched = NoiseSchedule::build(st.schedule_steps);
    std::vector<std::vector<Tensor>> lat = composite_latents(codec, d);
    Rng rng = Rng(st.seed).split(10);
    std::vector<Stage2Row> rows;
    for (int step = 0; step < st.steps_a; ++step) {
        Rng srng = rng.split(static_cast<std::uint64_t>(step));
        Tape t;
        Val total = t.constant(Tensor::scalar(0.0));
        const double inv_b = 1.0 / static_cast<double>(st.batch);
        for (int b = 0; b < st.batch; ++b) {
            Rng irng = srng.split(static_cast<std::uint64_t>(b));
            int si = static_cast<int>(irng.below(lat.size()));
            const std::vector<Tensor>& seq = lat[static_cast<std::size_t>(si)];
            int ti = static_cast<int>(irng.below(seq.size()));
            std::vector<HistorySlot> hist =
                random_history(seq, ti, dit.cfg.window, st.sigma_stab, irng);
            const Tensor& z0 = seq[static_cast<std::size_t>(ti)];
            int k = 1 + static_cast<int>(irng.below(static_cast<std::uint64_t>(sched.steps)));
            double a = sched.alpha[static_cast<std::size_t>(k)];
            double sg = sched.sigma[static_cast<std::size_t>(k)];
            Rng nrng = irng.split(500);
            Tensor eps = seeded_gaussian(z0.shape, nrng);
            Tensor z_k(z0.shape), v_t(z0.shape);
            for (std::size_t j = 0; j < z0.data.size(); ++j) {
                z_k.data[j] = a * z0.data[j] + sg * eps.data[j];
                v_t.data[j] = a * eps.data[j] - sg * z0.data[j];
            }
            double t_frac = static_cast<double>(k) / static_cast<double>(sched.steps);
            Val v = dit.forward_ad(t, hist, t.constant(z_k), t_frac, nullptr, false);
            Val l = ad::mean(ad::square(ad::sub(v, t.constant(v_t))));
            total = ad::add(total, ad::mul_scalar(l, inv_b));
        }
        rows.push_back({step, 0, t.val(total).data[0]});
        t.backward(total);
        opt.step(collect_grads(t, named));
    }
    return rows;
}

inline std::vector<Stage2Row> stage2_adapter_train(Denoiser& dit, ConditionAdapter& adapter,
                                                   Codec& codec, const Dataset& d,
                                                   const Stage2Settings& st) {
    NamedTensors named = adapter.named_tensors();
    if (!st.freeze_backbone_b)
        for (auto& nt : dit.named_tensors()) named.push_back(nt);
    AdamW opt(st.opt_b);
    opt.attach_all(named);
    NoiseSchedule sched = NoiseSchedule::build(st.schedule_steps);
    std::vector<std::vector<Tensor>> lat = composite_latents(codec, d);
    Rng rng = Rng(st.seed).split(20);
    std::vector<Stage2Row> rows;
    for (int step = 0; step < st.steps_b; ++step) {
        Rng srng = rng.split(static_cast<std::uint64_t>(step));
        Tape t;
        Val total = t.constant(Tensor::scalar(0.0));
        const double inv_b = 1.0 / static_cast<double>(st.batch);
        for (int b = 0; b < st.batch; ++b) {
            Rng irng = srng.split(static_cast<std::uint64_t>(b));
            int si = static_cast<int>(irng.below(lat.size()));
            const SequenceData& s = d.seqs[static_cast<std::size_t>(si)];
            const std::vector<Tensor>& seq = lat[static_cast<std::size_t>(si)];
            int ti = static_cast<int>(irng.below(seq.size()));
            // clean history, like a well-behaved rollout's retained frames
            std::vector<HistorySlot> hist;
            int h_len = std::min(ti, dit.cfg.window);
            for (int i = 0; i < h_len; ++i)
                hist.push_back({seq[static_cast<std::size_t>(ti - h_len + i)], 0.0});
            const Tensor& z0 = seq[static_cast<std::size_t>(ti)];
            int k = 1 + static_cast<int>(irng.below(static_cast<std::uint64_t>(sched.steps)));
            double a = sched.alpha[static_cast<std::size_t>(k)];
            double sg = sched.sigma[static_cast<std::size_t>(k)];
            Rng nrng = irng.split(500);
            Tensor eps = seeded_gaussian(z0.shape, nrng);
            Tensor z_k(z0.shape);
            for (std::size_t j = 0; j < z0.data.size(); ++j)
                z_k.data[j] = a * z0.data[j] + sg * eps.data[j];
            double t_frac = static_cast<double>(k) / static_cast<double>(sched.steps);
            Val cs = adapter.forward_ad(t, t.constant(s.ir[static_cast<std::size_t>(ti)]), false);
            Val v = dit.forward_ad(t, hist, t.constant(z_k), t_frac, &cs, st.freeze_backbone_b);
            // one-step clean estimate from the predicted velocity
            Tensor zk_scaled = z_k;
            for (double& x : zk_scaled.data) x *= a;
            Val z0_hat = ad::sub(t.constant(zk_scaled), ad::mul_scalar(v, sg));
            Val decoded = codec.decode_ad(t, z0_hat, true);
            Val l = fusion_loss_ad(t, codec, decoded, s.ir[static_cast<std::size_t>(ti)],
                                   s.vi[static_cast<std::size_t>(ti)], st.fusion);
            total = ad::add(total, ad::mul_scalar(l, inv_b));
        }
        rows.push_back({step, 1, t.val(total).data[0]});
        t.backward(total);
        opt.step(collect_grads(t, named));
    }
    return rows;
}

inline void save_stage2_csv(const std::string& path, const std::vector<Stage2Row>& rows) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << "step,phase,loss\n";
    char buf[128];
    for (const Stage2Row& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%d,%.9g\n", r.step, r.phase, r.loss);
        f << buf;
    }
}

// Held-out one-step fusion objective, with or without the structure adapter.
// A fixed timestep triple and seeded noise make the comparison exact across
// runs.
inline double fusion_eval(Codec& codec, Denoiser& dit, ConditionAdapter* adapter,
                          const std::vector<const SequenceData*>& seqs, int schedule_steps,
                          std::uint64_t seed) {
    NoiseSchedule sched = NoiseSchedule::build(schedule_steps);
    const int ks[3] = {schedule_steps / 5, schedule_steps / 2, (4 * schedule_steps) / 5};
    double sum = 0.0;
    long long n = 0;
    FusionLossWeights w;
    Rng base(seed);
    for (std::size_t si = 0; si < seqs.size(); ++si) {
        const SequenceData& s = *seqs[si];
        std::vector<Tensor> lat;
        lat.reserve(s.ir.size());
        for (std::size_t t = 0; t < s.ir.size(); ++t)
            lat.push_back(codec.encode(max_composite(s.ir[t], s.vi[t])));
        for (std::size_t ti = 0; ti < lat.size(); ++ti) {
            std::vector<HistorySlot> hist;
            int h_len = std::min(static_cast<int>(ti), dit.cfg.window);
            for (int i = 0; i < h_len; ++i)
                hist.push_back({lat[ti - static_cast<std::size_t>(h_len) + static_cast<std::size_t>(i)], 0.0});
            Tensor cs;
            if (adapter != nullptr) cs = adapter->forward(s.ir[ti]);
            for (int k : ks) {
                if (k < 1) k = 1;
                double a = sched.alpha[static_cast<std::size_t>(k)];
                double sg = sched.sigma[static_cast<std::size_t>(k)];
                Rng nrng = base.split(si * 10007 + ti * 101 + static_cast<std::uint64_t>(k));
                Tensor eps = seeded_gaussian(lat[ti].shape, nrng);
                Tensor z_k(lat[ti].shape);
                for (std::size_t j = 0; j < z_k.data.size(); ++j)
                    z_k.data[j] = a * lat[ti].data[j] + sg * eps.data[j];
                double t_frac = static_cast<double>(k) / static_cast<double>(schedule_steps);
                Tensor v = dit.predict_velocity(hist, z_k, t_frac,
                                                adapter != nullptr ? &cs : nullptr);
                Tensor z0_hat(z_k.shape);
                for (std::size_t j = 0; j < z_k.data.size(); ++j)
                    z0_hat.data[j] = a * z_k.data[j] - sg * v.data[j];
                sum += fusion_loss_value(codec, codec.decode(z0_hat), s.ir[ti], s.vi[ti], w);
                ++n;
            }
        }
    }
    if (n == 0) throw std::runtime_error("fusion_eval: no samples");
    return sum / static_cast<double>(n);
}

}  // namespace drfuse
