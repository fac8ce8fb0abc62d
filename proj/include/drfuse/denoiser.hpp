#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/autodiff.hpp"
#include "drfuse/checkpoint.hpp"
#include "drfuse/codec.hpp"
#include "drfuse/config.hpp"
#include "drfuse/rng.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// History-conditioned velocity predictor: a small transformer over an
// attention window of history-frame tokens followed by the current noisy
// frame's tokens. Queries come from the current frame only; keys and values
// span the whole window, so history acts as a retrieval context (temporal
// anchoring) rather than being re-encoded each block.

struct DenoiserConfig {
    int width = 64;
    int heads = 4;
    int blocks = 4;
    int patch = 2;       // patch size over latent cells
    int window = 8;      // history slot budget T
    int channels = 8;    // latent channels, must match the codec
    int latent_h = 6;
    int latent_w = 6;

    int patches() const { return (latent_h / patch) * (latent_w / patch); }
    int token_dim() const { return channels * patch * patch; }
};

// One attention-window entry: a (possibly noise-modulated) history latent
// plus its modulation level, which is embedded so the network can tell clean
// context from noised context.
struct HistorySlot {
    Tensor latent;  // [C, latent_h, latent_w]
    double lambda = 0.0;
};

namespace dit {

inline std::vector<double> timestep_features(double t_frac) {
    std::vector<double> f;
    for (int i = 0; i < 4; ++i) {
        double w = std::pow(2.0, i) * 3.141592653589793 * t_frac;
        f.push_back(std::sin(w));
        f.push_back(std::cos(w));
    }
    return f;
}

inline std::vector<double> lambda_features(double lam) {
    return {lam, 1.0 - lam, std::sin(1.5707963267948966 * lam),
            std::cos(1.5707963267948966 * lam)};
}

inline Tensor row_tensor(const std::vector<double>& v) {
    Tensor t({1, static_cast<int>(v.size())});
    t.data = v;
    return t;
}

}  // namespace dit

class ConditionAdapter {
  public:
    DenoiserConfig cfg;
    Tensor a1w, a1b, a2w, a2b;  // strided convs IR -> feature grid
    Tensor pw, pb;              // zero-initialized projection to token width

    explicit ConditionAdapter(DenoiserConfig c = {}) : cfg(c) {
        a1w = Tensor::zeros({16, 1, 3, 3});
        a1b = Tensor::zeros({16});
        a2w = Tensor::zeros({32, 16, 3, 3});
        a2b = Tensor::zeros({32});
        pw = Tensor::zeros({32 * cfg.patch * cfg.patch, cfg.width});
        pb = Tensor::zeros({cfg.width});
    }

    void init(Rng& rng) {
        Rng r1 = rng.split(1);
        a1w = nn::conv_weight_init({16, 1, 3, 3}, 9, r1);
        Rng r2 = rng.split(2);
        a2w = nn::conv_weight_init({32, 16, 3, 3}, 9LL * 16, r2);
        // pw/pb stay zero: a fresh adapter must contribute exactly nothing
    }

    NamedTensors named_tensors() {
        return {{"adapter/a1w", &a1w}, {"adapter/a1b", &a1b}, {"adapter/a2w", &a2w},
                {"adapter/a2b", &a2b}, {"adapter/pw", &pw},   {"adapter/pb", &pb}};
    }

    // IR frame [H,W] -> condition tokens [patches, width]; exactly zero while
    // the projection is zero-initialized.
    Val forward_ad(Tape& t, Val ir, bool frozen) {
        const Tensor& F = t.val(ir);
        if (F.rank() != 2) throw std::invalid_argument("ConditionAdapter: frame must be [H,W]");
        if (F.size(0) != cfg.latent_h * CodecConfig::factor ||
            F.size(1) != cfg.latent_w * CodecConfig::factor)
            throw std::invalid_argument("ConditionAdapter: frame dims do not match token grid");
        auto P = [&](Tensor& p) { return frozen ? t.constant(p) : t.param(p); };
        Val x = ad::reshape(ir, {1, F.size(0), F.size(1)});
        x = ad::gelu(ad::conv2d(x, P(a1w), P(a1b), 2, 1));
        x = ad::gelu(ad::conv2d(x, P(a2w), P(a2b), 2, 1));  // [32, latent_h, latent_w]
        Val tok = ad::gather(x, patchify_indices(32), {cfg.patches(), 32 * cfg.patch * cfg.patch});
        return ad::add_broadcast_row(ad::matmul(tok, P(pw)), P(pb));
    }

    Tensor forward(const Tensor& ir) {
        Tape t;
        return t.val(forward_ad(t, t.constant(ir), true));
    }

  private:
    std::vector<long long> patchify_indices(int ch) const {
        const int gh = cfg.latent_h / cfg.patch, gw = cfg.latent_w / cfg.patch;
        std::vector<long long> idx;
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px)
                for (int c = 0; c < ch; ++c)
                    for (int dy = 0; dy < cfg.patch; ++dy)
                        for (int dx = 0; dx < cfg.patch; ++dx)
                            idx.push_back(
                                (static_cast<long long>(c) * cfg.latent_h + py * cfg.patch + dy) *
                                    cfg.latent_w +
                                px * cfg.patch + dx);
        return idx;
    }
};

// Scaled dot-product attention with queries from the current block and
// keys/values over the full window.
inline Val anchored_attention(Val Q, Val K, Val V, int d_head) {
    if (d_head <= 0) throw std::invalid_argument("anchored_attention: d_head must be positive");
    Val scores = ad::mul_scalar(ad::matmul(Q, ad::transpose2d(K)),
                                1.0 / std::sqrt(static_cast<double>(d_head)));
    return ad::matmul(ad::softmax_lastdim(scores), V);
}

class Denoiser {
  public:
    DenoiserConfig cfg;

    struct Block {
        Tensor ln1g, ln1b, wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor ln2g, ln2b, w1, b1, w2, b2;
    };

    Tensor emb_w, emb_b;   // token embedding
    Tensor pos;            // [(T+1)*patches, width]
    Tensor lam_w;          // [4, width] modulation-level conditioning
    Tensor time_w, time_b; // [8, width] timestep conditioning
    std::vector<Block> blocks;
    Tensor lnf_g, lnf_b;
    Tensor out_w, out_b;   // zero-initialized velocity head

    explicit Denoiser(DenoiserConfig c = {}) : cfg(c) {
        if (cfg.width % cfg.heads != 0)
            throw std::invalid_argument("Denoiser: head count must divide width");
        if (cfg.latent_h % cfg.patch != 0 || cfg.latent_w % cfg.patch != 0)
            throw std::invalid_argument("Denoiser: patch must divide latent dims");
        const int W = cfg.width, D = cfg.token_dim();
        emb_w = Tensor::zeros({D, W});
        emb_b = Tensor::zeros({W});
        pos = Tensor::zeros({(cfg.window + 1) * cfg.patches(), W});
        lam_w = Tensor::zeros({4, W});
        time_w = Tensor::zeros({8, W});
        time_b = Tensor::zeros({W});
        blocks.resize(static_cast<std::size_t>(cfg.blocks));
        for (Block& b : blocks) {
            b.ln1g = Tensor::full({W}, 1.0);
            b.ln1b = Tensor::zeros({W});
            b.wq = Tensor::zeros({W, W});
            b.bq = Tensor::zeros({W});
            b.wk = Tensor::zeros({W, W});
            b.bk = Tensor::zeros({W});
            b.wv = Tensor::zeros({W, W});
            b.bv = Tensor::zeros({W});
            b.wo = Tensor::zeros({W, W});
            b.bo = Tensor::zeros({W});
            b.ln2g = Tensor::full({W}, 1.0);
            b.ln2b = Tensor::zeros({W});
            b.w1 = Tensor::zeros({W, 2 * W});
            b.b1 = Tensor::zeros({2 * W});
            b.w2 = Tensor::zeros({2 * W, W});
            b.b2 = Tensor::zeros({W});
        }
        lnf_g = Tensor::full({W}, 1.0);
        lnf_b = Tensor::zeros({W});
        out_w = Tensor::zeros({W, D});
        out_b = Tensor::zeros({D});
    }

    void init(Rng& rng) {
        const int W = cfg.width;
        auto mat = [&](Tensor& m, int fan_in, std::uint64_t stream) {
            Rng r = rng.split(stream);
            double s = std::sqrt(1.0 / static_cast<double>(fan_in));
            for (double& v : m.data) v = s * r.normal();
        };
        mat(emb_w, cfg.token_dim(), 1);
        {
            Rng r = rng.split(2);
            for (double& v : pos.data) v = 0.02 * r.normal();
        }
        mat(lam_w, 4, 3);
        mat(time_w, 8, 4);
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::uint64_t base = 100 + 10 * static_cast<std::uint64_t>(i);
            mat(blocks[i].wq, W, base + 0);
            mat(blocks[i].wk, W, base + 1);
            mat(blocks[i].wv, W, base + 2);
            mat(blocks[i].wo, W, base + 3);
            mat(blocks[i].w1, W, base + 4);
            mat(blocks[i].w2, 2 * W, base + 5);
        }
        // out_w/out_b stay zero so the untrained head predicts zero velocity
    }

    NamedTensors named_tensors() {
        NamedTensors n = {{"dit/emb_w", &emb_w}, {"dit/emb_b", &emb_b}, {"dit/pos", &pos},
                          {"dit/lam_w", &lam_w}, {"dit/time_w", &time_w}, {"dit/time_b", &time_b},
                          {"dit/lnf_g", &lnf_g}, {"dit/lnf_b", &lnf_b},  {"dit/out_w", &out_w},
                          {"dit/out_b", &out_b}};
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            std::string p = "dit/b" + std::to_string(i) + "/";
            Block& b = blocks[i];
            NamedTensors bl = {{p + "ln1g", &b.ln1g}, {p + "ln1b", &b.ln1b}, {p + "wq", &b.wq},
                               {p + "bq", &b.bq},     {p + "wk", &b.wk},     {p + "bk", &b.bk},
                               {p + "wv", &b.wv},     {p + "bv", &b.bv},     {p + "wo", &b.wo},
                               {p + "bo", &b.bo},     {p + "ln2g", &b.ln2g}, {p + "ln2b", &b.ln2b},
                               {p + "w1", &b.w1},     {p + "b1", &b.b1},     {p + "w2", &b.w2},
                               {p + "b2", &b.b2}};
            n.insert(n.end(), bl.begin(), bl.end());
        }
        return n;
    }

    // Velocity prediction. history may be empty; its slots occupy the window
    // positions immediately before the current frame (right-aligned), so the
    // most recent frame always sits next to the current one. c_struct (token
    // grid from the adapter) is added to the current frame's tokens.
    Val forward_ad(Tape& t, const std::vector<HistorySlot>& history, Val z_cur, double t_frac,
                   const Val* c_struct, bool frozen) {
        if (static_cast<int>(history.size()) > cfg.window)
            throw std::invalid_argument("Denoiser: history exceeds window budget");
        const Tensor& Z = t.val(z_cur);
        if (Z.shape != std::vector<int>({cfg.channels, cfg.latent_h, cfg.latent_w}))
            throw std::invalid_argument("Denoiser: latent shape mismatch");
        auto P = [&](Tensor& p) { return frozen ? t.constant(p) : t.param(p); };
        const int Pn = cfg.patches();
        const int n_hist = static_cast<int>(history.size());

        Val time_row = ad::matmul(t.constant(dit::row_tensor(dit::timestep_features(t_frac))),
                                  P(time_w));
        time_row = ad::add(time_row, ad::reshape(P(time_b), {1, cfg.width}));

        auto embed_block = [&](Val tokens, int slot, double lambda) {
            Val x = ad::add_broadcast_row(ad::matmul(tokens, P(emb_w)), P(emb_b));
            Val pos_rows = ad::slice_rows(P(pos), slot * Pn, (slot + 1) * Pn);
            x = ad::add(x, pos_rows);
            Val lam_row = ad::matmul(t.constant(dit::row_tensor(dit::lambda_features(lambda))),
                                     P(lam_w));
            x = ad::add_broadcast_row(x, ad::reshape(lam_row, {cfg.width}));
            return ad::add_broadcast_row(x, ad::reshape(time_row, {cfg.width}));
        };

        std::vector<Val> hist_tok;
        for (int i = 0; i < n_hist; ++i) {
            Val raw = t.constant(patchify(history[static_cast<std::size_t>(i)].latent));
            hist_tok.push_back(embed_block(raw, cfg.window - n_hist + i,
                                           history[static_cast<std::size_t>(i)].lambda));
        }
        Val cur_raw = ad::gather(z_cur, patchify_indices(), {Pn, cfg.token_dim()});
        Val x = ad::add_broadcast_row(ad::matmul(cur_raw, P(emb_w)), P(emb_b));
        if (c_struct != nullptr) x = ad::add(x, *c_struct);
        x = ad::add(x, ad::slice_rows(P(pos), cfg.window * Pn, (cfg.window + 1) * Pn));
        Val lam_row = ad::matmul(t.constant(dit::row_tensor(dit::lambda_features(t_frac))), P(lam_w));
        x = ad::add_broadcast_row(x, ad::reshape(lam_row, {cfg.width}));
        x = ad::add_broadcast_row(x, ad::reshape(time_row, {cfg.width}));

        const int dh = cfg.width / cfg.heads;
        for (Block& b : blocks) {
            std::vector<Val> wn_parts;
            for (Val hv : hist_tok)
                wn_parts.push_back(ad::layernorm_lastdim(hv, P(b.ln1g), P(b.ln1b)));
            Val cn = ad::layernorm_lastdim(x, P(b.ln1g), P(b.ln1b));
            wn_parts.push_back(cn);
            Val wn = wn_parts.size() == 1 ? cn : ad::concat_rows(wn_parts);
            Val Q = ad::add_broadcast_row(ad::matmul(cn, P(b.wq)), P(b.bq));
            Val K = ad::add_broadcast_row(ad::matmul(wn, P(b.wk)), P(b.bk));
            Val V = ad::add_broadcast_row(ad::matmul(wn, P(b.wv)), P(b.bv));
            std::vector<Val> heads;
            for (int h = 0; h < cfg.heads; ++h) {
                Val qh = ad::slice_cols(Q, h * dh, (h + 1) * dh);
                Val kh = ad::slice_cols(K, h * dh, (h + 1) * dh);
                Val vh = ad::slice_cols(V, h * dh, (h + 1) * dh);
                heads.push_back(anchored_attention(qh, kh, vh, dh));
            }
            Val merged = cfg.heads == 1 ? heads[0] : ad::concat_lastdim(heads);
            Val attn = ad::add_broadcast_row(ad::matmul(merged, P(b.wo)), P(b.bo));
            x = ad::add(x, attn);
            Val mn = ad::layernorm_lastdim(x, P(b.ln2g), P(b.ln2b));
            Val hmid = ad::gelu(ad::add_broadcast_row(ad::matmul(mn, P(b.w1)), P(b.b1)));
            Val mlp = ad::add_broadcast_row(ad::matmul(hmid, P(b.w2)), P(b.b2));
            x = ad::add(x, mlp);
        }
        Val fn = ad::layernorm_lastdim(x, P(lnf_g), P(lnf_b));
        Val out_tok = ad::add_broadcast_row(ad::matmul(fn, P(out_w)), P(out_b));
        return ad::gather(out_tok, unpatchify_indices(),
                          {cfg.channels, cfg.latent_h, cfg.latent_w});
    }

    // Pure inference wrapper; bit-identical to the taped forward because it
    // is the taped forward.
    Tensor predict_velocity(const std::vector<HistorySlot>& history, const Tensor& z_cur,
                            double t_frac, const Tensor* c_struct_tokens) {
        Tape t;
        Val z = t.constant(z_cur);
        if (c_struct_tokens != nullptr) {
            Val cs = t.constant(*c_struct_tokens);
            Val v = forward_ad(t, history, z, t_frac, &cs, true);
            return t.val(v);
        }
        Val v = forward_ad(t, history, z, t_frac, nullptr, true);
        return t.val(v);
    }

    Tensor patchify(const Tensor& z) const {
        Tensor out({cfg.patches(), cfg.token_dim()});
        std::vector<long long> idx = patchify_indices();
        for (std::size_t i = 0; i < idx.size(); ++i)
            out.data[i] = z.data[static_cast<std::size_t>(idx[i])];
        return out;
    }

    KeyValueFile model_config() const {
        KeyValueFile kv;
        kv.set("model", "denoiser");
        kv.set_int("width", cfg.width);
        kv.set_int("heads", cfg.heads);
        kv.set_int("blocks", cfg.blocks);
        kv.set_int("patch", cfg.patch);
        kv.set_int("window", cfg.window);
        kv.set_int("channels", cfg.channels);
        kv.set_int("latent_h", cfg.latent_h);
        kv.set_int("latent_w", cfg.latent_w);
        return kv;
    }

    static DenoiserConfig config_from(const KeyValueFile& kv) {
        if (kv.get_or("model", "") != "denoiser")
            throw std::runtime_error("checkpoint is not a denoiser (model=" +
                                     kv.get_or("model", "?") + ")");
        DenoiserConfig c;
        c.width = static_cast<int>(kv.get_int("width"));
        c.heads = static_cast<int>(kv.get_int("heads"));
        c.blocks = static_cast<int>(kv.get_int("blocks"));
        c.patch = static_cast<int>(kv.get_int("patch"));
        c.window = static_cast<int>(kv.get_int("window"));
        c.channels = static_cast<int>(kv.get_int("channels"));
        c.latent_h = static_cast<int>(kv.get_int("latent_h"));
        c.latent_w = static_cast<int>(kv.get_int("latent_w"));
        return c;
    }

  private:
    std::vector<long long> patchify_indices() const {
        const int gh = cfg.latent_h / cfg.patch, gw = cfg.latent_w / cfg.patch;
        std::vector<long long> idx;
        for (int py = 0; py < gh; ++py)
            for (int px = 0; px < gw; ++px)
                for (int c = 0; c < cfg.channels; ++c)
                    for (int dy = 0; dy < cfg.patch; ++dy)
                        for (int dx = 0; dx < cfg.patch; ++dx)
                            idx.push_back(
                                (static_cast<long long>(c) * cfg.latent_h + py * cfg.patch + dy) *
                                    cfg.latent_w +
                                px * cfg.patch + dx);
        return idx;
    }

    std::vector<long long> unpatchify_indices() const {
        std::vector<long long> fwd = patchify_indices();
        std::vector<long long> inv(fwd.size());
        for (std::size_t i = 0; i < fwd.size(); ++i)
            inv[static_cast<std::size_t>(fwd[i])] = static_cast<long long>(i);
        return inv;
    }
};

}  // namespace drfuse
