#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/autodiff.hpp"
#include "drfuse/checkpoint.hpp"
#include "drfuse/config.hpp"
#include "drfuse/rng.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

// Stage-I latent codec: a small strided conv encoder/decoder pair around a
// vector-quantization codebook. Spatial downsampling factor is fixed at 4
// (two stride-2 convs); channel and codebook sizes are configurable.

struct CodecConfig {
    int channels = 8;    // latent channels C
    int hidden = 32;     // conv width
    int codebook = 64;   // entries K
    static constexpr int factor = 4;
};

namespace nn {

// Plain forwards mirroring the tape ops in autodiff.hpp loop for loop, so a
// taped forward and a plain forward produce bit-identical values.

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2)); }

inline Tensor gelu(const Tensor& x) {
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = gelu(x.data[i]);
    return out;
}

inline Tensor conv2d(const Tensor& X, const Tensor& W, const Tensor& B, int stride, int pad) {
    const int cin = X.size(0), h = X.size(1), wd = X.size(2);
    const int cout = W.size(0), kh = W.size(2), kw = W.size(3);
    if (W.size(1) != cin || B.size(0) != cout) throw std::invalid_argument("conv2d: channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    Tensor out({cout, oh, ow});
    for (int co = 0; co < cout; ++co)
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double acc = B.data[static_cast<std::size_t>(co)];
                for (int ci = 0; ci < cin; ++ci)
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= wd) continue;
                            acc += X.at(ci, iy, ix) *
                                   W.data[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                out.at(co, oy, ox) = acc;
            }
    return out;
}

inline Tensor conv2d_transpose(const Tensor& X, const Tensor& W, const Tensor& B, int stride,
                               int pad) {
    const int cin = X.size(0), h = X.size(1), wd = X.size(2);
    const int cout = W.size(1), kh = W.size(2), kw = W.size(3);
    if (W.size(0) != cin || B.size(0) != cout)
        throw std::invalid_argument("conv2d_transpose: channel mismatch");
    const int oh = (h - 1) * stride - 2 * pad + kh;
    const int ow = (wd - 1) * stride - 2 * pad + kw;
    Tensor out({cout, oh, ow});
    for (int co = 0; co < cout; ++co)
        for (std::size_t i = 0; i < static_cast<std::size_t>(oh) * ow; ++i)
            out.data[static_cast<std::size_t>(co) * oh * ow + i] = B.data[static_cast<std::size_t>(co)];
    for (int ci = 0; ci < cin; ++ci)
        for (int iy = 0; iy < h; ++iy)
            for (int ixp = 0; ixp < wd; ++ixp) {
                double xv = X.at(ci, iy, ixp);
                if (xv == 0.0) continue;
                for (int co = 0; co < cout; ++co)
                    for (int ky = 0; ky < kh; ++ky) {
                        int oy = iy * stride - pad + ky;
                        if (oy < 0 || oy >= oh) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ox = ixp * stride - pad + kx;
                            if (ox < 0 || ox >= ow) continue;
                            out.at(co, oy, ox) +=
                                xv * W.data[((static_cast<std::size_t>(ci) * cout + co) * kh + ky) * kw + kx];
                        }
                    }
            }
    return out;
}

inline Tensor conv_weight_init(std::vector<int> shape, long long fan_in, Rng& rng) {
    Tensor w(std::move(shape));
    double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w.data) v = scale * rng.normal();
    return w;
}

}  // namespace nn

struct QuantizeResult {
    Tensor z_q;      // same shape as z
    Tensor indices;  // [h,w], codebook row per cell
    double vq_loss = 0.0;  // (1+beta) * mean squared quantization gap
};

class Codec {
  public:
    CodecConfig cfg;
    Tensor e1w, e1b, e2w, e2b, e3w, e3b;
    Tensor d1w, d1b, d2w, d2b, d3w, d3b;
    Tensor codebook;  // [K, C]
    double beta = 0.25;

    explicit Codec(CodecConfig c = {}) : cfg(c) {
        const int C = cfg.channels, Hd = cfg.hidden, K = cfg.codebook;
        if (C < 1 || Hd < 1 || K < 2) throw std::invalid_argument("Codec: bad config");
        e1w = Tensor::zeros({Hd, 1, 3, 3});
        e1b = Tensor::zeros({Hd});
        e2w = Tensor::zeros({Hd, Hd, 3, 3});
        e2b = Tensor::zeros({Hd});
        e3w = Tensor::zeros({C, Hd, 3, 3});
        e3b = Tensor::zeros({C});
        d1w = Tensor::zeros({Hd, C, 3, 3});
        d1b = Tensor::zeros({Hd});
        d2w = Tensor::zeros({Hd, Hd, 4, 4});  // transpose conv layout [Cin,Cout,kh,kw]
        d2b = Tensor::zeros({Hd});
        d3w = Tensor::zeros({Hd, 1, 4, 4});
        d3b = Tensor::zeros({1});
        codebook = Tensor::zeros({K, C});
    }

    void init(Rng& rng) {
        const int C = cfg.channels, Hd = cfg.hidden;
        Rng r1 = rng.split(1);
        e1w = nn::conv_weight_init({Hd, 1, 3, 3}, 9, r1);
        Rng r2 = rng.split(2);
        e2w = nn::conv_weight_init({Hd, Hd, 3, 3}, 9LL * Hd, r2);
        Rng r3 = rng.split(3);
        e3w = nn::conv_weight_init({C, Hd, 3, 3}, 9LL * Hd, r3);
        Rng r4 = rng.split(4);
        d1w = nn::conv_weight_init({Hd, C, 3, 3}, 9LL * C, r4);
        Rng r5 = rng.split(5);
        d2w = nn::conv_weight_init({Hd, Hd, 4, 4}, 16LL * Hd, r5);
        Rng r6 = rng.split(6);
        d3w = nn::conv_weight_init({Hd, 1, 4, 4}, 16LL * Hd, r6);
        Rng r7 = rng.split(7);
        for (double& v : codebook.data) v = 0.5 * r7.normal();
    }

    NamedTensors named_tensors() {
        return {{"codec/e1w", &e1w}, {"codec/e1b", &e1b}, {"codec/e2w", &e2w},
                {"codec/e2b", &e2b}, {"codec/e3w", &e3w}, {"codec/e3b", &e3b},
                {"codec/d1w", &d1w}, {"codec/d1b", &d1b}, {"codec/d2w", &d2w},
                {"codec/d2b", &d2b}, {"codec/d3w", &d3w}, {"codec/d3b", &d3b},
                {"codec/codebook", &codebook}};
    }

    std::vector<int> latent_shape(int h, int w) const {
        check_divisible(h, w);
        return {cfg.channels, h / CodecConfig::factor, w / CodecConfig::factor};
    }

    // frame [H,W] -> continuous latent [C, H/4, W/4]
    Tensor encode(const Tensor& frame) const {
        if (frame.rank() != 2) throw std::invalid_argument("Codec::encode: frame must be [H,W]");
        check_divisible(frame.size(0), frame.size(1));
        Tensor x(std::vector<int>{1, frame.size(0), frame.size(1)}, frame.data);
        x = nn::gelu(nn::conv2d(x, e1w, e1b, 2, 1));
        x = nn::gelu(nn::conv2d(x, e2w, e2b, 2, 1));
        return nn::conv2d(x, e3w, e3b, 1, 1);
    }

    // latent [C,h,w] -> frame [H,W]; linear output, clamped only at export
    Tensor decode(const Tensor& z) const {
        if (z.rank() != 3 || z.size(0) != cfg.channels)
            throw std::invalid_argument("Codec::decode: latent must be [C,h,w]");
        Tensor x = nn::gelu(nn::conv2d(z, d1w, d1b, 1, 1));
        x = nn::gelu(nn::conv2d_transpose(x, d2w, d2b, 2, 1));
        x = nn::conv2d_transpose(x, d3w, d3b, 2, 1);
        return Tensor(std::vector<int>{x.size(1), x.size(2)}, x.data);
    }

    // Taped encoder; params enter as constants when frozen (no gradients).
    Val encode_ad(Tape& t, Val frame, bool frozen) {
        const Tensor& F = t.val(frame);
        if (F.rank() != 2) throw std::invalid_argument("Codec::encode_ad: frame must be [H,W]");
        check_divisible(F.size(0), F.size(1));
        auto P = [&](Tensor& p) { return frozen ? t.constant(p) : t.param(p); };
        Val x = ad::reshape(frame, {1, F.size(0), F.size(1)});
        x = ad::gelu(ad::conv2d(x, P(e1w), P(e1b), 2, 1));
        x = ad::gelu(ad::conv2d(x, P(e2w), P(e2b), 2, 1));
        return ad::conv2d(x, P(e3w), P(e3b), 1, 1);
    }

    Val decode_ad(Tape& t, Val z, bool frozen) {
        const Tensor& Z = t.val(z);
        if (Z.rank() != 3 || Z.size(0) != cfg.channels)
            throw std::invalid_argument("Codec::decode_ad: latent must be [C,h,w]");
        auto P = [&](Tensor& p) { return frozen ? t.constant(p) : t.param(p); };
        Val x = ad::gelu(ad::conv2d(z, P(d1w), P(d1b), 1, 1));
        x = ad::gelu(ad::conv2d_transpose(x, P(d2w), P(d2b), 2, 1));
        x = ad::conv2d_transpose(x, P(d3w), P(d3b), 2, 1);
        return ad::reshape(x, {Z.size(1) * CodecConfig::factor, Z.size(2) * CodecConfig::factor});
    }

    // Nearest codebook entry per latent cell (Euclidean; ties take the lowest
    // index). vq_loss value combines the codebook and commitment terms, which
    // coincide numerically and differ only in gradient routing.
    QuantizeResult quantize(const Tensor& z) const {
        if (z.rank() != 3 || z.size(0) != cfg.channels)
            throw std::invalid_argument("Codec::quantize: latent must be [C,h,w]");
        const int C = cfg.channels, h = z.size(1), w = z.size(2), K = cfg.codebook;
        QuantizeResult r;
        r.z_q = Tensor::zeros(z.shape);
        r.indices = Tensor::zeros({h, w});
        double gap = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                int best = 0;
                double best_d = 0.0;
                for (int k = 0; k < K; ++k) {
                    double d = 0.0;
                    for (int c = 0; c < C; ++c) {
                        double diff = z.at(c, y, x) - codebook.at(k, c);
                        d += diff * diff;
                    }
                    if (k == 0 || d < best_d) {
                        best = k;
                        best_d = d;
                    }
                }
                r.indices.at(y, x) = best;
                for (int c = 0; c < C; ++c) r.z_q.at(c, y, x) = codebook.at(best, c);
                gap += best_d;
            }
        r.vq_loss = (1.0 + beta) * gap / static_cast<double>(z.numel());
        return r;
    }

    // Straight-through view of z_q: forward value equals z_q, gradients flow
    // to z unchanged.
    static Val straight_through(Tape& t, Val z, const Tensor& z_q) {
        Tensor gap(z_q.shape);
        const Tensor& Z = t.val(z);
        for (std::size_t i = 0; i < gap.data.size(); ++i) gap.data[i] = z_q.data[i] - Z.data[i];
        return ad::add(z, t.constant(gap));
    }

    // Codebook + commitment losses with straight-through-compatible routing:
    // ||sg(z) - z_q||^2 trains the codebook, beta ||z - sg(z_q)||^2 trains
    // the encoder; both mean-normalized.
    Val vq_loss_ad(Tape& t, Val z, const QuantizeResult& q, bool frozen_codebook) {
        const Tensor& Z = t.val(z);
        const double inv_n = 1.0 / static_cast<double>(Z.numel());
        const int C = cfg.channels, h = Z.size(1), w = Z.size(2);
        Val codebook_term;
        if (frozen_codebook) {
            codebook_term = t.constant(Tensor::scalar(q.vq_loss / (1.0 + beta)));
        } else {
            std::vector<long long> idx;
            idx.reserve(static_cast<std::size_t>(Z.numel()));
            // z layout is [C,h,w]; gather codebook rows into the same layout
            for (int c = 0; c < C; ++c)
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        idx.push_back(static_cast<long long>(q.indices.at(y, x)) * C + c);
            Val zq_g = ad::gather(t.param(codebook), std::move(idx), Z.shape);
            Val d1 = ad::sub(t.constant(Z), zq_g);
            codebook_term = ad::mul_scalar(ad::sum(ad::square(d1)), inv_n);
        }
        Val d2 = ad::sub(z, t.constant(q.z_q));
        Val commit = ad::mul_scalar(ad::sum(ad::square(d2)), beta * inv_n);
        return ad::add(codebook_term, commit);
    }

    KeyValueFile model_config() const {
        KeyValueFile kv;
        kv.set("model", "codec");
        kv.set_int("channels", cfg.channels);
        kv.set_int("hidden", cfg.hidden);
        kv.set_int("codebook", cfg.codebook);
        kv.set_double("beta", beta);
        return kv;
    }

    static Codec from_config(const KeyValueFile& kv) {
        if (kv.get_or("model", "") != "codec")
            throw std::runtime_error("checkpoint is not a codec (model=" + kv.get_or("model", "?") + ")");
        CodecConfig c;
        c.channels = static_cast<int>(kv.get_int("channels"));
        c.hidden = static_cast<int>(kv.get_int("hidden"));
        c.codebook = static_cast<int>(kv.get_int("codebook"));
        Codec codec(c);
        codec.beta = kv.get_double("beta");
        return codec;
    }

  private:
    static void check_divisible(int h, int w) {
        if (h % CodecConfig::factor != 0 || w % CodecConfig::factor != 0)
            throw std::invalid_argument("Codec: frame dims must divide by " +
                                        std::to_string(CodecConfig::factor));
    }
};

}  // namespace drfuse
