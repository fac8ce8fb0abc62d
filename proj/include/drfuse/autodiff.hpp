#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <utility>
#include <vector>

#include "drfuse/fft.hpp"
#include "drfuse/tensor.hpp"

namespace drfuse {

class Tape;

// Handle to a node on a tape. Cheap to copy; valid for the tape's lifetime.
struct Val {
    Tape* tape = nullptr;
    int id = -1;
};

// Reverse-mode tape over the closed op set used by this project: elementwise
// math, matmul, softmax, layer norm, convolutions, bilinear warping,
// reductions, gathers and 2-D DFT. Nodes are appended in evaluation order, so
// walking ids backwards visits each node exactly once in reverse topological
// order. A tape is single-threaded; build one per training step or per
// forward evaluation.
class Tape {
  public:
    struct Node {
        Tensor val;
        Tensor grad;  // allocated lazily on first contribution
        bool has_grad = false;
        bool needs_grad = false;
        std::vector<int> parents;
        std::function<void(Tape&, int)> back;  // accumulates into parent grads
    };

    Val input(Tensor v) { return push(std::move(v), true); }

    Val constant(Tensor v) { return push(std::move(v), false); }

    // Leaf tied to an external parameter tensor; after backward() the
    // accumulated gradient can be fetched through grad_of(). Repeated calls
    // for the same tensor return the same node, so every use shares one
    // gradient accumulator.
    Val param(Tensor& p) {
        auto it = registry_.find(&p);
        if (it != registry_.end()) return Val{this, it->second};
        Val v = push(p, true);
        registry_[&p] = v.id;
        return v;
    }

    const Tensor& val(Val v) const { return nodes_[check(v)].val; }

    Tensor grad(Val v) const {
        const Node& n = nodes_[check(v)];
        if (!n.has_grad) return Tensor::zeros(n.val.shape);
        return n.grad;
    }

    bool has_param(const Tensor& p) const { return registry_.count(&p) != 0; }

    Tensor grad_of(const Tensor& p) const {
        auto it = registry_.find(&p);
        if (it == registry_.end()) throw std::runtime_error("Tape::grad_of: tensor not registered");
        const Node& n = nodes_[static_cast<std::size_t>(it->second)];
        if (!n.has_grad) return Tensor::zeros(n.val.shape);
        return n.grad;
    }

    void backward(Val root) {
        Node& r = nodes_[check(root)];
        if (r.val.numel() != 1) throw std::invalid_argument("Tape::backward: root must be scalar");
        acc_grad(root.id, Tensor::scalar(1.0));
        for (int id = root.id; id >= 0; --id) {
            Node& n = nodes_[static_cast<std::size_t>(id)];
            if (!n.has_grad || !n.needs_grad || !n.back) continue;
            n.back(*this, id);
        }
    }

    std::size_t size() const { return nodes_.size(); }

    // --- used by op implementations ---

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

    void acc_grad(int id, const Tensor& g) {
        Node& n = nodes_[static_cast<std::size_t>(id)];
        if (!n.needs_grad) return;
        if (!n.has_grad) {
            n.grad = Tensor::zeros(n.val.shape);
            n.has_grad = true;
        }
        if (g.data.size() != n.grad.data.size())
            throw std::runtime_error("Tape::acc_grad: gradient shape mismatch");
        for (std::size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
    }

    Val make(Tensor v, std::vector<int> parents, std::function<void(Tape&, int)> back) {
        bool needs = false;
        for (int p : parents) needs = needs || nodes_[static_cast<std::size_t>(p)].needs_grad;
        Node n;
        n.val = std::move(v);
        n.needs_grad = needs;
        n.parents = std::move(parents);
        if (needs) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return Val{this, static_cast<int>(nodes_.size()) - 1};
    }

  private:
    Val push(Tensor v, bool needs) {
        Node n;
        n.val = std::move(v);
        n.needs_grad = needs;
        nodes_.push_back(std::move(n));
        return Val{this, static_cast<int>(nodes_.size()) - 1};
    }

    std::size_t check(Val v) const {
        if (v.tape != this || v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("Tape: foreign or invalid Val");
        return static_cast<std::size_t>(v.id);
    }

    // deque keeps references returned by val()/node() stable while later ops
    // append nodes
    std::deque<Node> nodes_;
    std::map<const Tensor*, int> registry_;
};

namespace ad {

inline const Tensor& V(Val v) { return v.tape->val(v); }

inline Val add(Val a, Val b) {
    require_same_shape(V(a), V(b), "add");
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = V(a).data[i] + V(b).data[i];
    int ia = a.id, ib = b.id;
    return a.tape->make(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        t.acc_grad(ia, t.node(self).grad);
        t.acc_grad(ib, t.node(self).grad);
    });
}

inline Val sub(Val a, Val b) {
    require_same_shape(V(a), V(b), "sub");
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = V(a).data[i] - V(b).data[i];
    int ia = a.id, ib = b.id;
    return a.tape->make(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        t.acc_grad(ia, g);
        Tensor gb(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] = -g.data[i];
        t.acc_grad(ib, gb);
    });
}

inline Val mul(Val a, Val b) {
    require_same_shape(V(a), V(b), "mul");
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = V(a).data[i] * V(b).data[i];
    int ia = a.id, ib = b.id;
    return a.tape->make(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& av = t.node(ia).val;
        const Tensor& bv = t.node(ib).val;
        Tensor ga(av.shape), gb(bv.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] = g.data[i] * bv.data[i];
            gb.data[i] = g.data[i] * av.data[i];
        }
        t.acc_grad(ia, ga);
        t.acc_grad(ib, gb);
    });
}

inline Val div(Val a, Val b) {
    require_same_shape(V(a), V(b), "div");
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = V(a).data[i] / V(b).data[i];
    int ia = a.id, ib = b.id;
    return a.tape->make(std::move(out), {ia, ib}, [ia, ib](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& av = t.node(ia).val;
        const Tensor& bv = t.node(ib).val;
        Tensor ga(av.shape), gb(bv.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            ga.data[i] = g.data[i] / bv.data[i];
            gb.data[i] = -g.data[i] * av.data[i] / (bv.data[i] * bv.data[i]);
        }
        t.acc_grad(ia, ga);
        t.acc_grad(ib, gb);
    });
}

inline Val neg(Val a) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = -V(a).data[i];
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        Tensor ga(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = -g.data[i];
        t.acc_grad(ia, ga);
    });
}

inline Val add_scalar(Val a, double c) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = V(a).data[i] + c;
    int ia = a.id;
    return a.tape->make(std::move(out), {ia},
                        [ia](Tape& t, int self) { t.acc_grad(ia, t.node(self).grad); });
}

inline Val mul_scalar(Val a, double c) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = V(a).data[i] * c;
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia, c](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        Tensor ga(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = g.data[i] * c;
        t.acc_grad(ia, ga);
    });
}

inline Val square(Val a) { return mul(a, a); }

inline Val exp_(Val a) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::exp(V(a).data[i]);
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).val;
        Tensor ga(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = g.data[i] * y.data[i];
        t.acc_grad(ia, ga);
    });
}

inline Val log_(Val a) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::log(V(a).data[i]);
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(ia).val;
        Tensor ga(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = g.data[i] / x.data[i];
        t.acc_grad(ia, ga);
    });
}

inline Val sqrt_(Val a) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = std::sqrt(V(a).data[i]);
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& y = t.node(self).val;
        Tensor ga(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) ga.data[i] = g.data[i] * 0.5 / y.data[i];
        t.acc_grad(ia, ga);
    });
}

// Exact GELU, x * Phi(x); smooth everywhere so finite differences agree.
inline Val gelu(Val a) {
    Tensor out(V(a).shape);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        double x = V(a).data[i];
        out.data[i] = 0.5 * x * (1.0 + std::erf(x * M_SQRT1_2));
    }
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& x = t.node(ia).val;
        Tensor ga(g.shape);
        for (std::size_t i = 0; i < g.data.size(); ++i) {
            double v = x.data[i];
            double phi = std::exp(-0.5 * v * v) * 0.3989422804014326779399460599344;
            double Phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
            ga.data[i] = g.data[i] * (Phi + v * phi);
        }
        t.acc_grad(ia, ga);
    });
}

inline Val sum(Val a) {
    Tensor out = Tensor::scalar(V(a).sum());
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        double g = t.node(self).grad.data[0];
        Tensor ga(t.node(ia).val.shape);
        for (double& v : ga.data) v = g;
        t.acc_grad(ia, ga);
    });
}

inline Val mean(Val a) { return mul_scalar(sum(a), 1.0 / static_cast<double>(V(a).numel())); }

inline Val reshape(Val a, std::vector<int> shape) {
    if (Tensor::checked_numel(shape) != V(a).numel())
        throw std::invalid_argument("reshape: element count mismatch");
    Tensor out(std::move(shape), V(a).data);
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia](Tape& t, int self) {
        Tensor ga(t.node(ia).val.shape, t.node(self).grad.data);
        t.acc_grad(ia, ga);
    });
}

inline Val detach(Val a) { return a.tape->constant(V(a)); }

// --- matrix ops (2-D) ---

inline Val matmul(Val a, Val b) {
    const Tensor& A = V(a);
    const Tensor& B = V(b);
    if (A.rank() != 2 || B.rank() != 2 || A.size(1) != B.size(0))
        throw std::invalid_argument("matmul: incompatible shapes");
    const int n = A.size(0), m = A.size(1), p = B.size(1);
    Tensor out({n, p});
    for (int i = 0; i < n; ++i)
        for (int k = 0; k < m; ++k) {
            double av = A.at(i, k);
            if (av == 0.0) continue;
            for (int j = 0; j < p; ++j) out.at(i, j) += av * B.at(k, j);
        }
    int ia = a.id, ib = b.id;
    return a.tape->make(std::move(out), {ia, ib}, [ia, ib, n, m, p](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        const Tensor& A2 = t.node(ia).val;
        const Tensor& B2 = t.node(ib).val;
        Tensor ga({n, m}), gb({m, p});
        // dA = G B^T
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < p; ++j) {
                double gv = G.at(i, j);
                if (gv == 0.0) continue;
                for (int k = 0; k < m; ++k) ga.at(i, k) += gv * B2.at(k, j);
            }
        // dB = A^T G
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < m; ++k) {
                double av = A2.at(i, k);
                if (av == 0.0) continue;
                for (int j = 0; j < p; ++j) gb.at(k, j) += av * G.at(i, j);
            }
        t.acc_grad(ia, ga);
        t.acc_grad(ib, gb);
    });
}

inline Val transpose2d(Val a) {
    const Tensor& A = V(a);
    if (A.rank() != 2) throw std::invalid_argument("transpose2d: input must be 2-D");
    const int n = A.size(0), m = A.size(1);
    Tensor out({m, n});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) out.at(j, i) = A.at(i, j);
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia, n, m](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        Tensor ga({n, m});
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) ga.at(i, j) = G.at(j, i);
        t.acc_grad(ia, ga);
    });
}

// Softmax over the last dimension; rows are all leading dims flattened.
// Max-shifted, so arbitrarily large inputs cannot overflow.
inline Val softmax_lastdim(Val a) {
    const Tensor& X = V(a);
    if (X.rank() < 1 || X.shape.back() < 1)
        throw std::invalid_argument("softmax_lastdim: empty last dimension");
    const int d = X.shape.back();
    const long long rows = X.numel() / d;
    Tensor out(X.shape);
    for (long long r = 0; r < rows; ++r) {
        const double* x = &X.data[static_cast<std::size_t>(r) * d];
        double* y = &out.data[static_cast<std::size_t>(r) * d];
        double mx = x[0];
        for (int j = 1; j < d; ++j) mx = std::max(mx, x[j]);
        double s = 0.0;
        for (int j = 0; j < d; ++j) {
            y[j] = std::exp(x[j] - mx);
            s += y[j];
        }
        for (int j = 0; j < d; ++j) y[j] /= s;
    }
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia, d, rows](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        const Tensor& Y = t.node(self).val;
        Tensor ga(Y.shape);
        for (long long r = 0; r < rows; ++r) {
            const double* g = &G.data[static_cast<std::size_t>(r) * d];
            const double* y = &Y.data[static_cast<std::size_t>(r) * d];
            double dot = 0.0;
            for (int j = 0; j < d; ++j) dot += g[j] * y[j];
            double* o = &ga.data[static_cast<std::size_t>(r) * d];
            for (int j = 0; j < d; ++j) o[j] = y[j] * (g[j] - dot);
        }
        t.acc_grad(ia, ga);
    });
}

// Layer norm over the last dimension with learnable gain/bias.
inline Val layernorm_lastdim(Val x, Val gamma, Val beta, double eps = 1e-6) {
    const Tensor& X = V(x);
    const int d = X.shape.back();
    if (V(gamma).numel() != d || V(beta).numel() != d)
        throw std::invalid_argument("layernorm: gain/bias must match last dim");
    const long long rows = X.numel() / d;
    Tensor out(X.shape);
    std::vector<double> inv_std(static_cast<std::size_t>(rows)), means(static_cast<std::size_t>(rows));
    for (long long r = 0; r < rows; ++r) {
        const double* xp = &X.data[static_cast<std::size_t>(r) * d];
        double mu = 0.0;
        for (int j = 0; j < d; ++j) mu += xp[j];
        mu /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) var += (xp[j] - mu) * (xp[j] - mu);
        var /= d;
        double is = 1.0 / std::sqrt(var + eps);
        means[static_cast<std::size_t>(r)] = mu;
        inv_std[static_cast<std::size_t>(r)] = is;
        double* op = &out.data[static_cast<std::size_t>(r) * d];
        for (int j = 0; j < d; ++j)
            op[j] = (xp[j] - mu) * is * V(gamma).data[static_cast<std::size_t>(j)] +
                    V(beta).data[static_cast<std::size_t>(j)];
    }
    int ix = x.id, ig = gamma.id, ib = beta.id;
    return x.tape->make(
        std::move(out), {ix, ig, ib},
        [ix, ig, ib, d, rows, means, inv_std](Tape& t, int self) {
            const Tensor& G = t.node(self).grad;
            const Tensor& X2 = t.node(ix).val;
            const Tensor& gam = t.node(ig).val;
            Tensor gx(X2.shape);
            Tensor ggam(gam.shape);
            Tensor gbeta(gam.shape);
            for (long long r = 0; r < rows; ++r) {
                const double* xp = &X2.data[static_cast<std::size_t>(r) * d];
                const double* gp = &G.data[static_cast<std::size_t>(r) * d];
                double mu = means[static_cast<std::size_t>(r)];
                double is = inv_std[static_cast<std::size_t>(r)];
                double sum_gy = 0.0, sum_gyx = 0.0;
                for (int j = 0; j < d; ++j) {
                    double xhat = (xp[j] - mu) * is;
                    double gy = gp[j] * gam.data[static_cast<std::size_t>(j)];
                    sum_gy += gy;
                    sum_gyx += gy * xhat;
                    ggam.data[static_cast<std::size_t>(j)] += gp[j] * xhat;
                    gbeta.data[static_cast<std::size_t>(j)] += gp[j];
                }
                double* op = &gx.data[static_cast<std::size_t>(r) * d];
                for (int j = 0; j < d; ++j) {
                    double xhat = (xp[j] - mu) * is;
                    double gy = gp[j] * gam.data[static_cast<std::size_t>(j)];
                    op[j] = is * (gy - sum_gy / d - xhat * sum_gyx / d);
                }
            }
            t.acc_grad(ix, gx);
            t.acc_grad(ig, ggam);
            t.acc_grad(ib, gbeta);
        });
}

// --- structural ops ---

// out[i] = in[idx[i]]; every idx entry must be a valid flat index.
inline Val gather(Val a, std::vector<long long> idx, std::vector<int> out_shape) {
    const Tensor& A = V(a);
    if (Tensor::checked_numel(out_shape) != static_cast<long long>(idx.size()))
        throw std::invalid_argument("gather: index count does not match output shape");
    Tensor out(std::move(out_shape));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        long long j = idx[i];
        if (j < 0 || j >= A.numel()) throw std::invalid_argument("gather: index out of range");
        out.data[i] = A.data[static_cast<std::size_t>(j)];
    }
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia, idx = std::move(idx)](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        Tensor ga(t.node(ia).val.shape);
        for (std::size_t i = 0; i < idx.size(); ++i)
            ga.data[static_cast<std::size_t>(idx[i])] += G.data[i];
        t.acc_grad(ia, ga);
    });
}

inline Val slice_rows(Val a, int r0, int r1) {
    const Tensor& A = V(a);
    if (A.rank() != 2 || r0 < 0 || r1 > A.size(0) || r0 >= r1)
        throw std::invalid_argument("slice_rows: bad range");
    const int d = A.size(1);
    Tensor out({r1 - r0, d});
    std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(r0) * d,
              A.data.begin() + static_cast<std::ptrdiff_t>(r1) * d, out.data.begin());
    int ia = a.id;
    return a.tape->make(std::move(out), {ia}, [ia, r0, d](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        Tensor ga(t.node(ia).val.shape);
        std::copy(G.data.begin(), G.data.end(), ga.data.begin() + static_cast<std::ptrdiff_t>(r0) * d);
        t.acc_grad(ia, ga);
    });
}

inline Val slice_cols(Val a, int c0, int c1) {
    const Tensor& A = V(a);
    if (A.rank() != 2 || c0 < 0 || c1 > A.size(1) || c0 >= c1)
        throw std::invalid_argument("slice_cols: bad range");
    const int n = A.size(0), d = A.size(1);
    std::vector<long long> idx;
    idx.reserve(static_cast<std::size_t>(n) * (c1 - c0));
    for (int i = 0; i < n; ++i)
        for (int j = c0; j < c1; ++j) idx.push_back(static_cast<long long>(i) * d + j);
    return gather(a, std::move(idx), {n, c1 - c0});
}

inline Val concat_rows(const std::vector<Val>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
    const int d = V(xs[0]).size(1);
    int total = 0;
    std::vector<int> ids;
    for (Val v : xs) {
        if (V(v).rank() != 2 || V(v).size(1) != d)
            throw std::invalid_argument("concat_rows: column mismatch");
        total += V(v).size(0);
        ids.push_back(v.id);
    }
    Tensor out({total, d});
    std::size_t off = 0;
    for (Val v : xs) {
        std::copy(V(v).data.begin(), V(v).data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(off));
        off += V(v).data.size();
    }
    return xs[0].tape->make(std::move(out), ids, [ids](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        std::size_t off2 = 0;
        for (int id : ids) {
            const Tensor& src = t.node(id).val;
            Tensor g(src.shape);
            std::copy(G.data.begin() + static_cast<std::ptrdiff_t>(off2),
                      G.data.begin() + static_cast<std::ptrdiff_t>(off2 + src.data.size()),
                      g.data.begin());
            t.acc_grad(id, g);
            off2 += src.data.size();
        }
    });
}

inline Val concat_lastdim(const std::vector<Val>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_lastdim: empty input");
    const int n = V(xs[0]).size(0);
    int total = 0;
    std::vector<int> ids, widths;
    for (Val v : xs) {
        if (V(v).rank() != 2 || V(v).size(0) != n)
            throw std::invalid_argument("concat_lastdim: row mismatch");
        total += V(v).size(1);
        ids.push_back(v.id);
        widths.push_back(V(v).size(1));
    }
    Tensor out({n, total});
    int col = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const Tensor& src = V(xs[k]);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < widths[k]; ++j) out.at(i, col + j) = src.at(i, j);
        col += widths[k];
    }
    return xs[0].tape->make(std::move(out), ids, [ids, widths, n](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        int col2 = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            Tensor g({n, widths[k]});
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < widths[k]; ++j) g.at(i, j) = G.at(i, col2 + j);
            t.acc_grad(ids[k], g);
            col2 += widths[k];
        }
    });
}

// x: [n,d], row: [1,d] or [d]; adds row to every row of x.
inline Val add_broadcast_row(Val x, Val row) {
    const Tensor& X = V(x);
    const Tensor& R = V(row);
    if (X.rank() != 2 || R.numel() != X.size(1))
        throw std::invalid_argument("add_broadcast_row: shape mismatch");
    const int n = X.size(0), d = X.size(1);
    Tensor out(X.shape);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) out.at(i, j) = X.at(i, j) + R.data[static_cast<std::size_t>(j)];
    int ix = x.id, ir = row.id;
    return x.tape->make(std::move(out), {ix, ir}, [ix, ir, n, d](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        t.acc_grad(ix, G);
        Tensor gr(t.node(ir).val.shape);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < d; ++j) gr.data[static_cast<std::size_t>(j)] += G.at(i, j);
        t.acc_grad(ir, gr);
    });
}

// --- convolutions ---

// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout]; zero padding.
inline Val conv2d(Val x, Val w, Val b, int stride, int pad) {
    const Tensor& X = V(x);
    const Tensor& W = V(w);
    const Tensor& B = V(b);
    if (X.rank() != 3 || W.rank() != 4 || B.rank() != 1)
        throw std::invalid_argument("conv2d: bad ranks");
    const int cin = X.size(0), h = X.size(1), wd = X.size(2);
    const int cout = W.size(0), kh = W.size(2), kw = W.size(3);
    if (W.size(1) != cin || B.size(0) != cout) throw std::invalid_argument("conv2d: channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: output would be empty");
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
                            acc += X.at(ci, iy, ix) * W.data[((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx];
                        }
                    }
                out.at(co, oy, ox) = acc;
            }
    int ix_ = x.id, iw_ = w.id, ib_ = b.id;
    return x.tape->make(std::move(out), {ix_, iw_, ib_},
                        [ix_, iw_, ib_, stride, pad, cin, h, wd, cout, kh, kw, oh, ow](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        const Tensor& X2 = t.node(ix_).val;
        const Tensor& W2 = t.node(iw_).val;
        Tensor gx(X2.shape), gw(W2.shape), gb({cout});
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double gv = G.at(co, oy, ox);
                    if (gv == 0.0) continue;
                    gb.data[static_cast<std::size_t>(co)] += gv;
                    for (int ci = 0; ci < cin; ++ci)
                        for (int ky = 0; ky < kh; ++ky) {
                            int iy = oy * stride - pad + ky;
                            if (iy < 0 || iy >= h) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                int ixp = ox * stride - pad + kx;
                                if (ixp < 0 || ixp >= wd) continue;
                                std::size_t wi = ((static_cast<std::size_t>(co) * cin + ci) * kh + ky) * kw + kx;
                                gx.at(ci, iy, ixp) += gv * W2.data[wi];
                                gw.data[wi] += gv * X2.at(ci, iy, ixp);
                            }
                        }
                }
        t.acc_grad(ix_, gx);
        t.acc_grad(iw_, gw);
        t.acc_grad(ib_, gb);
    });
}

// x: [Cin,H,W], w: [Cin,Cout,kh,kw], b: [Cout]; output (H-1)*stride - 2*pad + kh.
inline Val conv2d_transpose(Val x, Val w, Val b, int stride, int pad) {
    const Tensor& X = V(x);
    const Tensor& W = V(w);
    const Tensor& B = V(b);
    if (X.rank() != 3 || W.rank() != 4 || B.rank() != 1)
        throw std::invalid_argument("conv2d_transpose: bad ranks");
    const int cin = X.size(0), h = X.size(1), wd = X.size(2);
    const int cout = W.size(1), kh = W.size(2), kw = W.size(3);
    if (W.size(0) != cin || B.size(0) != cout)
        throw std::invalid_argument("conv2d_transpose: channel mismatch");
    const int oh = (h - 1) * stride - 2 * pad + kh;
    const int ow = (wd - 1) * stride - 2 * pad + kw;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d_transpose: output would be empty");
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
                            out.at(co, oy, ox) += xv * W.data[((static_cast<std::size_t>(ci) * cout + co) * kh + ky) * kw + kx];
                        }
                    }
            }
    int ix_ = x.id, iw_ = w.id, ib_ = b.id;
    return x.tape->make(std::move(out), {ix_, iw_, ib_},
                        [ix_, iw_, ib_, stride, pad, cin, h, wd, cout, kh, kw, oh, ow](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        const Tensor& X2 = t.node(ix_).val;
        const Tensor& W2 = t.node(iw_).val;
        Tensor gx(X2.shape), gw(W2.shape), gb({cout});
        for (int co = 0; co < cout; ++co)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) gb.data[static_cast<std::size_t>(co)] += G.at(co, oy, ox);
        for (int ci = 0; ci < cin; ++ci)
            for (int iy = 0; iy < h; ++iy)
                for (int ixp = 0; ixp < wd; ++ixp) {
                    double xv = X2.at(ci, iy, ixp);
                    double acc = 0.0;
                    for (int co = 0; co < cout; ++co)
                        for (int ky = 0; ky < kh; ++ky) {
                            int oy = iy * stride - pad + ky;
                            if (oy < 0 || oy >= oh) continue;
                            for (int kx = 0; kx < kw; ++kx) {
                                int ox = ixp * stride - pad + kx;
                                if (ox < 0 || ox >= ow) continue;
                                std::size_t wi = ((static_cast<std::size_t>(ci) * cout + co) * kh + ky) * kw + kx;
                                double gv = G.at(co, oy, ox);
                                acc += gv * W2.data[wi];
                                gw.data[wi] += gv * xv;
                            }
                        }
                    gx.at(ci, iy, ixp) = acc;
                }
        t.acc_grad(ix_, gx);
        t.acc_grad(iw_, gw);
        t.acc_grad(ib_, gb);
    });
}

// Valid-region correlation of a 2-D image with a fixed (non-learned) kernel.
inline Val conv2d_valid_fixed(Val x, const Tensor& kernel) {
    const Tensor& X = V(x);
    if (X.rank() != 2 || kernel.rank() != 2)
        throw std::invalid_argument("conv2d_valid_fixed: inputs must be 2-D");
    const int h = X.size(0), w = X.size(1), kh = kernel.size(0), kw = kernel.size(1);
    const int oh = h - kh + 1, ow = w - kw + 1;
    if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d_valid_fixed: kernel larger than image");
    Tensor out({oh, ow});
    for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
            double acc = 0.0;
            for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) acc += X.at(oy + ky, ox + kx) * kernel.at(ky, kx);
            out.at(oy, ox) = acc;
        }
    int ix = x.id;
    return x.tape->make(std::move(out), {ix}, [ix, kernel, oh, ow, kh, kw](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        Tensor gx(t.node(ix).val.shape);
        for (int oy = 0; oy < oh; ++oy)
            for (int ox = 0; ox < ow; ++ox) {
                double gv = G.at(oy, ox);
                if (gv == 0.0) continue;
                for (int ky = 0; ky < kh; ++ky)
                    for (int kx = 0; kx < kw; ++kx) gx.at(oy + ky, ox + kx) += gv * kernel.at(ky, kx);
            }
        t.acc_grad(ix, gx);
    });
}

// --- bilinear warping ---

// Backward warp: out(p) = bilinear sample of z at p - flow(p). flow is a fixed
// [2,H,W] tensor (dx then dy planes); gradients propagate to z only.
// Out-of-bounds sample coordinates clamp to the border.
inline Val bilinear_warp(Val z, const Tensor& flow) {
    const Tensor& Z = V(z);
    if (flow.rank() != 3 || flow.size(0) != 2)
        throw std::invalid_argument("bilinear_warp: flow must be [2,H,W]");
    const bool chan = Z.rank() == 3;
    const int c = chan ? Z.size(0) : 1;
    const int h = chan ? Z.size(1) : Z.size(0);
    const int w = chan ? Z.size(2) : Z.size(1);
    if (flow.size(1) != h || flow.size(2) != w)
        throw std::invalid_argument("bilinear_warp: flow dims must match input dims");
    struct Tap {
        int src;
        double wgt;
    };
    // 4 taps per output cell, shared across channels
    std::vector<Tap> taps(static_cast<std::size_t>(h) * w * 4);
    Tensor out(Z.shape);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double sx = x - flow.at(0, y, x);
            double sy = y - flow.at(1, y, x);
            sx = std::min(static_cast<double>(w - 1), std::max(0.0, sx));
            sy = std::min(static_cast<double>(h - 1), std::max(0.0, sy));
            int x0 = static_cast<int>(std::floor(sx));
            int y0 = static_cast<int>(std::floor(sy));
            int x1 = std::min(x0 + 1, w - 1);
            int y1 = std::min(y0 + 1, h - 1);
            double fx = sx - x0, fy = sy - y0;
            std::size_t base = (static_cast<std::size_t>(y) * w + x) * 4;
            taps[base + 0] = {y0 * w + x0, (1 - fx) * (1 - fy)};
            taps[base + 1] = {y0 * w + x1, fx * (1 - fy)};
            taps[base + 2] = {y1 * w + x0, (1 - fx) * fy};
            taps[base + 3] = {y1 * w + x1, fx * fy};
        }
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ci = 0; ci < c; ++ci)
        for (std::size_t p = 0; p < plane; ++p) {
            const Tap* tp = &taps[p * 4];
            double acc = 0.0;
            for (int k = 0; k < 4; ++k) acc += Z.data[ci * plane + static_cast<std::size_t>(tp[k].src)] * tp[k].wgt;
            out.data[ci * plane + p] = acc;
        }
    int iz = z.id;
    return z.tape->make(std::move(out), {iz}, [iz, taps = std::move(taps), c, plane](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        Tensor gz(t.node(iz).val.shape);
        for (int ci = 0; ci < c; ++ci)
            for (std::size_t p = 0; p < plane; ++p) {
                double gv = G.data[ci * plane + p];
                if (gv == 0.0) continue;
                const auto* tp = &taps[p * 4];
                for (int k = 0; k < 4; ++k)
                    gz.data[ci * plane + static_cast<std::size_t>(tp[k].src)] += gv * tp[k].wgt;
            }
        t.acc_grad(iz, gz);
    });
}

// --- DFT ---

// Forward 2-D DFT of a real [H,W] image packed as [2,H,W] (re, im). The
// transform is linear, so backward is the adjoint transform of the cotangent.
inline Val dft2(Val x) {
    const Tensor& X = V(x);
    if (X.rank() != 2) throw std::invalid_argument("dft2: input must be 2-D");
    const int h = X.size(0), w = X.size(1);
    Tensor re, im;
    dft2_forward(X, re, im);
    Tensor out({2, h, w});
    std::copy(re.data.begin(), re.data.end(), out.data.begin());
    std::copy(im.data.begin(), im.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(h) * w);
    int ix = x.id;
    return x.tape->make(std::move(out), {ix}, [ix, h, w](Tape& t, int self) {
        const Tensor& G = t.node(self).grad;
        Tensor gre({h, w}), gim({h, w});
        std::copy(G.data.begin(), G.data.begin() + static_cast<std::ptrdiff_t>(h) * w, gre.data.begin());
        std::copy(G.data.begin() + static_cast<std::ptrdiff_t>(h) * w, G.data.end(), gim.data.begin());
        t.acc_grad(ix, dft2_adjoint(gre, gim));
    });
}

}  // namespace ad

}  // namespace drfuse
