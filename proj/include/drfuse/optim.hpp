#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "drfuse/tensor.hpp"

namespace drfuse {

struct AdamWSettings {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

// AdamW: Adam moments plus decoupled weight decay. One slot per registered
// parameter tensor; step order is the registration order, so updates are
// deterministic.
class AdamW {
  public:
    using Settings = AdamWSettings;

    explicit AdamW(Settings s = Settings()) : s_(s) {
        if (s_.lr <= 0.0) throw std::invalid_argument("AdamW: lr must be positive");
        if (s_.beta1 < 0.0 || s_.beta1 >= 1.0 || s_.beta2 < 0.0 || s_.beta2 >= 1.0)
            throw std::invalid_argument("AdamW: betas must lie in [0,1)");
    }

    void attach(Tensor* p) {
        if (p == nullptr) throw std::invalid_argument("AdamW: null parameter");
        slots_.push_back({p, Tensor::zeros(p->shape), Tensor::zeros(p->shape)});
    }

    void attach_all(const std::vector<std::pair<std::string, Tensor*>>& named) {
        for (const auto& [name, p] : named) attach(p);
    }

    // Applies one update from per-parameter gradients aligned with the
    // attach order.
    void step(const std::vector<Tensor>& grads) {
        if (grads.size() != slots_.size())
            throw std::invalid_argument("AdamW::step: gradient count mismatch");
        ++t_;
        const double bc1 = 1.0 - std::pow(s_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(s_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < slots_.size(); ++i) {
            Slot& sl = slots_[i];
            const Tensor& g = grads[i];
            require_same_shape(*sl.p, g, "AdamW::step");
            for (std::size_t j = 0; j < g.data.size(); ++j) {
                double gj = g.data[j];
                sl.m.data[j] = s_.beta1 * sl.m.data[j] + (1.0 - s_.beta1) * gj;
                sl.v.data[j] = s_.beta2 * sl.v.data[j] + (1.0 - s_.beta2) * gj * gj;
                double mhat = sl.m.data[j] / bc1;
                double vhat = sl.v.data[j] / bc2;
                sl.p->data[j] -= s_.lr * (mhat / (std::sqrt(vhat) + s_.eps) +
                                          s_.weight_decay * sl.p->data[j]);
            }
        }
    }

    std::size_t n_params() const { return slots_.size(); }
    long long steps_taken() const { return t_; }
    const Settings& settings() const { return s_; }

  private:
    struct Slot {
        Tensor* p;
        Tensor m, v;
    };
    Settings s_;
    std::vector<Slot> slots_;
    long long t_ = 0;
};

}  // namespace drfuse
