#pragma once

#include <cmath>
#include <string>
#include <unordered_map>

#include "tridistill/common.hpp"
#include "tridistill/encoder.hpp"
#include "tridistill/tensor.hpp"

namespace tridistill {

// Linear warmup to peak over the first warmup_fraction of total steps, then
// constant. Steps are 1-based.
struct LRSchedule {
    double peak_lr = 5e-5;
    double warmup_fraction = 0.10;
    long long total_steps = 1;

    long long warmup_steps() const {
        return std::max<long long>(1, static_cast<long long>(static_cast<double>(total_steps) * warmup_fraction));
    }

    double lr(long long step) const {
        const long long ws = warmup_steps();
        if (step <= ws) return peak_lr * static_cast<double>(step) / static_cast<double>(ws);
        return peak_lr;
    }
};

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-2;
};

// First/second moments kept in double regardless of the parameter scalar type.
struct OptimizerState {
    std::unordered_map<std::string, Tensor<double>> m;
    std::unordered_map<std::string, Tensor<double>> v;
    long long step = 0;
};

// Decoupled-weight-decay AdamW over every trainable parameter in the store.
// Frozen parameters (needs_grad == false) are left untouched, including by
// weight decay.
template <typename T>
void adamw_step(ParameterStore<T>& store, OptimizerState& state, const LRSchedule& sched,
                const AdamWConfig& hp = {}) {
    ++state.step;
    const double lr = sched.lr(state.step);
    const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
    for (std::size_t pi = 0; pi < store.count(); ++pi) {
        const auto& node = store.at(pi);
        if (!node->needs_grad) continue;
        const std::string& name = store.names()[pi];
        auto& m = state.m.try_emplace(name, Tensor<double>::zeros(node->value.shape)).first->second;
        auto& v = state.v.try_emplace(name, Tensor<double>::zeros(node->value.shape)).first->second;
        auto& p = node->value.data;
        const bool has_grad = node->grad_alloc;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = has_grad ? static_cast<double>(node->grad.data[i]) : 0.0;
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + name + "'");
            m.data[i] = hp.beta1 * m.data[i] + (1.0 - hp.beta1) * g;
            v.data[i] = hp.beta2 * v.data[i] + (1.0 - hp.beta2) * g * g;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) -
                                  lr * (mhat / (std::sqrt(vhat) + hp.eps) +
                                        hp.weight_decay * static_cast<double>(p[i])));
        }
    }
}

} // namespace tridistill
