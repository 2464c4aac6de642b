#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "tridistill/autograd.hpp"
#include "tridistill/encoder.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/tensor.hpp"

namespace tridistill {

struct GradCheckReport {
    double max_rel_err = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
    int worst_leaf = -1;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Relative error with an absolute floor. Differences below atol count as
// agreement: central differences carry truncation noise far below gradient
// scale, which would dominate the ratio on near-zero gradients; real gradient
// bugs scale with the gradient and clear atol by orders of magnitude.
inline double grad_rel_err(double analytic, double numeric, double atol = 1e-7) {
    const double diff = std::abs(analytic - numeric);
    if (diff <= atol) return 0.0;
    return diff / std::max(std::abs(analytic), std::abs(numeric));
}

// Central-difference check in double precision. build() must be a pure
// function of the leaf values (reseed any RNG it uses internally) and return
// a scalar. Every leaf element is perturbed by +/-eps.
template <typename F>
GradCheckReport grad_check(F&& build, std::vector<Tensor<double>> leaves, double eps = 1e-3) {
    std::vector<Var<double>> params;
    params.reserve(leaves.size());
    for (auto& t : leaves) params.push_back(parameter(t));

    auto loss = build(params);
    backward(loss);

    GradCheckReport rep;
    auto eval = [&](const std::vector<Tensor<double>>& vals) {
        std::vector<Var<double>> vs;
        vs.reserve(vals.size());
        for (const auto& t : vals) vs.push_back(parameter(t));
        return static_cast<double>(build(vs)->value.data[0]);
    };

    for (std::size_t li = 0; li < leaves.size(); ++li) {
        for (std::size_t i = 0; i < leaves[li].size(); ++i) {
            const double orig = leaves[li].data[i];
            leaves[li].data[i] = orig + eps;
            const double fp = eval(leaves);
            leaves[li].data[i] = orig - eps;
            const double fm = eval(leaves);
            leaves[li].data[i] = orig;

            const double numeric = (fp - fm) / (2.0 * eps);
            const double analytic = params[li]->grad_alloc ? params[li]->grad.data[i] : 0.0;
            const double aa = std::abs(analytic), an = std::abs(numeric);
            if (aa < 1e-8 && an < 1e-8) {
                ++rep.skipped;
                continue;
            }
            const double err = grad_rel_err(analytic, numeric);
            ++rep.checked;
            if (err > rep.max_rel_err) {
                rep.max_rel_err = err;
                rep.worst_leaf = static_cast<int>(li);
                rep.worst_index = i;
                rep.worst_analytic = analytic;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

// Sampled check against the parameters of a live model. loss_fn() must
// rebuild the graph from current parameter values on every call and be
// deterministic. n_coords random parameter coordinates are perturbed.
template <typename T, typename F>
GradCheckReport sampled_grad_check(ParameterStore<T>& store, F&& loss_fn, int n_coords, Rng& rng,
                                   double eps = 1e-3, double atol = 1e-7) {
    store.zero_grads();
    auto loss = loss_fn();
    backward(loss);

    GradCheckReport rep;
    for (int c = 0; c < n_coords; ++c) {
        const std::size_t pi = rng.below(store.count());
        const auto& node = store.at(pi);
        const std::size_t ei = rng.below(node->value.size());
        const T orig = node->value.data[ei];

        node->value.data[ei] = static_cast<T>(static_cast<double>(orig) + eps);
        const double fp = static_cast<double>(loss_fn()->value.data[0]);
        node->value.data[ei] = static_cast<T>(static_cast<double>(orig) - eps);
        const double fm = static_cast<double>(loss_fn()->value.data[0]);
        node->value.data[ei] = orig;

        const double numeric = (fp - fm) / (2.0 * eps);
        const double analytic = node->grad_alloc ? static_cast<double>(node->grad.data[ei]) : 0.0;
        if (std::abs(analytic) < 1e-8 && std::abs(numeric) < 1e-8) {
            ++rep.skipped;
            continue;
        }
        const double err = grad_rel_err(analytic, numeric, atol);
        ++rep.checked;
        if (err > rep.max_rel_err) {
            rep.max_rel_err = err;
            rep.worst_leaf = static_cast<int>(pi);
            rep.worst_index = ei;
            rep.worst_analytic = analytic;
            rep.worst_numeric = numeric;
        }
    }
    return rep;
}

} // namespace tridistill
