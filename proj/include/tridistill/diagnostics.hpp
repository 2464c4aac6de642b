#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "tridistill/encoder.hpp"
#include "tridistill/gradcheck.hpp"
#include "tridistill/losses.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/tensor.hpp"
#include "tridistill/vocab.hpp"

namespace tridistill {

// Finite-difference verification of every loss component's gradient through a
// small double-precision encoder. Eval-mode forward keeps the graph a pure
// function of the parameters; teacher signals and triplets are fixed draws.
inline std::vector<std::pair<std::string, GradCheckReport>> per_loss_gradcheck(uint64_t seed, int n_coords) {
    Rng rng(seed);

    EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 16, .d_ff = 24, .dropout = 0.1,
                      .max_len = 10, .vocab_size = 37};
    Encoder<double> enc(cfg, rng);
    const int k = 4;
    enc.add_head(Task::ID, k);
    // The zero-init head and the tiny fresh-init embeddings are re-drawn at
    // healthy scales. Near-zero activations amplify finite-difference
    // truncation error: normalization curvature grows as 1/sigma^3 of the
    // pre-norm rows and cosine curvature as 1/norm^3 of the logit rows, so
    // central differences at eps=1e-3 pick up O(1e-4) relative error on those
    // coordinates even when the analytic gradient is exact. A well-conditioned
    // point checks the same backward paths without that amplification.
    for (std::size_t i = 0; i < enc.store.count(); ++i)
        if (enc.store.names()[i].rfind("head.", 0) == 0)
            for (auto& x : enc.store.at(i)->value.data) x = rng.gaussian() * 0.5;
    for (const char* name : {"embedding.token", "embedding.position"})
        for (auto& x : enc.store.get(name)->value.data) x = rng.gaussian() * 0.5;

    EncodedBatch b;
    b.n = 6;
    b.width = 8;
    b.token_ids.assign(static_cast<std::size_t>(b.n) * b.width, kPadId);
    b.mask.assign(static_cast<std::size_t>(b.n) * b.width, 0);
    b.slot_targets.assign(static_cast<std::size_t>(b.n) * b.width, kIgnoreTarget);
    for (int i = 0; i < b.n; ++i) {
        const int len = 4 + static_cast<int>(rng.below(static_cast<uint64_t>(b.width - 4)));
        b.token_ids[static_cast<std::size_t>(i) * b.width] = kClsId;
        b.mask[static_cast<std::size_t>(i) * b.width] = 1;
        for (int j = 1; j < len; ++j) {
            b.token_ids[static_cast<std::size_t>(i) * b.width + j] =
                3 + static_cast<int>(rng.below(static_cast<uint64_t>(cfg.vocab_size - 3)));
            b.mask[static_cast<std::size_t>(i) * b.width + j] = 1;
        }
        b.intent_targets.push_back(static_cast<int>(rng.below(k)));
        b.domain_targets.push_back(static_cast<int>(rng.below(2)));
    }

    // Two teachers with different hidden widths.
    std::vector<Tensor<double>> probs, logits, pooled;
    for (int w : {16, 32}) {
        Tensor<double> lg({b.n, k});
        for (auto& v : lg.data) v = rng.gaussian();
        Tensor<double> pr = lg;
        for (int i = 0; i < b.n; ++i) {
            double m = pr.data[static_cast<std::size_t>(i) * k];
            for (int c = 1; c < k; ++c) m = std::max(m, pr.data[static_cast<std::size_t>(i) * k + c]);
            double z = 0.0;
            for (int c = 0; c < k; ++c) {
                auto& v = pr.data[static_cast<std::size_t>(i) * k + c];
                v = std::exp(v - m);
                z += v;
            }
            for (int c = 0; c < k; ++c) pr.data[static_cast<std::size_t>(i) * k + c] /= z;
        }
        Tensor<double> pl({b.n, w});
        for (auto& v : pl.data) v = rng.gaussian();
        logits.push_back(std::move(lg));
        probs.push_back(std::move(pr));
        pooled.push_back(std::move(pl));
    }
    const auto triplets = generate_triplets(pooled, b.n, rng);

    std::vector<std::pair<std::string, GradCheckReport>> out;
    for (const std::string name : {"kd", "sce", "sim", "rel", "tp"}) {
        const LossConfig lc = LossConfig::from_names(name);
        auto loss_fn = [&] {
            const auto fwd = enc.forward(b, Task::ID, Mode::Eval);
            LossInputs<double> in;
            in.teacher_probs = probs;
            in.teacher_logits = logits;
            in.student_logits = fwd.logits;
            in.student_pooled = fwd.pooled;
            in.targets = b.intent_targets;
            in.triplets = triplets;
            return total_loss(in, lc).first;
        };
        // atol 5e-6 floors out central-difference truncation noise, which at
        // eps=1e-3 reaches ~1e-6 through this depth of graph and would
        // otherwise swamp the ratio on near-zero gradients. Real gradient
        // defects scale with the gradient itself and clear this floor by
        // orders of magnitude.
        out.emplace_back(name, sampled_grad_check(enc.store, loss_fn, n_coords, rng, 1e-3, 5e-6));
    }
    return out;
}

} // namespace tridistill
