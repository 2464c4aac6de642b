#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "tridistill/autograd.hpp"
#include "tridistill/common.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/tensor.hpp"

namespace tridistill {

// Which of the five distillation loss components are active, plus their
// constants. The default set is the strongest configuration reported for the
// method: distribution matching, hard labels, logit similarity and triplet
// relations, without teacher-prediction pseudo-labels.
struct LossConfig {
    bool kd = true;
    bool sce = true;
    bool sim = true;
    bool rel = true;
    bool tp = false;
    double margin = 0.2;
    int p_norm = 2;
    double temperature = 1.0;

    void validate() const {
        if (!(kd || sce || sim || rel || tp)) throw ConfigError("loss config: no components enabled");
        if (margin <= 0.0) throw ConfigError("loss config: margin must be > 0");
        if (p_norm != 2) throw ConfigError("loss config: only p_norm = 2 is supported");
        if (temperature <= 0.0) throw ConfigError("loss config: temperature must be > 0");
    }

    static LossConfig from_names(const std::string& csv) {
        LossConfig c;
        c.kd = c.sce = c.sim = c.rel = c.tp = false;
        std::size_t start = 0;
        while (start <= csv.size()) {
            const std::size_t end = std::min(csv.find(',', start), csv.size());
            const std::string name = csv.substr(start, end - start);
            if (name == "kd") c.kd = true;
            else if (name == "sce") c.sce = true;
            else if (name == "sim") c.sim = true;
            else if (name == "rel") c.rel = true;
            else if (name == "tp") c.tp = true;
            else if (!name.empty()) throw ConfigError("unknown loss component '" + name + "'");
            start = end + 1;
        }
        c.validate();
        return c;
    }

    std::string enabled_names() const {
        std::string out;
        auto app = [&out](bool on, const char* n) {
            if (!on) return;
            if (!out.empty()) out += ",";
            out += n;
        };
        app(kd, "kd");
        app(sce, "sce");
        app(sim, "sim");
        app(rel, "rel");
        app(tp, "tp");
        return out;
    }
};

// Disabled components stay unset rather than zero so logs distinguish
// "excluded" from "evaluated to 0".
struct LossBreakdown {
    std::optional<double> kd, sce, sim, rel, tp;
    double total = 0.0;
};

// KL( mean-of-teachers ‖ student ) over probability rows. The constant
// teacher-entropy term is folded in so the value is a true KL divergence,
// nonnegative and zero only at equality.
template <typename T>
Var<T> kd_loss(const std::vector<Tensor<T>>& teacher_probs, const Var<T>& student_logits) {
    if (teacher_probs.empty()) throw ConfigError("kd loss: no teacher distributions");
    const int r = student_logits->value.dim(0);
    const int k = student_logits->value.dim(1);
    for (const auto& p : teacher_probs)
        if (p.shape != student_logits->value.shape)
            throw DataError("kd loss: teacher distribution shape " + p.shape_str() + " does not match student " +
                            student_logits->value.shape_str());

    Tensor<T> qbar({r, k});
    const double inv = 1.0 / static_cast<double>(teacher_probs.size());
    for (std::size_t i = 0; i < qbar.size(); ++i) {
        double s = 0;
        for (const auto& p : teacher_probs) s += static_cast<double>(p.data[i]);
        qbar.data[i] = static_cast<T>(s * inv);
    }
    double qlogq = 0;
    for (std::size_t i = 0; i < qbar.size(); ++i) {
        const double q = static_cast<double>(qbar.data[i]);
        if (q > 0) qlogq += q * std::log(std::max(q, 1e-12));
    }
    qlogq /= r;
    return add_scalar(soft_nll(log_softmax_lastdim(student_logits), std::move(qbar)), qlogq);
}

// Plain cross-entropy against ground truth over the same rows.
template <typename T>
Var<T> sce_loss(const Var<T>& student_logits, const std::vector<int>& targets) {
    if (targets.empty()) throw DataError("supervised loss: no scoreable positions");
    return nll(log_softmax_lastdim(student_logits), targets);
}

// Negated cosine similarity between each teacher's logit rows and the
// student's, averaged over rows and summed over teachers.
template <typename T>
Var<T> sim_loss(const std::vector<Tensor<T>>& teacher_logits, const Var<T>& student_logits) {
    if (teacher_logits.empty()) throw ConfigError("sim loss: no teacher logits");
    const int r = student_logits->value.dim(0);
    const int k = student_logits->value.dim(1);
    auto snorm = sqrt_eps(rowwise_dot(student_logits, student_logits), 1e-24);
    Var<T> acc;
    for (const auto& vt : teacher_logits) {
        if (vt.shape != student_logits->value.shape)
            throw DataError("sim loss: teacher logit shape " + vt.shape_str() + " does not match student");
        Tensor<T> tnorm({r});
        for (int i = 0; i < r; ++i) {
            double ss = 0;
            for (int j = 0; j < k; ++j) {
                const double v = static_cast<double>(vt.data[static_cast<std::size_t>(i) * k + j]);
                ss += v * v;
            }
            tnorm.data[static_cast<std::size_t>(i)] = static_cast<T>(std::sqrt(ss + 1e-24));
        }
        auto dot = rowwise_dot(constant(vt), student_logits);
        auto denom = max_scalar(mul(snorm, constant(std::move(tnorm))), 1e-12);
        auto cosj = mean(div(dot, denom));
        acc = acc ? add(acc, cosj) : cosj;
    }
    return scale(acc, -1.0);
}

// Soft-target cross-entropy against each teacher's distribution, summed over
// teachers.
template <typename T>
Var<T> tp_loss(const std::vector<Tensor<T>>& teacher_probs, const Var<T>& student_logits) {
    if (teacher_probs.empty()) throw ConfigError("tp loss: no teacher distributions");
    auto logp = log_softmax_lastdim(student_logits);
    Var<T> acc;
    for (const auto& p : teacher_probs) {
        if (p.shape != student_logits->value.shape)
            throw DataError("tp loss: teacher distribution shape " + p.shape_str() + " does not match student");
        auto term = soft_nll(logp, p);
        acc = acc ? add(acc, term) : term;
    }
    return acc;
}

struct TripletIndex {
    int anchor = 0;
    int positive = 0;
    int negative = 0;

    bool operator==(const TripletIndex&) const = default;
};

// Draw three distinct batch indices using exactly three rng draws: the second
// index is sampled over n-1 values and shifted past the first, the third over
// n-2 and shifted past both.
inline TripletIndex draw_triplet_indices(int n, Rng& rng) {
    const int r1 = static_cast<int>(rng.below(static_cast<uint64_t>(n)));
    int r2 = static_cast<int>(rng.below(static_cast<uint64_t>(n - 1)));
    if (r2 >= r1) ++r2;
    int r3 = static_cast<int>(rng.below(static_cast<uint64_t>(n - 2)));
    const int lo = std::min(r1, r2), hi = std::max(r1, r2);
    if (r3 >= lo) ++r3;
    if (r3 >= hi) ++r3;
    return {r1, r2, r3};
}

template <typename T>
double squared_euclidean(const Tensor<T>& h, int a, int b) {
    const int d = h.dim(1);
    double s = 0;
    for (int j = 0; j < d; ++j) {
        const double diff = static_cast<double>(h.at2(a, j)) - static_cast<double>(h.at2(b, j));
        s += diff * diff;
    }
    return s;
}

// Teacher vote on one drawn triplet. Every teacher compares the anchor's
// squared Euclidean distance to the two candidates in its own hidden space
// and votes; a strictly positive vote total means the second candidate sits
// closer than the first, so the positive/negative roles are swapped. Ties
// vote against swapping, and a zero total leaves the draw unchanged.
template <typename T>
TripletIndex orient_triplet(const std::vector<Tensor<T>>& teacher_pooled, TripletIndex t) {
    int flag = 0;
    for (const auto& h : teacher_pooled) {
        const double d12 = squared_euclidean(h, t.anchor, t.positive);
        const double d13 = squared_euclidean(h, t.anchor, t.negative);
        if (d12 > d13) ++flag;
        else --flag;
    }
    if (flag > 0) std::swap(t.positive, t.negative);
    return t;
}

// N voted triplets per batch; the emitted indices select rows of the
// student's pooled states.
template <typename T>
std::vector<TripletIndex> generate_triplets(const std::vector<Tensor<T>>& teacher_pooled, int n, Rng& rng) {
    if (n < 3) throw DataError("triplet generation needs a batch of at least 3 samples");
    if (teacher_pooled.empty()) throw ConfigError("triplet generation needs at least one teacher");
    for (const auto& h : teacher_pooled)
        if (h.ndim() != 2 || h.dim(0) != n) throw DataError("triplet generation: pooled states must be (n, d)");

    std::vector<TripletIndex> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) out.push_back(orient_triplet(teacher_pooled, draw_triplet_indices(n, rng)));
    return out;
}

// Mean triplet margin loss max(‖a-p‖ - ‖a-n‖ + margin, 0) over the student's
// pooled rows (p_norm fixed at 2 by LossConfig::validate).
template <typename T>
Var<T> rel_loss(const Var<T>& student_pooled, const std::vector<TripletIndex>& triplets, double margin) {
    if (triplets.empty()) throw DataError("triplet loss: no triplets");
    std::vector<int> ai, pi, ni;
    for (const auto& t : triplets) {
        ai.push_back(t.anchor);
        pi.push_back(t.positive);
        ni.push_back(t.negative);
    }
    auto a = rows(student_pooled, ai);
    auto dp = sub(a, rows(student_pooled, pi));
    auto dn = sub(a, rows(student_pooled, ni));
    auto dist_p = sqrt_eps(rowwise_dot(dp, dp), 1e-24);
    auto dist_n = sqrt_eps(rowwise_dot(dn, dn), 1e-24);
    return mean(max_scalar(add_scalar(sub(dist_p, dist_n), margin), 0.0));
}

// Everything one batch contributes to the objective. Teacher tensors are
// plain values (the ensemble is frozen); student tensors are graph nodes.
template <typename T>
struct LossInputs {
    std::vector<Tensor<T>> teacher_probs;
    std::vector<Tensor<T>> teacher_logits;
    Var<T> student_logits;
    Var<T> student_pooled;
    std::vector<int> targets;
    std::vector<TripletIndex> triplets;
};

// Unweighted sum of the enabled components. REL is silently skipped when the
// batch had fewer than 3 samples (no triplets could be drawn). The recorded
// total is the double-precision sum of the recorded component values.
template <typename T>
std::pair<Var<T>, LossBreakdown> total_loss(const LossInputs<T>& in, const LossConfig& cfg) {
    cfg.validate();
    LossBreakdown bd;
    Var<T> acc;
    auto take = [&acc, &bd](Var<T> component, std::optional<double>& slot, const char* name) {
        const double v = static_cast<double>(component->value.data[0]);
        if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name + " loss component");
        slot = v;
        bd.total += v;
        acc = acc ? add(acc, component) : component;
    };
    if (cfg.kd) take(kd_loss(in.teacher_probs, in.student_logits), bd.kd, "kd");
    if (cfg.sce) take(sce_loss(in.student_logits, in.targets), bd.sce, "sce");
    if (cfg.sim) take(sim_loss(in.teacher_logits, in.student_logits), bd.sim, "sim");
    if (cfg.rel && !in.triplets.empty()) take(rel_loss(in.student_pooled, in.triplets, cfg.margin), bd.rel, "rel");
    if (cfg.tp) take(tp_loss(in.teacher_probs, in.student_logits), bd.tp, "tp");
    if (!acc) throw ConfigError("loss config: no components produced a value for this batch");
    return {acc, bd};
}

} // namespace tridistill
