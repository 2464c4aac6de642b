#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tridistill/autograd.hpp"
#include "tridistill/checkpoint.hpp"
#include "tridistill/common.hpp"
#include "tridistill/corpus.hpp"
#include "tridistill/encoder.hpp"
#include "tridistill/losses.hpp"
#include "tridistill/optimizer.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/teacher.hpp"
#include "tridistill/tensor.hpp"
#include "tridistill/vocab.hpp"

namespace tridistill {

struct DistillConfig {
    int max_epochs = 100;
    int patience = 10;
    int batch_size = 32;
    double peak_lr = 5e-5;
    double warmup_fraction = 0.10;
    double min_improvement = 1e-6;
    AdamWConfig adamw{};
    int vocab_min_freq = 1;

    void validate() const {
        if (max_epochs < 1) throw ConfigError("distill config: max_epochs must be >= 1");
        if (patience < 1) throw ConfigError("distill config: patience must be >= 1");
        if (batch_size < 1) throw ConfigError("distill config: batch size must be >= 1");
        if (peak_lr <= 0.0) throw ConfigError("distill config: learning rate must be positive");
        if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
            throw ConfigError("distill config: warmup fraction must be in [0,1]");
        if (min_improvement < 0.0) throw ConfigError("distill config: min improvement must be >= 0");
        if (vocab_min_freq < 1) throw ConfigError("distill config: vocab min_freq must be >= 1");
    }
};

// Patience counter over a monitored loss: an epoch counts as an improvement
// only when it beats the best seen by at least min_improvement.
class EarlyStopping {
public:
    EarlyStopping(int patience, double min_improvement)
        : patience_(patience), min_improvement_(min_improvement) {}

    // Returns true when this epoch improved on the best.
    bool update(double loss) {
        ++epoch_;
        if (loss < best_ - min_improvement_) {
            best_ = loss;
            best_epoch_ = epoch_;
            bad_epochs_ = 0;
            return true;
        }
        ++bad_epochs_;
        return false;
    }

    bool should_stop() const { return bad_epochs_ >= patience_; }
    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int epochs_seen() const { return epoch_; }

private:
    int patience_;
    double min_improvement_;
    double best_ = std::numeric_limits<double>::infinity();
    int best_epoch_ = 0;
    int bad_epochs_ = 0;
    int epoch_ = 0;
};

struct EpochRecord {
    int epoch = 0;
    std::string split;
    LossBreakdown breakdown;
};

inline nlohmann::json history_json(const EpochRecord& rec) {
    nlohmann::json j{{"epoch", rec.epoch}, {"split", rec.split}, {"total", rec.breakdown.total}};
    auto put = [&j](const char* key, const std::optional<double>& v) {
        if (v) j[key] = *v;
    };
    put("kd", rec.breakdown.kd);
    put("sce", rec.breakdown.sce);
    put("sim", rec.breakdown.sim);
    put("rel", rec.breakdown.rel);
    put("tp", rec.breakdown.tp);
    return j;
}

inline void write_history(const std::string& path, const std::vector<EpochRecord>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    for (const auto& rec : history) out << history_json(rec).dump() << "\n";
}

struct DistillResult {
    std::shared_ptr<Encoder<float>> student;
    Vocabulary vocab;
    std::vector<EpochRecord> history;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_dev_loss = 0.0;
    long long steps = 0;
};

namespace detail {

// Mean of each component over the batches where it was computed; total is the
// mean of per-batch totals over all batches.
struct BreakdownAccum {
    struct Slot {
        double sum = 0.0;
        int n = 0;
    };
    Slot kd, sce, sim, rel, tp;
    double total_sum = 0.0;
    int batches = 0;

    void add(const LossBreakdown& bd) {
        auto acc = [](Slot& s, const std::optional<double>& v) {
            if (v) {
                s.sum += *v;
                ++s.n;
            }
        };
        acc(kd, bd.kd);
        acc(sce, bd.sce);
        acc(sim, bd.sim);
        acc(rel, bd.rel);
        acc(tp, bd.tp);
        total_sum += bd.total;
        ++batches;
    }

    LossBreakdown mean() const {
        auto m = [](const Slot& s) {
            return s.n ? std::optional<double>(s.sum / s.n) : std::nullopt;
        };
        LossBreakdown bd;
        bd.kd = m(kd);
        bd.sce = m(sce);
        bd.sim = m(sim);
        bd.rel = m(rel);
        bd.tp = m(tp);
        bd.total = batches ? total_sum / batches : 0.0;
        return bd;
    }
};

inline bool rel_only(const LossConfig& cfg) { return cfg.rel && !cfg.kd && !cfg.sce && !cfg.sim && !cfg.tp; }

} // namespace detail

// One distillation epoch's worth of batches over a fixed sample subset in the
// given order. Returns per-epoch mean breakdown. When `opt` is null the pass
// is evaluation only: eval-mode forward, no optimizer step.
inline detail::BreakdownAccum distill_pass(Encoder<float>& student, const TeacherSignalCache& cache,
                                           const Corpus& corpus, const std::vector<SampleRef>& samples,
                                           const std::vector<int>& order, const Vocabulary& vocab, int max_len,
                                           Task task, const LossConfig& losses, int batch_size, Rng& rng,
                                           OptimizerState* opt, const LRSchedule* sched, const AdamWConfig* adamw) {
    detail::BreakdownAccum acc;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(batch_size));
        const std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                   order.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<SampleRef> refs;
        refs.reserve(idx.size());
        for (int i : idx) refs.push_back(samples[static_cast<std::size_t>(i)]);
        const EncodedBatch b = encode_samples(corpus, refs, vocab, max_len);
        const TeacherSignals sig = cache.assemble(idx);

        // Consumption order within a step: triplet draws first, then dropout.
        std::vector<TripletIndex> triplets;
        if (losses.rel && b.n >= 3) triplets = generate_triplets(sig.pooled, b.n, rng);
        if (detail::rel_only(losses) && triplets.empty()) continue;

        const auto out = opt ? student.forward(b, task, Mode::Train, &rng) : student.forward(b, task, Mode::Eval);
        auto tr = task_rows(out, b, task);
        LossInputs<float> in;
        in.teacher_probs = sig.probs;
        in.teacher_logits = sig.logits;
        in.student_logits = tr.logits;
        in.student_pooled = out.pooled;
        in.targets = std::move(tr.targets);
        in.triplets = std::move(triplets);

        std::pair<Var<float>, LossBreakdown> built = [&] {
            try {
                return total_loss(in, losses);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at optimizer step " +
                                   std::to_string((opt ? opt->step : 0) + 1));
            }
        }();
        acc.add(built.second);
        if (opt) {
            student.store.zero_grads();
            backward(built.first);
            adamw_step(student.store, *opt, *sched, *adamw);
        }
    }
    return acc;
}

// Multi-teacher distillation of one student on one task. Monitors mean total
// loss on the dev split with patience-based early stopping and returns the
// best-dev parameters.
inline DistillResult distill_student(EncoderConfig student_cfg, const TeacherEnsemble& ens, const Corpus& corpus,
                                     Task task, const LossConfig& losses, const DistillConfig& hp, uint64_t seed) {
    hp.validate();
    losses.validate();
    if (losses.rel && hp.batch_size < 3)
        throw ConfigError("relation loss needs batch size >= 3 to form triplets");
    if (!(corpus.catalog == ens.catalog()))
        throw DataError("distillation corpus catalog does not match the teachers' catalog");

    const auto train = collect_samples(corpus, "train");
    if (train.empty()) throw DataError("training needs a non-empty train split");
    const auto dev = collect_samples(corpus, "dev");
    if (dev.empty()) throw DataError("distillation early-stops on the dev split, which is empty");

    const Vocabulary vocab = build_vocabulary(corpus, hp.vocab_min_freq);
    const int max_len = std::min(student_cfg.max_len, ens.max_len());

    DistillResult res;
    res.vocab = vocab;
    student_cfg.vocab_size = vocab.size();
    Rng rng(seed);
    res.student = std::make_shared<Encoder<float>>(student_cfg, rng);
    res.student->add_head(task, task_class_count(corpus.catalog, task));

    const TeacherSignalCache train_cache(ens, corpus, train, task, losses.temperature, max_len, hp.batch_size);
    const TeacherSignalCache dev_cache(ens, corpus, dev, task, losses.temperature, max_len, hp.batch_size);

    const long long steps_per_epoch =
        static_cast<long long>((train.size() + static_cast<std::size_t>(hp.batch_size) - 1) /
                               static_cast<std::size_t>(hp.batch_size));
    const LRSchedule sched{hp.peak_lr, hp.warmup_fraction, steps_per_epoch * hp.max_epochs};
    OptimizerState opt;
    EarlyStopping stop(hp.patience, hp.min_improvement);

    std::vector<int> train_order(train.size());
    std::iota(train_order.begin(), train_order.end(), 0);
    std::vector<int> dev_order(dev.size());
    std::iota(dev_order.begin(), dev_order.end(), 0);

    std::vector<Tensor<float>> best_params;
    auto snapshot = [&] {
        best_params.clear();
        for (std::size_t i = 0; i < res.student->store.count(); ++i)
            best_params.push_back(res.student->store.at(i)->value);
    };

    // Independent fixed stream for dev-split triplets, copied fresh each
    // epoch so the monitored loss sees the same triplets every time.
    const Rng dev_base = Rng(seed).fork(0x6465762d6c6f7373ull);

    for (int epoch = 1; epoch <= hp.max_epochs; ++epoch) {
        shuffle(train_order, rng);
        const auto train_acc =
            distill_pass(*res.student, train_cache, corpus, train, train_order, vocab, max_len, task, losses,
                         hp.batch_size, rng, &opt, &sched, &hp.adamw);
        res.history.push_back({epoch, "train", train_acc.mean()});

        Rng dev_rng = dev_base;
        const auto dev_acc = distill_pass(*res.student, dev_cache, corpus, dev, dev_order, vocab, max_len, task,
                                          losses, hp.batch_size, dev_rng, nullptr, nullptr, nullptr);
        const auto dev_mean = dev_acc.mean();
        res.history.push_back({epoch, "dev", dev_mean});

        res.epochs_run = epoch;
        if (stop.update(dev_mean.total)) snapshot();
        if (stop.should_stop()) break;
    }

    if (best_params.empty()) snapshot();
    for (std::size_t i = 0; i < res.student->store.count(); ++i)
        res.student->store.at(i)->value = best_params[i];
    res.best_epoch = stop.best_epoch();
    res.best_dev_loss = stop.best();
    res.steps = opt.step;
    return res;
}

} // namespace tridistill
