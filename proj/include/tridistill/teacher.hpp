#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
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
#include "tridistill/tensor.hpp"
#include "tridistill/vocab.hpp"

namespace tridistill {

struct FitConfig {
    int epochs = 3;
    int batch_size = 32;
    double peak_lr = 5e-5;
    double warmup_fraction = 0.10;
    AdamWConfig adamw{};
    int vocab_min_freq = 1;

    void validate() const {
        if (epochs < 1) throw ConfigError("training config: epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("training config: batch size must be >= 1");
        if (peak_lr <= 0.0) throw ConfigError("training config: learning rate must be positive");
        if (warmup_fraction < 0.0 || warmup_fraction > 1.0)
            throw ConfigError("training config: warmup fraction must be in [0,1]");
        if (vocab_min_freq < 1) throw ConfigError("training config: vocab min_freq must be >= 1");
    }
};

inline int task_class_count(const LabelCatalog& cat, Task task) {
    switch (task) {
        case Task::ID: return cat.k_id();
        case Task::SF: return cat.k_sf();
        case Task::DC: return cat.k_dc();
    }
    return 0;
}

// Logits restricted to supervised rows: whole batch for ID/DC, real non-CLS
// token rows for SF. Targets line up with the returned rows.
template <typename T>
struct TaskRows {
    Var<T> logits;
    std::vector<int> targets;
};

template <typename T>
TaskRows<T> task_rows(const ForwardOutput<T>& out, const EncodedBatch& batch, Task task) {
    if (task == Task::SF) {
        const int k = out.logits->value.dim(2);
        const auto pos = batch.slot_positions();
        std::vector<int> targets;
        targets.reserve(pos.size());
        for (int p : pos) targets.push_back(batch.slot_targets[static_cast<std::size_t>(p)]);
        return {rows(reshape(out.logits, {batch.n * batch.width, k}), pos), std::move(targets)};
    }
    return {out.logits, task == Task::ID ? batch.intent_targets : batch.domain_targets};
}

namespace detail {

inline std::vector<SampleRef> chunk_refs(const std::vector<SampleRef>& samples, const std::vector<int>& order,
                                         std::size_t begin, std::size_t end) {
    std::vector<SampleRef> out;
    out.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) out.push_back(samples[static_cast<std::size_t>(order[i])]);
    return out;
}

inline void write_epoch_log(const std::filesystem::path& path, const std::vector<double>& losses) {
    std::ofstream log(path, std::ios::trunc);
    if (!log) throw DataError("cannot write " + path.string());
    for (std::size_t i = 0; i < losses.size(); ++i)
        log << nlohmann::json{{"epoch", i + 1}, {"loss", losses[i]}}.dump() << "\n";
}

} // namespace detail

struct TeacherTrainResult {
    std::string checkpoint_dir;
    std::vector<double> epoch_losses;
    long long steps = 0;
};

// Cross-entropy fine-tuning on one task; the checkpoint written is the state
// after the final step of the last epoch, with no dev-based selection.
inline TeacherTrainResult finetune_teacher(const Corpus& corpus, Task task, EncoderConfig cfg,
                                           const FitConfig& fit, uint64_t seed, const std::string& out_dir) {
    fit.validate();
    const auto samples = collect_samples(corpus, "train");
    if (samples.empty()) throw DataError("training needs a non-empty train split");

    const Vocabulary vocab = build_vocabulary(corpus, fit.vocab_min_freq);
    cfg.vocab_size = vocab.size();
    Rng rng(seed);
    Encoder<float> enc(cfg, rng);
    enc.add_head(task, task_class_count(corpus.catalog, task));

    const long long steps_per_epoch =
        static_cast<long long>((samples.size() + static_cast<std::size_t>(fit.batch_size) - 1) /
                               static_cast<std::size_t>(fit.batch_size));
    const LRSchedule sched{fit.peak_lr, fit.warmup_fraction, steps_per_epoch * fit.epochs};
    OptimizerState opt;

    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> epoch_losses;
    for (int epoch = 1; epoch <= fit.epochs; ++epoch) {
        shuffle(order, rng);
        double sum = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(fit.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(fit.batch_size));
            const EncodedBatch b =
                encode_samples(corpus, detail::chunk_refs(samples, order, begin, end), vocab, cfg.max_len);
            auto tr = task_rows(enc.forward(b, task, Mode::Train, &rng), b, task);
            auto loss = sce_loss(tr.logits, tr.targets);
            const double v = loss->value.data[0];
            if (!std::isfinite(v))
                throw NumericError("non-finite training loss at optimizer step " + std::to_string(opt.step + 1));
            enc.store.zero_grads();
            backward(loss);
            adamw_step(enc.store, opt, sched, fit.adamw);
            sum += v;
            ++batches;
        }
        epoch_losses.push_back(sum / batches);
    }

    save_checkpoint(enc, corpus.catalog, vocab, out_dir, task);
    detail::write_epoch_log(std::filesystem::path(out_dir) / "train_log.jsonl", epoch_losses);
    return {out_dir, std::move(epoch_losses), opt.step};
}

struct ProbeTrainResult {
    std::vector<double> epoch_losses;
    long long steps = 0;
};

// Trains a linear head for `target` on top of a frozen checkpoint and writes
// the augmented checkpoint back in place. Backbone features are extracted once
// in eval mode, so backbone parameters stay bit-identical.
inline ProbeTrainResult train_probe_heads(const std::string& ckpt_dir, const Corpus& corpus, Task target,
                                          const FitConfig& fit, uint64_t seed) {
    fit.validate();
    LoadedCheckpoint lc = load_checkpoint(ckpt_dir);
    if (lc.own_task && *lc.own_task == target)
        throw ConfigError("probe training for task " + task_name(target) +
                          " rejected: the fine-tuned head is authoritative");
    if (lc.encoder->has_head(target))
        throw ConfigError("probe training: checkpoint already has a head for task " + task_name(target));
    if (!(corpus.catalog == lc.catalog))
        throw DataError("probe training: corpus catalog does not match the checkpoint catalog");

    const auto samples = collect_samples(corpus, "train");
    if (samples.empty()) throw DataError("training needs a non-empty train split");

    // Per-sample frozen features: pooled CLS vector for ID/DC, real non-CLS
    // token states for SF.
    const int d = lc.cfg.d_hidden;
    std::vector<Tensor<float>> feats(samples.size());
    std::vector<std::vector<int>> targets(samples.size());
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(fit.batch_size)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(fit.batch_size));
        const std::vector<SampleRef> refs(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                          samples.begin() + static_cast<std::ptrdiff_t>(end));
        const EncodedBatch b = encode_samples(corpus, refs, lc.vocab, lc.cfg.max_len);
        const auto out = lc.encoder->encode(b, Mode::Eval);
        for (int i = 0; i < b.n; ++i) {
            const std::size_t s = begin + static_cast<std::size_t>(i);
            if (target == Task::SF) {
                std::vector<int> rows_i;
                for (int j = 1; j < b.width; ++j)
                    if (b.real_at(i, j)) {
                        rows_i.push_back(i * b.width + j);
                        targets[s].push_back(b.slot_at(i, j));
                    }
                Tensor<float> f({static_cast<int>(rows_i.size()), d});
                for (std::size_t r = 0; r < rows_i.size(); ++r)
                    for (int c = 0; c < d; ++c)
                        f.at2(static_cast<int>(r), c) =
                            out.hidden->value.data[static_cast<std::size_t>(rows_i[r]) * d + c];
                feats[s] = std::move(f);
            } else {
                Tensor<float> f({1, d});
                for (int c = 0; c < d; ++c) f.at2(0, c) = out.pooled->value.at2(i, c);
                feats[s] = std::move(f);
                targets[s].push_back(target == Task::ID ? b.intent_targets[static_cast<std::size_t>(i)]
                                                        : b.domain_targets[static_cast<std::size_t>(i)]);
            }
        }
    }

    lc.encoder->store.freeze();
    Rng rng(seed);
    auto head = lc.encoder->add_head(target, task_class_count(corpus.catalog, target));

    const long long steps_per_epoch =
        static_cast<long long>((samples.size() + static_cast<std::size_t>(fit.batch_size) - 1) /
                               static_cast<std::size_t>(fit.batch_size));
    const LRSchedule sched{fit.peak_lr, fit.warmup_fraction, steps_per_epoch * fit.epochs};
    OptimizerState opt;

    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> epoch_losses;
    for (int epoch = 1; epoch <= fit.epochs; ++epoch) {
        shuffle(order, rng);
        double sum = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(fit.batch_size)) {
            const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(fit.batch_size));
            int total_rows = 0;
            for (std::size_t i = begin; i < end; ++i)
                total_rows += feats[static_cast<std::size_t>(order[i])].dim(0);
            Tensor<float> x({total_rows, d});
            std::vector<int> y;
            y.reserve(static_cast<std::size_t>(total_rows));
            int at = 0;
            for (std::size_t i = begin; i < end; ++i) {
                const auto& f = feats[static_cast<std::size_t>(order[i])];
                std::copy(f.data.begin(), f.data.end(), x.data.begin() + static_cast<std::ptrdiff_t>(at) * d);
                at += f.dim(0);
                const auto& t = targets[static_cast<std::size_t>(order[i])];
                y.insert(y.end(), t.begin(), t.end());
            }
            auto logits = add_rowvec(matmul_nt(constant(std::move(x)), head.weight), head.bias);
            auto loss = sce_loss(logits, y);
            const double v = loss->value.data[0];
            if (!std::isfinite(v))
                throw NumericError("non-finite training loss at optimizer step " + std::to_string(opt.step + 1));
            lc.encoder->store.zero_grads();
            backward(loss);
            adamw_step(lc.encoder->store, opt, sched, fit.adamw);
            sum += v;
            ++batches;
        }
        epoch_losses.push_back(sum / batches);
    }

    save_checkpoint(*lc.encoder, lc.catalog, lc.vocab, ckpt_dir, lc.own_task);
    detail::write_epoch_log(std::filesystem::path(ckpt_dir) / ("probe_log." + task_name(target) + ".jsonl"),
                            epoch_losses);
    return {std::move(epoch_losses), opt.step};
}

struct LoadedTeacher {
    std::string dir;
    Task own_task = Task::ID;
    LoadedCheckpoint ckpt;
};

// Frozen, read-only teacher set. Members must cover distinct tasks and share
// one vocabulary and label catalog so their signals live in the same space as
// the student's inputs and targets.
class TeacherEnsemble {
public:
    static TeacherEnsemble load(const std::vector<std::string>& dirs) {
        if (dirs.empty() || dirs.size() > 3)
            throw ConfigError("teacher ensemble needs between 1 and 3 checkpoints, got " +
                              std::to_string(dirs.size()));
        TeacherEnsemble e;
        for (const auto& dir : dirs) {
            LoadedCheckpoint lc = load_checkpoint(dir);
            if (!lc.own_task)
                throw ConfigError("checkpoint " + dir + " does not record which task it was fine-tuned on");
            lc.encoder->store.freeze();
            e.teachers_.push_back({dir, *lc.own_task, std::move(lc)});
        }
        for (std::size_t a = 0; a < e.teachers_.size(); ++a)
            for (std::size_t b = a + 1; b < e.teachers_.size(); ++b) {
                if (e.teachers_[a].own_task == e.teachers_[b].own_task)
                    throw ConfigError("teacher ensemble has two teachers for task " +
                                      task_name(e.teachers_[a].own_task));
                if (e.teachers_[a].ckpt.vocab.ordered_words() != e.teachers_[b].ckpt.vocab.ordered_words())
                    throw ConfigError("teacher checkpoints disagree on vocabulary; all teachers must be trained "
                                      "on the same corpus");
                if (!(e.teachers_[a].ckpt.catalog == e.teachers_[b].ckpt.catalog))
                    throw ConfigError("teacher checkpoints disagree on the label catalog");
            }
        return e;
    }

    int n_teachers() const { return static_cast<int>(teachers_.size()); }
    const LoadedTeacher& at(int j) const { return teachers_[static_cast<std::size_t>(j)]; }
    const Vocabulary& vocab() const { return teachers_.front().ckpt.vocab; }
    const LabelCatalog& catalog() const { return teachers_.front().ckpt.catalog; }
    int max_len() const {
        int m = teachers_.front().ckpt.cfg.max_len;
        for (const auto& t : teachers_) m = std::min(m, t.ckpt.cfg.max_len);
        return m;
    }

private:
    std::vector<LoadedTeacher> teachers_;
};

// Per-teacher eval-mode outputs for one batch: raw logits, tempered softmax
// probabilities, and pooled CLS states. Logits/probs are (N,k) for ID/DC and
// (N,L,k) for SF; pooled is (N,d_j) and may differ in width across teachers.
struct TeacherSignals {
    std::vector<Tensor<float>> logits;
    std::vector<Tensor<float>> probs;
    std::vector<Tensor<float>> pooled;

    int n_teachers() const { return static_cast<int>(logits.size()); }
};

// Row softmax over the last axis of v/tau, accumulated in double.
inline Tensor<float> softmax_rows(const Tensor<float>& v, double tau) {
    const int k = v.dim(v.ndim() - 1);
    const std::size_t rows = v.size() / static_cast<std::size_t>(k);
    Tensor<float> p(v.shape);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* in = v.data.data() + r * static_cast<std::size_t>(k);
        float* out = p.data.data() + r * static_cast<std::size_t>(k);
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < k; ++c) m = std::max(m, static_cast<double>(in[c]) / tau);
        double sum = 0.0;
        for (int c = 0; c < k; ++c) sum += std::exp(static_cast<double>(in[c]) / tau - m);
        for (int c = 0; c < k; ++c)
            out[c] = static_cast<float>(std::exp(static_cast<double>(in[c]) / tau - m) / sum);
    }
    return p;
}

inline TeacherSignals teacher_signals(const TeacherEnsemble& ens, const EncodedBatch& batch, Task task,
                                      double tau = 1.0) {
    if (tau <= 0.0) throw ConfigError("temperature must be positive");
    TeacherSignals s;
    for (int j = 0; j < ens.n_teachers(); ++j) {
        const auto out = ens.at(j).ckpt.encoder->forward(batch, task, Mode::Eval);
        s.logits.push_back(out.logits->value);
        s.probs.push_back(softmax_rows(out.logits->value, tau));
        s.pooled.push_back(out.pooled->value);
    }
    return s;
}

// Gathers the supervised rows of a full-shape signal: identity for ID/DC,
// real non-CLS token rows for SF.
inline Tensor<float> signal_rows(const Tensor<float>& t, const EncodedBatch& batch, Task task) {
    if (task != Task::SF) return t;
    const int k = t.dim(2);
    const auto pos = batch.slot_positions();
    Tensor<float> out({static_cast<int>(pos.size()), k});
    for (std::size_t r = 0; r < pos.size(); ++r)
        for (int c = 0; c < k; ++c)
            out.at2(static_cast<int>(r), c) = t.data[static_cast<std::size_t>(pos[r]) * k + c];
    return out;
}

// Restricts full-shape TeacherSignals to supervised rows, the form the loss
// builders consume: logits/probs (R,k), pooled (N,d_j).
inline TeacherSignals signal_rows(const TeacherSignals& s, const EncodedBatch& batch, Task task) {
    TeacherSignals out;
    for (int j = 0; j < s.n_teachers(); ++j) {
        out.logits.push_back(signal_rows(s.logits[static_cast<std::size_t>(j)], batch, task));
        out.probs.push_back(signal_rows(s.probs[static_cast<std::size_t>(j)], batch, task));
        out.pooled.push_back(s.pooled[static_cast<std::size_t>(j)]);
    }
    return out;
}

// Teachers are frozen, so their signals per sample never change across epochs.
// This cache computes them once (chunked, eval mode) and reassembles row-form
// signals for any batch composition; eval-mode padding invariance makes the
// assembled values equal to a direct per-batch computation.
class TeacherSignalCache {
public:
    // max_len is the effective truncation shared with the student so that SF
    // row counts line up; it may not exceed any teacher's own max_len.
    TeacherSignalCache(const TeacherEnsemble& ens, const Corpus& corpus, const std::vector<SampleRef>& samples,
                       Task task, double tau, int max_len, int chunk = 32)
        : task_(task), nt_(ens.n_teachers()) {
        if (chunk < 1) throw ConfigError("signal cache chunk size must be >= 1");
        if (max_len < 2 || max_len > ens.max_len())
            throw ConfigError("signal cache max_len must be in [2, ensemble max_len]");
        logits_.resize(static_cast<std::size_t>(nt_));
        probs_.resize(static_cast<std::size_t>(nt_));
        pooled_.resize(static_cast<std::size_t>(nt_));
        for (int j = 0; j < nt_; ++j) {
            logits_[static_cast<std::size_t>(j)].resize(samples.size());
            probs_[static_cast<std::size_t>(j)].resize(samples.size());
            pooled_[static_cast<std::size_t>(j)].resize(samples.size());
        }
        rows_.resize(samples.size());

        for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(chunk)) {
            const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(chunk));
            const std::vector<SampleRef> refs(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                              samples.begin() + static_cast<std::ptrdiff_t>(end));
            const EncodedBatch b = encode_samples(corpus, refs, ens.vocab(), max_len);
            const TeacherSignals sig = teacher_signals(ens, b, task, tau);
            for (int i = 0; i < b.n; ++i) {
                const std::size_t s = begin + static_cast<std::size_t>(i);
                std::vector<int> pos;
                if (task == Task::SF) {
                    for (int j = 1; j < b.width; ++j)
                        if (b.real_at(i, j)) pos.push_back(i * b.width + j);
                    rows_[s] = static_cast<int>(pos.size());
                } else {
                    pos.push_back(i);
                    rows_[s] = 1;
                }
                for (int j = 0; j < nt_; ++j) {
                    const auto& lg = sig.logits[static_cast<std::size_t>(j)];
                    const auto& pb = sig.probs[static_cast<std::size_t>(j)];
                    const int k = lg.dim(lg.ndim() - 1);
                    Tensor<float> lrow({static_cast<int>(pos.size()), k});
                    Tensor<float> prow({static_cast<int>(pos.size()), k});
                    for (std::size_t r = 0; r < pos.size(); ++r)
                        for (int c = 0; c < k; ++c) {
                            lrow.at2(static_cast<int>(r), c) = lg.data[static_cast<std::size_t>(pos[r]) * k + c];
                            prow.at2(static_cast<int>(r), c) = pb.data[static_cast<std::size_t>(pos[r]) * k + c];
                        }
                    const auto& pl = sig.pooled[static_cast<std::size_t>(j)];
                    const int dj = pl.dim(1);
                    Tensor<float> poolrow({dj});
                    for (int c = 0; c < dj; ++c) poolrow.data[static_cast<std::size_t>(c)] = pl.at2(i, c);
                    logits_[static_cast<std::size_t>(j)][s] = std::move(lrow);
                    probs_[static_cast<std::size_t>(j)][s] = std::move(prow);
                    pooled_[static_cast<std::size_t>(j)][s] = std::move(poolrow);
                }
            }
        }
    }

    int n_teachers() const { return nt_; }
    int rows_of(int sample) const { return rows_[static_cast<std::size_t>(sample)]; }

    // Row-form signals for the given sample subset, rows concatenated in
    // subset order (matching EncodedBatch::slot_positions order for SF).
    TeacherSignals assemble(const std::vector<int>& sample_indices) const {
        if (sample_indices.empty()) throw DataError("signal cache: empty sample subset");
        int total = 0;
        for (int s : sample_indices) total += rows_[static_cast<std::size_t>(s)];
        TeacherSignals out;
        for (int j = 0; j < nt_; ++j) {
            const auto& lj = logits_[static_cast<std::size_t>(j)];
            const auto& pj = probs_[static_cast<std::size_t>(j)];
            const auto& hj = pooled_[static_cast<std::size_t>(j)];
            const int k = lj[static_cast<std::size_t>(sample_indices.front())].dim(1);
            const int dj = static_cast<int>(hj[static_cast<std::size_t>(sample_indices.front())].size());
            Tensor<float> lg({total, k});
            Tensor<float> pb({total, k});
            Tensor<float> pl({static_cast<int>(sample_indices.size()), dj});
            int at = 0;
            for (std::size_t i = 0; i < sample_indices.size(); ++i) {
                const std::size_t s = static_cast<std::size_t>(sample_indices[i]);
                std::copy(lj[s].data.begin(), lj[s].data.end(),
                          lg.data.begin() + static_cast<std::ptrdiff_t>(at) * k);
                std::copy(pj[s].data.begin(), pj[s].data.end(),
                          pb.data.begin() + static_cast<std::ptrdiff_t>(at) * k);
                std::copy(hj[s].data.begin(), hj[s].data.end(),
                          pl.data.begin() + static_cast<std::ptrdiff_t>(static_cast<int>(i)) * dj);
                at += lj[s].dim(0);
            }
            out.logits.push_back(std::move(lg));
            out.probs.push_back(std::move(pb));
            out.pooled.push_back(std::move(pl));
        }
        return out;
    }

private:
    Task task_;
    int nt_ = 0;
    std::vector<int> rows_;
    std::vector<std::vector<Tensor<float>>> logits_;
    std::vector<std::vector<Tensor<float>>> probs_;
    std::vector<std::vector<Tensor<float>>> pooled_;
};

} // namespace tridistill
