#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tridistill/checkpoint.hpp"
#include "tridistill/common.hpp"
#include "tridistill/corpus.hpp"
#include "tridistill/encoder.hpp"
#include "tridistill/tensor.hpp"
#include "tridistill/vocab.hpp"

namespace tridistill {

inline double accuracy(const std::vector<int>& pred, const std::vector<int>& gold) {
    if (pred.size() != gold.size()) throw DataError("accuracy: prediction/gold length mismatch");
    if (pred.empty()) throw DataError("accuracy: empty inputs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i)
        if (pred[i] == gold[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

enum class F1Mode { AllClasses, ExcludeO };

inline std::string f1_mode_name(F1Mode m) { return m == F1Mode::AllClasses ? "all_classes" : "exclude_o"; }

inline F1Mode f1_mode_from_name(const std::string& s) {
    if (s == "all_classes" || s == "all-classes" || s == "all") return F1Mode::AllClasses;
    if (s == "exclude_o" || s == "exclude-o") return F1Mode::ExcludeO;
    throw ConfigError("unknown F1 mode '" + s + "' (expected all_classes or exclude_o)");
}

struct ClassTally {
    long long tp = 0;
    long long fp = 0;
    long long fn = 0;
};

// Pooled per-class confusion tallies over aligned prediction/gold pairs.
inline std::map<int, ClassTally> confusion_tallies(const std::vector<int>& pred, const std::vector<int>& gold) {
    if (pred.size() != gold.size()) throw DataError("tallies: prediction/gold length mismatch");
    std::map<int, ClassTally> out;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred[i] == gold[i]) {
            ++out[gold[i]].tp;
        } else {
            ++out[pred[i]].fp;
            ++out[gold[i]].fn;
        }
    }
    return out;
}

// Micro-averaged F1 = 2TP/(2TP+FP+FN) pooled over classes, optionally
// dropping one class's tallies (exclude-O). An empty pool scores 1.0:
// nothing was there to find and nothing was falsely found.
inline double micro_f1_from_tallies(const std::map<int, ClassTally>& tallies, std::optional<int> exclude = {}) {
    long long tp = 0, fp = 0, fn = 0;
    for (const auto& [cls, t] : tallies) {
        if (exclude && cls == *exclude) continue;
        tp += t.tp;
        fp += t.fp;
        fn += t.fn;
    }
    const long long denom = 2 * tp + fp + fn;
    if (denom == 0) return 1.0;
    return 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

// Token-level micro-F1 over scoreable positions of padded tag matrices.
// pred/gold are flat n*width arrays; mask marks the scoreable positions.
inline double token_micro_f1(const std::vector<int>& pred, const std::vector<int>& gold,
                             const std::vector<uint8_t>& mask, F1Mode mode, int o_id = 0) {
    if (pred.size() != gold.size() || pred.size() != mask.size())
        throw DataError("micro f1: prediction/gold/mask length mismatch");
    std::vector<int> p, g;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) {
            p.push_back(pred[i]);
            g.push_back(gold[i]);
        }
    if (p.empty()) throw DataError("micro f1: no scoreable positions");
    const auto tallies = confusion_tallies(p, g);
    return micro_f1_from_tallies(tallies, mode == F1Mode::ExcludeO ? std::optional<int>(o_id) : std::nullopt);
}

struct MetricReport {
    std::string task;
    std::string split;
    std::string metric;
    std::string mode = "none";
    double value = 0.0;
    long long n = 0;
    std::map<std::string, ClassTally> per_class;
    std::string checkpoint;
    std::string corpus;
    uint64_t seed = 0;

    // Recomputes the headline value from the stored tallies.
    double value_from_tallies(std::optional<std::string> o_label = {}) const {
        if (metric == "accuracy") {
            long long tp = 0;
            for (const auto& [label, t] : per_class) tp += t.tp;
            return n ? static_cast<double>(tp) / static_cast<double>(n) : 0.0;
        }
        long long tp = 0, fp = 0, fn = 0;
        for (const auto& [label, t] : per_class) {
            if (mode == "exclude_o" && o_label && label == *o_label) continue;
            tp += t.tp;
            fp += t.fp;
            fn += t.fn;
        }
        const long long denom = 2 * tp + fp + fn;
        return denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
    }

    nlohmann::json to_json() const {
        nlohmann::json pc = nlohmann::json::object();
        for (const auto& [label, t] : per_class)
            pc[label] = {{"tp", t.tp}, {"fp", t.fp}, {"fn", t.fn}};
        return {{"task", task},   {"split", split},       {"metric", metric}, {"mode", mode},
                {"value", value}, {"n", n},               {"per_class", pc},  {"checkpoint", checkpoint},
                {"corpus", corpus}, {"seed", seed}};
    }
};

inline std::vector<int> argmax_rows(const Tensor<float>& t) {
    const int k = t.dim(t.ndim() - 1);
    const std::size_t rows = t.size() / static_cast<std::size_t>(k);
    std::vector<int> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const float* p = t.data.data() + r * static_cast<std::size_t>(k);
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (p[c] > p[best]) best = c;
        out[r] = best;
    }
    return out;
}

struct EvalOptions {
    int batch_size = 32;
    F1Mode sf_mode = F1Mode::AllClasses;
    uint64_t seed = 0;
    std::string checkpoint_label;
    std::string corpus_label;
};

// Deterministic eval-mode scoring of one checkpoint on one split: accuracy
// for ID/DC, token micro-F1 for SF, with pooled per-class tallies.
inline MetricReport evaluate(const LoadedCheckpoint& model, const Corpus& corpus, const std::string& split,
                             Task task, const EvalOptions& opts = {}) {
    if (!(model.catalog == corpus.catalog))
        throw DataError("evaluation rejected: checkpoint catalog does not match the corpus catalog");
    if (opts.batch_size < 1) throw ConfigError("evaluation batch size must be >= 1");
    const auto samples = collect_samples(corpus, split);
    if (samples.empty()) throw DataError("evaluation split '" + split + "' is empty");

    std::vector<int> pred, gold;
    for (std::size_t begin = 0; begin < samples.size(); begin += static_cast<std::size_t>(opts.batch_size)) {
        const std::size_t end = std::min(samples.size(), begin + static_cast<std::size_t>(opts.batch_size));
        const std::vector<SampleRef> refs(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                          samples.begin() + static_cast<std::ptrdiff_t>(end));
        const EncodedBatch b = encode_samples(corpus, refs, model.vocab, model.cfg.max_len);
        const auto out = model.encoder->forward(b, task, Mode::Eval);
        const auto am = argmax_rows(out.logits->value);
        if (task == Task::SF) {
            for (int p : b.slot_positions()) {
                pred.push_back(am[static_cast<std::size_t>(p)]);
                gold.push_back(b.slot_targets[static_cast<std::size_t>(p)]);
            }
        } else {
            const auto& targets = task == Task::ID ? b.intent_targets : b.domain_targets;
            for (int i = 0; i < b.n; ++i) {
                pred.push_back(am[static_cast<std::size_t>(i)]);
                gold.push_back(targets[static_cast<std::size_t>(i)]);
            }
        }
    }

    const std::vector<std::string>& labels = task == Task::ID   ? corpus.catalog.intents
                                             : task == Task::SF ? corpus.catalog.slot_tags
                                                                : corpus.catalog.domains;
    MetricReport rep;
    rep.task = task_name(task);
    rep.split = split;
    rep.n = static_cast<long long>(pred.size());
    rep.checkpoint = opts.checkpoint_label;
    rep.corpus = opts.corpus_label;
    rep.seed = opts.seed;
    const auto tallies = confusion_tallies(pred, gold);
    for (std::size_t c = 0; c < labels.size(); ++c) {
        const auto it = tallies.find(static_cast<int>(c));
        rep.per_class[labels[c]] = it == tallies.end() ? ClassTally{} : it->second;
    }
    if (task == Task::SF) {
        rep.metric = "micro_f1";
        rep.mode = f1_mode_name(opts.sf_mode);
        const int o_id = corpus.catalog.slot_id("O");
        rep.value = micro_f1_from_tallies(tallies, opts.sf_mode == F1Mode::ExcludeO ? std::optional<int>(o_id)
                                                                                    : std::nullopt);
    } else {
        rep.metric = "accuracy";
        rep.mode = "none";
        rep.value = accuracy(pred, gold);
    }
    return rep;
}

} // namespace tridistill
