#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tridistill/autograd.hpp"
#include "tridistill/common.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/tensor.hpp"
#include "tridistill/vocab.hpp"

namespace tridistill {

enum class Task { ID, SF, DC };

inline std::string task_name(Task t) {
    switch (t) {
        case Task::ID: return "ID";
        case Task::SF: return "SF";
        case Task::DC: return "DC";
    }
    return "?";
}

inline Task task_from_name(const std::string& s) {
    if (s == "ID" || s == "id") return Task::ID;
    if (s == "SF" || s == "sf") return Task::SF;
    if (s == "DC" || s == "dc") return Task::DC;
    throw ConfigError("unknown task '" + s + "' (expected id, sf or dc)");
}

enum class Mode { Train, Eval };

struct EncoderConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_hidden = 128;
    int d_ff = 256;
    double dropout = 0.1;
    int max_len = 512;
    int vocab_size = 3;

    void validate() const {
        if (n_layers < 1 || n_heads < 1 || d_hidden < 1 || d_ff < 1 || max_len < 1 || vocab_size < 1)
            throw ConfigError("encoder config: all counts must be >= 1");
        if (d_hidden % n_heads != 0) throw ConfigError("encoder config: d_hidden must be divisible by n_heads");
        if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("encoder config: dropout must be in [0,1)");
    }

    bool operator==(const EncoderConfig&) const = default;
};

// Named parameter registry. Registration order is the serialization order, so
// construction sequence fully determines the checkpoint layout.
template <typename T>
class ParameterStore {
public:
    Var<T> add(const std::string& name, Tensor<T> init) {
        if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
        auto v = parameter(std::move(init));
        index_[name] = order_.size();
        order_.push_back(name);
        vars_.push_back(v);
        return v;
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Var<T>& get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        return vars_[it->second];
    }

    const std::vector<std::string>& names() const { return order_; }
    std::size_t count() const { return order_.size(); }
    const Var<T>& at(std::size_t i) const { return vars_[i]; }

    std::size_t total_elements() const {
        std::size_t n = 0;
        for (const auto& v : vars_) n += v->value.size();
        return n;
    }

    void zero_grads() {
        for (auto& v : vars_) v->zero_grad();
    }

    void freeze() {
        for (auto& v : vars_) v->needs_grad = false;
    }

    void set_trainable(const std::string& name, bool trainable) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
        vars_[it->second]->needs_grad = trainable;
    }

    uint64_t content_hash() const {
        uint64_t h = fnv1a(nullptr, 0);
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            h = fnv1a(order_[i].data(), order_[i].size(), h);
            h = fnv1a(vars_[i]->value.data.data(), vars_[i]->value.size() * sizeof(T), h);
        }
        return h;
    }

    uint64_t backbone_hash() const {
        uint64_t h = fnv1a(nullptr, 0);
        for (std::size_t i = 0; i < vars_.size(); ++i) {
            if (order_[i].rfind("head.", 0) == 0) continue;
            h = fnv1a(order_[i].data(), order_[i].size(), h);
            h = fnv1a(vars_[i]->value.data.data(), vars_[i]->value.size() * sizeof(T), h);
        }
        return h;
    }

private:
    std::vector<std::string> order_;
    std::vector<Var<T>> vars_;
    std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
struct TaskHead {
    Task task = Task::ID;
    Var<T> weight;
    Var<T> bias;

    int k() const { return weight->value.dim(0); }
};

template <typename T>
struct ForwardOutput {
    Var<T> hidden;
    Var<T> pooled;
    Var<T> logits;
};

// Vanilla post-norm transformer encoder with learned position embeddings and
// a CLS-pooled representation. Train-mode dropout consumes the rng in a fixed
// order: embeddings, then per layer attention probs, attention output, FFN
// output.
template <typename T>
class Encoder {
public:
    EncoderConfig cfg;
    ParameterStore<T> store;

    Encoder(EncoderConfig c, Rng& init_rng) : cfg(c) {
        cfg.validate();
        const int d = cfg.d_hidden;
        auto w = [&](std::vector<int> shape) { return Tensor<T>::truncated_normal(std::move(shape), 0.02, init_rng); };
        store.add("embedding.token", w({cfg.vocab_size, d}));
        store.add("embedding.position", w({cfg.max_len, d}));
        store.add("embedding.norm.gain", Tensor<T>::full({d}, T(1)));
        store.add("embedding.norm.bias", Tensor<T>::zeros({d}));
        for (int i = 0; i < cfg.n_layers; ++i) {
            const std::string p = "layer." + std::to_string(i) + ".";
            for (const char* m : {"wq", "wk", "wv", "wo"}) {
                store.add(p + "attn." + m, w({d, d}));
                store.add(p + "attn.b" + std::string(m + 1), Tensor<T>::zeros({d}));
            }
            store.add(p + "attn.norm.gain", Tensor<T>::full({d}, T(1)));
            store.add(p + "attn.norm.bias", Tensor<T>::zeros({d}));
            store.add(p + "ffn.w1", w({cfg.d_ff, d}));
            store.add(p + "ffn.b1", Tensor<T>::zeros({cfg.d_ff}));
            store.add(p + "ffn.w2", w({d, cfg.d_ff}));
            store.add(p + "ffn.b2", Tensor<T>::zeros({d}));
            store.add(p + "ffn.norm.gain", Tensor<T>::full({d}, T(1)));
            store.add(p + "ffn.norm.bias", Tensor<T>::zeros({d}));
        }
    }

    // Heads start at zero so untrained logits carry no random preference;
    // whatever signal the first optimizer steps write decides the argmax.
    TaskHead<T> add_head(Task task, int k) {
        if (k < 1) throw ConfigError("task head: class count must be >= 1");
        const std::string p = "head." + task_name(task) + ".";
        TaskHead<T> h;
        h.task = task;
        h.weight = store.add(p + "weight", Tensor<T>::zeros({k, cfg.d_hidden}));
        h.bias = store.add(p + "bias", Tensor<T>::zeros({k}));
        return h;
    }

    bool has_head(Task task) const { return store.has("head." + task_name(task) + ".weight"); }

    TaskHead<T> head(Task task) const {
        const std::string p = "head." + task_name(task) + ".";
        if (!store.has(p + "weight")) throw ConfigError("checkpoint has no head for task " + task_name(task));
        return {task, store.get(p + "weight"), store.get(p + "bias")};
    }

    // Backbone only: hidden states and CLS pooling, no task head applied.
    ForwardOutput<T> encode(const EncodedBatch& batch, Mode mode, Rng* rng = nullptr) const {
        const int n = batch.n, l = batch.width, d = cfg.d_hidden, h = cfg.n_heads, dh = d / h;
        if (l > cfg.max_len) throw DataError("batch width " + std::to_string(l) + " exceeds max_len");
        for (int id : batch.token_ids)
            if (id < 0 || id >= cfg.vocab_size) throw DataError("batch token id out of vocabulary range");
        const bool training = mode == Mode::Train && cfg.dropout > 0.0;
        if (training && rng == nullptr) throw ConfigError("train-mode forward needs an rng");

        std::vector<int> flat_ids(batch.token_ids.begin(), batch.token_ids.end());
        std::vector<int> flat_pos(static_cast<std::size_t>(n) * l);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < l; ++j) flat_pos[static_cast<std::size_t>(i) * l + j] = j;

        auto x = add(rows(store.get("embedding.token"), flat_ids), rows(store.get("embedding.position"), flat_pos));
        x = layer_norm(x, store.get("embedding.norm.gain"), store.get("embedding.norm.bias"));
        if (training) x = dropout(x, cfg.dropout, *rng);

        Tensor<T> maskadd({n * h, l, l});
        for (int i = 0; i < n; ++i)
            for (int q = 0; q < h; ++q)
                for (int r = 0; r < l; ++r)
                    for (int j = 0; j < l; ++j)
                        maskadd.at3(i * h + q, r, j) = batch.real_at(i, j) ? T(0) : T(-1e9);
        auto mask_const = constant(std::move(maskadd));

        for (int i = 0; i < cfg.n_layers; ++i) {
            const std::string p = "layer." + std::to_string(i) + ".";
            auto proj = [&](const char* m, const Var<T>& in) {
                return add_rowvec(matmul_nt(in, store.get(p + "attn.w" + std::string(m))),
                                  store.get(p + "attn.b" + std::string(m)));
            };
            auto split = [&](const Var<T>& v) {
                return reshape(transpose_0213(reshape(v, {n, l, h, dh})), {n * h, l, dh});
            };
            auto q = split(proj("q", x));
            auto k = split(proj("k", x));
            auto v = split(proj("v", x));
            auto scores = add(scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh))), mask_const);
            auto probs = softmax_lastdim(scores);
            if (training) probs = dropout(probs, cfg.dropout, *rng);
            auto ctx = reshape(transpose_0213(reshape(bmm(probs, v), {n, h, l, dh})), {n * l, d});
            auto attn_out = add_rowvec(matmul_nt(ctx, store.get(p + "attn.wo")), store.get(p + "attn.bo"));
            if (training) attn_out = dropout(attn_out, cfg.dropout, *rng);
            x = layer_norm(add(x, attn_out), store.get(p + "attn.norm.gain"), store.get(p + "attn.norm.bias"));

            auto ff = add_rowvec(matmul_nt(gelu(add_rowvec(matmul_nt(x, store.get(p + "ffn.w1")),
                                                           store.get(p + "ffn.b1"))),
                                           store.get(p + "ffn.w2")),
                                 store.get(p + "ffn.b2"));
            if (training) ff = dropout(ff, cfg.dropout, *rng);
            x = layer_norm(add(x, ff), store.get(p + "ffn.norm.gain"), store.get(p + "ffn.norm.bias"));
        }

        ForwardOutput<T> out;
        out.hidden = reshape(x, {n, l, d});
        std::vector<int> cls(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) cls[static_cast<std::size_t>(i)] = i * l;
        out.pooled = rows(x, cls);
        return out;
    }

    ForwardOutput<T> forward(const EncodedBatch& batch, Task task, Mode mode, Rng* rng = nullptr) const {
        ForwardOutput<T> out = encode(batch, mode, rng);
        const int n = batch.n, l = batch.width;
        const TaskHead<T> th = head(task);
        if (task == Task::SF) {
            auto flat = reshape(out.hidden, {n * l, cfg.d_hidden});
            out.logits = reshape(add_rowvec(matmul_nt(flat, th.weight), th.bias), {n, l, th.k()});
        } else {
            out.logits = add_rowvec(matmul_nt(out.pooled, th.weight), th.bias);
        }
        return out;
    }
};

} // namespace tridistill
