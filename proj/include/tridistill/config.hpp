#pragma once

#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tridistill/distill.hpp"
#include "tridistill/encoder.hpp"
#include "tridistill/losses.hpp"
#include "tridistill/optimizer.hpp"
#include "tridistill/teacher.hpp"

namespace tridistill {

// One flat key space for everything tunable from the command line or a config
// file. Defaults are the published fine-tuning settings; encoder shapes cover
// the teacher (n_*) and the student (student_*) separately so a resolved
// config is self-describing. Precedence is flags > file > defaults; the file
// loader rejects unknown keys by name so typos cannot silently fall back to a
// default.
struct RunConfig {
    double learning_rate = 5e-5;
    int batch_size = 32;
    double warmup_fraction = 0.10;
    int teacher_epochs = 3;
    int distill_max_epochs = 100;
    int patience = 10;
    double min_improvement = 1e-6;
    double weight_decay = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    double margin = 0.2;
    int p_norm = 2;
    double temperature = 1.0;
    std::string losses = "kd,sce,sim,rel";
    int max_tokens = 512;
    int vocab_min_freq = 1;
    int n_layers = 2;
    int n_heads = 4;
    int d_hidden = 128;
    int d_ff = 256;
    double dropout = 0.1;
    int student_layers = 1;
    int student_heads = 4;
    int student_d_hidden = 64;
    int student_d_ff = 128;
    double student_dropout = 0.1;

    AdamWConfig adamw() const {
        AdamWConfig a;
        a.beta1 = beta1;
        a.beta2 = beta2;
        a.eps = adam_epsilon;
        a.weight_decay = weight_decay;
        return a;
    }

    FitConfig fit() const {
        FitConfig f;
        f.epochs = teacher_epochs;
        f.batch_size = batch_size;
        f.peak_lr = learning_rate;
        f.warmup_fraction = warmup_fraction;
        f.adamw = adamw();
        f.vocab_min_freq = vocab_min_freq;
        return f;
    }

    DistillConfig distill() const {
        DistillConfig d;
        d.max_epochs = distill_max_epochs;
        d.patience = patience;
        d.batch_size = batch_size;
        d.peak_lr = learning_rate;
        d.warmup_fraction = warmup_fraction;
        d.min_improvement = min_improvement;
        d.adamw = adamw();
        d.vocab_min_freq = vocab_min_freq;
        return d;
    }

    LossConfig loss_config() const {
        LossConfig c = LossConfig::from_names(losses);
        c.margin = margin;
        c.p_norm = p_norm;
        c.temperature = temperature;
        c.validate();
        return c;
    }

    // vocab_size is a placeholder; training fills it from the corpus.
    EncoderConfig teacher_encoder() const {
        return {.n_layers = n_layers, .n_heads = n_heads, .d_hidden = d_hidden, .d_ff = d_ff,
                .dropout = dropout, .max_len = max_tokens, .vocab_size = 4};
    }

    EncoderConfig student_encoder() const {
        return {.n_layers = student_layers, .n_heads = student_heads, .d_hidden = student_d_hidden,
                .d_ff = student_d_ff, .dropout = student_dropout, .max_len = max_tokens, .vocab_size = 4};
    }

    nlohmann::json to_json() const {
        return {{"learning_rate", learning_rate},
                {"batch_size", batch_size},
                {"warmup_fraction", warmup_fraction},
                {"teacher_epochs", teacher_epochs},
                {"distill_max_epochs", distill_max_epochs},
                {"patience", patience},
                {"min_improvement", min_improvement},
                {"weight_decay", weight_decay},
                {"beta1", beta1},
                {"beta2", beta2},
                {"adam_epsilon", adam_epsilon},
                {"margin", margin},
                {"p_norm", p_norm},
                {"temperature", temperature},
                {"losses", losses},
                {"max_tokens", max_tokens},
                {"vocab_min_freq", vocab_min_freq},
                {"n_layers", n_layers},
                {"n_heads", n_heads},
                {"d_hidden", d_hidden},
                {"d_ff", d_ff},
                {"dropout", dropout},
                {"student_layers", student_layers},
                {"student_heads", student_heads},
                {"student_d_hidden", student_d_hidden},
                {"student_d_ff", student_d_ff},
                {"student_dropout", student_dropout}};
    }

    void set(const std::string& key, const nlohmann::json& value) {
        auto num = [&](double& field) {
            if (!value.is_number()) throw ConfigError("config key '" + key + "' expects a number");
            field = value.get<double>();
        };
        auto integer = [&](int& field) {
            if (!value.is_number_integer()) throw ConfigError("config key '" + key + "' expects an integer");
            field = value.get<int>();
        };
        if (key == "learning_rate") num(learning_rate);
        else if (key == "batch_size") integer(batch_size);
        else if (key == "warmup_fraction") num(warmup_fraction);
        else if (key == "teacher_epochs") integer(teacher_epochs);
        else if (key == "distill_max_epochs") integer(distill_max_epochs);
        else if (key == "patience") integer(patience);
        else if (key == "min_improvement") num(min_improvement);
        else if (key == "weight_decay") num(weight_decay);
        else if (key == "beta1") num(beta1);
        else if (key == "beta2") num(beta2);
        else if (key == "adam_epsilon") num(adam_epsilon);
        else if (key == "margin") num(margin);
        else if (key == "p_norm") integer(p_norm);
        else if (key == "temperature") num(temperature);
        else if (key == "losses") {
            if (!value.is_string()) throw ConfigError("config key 'losses' expects a string");
            losses = value.get<std::string>();
        } else if (key == "max_tokens") integer(max_tokens);
        else if (key == "vocab_min_freq") integer(vocab_min_freq);
        else if (key == "n_layers") integer(n_layers);
        else if (key == "n_heads") integer(n_heads);
        else if (key == "d_hidden") integer(d_hidden);
        else if (key == "d_ff") integer(d_ff);
        else if (key == "dropout") num(dropout);
        else if (key == "student_layers") integer(student_layers);
        else if (key == "student_heads") integer(student_heads);
        else if (key == "student_d_hidden") integer(student_d_hidden);
        else if (key == "student_d_ff") integer(student_d_ff);
        else if (key == "student_dropout") num(student_dropout);
        else throw ConfigError("config: unknown key '" + key + "'");
    }

    void apply_json(const nlohmann::json& j) {
        if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
        for (const auto& [key, value] : j.items()) set(key, value);
    }

    void apply_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config file " + path);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
        }
        apply_json(j);
    }
};

} // namespace tridistill
