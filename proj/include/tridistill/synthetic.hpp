#pragma once

#include <string>
#include <vector>

#include "tridistill/common.hpp"
#include "tridistill/corpus.hpp"
#include "tridistill/rng.hpp"

namespace tridistill {

struct GeneratorSpec {
    int n_dialogues = 40;
    int n_domains = 2;
    int intents_per_domain = 2;
    int slot_tags_per_domain = 2;
    int turns_min = 1;
    int turns_max = 4;
    uint64_t seed = 1;

    void validate() const {
        if (n_dialogues < 1 || n_domains < 1 || intents_per_domain < 1 || slot_tags_per_domain < 1 ||
            turns_min < 1)
            throw ConfigError("generator: all counts must be >= 1");
        if (turns_max < turns_min) throw ConfigError("generator: turns_max < turns_min");
    }
};

// Templated pseudo-language with disjoint per-domain vocabulary so that all
// three tasks are solvable from surface forms: every token except fillers
// encodes its domain, intent phrases are unique per intent, and slot values
// draw from pools used only under their own B/I tag. Dialogues are generated
// first, then split 80/10/10 by a final shuffle; both stages consume the one
// seeded stream, so equal seeds give byte-identical corpora.
inline Corpus generate_synthetic(const GeneratorSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);

    Corpus c;
    for (int d = 0; d < spec.n_domains; ++d) c.catalog.domains.push_back("domain" + std::to_string(d));
    for (int d = 0; d < spec.n_domains; ++d)
        for (int j = 0; j < spec.intents_per_domain; ++j)
            c.catalog.intents.push_back("d" + std::to_string(d) + ".intent" + std::to_string(j));
    c.catalog.slot_tags.push_back("O");
    for (int d = 0; d < spec.n_domains; ++d)
        for (int t = 0; t < spec.slot_tags_per_domain; ++t) {
            const std::string name = "d" + std::to_string(d) + ".slot" + std::to_string(t);
            c.catalog.slot_tags.push_back("B-" + name);
            c.catalog.slot_tags.push_back("I-" + name);
        }

    const std::vector<std::string> fillers = {"please", "the", "a", "now", "and", "ok"};
    auto domain_word = [](int d, uint64_t k) { return "dw" + std::to_string(d) + "_" + std::to_string(k); };
    auto slot_b_word = [](int d, int t, uint64_t k) {
        return "bv" + std::to_string(d) + "_" + std::to_string(t) + "_" + std::to_string(k);
    };
    auto slot_i_word = [](int d, int t, uint64_t k) {
        return "iv" + std::to_string(d) + "_" + std::to_string(t) + "_" + std::to_string(k);
    };

    const int o_id = c.catalog.slot_id("O");
    for (int di = 0; di < spec.n_dialogues; ++di) {
        Dialogue dia;
        dia.id = "syn" + std::to_string(spec.seed) + "-" + std::to_string(di);
        dia.source = "synthetic";
        dia.domain_id = di % spec.n_domains;
        const int d = dia.domain_id;
        const int n_turns =
            spec.turns_min + static_cast<int>(rng.below(static_cast<uint64_t>(spec.turns_max - spec.turns_min + 1)));
        for (int ti = 0; ti < n_turns; ++ti) {
            Turn turn;
            const int j = static_cast<int>(rng.below(static_cast<uint64_t>(spec.intents_per_domain)));
            turn.intent_id = d * spec.intents_per_domain + j;

            auto push = [&](std::string tok, int tag) {
                turn.tokens.push_back(std::move(tok));
                turn.slot_tag_ids.push_back(tag);
            };
            push(domain_word(d, rng.below(4)), o_id);
            const std::string iw = "iw" + std::to_string(d) + "_" + std::to_string(j);
            push(iw + "a", o_id);
            push(iw + "b", o_id);
            const int n_fill = static_cast<int>(rng.below(3));
            for (int f = 0; f < n_fill; ++f) push(fillers[rng.below(fillers.size())], o_id);
            const int n_spans = static_cast<int>(rng.below(3));
            for (int s = 0; s < n_spans; ++s) {
                const int t = static_cast<int>(rng.below(static_cast<uint64_t>(spec.slot_tags_per_domain)));
                const std::string name = "d" + std::to_string(d) + ".slot" + std::to_string(t);
                push(slot_b_word(d, t, rng.below(4)), c.catalog.slot_id("B-" + name));
                const int i_len = static_cast<int>(rng.below(2));
                for (int k = 0; k < i_len; ++k)
                    push(slot_i_word(d, t, rng.below(4)), c.catalog.slot_id("I-" + name));
            }
            dia.turns.push_back(std::move(turn));
        }
        c.dialogues.push_back(std::move(dia));
    }

    std::vector<int> order(static_cast<std::size_t>(spec.n_dialogues));
    for (int i = 0; i < spec.n_dialogues; ++i) order[static_cast<std::size_t>(i)] = i;
    shuffle(order, rng);
    const int n = spec.n_dialogues;
    const int n_train = std::max(1, n * 8 / 10);
    const int n_dev = n / 10;
    for (int pos = 0; pos < n; ++pos) {
        const std::string split = pos < n_train ? "train" : pos < n_train + n_dev ? "dev" : "test";
        c.split_of[c.dialogues[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])].id] = split;
    }

    c.validate();
    return c;
}

} // namespace tridistill
