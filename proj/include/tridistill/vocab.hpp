#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "tridistill/common.hpp"
#include "tridistill/corpus.hpp"

namespace tridistill {

inline constexpr int kPadId = 0;
inline constexpr int kUnkId = 1;
inline constexpr int kClsId = 2;
inline constexpr int kIgnoreTarget = -1;

inline std::string lowercased(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

// Closed word-level vocabulary built from the train split. Ids 0..2 are
// reserved for PAD/UNK/CLS; corpus words start at 3 in first-seen order.
struct Vocabulary {
    std::unordered_map<std::string, int> word_to_id;

    int size() const { return 3 + static_cast<int>(word_to_id.size()); }

    int id_of(const std::string& word) const {
        auto it = word_to_id.find(lowercased(word));
        return it == word_to_id.end() ? kUnkId : it->second;
    }

    // Words in id order, for persistence.
    std::vector<std::string> ordered_words() const {
        std::vector<std::string> out(word_to_id.size());
        for (const auto& [w, id] : word_to_id) out[static_cast<std::size_t>(id - 3)] = w;
        return out;
    }

    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        for (const auto& w : words) {
            const int id = 3 + static_cast<int>(v.word_to_id.size());
            if (!v.word_to_id.emplace(w, id).second)
                throw DataError("vocabulary: duplicate word '" + w + "'");
        }
        return v;
    }
};

inline Vocabulary build_vocabulary(const Corpus& c, int min_freq) {
    if (min_freq < 1) throw ConfigError("vocabulary min_freq must be >= 1");
    if (collect_samples(c, "train").empty()) throw DataError("vocabulary: corpus has no train dialogues");
    std::unordered_map<std::string, int> freq;
    std::vector<std::string> first_seen;
    for (const auto& d : c.dialogues) {
        if (c.split_of.at(d.id) != "train") continue;
        for (const auto& t : d.turns)
            for (const auto& tok : t.tokens) {
                const std::string w = lowercased(tok);
                if (++freq[w] == 1) first_seen.push_back(w);
            }
    }
    std::vector<std::string> kept;
    for (const auto& w : first_seen)
        if (freq[w] >= min_freq) kept.push_back(w);
    return Vocabulary::from_words(kept);
}

// One padded batch: row layout is [CLS, w1..wl, PAD...]. Slot targets carry
// kIgnoreTarget at the CLS slot and at padding.
struct EncodedBatch {
    int n = 0;
    int width = 0;
    std::vector<int> token_ids;
    std::vector<uint8_t> mask;
    std::vector<int> slot_targets;
    std::vector<int> intent_targets;
    std::vector<int> domain_targets;

    int token_at(int i, int j) const { return token_ids[static_cast<std::size_t>(i) * width + j]; }
    bool real_at(int i, int j) const { return mask[static_cast<std::size_t>(i) * width + j] != 0; }
    int slot_at(int i, int j) const { return slot_targets[static_cast<std::size_t>(i) * width + j]; }

    // Flat row indices (into n*width) of real non-CLS positions, the ones that
    // carry slot supervision.
    std::vector<int> slot_positions() const {
        std::vector<int> out;
        for (int i = 0; i < n; ++i)
            for (int j = 1; j < width; ++j)
                if (real_at(i, j)) out.push_back(i * width + j);
        return out;
    }
};

inline EncodedBatch encode_batch(const std::vector<std::pair<const Turn*, int>>& turns, const Vocabulary& vocab,
                                 const LabelCatalog& catalog, int max_len) {
    if (max_len < 2) throw ConfigError("encode_batch: max_len must be >= 2");
    if (turns.empty()) throw DataError("encode_batch: empty turn list");
    (void)catalog;

    int longest = 0;
    for (const auto& [t, dom] : turns)
        longest = std::max(longest, std::min<int>(static_cast<int>(t->tokens.size()), max_len - 1));

    EncodedBatch b;
    b.n = static_cast<int>(turns.size());
    b.width = 1 + longest;
    const std::size_t total = static_cast<std::size_t>(b.n) * b.width;
    b.token_ids.assign(total, kPadId);
    b.mask.assign(total, 0);
    b.slot_targets.assign(total, kIgnoreTarget);
    for (int i = 0; i < b.n; ++i) {
        const Turn& t = *turns[static_cast<std::size_t>(i)].first;
        const std::size_t row = static_cast<std::size_t>(i) * b.width;
        b.token_ids[row] = kClsId;
        b.mask[row] = 1;
        const int l = std::min<int>(static_cast<int>(t.tokens.size()), max_len - 1);
        for (int j = 0; j < l; ++j) {
            b.token_ids[row + 1 + j] = vocab.id_of(t.tokens[static_cast<std::size_t>(j)]);
            b.mask[row + 1 + j] = 1;
            b.slot_targets[row + 1 + j] = t.slot_tag_ids[static_cast<std::size_t>(j)];
        }
        b.intent_targets.push_back(t.intent_id);
        b.domain_targets.push_back(turns[static_cast<std::size_t>(i)].second);
    }
    return b;
}

inline EncodedBatch encode_samples(const Corpus& c, const std::vector<SampleRef>& refs, const Vocabulary& vocab,
                                   int max_len) {
    std::vector<std::pair<const Turn*, int>> turns;
    turns.reserve(refs.size());
    for (const auto& r : refs) {
        const Dialogue& d = c.dialogues[static_cast<std::size_t>(r.dialogue)];
        turns.emplace_back(&d.turns[static_cast<std::size_t>(r.turn)], d.domain_id);
    }
    return encode_batch(turns, vocab, c.catalog, max_len);
}

} // namespace tridistill
