#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "tridistill/common.hpp"

namespace tridistill {

// Ordered label lists; list position defines the integer id used in memory.
// Files always reference labels by name.
struct LabelCatalog {
    std::vector<std::string> slot_tags;
    std::vector<std::string> intents;
    std::vector<std::string> domains;

    int k_sf() const { return static_cast<int>(slot_tags.size()); }
    int k_id() const { return static_cast<int>(intents.size()); }
    int k_dc() const { return static_cast<int>(domains.size()); }

    static int index_of(const std::vector<std::string>& names, const std::string& name) {
        auto it = std::find(names.begin(), names.end(), name);
        return it == names.end() ? -1 : static_cast<int>(it - names.begin());
    }

    int slot_id(const std::string& n) const { return index_of(slot_tags, n); }
    int intent_id(const std::string& n) const { return index_of(intents, n); }
    int domain_id(const std::string& n) const { return index_of(domains, n); }

    void validate() const {
        auto unique_nonempty = [](const std::vector<std::string>& v, const char* what) {
            if (v.empty()) throw DataError(std::string("catalog: ") + what + " list is empty");
            std::unordered_set<std::string> seen;
            for (const auto& n : v)
                if (!seen.insert(n).second)
                    throw DataError(std::string("catalog: duplicate ") + what + " '" + n + "'");
        };
        unique_nonempty(slot_tags, "slot_tags");
        unique_nonempty(intents, "intents");
        unique_nonempty(domains, "domains");
        if (slot_id("O") < 0) throw DataError("catalog: slot_tags must contain 'O'");
    }

    bool operator==(const LabelCatalog&) const = default;
};

struct Turn {
    std::vector<std::string> tokens;
    std::vector<int> slot_tag_ids;
    int intent_id = 0;

    bool operator==(const Turn&) const = default;
};

struct Dialogue {
    std::string id;
    std::vector<Turn> turns;
    int domain_id = 0;
    std::string source;

    bool operator==(const Dialogue&) const = default;
};

struct Corpus {
    LabelCatalog catalog;
    std::vector<Dialogue> dialogues;
    std::map<std::string, std::string> split_of;

    void validate() const {
        catalog.validate();
        if (split_of.size() != dialogues.size())
            throw DataError("corpus: split assignments do not match dialogue count");
        for (const auto& d : dialogues) {
            auto it = split_of.find(d.id);
            if (it == split_of.end()) throw DataError("dialogue " + d.id + ": missing split assignment");
            if (it->second != "train" && it->second != "dev" && it->second != "test")
                throw DataError("dialogue " + d.id + ": split must be train, dev or test, got '" + it->second + "'");
            if (d.turns.empty()) throw DataError("dialogue " + d.id + ": has no turns");
            if (d.domain_id < 0 || d.domain_id >= catalog.k_dc())
                throw DataError("dialogue " + d.id + ": domain id out of range");
            for (std::size_t t = 0; t < d.turns.size(); ++t) {
                const Turn& turn = d.turns[t];
                const std::string where = "dialogue " + d.id + " turn " + std::to_string(t);
                if (turn.tokens.empty()) throw DataError(where + ": empty utterance");
                if (turn.tokens.size() != turn.slot_tag_ids.size())
                    throw DataError(where + ": " + std::to_string(turn.tokens.size()) + " tokens but " +
                                    std::to_string(turn.slot_tag_ids.size()) + " slot tags");
                if (turn.intent_id < 0 || turn.intent_id >= catalog.k_id())
                    throw DataError(where + ": intent id out of range");
                for (int s : turn.slot_tag_ids)
                    if (s < 0 || s >= catalog.k_sf()) throw DataError(where + ": slot id out of range");
            }
        }
    }

    bool operator==(const Corpus&) const = default;
};

// Positions where an I-x tag follows neither B-x nor I-x (including at the
// start of an utterance). Loaders warn on these; they are never hard errors.
inline std::vector<std::size_t> bio_violations(const std::vector<int>& tag_ids, const LabelCatalog& cat) {
    std::vector<std::size_t> bad;
    for (std::size_t i = 0; i < tag_ids.size(); ++i) {
        const std::string& tag = cat.slot_tags[static_cast<std::size_t>(tag_ids[i])];
        if (tag.rfind("I-", 0) != 0) continue;
        const std::string suffix = tag.substr(2);
        bool ok = false;
        if (i > 0) {
            const std::string& prev = cat.slot_tags[static_cast<std::size_t>(tag_ids[i - 1])];
            ok = prev == "B-" + suffix || prev == "I-" + suffix;
        }
        if (!ok) bad.push_back(i);
    }
    return bad;
}

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j, const char* key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw DataError(where + ": missing field '" + key + "'");
    return *it;
}

inline std::vector<std::string> string_list(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array()) throw DataError(where + ": expected a list of strings");
    std::vector<std::string> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_string()) throw DataError(where + ": expected a list of strings");
        out.push_back(v.get<std::string>());
    }
    return out;
}

} // namespace detail

inline Corpus parse_corpus_json(const nlohmann::json& j, const std::string& origin) {
    Corpus c;
    const auto& cat = detail::require_field(j, "catalog", origin);
    c.catalog.slot_tags = detail::string_list(detail::require_field(cat, "slot_tags", origin + " catalog"),
                                              origin + " catalog.slot_tags");
    c.catalog.intents =
        detail::string_list(detail::require_field(cat, "intents", origin + " catalog"), origin + " catalog.intents");
    c.catalog.domains =
        detail::string_list(detail::require_field(cat, "domains", origin + " catalog"), origin + " catalog.domains");
    c.catalog.validate();

    const auto& dialogues = detail::require_field(j, "dialogues", origin);
    if (!dialogues.is_array()) throw DataError(origin + ": 'dialogues' must be a list");
    for (const auto& dj : dialogues) {
        Dialogue d;
        d.id = detail::require_field(dj, "id", origin + " dialogue").get<std::string>();
        const std::string where = "dialogue " + d.id;
        d.source = detail::require_field(dj, "source", where).get<std::string>();
        const std::string domain = detail::require_field(dj, "domain", where).get<std::string>();
        d.domain_id = c.catalog.domain_id(domain);
        if (d.domain_id < 0) throw DataError(where + ": domain '" + domain + "' not in catalog");
        const std::string split = detail::require_field(dj, "split", where).get<std::string>();
        if (c.split_of.count(d.id)) throw DataError(where + ": duplicate dialogue id");
        c.split_of[d.id] = split;

        const auto& turns = detail::require_field(dj, "turns", where);
        if (!turns.is_array()) throw DataError(where + ": 'turns' must be a list");
        for (std::size_t t = 0; t < turns.size(); ++t) {
            const std::string twhere = where + " turn " + std::to_string(t);
            const auto& tj = turns[t];
            Turn turn;
            turn.tokens = detail::string_list(detail::require_field(tj, "tokens", twhere), twhere + " tokens");
            const auto slots = detail::string_list(detail::require_field(tj, "slots", twhere), twhere + " slots");
            if (slots.size() != turn.tokens.size())
                throw DataError(twhere + ": " + std::to_string(turn.tokens.size()) + " tokens but " +
                                std::to_string(slots.size()) + " slot tags");
            for (const auto& s : slots) {
                const int sid = c.catalog.slot_id(s);
                if (sid < 0) throw DataError(twhere + ": slot tag '" + s + "' not in catalog");
                turn.slot_tag_ids.push_back(sid);
            }
            const std::string intent = detail::require_field(tj, "intent", twhere).get<std::string>();
            turn.intent_id = c.catalog.intent_id(intent);
            if (turn.intent_id < 0) throw DataError(twhere + ": intent '" + intent + "' not in catalog");
            d.turns.push_back(std::move(turn));
        }
        c.dialogues.push_back(std::move(d));
    }
    c.validate();
    return c;
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("corpus file " + path + ": " + e.what());
    }
    return parse_corpus_json(j, path);
}

inline nlohmann::json corpus_to_json(const Corpus& c) {
    nlohmann::json j;
    j["catalog"] = {{"slot_tags", c.catalog.slot_tags},
                    {"intents", c.catalog.intents},
                    {"domains", c.catalog.domains}};
    j["dialogues"] = nlohmann::json::array();
    for (const auto& d : c.dialogues) {
        nlohmann::json dj;
        dj["id"] = d.id;
        dj["domain"] = c.catalog.domains[static_cast<std::size_t>(d.domain_id)];
        dj["source"] = d.source;
        dj["split"] = c.split_of.at(d.id);
        dj["turns"] = nlohmann::json::array();
        for (const auto& t : d.turns) {
            nlohmann::json tj;
            tj["tokens"] = t.tokens;
            std::vector<std::string> slots;
            for (int s : t.slot_tag_ids) slots.push_back(c.catalog.slot_tags[static_cast<std::size_t>(s)]);
            tj["slots"] = slots;
            tj["intent"] = c.catalog.intents[static_cast<std::size_t>(t.intent_id)];
            dj["turns"].push_back(std::move(tj));
        }
        j["dialogues"].push_back(std::move(dj));
    }
    return j;
}

inline void write_corpus(const Corpus& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file " + path);
    out << corpus_to_json(c).dump(2) << "\n";
}

// Catalog union keeping a's order and appending b's novel labels; dialogues
// concatenated. Ids are kept as-is when globally unique, otherwise every id
// gets a "<source>:" prefix; collisions surviving that are reported.
inline Corpus merge_corpora(const Corpus& a, const Corpus& b) {
    Corpus m;
    m.catalog = a.catalog;
    auto extend = [](std::vector<std::string>& into, const std::vector<std::string>& from) {
        for (const auto& n : from)
            if (LabelCatalog::index_of(into, n) < 0) into.push_back(n);
    };
    extend(m.catalog.slot_tags, b.catalog.slot_tags);
    extend(m.catalog.intents, b.catalog.intents);
    extend(m.catalog.domains, b.catalog.domains);

    auto remap = [&m](const Corpus& src, Dialogue d) {
        d.domain_id = m.catalog.domain_id(src.catalog.domains[static_cast<std::size_t>(d.domain_id)]);
        for (auto& t : d.turns) {
            t.intent_id = m.catalog.intent_id(src.catalog.intents[static_cast<std::size_t>(t.intent_id)]);
            for (auto& s : t.slot_tag_ids)
                s = m.catalog.slot_id(src.catalog.slot_tags[static_cast<std::size_t>(s)]);
        }
        return d;
    };

    bool collision = false;
    {
        std::unordered_set<std::string> ids;
        for (const auto& d : a.dialogues) ids.insert(d.id);
        for (const auto& d : b.dialogues)
            if (!ids.insert(d.id).second) collision = true;
    }
    auto add = [&](const Corpus& src) {
        for (const auto& d : src.dialogues) {
            Dialogue nd = remap(src, d);
            if (collision && nd.id.rfind(nd.source + ":", 0) != 0) nd.id = nd.source + ":" + nd.id;
            if (m.split_of.count(nd.id))
                throw DataError("merge: dialogue id '" + nd.id + "' collides after source prefixing");
            m.split_of[nd.id] = src.split_of.at(d.id);
            m.dialogues.push_back(std::move(nd));
        }
    };
    add(a);
    add(b);
    m.validate();
    return m;
}

// Flat (dialogue, turn) references for one split, in corpus order. Each turn
// is an independent sample carrying its dialogue's domain label.
struct SampleRef {
    int dialogue = 0;
    int turn = 0;

    bool operator==(const SampleRef&) const = default;
};

inline std::vector<SampleRef> collect_samples(const Corpus& c, const std::string& split) {
    std::vector<SampleRef> out;
    for (std::size_t di = 0; di < c.dialogues.size(); ++di) {
        if (c.split_of.at(c.dialogues[di].id) != split) continue;
        for (std::size_t ti = 0; ti < c.dialogues[di].turns.size(); ++ti)
            out.push_back({static_cast<int>(di), static_cast<int>(ti)});
    }
    return out;
}

} // namespace tridistill
