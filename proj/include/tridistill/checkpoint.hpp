#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tridistill/common.hpp"
#include "tridistill/corpus.hpp"
#include "tridistill/encoder.hpp"
#include "tridistill/rng.hpp"
#include "tridistill/vocab.hpp"

namespace tridistill {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

inline constexpr int kCheckpointVersion = 1;

// Checkpoint = directory with manifest.json plus params.bin holding raw f32
// data concatenated in manifest tensor order.
inline void save_checkpoint(const Encoder<float>& enc, const LabelCatalog& catalog, const Vocabulary& vocab,
                            const std::string& dir, std::optional<Task> own_task = std::nullopt) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointVersion;
    manifest["tool_version"] = kToolVersion;
    if (own_task) manifest["own_task"] = task_name(*own_task);
    manifest["config"] = {{"n_layers", enc.cfg.n_layers}, {"n_heads", enc.cfg.n_heads},
                          {"d_hidden", enc.cfg.d_hidden}, {"d_ff", enc.cfg.d_ff},
                          {"dropout", enc.cfg.dropout},   {"max_len", enc.cfg.max_len},
                          {"vocab_size", enc.cfg.vocab_size}};
    manifest["catalog"] = {{"slot_tags", catalog.slot_tags},
                           {"intents", catalog.intents},
                           {"domains", catalog.domains}};
    manifest["vocabulary"] = vocab.ordered_words();
    manifest["heads"] = nlohmann::json::array();
    for (Task t : {Task::ID, Task::SF, Task::DC})
        if (enc.has_head(t)) manifest["heads"].push_back({{"task", task_name(t)}, {"k", enc.head(t).k()}});

    manifest["tensors"] = nlohmann::json::array();
    std::ofstream bin(fs::path(dir) / "params.bin", std::ios::binary | std::ios::trunc);
    if (!bin) throw DataError("cannot write " + dir + "/params.bin");
    std::size_t offset = 0;
    for (std::size_t i = 0; i < enc.store.count(); ++i) {
        const auto& node = enc.store.at(i);
        const std::size_t bytes = node->value.size() * sizeof(float);
        manifest["tensors"].push_back({{"name", enc.store.names()[i]},
                                       {"shape", node->value.shape},
                                       {"dtype", "f32"},
                                       {"offset", offset},
                                       {"length", bytes}});
        bin.write(reinterpret_cast<const char*>(node->value.data.data()), static_cast<std::streamsize>(bytes));
        offset += bytes;
    }
    bin.close();
    if (!bin) throw DataError("failed writing " + dir + "/params.bin");

    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
    if (!mf) throw DataError("cannot write " + dir + "/manifest.json");
    mf << manifest.dump(2) << "\n";
}

struct LoadedCheckpoint {
    EncoderConfig cfg;
    LabelCatalog catalog;
    Vocabulary vocab;
    std::shared_ptr<Encoder<float>> encoder;
    std::vector<Task> heads;
    std::optional<Task> own_task;
};

inline LoadedCheckpoint load_checkpoint(const std::string& dir, const EncoderConfig* expected = nullptr) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json");
    if (!mf) throw DataError("cannot open checkpoint manifest " + dir + "/manifest.json");
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("checkpoint manifest " + dir + ": " + e.what());
    }

    if (!manifest.contains("format_version") || manifest["format_version"].get<int>() != kCheckpointVersion)
        throw ConfigError("checkpoint " + dir + ": format version mismatch");

    LoadedCheckpoint out;
    const auto& cj = manifest.at("config");
    out.cfg.n_layers = cj.at("n_layers").get<int>();
    out.cfg.n_heads = cj.at("n_heads").get<int>();
    out.cfg.d_hidden = cj.at("d_hidden").get<int>();
    out.cfg.d_ff = cj.at("d_ff").get<int>();
    out.cfg.dropout = cj.at("dropout").get<double>();
    out.cfg.max_len = cj.at("max_len").get<int>();
    out.cfg.vocab_size = cj.at("vocab_size").get<int>();
    out.cfg.validate();
    if (expected && !(*expected == out.cfg))
        throw ConfigError("checkpoint " + dir + ": config does not match the expected encoder config");
    if (manifest.contains("own_task"))
        out.own_task = task_from_name(manifest["own_task"].get<std::string>());

    const auto& catj = manifest.at("catalog");
    out.catalog.slot_tags = catj.at("slot_tags").get<std::vector<std::string>>();
    out.catalog.intents = catj.at("intents").get<std::vector<std::string>>();
    out.catalog.domains = catj.at("domains").get<std::vector<std::string>>();
    out.catalog.validate();
    out.vocab = Vocabulary::from_words(manifest.at("vocabulary").get<std::vector<std::string>>());

    Rng scratch(0);
    out.encoder = std::make_shared<Encoder<float>>(out.cfg, scratch);
    for (const auto& hj : manifest.at("heads")) {
        const Task t = task_from_name(hj.at("task").get<std::string>());
        out.encoder->add_head(t, hj.at("k").get<int>());
        out.heads.push_back(t);
    }

    std::ifstream bin(fs::path(dir) / "params.bin", std::ios::binary);
    if (!bin) throw DataError("cannot open checkpoint blob " + dir + "/params.bin");
    std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    std::size_t seen = 0;
    for (const auto& tj : manifest.at("tensors")) {
        const std::string name = tj.at("name").get<std::string>();
        if (!out.encoder->store.has(name))
            throw ConfigError("checkpoint " + dir + ": manifest lists unknown tensor '" + name + "'");
        const auto& node = out.encoder->store.get(name);
        const auto shape = tj.at("shape").get<std::vector<int>>();
        if (shape != node->value.shape)
            throw ConfigError("checkpoint " + dir + ": tensor '" + name + "' has shape " +
                              Tensor<float>(shape).shape_str() + ", expected " + node->value.shape_str());
        if (tj.at("dtype").get<std::string>() != "f32")
            throw ConfigError("checkpoint " + dir + ": tensor '" + name + "' has unsupported dtype");
        const std::size_t offset = tj.at("offset").get<std::size_t>();
        const std::size_t length = tj.at("length").get<std::size_t>();
        if (length != node->value.size() * sizeof(float))
            throw DataError("checkpoint " + dir + ": tensor '" + name + "' length disagrees with its shape");
        if (offset + length > blob.size())
            throw DataError("checkpoint " + dir + ": tensor '" + name + "' is missing from params.bin (truncated file)");
        std::memcpy(node->value.data.data(), blob.data() + offset, length);
        ++seen;
    }
    if (seen != out.encoder->store.count())
        throw DataError("checkpoint " + dir + ": manifest covers " + std::to_string(seen) + " tensors, model has " +
                        std::to_string(out.encoder->store.count()));
    return out;
}

} // namespace tridistill
