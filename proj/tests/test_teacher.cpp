#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "tridistill/metrics.hpp"
#include "tridistill/synthetic.hpp"
#include "tridistill/teacher.hpp"

using namespace tridistill;
namespace fs = std::filesystem;

namespace {

// The stock learning rate is sized for nudging an already-trained network;
// training from random init in a handful of steps needs a desk-scale rate.
FitConfig desk_fit(int epochs = 3) {
    FitConfig fit{};
    fit.peak_lr = 1e-3;
    fit.epochs = epochs;
    return fit;
}

struct Fixture {
    Corpus corpus;
    std::string id_dir, sf_dir, dc_dir;
    TeacherTrainResult id_res, sf_res, dc_res;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        Fixture x;
        x.corpus = generate_synthetic({.n_dialogues = 60, .n_domains = 2, .seed = 11});
        const fs::path base = fs::temp_directory_path() / "tridistill_teacher_tests" / "fixture";
        fs::remove_all(base);
        const EncoderConfig slim{.n_layers = 1, .n_heads = 2, .d_hidden = 64, .d_ff = 96, .dropout = 0.1,
                                 .max_len = 64, .vocab_size = 3};
        const EncoderConfig wide{.n_layers = 2, .n_heads = 4, .d_hidden = 128, .d_ff = 256, .dropout = 0.1,
                                 .max_len = 64, .vocab_size = 3};
        x.id_dir = (base / "id").string();
        x.sf_dir = (base / "sf").string();
        x.dc_dir = (base / "dc").string();
        FitConfig fit = desk_fit();
        fit.peak_lr = 5e-3;  // the tiny corpus leaves only ~12 steps to learn
        x.id_res = finetune_teacher(x.corpus, Task::ID, slim, fit, 21, x.id_dir);
        x.sf_res = finetune_teacher(x.corpus, Task::SF, slim, fit, 22, x.sf_dir);
        x.dc_res = finetune_teacher(x.corpus, Task::DC, wide, fit, 23, x.dc_dir);
        return x;
    }();
    return f;
}

// Teacher directories with probe heads for the two non-native tasks filled in,
// built once on copies so the bare fixture checkpoints stay probe-free.
const std::vector<std::string>& full_head_dirs() {
    static const std::vector<std::string> dirs = [] {
        const auto& f = fixture();
        const fs::path base = fs::temp_directory_path() / "tridistill_teacher_tests" / "full";
        fs::remove_all(base);
        std::vector<std::string> out;
        FitConfig probe_fit = desk_fit(30);
        probe_fit.peak_lr = 5e-3;
        for (const auto& [src, own] : {std::pair{f.id_dir, Task::ID}, {f.sf_dir, Task::SF}, {f.dc_dir, Task::DC}}) {
            const fs::path dst = base / fs::path(src).filename();
            fs::create_directories(dst.parent_path());
            fs::copy(src, dst, fs::copy_options::recursive);
            for (Task t : {Task::ID, Task::SF, Task::DC})
                if (t != own) train_probe_heads(dst.string(), f.corpus, t, probe_fit, 5);
            out.push_back(dst.string());
        }
        return out;
    }();
    return dirs;
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    int n = 0;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) ++n;
    return n;
}

// Plain full-batch logistic regression in double, the independent yardstick
// for how separable a frozen feature set is.
double logistic_oracle_accuracy(const std::vector<std::vector<double>>& x, const std::vector<int>& y, int k) {
    const int n = static_cast<int>(x.size());
    const int d = static_cast<int>(x.front().size());
    std::vector<double> w(static_cast<std::size_t>(k) * d, 0.0), b(static_cast<std::size_t>(k), 0.0);
    std::vector<double> z(static_cast<std::size_t>(k));
    for (int it = 0; it < 500; ++it) {
        std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            double m = -1e300;
            for (int c = 0; c < k; ++c) {
                z[static_cast<std::size_t>(c)] = b[static_cast<std::size_t>(c)];
                for (int j = 0; j < d; ++j)
                    z[static_cast<std::size_t>(c)] += w[static_cast<std::size_t>(c) * d + j] * x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                m = std::max(m, z[static_cast<std::size_t>(c)]);
            }
            double sum = 0.0;
            for (int c = 0; c < k; ++c) sum += std::exp(z[static_cast<std::size_t>(c)] - m);
            for (int c = 0; c < k; ++c) {
                const double p = std::exp(z[static_cast<std::size_t>(c)] - m) / sum;
                const double g = (p - (y[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0)) / n;
                for (int j = 0; j < d; ++j)
                    gw[static_cast<std::size_t>(c) * d + j] += g * x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
                gb[static_cast<std::size_t>(c)] += g;
            }
        }
        for (std::size_t j = 0; j < w.size(); ++j) w[j] -= 1.0 * gw[j];
        for (std::size_t j = 0; j < b.size(); ++j) b[j] -= 1.0 * gb[j];
    }
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        double bv = -1e300;
        for (int c = 0; c < k; ++c) {
            double v = b[static_cast<std::size_t>(c)];
            for (int j = 0; j < d; ++j)
                v += w[static_cast<std::size_t>(c) * d + j] * x[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
            if (v > bv) {
                bv = v;
                best = c;
            }
        }
        correct += (best == y[static_cast<std::size_t>(i)]);
    }
    return static_cast<double>(correct) / n;
}

} // namespace

TEST_CASE("fine-tuning runs exactly ceil(n/batch) * epochs optimizer steps") {
    const auto& f = fixture();
    const long long n = static_cast<long long>(collect_samples(f.corpus, "train").size());
    const long long expected = ((n + 31) / 32) * 3;
    CHECK(f.id_res.steps == expected);
    CHECK(f.sf_res.steps == expected);
    CHECK(f.dc_res.steps == expected);
    CHECK(f.id_res.epoch_losses.size() == 3);
}

TEST_CASE("fine-tuning leaves a per-epoch loss log next to the checkpoint") {
    const auto& f = fixture();
    const fs::path log = fs::path(f.id_dir) / "train_log.jsonl";
    CHECK(count_lines(log) == 3);
    std::ifstream in(log);
    std::string line;
    int epoch = 0;
    while (std::getline(in, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j.at("epoch").get<int>() == ++epoch);
        CHECK(std::isfinite(j.at("loss").get<double>()));
        CHECK(j.at("loss").get<double>() == Catch::Approx(f.id_res.epoch_losses[static_cast<std::size_t>(epoch - 1)]));
    }
}

TEST_CASE("the saved checkpoint is the state after the last step, reproducible step for step") {
    const Corpus corpus = generate_synthetic({.n_dialogues = 24, .n_domains = 2, .seed = 13});
    const EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 32, .d_ff = 48, .dropout = 0.1,
                            .max_len = 48, .vocab_size = 3};
    FitConfig fit = desk_fit(2);
    fit.batch_size = 16;
    const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "replica";
    fs::remove_all(dir);
    finetune_teacher(corpus, Task::ID, cfg, fit, 31, dir.string());
    const LoadedCheckpoint saved = load_checkpoint(dir.string());

    // Independent re-derivation of the exact same trajectory from public
    // pieces: one stream seeds init, per-epoch shuffles and dropout in order.
    const auto samples = collect_samples(corpus, "train");
    const Vocabulary vocab = build_vocabulary(corpus, 1);
    EncoderConfig c2 = cfg;
    c2.vocab_size = vocab.size();
    Rng rng(31);
    Encoder<float> enc(c2, rng);
    enc.add_head(Task::ID, corpus.catalog.k_id());
    const long long steps_per_epoch = static_cast<long long>((samples.size() + 15) / 16);
    const LRSchedule sched{fit.peak_lr, fit.warmup_fraction, steps_per_epoch * 2};
    OptimizerState opt;
    std::vector<int> order(samples.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < 2; ++epoch) {
        shuffle(order, rng);
        for (std::size_t begin = 0; begin < order.size(); begin += 16) {
            const std::size_t end = std::min(order.size(), begin + 16);
            std::vector<SampleRef> refs;
            for (std::size_t i = begin; i < end; ++i) refs.push_back(samples[static_cast<std::size_t>(order[i])]);
            const EncodedBatch b = encode_samples(corpus, refs, vocab, c2.max_len);
            auto out = enc.forward(b, Task::ID, Mode::Train, &rng);
            auto loss = sce_loss(out.logits, b.intent_targets);
            enc.store.zero_grads();
            backward(loss);
            adamw_step(enc.store, opt, sched, fit.adamw);
        }
    }
    CHECK(saved.encoder->store.content_hash() == enc.store.content_hash());

    // One epoch fewer must land elsewhere: the checkpoint really is last-epoch.
    const fs::path dir1 = fs::temp_directory_path() / "tridistill_teacher_tests" / "replica1";
    fs::remove_all(dir1);
    FitConfig fit1 = fit;
    fit1.epochs = 1;
    finetune_teacher(corpus, Task::ID, cfg, fit1, 31, dir1.string());
    CHECK(load_checkpoint(dir1.string()).encoder->store.content_hash() != saved.encoder->store.content_hash());
}

TEST_CASE("same seed, same corpus: fine-tuning is bit-reproducible") {
    const Corpus corpus = generate_synthetic({.n_dialogues = 20, .n_domains = 2, .seed = 17});
    const EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 32, .d_ff = 48, .dropout = 0.1,
                            .max_len = 48, .vocab_size = 3};
    const fs::path a = fs::temp_directory_path() / "tridistill_teacher_tests" / "det_a";
    const fs::path b = fs::temp_directory_path() / "tridistill_teacher_tests" / "det_b";
    fs::remove_all(a);
    fs::remove_all(b);
    finetune_teacher(corpus, Task::DC, cfg, desk_fit(1), 99, a.string());
    finetune_teacher(corpus, Task::DC, cfg, desk_fit(1), 99, b.string());
    CHECK(load_checkpoint(a.string()).encoder->store.content_hash() ==
          load_checkpoint(b.string()).encoder->store.content_hash());
}

TEST_CASE("a one-domain corpus makes the DC teacher trivially perfect") {
    const Corpus corpus = generate_synthetic({.n_dialogues = 16, .n_domains = 1, .seed = 19});
    const EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 32, .d_ff = 48, .dropout = 0.1,
                            .max_len = 48, .vocab_size = 3};
    const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "one_domain";
    fs::remove_all(dir);
    finetune_teacher(corpus, Task::DC, cfg, desk_fit(1), 7, dir.string());
    const auto rep = evaluate(load_checkpoint(dir.string()), corpus, "train", Task::DC);
    CHECK(rep.value == 1.0);
}

TEST_CASE("fine-tuned teachers separate their own task on train data") {
    const auto& f = fixture();
    CHECK(evaluate(load_checkpoint(f.id_dir), f.corpus, "train", Task::ID).value >= 0.95);
    CHECK(evaluate(load_checkpoint(f.sf_dir), f.corpus, "train", Task::SF).value >= 0.95);
    CHECK(evaluate(load_checkpoint(f.dc_dir), f.corpus, "train", Task::DC).value >= 0.95);
}

TEST_CASE("training config validation") {
    const auto& f = fixture();
    FitConfig bad{};
    bad.epochs = 0;
    CHECK_THROWS_AS(finetune_teacher(f.corpus, Task::ID, EncoderConfig{}, bad, 1, "/tmp/never"), ConfigError);
    bad = FitConfig{};
    bad.peak_lr = 0.0;
    CHECK_THROWS_AS(finetune_teacher(f.corpus, Task::ID, EncoderConfig{}, bad, 1, "/tmp/never"), ConfigError);
    bad = FitConfig{};
    bad.warmup_fraction = 1.5;
    CHECK_THROWS_AS(finetune_teacher(f.corpus, Task::ID, EncoderConfig{}, bad, 1, "/tmp/never"), ConfigError);
}

TEST_CASE("an absurd learning rate aborts with the offending step index") {
    const Corpus corpus = generate_synthetic({.n_dialogues = 16, .n_domains = 2, .seed = 23});
    const EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 32, .d_ff = 48, .dropout = 0.0,
                            .max_len = 48, .vocab_size = 3};
    FitConfig fit = desk_fit(3);
    fit.peak_lr = 1e9;
    const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "diverge";
    fs::remove_all(dir);
    CHECK_THROWS_WITH(finetune_teacher(corpus, Task::ID, cfg, fit, 7, dir.string()),
                      Catch::Matchers::ContainsSubstring("step"));
}

TEST_CASE("probe training adds a head without touching the backbone") {
    const auto& f = fixture();
    const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "probe_backbone";
    fs::remove_all(dir);
    fs::copy(f.id_dir, dir, fs::copy_options::recursive);

    const uint64_t backbone_before = load_checkpoint(dir.string()).encoder->store.backbone_hash();
    FitConfig fit = desk_fit(5);
    fit.peak_lr = 5e-3;
    const auto res = train_probe_heads(dir.string(), f.corpus, Task::DC, fit, 3);
    CHECK(res.epoch_losses.size() == 5);

    const LoadedCheckpoint after = load_checkpoint(dir.string());
    CHECK(after.encoder->store.backbone_hash() == backbone_before);
    CHECK(after.encoder->has_head(Task::DC));
    CHECK(after.own_task == Task::ID);
    CHECK(count_lines(fs::path(dir) / "probe_log.DC.jsonl") == 5);

    SECTION("the probe head cannot be trained twice") {
        CHECK_THROWS_WITH(train_probe_heads(dir.string(), f.corpus, Task::DC, fit, 3),
                          Catch::Matchers::ContainsSubstring("already has a head"));
    }
}

TEST_CASE("probe training refuses the teacher's own task") {
    const auto& f = fixture();
    CHECK_THROWS_WITH(train_probe_heads(f.id_dir, f.corpus, Task::ID, desk_fit(), 3),
                      Catch::Matchers::ContainsSubstring("authoritative"));
}

TEST_CASE("probe training rejects a corpus with a different catalog") {
    const auto& f = fixture();
    const Corpus other = generate_synthetic({.n_dialogues = 12, .n_domains = 1, .seed = 29});
    const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "probe_catalog";
    fs::remove_all(dir);
    fs::copy(f.id_dir, dir, fs::copy_options::recursive);
    CHECK_THROWS_AS(train_probe_heads(dir.string(), other, Task::DC, desk_fit(), 3), DataError);
}

TEST_CASE("probed domain head separates as well as a standalone logistic regression") {
    const auto& f = fixture();
    const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "probe_sep";
    fs::remove_all(dir);
    fs::copy(f.id_dir, dir, fs::copy_options::recursive);

    FitConfig fit = desk_fit(30);
    fit.peak_lr = 5e-3;
    train_probe_heads(dir.string(), f.corpus, Task::DC, fit, 3);
    const LoadedCheckpoint lc = load_checkpoint(dir.string());
    const double probe_acc = evaluate(lc, f.corpus, "train", Task::DC).value;

    // Independent yardstick: extract the same frozen pooled features and fit
    // a from-scratch logistic regression on them.
    const auto samples = collect_samples(f.corpus, "train");
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (std::size_t begin = 0; begin < samples.size(); begin += 32) {
        const std::size_t end = std::min(samples.size(), begin + 32);
        const std::vector<SampleRef> refs(samples.begin() + static_cast<std::ptrdiff_t>(begin),
                                          samples.begin() + static_cast<std::ptrdiff_t>(end));
        const EncodedBatch b = encode_samples(f.corpus, refs, lc.vocab, lc.cfg.max_len);
        const auto out = lc.encoder->encode(b, Mode::Eval);
        for (int i = 0; i < b.n; ++i) {
            std::vector<double> row(static_cast<std::size_t>(lc.cfg.d_hidden));
            for (int c = 0; c < lc.cfg.d_hidden; ++c) row[static_cast<std::size_t>(c)] = out.pooled->value.at2(i, c);
            x.push_back(std::move(row));
            y.push_back(b.domain_targets[static_cast<std::size_t>(i)]);
        }
    }
    const double oracle_acc = logistic_oracle_accuracy(x, y, f.corpus.catalog.k_dc());
    INFO("probe " << probe_acc << " oracle " << oracle_acc);
    CHECK(oracle_acc >= 0.95);
    CHECK(probe_acc >= 0.95);
    CHECK(probe_acc >= oracle_acc - 0.05);
}

TEST_CASE("an ensemble with every head emits well-formed signals for every task") {
    const auto& f = fixture();
    const TeacherEnsemble ens = TeacherEnsemble::load(full_head_dirs());
    REQUIRE(ens.n_teachers() == 3);
    CHECK(ens.max_len() == 64);

    const auto samples = collect_samples(f.corpus, "dev");
    const std::vector<SampleRef> refs(samples.begin(), samples.begin() + 6);
    const EncodedBatch b = encode_samples(f.corpus, refs, ens.vocab(), ens.max_len());

    for (Task task : {Task::ID, Task::SF, Task::DC}) {
        const TeacherSignals s = teacher_signals(ens, b, task);
        REQUIRE(s.n_teachers() == 3);
        const auto& shape0 = s.probs[0].shape;
        for (int j = 0; j < 3; ++j) {
            CHECK(s.probs[static_cast<std::size_t>(j)].shape == shape0);
            CHECK(s.logits[static_cast<std::size_t>(j)].shape == shape0);
            const auto& p = s.probs[static_cast<std::size_t>(j)];
            const int k = p.dim(p.ndim() - 1);
            const std::size_t rows = p.size() / static_cast<std::size_t>(k);
            for (std::size_t r = 0; r < rows; ++r) {
                double sum = 0.0;
                for (int c = 0; c < k; ++c) sum += p.data[r * static_cast<std::size_t>(k) + c];
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
        }
        // pooled widths follow each teacher's own hidden size
        CHECK(s.pooled[0].dim(1) == 64);
        CHECK(s.pooled[1].dim(1) == 64);
        CHECK(s.pooled[2].dim(1) == 128);
    }
}

TEST_CASE("temperature reshapes the distribution as specified") {
    SECTION("tau=2 on logits [2,0]") {
        const Tensor<float> p = softmax_rows(Tensor<float>({1, 2}, {2.0f, 0.0f}), 2.0);
        CHECK(p.data[0] == Catch::Approx(0.73105857863).margin(1e-6));
        CHECK(p.data[1] == Catch::Approx(0.26894142137).margin(1e-6));
    }
    SECTION("huge tau flattens toward uniform") {
        const auto& f = fixture();
        const TeacherEnsemble ens = TeacherEnsemble::load(full_head_dirs());
        const auto samples = collect_samples(f.corpus, "dev");
        const std::vector<SampleRef> refs(samples.begin(), samples.begin() + 4);
        const EncodedBatch b = encode_samples(f.corpus, refs, ens.vocab(), ens.max_len());
        const TeacherSignals s = teacher_signals(ens, b, Task::ID, 1e6);
        const double uniform = 1.0 / f.corpus.catalog.k_id();
        for (const auto& p : s.probs)
            for (float v : p.data) CHECK(std::abs(static_cast<double>(v) - uniform) < 1e-3);
    }
    SECTION("temperature must be positive") {
        const auto& f = fixture();
        const TeacherEnsemble ens = TeacherEnsemble::load(full_head_dirs());
        const auto samples = collect_samples(f.corpus, "dev");
        const std::vector<SampleRef> refs(samples.begin(), samples.begin() + 2);
        const EncodedBatch b = encode_samples(f.corpus, refs, ens.vocab(), ens.max_len());
        CHECK_THROWS_AS(teacher_signals(ens, b, Task::ID, 0.0), ConfigError);
    }
}

TEST_CASE("signals for a task require a head for that task") {
    const auto& f = fixture();
    // bare fixture teachers carry only their own head
    const TeacherEnsemble ens = TeacherEnsemble::load({f.id_dir, f.dc_dir});
    const auto samples = collect_samples(f.corpus, "dev");
    const std::vector<SampleRef> refs(samples.begin(), samples.begin() + 2);
    const EncodedBatch b = encode_samples(f.corpus, refs, ens.vocab(), ens.max_len());
    CHECK_THROWS_AS(teacher_signals(ens, b, Task::SF, 1.0), ConfigError);
}

TEST_CASE("ensemble loading validates its members") {
    const auto& f = fixture();
    SECTION("duplicate task") {
        CHECK_THROWS_WITH(TeacherEnsemble::load({f.id_dir, f.id_dir}),
                          Catch::Matchers::ContainsSubstring("two teachers"));
    }
    SECTION("too many members") {
        CHECK_THROWS_AS(TeacherEnsemble::load({f.id_dir, f.sf_dir, f.dc_dir, f.id_dir}), ConfigError);
    }
    SECTION("no members") {
        CHECK_THROWS_AS(TeacherEnsemble::load({}), ConfigError);
    }
    SECTION("checkpoint without a recorded specialty") {
        Rng rng(1);
        EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 16, .d_ff = 24, .dropout = 0.0,
                          .max_len = 16, .vocab_size = 8};
        Encoder<float> enc(cfg, rng);
        enc.add_head(Task::ID, f.corpus.catalog.k_id());
        const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "no_own";
        fs::remove_all(dir);
        save_checkpoint(enc, f.corpus.catalog, Vocabulary::from_words({"a", "b"}), dir.string());
        CHECK_THROWS_WITH(TeacherEnsemble::load({dir.string()}),
                          Catch::Matchers::ContainsSubstring("does not record"));
    }
    SECTION("vocabulary mismatch across members") {
        const Corpus other = generate_synthetic({.n_dialogues = 60, .n_domains = 2, .seed = 12});
        const EncoderConfig cfg{.n_layers = 1, .n_heads = 2, .d_hidden = 32, .d_ff = 48, .dropout = 0.1,
                                .max_len = 48, .vocab_size = 3};
        const fs::path dir = fs::temp_directory_path() / "tridistill_teacher_tests" / "other_vocab";
        fs::remove_all(dir);
        finetune_teacher(other, Task::SF, cfg, desk_fit(1), 2, dir.string());
        CHECK_THROWS_WITH(TeacherEnsemble::load({f.id_dir, dir.string()}),
                          Catch::Matchers::ContainsSubstring("vocabulary"));
    }
}

TEST_CASE("cached signals equal direct per-batch computation") {
    const auto& f = fixture();
    const TeacherEnsemble ens = TeacherEnsemble::load(full_head_dirs());
    const auto samples = collect_samples(f.corpus, "train");

    for (Task task : {Task::ID, Task::SF, Task::DC}) {
        const TeacherSignalCache cache(ens, f.corpus, samples, task, 1.0, ens.max_len(), 32);
        Rng rng(41);
        std::vector<int> idx(samples.size());
        std::iota(idx.begin(), idx.end(), 0);
        shuffle(idx, rng);
        const std::vector<int> subset(idx.begin(), idx.begin() + 7);

        std::vector<SampleRef> refs;
        for (int s : subset) refs.push_back(samples[static_cast<std::size_t>(s)]);
        const EncodedBatch b = encode_samples(f.corpus, refs, ens.vocab(), ens.max_len());
        const TeacherSignals direct = signal_rows(teacher_signals(ens, b, task), b, task);
        const TeacherSignals cached = cache.assemble(subset);

        REQUIRE(cached.n_teachers() == direct.n_teachers());
        for (int j = 0; j < 3; ++j) {
            CHECK(cached.logits[static_cast<std::size_t>(j)] == direct.logits[static_cast<std::size_t>(j)]);
            CHECK(cached.probs[static_cast<std::size_t>(j)] == direct.probs[static_cast<std::size_t>(j)]);
            CHECK(cached.pooled[static_cast<std::size_t>(j)] == direct.pooled[static_cast<std::size_t>(j)]);
        }
    }
}

TEST_CASE("cache row accounting matches the encoded batches") {
    const auto& f = fixture();
    const TeacherEnsemble ens = TeacherEnsemble::load(full_head_dirs());
    const auto samples = collect_samples(f.corpus, "dev");
    const TeacherSignalCache cache(ens, f.corpus, samples, Task::SF, 1.0, ens.max_len(), 8);
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const EncodedBatch b = encode_samples(f.corpus, {samples[i]}, ens.vocab(), ens.max_len());
        CHECK(cache.rows_of(static_cast<int>(i)) == static_cast<int>(b.slot_positions().size()));
    }
    CHECK_THROWS_AS(cache.assemble({}), DataError);

    SECTION("a shorter shared truncation length keeps rows aligned with the shorter batches") {
        const TeacherSignalCache tight(ens, f.corpus, samples, Task::SF, 1.0, 4, 8);
        for (std::size_t i = 0; i < samples.size(); ++i) {
            const EncodedBatch b = encode_samples(f.corpus, {samples[i]}, ens.vocab(), 4);
            CHECK(tight.rows_of(static_cast<int>(i)) == static_cast<int>(b.slot_positions().size()));
        }
    }
    SECTION("truncation beyond the ensemble's reach is rejected") {
        CHECK_THROWS_AS(TeacherSignalCache(ens, f.corpus, samples, Task::SF, 1.0, ens.max_len() + 1, 8),
                        ConfigError);
    }
}
