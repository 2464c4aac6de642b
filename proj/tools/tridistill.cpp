#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tridistill/checkpoint.hpp"
#include "tridistill/common.hpp"
#include "tridistill/config.hpp"
#include "tridistill/corpus.hpp"
#include "tridistill/diagnostics.hpp"
#include "tridistill/distill.hpp"
#include "tridistill/metrics.hpp"
#include "tridistill/synthetic.hpp"
#include "tridistill/teacher.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tridistill;

namespace {

std::string timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto us = std::chrono::duration_cast<std::chrono::microseconds>(now.time_since_epoch()) %
                    std::chrono::seconds(1);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d%02d%02d-%02d%02d%02d.%06d", tm.tm_year + 1900, tm.tm_mon + 1,
                  tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(us.count()));
    return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw DataError("cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw DataError("failed writing " + tmp.string());
    }
    fs::rename(tmp, path);
}

// One run = one directory holding everything the command produced, plus a
// manifest naming each produced file so no output is orphaned.
struct RunContext {
    fs::path dir;
    std::string command;
    json args = json::object();
    uint64_t seed = 0;
    std::vector<std::string> artifacts;
    std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

    RunContext(const fs::path& root, const std::string& cmd) : command(cmd) {
        dir = root / (timestamp_now() + "-" + cmd);
        fs::create_directories(dir);
    }

    void track(const fs::path& p) { artifacts.push_back(p.generic_string()); }

    void track_checkpoint(const fs::path& ckpt_dir) {
        track(ckpt_dir / "manifest.json");
        track(ckpt_dir / "params.bin");
    }

    void write_manifest(const RunConfig& cfg, const fs::path& where) const {
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        json m = {{"command", command},      {"args", args},
                  {"config", cfg.to_json()}, {"seed", seed},
                  {"artifacts", artifacts},  {"tool_version", kToolVersion},
                  {"duration_seconds", secs}};
        write_text_atomic(where / "manifest.json", m.dump(2) + "\n");
    }

    void write_manifest(const RunConfig& cfg) const { write_manifest(cfg, dir); }
};

// Binds a subset of RunConfig fields to long options on one subcommand.
// Resolution order is defaults, then the config file, then any flag the user
// actually passed.
class ConfigBinder {
public:
    explicit ConfigBinder(CLI::App* cmd) : cmd_(cmd) {
        cmd_->add_option("--config", config_path_, "JSON config file (flags override it)");
    }

    void dbl(const std::string& flag, double RunConfig::*member, const std::string& help,
             const std::string& def) {
        auto holder = std::make_shared<double>(base_.*member);
        add(cmd_->add_option(flag, *holder, help)->default_str(def),
            [holder, member](RunConfig& c) { c.*member = *holder; });
    }

    void integer(const std::string& flag, int RunConfig::*member, const std::string& help,
                 const std::string& def) {
        auto holder = std::make_shared<int>(base_.*member);
        add(cmd_->add_option(flag, *holder, help)->default_str(def),
            [holder, member](RunConfig& c) { c.*member = *holder; });
    }

    void str(const std::string& flag, std::string RunConfig::*member, const std::string& help,
             const std::string& def) {
        auto holder = std::make_shared<std::string>(base_.*member);
        add(cmd_->add_option(flag, *holder, help)->default_str(def),
            [holder, member](RunConfig& c) { c.*member = *holder; });
    }

    void optimizer_flags() {
        dbl("--learning-rate", &RunConfig::learning_rate, "peak learning rate", "5e-5");
        integer("--batch-size", &RunConfig::batch_size, "minibatch size", "32");
        dbl("--warmup-fraction", &RunConfig::warmup_fraction, "fraction of steps spent warming up", "0.10");
        dbl("--weight-decay", &RunConfig::weight_decay, "decoupled weight decay", "1e-2");
        dbl("--beta1", &RunConfig::beta1, "first-moment decay", "0.9");
        dbl("--beta2", &RunConfig::beta2, "second-moment decay", "0.999");
        dbl("--adam-epsilon", &RunConfig::adam_epsilon, "optimizer denominator floor", "1e-8");
        integer("--vocab-min-freq", &RunConfig::vocab_min_freq, "min token frequency kept in vocabulary", "1");
    }

    void teacher_shape_flags() {
        integer("--max-tokens", &RunConfig::max_tokens, "max tokens per encoded turn", "512");
        integer("--n-layers", &RunConfig::n_layers, "encoder layers", "2");
        integer("--n-heads", &RunConfig::n_heads, "attention heads", "4");
        integer("--d-hidden", &RunConfig::d_hidden, "hidden width", "128");
        integer("--d-ff", &RunConfig::d_ff, "feed-forward width", "256");
        dbl("--dropout", &RunConfig::dropout, "dropout rate", "0.1");
    }

    void distill_flags() {
        integer("--max-tokens", &RunConfig::max_tokens, "max tokens per encoded turn", "512");
        integer("--max-epochs", &RunConfig::distill_max_epochs, "distillation epoch cap", "100");
        integer("--patience", &RunConfig::patience, "early-stopping patience (dev epochs)", "10");
        dbl("--min-improvement", &RunConfig::min_improvement, "dev-loss improvement threshold", "1e-6");
        dbl("--margin", &RunConfig::margin, "triplet margin", "0.2");
        integer("--p-norm", &RunConfig::p_norm, "triplet distance norm", "2");
        dbl("--temperature", &RunConfig::temperature, "distillation temperature", "1.0");
        integer("--student-layers", &RunConfig::student_layers, "student encoder layers", "1");
        integer("--student-heads", &RunConfig::student_heads, "student attention heads", "4");
        integer("--student-d-hidden", &RunConfig::student_d_hidden, "student hidden width", "64");
        integer("--student-d-ff", &RunConfig::student_d_ff, "student feed-forward width", "128");
        dbl("--student-dropout", &RunConfig::student_dropout, "student dropout rate", "0.1");
    }

    RunConfig resolve() const {
        RunConfig c;
        if (!config_path_.empty()) c.apply_file(config_path_);
        for (const auto& [opt, apply] : appliers_)
            if (opt->count() > 0) apply(c);
        return c;
    }

private:
    void add(CLI::Option* opt, std::function<void(RunConfig&)> apply) {
        appliers_.emplace_back(opt, std::move(apply));
    }

    RunConfig base_;
    CLI::App* cmd_;
    std::string config_path_;
    std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> appliers_;
};

json teacher_dirs_json(const std::vector<std::string>& dirs) {
    json a = json::array();
    for (const auto& d : dirs) a.push_back(d);
    return a;
}

// Maps each checkpoint directory to the task it was fine-tuned on, read from
// the checkpoint manifest without loading tensors.
std::map<Task, std::string> teachers_by_task(const std::vector<std::string>& dirs) {
    std::map<Task, std::string> out;
    for (const auto& dir : dirs) {
        std::ifstream mf(fs::path(dir) / "manifest.json");
        if (!mf) throw DataError("cannot open checkpoint manifest " + dir + "/manifest.json");
        json m;
        mf >> m;
        if (!m.contains("own_task"))
            throw ConfigError("checkpoint " + dir + " does not record which task it was fine-tuned on");
        const Task t = task_from_name(m["own_task"].get<std::string>());
        if (!out.emplace(t, dir).second)
            throw ConfigError("two checkpoints claim task " + task_name(t) + ": " + out[t] + " and " + dir);
    }
    return out;
}

struct SweepGrid {
    std::vector<std::string> tasks = {"id", "sf", "dc"};
    std::vector<std::vector<std::string>> teacher_sets = {{"id"},       {"sf"},       {"dc"},
                                                          {"id", "sf"}, {"id", "dc"}, {"sf", "dc"},
                                                          {"id", "sf", "dc"}};
    std::vector<std::string> loss_sets;  // filled from the resolved config when absent

    static SweepGrid load(const std::string& path) {
        SweepGrid g;
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read grid file " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("grid file " + path + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw ConfigError("grid file must hold a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key == "tasks")
                g.tasks = value.get<std::vector<std::string>>();
            else if (key == "teacher_sets")
                g.teacher_sets = value.get<std::vector<std::vector<std::string>>>();
            else if (key == "loss_sets")
                g.loss_sets = value.get<std::vector<std::string>>();
            else
                throw ConfigError("grid file: unknown key '" + key + "'");
        }
        if (g.tasks.empty() || g.teacher_sets.empty())
            throw ConfigError("grid file: tasks and teacher_sets must be non-empty");
        return g;
    }
};

// Distills one configuration and scores it on the test split; shared between
// `distill` and each `sweep` cell.
struct DistillOutcome {
    DistillResult result;
    fs::path student_dir;
    fs::path history_path;
};

DistillOutcome run_distill(const RunConfig& cfg, const LossConfig& lc, const TeacherEnsemble& ens,
                           const Corpus& corpus, Task task, uint64_t seed, const fs::path& out_dir,
                           RunContext& run) {
    DistillResult res = distill_student(cfg.student_encoder(), ens, corpus, task, lc, cfg.distill(), seed);
    if (!std::isfinite(res.best_dev_loss))
        throw NumericError("distillation diverged: best dev loss is not finite");
    const fs::path student_dir = out_dir / "student";
    fs::create_directories(student_dir);
    save_checkpoint(*res.student, corpus.catalog, res.vocab, student_dir.string(), task);
    run.track_checkpoint(student_dir);
    const fs::path history = out_dir / "history.jsonl";
    write_history(history.string(), res.history);
    run.track(history);
    return {std::move(res), student_dir, history};
}

MetricReport score_checkpoint(const fs::path& ckpt_dir, const Corpus& corpus, const std::string& corpus_label,
                              const std::string& split, Task task, F1Mode mode, int batch_size,
                              uint64_t seed) {
    const LoadedCheckpoint lc = load_checkpoint(ckpt_dir.string());
    EvalOptions opts;
    opts.batch_size = batch_size;
    opts.sf_mode = mode;
    opts.seed = seed;
    opts.checkpoint_label = ckpt_dir.generic_string();
    opts.corpus_label = corpus_label;
    return evaluate(lc, corpus, split, task, opts);
}

int fail_numeric(const std::string& reason) {
    std::cerr << "error: " << reason << std::endl;
    return 4;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-teacher distillation for multi-turn dialogue understanding"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kToolVersion));

    std::string run_root = "runs";
    app.add_option("--run-root", run_root, "directory receiving per-run output folders")
        ->default_str("runs");
    app.fallthrough();

    // ---- gen-data ----------------------------------------------------------
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dialogue corpus");
    uint64_t gen_seed = 1;
    GeneratorSpec spec;
    std::string gen_out;
    gen->add_option("--seed", gen_seed, "rng seed")->default_str("1");
    gen->add_option("--dialogues", spec.n_dialogues, "dialogue count")->default_str("40");
    gen->add_option("--domains", spec.n_domains, "domain count")->default_str("2");
    gen->add_option("--intents-per-domain", spec.intents_per_domain, "intents per domain")->default_str("2");
    gen->add_option("--slot-tags-per-domain", spec.slot_tags_per_domain, "slot tags per domain")
        ->default_str("2");
    gen->add_option("--turns-min", spec.turns_min, "min turns per dialogue")->default_str("1");
    gen->add_option("--turns-max", spec.turns_max, "max turns per dialogue")->default_str("4");
    gen->add_option("--out", gen_out, "output corpus path (default <run-dir>/corpus.json)");

    // ---- train-teacher -----------------------------------------------------
    auto* tt = app.add_subcommand("train-teacher", "fine-tune one teacher on its task");
    uint64_t tt_seed = 1;
    std::string tt_task, tt_corpus, tt_out;
    tt->add_option("--seed", tt_seed, "rng seed")->default_str("1");
    tt->add_option("--task", tt_task, "task to fine-tune: id, sf or dc")->required();
    tt->add_option("--corpus", tt_corpus, "corpus JSON path")->required();
    tt->add_option("--out", tt_out, "checkpoint directory (default <run-dir>/checkpoint)");
    ConfigBinder tt_cfg(tt);
    tt_cfg.optimizer_flags();
    tt_cfg.integer("--epochs", &RunConfig::teacher_epochs, "fine-tuning epochs", "3");
    tt_cfg.teacher_shape_flags();

    // ---- train-probes ------------------------------------------------------
    auto* tp = app.add_subcommand("train-probes", "train a frozen-backbone probe head on a checkpoint");
    uint64_t tp_seed = 1;
    std::string tp_ckpt, tp_target, tp_corpus;
    tp->add_option("--seed", tp_seed, "rng seed")->default_str("1");
    tp->add_option("--checkpoint", tp_ckpt, "teacher checkpoint directory")->required();
    tp->add_option("--target", tp_target, "probe task: id, sf or dc")->required();
    tp->add_option("--corpus", tp_corpus, "corpus JSON path")->required();
    ConfigBinder tp_cfg(tp);
    tp_cfg.optimizer_flags();
    tp_cfg.integer("--epochs", &RunConfig::teacher_epochs, "probe training epochs", "3");

    // ---- distill -----------------------------------------------------------
    auto* ds = app.add_subcommand("distill", "distill a student from frozen teachers");
    uint64_t ds_seed = 1;
    std::string ds_task, ds_corpus;
    std::vector<std::string> ds_teachers;
    ds->add_option("--seed", ds_seed, "rng seed")->default_str("1");
    ds->add_option("--task", ds_task, "student task: id, sf or dc")->required();
    ds->add_option("--corpus", ds_corpus, "corpus JSON path")->required();
    ds->add_option("--teachers", ds_teachers, "comma-separated teacher checkpoint directories")
        ->required()
        ->delimiter(',');
    ConfigBinder ds_cfg(ds);
    ds_cfg.optimizer_flags();
    ds_cfg.str("--losses", &RunConfig::losses, "enabled loss components (csv of kd,sce,sim,rel,tp)",
               "kd,sce,sim,rel");
    ds_cfg.distill_flags();

    // ---- eval --------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "score a checkpoint on one split");
    uint64_t ev_seed = 1;
    std::string ev_ckpt, ev_corpus, ev_task, ev_split = "test", ev_mode = "all_classes";
    int ev_batch = 32;
    ev->add_option("--seed", ev_seed, "rng seed")->default_str("1");
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory")->required();
    ev->add_option("--corpus", ev_corpus, "corpus JSON path")->required();
    ev->add_option("--task", ev_task, "task to score: id, sf or dc")->required();
    ev->add_option("--split", ev_split, "corpus split")->default_str("test");
    ev->add_option("--mode", ev_mode, "slot-filling F1 mode: all_classes or exclude_o")
        ->default_str("all_classes");
    ev->add_option("--batch-size", ev_batch, "scoring batch size")->default_str("32");

    // ---- sweep -------------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "ablation grid over teacher subsets and loss sets");
    uint64_t sw_seed = 1;
    std::string sw_grid, sw_corpus, sw_mode = "all_classes";
    std::vector<std::string> sw_teachers;
    sw->add_option("--seed", sw_seed, "base rng seed; cell i runs at seed+i")->default_str("1");
    sw->add_option("--grid", sw_grid, "grid JSON file (tasks, teacher_sets, loss_sets)");
    sw->add_option("--corpus", sw_corpus, "corpus JSON path")->required();
    sw->add_option("--teachers", sw_teachers, "checkpoint directories covering every task in the grid")
        ->required()
        ->delimiter(',');
    sw->add_option("--mode", sw_mode, "slot-filling F1 mode for cell scoring")->default_str("all_classes");
    ConfigBinder sw_cfg(sw);
    sw_cfg.optimizer_flags();
    sw_cfg.str("--losses", &RunConfig::losses, "loss set used when the grid lists none", "kd,sce,sim,rel");
    sw_cfg.distill_flags();

    // ---- gradcheck ---------------------------------------------------------
    auto* gc = app.add_subcommand("gradcheck", "finite-difference audit of every loss gradient");
    uint64_t gc_seed = 1;
    int gc_coords = 200;
    gc->add_option("--seed", gc_seed, "rng seed")->default_str("1");
    gc->add_option("--coords", gc_coords, "random parameter coordinates to probe per loss")
        ->default_str("200");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }

    try {
        if (app.got_subcommand(gen)) {
            RunContext run(run_root, "gen-data");
            run.seed = gen_seed;
            spec.seed = gen_seed;
            spec.validate();
            const fs::path out = gen_out.empty() ? run.dir / "corpus.json" : fs::path(gen_out);
            const Corpus c = generate_synthetic(spec);
            write_corpus(c, out.string());
            run.track(out);
            run.args = {{"task", "gen-data"},
                        {"out", out.generic_string()},
                        {"dialogues", spec.n_dialogues},
                        {"domains", spec.n_domains},
                        {"intents_per_domain", spec.intents_per_domain},
                        {"slot_tags_per_domain", spec.slot_tags_per_domain},
                        {"turns_min", spec.turns_min},
                        {"turns_max", spec.turns_max}};
            run.write_manifest(RunConfig{});
            std::cout << "wrote " << out.generic_string() << " (" << c.dialogues.size() << " dialogues)\n";
            return 0;
        }

        if (app.got_subcommand(tt)) {
            RunContext run(run_root, "train-teacher");
            run.seed = tt_seed;
            const RunConfig cfg = tt_cfg.resolve();
            const Task task = task_from_name(tt_task);
            const Corpus corpus = load_corpus(tt_corpus);
            const fs::path out = tt_out.empty() ? run.dir / "checkpoint" : fs::path(tt_out);
            fs::create_directories(out);
            const auto res = finetune_teacher(corpus, task, cfg.teacher_encoder(), cfg.fit(), tt_seed,
                                              out.string());
            run.track_checkpoint(out);
            run.track(out / "train_log.jsonl");
            run.args = {{"task", task_name(task)}, {"corpus", tt_corpus}, {"out", out.generic_string()}};
            run.write_manifest(cfg);
            std::cout << "fine-tuned " << task_name(task) << " teacher: " << res.steps << " steps, final loss "
                      << (res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back()) << "\n";
            return 0;
        }

        if (app.got_subcommand(tp)) {
            RunContext run(run_root, "train-probes");
            run.seed = tp_seed;
            const RunConfig cfg = tp_cfg.resolve();
            const Task target = task_from_name(tp_target);
            const Corpus corpus = load_corpus(tp_corpus);
            const auto res = train_probe_heads(tp_ckpt, corpus, target, cfg.fit(), tp_seed);
            run.track_checkpoint(tp_ckpt);
            run.track(fs::path(tp_ckpt) / ("probe_log." + task_name(target) + ".jsonl"));
            run.args = {{"checkpoint", tp_ckpt}, {"target", task_name(target)}, {"corpus", tp_corpus}};
            run.write_manifest(cfg);
            std::cout << "trained " << task_name(target) << " probe: " << res.steps << " steps, final loss "
                      << (res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back()) << "\n";
            return 0;
        }

        if (app.got_subcommand(ds)) {
            RunContext run(run_root, "distill");
            run.seed = ds_seed;
            const RunConfig cfg = ds_cfg.resolve();
            const Task task = task_from_name(ds_task);
            const Corpus corpus = load_corpus(ds_corpus);
            const TeacherEnsemble ens = TeacherEnsemble::load(ds_teachers);
            const LossConfig lc = cfg.loss_config();
            const auto out = run_distill(cfg, lc, ens, corpus, task, ds_seed, run.dir, run);
            run.args = {{"task", task_name(task)},
                        {"corpus", ds_corpus},
                        {"teachers", teacher_dirs_json(ds_teachers)},
                        {"losses", lc.enabled_names()}};
            run.write_manifest(cfg);
            std::cout << "distilled " << task_name(task) << " student: " << out.result.epochs_run
                      << " epochs, best dev loss " << out.result.best_dev_loss << " at epoch "
                      << out.result.best_epoch << "\n";
            return 0;
        }

        if (app.got_subcommand(ev)) {
            RunContext run(run_root, "eval");
            run.seed = ev_seed;
            const Task task = task_from_name(ev_task);
            const F1Mode mode = f1_mode_from_name(ev_mode);
            const Corpus corpus = load_corpus(ev_corpus);
            const MetricReport rep =
                score_checkpoint(ev_ckpt, corpus, ev_corpus, ev_split, task, mode, ev_batch, ev_seed);
            const fs::path report = run.dir / "report.json";
            write_text_atomic(report, rep.to_json().dump(2) + "\n");
            run.track(report);
            run.args = {{"checkpoint", ev_ckpt}, {"corpus", ev_corpus},      {"task", task_name(task)},
                        {"split", ev_split},     {"mode", f1_mode_name(mode)}, {"batch_size", ev_batch}};
            run.write_manifest(RunConfig{});
            std::cout << task_name(task) << " " << ev_split << " " << rep.metric << " = " << rep.value
                      << " (n=" << rep.n << ")\n";
            return 0;
        }

        if (app.got_subcommand(sw)) {
            RunContext run(run_root, "sweep");
            run.seed = sw_seed;
            const RunConfig cfg = sw_cfg.resolve();
            const F1Mode mode = f1_mode_from_name(sw_mode);
            SweepGrid grid = sw_grid.empty() ? SweepGrid{} : SweepGrid::load(sw_grid);
            if (grid.loss_sets.empty()) grid.loss_sets = {cfg.losses};
            const Corpus corpus = load_corpus(sw_corpus);
            const auto by_task = teachers_by_task(sw_teachers);

            json summary = json::array();
            int cell_index = 0;
            for (const auto& task_str : grid.tasks) {
                const Task task = task_from_name(task_str);
                for (const auto& tset : grid.teacher_sets) {
                    std::vector<std::string> dirs;
                    for (const auto& t : tset) {
                        const Task tt2 = task_from_name(t);
                        const auto it = by_task.find(tt2);
                        if (it == by_task.end())
                            throw ConfigError("grid needs a " + task_name(tt2) +
                                              " teacher but --teachers provides none");
                        dirs.push_back(it->second);
                    }
                    for (const auto& lset : grid.loss_sets) {
                        const uint64_t cell_seed = sw_seed + static_cast<uint64_t>(cell_index);
                        char cell_name[32];
                        std::snprintf(cell_name, sizeof cell_name, "cell-%03d", cell_index);
                        RunContext cell(run.dir, "");
                        cell.dir = run.dir / cell_name;
                        fs::create_directories(cell.dir);
                        cell.command = "distill";
                        cell.seed = cell_seed;

                        RunConfig cell_cfg = cfg;
                        cell_cfg.losses = lset;
                        LossConfig lc = cell_cfg.loss_config();
                        // Relation voting cannot break ties between exactly
                        // two teachers, so those cells drop it.
                        if (dirs.size() == 2 && lc.rel) lc.rel = false;
                        lc.validate();
                        cell_cfg.losses = lc.enabled_names();

                        const TeacherEnsemble ens = TeacherEnsemble::load(dirs);
                        const auto out =
                            run_distill(cell_cfg, lc, ens, corpus, task, cell_seed, cell.dir, cell);
                        const MetricReport rep = score_checkpoint(out.student_dir, corpus, sw_corpus, "test",
                                                                  task, mode, cell_cfg.batch_size, cell_seed);
                        const fs::path report = cell.dir / "report.json";
                        write_text_atomic(report, rep.to_json().dump(2) + "\n");
                        cell.track(report);
                        cell.args = {{"task", task_name(task)},
                                     {"corpus", sw_corpus},
                                     {"teachers", teacher_dirs_json(dirs)},
                                     {"losses", cell_cfg.losses},
                                     {"cell_index", cell_index}};
                        cell.write_manifest(cell_cfg);

                        summary.push_back({{"cell", cell_name},
                                           {"cell_index", cell_index},
                                           {"task", task_name(task)},
                                           {"teachers", tset},
                                           {"losses", cell_cfg.losses},
                                           {"seed", cell_seed},
                                           {"metric", rep.metric},
                                           {"value", rep.value}});
                        std::cout << cell_name << " " << task_name(task) << " teachers=" << dirs.size()
                                  << " losses=" << cell_cfg.losses << " " << rep.metric << " = " << rep.value
                                  << "\n";
                        ++cell_index;
                    }
                }
            }
            const fs::path sum_path = run.dir / "summary.json";
            write_text_atomic(sum_path, summary.dump(2) + "\n");
            run.track(sum_path);
            run.args = {{"grid", sw_grid.empty() ? "<built-in>" : sw_grid},
                        {"corpus", sw_corpus},
                        {"teachers", teacher_dirs_json(sw_teachers)},
                        {"cells", cell_index}};
            run.write_manifest(cfg);
            std::cout << "sweep finished: " << cell_index << " cells\n";
            return 0;
        }

        if (app.got_subcommand(gc)) {
            RunContext run(run_root, "gradcheck");
            run.seed = gc_seed;
            if (gc_coords < 1) throw ConfigError("gradcheck needs --coords >= 1");
            const auto reports = per_loss_gradcheck(gc_seed, gc_coords);
            json out = json::array();
            bool ok = true;
            std::string worst;
            for (const auto& [name, rep] : reports) {
                std::printf("%-4s max rel err %.3e over %zu coordinates (%zu skipped as zero)\n",
                            name.c_str(), rep.max_rel_err, rep.checked, rep.skipped);
                out.push_back({{"loss", name},
                               {"max_rel_err", rep.max_rel_err},
                               {"checked", rep.checked},
                               {"skipped", rep.skipped}});
                if (!(rep.max_rel_err < 1e-4)) {
                    ok = false;
                    worst = name;
                }
            }
            const fs::path report = run.dir / "gradcheck.json";
            write_text_atomic(report, out.dump(2) + "\n");
            run.track(report);
            run.args = {{"coords", gc_coords}};
            run.write_manifest(RunConfig{});
            if (!ok)
                return fail_numeric("gradient check failed: loss '" + worst +
                                    "' exceeds max relative error 1e-4");
            return 0;
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 4;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 2;
    }
    return 0;
}
