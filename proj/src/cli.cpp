#include "iocseq/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "iocseq/common.hpp"
#include "iocseq/evalkit.hpp"
#include "iocseq/explain.hpp"
#include "iocseq/forest.hpp"
#include "iocseq/kernels.hpp"
#include "iocseq/models.hpp"
#include "iocseq/pretrain.hpp"
#include "iocseq/synthgen.hpp"
#include "iocseq/telemetry.hpp"
#include "iocseq/trainer.hpp"

namespace iocseq::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// run manifest
// ---------------------------------------------------------------------------

class Manifest {
public:
    Manifest(std::string command, std::string path)
        : command_(std::move(command)), path_(std::move(path)),
          start_(std::chrono::steady_clock::now()) {}

    void config(const std::string& key, const json& value) { config_[key] = value; }
    void seed(uint64_t s) { seed_ = s; }

    void input(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f.good()) return;
        std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        inputs_[path] = to_hex(fnv1a64(bytes.data(), bytes.size()));
    }

    void artifact(const std::string& path) { artifacts_.push_back(path); }
    void error(const std::string& message) { error_ = message; }

    void write() const {
        if (path_.empty()) return;
        json j;
        j["command"] = command_;
        j["config"] = config_;
        j["seed"] = seed_;
        j["input_hashes"] = inputs_;
        j["artifacts"] = artifacts_;
        j["wall_clock_sec"] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        j["version"] = kVersion;
        if (error_) j["error"] = *error_;
        std::ofstream f(path_, std::ios::trunc);
        if (f.good()) f << j.dump(2) << "\n";
    }

private:
    std::string command_;
    std::string path_;
    std::chrono::steady_clock::time_point start_;
    json config_ = json::object();
    uint64_t seed_ = 0;
    std::map<std::string, std::string> inputs_;
    std::vector<std::string> artifacts_;
    std::optional<std::string> error_;
};

uint64_t env_seed_default() {
    if (const char* env = std::getenv("IOCSEQ_SEED")) {
        try {
            return std::stoull(env);
        } catch (...) {
            fail("IOCSEQ_SEED is not an integer: ", env);
        }
    }
    return 0;
}

std::string manifest_path_for(const std::string& out) { return out + ".manifest.json"; }

// shared loading steps ------------------------------------------------------

telemetry::EventVocabulary vocab_for_model(const std::string& model_path,
                                           const std::string& vocab_flag) {
    std::string path = vocab_flag;
    if (path.empty()) path = model_path + ".vocab";
    require(fs::exists(path), "vocabulary file '", path,
            "' not found (pass --vocab or keep the .vocab file next to the checkpoint)");
    return telemetry::EventVocabulary::load(path);
}

struct LoadedData {
    std::vector<telemetry::RawRecord> raw;
    std::vector<telemetry::IntervalRecord> records;
    std::vector<telemetry::WindowInstance> windows;
};

LoadedData load_windows(const std::string& data_path, const telemetry::EventVocabulary& vocab,
                        int w, int stride) {
    LoadedData out;
    out.raw = telemetry::parse_log_file(data_path);
    out.records = telemetry::encode_records(out.raw, vocab);
    out.windows = telemetry::windowize(out.records, w, stride);
    return out;
}

json eval_summary(const evalkit::ScoredDataset& scored, const std::string& task,
                  const std::string& model_path, const std::vector<std::string>& classes) {
    json j;
    j["task"] = task;
    j["model"] = model_path;
    j["acc"] = evalkit::accuracy(scored);
    const evalkit::MacroAuc mauc = evalkit::macro_auc(scored, static_cast<int>(classes.size()));
    j["macro_auc"] = mauc.value;
    json per_class = json::object();
    for (const auto& [cls, value] : mauc.per_class) per_class[classes[static_cast<size_t>(cls)]] = value;
    j["per_class_auc"] = per_class;
    json skipped = json::array();
    for (int cls : mauc.skipped_classes) skipped.push_back(classes[static_cast<size_t>(cls)]);
    j["skipped_classes"] = skipped;
    return j;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "cannot open '", path, "' for writing");
    f << text;
    require(f.good(), "write failed for '", path, "'");
}

// ---------------------------------------------------------------------------
// subcommand implementations (each returns the primary output path)
// ---------------------------------------------------------------------------

struct GenArgs {
    std::string scenario, out;
    std::optional<uint64_t> seed;
};

void run_gen(const GenArgs& a, Manifest& man) {
    synthgen::ScenarioConfig cfg =
        a.scenario.empty() ? synthgen::default_scenario() : synthgen::load_scenario(a.scenario);
    if (!a.scenario.empty()) man.input(a.scenario);
    if (a.seed) cfg.seed = *a.seed;
    man.seed(cfg.seed);
    auto records = synthgen::generate(cfg);
    telemetry::write_log_file(records, a.out);
    man.artifact(a.out);
    std::cout << "wrote " << records.size() << " intervals to " << a.out << "\n";
}

struct TrainArgs {
    std::string task = "family", arch = "transformer", preset = "desk";
    std::string data, out, init, vocab_path, log_path;
    int epochs = 20, batch = 64, w = 21, stride = 1;
    uint64_t seed = 0;
    std::optional<int> per_class_n;
};

void run_train(const TrainArgs& a, Manifest& man) {
    man.input(a.data);
    man.seed(a.seed);
    auto raw = telemetry::parse_log_file(a.data);
    telemetry::EventVocabulary vocab = a.vocab_path.empty()
                                           ? telemetry::build_vocabulary(raw)
                                           : telemetry::EventVocabulary::load(a.vocab_path);
    if (!a.vocab_path.empty()) man.input(a.vocab_path);
    auto records = telemetry::encode_records(raw, vocab);
    auto windows = telemetry::windowize(records, a.w, a.stride);
    trainer::LabeledWindows data = trainer::select_labeled(windows, a.task);
    require(data.class_names.size() >= 2, "train: fewer than 2 classes in ", a.data);

    trainer::TrainConfig cfg;
    cfg.task = a.task;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    cfg.per_class_cap = a.per_class_n;

    models::Model model;
    if (a.arch == "forest") {
        forest::ForestConfig fc;
        fc.seed = a.seed;
        std::vector<std::vector<float>> X;
        for (const auto& inst : data.instances)
            X.push_back(forest::featurize_window(inst, vocab.size()));
        forest::ForestModel fm =
            forest::fit_forest(fc, X, data.labels, static_cast<int>(data.class_names.size()));
        fm.class_names = data.class_names;
        fm.task = a.task;
        fm.vocab_hash = vocab.hash();
        fm.window_width = a.w;
        forest::save_forest(fm, a.out);
    } else {
        models::ArchitectureConfig ac = models::ArchitectureConfig::make(
            models::arch_from_name(a.arch), a.preset, vocab.size(),
            static_cast<int64_t>(data.class_names.size()));
        if (!a.init.empty()) {
            man.input(a.init);
            models::Model pre = models::load_model(a.init);
            model = pretrain::transfer_weights(pre, ac, vocab.hash(), a.seed);
        } else {
            model = models::build_model(ac, vocab.hash(), a.seed);
        }
        trainer::TrainResult result = trainer::train(cfg, std::move(model), data);
        models::save_model(result.model, a.out);
        const std::string log_path = a.log_path.empty() ? a.out + ".trainlog.jsonl" : a.log_path;
        trainer::write_train_log(result.log, log_path);
        man.artifact(log_path);
    }
    vocab.save(a.out + ".vocab");
    man.artifact(a.out);
    man.artifact(a.out + ".vocab");
    std::cout << "trained " << a.arch << " on " << data.instances.size() << " windows, saved to "
              << a.out << "\n";
}

struct PretrainArgs {
    std::string data, out, arch = "transformer", preset = "desk", vocab_path;
    int epochs = 5, batch = 64, w = 21, stride = 1;
    bool require_adjacent = false;
    uint64_t seed = 0;
};

void run_pretrain(const PretrainArgs& a, Manifest& man) {
    man.input(a.data);
    man.seed(a.seed);
    auto raw = telemetry::parse_log_file(a.data);
    telemetry::EventVocabulary vocab = a.vocab_path.empty()
                                           ? telemetry::build_vocabulary(raw)
                                           : telemetry::EventVocabulary::load(a.vocab_path);
    if (!a.vocab_path.empty()) man.input(a.vocab_path);
    auto records = telemetry::encode_records(raw, vocab);
    auto pairs = pretrain::make_pretrain_pairs(records, a.w, a.stride, a.require_adjacent);
    require(!pairs.empty(), "pretrain: no usable pairs in ", a.data, " at w=", a.w);

    models::ArchitectureConfig ac = models::ArchitectureConfig::make(
        models::arch_from_name(a.arch), a.preset, vocab.size(), 2 /* replaced by |V|-2 head */);
    pretrain::PretrainConfig cfg;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    pretrain::PretrainResult result = pretrain::pretrain(ac, vocab.hash(), pairs, cfg);
    models::save_model(result.model, a.out);
    trainer::write_train_log(result.log, a.out + ".trainlog.jsonl");
    vocab.save(a.out + ".vocab");
    man.artifact(a.out);
    man.artifact(a.out + ".vocab");
    man.artifact(a.out + ".trainlog.jsonl");
    std::cout << "pretrained on " << pairs.size() << " pairs, saved to " << a.out << "\n";
}

struct EvalArgs {
    std::string model, data, out, curves_path, vocab_path;
    int stride = 1;
    uint64_t seed = 0;
};

void run_eval(const EvalArgs& a, Manifest& man) {
    man.input(a.model);
    man.input(a.data);
    man.seed(a.seed);
    nd::Checkpoint ckpt = nd::load_checkpoint(a.model);
    telemetry::EventVocabulary vocab = vocab_for_model(a.model, a.vocab_path);
    const std::string task = ckpt.meta("task");
    const int w = std::stoi(ckpt.meta("w"));
    LoadedData data = load_windows(a.data, vocab, w, a.stride);

    evalkit::ScoredDataset scored;
    std::vector<std::string> classes;
    if (ckpt.meta_or("arch", "") == "forest") {
        forest::ForestModel fm = forest::forest_from_checkpoint(ckpt);
        require(fm.vocab_hash == vocab.hash(), "eval: vocabulary hash mismatch");
        trainer::LabeledWindows lw = trainer::select_labeled(data.windows, task, fm.class_names);
        scored = evalkit::score_forest(fm, lw);
        classes = fm.class_names;
    } else {
        models::Model model = models::model_from_checkpoint(ckpt);
        require(model.vocab_hash == vocab.hash(), "eval: vocabulary hash mismatch");
        trainer::LabeledWindows lw = trainer::select_labeled(data.windows, task, model.class_names);
        scored = evalkit::score_model(model, lw);
        classes = model.class_names;
    }
    json report = eval_summary(scored, task, a.model, classes);
    if (!a.curves_path.empty()) {
        std::map<std::string, evalkit::ClassCurves> per_class;
        for (size_t c = 0; c < classes.size(); ++c) {
            bool pos = false, neg = false;
            for (const auto& s : scored) (s.true_class == static_cast<int>(c) ? pos : neg) = true;
            if (pos && neg)
                per_class[classes[c]] =
                    evalkit::curves(scored, static_cast<int>(c), 30, a.seed);
        }
        evalkit::export_curves_csv(per_class, a.curves_path);
        man.artifact(a.curves_path);
        report["curves_csv"] = a.curves_path;
    }
    write_text(a.out, report.dump(2) + "\n");
    man.artifact(a.out);
    std::cout << report.dump(2) << "\n";
}

struct GridArgs {
    std::string arch = "transformer", data, task = "family", out, grid_json, vocab_path;
    int folds = 5, limit = 0, epochs = 5, batch = 64, w = 21, stride = 1;
    uint64_t seed = 0;
};

void run_grid(const GridArgs& a, Manifest& man) {
    man.input(a.data);
    man.seed(a.seed);
    auto raw = telemetry::parse_log_file(a.data);
    telemetry::EventVocabulary vocab = a.vocab_path.empty()
                                           ? telemetry::build_vocabulary(raw)
                                           : telemetry::EventVocabulary::load(a.vocab_path);
    auto records = telemetry::encode_records(raw, vocab);
    auto windows = telemetry::windowize(records, a.w, a.stride);
    trainer::LabeledWindows data = trainer::select_labeled(windows, a.task);

    trainer::GridSpec spec = trainer::GridSpec::table_defaults(a.arch);
    if (!a.grid_json.empty()) {
        man.input(a.grid_json);
        std::ifstream f(a.grid_json);
        require(f.good(), "grid: cannot open '", a.grid_json, "'");
        std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
        spec = trainer::GridSpec::from_json(text);
    }
    std::vector<trainer::GridPoint> points = trainer::enumerate_grid(
        spec, vocab.size(), static_cast<int64_t>(data.class_names.size()));
    if (a.limit > 0 && static_cast<size_t>(a.limit) < points.size())
        points.resize(static_cast<size_t>(a.limit));

    trainer::TrainConfig base;
    base.task = a.task;
    base.epochs = a.epochs;
    base.batch_size = a.batch;
    base.seed = a.seed;
    trainer::GridSearchResult result =
        trainer::grid_search(points, data, a.folds, base, vocab.hash(), vocab.size());

    json j;
    j["arch"] = a.arch;
    j["folds"] = a.folds;
    j["best_index"] = result.best_index;
    j["best"] = json::parse(result.scores[static_cast<size_t>(result.best_index)].point.describe());
    json scores = json::array();
    for (const auto& s : result.scores) {
        scores.push_back({{"point", json::parse(s.point.describe())},
                          {"mean_val_acc", s.mean_val_acc},
                          {"fold_acc", s.fold_acc}});
    }
    j["scores"] = scores;
    write_text(a.out, j.dump(2) + "\n");
    man.artifact(a.out);
    std::cout << "grid: best point " << result.best_index << " with mean val acc "
              << result.scores[static_cast<size_t>(result.best_index)].mean_val_acc << "\n";
}

struct AtNArgs {
    std::string train_path, test_path, arch = "transformer", preset = "desk", task = "family";
    std::string init, out, n_list = "10,50,100,all";
    int repeats = 5, epochs = 20, batch = 64, w = 21, stride = 1;
    uint64_t seed = 0;
};

void run_at_n(const AtNArgs& a, Manifest& man) {
    man.input(a.train_path);
    man.input(a.test_path);
    man.seed(a.seed);
    auto raw_train = telemetry::parse_log_file(a.train_path);
    telemetry::EventVocabulary vocab = telemetry::build_vocabulary(raw_train);
    auto train_windows =
        telemetry::windowize(telemetry::encode_records(raw_train, vocab), a.w, a.stride);
    auto raw_test = telemetry::parse_log_file(a.test_path);
    auto test_windows =
        telemetry::windowize(telemetry::encode_records(raw_test, vocab), a.w, a.stride);
    trainer::LabeledWindows train_data = trainer::select_labeled(train_windows, a.task);
    trainer::LabeledWindows test_data =
        trainer::select_labeled(test_windows, a.task, train_data.class_names);

    evalkit::AtNConfig cfg;
    for (const auto& tok : [&] {
             std::vector<std::string> parts;
             std::string cur;
             for (char c : a.n_list + ",") {
                 if (c == ',') {
                     if (!cur.empty()) parts.push_back(cur);
                     cur.clear();
                 } else cur.push_back(c);
             }
             return parts;
         }()) {
        if (tok == "all") cfg.n_values.push_back(std::nullopt);
        else cfg.n_values.push_back(std::stoi(tok));
    }
    cfg.repeats = a.repeats;
    cfg.seed = a.seed;
    cfg.base.task = a.task;
    cfg.base.epochs = a.epochs;
    cfg.base.batch_size = a.batch;
    cfg.base.seed = a.seed;

    models::ArchitectureConfig ac = models::ArchitectureConfig::make(
        models::arch_from_name(a.arch), a.preset, vocab.size(),
        static_cast<int64_t>(train_data.class_names.size()));
    std::optional<models::Model> pre;
    if (!a.init.empty()) {
        man.input(a.init);
        pre = models::load_model(a.init);
    }
    auto rows = evalkit::at_n_protocol(cfg, ac, train_data, test_data, vocab.hash(),
                                       pre ? &*pre : nullptr);
    write_text(a.out, evalkit::at_n_table_json(rows) + "\n");
    man.artifact(a.out);
    std::cout << evalkit::at_n_table_json(rows) << "\n";
}

struct SweepArgs {
    std::string data, task = "family", arch = "transformer", preset = "desk", out;
    int step = 1, epochs = 5, batch = 64, stride = 2;
    uint64_t seed = 0;
};

void run_sweep(const SweepArgs& a, Manifest& man) {
    man.input(a.data);
    man.seed(a.seed);
    auto raw = telemetry::parse_log_file(a.data);
    telemetry::EventVocabulary vocab = telemetry::build_vocabulary(raw);
    auto records = telemetry::encode_records(raw, vocab);
    trainer::TrainConfig base;
    base.task = a.task;
    base.epochs = a.epochs;
    base.batch_size = a.batch;
    base.seed = a.seed;
    models::ArchitectureConfig tmpl = models::ArchitectureConfig::make(
        models::arch_from_name(a.arch), a.preset, vocab.size(), 2);
    auto rows = trainer::window_width_sweep(records, trainer::sweep_widths(a.step), tmpl, base,
                                            vocab.hash(), a.stride);
    json j = json::array();
    for (const auto& r : rows) j.push_back({{"w", r.width}, {"accuracy", r.accuracy}});
    write_text(a.out, j.dump(2) + "\n");
    man.artifact(a.out);
    std::cout << j.dump(2) << "\n";
}

struct ExplainArgs {
    std::string model, data, select, target_class, out, vocab_path;
    int steps = 300;
    int stride = 1;
};

void run_explain(const ExplainArgs& a, Manifest& man) {
    man.input(a.model);
    man.input(a.data);
    nd::Checkpoint ckpt = nd::load_checkpoint(a.model);
    require(ckpt.meta_or("arch", "") != "forest",
            "explain: random-forest models are not differentiable");
    models::Model model = models::model_from_checkpoint(ckpt);
    telemetry::EventVocabulary vocab = vocab_for_model(a.model, a.vocab_path);
    require(model.vocab_hash == vocab.hash(), "explain: vocabulary hash mismatch");
    LoadedData data = load_windows(a.data, vocab, model.window_width, a.stride);

    // --select org,user,ts
    std::string org, user;
    int64_t ts = 0;
    {
        const size_t c1 = a.select.find(',');
        const size_t c2 = a.select.rfind(',');
        require(c1 != std::string::npos && c2 != c1, "explain: --select must be org,user,ts");
        org = a.select.substr(0, c1);
        user = a.select.substr(c1 + 1, c2 - c1 - 1);
        ts = std::stoll(a.select.substr(c2 + 1));
    }
    const telemetry::WindowInstance* target_inst = nullptr;
    for (const auto& inst : data.windows)
        if (inst.key.org_id == org && inst.key.user_id == user && inst.key.ts == ts)
            target_inst = &inst;
    require(target_inst != nullptr, "explain: no window ending at (", org, ",", user, ",", ts,
            ")");

    explain::IGConfig cfg;
    cfg.steps = a.steps;
    cfg.target_class = -1;
    for (size_t c = 0; c < model.class_names.size(); ++c)
        if (model.class_names[c] == a.target_class) cfg.target_class = static_cast<int>(c);
    if (cfg.target_class < 0) {
        try {
            cfg.target_class = std::stoi(a.target_class);
        } catch (...) {
            fail("explain: unknown target class '", a.target_class, "'");
        }
    }
    explain::AttributionReport report = explain::integrated_gradients(model, *target_inst, cfg);
    write_text(a.out, explain::report_to_json(report, vocab) + "\n");
    man.artifact(a.out);
    std::cout << explain::render_report_text(report, vocab);
}

struct ExplainFamilyArgs {
    std::string model, data, class_name, out, vocab_path;
    int steps = 100;
    int stride = 1;
};

void run_explain_family(const ExplainFamilyArgs& a, Manifest& man) {
    man.input(a.model);
    man.input(a.data);
    nd::Checkpoint ckpt = nd::load_checkpoint(a.model);
    require(ckpt.meta_or("arch", "") != "forest",
            "explain-family: random-forest models are not differentiable");
    models::Model model = models::model_from_checkpoint(ckpt);
    telemetry::EventVocabulary vocab = vocab_for_model(a.model, a.vocab_path);
    require(model.vocab_hash == vocab.hash(), "explain-family: vocabulary hash mismatch");
    LoadedData data = load_windows(a.data, vocab, model.window_width, a.stride);

    int class_id = -1;
    for (size_t c = 0; c < model.class_names.size(); ++c)
        if (model.class_names[c] == a.class_name) class_id = static_cast<int>(c);
    require(class_id >= 0, "explain-family: unknown class '", a.class_name, "'");

    explain::IGConfig cfg;
    cfg.steps = a.steps;
    cfg.target_class = class_id;
    explain::FamilyImportance fam =
        explain::family_importance(model, vocab, data.windows, class_id, cfg);
    write_text(a.out, explain::family_to_json(fam) + "\n");
    man.artifact(a.out);
    std::cout << explain::render_family_text(fam);
}

struct ReproduceArgs {
    std::string config, outdir;
    uint64_t seed = 0;
};

void run_reproduce(const ReproduceArgs& a, Manifest& man);

// ---------------------------------------------------------------------------
// argument wiring
// ---------------------------------------------------------------------------

// merges --config FILE JSON entries as defaults for flags not given explicitly
std::vector<std::string> merge_config_file(const std::vector<std::string>& args) {
    std::string config_path;
    std::vector<std::string> out;
    for (size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
            ++i;
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        } else {
            out.push_back(args[i]);
        }
    }
    if (config_path.empty()) return out;
    std::ifstream f(config_path);
    require(f.good(), "cannot open config file '", config_path, "'");
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        fail("config file '", config_path, "': ", e.what());
    }
    std::set<std::string> given;
    for (const auto& t : out) {
        if (t.rfind("--", 0) == 0) given.insert(t.substr(2, t.find('=') - 2));
    }
    for (const auto& [key, value] : j.items()) {
        if (given.count(key)) continue;  // explicit flags win
        out.push_back("--" + key);
        if (value.is_boolean()) {
            if (!value.get<bool>()) out.pop_back();
            continue;
        }
        out.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"malware behavior classification from network event sequences"};
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "worker threads for parallel kernels (0 = hardware)");

    const uint64_t seed_default = env_seed_default();

    GenArgs gen;
    gen.seed = std::nullopt;
    auto* cmd_gen = app.add_subcommand("gen", "generate synthetic telemetry from a scenario");
    cmd_gen->add_option("--scenario", gen.scenario, "scenario JSON (omit for the shipped default)");
    cmd_gen->add_option("--out", gen.out, "output telemetry JSONL")->required();
    uint64_t gen_seed = seed_default;
    auto* gen_seed_opt = cmd_gen->add_option("--seed", gen_seed, "override the scenario seed");

    std::string scen_out;
    auto* cmd_scenario = app.add_subcommand("scenario", "write the shipped default scenario");
    cmd_scenario->add_option("--out", scen_out, "output scenario JSON")->required();

    std::string vocab_data, vocab_out;
    auto* cmd_vocab = app.add_subcommand("vocab", "build an event vocabulary from telemetry");
    cmd_vocab->add_option("--data", vocab_data, "telemetry JSONL")->required();
    cmd_vocab->add_option("--out", vocab_out, "output vocabulary file")->required();

    PretrainArgs pre;
    pre.seed = seed_default;
    auto* cmd_pre = app.add_subcommand("pretrain", "unsupervised next-event-set pre-training");
    cmd_pre->add_option("--data", pre.data)->required();
    cmd_pre->add_option("--arch", pre.arch);
    cmd_pre->add_option("--preset", pre.preset);
    cmd_pre->add_option("--epochs", pre.epochs);
    cmd_pre->add_option("--batch", pre.batch);
    cmd_pre->add_option("--w", pre.w);
    cmd_pre->add_option("--stride", pre.stride);
    cmd_pre->add_flag("--require-adjacent", pre.require_adjacent,
                      "only adjacent 5-minute buckets qualify as successors");
    cmd_pre->add_option("--seed", pre.seed);
    cmd_pre->add_option("--vocab", pre.vocab_path);
    cmd_pre->add_option("--out", pre.out)->required();

    TrainArgs tr;
    tr.seed = seed_default;
    auto* cmd_train = app.add_subcommand("train", "supervised training");
    cmd_train->add_option("--task", tr.task, "threat_id | family | category");
    cmd_train->add_option("--arch", tr.arch, "lstm | cnn | transformer | forest");
    cmd_train->add_option("--preset", tr.preset, "paper | desk");
    cmd_train->add_option("--data", tr.data)->required();
    cmd_train->add_option("--init", tr.init, "pretrained checkpoint to transfer from");
    int per_class_n = 0;
    auto* pcn_opt = cmd_train->add_option("--per-class-n", per_class_n,
                                          "cap training instances per class");
    cmd_train->add_option("--epochs", tr.epochs);
    cmd_train->add_option("--batch", tr.batch);
    cmd_train->add_option("--w", tr.w);
    cmd_train->add_option("--stride", tr.stride);
    cmd_train->add_option("--seed", tr.seed);
    cmd_train->add_option("--vocab", tr.vocab_path);
    cmd_train->add_option("--log", tr.log_path, "training log JSONL path");
    cmd_train->add_option("--out", tr.out)->required();

    GridArgs gr;
    gr.seed = seed_default;
    auto* cmd_grid = app.add_subcommand("grid", "cross-validated grid search");
    cmd_grid->add_option("--arch", gr.arch, "lstm | cnn | transformer | rf");
    cmd_grid->add_option("--data", gr.data)->required();
    cmd_grid->add_option("--task", gr.task);
    cmd_grid->add_option("--folds", gr.folds);
    cmd_grid->add_option("--grid-json", gr.grid_json, "explicit parameter ranges");
    cmd_grid->add_option("--limit", gr.limit, "evaluate only the first N grid points");
    cmd_grid->add_option("--epochs", gr.epochs);
    cmd_grid->add_option("--batch", gr.batch);
    cmd_grid->add_option("--w", gr.w);
    cmd_grid->add_option("--stride", gr.stride);
    cmd_grid->add_option("--seed", gr.seed);
    cmd_grid->add_option("--vocab", gr.vocab_path);
    cmd_grid->add_option("--out", gr.out)->required();

    EvalArgs ev;
    ev.seed = seed_default;
    auto* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint on telemetry");
    cmd_eval->add_option("--model", ev.model)->required();
    cmd_eval->add_option("--data", ev.data)->required();
    cmd_eval->add_option("--out", ev.out)->required();
    cmd_eval->add_option("--curves", ev.curves_path, "export ROC/PR curves CSV");
    cmd_eval->add_option("--vocab", ev.vocab_path);
    cmd_eval->add_option("--stride", ev.stride);
    cmd_eval->add_option("--seed", ev.seed);

    AtNArgs an;
    an.seed = seed_default;
    auto* cmd_atn = app.add_subcommand("at-n", "few-shot acc@n / AUC@n protocol");
    cmd_atn->add_option("--train", an.train_path)->required();
    cmd_atn->add_option("--test", an.test_path)->required();
    cmd_atn->add_option("--arch", an.arch);
    cmd_atn->add_option("--preset", an.preset);
    cmd_atn->add_option("--task", an.task);
    cmd_atn->add_option("--init", an.init, "pretrained checkpoint to transfer from");
    cmd_atn->add_option("--n", an.n_list, "comma list of n values (default 10,50,100,all)");
    cmd_atn->add_option("--repeats", an.repeats);
    cmd_atn->add_option("--epochs", an.epochs);
    cmd_atn->add_option("--batch", an.batch);
    cmd_atn->add_option("--w", an.w);
    cmd_atn->add_option("--stride", an.stride);
    cmd_atn->add_option("--seed", an.seed);
    cmd_atn->add_option("--out", an.out)->required();

    SweepArgs sw;
    sw.seed = seed_default;
    auto* cmd_sweep = app.add_subcommand("sweep", "window width sweep (w = 3..41)");
    cmd_sweep->add_option("--data", sw.data)->required();
    cmd_sweep->add_option("--task", sw.task);
    cmd_sweep->add_option("--arch", sw.arch);
    cmd_sweep->add_option("--preset", sw.preset);
    cmd_sweep->add_option("--step", sw.step, "width step (endpoints always included)");
    cmd_sweep->add_option("--epochs", sw.epochs);
    cmd_sweep->add_option("--batch", sw.batch);
    cmd_sweep->add_option("--stride", sw.stride);
    cmd_sweep->add_option("--seed", sw.seed);
    cmd_sweep->add_option("--out", sw.out)->required();

    ExplainArgs ex;
    auto* cmd_explain = app.add_subcommand("explain",
                                           "integrated-gradients report for one instance");
    cmd_explain->add_option("--model", ex.model)->required();
    cmd_explain->add_option("--data", ex.data)->required();
    cmd_explain->add_option("--select", ex.select, "org,user,ts of the window's final interval")
        ->required();
    cmd_explain->add_option("--target-class", ex.target_class, "class name or id")->required();
    cmd_explain->add_option("--steps", ex.steps, "Riemann steps m");
    cmd_explain->add_option("--stride", ex.stride);
    cmd_explain->add_option("--vocab", ex.vocab_path);
    cmd_explain->add_option("--out", ex.out)->required();

    ExplainFamilyArgs ef;
    auto* cmd_family = app.add_subcommand("explain-family",
                                          "aggregated importance over positive classifications");
    cmd_family->add_option("--model", ef.model)->required();
    cmd_family->add_option("--data", ef.data)->required();
    cmd_family->add_option("--class", ef.class_name, "class name")->required();
    cmd_family->add_option("--steps", ef.steps);
    cmd_family->add_option("--stride", ef.stride);
    cmd_family->add_option("--vocab", ef.vocab_path);
    cmd_family->add_option("--out", ef.out)->required();

    ReproduceArgs rp;
    rp.seed = seed_default;
    auto* cmd_repro = app.add_subcommand("reproduce",
                                         "end-to-end pipeline: gen, pretrain, train, eval, explain");
    cmd_repro->add_option("--config", rp.config, "pipeline config JSON (optional)");
    cmd_repro->add_option("--seed", rp.seed);
    cmd_repro->add_option("--outdir", rp.outdir)->required();

    std::vector<std::string> merged;
    try {
        merged = merge_config_file(args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    // CLI11 parses tokens back to front
    std::vector<std::string> rev(merged.rbegin(), merged.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    }

    nd::kernels::set_parallel(true);
    if (threads > 0) nd::kernels::set_threads(threads);

    std::string command, out_path;
    if (cmd_gen->parsed()) command = "gen", out_path = gen.out;
    if (cmd_scenario->parsed()) command = "scenario", out_path = scen_out;
    if (cmd_vocab->parsed()) command = "vocab", out_path = vocab_out;
    if (cmd_pre->parsed()) command = "pretrain", out_path = pre.out;
    if (cmd_train->parsed()) command = "train", out_path = tr.out;
    if (cmd_grid->parsed()) command = "grid", out_path = gr.out;
    if (cmd_eval->parsed()) command = "eval", out_path = ev.out;
    if (cmd_atn->parsed()) command = "at-n", out_path = an.out;
    if (cmd_sweep->parsed()) command = "sweep", out_path = sw.out;
    if (cmd_explain->parsed()) command = "explain", out_path = ex.out;
    if (cmd_family->parsed()) command = "explain-family", out_path = ef.out;
    if (cmd_repro->parsed()) command = "reproduce", out_path = rp.outdir + "/report.json";

    Manifest man(command, manifest_path_for(out_path));
    for (const auto& t : merged) man.config("argv", merged);
    (void)0;
    try {
        if (cmd_gen->parsed()) {
            if (gen_seed_opt->count() > 0) gen.seed = gen_seed;
            run_gen(gen, man);
        } else if (cmd_scenario->parsed()) {
            synthgen::save_scenario(synthgen::default_scenario(), scen_out);
            man.artifact(scen_out);
            std::cout << "wrote default scenario to " << scen_out << "\n";
        } else if (cmd_vocab->parsed()) {
            man.input(vocab_data);
            auto raw = telemetry::parse_log_file(vocab_data);
            telemetry::build_vocabulary(raw).save(vocab_out);
            man.artifact(vocab_out);
            std::cout << "wrote vocabulary to " << vocab_out << "\n";
        } else if (cmd_pre->parsed()) {
            run_pretrain(pre, man);
        } else if (cmd_train->parsed()) {
            if (pcn_opt->count() > 0) tr.per_class_n = per_class_n;
            run_train(tr, man);
        } else if (cmd_grid->parsed()) {
            run_grid(gr, man);
        } else if (cmd_eval->parsed()) {
            run_eval(ev, man);
        } else if (cmd_atn->parsed()) {
            run_at_n(an, man);
        } else if (cmd_sweep->parsed()) {
            run_sweep(sw, man);
        } else if (cmd_explain->parsed()) {
            run_explain(ex, man);
        } else if (cmd_family->parsed()) {
            run_explain_family(ef, man);
        } else if (cmd_repro->parsed()) {
            run_reproduce(rp, man);
        }
        man.write();
        return 0;
    } catch (const std::exception& e) {
        man.error(e.what());
        man.write();
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

int dispatch(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return dispatch(args);
}

// ---------------------------------------------------------------------------
// reproduce pipeline
// ---------------------------------------------------------------------------

namespace {

void run_reproduce(const ReproduceArgs& a, Manifest& man) {
    json cfg = json::object();
    if (!a.config.empty()) {
        man.input(a.config);
        std::ifstream f(a.config);
        require(f.good(), "reproduce: cannot open '", a.config, "'");
        f >> cfg;
    }
    const std::string task = cfg.value("task", std::string("family"));
    const std::string arch = cfg.value("arch", std::string("transformer"));
    const std::string preset = cfg.value("preset", std::string("desk"));
    const int w = cfg.value("w", 21);
    const int stride = cfg.value("stride", 4);
    const int pretrain_epochs = cfg.value("pretrain_epochs", 5);
    const int train_epochs = cfg.value("train_epochs", 20);
    const int batch = cfg.value("batch", 64);
    const int ig_steps = cfg.value("ig_steps", 100);
    const uint64_t seed = cfg.value("seed", a.seed);
    man.seed(seed);

    fs::create_directories(a.outdir);
    auto path = [&](const std::string& name) { return a.outdir + "/" + name; };
    auto stage = [&](const std::string& name, auto&& fn) {
        try {
            fn();
        } catch (const std::exception& e) {
            fail("stage '", name, "' failed: ", e.what());
        }
    };

    synthgen::ScenarioConfig scenario = cfg.contains("scenario")
                                            ? synthgen::load_scenario(cfg["scenario"].get<std::string>())
                                            : synthgen::default_scenario();

    std::vector<telemetry::RawRecord> raw_train, raw_test;
    stage("gen", [&] {
        synthgen::ScenarioConfig train_cfg = scenario;
        train_cfg.seed = hash_combine(seed, 0x7121);
        raw_train = synthgen::generate(train_cfg);
        telemetry::write_log_file(raw_train, path("train.jsonl"));
        synthgen::ScenarioConfig test_cfg = scenario;
        test_cfg.seed = hash_combine(seed, 0x7e57);
        raw_test = synthgen::generate(test_cfg);
        telemetry::write_log_file(raw_test, path("test.jsonl"));
        man.artifact(path("train.jsonl"));
        man.artifact(path("test.jsonl"));
    });

    telemetry::EventVocabulary vocab = telemetry::build_vocabulary(raw_train);
    vocab.save(path("vocab.txt"));
    man.artifact(path("vocab.txt"));

    auto records_train = telemetry::encode_records(raw_train, vocab);
    auto records_test = telemetry::encode_records(raw_test, vocab);
    auto windows_train = telemetry::windowize(records_train, w, stride);
    auto windows_test = telemetry::windowize(records_test, w, stride);
    trainer::LabeledWindows train_data = trainer::select_labeled(windows_train, task);
    trainer::LabeledWindows test_data =
        trainer::select_labeled(windows_test, task, train_data.class_names);

    models::ArchitectureConfig ac = models::ArchitectureConfig::make(
        models::arch_from_name(arch), preset, vocab.size(),
        static_cast<int64_t>(train_data.class_names.size()));

    models::Model pre_model;
    stage("pretrain", [&] {
        auto pairs = pretrain::make_pretrain_pairs(records_train, w, stride);
        pretrain::PretrainConfig pc;
        pc.epochs = pretrain_epochs;
        pc.batch_size = batch;
        pc.seed = hash_combine(seed, 0x9a1);
        auto result = pretrain::pretrain(ac, vocab.hash(), pairs, pc);
        pre_model = std::move(result.model);
        models::save_model(pre_model, path("pretrain.ckpt"));
        vocab.save(path("pretrain.ckpt.vocab"));
        man.artifact(path("pretrain.ckpt"));
    });

    trainer::TrainConfig tc;
    tc.task = task;
    tc.epochs = train_epochs;
    tc.batch_size = batch;
    if (cfg.contains("per_class_n") && !cfg["per_class_n"].is_null())
        tc.per_class_cap = cfg["per_class_n"].get<int>();

    models::Model scratch_model, tuned_model;
    stage("train-scratch", [&] {
        tc.seed = hash_combine(seed, 0x5c7a);
        auto result = trainer::train(
            tc, models::build_model(ac, vocab.hash(), tc.seed), train_data);
        scratch_model = std::move(result.model);
        models::save_model(scratch_model, path("scratch.ckpt"));
        vocab.save(path("scratch.ckpt.vocab"));
        trainer::write_train_log(result.log, path("scratch.trainlog.jsonl"));
        man.artifact(path("scratch.ckpt"));
    });
    stage("train-pretrained", [&] {
        tc.seed = hash_combine(seed, 0xf1e7);
        auto result = trainer::train(
            tc, pretrain::transfer_weights(pre_model, ac, vocab.hash(), tc.seed), train_data);
        tuned_model = std::move(result.model);
        models::save_model(tuned_model, path("pretrained.ckpt"));
        vocab.save(path("pretrained.ckpt.vocab"));
        trainer::write_train_log(result.log, path("pretrained.trainlog.jsonl"));
        man.artifact(path("pretrained.ckpt"));
    });

    json report;
    evalkit::MacroAuc scratch_auc, tuned_auc;
    stage("eval", [&] {
        auto scored_scratch = evalkit::score_model(scratch_model, test_data);
        auto scored_tuned = evalkit::score_model(tuned_model, test_data);
        const int n_classes = static_cast<int>(train_data.class_names.size());
        scratch_auc = evalkit::macro_auc(scored_scratch, n_classes);
        tuned_auc = evalkit::macro_auc(scored_tuned, n_classes);
        report["scratch"] = eval_summary(scored_scratch, task, path("scratch.ckpt"),
                                         train_data.class_names);
        report["pretrained"] = eval_summary(scored_tuned, task, path("pretrained.ckpt"),
                                            train_data.class_names);
        std::map<std::string, evalkit::ClassCurves> curves_tuned;
        for (int c = 0; c < n_classes; ++c)
            if (tuned_auc.per_class.count(c))
                curves_tuned[train_data.class_names[static_cast<size_t>(c)]] =
                    evalkit::curves(scored_tuned, c, 30, seed);
        evalkit::export_curves_csv(curves_tuned, path("pretrained_curves.csv"));
        man.artifact(path("pretrained_curves.csv"));
    });

    stage("significance", [&] {
        // pair per-class AUC values of the two models on the identical split
        std::vector<double> a_vals, b_vals;
        for (const auto& [cls, value] : tuned_auc.per_class) {
            if (!scratch_auc.per_class.count(cls)) continue;
            a_vals.push_back(value);
            b_vals.push_back(scratch_auc.per_class.at(cls));
        }
        evalkit::TTestResult t = evalkit::paired_significance(a_vals, b_vals);
        report["significance"] = {{"pairing", "per-class AUC, pretrained vs scratch"},
                                  {"t", t.t},
                                  {"p", t.p},
                                  {"significant", t.significant}};
    });

    stage("explain-family", [&] {
        json families = json::array();
        auto preds = models::predict_batch(tuned_model, test_data.instances);
        for (size_t c = 0; c < train_data.class_names.size(); ++c) {
            int positives = 0;
            for (const auto& p : preds) positives += p.class_id == static_cast<int>(c);
            if (positives == 0) continue;
            explain::IGConfig ig;
            ig.steps = ig_steps;
            ig.target_class = static_cast<int>(c);
            explain::FamilyImportance fam = explain::family_importance(
                tuned_model, vocab, test_data.instances, static_cast<int>(c), ig);
            std::string fname = train_data.class_names[c];
            for (auto& ch : fname)
                if (ch == ' ' || ch == '/') ch = '_';
            const std::string fpath = path("family_" + fname + ".json");
            write_text(fpath, explain::family_to_json(fam) + "\n");
            man.artifact(fpath);
            families.push_back({{"class", train_data.class_names[c]}, {"path", fpath}});
        }
        report["families"] = families;
    });

    report["task"] = task;
    report["arch"] = arch;
    report["preset"] = preset;
    report["seed"] = seed;
    write_text(path("report.json"), report.dump(2) + "\n");
    man.artifact(path("report.json"));
    std::cout << "pipeline report written to " << path("report.json") << "\n";
}

}  // namespace

}  // namespace iocseq::cli
