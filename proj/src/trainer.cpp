#include "iocseq/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::trainer {

using models::ArchitectureConfig;
using models::ArchKind;
using models::Model;
using nlohmann::json;
using telemetry::WindowInstance;

std::optional<std::string> label_value(const telemetry::TaxonomyLabel& label,
                                       const std::string& task) {
    if (task == "threat_id") return label.threat_id;
    if (task == "family") return label.family;
    if (task == "category") return label.category;
    fail("unknown task '", task, "' (expected threat_id, family or category)");
}

LabeledWindows select_labeled(const std::vector<WindowInstance>& instances,
                              const std::string& task) {
    std::set<std::string> names;
    for (const auto& inst : instances) {
        if (!inst.label) continue;
        if (auto v = label_value(*inst.label, task)) names.insert(*v);
    }
    return select_labeled(instances, task, std::vector<std::string>(names.begin(), names.end()));
}

LabeledWindows select_labeled(const std::vector<WindowInstance>& instances,
                              const std::string& task,
                              const std::vector<std::string>& class_names) {
    LabeledWindows out;
    out.class_names = class_names;
    std::map<std::string, int> index;
    for (size_t i = 0; i < class_names.size(); ++i)
        index[class_names[i]] = static_cast<int>(i);
    for (const auto& inst : instances) {
        if (!inst.label) continue;
        auto v = label_value(*inst.label, task);
        if (!v) continue;
        auto it = index.find(*v);
        require(it != index.end(), "label '", *v, "' not covered by the class list for task ",
                task);
        out.instances.push_back(inst);
        out.labels.push_back(it->second);
    }
    return out;
}

std::string epoch_log_json(const EpochLog& e) {
    json j;
    j["epoch"] = e.epoch;
    j["loss"] = e.loss;
    j["train_acc"] = e.train_acc;
    return j.dump();
}

void write_train_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "train log: cannot open '", path, "' for writing");
    for (const auto& e : log) f << epoch_log_json(e) << "\n";
}

// ---------------------------------------------------------------------------
// subsampling and training
// ---------------------------------------------------------------------------

std::vector<int64_t> stratified_subsample(const std::vector<int>& labels, int n_classes,
                                          std::optional<int> cap, uint64_t seed) {
    std::vector<std::vector<int64_t>> per_class(static_cast<size_t>(n_classes));
    for (int64_t i = 0; i < static_cast<int64_t>(labels.size()); ++i)
        per_class[static_cast<size_t>(labels[static_cast<size_t>(i)])].push_back(i);
    std::vector<int64_t> picked;
    for (int c = 0; c < n_classes; ++c) {
        auto& idx = per_class[static_cast<size_t>(c)];
        if (cap) {
            // Fisher-Yates prefix with a per-class stream
            SplitMix64 rng(hash_combine(hash_combine(seed, 0xca9), static_cast<uint64_t>(c)));
            const int64_t want = std::min<int64_t>(*cap, static_cast<int64_t>(idx.size()));
            for (int64_t i = 0; i < want; ++i) {
                const int64_t j = i + static_cast<int64_t>(rng.below(static_cast<uint64_t>(idx.size() - static_cast<size_t>(i))));
                std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
            }
            idx.resize(static_cast<size_t>(want));
        }
        picked.insert(picked.end(), idx.begin(), idx.end());
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

TrainResult train(const TrainConfig& config, Model model, const LabeledWindows& data) {
    require(!data.instances.empty(), "train: no labeled instances");
    require(config.epochs >= 1 && config.batch_size >= 1, "train: bad epochs/batch size");
    const int n_classes = static_cast<int>(model.config.n_classes);
    require(static_cast<size_t>(n_classes) == data.class_names.size(),
            "train: model expects ", n_classes, " classes, data has ", data.class_names.size());
    {
        std::set<int> present(data.labels.begin(), data.labels.end());
        require(present.size() >= 2, "train: data contains a single class");
    }
    model.task = config.task;
    model.class_names = data.class_names;
    model.window_width = static_cast<int>(data.instances[0].width());

    std::vector<int64_t> pool =
        stratified_subsample(data.labels, n_classes, config.per_class_cap, config.seed);

    TrainResult result;
    nd::Adam adam(config.adam);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        // seeded shuffle per epoch
        std::vector<int64_t> order = pool;
        SplitMix64 rng(hash_combine(hash_combine(config.seed, 0xe9a0c), static_cast<uint64_t>(epoch)));
        for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
            const int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        double epoch_loss = 0.0;
        int64_t correct = 0, seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<const WindowInstance*> batch_insts;
            nd::Tensor onehot({static_cast<int64_t>(stop - start), model.config.n_classes});
            for (size_t i = start; i < stop; ++i) {
                const int64_t idx = order[i];
                batch_insts.push_back(&data.instances[static_cast<size_t>(idx)]);
                onehot.at(static_cast<int64_t>(i - start), data.labels[static_cast<size_t>(idx)]) = 1.0f;
            }
            models::EncodedBatch batch = models::encode_batch(batch_insts, model.config.vocab_size);
            nd::Graph g;
            nd::BoundParams bound = bind_params(g, model.params);
            models::ForwardCtx ctx{true,
                                   hash_combine(hash_combine(config.seed, static_cast<uint64_t>(epoch) * 1000003ull),
                                                static_cast<uint64_t>(start)),
                                   0};
            const int probs = models::forward(g, model, bound, batch, ctx);
            const int target = g.leaf(onehot, false);
            const int loss = nd::categorical_cross_entropy(g, probs, target);
            const double loss_val = g.value(loss).data[0];
            require(std::isfinite(loss_val), "train: loss diverged (", loss_val, ") at epoch ",
                    epoch, "; aborting");
            g.backward(loss);
            nd::GradMap grads = collect_grads(g, bound);
            adam.step(model.params, grads);

            epoch_loss += loss_val * static_cast<double>(stop - start);
            const nd::Tensor& pv = g.value(probs);
            for (size_t i = start; i < stop; ++i) {
                const int64_t row = static_cast<int64_t>(i - start);
                int best = 0;
                for (int c = 1; c < n_classes; ++c)
                    if (pv.at(row, c) > pv.at(row, best)) best = c;
                correct += best == data.labels[static_cast<size_t>(order[i])];
                ++seen;
            }
        }
        result.log.push_back(EpochLog{epoch, epoch_loss / static_cast<double>(seen),
                                      static_cast<double>(correct) / static_cast<double>(seen)});
    }
    result.model = std::move(model);
    return result;
}

// ---------------------------------------------------------------------------
// grid search
// ---------------------------------------------------------------------------

GridSpec GridSpec::table_defaults(const std::string& arch) {
    GridSpec s;
    s.arch = arch;
    s.embedding = {64, 128, 256};
    s.lstm_layers = {1, 2, 3, 4};
    s.lstm_units = {8, 16, 32, 64, 128, 256, 512, 1024, 2048};
    s.cnn_layers = {1, 2, 3, 4};
    s.kernel = {2, 4, 8};
    s.filters = {4, 8, 16, 32, 64, 128};
    s.tf_blocks = {1, 2, 3, 4};
    s.heads = {4, 8, 16, 32, 64, 128};
    s.ffn_units = {4, 8, 16, 32, 64, 128};
    s.dense_layers = {1, 2, 3};
    s.dense_units = {64, 128, 256, 512, 1024};
    s.rf_trees = {10, 100, 1000};
    s.rf_depth = {2, 10, 100, std::nullopt};
    return s;
}

std::string GridSpec::to_json() const {
    json j;
    j["arch"] = arch;
    j["embedding"] = embedding;
    j["lstm_layers"] = lstm_layers;
    j["lstm_units"] = lstm_units;
    j["cnn_layers"] = cnn_layers;
    j["kernel"] = kernel;
    j["filters"] = filters;
    j["tf_blocks"] = tf_blocks;
    j["heads"] = heads;
    j["ffn_units"] = ffn_units;
    j["dense_layers"] = dense_layers;
    j["dense_units"] = dense_units;
    j["rf_trees"] = rf_trees;
    json depth = json::array();
    for (const auto& d : rf_depth) depth.push_back(d ? json(*d) : json(nullptr));
    j["rf_depth"] = depth;
    return j.dump(2);
}

GridSpec GridSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    GridSpec s = table_defaults(j.at("arch").get<std::string>());
    auto take = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    take("embedding", s.embedding);
    take("lstm_layers", s.lstm_layers);
    take("lstm_units", s.lstm_units);
    take("cnn_layers", s.cnn_layers);
    take("kernel", s.kernel);
    take("filters", s.filters);
    take("tf_blocks", s.tf_blocks);
    take("heads", s.heads);
    take("ffn_units", s.ffn_units);
    take("dense_layers", s.dense_layers);
    take("dense_units", s.dense_units);
    take("rf_trees", s.rf_trees);
    if (j.contains("rf_depth")) {
        s.rf_depth.clear();
        for (const auto& d : j.at("rf_depth"))
            s.rf_depth.push_back(d.is_null() ? std::optional<int>{} : std::optional<int>{d.get<int>()});
    }
    return s;
}

std::string GridPoint::describe() const {
    if (nn) return nn->to_json();
    json j;
    j["arch"] = "forest";
    j["n_trees"] = rf->n_trees;
    j["max_depth"] = rf->max_depth ? json(*rf->max_depth) : json(nullptr);
    return j.dump();
}

std::vector<GridPoint> enumerate_grid(const GridSpec& spec, int64_t vocab_size,
                                      int64_t n_classes) {
    std::vector<GridPoint> out;
    if (spec.arch == "rf") {
        for (int trees : spec.rf_trees)
            for (const auto& depth : spec.rf_depth) {
                forest::ForestConfig cfg;
                cfg.n_trees = trees;
                cfg.max_depth = depth;
                out.push_back(GridPoint{std::nullopt, cfg});
            }
        require(!out.empty(), "grid: empty random-forest grid");
        return out;
    }
    const ArchKind kind = models::arch_from_name(spec.arch);
    auto base = [&](int64_t emb, int dl, int64_t du) {
        ArchitectureConfig c = ArchitectureConfig::make(kind, "desk", vocab_size, n_classes);
        c.preset = "grid";
        c.embedding_dim = emb;
        c.dense_layers = dl;
        c.dense_units = du;
        return c;
    };
    for (int64_t emb : spec.embedding) {
        for (int dl : spec.dense_layers) {
            for (int64_t du : spec.dense_units) {
                switch (kind) {
                    case ArchKind::lstm:
                        for (int layers : spec.lstm_layers)
                            for (int64_t units : spec.lstm_units) {
                                ArchitectureConfig c = base(emb, dl, du);
                                c.lstm_layers = layers;
                                c.lstm_units = units;
                                out.push_back(GridPoint{c, std::nullopt});
                            }
                        break;
                    case ArchKind::cnn:
                        for (int layers : spec.cnn_layers)
                            for (int64_t kern : spec.kernel)
                                for (int64_t filt : spec.filters) {
                                    ArchitectureConfig c = base(emb, dl, du);
                                    c.cnn_layers = layers;
                                    c.kernel = kern;
                                    c.filters = filt;
                                    out.push_back(GridPoint{c, std::nullopt});
                                }
                        break;
                    case ArchKind::transformer:
                        for (int blocks : spec.tf_blocks)
                            for (int heads : spec.heads)
                                for (int64_t ffn : spec.ffn_units) {
                                    if (emb % heads != 0) continue;  // not instantiable
                                    ArchitectureConfig c = base(emb, dl, du);
                                    c.tf_blocks = blocks;
                                    c.heads = heads;
                                    c.ffn_units = ffn;
                                    c.d_model = emb;
                                    out.push_back(GridPoint{c, std::nullopt});
                                }
                        break;
                }
            }
        }
    }
    require(!out.empty(), "grid: no instantiable points for arch ", spec.arch);
    return out;
}

std::vector<int> stratified_folds(const std::vector<int>& labels, int folds) {
    require(folds >= 2, "grid: folds must be >= 2");
    std::vector<int> fold_of(labels.size(), -1);
    std::map<int, int> next_fold;
    for (size_t i = 0; i < labels.size(); ++i) {
        int& f = next_fold[labels[i]];
        fold_of[i] = f;
        f = (f + 1) % folds;
    }
    return fold_of;
}

GridSearchResult grid_search(const std::vector<GridPoint>& points, const LabeledWindows& data,
                             int folds, const TrainConfig& base, uint64_t vocab_hash,
                             int64_t vocab_size) {
    require(!points.empty(), "grid: empty grid");
    {
        std::map<int, int64_t> counts;
        for (int l : data.labels) counts[l]++;
        for (const auto& [cls, count] : counts)
            require(count >= folds, "grid: class ", data.class_names[static_cast<size_t>(cls)],
                    " has ", count, " instances, fewer than ", folds, " folds");
    }
    const std::vector<int> fold_of = stratified_folds(data.labels, folds);
    const int n_classes = static_cast<int>(data.class_names.size());

    GridSearchResult result;
    for (const GridPoint& point : points) {
        GridPointScore score;
        score.point = point;
        for (int fold = 0; fold < folds; ++fold) {
            LabeledWindows tr, va;
            tr.class_names = va.class_names = data.class_names;
            for (size_t i = 0; i < data.instances.size(); ++i) {
                auto& dst = fold_of[i] == fold ? va : tr;
                dst.instances.push_back(data.instances[i]);
                dst.labels.push_back(data.labels[i]);
            }
            double acc = 0.0;
            if (point.nn) {
                Model model = models::build_model(*point.nn, vocab_hash,
                                                  hash_combine(base.seed, static_cast<uint64_t>(fold)));
                TrainConfig cfg = base;
                cfg.seed = hash_combine(base.seed, static_cast<uint64_t>(fold) + 0x60d);
                TrainResult trained = train(cfg, std::move(model), tr);
                int64_t correct = 0;
                auto preds = models::predict_batch(trained.model, va.instances);
                for (size_t i = 0; i < preds.size(); ++i)
                    correct += preds[i].class_id == va.labels[i];
                acc = static_cast<double>(correct) / static_cast<double>(preds.size());
            } else {
                forest::ForestConfig cfg = *point.rf;
                cfg.seed = hash_combine(base.seed, static_cast<uint64_t>(fold) + 0xf0e);
                std::vector<std::vector<float>> X;
                for (const auto& inst : tr.instances)
                    X.push_back(forest::featurize_window(inst, vocab_size));
                forest::ForestModel fm = forest::fit_forest(cfg, X, tr.labels, n_classes);
                int64_t correct = 0;
                for (size_t i = 0; i < va.instances.size(); ++i) {
                    auto probs = forest::predict_forest(
                        fm, forest::featurize_window(va.instances[i], vocab_size));
                    int best = 0;
                    for (int c = 1; c < n_classes; ++c)
                        if (probs[static_cast<size_t>(c)] > probs[static_cast<size_t>(best)]) best = c;
                    correct += best == va.labels[i];
                }
                acc = static_cast<double>(correct) / static_cast<double>(va.instances.size());
            }
            score.fold_acc.push_back(acc);
        }
        double sum = 0.0;
        for (double a : score.fold_acc) sum += a;
        score.mean_val_acc = sum / static_cast<double>(score.fold_acc.size());
        result.scores.push_back(std::move(score));
    }
    for (size_t i = 0; i < result.scores.size(); ++i) {
        if (result.best_index < 0 ||
            result.scores[i].mean_val_acc >
                result.scores[static_cast<size_t>(result.best_index)].mean_val_acc)
            result.best_index = static_cast<int>(i);
    }
    return result;
}

// ---------------------------------------------------------------------------
// window width sweep
// ---------------------------------------------------------------------------

std::vector<int> sweep_widths(int step) {
    require(step >= 1, "sweep: step must be >= 1");
    std::vector<int> widths;
    for (int w = 3; w <= 41; w += step) widths.push_back(w);
    if (widths.back() != 41) widths.push_back(41);
    return widths;
}

std::vector<SweepRow> window_width_sweep(const std::vector<telemetry::IntervalRecord>& records,
                                         const std::vector<int>& widths,
                                         const ArchitectureConfig& arch_template,
                                         const TrainConfig& base, uint64_t vocab_hash,
                                         int stride) {
    std::vector<SweepRow> rows;
    for (int w : widths) {
        auto windows = telemetry::windowize(records, w, stride);
        LabeledWindows all = select_labeled(windows, base.task);
        require(all.instances.size() >= 10, "sweep: too few labeled windows at w=", w);
        // nested 80/20 split, stratified via fold partition
        const std::vector<int> fold_of = stratified_folds(all.labels, 5);
        LabeledWindows tr, te;
        tr.class_names = te.class_names = all.class_names;
        for (size_t i = 0; i < all.instances.size(); ++i) {
            auto& dst = fold_of[i] == 0 ? te : tr;
            dst.instances.push_back(all.instances[i]);
            dst.labels.push_back(all.labels[i]);
        }
        ArchitectureConfig cfg = arch_template;
        cfg.n_classes = static_cast<int64_t>(all.class_names.size());
        cfg.validate();
        Model model = models::build_model(cfg, vocab_hash, hash_combine(base.seed, static_cast<uint64_t>(w)));
        TrainResult trained = train(base, std::move(model), tr);
        auto preds = models::predict_batch(trained.model, te.instances);
        int64_t correct = 0;
        for (size_t i = 0; i < preds.size(); ++i) correct += preds[i].class_id == te.labels[i];
        rows.push_back(SweepRow{w, static_cast<double>(correct) / static_cast<double>(preds.size())});
    }
    return rows;
}

}  // namespace iocseq::trainer
