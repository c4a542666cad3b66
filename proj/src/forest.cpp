#include "iocseq/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::forest {

using nlohmann::json;
using telemetry::WindowInstance;

int64_t feature_dimension(int w, int64_t vocab_size) {
    return static_cast<int64_t>(w) * (vocab_size - 2) + 3 * static_cast<int64_t>(w);
}

std::vector<float> featurize_window(const WindowInstance& instance, int64_t vocab_size) {
    const int w = static_cast<int>(instance.width());
    const int64_t per_step = vocab_size - 2;
    std::vector<float> out(static_cast<size_t>(feature_dimension(w, vocab_size)), 0.0f);
    for (int t = 0; t < w; ++t) {
        const auto& step = instance.steps[static_cast<size_t>(t)];
        if (!instance.pad_mask[static_cast<size_t>(t)]) {
            for (int64_t id : step.event_ids) {
                if (id >= 2) out[static_cast<size_t>(t * per_step + (id - 2))] = 1.0f;
            }
        }
        const size_t base = static_cast<size_t>(static_cast<int64_t>(w) * per_step + 3 * t);
        out[base + 0] = static_cast<float>(step.log_sent);
        out[base + 1] = static_cast<float>(step.log_recv);
        out[base + 2] = static_cast<float>(step.log_dt);
    }
    return out;
}

// ---------------------------------------------------------------------------
// CART construction
// ---------------------------------------------------------------------------

namespace {

double gini(const std::vector<int64_t>& counts, int64_t total) {
    if (total == 0) return 0.0;
    double sum_sq = 0.0;
    for (int64_t c : counts) {
        const double f = static_cast<double>(c) / static_cast<double>(total);
        sum_sq += f * f;
    }
    return 1.0 - sum_sq;
}

struct Builder {
    const std::vector<std::vector<float>>& X;
    const std::vector<int>& y;
    int n_classes;
    int64_t dim;
    std::optional<int> max_depth;
    int64_t features_per_split;
    SplitMix64 rng;
    Tree tree;

    int make_leaf(const std::vector<int64_t>& idx) {
        TreeNode node;
        std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
        for (int64_t i : idx) counts[static_cast<size_t>(y[static_cast<size_t>(i)])]++;
        node.histogram.resize(static_cast<size_t>(n_classes));
        for (int c = 0; c < n_classes; ++c)
            node.histogram[static_cast<size_t>(c)] =
                static_cast<double>(counts[static_cast<size_t>(c)]) / static_cast<double>(idx.size());
        tree.nodes.push_back(std::move(node));
        return static_cast<int>(tree.nodes.size()) - 1;
    }

    int build(std::vector<int64_t> idx, int depth) {
        std::vector<int64_t> counts(static_cast<size_t>(n_classes), 0);
        for (int64_t i : idx) counts[static_cast<size_t>(y[static_cast<size_t>(i)])]++;
        const double parent_gini = gini(counts, static_cast<int64_t>(idx.size()));
        const bool pure = std::count(counts.begin(), counts.end(), 0) == n_classes - 1;
        if (pure || idx.size() < 2 || (max_depth && depth >= *max_depth)) return make_leaf(idx);

        // candidate features (duplicates collapse; close enough to sampling
        // without replacement at D >> sqrt(D))
        std::vector<int64_t> candidates;
        candidates.reserve(static_cast<size_t>(features_per_split));
        for (int64_t tries = 0; tries < features_per_split; ++tries)
            candidates.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(dim))));
        std::sort(candidates.begin(), candidates.end());
        candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

        double best_decrease = 0.0;
        int64_t best_feature = -1;
        float best_threshold = 0.0f;
        std::vector<std::pair<float, int>> vals;
        for (int64_t f : candidates) {
            vals.clear();
            for (int64_t i : idx)
                vals.emplace_back(X[static_cast<size_t>(i)][static_cast<size_t>(f)], y[static_cast<size_t>(i)]);
            std::sort(vals.begin(), vals.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            std::vector<int64_t> left(static_cast<size_t>(n_classes), 0);
            std::vector<int64_t> right = counts;
            const int64_t n = static_cast<int64_t>(vals.size());
            for (int64_t i = 0; i + 1 < n; ++i) {
                left[static_cast<size_t>(vals[static_cast<size_t>(i)].second)]++;
                right[static_cast<size_t>(vals[static_cast<size_t>(i)].second)]--;
                if (vals[static_cast<size_t>(i)].first == vals[static_cast<size_t>(i + 1)].first) continue;
                const int64_t nl = i + 1, nr = n - nl;
                const double g = (static_cast<double>(nl) * gini(left, nl) +
                                  static_cast<double>(nr) * gini(right, nr)) /
                                 static_cast<double>(n);
                const double decrease = parent_gini - g;
                if (decrease > best_decrease + 1e-12) {
                    best_decrease = decrease;
                    best_feature = f;
                    best_threshold = 0.5f * (vals[static_cast<size_t>(i)].first +
                                             vals[static_cast<size_t>(i + 1)].first);
                }
            }
        }
        // no candidate improves Gini: fall back to a leaf
        if (best_feature < 0) return make_leaf(idx);

        std::vector<int64_t> left_idx, right_idx;
        for (int64_t i : idx) {
            if (X[static_cast<size_t>(i)][static_cast<size_t>(best_feature)] <= best_threshold)
                left_idx.push_back(i);
            else
                right_idx.push_back(i);
        }
        if (left_idx.empty() || right_idx.empty()) return make_leaf(idx);

        const int self = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{static_cast<int>(best_feature), best_threshold, -1, -1, {}});
        const int l = build(std::move(left_idx), depth + 1);
        const int r = build(std::move(right_idx), depth + 1);
        tree.nodes[static_cast<size_t>(self)].left = l;
        tree.nodes[static_cast<size_t>(self)].right = r;
        return self;
    }
};

}  // namespace

ForestModel fit_forest(const ForestConfig& config, const std::vector<std::vector<float>>& X,
                       const std::vector<int>& y, int n_classes) {
    require(config.n_trees >= 1, "fit_forest: n_trees must be >= 1");
    require(!X.empty() && X.size() == y.size(), "fit_forest: X/y size mismatch");
    require(n_classes >= 2, "fit_forest: need at least 2 classes");
    std::vector<int64_t> class_counts(static_cast<size_t>(n_classes), 0);
    for (int label : y) {
        require(label >= 0 && label < n_classes, "fit_forest: label ", label, " out of range");
        class_counts[static_cast<size_t>(label)]++;
    }
    int present = 0;
    for (int64_t c : class_counts) present += c > 0;
    require(present >= 2, "fit_forest: training data contains a single class");

    ForestModel model;
    model.config = config;
    model.dim = static_cast<int64_t>(X[0].size());
    model.n_classes = n_classes;
    model.trees.resize(static_cast<size_t>(config.n_trees));
    const int64_t fps = std::max<int64_t>(
        1, static_cast<int64_t>(std::floor(std::sqrt(static_cast<double>(model.dim)))));
    const int64_t n = static_cast<int64_t>(X.size());

#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < config.n_trees; ++t) {
        SplitMix64 rng(hash_combine(config.seed, static_cast<uint64_t>(t)));
        // bootstrap sample, with replacement, same size
        std::vector<int64_t> idx(static_cast<size_t>(n));
        for (auto& i : idx) i = static_cast<int64_t>(rng.below(static_cast<uint64_t>(n)));
        std::sort(idx.begin(), idx.end());
        Builder builder{X, y, n_classes, model.dim, config.max_depth, fps, rng, {}};
        builder.build(std::move(idx), 0);
        model.trees[static_cast<size_t>(t)] = std::move(builder.tree);
    }
    return model;
}

std::vector<double> predict_forest(const ForestModel& model, const std::vector<float>& x) {
    require(static_cast<int64_t>(x.size()) == model.dim, "predict_forest: feature dimension ",
            x.size(), " != trained dimension ", model.dim);
    require(!model.trees.empty(), "predict_forest: model has no trees");
    std::vector<double> probs(static_cast<size_t>(model.n_classes), 0.0);
    for (const Tree& tree : model.trees) {
        int node = 0;
        while (tree.nodes[static_cast<size_t>(node)].feature >= 0) {
            const TreeNode& nd = tree.nodes[static_cast<size_t>(node)];
            node = x[static_cast<size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
        }
        const auto& hist = tree.nodes[static_cast<size_t>(node)].histogram;
        for (int c = 0; c < model.n_classes; ++c) probs[static_cast<size_t>(c)] += hist[static_cast<size_t>(c)];
    }
    const double inv = 1.0 / static_cast<double>(model.trees.size());
    for (auto& p : probs) p *= inv;
    return probs;
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_forest(const ForestModel& model, const std::string& path) {
    json trees = json::array();
    for (const Tree& t : model.trees) {
        json nodes = json::array();
        for (const TreeNode& n : t.nodes) {
            json jn;
            jn["f"] = n.feature;
            jn["t"] = n.threshold;
            jn["l"] = n.left;
            jn["r"] = n.right;
            if (n.feature < 0) jn["h"] = n.histogram;
            nodes.push_back(std::move(jn));
        }
        trees.push_back(std::move(nodes));
    }
    nd::Checkpoint ckpt;
    ckpt.metadata["arch"] = "forest";
    ckpt.metadata["task"] = model.task;
    ckpt.metadata["n_classes"] = std::to_string(model.n_classes);
    ckpt.metadata["vocab_hash"] = to_hex(model.vocab_hash);
    ckpt.metadata["w"] = std::to_string(model.window_width);
    ckpt.metadata["dim"] = std::to_string(model.dim);
    ckpt.metadata["n_trees"] = std::to_string(model.config.n_trees);
    ckpt.metadata["max_depth"] =
        model.config.max_depth ? std::to_string(*model.config.max_depth) : "none";
    ckpt.metadata["seed"] = std::to_string(model.config.seed);
    ckpt.metadata["classes"] = json(model.class_names).dump();
    ckpt.metadata["trees"] = trees.dump();
    save_checkpoint(ckpt, path);
}

ForestModel forest_from_checkpoint(const nd::Checkpoint& ckpt) {
    require(ckpt.meta("arch") == "forest", "checkpoint does not contain a forest model");
    ForestModel model;
    model.task = ckpt.meta("task");
    model.n_classes = std::stoi(ckpt.meta("n_classes"));
    model.vocab_hash = std::stoull(ckpt.meta("vocab_hash"), nullptr, 16);
    model.window_width = std::stoi(ckpt.meta("w"));
    model.dim = std::stoll(ckpt.meta("dim"));
    model.config.n_trees = std::stoi(ckpt.meta("n_trees"));
    const std::string depth = ckpt.meta("max_depth");
    model.config.max_depth = depth == "none" ? std::optional<int>{} : std::optional<int>{std::stoi(depth)};
    model.config.seed = std::stoull(ckpt.meta("seed"));
    for (const auto& name : json::parse(ckpt.meta("classes")))
        model.class_names.push_back(name.get<std::string>());
    for (const auto& jt : json::parse(ckpt.meta("trees"))) {
        Tree t;
        for (const auto& jn : jt) {
            TreeNode n;
            n.feature = jn.at("f").get<int>();
            n.threshold = jn.at("t").get<float>();
            n.left = jn.at("l").get<int>();
            n.right = jn.at("r").get<int>();
            if (n.feature < 0) n.histogram = jn.at("h").get<std::vector<double>>();
            t.nodes.push_back(std::move(n));
        }
        model.trees.push_back(std::move(t));
    }
    return model;
}

ForestModel load_forest(const std::string& path) {
    return forest_from_checkpoint(nd::load_checkpoint(path));
}

}  // namespace iocseq::forest
