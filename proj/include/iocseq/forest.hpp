#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iocseq/checkpoint.hpp"
#include "iocseq/telemetry.hpp"

namespace iocseq::forest {

struct ForestConfig {
    int n_trees = 100;
    std::optional<int> max_depth = 10;  // absent = unlimited
    uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    float threshold = 0.0f;
    int left = -1;
    int right = -1;
    std::vector<double> histogram;  // class distribution at a leaf
};

struct Tree {
    std::vector<TreeNode> nodes;
};

struct ForestModel {
    ForestConfig config;
    std::vector<Tree> trees;
    int64_t dim = 0;
    int n_classes = 0;
    std::vector<std::string> class_names;
    std::string task;
    uint64_t vocab_hash = 0;
    int window_width = 21;
};

// Per-step multi-hot event indicators (w blocks of |V|-2 columns) followed by
// per-step (log_sent, log_recv, log_dt) triples; padded steps are all-zero.
std::vector<float> featurize_window(const telemetry::WindowInstance& instance,
                                    int64_t vocab_size);
int64_t feature_dimension(int w, int64_t vocab_size);

// CART trees on bootstrap samples; Gini splits over floor(sqrt(D)) random
// candidate features; a split is only kept if it reduces impurity
ForestModel fit_forest(const ForestConfig& config, const std::vector<std::vector<float>>& X,
                       const std::vector<int>& y, int n_classes);

// mean of the per-tree leaf distributions
std::vector<double> predict_forest(const ForestModel& model, const std::vector<float>& x);

// forests ride in the checkpoint container's metadata block: no float tensors
void save_forest(const ForestModel& model, const std::string& path);
ForestModel load_forest(const std::string& path);
ForestModel forest_from_checkpoint(const nd::Checkpoint& ckpt);

}  // namespace iocseq::forest
