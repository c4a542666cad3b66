#pragma once

#include <optional>
#include <string>
#include <vector>

#include "iocseq/forest.hpp"
#include "iocseq/models.hpp"
#include "iocseq/telemetry.hpp"

namespace iocseq::trainer {

// which taxonomy level a task reads
std::optional<std::string> label_value(const telemetry::TaxonomyLabel& label,
                                       const std::string& task);

struct LabeledWindows {
    std::vector<telemetry::WindowInstance> instances;
    std::vector<int> labels;  // parallel to instances
    std::vector<std::string> class_names;
};

// Keep only instances labeled for the task. Class list defaults to the sorted
// label set; with an explicit list, labels outside it are an error.
LabeledWindows select_labeled(const std::vector<telemetry::WindowInstance>& instances,
                              const std::string& task);
LabeledWindows select_labeled(const std::vector<telemetry::WindowInstance>& instances,
                              const std::string& task,
                              const std::vector<std::string>& class_names);

struct TrainConfig {
    std::string task = "family";
    int epochs = 20;
    int batch_size = 256;
    uint64_t seed = 0;
    std::optional<int> per_class_cap;  // @n protocols draw min(n, available) per class
    nd::AdamConfig adam;
};

struct EpochLog {
    int epoch;
    double loss;
    double train_acc;
};
std::string epoch_log_json(const EpochLog& e);
void write_train_log(const std::vector<EpochLog>& log, const std::string& path);

struct TrainResult {
    models::Model model;
    std::vector<EpochLog> log;
};

// Supervised training with categorical cross entropy and a fixed epoch count.
// The model carries the initial parameters (fresh or transferred).
TrainResult train(const TrainConfig& config, models::Model model, const LabeledWindows& data);

// deterministic per-class subsample of min(cap, available) instances
std::vector<int64_t> stratified_subsample(const std::vector<int>& labels, int n_classes,
                                          std::optional<int> cap, uint64_t seed);

// --- grid search -----------------------------------------------------------

struct GridSpec {
    std::string arch;  // lstm | cnn | transformer | rf
    std::vector<int64_t> embedding;
    std::vector<int> lstm_layers;
    std::vector<int64_t> lstm_units;
    std::vector<int> cnn_layers;
    std::vector<int64_t> kernel;
    std::vector<int64_t> filters;
    std::vector<int> tf_blocks;
    std::vector<int> heads;
    std::vector<int64_t> ffn_units;
    std::vector<int> dense_layers;
    std::vector<int64_t> dense_units;
    std::vector<int> rf_trees;
    std::vector<std::optional<int>> rf_depth;

    // the published search ranges for one architecture
    static GridSpec table_defaults(const std::string& arch);
    std::string to_json() const;
    static GridSpec from_json(const std::string& text);
};

struct GridPoint {
    std::optional<models::ArchitectureConfig> nn;
    std::optional<forest::ForestConfig> rf;
    std::string describe() const;
};

// deterministic enumeration order; combinations that cannot be instantiated
// (model dim not divisible by heads) are skipped
std::vector<GridPoint> enumerate_grid(const GridSpec& spec, int64_t vocab_size,
                                      int64_t n_classes);

struct GridPointScore {
    GridPoint point;
    double mean_val_acc = 0.0;
    std::vector<double> fold_acc;
};

struct GridSearchResult {
    int best_index = -1;
    std::vector<GridPointScore> scores;
};

// Stratified k-fold cross validation; selection criterion is mean validation
// accuracy, ties resolved by grid order.
GridSearchResult grid_search(const std::vector<GridPoint>& points, const LabeledWindows& data,
                             int folds, const TrainConfig& base, uint64_t vocab_hash,
                             int64_t vocab_size);

// fold id per instance: a stratified partition
std::vector<int> stratified_folds(const std::vector<int>& labels, int folds);

// --- window width sweep ----------------------------------------------------

struct SweepRow {
    int width;
    double accuracy;
};

// Nested train/test split on the training data, one supervised run per width.
std::vector<SweepRow> window_width_sweep(const std::vector<telemetry::IntervalRecord>& records,
                                         const std::vector<int>& widths,
                                         const models::ArchitectureConfig& arch_template,
                                         const TrainConfig& base, uint64_t vocab_hash,
                                         int stride);

// widths 3..41 thinned by `step` with both endpoints always present
std::vector<int> sweep_widths(int step);

}  // namespace iocseq::trainer
