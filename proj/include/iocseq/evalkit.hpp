#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "iocseq/pretrain.hpp"
#include "iocseq/trainer.hpp"

namespace iocseq::evalkit {

struct ScoredInstance {
    int true_class = 0;
    std::vector<float> probs;
    telemetry::WindowKey key;
};
using ScoredDataset = std::vector<ScoredInstance>;

ScoredDataset score_model(const models::Model& model, const trainer::LabeledWindows& data);
ScoredDataset score_forest(const forest::ForestModel& model, const trainer::LabeledWindows& data);

double accuracy(const ScoredDataset& scored);

// P(score+ > score-) + P(tie)/2 by rank statistics; exact in integer halves,
// so it agrees with brute-force pair counting bit for bit
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct MacroAuc {
    double value = 0.0;
    std::map<int, double> per_class;   // one-vs-rest AUC per valid class
    std::vector<int> skipped_classes;  // no positives (or no negatives) in the data
};
// unweighted mean over valid classes; throws when no class is valid
MacroAuc macro_auc(const ScoredDataset& scored, int n_classes);

struct CurvePoint {
    double x = 0.0;
    double y = 0.0;
    double band = 0.0;  // standard error from instance bootstrap
};
struct ClassCurves {
    std::vector<CurvePoint> roc;  // (FPR, TPR), contains (0,0) and (1,1)
    std::vector<CurvePoint> pr;   // (recall, precision)
    double min_plot_fpr = 0.0;    // 1/#negatives: log-scale floor for export
};
ClassCurves curves(const ScoredDataset& scored, int class_id, int bootstrap_b, uint64_t seed);

void export_curves_csv(const std::map<std::string, ClassCurves>& per_class,
                       const std::string& path);

// --- few-shot protocol -----------------------------------------------------

struct AtNRow {
    std::string n_label;  // "10", "50", "100", "all"
    std::optional<int> n;
    double mean_acc = 0.0;
    double mean_auc = 0.0;
    std::vector<double> accs;  // one entry per repeat
    std::vector<double> aucs;
};

struct AtNConfig {
    std::vector<std::optional<int>> n_values;  // nullopt = all
    int repeats = 5;
    uint64_t seed = 0;
    trainer::TrainConfig base;
};

// For each n: subsample up to n per class, train, evaluate on the full test
// set; the mean is over `repeats` seeded draws (n = all runs once). With a
// pretrained model, each run fine-tunes transferred weights.
std::vector<AtNRow> at_n_protocol(const AtNConfig& config,
                                  const models::ArchitectureConfig& arch,
                                  const trainer::LabeledWindows& train_data,
                                  const trainer::LabeledWindows& test_data, uint64_t vocab_hash,
                                  const models::Model* pretrained = nullptr);

std::string at_n_table_json(const std::vector<AtNRow>& rows);

// --- significance ----------------------------------------------------------

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    bool significant = false;  // at 0.05, two-sided
};

// Two-sided paired t test. Zero-variance differences use the documented
// convention: p = 1 when the means agree, p = 0 when they differ.
TTestResult paired_significance(const std::vector<double>& a, const std::vector<double>& b);

// regularized incomplete beta I_x(a,b), absolute error below 1e-8
double reg_incomplete_beta(double a, double b, double x);
double student_t_two_sided_p(double t, int dof);

}  // namespace iocseq::evalkit
