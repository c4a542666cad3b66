#pragma once

#include <string>
#include <vector>

#include "iocseq/models.hpp"
#include "iocseq/telemetry.hpp"

namespace iocseq::explain {

struct IGConfig {
    int steps = 300;     // Riemann steps m; right endpoints k/m, k = 1..m
    int target_class = 0;
};

struct EventAttribution {
    int step = 0;  // 0-based position inside the window
    int64_t event_id = 0;
    double importance = 0.0;  // summed over the event's embedding coordinates
};

struct NumericAttribution {
    int step = 0;
    int feature = 0;  // 0 = log_dt, 1 = log_sent, 2 = log_recv
    double importance = 0.0;
};

struct AttributionReport {
    std::vector<EventAttribution> events;     // every real event occurrence exactly once
    std::vector<NumericAttribution> numerics;  // identically zero under this baseline
    int predicted_class = 0;
    double predicted_prob = 0.0;
    int target_class = 0;
    int ig_steps = 0;
    double f_input = 0.0;     // target-class probability at the input
    double f_baseline = 0.0;  // at zero embeddings with original numerics
    double attribution_sum = 0.0;
    double completeness_gap = 0.0;  // |sum - (F(x) - F(x'))|
    telemetry::WindowKey key;
};

// The m-step path core over any differentiable scalar target: attribution_i =
// x_i * (1/m) * sum_k dF/dx_i at (k/m) * x, the zero-baseline specialization
// of the straight-line path rule. Gradients accumulate in double.
struct PathResult {
    std::vector<double> attribution;  // per input coordinate
    double f_input = 0.0;
    double f_baseline = 0.0;
    double sum = 0.0;
    double gap = 0.0;  // |sum - (f_input - f_baseline)|
};
// target(x, grad_out): returns F(x); fills d F / d x when grad_out != nullptr
PathResult ig_path(const std::function<double(const nd::Tensor&, nd::Tensor*)>& target,
                   const nd::Tensor& input, int m);

// Path attribution from the zero-embedding baseline: gradients of the
// target-class probability are averaged over m interpolation points and
// scaled by (x - x'). Numeric features sit at their input values along the
// whole path, so their attribution is exactly zero.
AttributionReport integrated_gradients(const models::Model& model,
                                       const telemetry::WindowInstance& instance,
                                       const IGConfig& config);

// recomputes the completeness gap from the model; callers can reject reports
// whose sum strays from F(x) - F(x')
double completeness_check(const AttributionReport& report, const models::Model& model,
                          const telemetry::WindowInstance& instance);

struct FamilyImportance {
    struct Row {
        std::string event;
        double mean = 0.0;    // over all positively classified instances
        double stddev = 0.0;
        int count = 0;        // instances in which the event occurred
    };
    std::vector<Row> rows;  // sorted by mean, descending
    int positive_instances = 0;
    std::string class_name;
};

// Mean per-event importance across every instance the model assigns to the
// class; instances lacking an event contribute zero to its mean.
FamilyImportance family_importance(const models::Model& model,
                                   const telemetry::EventVocabulary& vocab,
                                   const std::vector<telemetry::WindowInstance>& instances,
                                   int class_id, const IGConfig& config);

// text table max-normalizes importance into [0,1] (guarding the all-zero
// report); JSON carries raw values
std::string render_report_text(const AttributionReport& report,
                               const telemetry::EventVocabulary& vocab);
std::string report_to_json(const AttributionReport& report,
                           const telemetry::EventVocabulary& vocab);
std::string render_family_text(const FamilyImportance& fam, size_t top_k = 10);
std::string family_to_json(const FamilyImportance& fam);

}  // namespace iocseq::explain
