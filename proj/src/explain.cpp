#include "iocseq/explain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::explain {

using models::Model;
using nlohmann::json;
using telemetry::WindowInstance;

namespace {

// gathers the instance's embedding rows: one row per (step, event) occurrence
nd::Tensor input_embeddings(const Model& model, const models::EncodedBatch& batch) {
    const nd::Tensor& table = model.params.at("embedding");
    const int64_t E = table.shape[1];
    nd::Tensor occ({static_cast<int64_t>(batch.event_ids.size()), E});
    for (size_t n = 0; n < batch.event_ids.size(); ++n) {
        const int64_t id = batch.event_ids[n];
        for (int64_t e = 0; e < E; ++e) occ.at(static_cast<int64_t>(n), e) = table.at(id, e);
    }
    return occ;
}

// forward pass from explicit occurrence embeddings; returns the target-class
// probability, the full probability row, and (optionally) d prob / d occ
double forward_target(const Model& model, const models::EncodedBatch& batch,
                      const nd::Tensor& occ, int target, std::vector<float>* probs_out,
                      nd::Tensor* docc_out) {
    nd::Graph g;
    nd::BoundParams bound = bind_params(g, model.params);
    const int occ_node = g.leaf(occ, docc_out != nullptr);
    const int features = models::encode_input(g, model, batch, occ_node);
    models::ForwardCtx ctx;  // inference mode
    const int rep = models::encoder_output(g, model, bound, batch, features, ctx);
    const int probs = models::classifier_output(g, model, bound, rep, ctx);
    const nd::Tensor& pv = g.value(probs);
    if (probs_out) probs_out->assign(pv.data.begin(), pv.data.end());
    nd::Tensor pick = nd::Tensor::zeros(pv.shape);
    pick.at(0, target) = 1.0f;
    const int f = nd::dot_const(g, probs, std::move(pick));
    const double fval = g.value(f).data[0];
    if (docc_out) {
        g.backward(f);
        *docc_out = g.has_grad(occ_node) ? g.grad(occ_node) : nd::Tensor::zeros(occ.shape);
    }
    return fval;
}

}  // namespace

PathResult ig_path(const std::function<double(const nd::Tensor&, nd::Tensor*)>& target,
                   const nd::Tensor& input, int m) {
    require(m >= 1, "ig_path: steps must be >= 1, got ", m);
    const int64_t n = input.size();
    std::vector<double> grad_sum(static_cast<size_t>(n), 0.0);
    PathResult out;
    for (int k = 1; k <= m; ++k) {
        const float alpha = static_cast<float>(k) / static_cast<float>(m);
        nd::Tensor point(input.shape);
        for (int64_t i = 0; i < n; ++i)
            point.data[static_cast<size_t>(i)] = input.data[static_cast<size_t>(i)] * alpha;
        nd::Tensor grad;
        const double f = target(point, &grad);
        if (k == m) out.f_input = f;
        for (int64_t i = 0; i < n; ++i)
            grad_sum[static_cast<size_t>(i)] += static_cast<double>(grad.data[static_cast<size_t>(i)]);
    }
    out.f_baseline = target(nd::Tensor::zeros(input.shape), nullptr);
    out.attribution.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        out.attribution[static_cast<size_t>(i)] =
            static_cast<double>(input.data[static_cast<size_t>(i)]) *
            (grad_sum[static_cast<size_t>(i)] / m);
        out.sum += out.attribution[static_cast<size_t>(i)];
    }
    out.gap = std::fabs(out.sum - (out.f_input - out.f_baseline));
    return out;
}

AttributionReport integrated_gradients(const Model& model, const WindowInstance& instance,
                                       const IGConfig& config) {
    require(config.steps >= 1, "integrated_gradients: steps must be >= 1, got ", config.steps);
    require(config.target_class >= 0 && config.target_class < model.config.n_classes,
            "integrated_gradients: target class ", config.target_class, " out of range");
    models::EncodedBatch batch = models::encode_batch(
        std::vector<const WindowInstance*>{&instance}, model.config.vocab_size);
    const nd::Tensor occ = input_embeddings(model, batch);
    const int64_t E = occ.shape[1];
    const int m = config.steps;

    // the baseline zeroes the embeddings and keeps the numeric features, so
    // only occ travels along the path
    auto target = [&](const nd::Tensor& point, nd::Tensor* grad) {
        return forward_target(model, batch, point, config.target_class, nullptr, grad);
    };
    PathResult path = ig_path(target, occ, m);
    std::vector<float> probs_at_input;
    forward_target(model, batch, occ, config.target_class, &probs_at_input, nullptr);

    AttributionReport report;
    report.target_class = config.target_class;
    report.ig_steps = m;
    report.f_input = path.f_input;
    report.f_baseline = path.f_baseline;
    report.key = instance.key;
    report.predicted_class = static_cast<int>(
        std::max_element(probs_at_input.begin(), probs_at_input.end()) - probs_at_input.begin());
    report.predicted_prob = probs_at_input[static_cast<size_t>(report.predicted_class)];

    // per-occurrence importance: the event's attribution summed over its
    // embedding coordinates; numeric features have x == x' and stay zero
    for (int64_t step = 0; step < batch.width; ++step) {
        if (instance.pad_mask[static_cast<size_t>(step)]) continue;
        const nd::Segment seg = batch.segments[static_cast<size_t>(step)];
        for (int64_t r = 0; r < seg.len; ++r) {
            const int64_t row = seg.begin + r;
            double imp = 0.0;
            for (int64_t e = 0; e < E; ++e)
                imp += path.attribution[static_cast<size_t>(row * E + e)];
            report.events.push_back(
                EventAttribution{static_cast<int>(step), batch.event_ids[static_cast<size_t>(row)], imp});
        }
        for (int ftr = 0; ftr < 3; ++ftr)
            report.numerics.push_back(NumericAttribution{static_cast<int>(step), ftr, 0.0});
    }
    // padded steps: every coordinate equals the baseline (PAD row is pinned to
    // zero), so they carry exactly zero attribution and are not reported
    report.attribution_sum = path.sum;
    report.completeness_gap = path.gap;
    return report;
}

double completeness_check(const AttributionReport& report, const Model& model,
                          const WindowInstance& instance) {
    models::EncodedBatch batch = models::encode_batch(
        std::vector<const WindowInstance*>{&instance}, model.config.vocab_size);
    const nd::Tensor occ = input_embeddings(model, batch);
    const double fx =
        forward_target(model, batch, occ, report.target_class, nullptr, nullptr);
    const double fb = forward_target(model, batch, nd::Tensor::zeros(occ.shape),
                                     report.target_class, nullptr, nullptr);
    return std::fabs(report.attribution_sum - (fx - fb));
}

FamilyImportance family_importance(const Model& model, const telemetry::EventVocabulary& vocab,
                                   const std::vector<WindowInstance>& instances, int class_id,
                                   const IGConfig& config) {
    require(class_id >= 0 && class_id < model.config.n_classes,
            "family_importance: class ", class_id, " out of range");
    require(vocab.size() == model.config.vocab_size, "family_importance: vocabulary size ",
            vocab.size(), " != model vocab ", model.config.vocab_size);
    auto preds = models::predict_batch(model, instances);
    std::vector<int64_t> positives;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i].class_id == class_id) positives.push_back(static_cast<int64_t>(i));
    require(!positives.empty(), "family_importance: no instance classified as class ", class_id);

    // per-instance, per-event total importance; instances without the event
    // count as zero so rarely-seen events cannot dominate the mean
    std::vector<std::map<std::string, double>> per_instance(positives.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < static_cast<int64_t>(positives.size()); ++i) {
        IGConfig cfg = config;
        cfg.target_class = class_id;
        const AttributionReport report =
            integrated_gradients(model, instances[static_cast<size_t>(positives[static_cast<size_t>(i)])], cfg);
        auto& sums = per_instance[static_cast<size_t>(i)];
        for (const auto& ev : report.events) sums[vocab.name(ev.event_id)] += ev.importance;
    }
    const double P = static_cast<double>(positives.size());
    std::map<std::string, std::pair<double, double>> moments;  // sum, sum of squares
    std::map<std::string, int> counts;
    for (const auto& sums : per_instance) {
        for (const auto& [key, value] : sums) {
            moments[key].first += value;
            moments[key].second += value * value;
            counts[key]++;
        }
    }
    FamilyImportance fam;
    fam.positive_instances = static_cast<int>(positives.size());
    if (class_id < static_cast<int>(model.class_names.size()))
        fam.class_name = model.class_names[static_cast<size_t>(class_id)];
    for (const auto& [key, ms] : moments) {
        FamilyImportance::Row row;
        row.event = key;
        row.mean = ms.first / P;
        const double ex2 = ms.second / P;
        row.stddev = std::sqrt(std::max(0.0, ex2 - row.mean * row.mean));
        row.count = counts[key];
        fam.rows.push_back(std::move(row));
    }
    std::sort(fam.rows.begin(), fam.rows.end(), [](const auto& a, const auto& b) {
        if (a.mean != b.mean) return a.mean > b.mean;
        return a.event < b.event;
    });
    return fam;
}

// ---------------------------------------------------------------------------
// rendering
// ---------------------------------------------------------------------------

std::string render_report_text(const AttributionReport& report,
                               const telemetry::EventVocabulary& vocab) {
    double max_imp = 0.0;
    for (const auto& ev : report.events) max_imp = std::max(max_imp, std::fabs(ev.importance));
    const double denom = max_imp > 0.0 ? max_imp : 1.0;  // all-zero report renders zeros

    std::ostringstream os;
    os << "target class " << report.target_class << "  predicted " << report.predicted_class
       << " (p=" << report.predicted_prob << ")\n";
    os << "F(x)=" << report.f_input << "  F(baseline)=" << report.f_baseline
       << "  completeness gap=" << report.completeness_gap << "\n";
    int last_step = -1;
    for (const auto& ev : report.events) {
        if (ev.step != last_step) {
            os << "step " << ev.step << ":\n";
            last_step = ev.step;
        }
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.3f", std::fabs(ev.importance) / denom);
        os << "  " << buf << "  " << vocab.name(ev.event_id)
           << (ev.importance < 0 ? "  (-)" : "") << "\n";
    }
    return os.str();
}

std::string report_to_json(const AttributionReport& report,
                           const telemetry::EventVocabulary& vocab) {
    json j;
    j["key"] = {{"org_id", report.key.org_id}, {"user_id", report.key.user_id}, {"ts", report.key.ts}};
    j["target_class"] = report.target_class;
    j["predicted_class"] = report.predicted_class;
    j["predicted_prob"] = report.predicted_prob;
    j["ig_steps"] = report.ig_steps;
    j["f_input"] = report.f_input;
    j["f_baseline"] = report.f_baseline;
    j["attribution_sum"] = report.attribution_sum;
    j["completeness_gap"] = report.completeness_gap;
    json events = json::array();
    for (const auto& ev : report.events)
        events.push_back({{"step", ev.step},
                          {"event", vocab.name(ev.event_id)},
                          {"importance", ev.importance}});
    j["events"] = events;
    json nums = json::array();
    for (const auto& nm : report.numerics)
        nums.push_back({{"step", nm.step}, {"feature", nm.feature}, {"importance", nm.importance}});
    j["numerics"] = nums;
    return j.dump(2);
}

std::string render_family_text(const FamilyImportance& fam, size_t top_k) {
    std::ostringstream os;
    os << "class " << fam.class_name << "  (" << fam.positive_instances
       << " positively classified instances)\n";
    for (size_t i = 0; i < fam.rows.size() && i < top_k; ++i) {
        const auto& r = fam.rows[i];
        char buf[64];
        std::snprintf(buf, sizeof buf, "%8.5f +- %.5f", r.mean, r.stddev);
        os << "  " << buf << "  " << r.event << "  (n=" << r.count << ")\n";
    }
    return os.str();
}

std::string family_to_json(const FamilyImportance& fam) {
    json j;
    j["class"] = fam.class_name;
    j["positive_instances"] = fam.positive_instances;
    json rows = json::array();
    for (const auto& r : fam.rows)
        rows.push_back({{"event", r.event}, {"mean", r.mean}, {"stddev", r.stddev}, {"count", r.count}});
    j["events"] = rows;
    return j.dump(2);
}

}  // namespace iocseq::explain
