#include "iocseq/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::evalkit {

using nlohmann::json;

ScoredDataset score_model(const models::Model& model, const trainer::LabeledWindows& data) {
    ScoredDataset out;
    auto preds = models::predict_batch(model, data.instances);
    for (size_t i = 0; i < preds.size(); ++i) {
        out.push_back(ScoredInstance{data.labels[i], std::move(preds[i].probs),
                                     data.instances[i].key});
    }
    return out;
}

ScoredDataset score_forest(const forest::ForestModel& model, const trainer::LabeledWindows& data) {
    // forest feature width encodes the vocabulary size: dim = w(|V|-2) + 3w
    const int64_t w = data.instances.empty() ? 0 : data.instances[0].width();
    require(w > 0, "score_forest: empty dataset");
    const int64_t vocab_size = (model.dim - 3 * w) / w + 2;
    ScoredDataset out;
    for (size_t i = 0; i < data.instances.size(); ++i) {
        auto probs = forest::predict_forest(
            model, forest::featurize_window(data.instances[i], vocab_size));
        ScoredInstance s;
        s.true_class = data.labels[i];
        s.probs.assign(probs.begin(), probs.end());
        s.key = data.instances[i].key;
        out.push_back(std::move(s));
    }
    return out;
}

double accuracy(const ScoredDataset& scored) {
    require(!scored.empty(), "accuracy: empty dataset");
    int64_t correct = 0;
    for (const auto& s : scored) {
        int best = 0;
        for (size_t c = 1; c < s.probs.size(); ++c)
            if (s.probs[c] > s.probs[static_cast<size_t>(best)]) best = static_cast<int>(c);
        correct += best == s.true_class;
    }
    return static_cast<double>(correct) / static_cast<double>(scored.size());
}

// ---------------------------------------------------------------------------
// AUC
// ---------------------------------------------------------------------------

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    require(scores.size() == labels.size(), "auc: scores/labels size mismatch");
    int64_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg)++;
    require(n_pos > 0 && n_neg > 0, "auc: need at least one positive and one negative");

    // Rank statistics with midranks for ties, carried in integer half-units so
    // the result is exactly the pair-counting value (concordant + ties/2).
    std::vector<size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    int64_t rank_halves_sum = 0;  // sum over positives of (2 * rank), midranks included
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        // tied block [i..j]: midrank = (first + last)/2 with 1-based ranks
        const int64_t two_midrank = static_cast<int64_t>(i + 1) + static_cast<int64_t>(j + 1);
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_halves_sum += two_midrank;
        i = j + 1;
    }
    // 2U = 2R+ - n+(n+1); AUC = 2U / (2 n+ n-)
    const int64_t two_u = rank_halves_sum - n_pos * (n_pos + 1);
    return static_cast<double>(two_u) / static_cast<double>(2 * n_pos * n_neg);
}

MacroAuc macro_auc(const ScoredDataset& scored, int n_classes) {
    require(!scored.empty(), "macro_auc: empty dataset");
    MacroAuc out;
    double sum = 0.0;
    int valid = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<double> scores;
        std::vector<int> labels;
        for (const auto& s : scored) {
            scores.push_back(s.probs[static_cast<size_t>(c)]);
            labels.push_back(s.true_class == c);
        }
        const int64_t pos = std::count(labels.begin(), labels.end(), 1);
        if (pos == 0 || pos == static_cast<int64_t>(labels.size())) {
            out.skipped_classes.push_back(c);  // degenerate one-vs-rest framing
            continue;
        }
        const double a = auc(scores, labels);
        out.per_class[c] = a;
        sum += a;
        ++valid;
    }
    require(valid > 0, "macro_auc: no class has both positives and negatives");
    out.value = sum / static_cast<double>(valid);
    return out;
}

// ---------------------------------------------------------------------------
// curves
// ---------------------------------------------------------------------------

namespace {

struct BinaryScores {
    std::vector<double> scores;
    std::vector<int> labels;
    int64_t n_pos = 0, n_neg = 0;
};

BinaryScores one_vs_rest(const ScoredDataset& scored, int class_id) {
    BinaryScores b;
    for (const auto& s : scored) {
        b.scores.push_back(s.probs[static_cast<size_t>(class_id)]);
        const int y = s.true_class == class_id;
        b.labels.push_back(y);
        (y ? b.n_pos : b.n_neg)++;
    }
    return b;
}

// threshold sweep over distinct scores, high to low
void sweep_curves(const BinaryScores& b, std::vector<std::pair<double, double>>& roc,
                  std::vector<std::pair<double, double>>& pr) {
    std::vector<size_t> order(b.scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t x, size_t y) { return b.scores[x] > b.scores[y]; });
    roc.clear();
    pr.clear();
    roc.emplace_back(0.0, 0.0);
    int64_t tp = 0, fp = 0;
    size_t i = 0;
    while (i < order.size()) {
        size_t j = i;
        while (j + 1 < order.size() && b.scores[order[j + 1]] == b.scores[order[i]]) ++j;
        const bool full_recall_before = tp == b.n_pos;
        for (size_t k = i; k <= j; ++k) (b.labels[order[k]] ? tp : fp)++;
        const double tpr = static_cast<double>(tp) / static_cast<double>(b.n_pos);
        const double fpr = static_cast<double>(fp) / static_cast<double>(b.n_neg);
        roc.emplace_back(fpr, tpr);
        // PR stops once full recall is reached; later thresholds only dilute
        if (!full_recall_before)
            pr.emplace_back(tpr, static_cast<double>(tp) / static_cast<double>(tp + fp));
        i = j + 1;
    }
}

double interp_at(const std::vector<std::pair<double, double>>& pts, double x) {
    // pts x-sorted ascending; step interpolation (last y at or before x)
    double y = pts.empty() ? 0.0 : pts.front().second;
    for (const auto& [px, py] : pts) {
        if (px <= x) y = py;
        else break;
    }
    return y;
}

}  // namespace

ClassCurves curves(const ScoredDataset& scored, int class_id, int bootstrap_b, uint64_t seed) {
    BinaryScores base = one_vs_rest(scored, class_id);
    require(base.n_pos > 0 && base.n_neg > 0, "curves: class ", class_id,
            " lacks positives or negatives");
    std::vector<std::pair<double, double>> roc, pr;
    sweep_curves(base, roc, pr);

    // standard error per base point from B instance-bootstrap resamples
    std::vector<std::vector<double>> roc_samples(roc.size()), pr_samples(pr.size());
    for (int rep = 0; rep < bootstrap_b; ++rep) {
        SplitMix64 rng(hash_combine(hash_combine(seed, 0xb001), static_cast<uint64_t>(rep)));
        BinaryScores bs;
        for (size_t i = 0; i < scored.size(); ++i) {
            const size_t pick = static_cast<size_t>(rng.below(scored.size()));
            bs.scores.push_back(base.scores[pick]);
            const int y = base.labels[pick];
            bs.labels.push_back(y);
            (y ? bs.n_pos : bs.n_neg)++;
        }
        if (bs.n_pos == 0 || bs.n_neg == 0) continue;  // degenerate resample
        std::vector<std::pair<double, double>> rroc, rpr;
        sweep_curves(bs, rroc, rpr);
        std::sort(rroc.begin(), rroc.end());
        for (size_t i = 0; i < roc.size(); ++i)
            roc_samples[i].push_back(interp_at(rroc, roc[i].first));
        std::sort(rpr.begin(), rpr.end());
        for (size_t i = 0; i < pr.size(); ++i)
            pr_samples[i].push_back(interp_at(rpr, pr[i].first));
    }
    auto stderr_of = [](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        return std::sqrt(var / static_cast<double>(v.size() - 1));
    };

    ClassCurves out;
    out.min_plot_fpr = 1.0 / static_cast<double>(base.n_neg);
    for (size_t i = 0; i < roc.size(); ++i)
        out.roc.push_back(CurvePoint{roc[i].first, roc[i].second, stderr_of(roc_samples[i])});
    for (size_t i = 0; i < pr.size(); ++i)
        out.pr.push_back(CurvePoint{pr[i].first, pr[i].second, stderr_of(pr_samples[i])});
    return out;
}

void export_curves_csv(const std::map<std::string, ClassCurves>& per_class,
                       const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "curves: cannot open '", path, "' for writing");
    f << "class,curve_type,x,y,stderr\n";
    for (const auto& [name, cc] : per_class) {
        for (const auto& p : cc.roc) {
            // log-scale plots cannot show FPR = 0; clamp to 1/#negatives
            const double x = std::max(p.x, cc.min_plot_fpr);
            f << name << ",roc," << x << "," << p.y << "," << p.band << "\n";
        }
        for (const auto& p : cc.pr)
            f << name << ",pr," << p.x << "," << p.y << "," << p.band << "\n";
    }
    require(f.good(), "curves: write failed for '", path, "'");
}

// ---------------------------------------------------------------------------
// few-shot protocol
// ---------------------------------------------------------------------------

std::vector<AtNRow> at_n_protocol(const AtNConfig& config, const models::ArchitectureConfig& arch,
                                  const trainer::LabeledWindows& train_data,
                                  const trainer::LabeledWindows& test_data, uint64_t vocab_hash,
                                  const models::Model* pretrained) {
    require(!config.n_values.empty(), "at_n: no n values");
    const int n_classes = static_cast<int>(train_data.class_names.size());
    std::vector<AtNRow> rows;
    for (const auto& n : config.n_values) {
        AtNRow row;
        row.n = n;
        row.n_label = n ? std::to_string(*n) : "all";
        const int repeats = n ? config.repeats : 1;  // n = all is a plain training run
        for (int rep = 0; rep < repeats; ++rep) {
            trainer::TrainConfig cfg = config.base;
            cfg.per_class_cap = n;
            cfg.seed = hash_combine(hash_combine(config.seed, static_cast<uint64_t>(rep)),
                                    n ? static_cast<uint64_t>(*n) : 0xa11ull);
            models::ArchitectureConfig ac = arch;
            ac.n_classes = n_classes;
            models::Model model =
                pretrained ? pretrain::transfer_weights(*pretrained, ac, vocab_hash, cfg.seed)
                           : models::build_model(ac, vocab_hash, cfg.seed);
            trainer::TrainResult trained = trainer::train(cfg, std::move(model), train_data);
            ScoredDataset scored = score_model(trained.model, test_data);
            row.accs.push_back(accuracy(scored));
            row.aucs.push_back(macro_auc(scored, n_classes).value);
        }
        row.mean_acc = std::accumulate(row.accs.begin(), row.accs.end(), 0.0) /
                       static_cast<double>(row.accs.size());
        row.mean_auc = std::accumulate(row.aucs.begin(), row.aucs.end(), 0.0) /
                       static_cast<double>(row.aucs.size());
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string at_n_table_json(const std::vector<AtNRow>& rows) {
    json j = json::array();
    for (const auto& r : rows) {
        json row;
        row["n"] = r.n_label;
        row["mean_acc"] = r.mean_acc;
        row["mean_auc"] = r.mean_auc;
        row["accs"] = r.accs;
        row["aucs"] = r.aucs;
        j.push_back(std::move(row));
    }
    return j.dump(2);
}

// ---------------------------------------------------------------------------
// paired t test
// ---------------------------------------------------------------------------

namespace {

// continued fraction for the incomplete beta (Lentz), converges far below 1e-8
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-15;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0, d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double reg_incomplete_beta(double a, double b, double x) {
    require(x >= 0.0 && x <= 1.0, "incomplete beta: x out of [0,1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                            a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, int dof) {
    require(dof >= 1, "t test: dof must be >= 1");
    const double v = static_cast<double>(dof);
    return reg_incomplete_beta(v / 2.0, 0.5, v / (v + t * t));
}

TTestResult paired_significance(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() == b.size(), "t test: samples must be paired (", a.size(), " vs ", b.size(),
            ")");
    require(a.size() >= 2, "t test: need at least 2 pairs");
    const int n = static_cast<int>(a.size());
    double mean = 0.0;
    for (int i = 0; i < n; ++i) mean += a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)];
    mean /= n;
    double var = 0.0;
    for (int i = 0; i < n; ++i) {
        const double d = a[static_cast<size_t>(i)] - b[static_cast<size_t>(i)] - mean;
        var += d * d;
    }
    var /= (n - 1);
    TTestResult res;
    if (var == 0.0) {
        // documented convention for degenerate pairs
        res.t = 0.0;
        res.p = mean == 0.0 ? 1.0 : 0.0;
        res.significant = mean != 0.0;
        return res;
    }
    res.t = mean / std::sqrt(var / n);
    res.p = student_t_two_sided_p(res.t, n - 1);
    res.significant = res.p < 0.05;
    return res;
}

}  // namespace iocseq::evalkit
