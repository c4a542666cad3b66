#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "iocseq/explain.hpp"
#include "iocseq/synthgen.hpp"
#include "iocseq/trainer.hpp"

#include <json.hpp>

using namespace iocseq;
using models::ArchitectureConfig;
using models::ArchKind;
using nd::Tensor;
using telemetry::EncodedStep;
using telemetry::WindowInstance;

namespace {

constexpr int64_t kVocab = 8;

WindowInstance make_window(std::vector<std::vector<int64_t>> step_events, int pad_steps = 0) {
    WindowInstance inst;
    inst.pad_steps = pad_steps;
    for (int i = 0; i < pad_steps; ++i) {
        EncodedStep s;
        s.event_ids = {telemetry::kPadId};
        inst.steps.push_back(s);
        inst.pad_mask.push_back(true);
    }
    double t = 0.4;
    for (auto& ev : step_events) {
        EncodedStep s;
        s.event_ids = std::move(ev);
        s.log_dt = t;
        s.log_sent = t + 0.2;
        s.log_recv = t + 0.4;
        t += 0.25;
        inst.steps.push_back(s);
        inst.pad_mask.push_back(false);
    }
    inst.key = telemetry::WindowKey{"o", "u", 600};
    return inst;
}

models::Model tiny_model(int64_t n_classes, uint64_t seed) {
    ArchitectureConfig c = ArchitectureConfig::make(ArchKind::transformer, "desk", kVocab,
                                                    n_classes);
    c.embedding_dim = 6;
    c.tf_blocks = 1;
    c.heads = 2;
    c.ffn_units = 8;
    c.d_model = 6;
    c.dense_layers = 1;
    c.dense_units = 8;
    c.dropout = 0.0f;
    models::Model m = models::build_model(c, 0xfeed, seed);
    m.class_names.resize(static_cast<size_t>(n_classes));
    for (int64_t i = 0; i < n_classes; ++i)
        m.class_names[static_cast<size_t>(i)] = "class" + std::to_string(i);
    return m;
}

// a small trained model over two planted-signature families
struct Trained {
    models::Model model;
    telemetry::EventVocabulary vocab;
    std::vector<WindowInstance> windows;
    trainer::LabeledWindows data;
};

Trained train_toy() {
    synthgen::ScenarioConfig cfg;
    synthgen::BehaviorProfile a;
    a.name = "alpha";
    a.taxonomy = telemetry::TaxonomyLabel{"ta", "alpha", "ca"};
    a.signature_events = {{"sig a1", 0.9}, {"sig a2", 0.8}};
    a.background_rate = 0.6;
    synthgen::BehaviorProfile b;
    b.name = "beta";
    b.taxonomy = telemetry::TaxonomyLabel{"tb", "beta", "cb"};
    b.signature_events = {{"sig b1", 0.9}, {"sig b2", 0.8}};
    b.background_rate = 0.6;
    cfg.profiles = {{a, 4}, {b, 4}};
    cfg.benign_profile.name = "benign";
    cfg.benign_profile.background_rate = 1.0;
    cfg.benign_users = 0;
    cfg.duration = 50;
    cfg.seed = 23;
    cfg.event_universe = {"sig a1", "sig a2", "sig b1", "sig b2",
                          "noise 1", "noise 2", "noise 3", "noise 4"};
    auto raw = synthgen::generate(cfg);
    Trained t{models::Model{}, telemetry::build_vocabulary(raw), {}, {}};
    t.windows = telemetry::windowize(telemetry::encode_records(raw, t.vocab), 5, 2);
    t.data = trainer::select_labeled(t.windows, "family");

    ArchitectureConfig ac = ArchitectureConfig::make(ArchKind::transformer, "desk",
                                                     t.vocab.size(), 2);
    ac.embedding_dim = 16;
    ac.tf_blocks = 1;
    ac.heads = 2;
    ac.ffn_units = 16;
    ac.d_model = 16;
    ac.dense_layers = 1;
    ac.dense_units = 16;
    trainer::TrainConfig tc;
    tc.task = "family";
    tc.epochs = 10;
    tc.batch_size = 32;
    tc.seed = 4;
    auto result = trainer::train(tc, models::build_model(ac, t.vocab.hash(), 4), t.data);
    t.model = std::move(result.model);
    return t;
}

}  // namespace

TEST_CASE("linear targets are attributed exactly for any m") {
    // F(x) = c . x has a constant gradient, so the m-step sum is exact
    SplitMix64 rng(42);
    Tensor input({3, 4});
    Tensor coef({3, 4});
    for (auto& v : input.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    for (auto& v : coef.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    auto linear = [&](const Tensor& x, Tensor* grad) {
        double acc = 0;
        for (int64_t i = 0; i < x.size(); ++i)
            acc += static_cast<double>(coef.data[static_cast<size_t>(i)]) * x.data[static_cast<size_t>(i)];
        if (grad) *grad = coef;
        return acc;
    };
    for (int m : {1, 2, 7, 300}) {
        explain::PathResult r = explain::ig_path(linear, input, m);
        for (int64_t i = 0; i < input.size(); ++i) {
            const double expect = static_cast<double>(coef.data[static_cast<size_t>(i)]) *
                                  static_cast<double>(input.data[static_cast<size_t>(i)]);
            CHECK(r.attribution[static_cast<size_t>(i)] == doctest::Approx(expect).epsilon(1e-6));
        }
        CHECK(r.gap == doctest::Approx(0.0).epsilon(1e-6));
        CHECK(r.f_baseline == 0.0);
    }
}

TEST_CASE("ig rejects m < 1 and out-of-range targets") {
    models::Model m = tiny_model(2, 9);
    WindowInstance inst = make_window({{2}, {3}});
    explain::IGConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(explain::integrated_gradients(m, inst, cfg), std::runtime_error);
    cfg.steps = 10;
    cfg.target_class = 5;
    CHECK_THROWS_AS(explain::integrated_gradients(m, inst, cfg), std::runtime_error);
}

TEST_CASE("an instance equal to its baseline gets zero attribution everywhere") {
    // all-PAD events: the embedding rows are the pinned zero vector
    models::Model m = tiny_model(2, 10);
    WindowInstance inst = make_window({{telemetry::kPadId}, {telemetry::kPadId}});
    explain::IGConfig cfg;
    cfg.steps = 25;
    auto report = explain::integrated_gradients(m, inst, cfg);
    REQUIRE(report.events.size() == 2);
    for (const auto& ev : report.events) CHECK(ev.importance == 0.0);
    CHECK(report.attribution_sum == 0.0);
    CHECK(report.f_input == doctest::Approx(report.f_baseline));
}

TEST_CASE("report covers every real event occurrence exactly once") {
    models::Model m = tiny_model(3, 11);
    WindowInstance inst = make_window({{2, 4}, {3}, {2}}, /*pad_steps=*/2);
    explain::IGConfig cfg;
    cfg.steps = 8;
    auto report = explain::integrated_gradients(m, inst, cfg);
    REQUIRE(report.events.size() == 4);  // (2,4), (3), (2) on real steps only
    CHECK(report.events[0].step == 2);
    CHECK(report.events[0].event_id == 2);
    CHECK(report.events[1].event_id == 4);
    CHECK(report.events[2].step == 3);
    CHECK(report.events[3].step == 4);
    // numeric features are identically zero under this baseline
    REQUIRE(report.numerics.size() == 9);
    for (const auto& nm : report.numerics) CHECK(nm.importance == 0.0);
}

TEST_CASE("reports are deterministic") {
    models::Model m = tiny_model(2, 12);
    WindowInstance inst = make_window({{2, 5}, {6}});
    explain::IGConfig cfg;
    cfg.steps = 37;
    auto a = explain::integrated_gradients(m, inst, cfg);
    auto b = explain::integrated_gradients(m, inst, cfg);
    REQUIRE(a.events.size() == b.events.size());
    for (size_t i = 0; i < a.events.size(); ++i)
        CHECK(a.events[i].importance == b.events[i].importance);
    CHECK(a.completeness_gap == b.completeness_gap);
}

TEST_CASE("low-m attributions approach the high-m oracle on a trained model") {
    Trained t = train_toy();
    explain::IGConfig lo;
    lo.steps = 50;
    explain::IGConfig hi;
    hi.steps = 5000;
    lo.target_class = hi.target_class = 0;
    int checked = 0;
    for (size_t i = 0; i < t.data.instances.size() && checked < 3; ++i) {
        if (t.data.labels[i] != 0) continue;
        ++checked;
        auto a = explain::integrated_gradients(t.model, t.data.instances[i], lo);
        auto b = explain::integrated_gradients(t.model, t.data.instances[i], hi);
        REQUIRE(a.events.size() == b.events.size());
        for (size_t j = 0; j < a.events.size(); ++j) {
            const double diff = std::fabs(a.events[j].importance - b.events[j].importance);
            const bool ok = diff <= 0.02 * std::fabs(b.events[j].importance) + 1e-4;
            INFO("event ", j, ": m=50 ", a.events[j].importance, " vs m=5000 ",
                 b.events[j].importance);
            CHECK(ok);
        }
    }
    CHECK(checked == 3);
}

TEST_CASE("completeness holds at m=300 on a trained model") {
    Trained t = train_toy();
    explain::IGConfig cfg;
    cfg.steps = 300;
    cfg.target_class = 1;
    int checked = 0;
    for (size_t i = 0; i < t.data.instances.size() && checked < 5; ++i) {
        if (t.data.labels[i] != 1) continue;
        ++checked;
        auto report = explain::integrated_gradients(t.model, t.data.instances[i], cfg);
        const double bound = 0.01 * std::fabs(report.f_input - report.f_baseline) + 1e-4;
        INFO("gap ", report.completeness_gap, " bound ", bound);
        CHECK(report.completeness_gap <= bound);
        // the check entry point recomputes the same gap
        CHECK(explain::completeness_check(report, t.model, t.data.instances[i]) ==
              doctest::Approx(report.completeness_gap).epsilon(1e-9));
    }
    CHECK(checked == 5);
}

TEST_CASE("family importance: single instance means, duplication invariance") {
    Trained t = train_toy();
    // find one instance predicted as class 0
    std::vector<WindowInstance> one;
    for (const auto& inst : t.data.instances) {
        if (models::predict(t.model, inst).class_id == 0) {
            one.push_back(inst);
            break;
        }
    }
    REQUIRE(one.size() == 1);
    explain::IGConfig cfg;
    cfg.steps = 40;
    auto single = explain::family_importance(t.model, t.vocab, one, 0, cfg);
    CHECK(single.positive_instances == 1);
    for (const auto& row : single.rows) {
        CHECK(row.stddev == doctest::Approx(0.0));
        CHECK(row.count == 1);
    }
    // duplicated instances: identical means and stds
    std::vector<WindowInstance> twice = {one[0], one[0]};
    auto doubled = explain::family_importance(t.model, t.vocab, twice, 0, cfg);
    CHECK(doubled.positive_instances == 2);
    REQUIRE(doubled.rows.size() == single.rows.size());
    for (size_t i = 0; i < doubled.rows.size(); ++i) {
        CHECK(doubled.rows[i].event == single.rows[i].event);
        CHECK(doubled.rows[i].mean == doctest::Approx(single.rows[i].mean).epsilon(1e-12));
        CHECK(doubled.rows[i].stddev == doctest::Approx(0.0));
    }
    // sorted descending by mean
    for (size_t i = 1; i < doubled.rows.size(); ++i)
        CHECK(doubled.rows[i - 1].mean >= doubled.rows[i].mean);
}

TEST_CASE("family importance recovers the planted signatures") {
    Trained t = train_toy();
    explain::IGConfig cfg;
    cfg.steps = 60;
    auto fam = explain::family_importance(t.model, t.vocab, t.data.instances, 0, cfg);
    REQUIRE(fam.rows.size() >= 2);
    // the two planted alpha signature events rank above all noise
    std::set<std::string> top2 = {fam.rows[0].event, fam.rows[1].event};
    CHECK(top2.count("sig a1"));
    CHECK(top2.count("sig a2"));
}

TEST_CASE("family importance requires at least one positive classification") {
    models::Model m = tiny_model(2, 13);
    telemetry::EventVocabulary vocab(std::vector<std::string>(
        {"a1", "a2", "a3", "a4", "a5", "a6"}));
    REQUIRE(vocab.size() == kVocab);
    std::vector<WindowInstance> insts = {make_window({{2}, {3}})};
    // whichever class the model picks, the other one has no positives
    const int predicted = models::predict(m, insts[0]).class_id;
    explain::IGConfig cfg;
    cfg.steps = 5;
    CHECK_THROWS_WITH_AS(explain::family_importance(m, vocab, insts, 1 - predicted, cfg),
                         doctest::Contains("no instance"), std::runtime_error);
}

TEST_CASE("render normalizes to the maximum and guards the all-zero report") {
    models::Model m = tiny_model(2, 14);
    telemetry::EventVocabulary vocab(std::vector<std::string>(
        {"a1", "a2", "a3", "a4", "a5", "a6"}));
    WindowInstance inst = make_window({{2, 3}, {4}});
    explain::IGConfig cfg;
    cfg.steps = 20;
    auto report = explain::integrated_gradients(m, inst, cfg);
    const std::string text = explain::render_report_text(report, vocab);
    CHECK(text.find("1.000") != std::string::npos);  // max-normalized peak

    WindowInstance zero = make_window({{telemetry::kPadId}});
    auto zero_report = explain::integrated_gradients(m, zero, cfg);
    const std::string zero_text = explain::render_report_text(zero_report, vocab);
    CHECK(zero_text.find("nan") == std::string::npos);
    CHECK(zero_text.find("0.000") != std::string::npos);

    // JSON mirrors raw values
    auto j = nlohmann::json::parse(explain::report_to_json(report, vocab));
    REQUIRE(j.at("events").size() == report.events.size());
    for (size_t i = 0; i < report.events.size(); ++i)
        CHECK(j.at("events")[i].at("importance").get<double>() ==
              doctest::Approx(report.events[i].importance).epsilon(1e-12));
}
