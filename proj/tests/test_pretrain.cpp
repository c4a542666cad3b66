#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "iocseq/pretrain.hpp"

using namespace iocseq;
using models::ArchitectureConfig;
using models::ArchKind;
using telemetry::IntervalRecord;

namespace {

constexpr int64_t kVocab = 10;

IntervalRecord rec(const std::string& user, int64_t ts, std::vector<int64_t> events) {
    IntervalRecord r;
    r.org_id = "o";
    r.user_id = user;
    r.ts = ts;
    r.events = std::move(events);
    r.bytes_sent = 50;
    r.bytes_received = 60;
    return r;
}

std::vector<IntervalRecord> user_history(int n, int64_t gap_buckets = 1) {
    std::vector<IntervalRecord> out;
    for (int i = 0; i < n; ++i)
        // distinct event per interval so leakage is detectable
        out.push_back(rec("u", 300 * (1 + i * gap_buckets), {2 + (i % (kVocab - 2))}));
    return out;
}

ArchitectureConfig tiny_arch() {
    ArchitectureConfig c = ArchitectureConfig::make(ArchKind::transformer, "desk", kVocab, 2);
    c.embedding_dim = 8;
    c.tf_blocks = 1;
    c.heads = 2;
    c.ffn_units = 8;
    c.d_model = 8;
    c.dense_layers = 1;
    c.dense_units = 8;
    c.dropout = 0.0f;
    return c;
}

}  // namespace

TEST_CASE("pair counting: w+1 intervals give one pair, w+5 give five") {
    const int w = 4;
    CHECK(pretrain::make_pretrain_pairs(user_history(w + 1), w, 1).size() == 1);
    CHECK(pretrain::make_pretrain_pairs(user_history(w + 5), w, 1).size() == 5);
    CHECK(pretrain::make_pretrain_pairs(user_history(1), w, 1).empty());
    CHECK(pretrain::make_pretrain_pairs(user_history(w), w, 1).empty());
}

TEST_CASE("targets never contain the reserved ids") {
    auto history = user_history(8);
    history[7].events = {telemetry::kUnkId, 5};  // UNK inside a target interval
    auto pairs = pretrain::make_pretrain_pairs(history, 4, 1);
    for (const auto& p : pairs) {
        CHECK(!p.target_ids.empty());
        for (int64_t id : p.target_ids) CHECK(id >= 2);
    }
}

TEST_CASE("a target interval's events never leak into its input window") {
    const int w = 3;
    auto pairs = pretrain::make_pretrain_pairs(user_history(w + 4), w, 1);
    REQUIRE(!pairs.empty());
    for (const auto& p : pairs) {
        CHECK(p.input.width() == w);
        CHECK(p.input.pad_steps == 0);
        // inputs are the w intervals immediately before the target; with one
        // distinct event per interval the target id cannot appear in inputs
        std::set<int64_t> input_ids;
        for (const auto& step : p.input.steps)
            input_ids.insert(step.event_ids.begin(), step.event_ids.end());
        for (int64_t id : p.target_ids) CHECK(input_ids.count(id) == 0);
    }
}

TEST_CASE("adjacency flag keeps only 300-second successors") {
    auto sparse = user_history(10, /*gap_buckets=*/2);  // 600 s apart
    CHECK(!pretrain::make_pretrain_pairs(sparse, 3, 1, false).empty());
    CHECK(pretrain::make_pretrain_pairs(sparse, 3, 1, true).empty());
}

TEST_CASE("one optimizer step on a repeated batch lowers its loss") {
    auto pairs = pretrain::make_pretrain_pairs(user_history(10), 3, 1);
    pretrain::PretrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 64;
    cfg.seed = 5;
    auto result = pretrain::pretrain(tiny_arch(), 0x77, pairs, cfg);
    REQUIRE(result.log.size() == 2);
    CHECK(result.log[1].loss < result.log[0].loss);
}

TEST_CASE("untrained loss matches the closed form at the initial activation") {
    // with one batch and no training steps yet, the first logged loss is the
    // bce of the initial sigmoid outputs; compare against a direct evaluation
    auto pairs = pretrain::make_pretrain_pairs(user_history(6), 2, 1);
    REQUIRE(!pairs.empty());
    const ArchitectureConfig arch = tiny_arch();
    pretrain::PretrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 1024;
    cfg.seed = 9;

    // reproduce the initial model and compute expected first-batch loss
    models::Model init;
    init.config = arch;
    init.config.n_classes = kVocab - 2;
    init.task = "pretrain";
    init.params = models::build_encoder_params(init.config, cfg.seed);
    init.params["pretrain.out.W"] =
        nd::glorot_init({models::encoder_width(arch), kVocab - 2}, hash_combine(cfg.seed, 0x93e7));
    init.params["pretrain.out.b"] = nd::Tensor::zeros({kVocab - 2});

    // order of a single full batch is irrelevant; evaluate loss by hand
    std::vector<const telemetry::WindowInstance*> insts;
    nd::Tensor targets({static_cast<int64_t>(pairs.size()), kVocab - 2});
    for (size_t i = 0; i < pairs.size(); ++i) {
        insts.push_back(&pairs[i].input);
        for (int64_t id : pairs[i].target_ids) targets.at(static_cast<int64_t>(i), id - 2) = 1.0f;
    }
    models::EncodedBatch batch = models::encode_batch(insts, kVocab);
    nd::Graph g;
    nd::BoundParams bound = bind_params(g, init.params);
    models::ForwardCtx ctx;
    const int occ = nd::embedding_lookup(g, bound.id("embedding"), batch.event_ids);
    const int feats = models::encode_input(g, init, batch, occ);
    const int rep = models::encoder_output(g, init, bound, batch, feats, ctx);
    const int sig = nd::dense(g, rep, bound.id("pretrain.out.W"), bound.id("pretrain.out.b"),
                              nd::Act::sigmoid);
    for (float v : g.value(sig).data) {
        CHECK(v > 0.0f);
        CHECK(v < 1.0f);
    }
    const int loss = nd::binary_cross_entropy(g, sig, g.leaf(targets, false));
    const double expected_first_loss = g.value(loss).data[0];

    auto result = pretrain::pretrain(arch, 0x77, pairs, cfg);
    CHECK(result.log[0].loss == doctest::Approx(expected_first_loss).epsilon(1e-4));
}

TEST_CASE("transfer copies the encoder bit-exactly and rebuilds the head") {
    auto pairs = pretrain::make_pretrain_pairs(user_history(12), 3, 1);
    pretrain::PretrainConfig cfg;
    cfg.epochs = 1;
    cfg.seed = 21;
    auto pre = pretrain::pretrain(tiny_arch(), 0xbeef, pairs, cfg);

    ArchitectureConfig sup = tiny_arch();
    sup.n_classes = 4;
    models::Model fine = pretrain::transfer_weights(pre.model, sup, 0xbeef, 1234);
    for (const auto& [name, tensor] : fine.params) {
        if (name == "embedding" || name.rfind("enc.", 0) == 0) {
            CHECK(tensor.data == pre.model.params.at(name).data);
        } else {
            CHECK(name.rfind("pretrain.", 0) != 0);  // pretrain head discarded
        }
    }
    CHECK(fine.params.at("head.out.W").shape ==
          std::vector<int64_t>{8, 4});  // fresh head sized for the supervised task
    CHECK(fine.params.count("pretrain.out.W") == 0);

    // encoder activations agree before any fine-tuning
    telemetry::WindowInstance inst = pairs[0].input;
    models::EncodedBatch batch = models::encode_batch({&inst}, kVocab);
    auto encoder_rep = [&](const models::Model& m) {
        nd::Graph g;
        nd::BoundParams bound = bind_params(g, m.params);
        models::ForwardCtx ctx;
        const int occ = nd::embedding_lookup(g, bound.id("embedding"), batch.event_ids);
        const int feats = models::encode_input(g, m, batch, occ);
        return g.value(models::encoder_output(g, m, bound, batch, feats, ctx)).data;
    };
    auto a = encoder_rep(pre.model);
    auto b = encoder_rep(fine);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("transfer rejects vocabulary and architecture mismatches") {
    auto pairs = pretrain::make_pretrain_pairs(user_history(8), 3, 1);
    pretrain::PretrainConfig cfg;
    cfg.epochs = 1;
    auto pre = pretrain::pretrain(tiny_arch(), 0x1111, pairs, cfg);

    ArchitectureConfig sup = tiny_arch();
    sup.n_classes = 3;
    CHECK_THROWS_WITH_AS(pretrain::transfer_weights(pre.model, sup, 0x2222, 0),
                         doctest::Contains("vocabulary hash"), std::runtime_error);

    ArchitectureConfig other = sup;
    other.variant = ArchKind::cnn;
    CHECK_THROWS_WITH_AS(pretrain::transfer_weights(pre.model, other, 0x1111, 0),
                         doctest::Contains("architecture"), std::runtime_error);

    ArchitectureConfig wider = sup;
    wider.d_model = 16;
    wider.heads = 2;
    wider.embedding_dim = 16;
    CHECK_THROWS_WITH_AS(pretrain::transfer_weights(pre.model, wider, 0x1111, 0),
                         doctest::Contains("width"), std::runtime_error);
}
