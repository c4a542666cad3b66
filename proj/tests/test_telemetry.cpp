#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "iocseq/common.hpp"
#include "iocseq/telemetry.hpp"

using namespace iocseq;
using namespace iocseq::telemetry;

namespace {

RawRecord make_raw(const std::string& user, int64_t ts, std::vector<std::string> events) {
    RawRecord r;
    r.org_id = "o1";
    r.user_id = user;
    r.ts = ts;
    r.events = std::move(events);
    r.bytes_sent = 100;
    r.bytes_received = 200;
    return r;
}

IntervalRecord make_rec(const std::string& user, int64_t ts, std::vector<int64_t> events) {
    IntervalRecord r;
    r.org_id = "o1";
    r.user_id = user;
    r.ts = ts;
    r.events = std::move(events);
    r.bytes_sent = 100;
    r.bytes_received = 200;
    return r;
}

}  // namespace

TEST_CASE("parse_log accepts a valid line") {
    std::istringstream in(
        R"({"org_id":"o1","user_id":"u1","ts":1590000300,"events":["dga"],"bytes_sent":10,"bytes_received":20})"
        "\n");
    auto records = parse_log(in);
    REQUIRE(records.size() == 1);
    CHECK(records[0].org_id == "o1");
    CHECK(records[0].events == std::vector<std::string>{"dga"});
    CHECK(!records[0].label.has_value());
}

TEST_CASE("parse_log on an empty stream yields an empty list") {
    std::istringstream in("");
    CHECK(parse_log(in).empty());
}

TEST_CASE("parse_log rejects a timestamp off the 300-second grid") {
    std::istringstream in(
        R"({"org_id":"o","user_id":"u","ts":301,"events":["x"],"bytes_sent":0,"bytes_received":0})"
        "\n");
    CHECK_THROWS_WITH_AS(parse_log(in), doctest::Contains("line 1"), std::runtime_error);
}

TEST_CASE("parse_log rejects negative byte counts and reports the line number") {
    std::istringstream in(
        "{\"org_id\":\"o\",\"user_id\":\"u\",\"ts\":300,\"events\":[\"x\"],\"bytes_sent\":1,\"bytes_received\":1}\n"
        "{\"org_id\":\"o\",\"user_id\":\"u\",\"ts\":600,\"events\":[\"x\"],\"bytes_sent\":-5,\"bytes_received\":1}\n");
    CHECK_THROWS_WITH_AS(parse_log(in), doctest::Contains("line 2"), std::runtime_error);
}

TEST_CASE("parse_log round-trips labels") {
    RawRecord r = make_raw("u", 1590000300, {"dga", "cryptomining"});
    r.label = TaxonomyLabel{std::nullopt, "WannaCry", "Ransomware"};
    std::stringstream io;
    write_log({r}, io);
    auto back = parse_log(io);
    REQUIRE(back.size() == 1);
    REQUIRE(back[0].label.has_value());
    CHECK(back[0].label->family == "WannaCry");
    CHECK(!back[0].label->threat_id.has_value());
}

TEST_CASE("build_vocabulary sorts names after the reserved entries") {
    auto vocab = build_vocabulary({make_raw("u", 300, {"dga", "cryptomining"})});
    CHECK(vocab.size() == 4);
    CHECK(vocab.name(0) == "<PAD>");
    CHECK(vocab.name(1) == "<UNK>");
    CHECK(vocab.name(2) == "cryptomining");
    CHECK(vocab.name(3) == "dga");
    CHECK(vocab.id("dga") == 3);
}

TEST_CASE("empty corpus vocabulary has exactly the two reserved entries") {
    CHECK(build_vocabulary({}).size() == 2);
}

TEST_CASE("216 distinct names produce a 218-entry vocabulary") {
    std::vector<RawRecord> records;
    for (int i = 0; i < 216; ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "e%03d", i);
        records.push_back(make_raw("u", 300 * (i + 1), {name}));
    }
    CHECK(build_vocabulary(records).size() == 218);
}

TEST_CASE("encode_events maps unknown names to <UNK> and rejects empty sets") {
    auto vocab = build_vocabulary({make_raw("u", 300, {"dga"})});
    CHECK(encode_events({"dga"}, vocab) == std::vector<int64_t>{2});
    CHECK(encode_events({"never seen"}, vocab) == std::vector<int64_t>{kUnkId});
    CHECK_THROWS_AS(encode_events({}, vocab), std::runtime_error);
}

TEST_CASE("vocabulary file round-trips and enforces the reserved header") {
    auto vocab = build_vocabulary({make_raw("u", 300, {"dga", "cryptomining", "p2p traffic"})});
    const std::string path = "/tmp/iocseq_test_vocab.txt";
    vocab.save(path);
    auto loaded = EventVocabulary::load(path);
    CHECK(loaded.names() == vocab.names());
    CHECK(loaded.hash() == vocab.hash());
    {
        std::ofstream f(path, std::ios::trunc);
        f << "nope\n<UNK>\n";
    }
    CHECK_THROWS_AS(EventVocabulary::load(path), std::runtime_error);
}

TEST_CASE("windowize: 25 intervals, w=21, stride=1") {
    std::vector<IntervalRecord> records;
    for (int i = 0; i < 25; ++i) records.push_back(make_rec("u", 300 * (i + 1), {2}));
    auto windows = windowize(records, 21, 1);
    REQUIRE(windows.size() == 25);  // one window per interval
    // window ending at interval i (0-based) has max(0, 21-(i+1)) padded steps
    int padded_count = 0;
    for (const auto& w : windows) {
        const int end_index = static_cast<int>(w.key.ts / 300) - 1;
        const int expect_pad = std::max(0, 21 - (end_index + 1));
        CHECK(w.pad_steps == expect_pad);
        CHECK(w.width() == 21);
        CHECK_FALSE(w.pad_mask.back());  // final step always real
        padded_count += w.pad_steps > 0;
    }
    CHECK(padded_count == 20);
}

TEST_CASE("windowize: single interval with w=1 gives one unpadded window") {
    auto windows = windowize({make_rec("u", 300, {2})}, 1, 1);
    REQUIRE(windows.size() == 1);
    CHECK(windows[0].pad_steps == 0);
}

TEST_CASE("log_dt of a 300-second gap is ln(301)") {
    std::vector<IntervalRecord> records{make_rec("u", 300, {2}), make_rec("u", 600, {2})};
    auto windows = windowize(records, 2, 1);
    REQUIRE(windows.size() == 2);
    const auto& full = windows[1];  // ends at ts 600, both steps real
    CHECK(full.steps[1].log_dt == doctest::Approx(std::log(301.0)).epsilon(1e-9));
    CHECK(full.steps[1].log_dt == doctest::Approx(5.7071).epsilon(1e-4));
    // first real step in a window has log_dt 0
    CHECK(full.steps[0].log_dt == 0.0);
}

TEST_CASE("windowize rejects non-positive w or stride") {
    CHECK_THROWS_AS(windowize({}, 0, 1), std::runtime_error);
    CHECK_THROWS_AS(windowize({}, 5, 0), std::runtime_error);
}

TEST_CASE("window count matches the brute-force enumerator on random users") {
    SplitMix64 rng(1234);
    for (int trial = 0; trial < 40; ++trial) {
        const int n = 1 + static_cast<int>(rng.below(50));
        const int w = 1 + static_cast<int>(rng.below(10));
        const int stride = 1 + static_cast<int>(rng.below(5));
        std::vector<IntervalRecord> records;
        for (int i = 0; i < n; ++i) records.push_back(make_rec("u", 300 * (i + 1), {2}));
        auto windows = windowize(records, w, stride);
        // brute force: stride-aligned end indices from the last interval backwards
        std::vector<int> ends;
        for (int e = n - 1; e >= 0; e -= stride) ends.push_back(e);
        CHECK(windows.size() == ends.size());
        CHECK(windows.size() == static_cast<size_t>((n + stride - 1) / stride));
        for (const auto& inst : windows) CHECK_FALSE(inst.pad_mask.back());
        // determinism
        auto again = windowize(records, w, stride);
        REQUIRE(again.size() == windows.size());
        for (size_t i = 0; i < windows.size(); ++i) CHECK(again[i].key == windows[i].key);
    }
}

TEST_CASE("window label equals the final interval's label") {
    std::vector<IntervalRecord> records;
    for (int i = 0; i < 3; ++i) records.push_back(make_rec("u", 300 * (i + 1), {2}));
    records[2].label = TaxonomyLabel{std::nullopt, "njRAT", std::nullopt};
    auto windows = windowize(records, 3, 1);
    REQUIRE(windows.size() == 3);
    CHECK(windows[2].label.has_value());
    CHECK(windows[2].label->family == "njRAT");
    CHECK_FALSE(windows[0].label.has_value());
}

TEST_CASE("numeric features invert within relative 1e-6") {
    SplitMix64 rng(77);
    for (int trial = 0; trial < 200; ++trial) {
        const int64_t bytes = static_cast<int64_t>(rng.below(100000000));
        IntervalRecord rec = make_rec("u", 300, {2});
        rec.bytes_sent = bytes;
        auto windows = windowize({rec}, 1, 1);
        const double recovered = std::exp(windows[0].steps[0].log_sent) - 1.0;
        CHECK(recovered == doctest::Approx(static_cast<double>(bytes)).epsilon(1e-6));
    }
}

TEST_CASE("padded steps carry the PAD event and zero numerics") {
    auto windows = windowize({make_rec("u", 300, {5})}, 4, 1);
    REQUIRE(windows.size() == 1);
    const auto& w = windows[0];
    CHECK(w.pad_steps == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(w.steps[static_cast<size_t>(i)].event_ids == std::vector<int64_t>{kPadId});
        CHECK(w.steps[static_cast<size_t>(i)].log_dt == 0.0);
        CHECK(w.steps[static_cast<size_t>(i)].log_sent == 0.0);
        CHECK(w.pad_mask[static_cast<size_t>(i)]);
    }
    CHECK(w.steps[3].event_ids == std::vector<int64_t>{5});
}
