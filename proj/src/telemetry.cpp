#include "iocseq/telemetry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::telemetry {

using nlohmann::json;

// ---------------------------------------------------------------------------
// EventVocabulary
// ---------------------------------------------------------------------------

EventVocabulary::EventVocabulary() : names_{"<PAD>", "<UNK>"} {
    index_[names_[0]] = 0;
    index_[names_[1]] = 1;
}

EventVocabulary::EventVocabulary(std::vector<std::string> sorted_names) : EventVocabulary() {
    for (auto& n : sorted_names) {
        require(!n.empty(), "vocabulary: empty event name");
        require(index_.find(n) == index_.end(), "vocabulary: duplicate event name '", n, "'");
        index_[n] = static_cast<int64_t>(names_.size());
        names_.push_back(std::move(n));
    }
    for (size_t i = 3; i < names_.size(); ++i)
        require(names_[i - 1] < names_[i], "vocabulary: names must be sorted, '", names_[i - 1],
                "' precedes '", names_[i], "'");
}

const std::string& EventVocabulary::name(int64_t id) const {
    require(id >= 0 && id < size(), "vocabulary: id ", id, " out of range");
    return names_[static_cast<size_t>(id)];
}

int64_t EventVocabulary::id(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? kUnkId : it->second;
}

bool EventVocabulary::contains(const std::string& name) const {
    return index_.find(name) != index_.end();
}

uint64_t EventVocabulary::hash() const {
    uint64_t h = 0xcbf29ce484222325ull;
    const char sep = '\n';
    for (const auto& n : names_) {
        h = fnv1a64(n.data(), n.size(), h);
        h = fnv1a64(&sep, 1, h);
    }
    return h;
}

void EventVocabulary::save(const std::string& path) const {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "vocabulary: cannot open '", path, "' for writing");
    for (const auto& n : names_) f << n << "\n";
    require(f.good(), "vocabulary: write failed for '", path, "'");
}

EventVocabulary EventVocabulary::load(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "vocabulary: cannot open '", path, "'");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(f, line)) lines.push_back(line);
    require(lines.size() >= 2 && lines[0] == "<PAD>" && lines[1] == "<UNK>",
            "vocabulary: '", path, "' must start with the reserved <PAD> and <UNK> lines");
    return EventVocabulary(std::vector<std::string>(lines.begin() + 2, lines.end()));
}

// ---------------------------------------------------------------------------
// log parsing / writing
// ---------------------------------------------------------------------------

namespace {

RawRecord parse_line(const std::string& line, size_t line_no) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        fail("parse_log: line ", line_no, ": invalid JSON: ", e.what());
    }
    require(j.is_object(), "parse_log: line ", line_no, ": record must be a JSON object");
    RawRecord r;
    try {
        r.org_id = j.at("org_id").get<std::string>();
        r.user_id = j.at("user_id").get<std::string>();
        r.ts = j.at("ts").get<int64_t>();
        r.events = j.at("events").get<std::vector<std::string>>();
        r.bytes_sent = j.at("bytes_sent").get<int64_t>();
        r.bytes_received = j.at("bytes_received").get<int64_t>();
    } catch (const json::exception& e) {
        fail("parse_log: line ", line_no, ": ", e.what());
    }
    require(r.ts % kIntervalSeconds == 0, "parse_log: line ", line_no, ": ts ", r.ts,
            " is not a multiple of ", kIntervalSeconds);
    require(!r.events.empty(), "parse_log: line ", line_no, ": events must be non-empty");
    require(r.bytes_sent >= 0, "parse_log: line ", line_no, ": negative bytes_sent");
    require(r.bytes_received >= 0, "parse_log: line ", line_no, ": negative bytes_received");
    if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
        require(it->is_object(), "parse_log: line ", line_no, ": label must be an object");
        TaxonomyLabel lab;
        if (auto f = it->find("threat_id"); f != it->end() && !f->is_null())
            lab.threat_id = f->get<std::string>();
        if (auto f = it->find("family"); f != it->end() && !f->is_null())
            lab.family = f->get<std::string>();
        if (auto f = it->find("category"); f != it->end() && !f->is_null())
            lab.category = f->get<std::string>();
        r.label = lab;
    }
    return r;
}

}  // namespace

std::vector<RawRecord> parse_log(std::istream& in) {
    std::vector<RawRecord> out;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        out.push_back(parse_line(line, line_no));
    }
    return out;
}

std::vector<RawRecord> parse_log_file(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "parse_log: cannot open '", path, "'");
    return parse_log(f);
}

std::string record_to_json(const RawRecord& r) {
    json j;
    j["org_id"] = r.org_id;
    j["user_id"] = r.user_id;
    j["ts"] = r.ts;
    j["events"] = r.events;
    j["bytes_sent"] = r.bytes_sent;
    j["bytes_received"] = r.bytes_received;
    if (r.label) {
        json lab = json::object();
        if (r.label->threat_id) lab["threat_id"] = *r.label->threat_id;
        if (r.label->family) lab["family"] = *r.label->family;
        if (r.label->category) lab["category"] = *r.label->category;
        j["label"] = lab;
    }
    return j.dump();
}

void write_log(const std::vector<RawRecord>& records, std::ostream& out) {
    for (const auto& r : records) out << record_to_json(r) << "\n";
}

void write_log_file(const std::vector<RawRecord>& records, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "write_log: cannot open '", path, "' for writing");
    write_log(records, f);
    require(f.good(), "write_log: write failed for '", path, "'");
}

// ---------------------------------------------------------------------------
// vocabulary construction / encoding
// ---------------------------------------------------------------------------

EventVocabulary build_vocabulary(const std::vector<RawRecord>& records) {
    std::set<std::string> names;
    for (const auto& r : records)
        for (const auto& e : r.events) names.insert(e);
    return EventVocabulary(std::vector<std::string>(names.begin(), names.end()));
}

std::vector<int64_t> encode_events(const std::vector<std::string>& names,
                                   const EventVocabulary& vocab) {
    require(!names.empty(), "encode_events: event set must be non-empty");
    std::set<int64_t> ids;
    for (const auto& n : names) ids.insert(vocab.id(n));
    return std::vector<int64_t>(ids.begin(), ids.end());
}

std::vector<IntervalRecord> encode_records(const std::vector<RawRecord>& raw,
                                           const EventVocabulary& vocab) {
    std::vector<IntervalRecord> out;
    out.reserve(raw.size());
    for (const auto& r : raw) {
        IntervalRecord rec;
        rec.org_id = r.org_id;
        rec.user_id = r.user_id;
        rec.ts = r.ts;
        rec.events = encode_events(r.events, vocab);
        rec.bytes_sent = r.bytes_sent;
        rec.bytes_received = r.bytes_received;
        rec.label = r.label;
        out.push_back(std::move(rec));
    }
    return out;
}

// ---------------------------------------------------------------------------
// windowing
// ---------------------------------------------------------------------------

bool WindowKey::operator<(const WindowKey& o) const {
    if (org_id != o.org_id) return org_id < o.org_id;
    if (user_id != o.user_id) return user_id < o.user_id;
    return ts < o.ts;
}

std::string WindowKey::str() const {
    return org_id + "," + user_id + "," + std::to_string(ts);
}

namespace {

EncodedStep encode_interval(const IntervalRecord& rec, int64_t prev_ts) {
    EncodedStep s;
    s.event_ids = rec.events;
    s.log_dt = prev_ts < 0 ? 0.0 : std::log1p(static_cast<double>(rec.ts - prev_ts));
    s.log_sent = std::log1p(static_cast<double>(rec.bytes_sent));
    s.log_recv = std::log1p(static_cast<double>(rec.bytes_received));
    return s;
}

EncodedStep padded_step() {
    EncodedStep s;
    s.event_ids = {kPadId};
    return s;
}

}  // namespace

std::vector<WindowInstance> windowize(const std::vector<IntervalRecord>& records, int w,
                                      int stride) {
    require(w >= 1, "windowize: w must be >= 1, got ", w);
    require(stride >= 1, "windowize: stride must be >= 1, got ", stride);

    // group per (org, user), then sort each history by ts
    std::map<std::pair<std::string, std::string>, std::vector<const IntervalRecord*>> users;
    for (const auto& r : records) {
        require(!r.events.empty(), "windowize: interval with empty event set at ts ", r.ts);
        users[{r.org_id, r.user_id}].push_back(&r);
    }

    std::vector<WindowInstance> out;
    for (auto& [key, history] : users) {
        std::stable_sort(history.begin(), history.end(),
                         [](const IntervalRecord* a, const IntervalRecord* b) { return a->ts < b->ts; });
        const int n = static_cast<int>(history.size());
        // window end indices counted backwards from the latest interval
        std::vector<int> ends;
        for (int e = n - 1; e >= 0; e -= stride) ends.push_back(e);
        std::reverse(ends.begin(), ends.end());
        for (int end : ends) {
            WindowInstance inst;
            const int real = std::min(w, end + 1);
            const int pad = w - real;
            inst.pad_steps = pad;
            inst.steps.reserve(static_cast<size_t>(w));
            inst.pad_mask.assign(static_cast<size_t>(w), false);
            for (int i = 0; i < pad; ++i) {
                inst.steps.push_back(padded_step());
                inst.pad_mask[static_cast<size_t>(i)] = true;
            }
            for (int i = 0; i < real; ++i) {
                const int idx = end - real + 1 + i;
                const int64_t prev_ts = i == 0 ? -1 : history[static_cast<size_t>(idx - 1)]->ts;
                inst.steps.push_back(encode_interval(*history[static_cast<size_t>(idx)], prev_ts));
            }
            inst.label = history[static_cast<size_t>(end)]->label;
            inst.key = WindowKey{key.first, key.second, history[static_cast<size_t>(end)]->ts};
            out.push_back(std::move(inst));
        }
    }
    return out;
}

}  // namespace iocseq::telemetry
