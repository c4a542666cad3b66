#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace iocseq::telemetry {

constexpr int64_t kPadId = 0;
constexpr int64_t kUnkId = 1;
constexpr int64_t kIntervalSeconds = 300;

// Bijection between event names and dense ids. Ids 0 and 1 are reserved for
// "<PAD>" and "<UNK>"; all other names are sorted lexicographically.
class EventVocabulary {
public:
    EventVocabulary();
    explicit EventVocabulary(std::vector<std::string> sorted_names);

    int64_t size() const { return static_cast<int64_t>(names_.size()); }
    const std::string& name(int64_t id) const;
    // unknown names map to <UNK>
    int64_t id(const std::string& name) const;
    bool contains(const std::string& name) const;
    const std::vector<std::string>& names() const { return names_; }

    // stable content hash; checked when transferring weights between models
    uint64_t hash() const;

    void save(const std::string& path) const;
    static EventVocabulary load(const std::string& path);

private:
    std::vector<std::string> names_;
    std::unordered_map<std::string, int64_t> index_;
};

struct TaxonomyLabel {
    std::optional<std::string> threat_id;
    std::optional<std::string> family;
    std::optional<std::string> category;

    bool empty() const { return !threat_id && !family && !category; }
    bool operator==(const TaxonomyLabel&) const = default;
};

// One (org, user, five-minute bucket) with the event names seen in it.
struct RawRecord {
    std::string org_id;
    std::string user_id;
    int64_t ts = 0;  // seconds since epoch, multiple of 300
    std::vector<std::string> events;
    int64_t bytes_sent = 0;
    int64_t bytes_received = 0;
    std::optional<TaxonomyLabel> label;
};

// Same record with events resolved against a vocabulary.
struct IntervalRecord {
    std::string org_id;
    std::string user_id;
    int64_t ts = 0;
    std::vector<int64_t> events;  // non-empty, deduplicated, sorted
    int64_t bytes_sent = 0;
    int64_t bytes_received = 0;
    std::optional<TaxonomyLabel> label;
};

struct EncodedStep {
    std::vector<int64_t> event_ids;  // [0] for padded steps
    double log_dt = 0.0;             // ln(1 + seconds since previous real step)
    double log_sent = 0.0;           // ln(1 + bytes_sent)
    double log_recv = 0.0;           // ln(1 + bytes_received)
};

struct WindowKey {
    std::string org_id;
    std::string user_id;
    int64_t ts = 0;
    bool operator==(const WindowKey&) const = default;
    bool operator<(const WindowKey& o) const;
    std::string str() const;
};

// w encoded intervals ending at a (possibly labeled) interval; steps before
// pad_steps are left padding
struct WindowInstance {
    std::vector<EncodedStep> steps;
    std::vector<bool> pad_mask;  // true = padded
    int pad_steps = 0;
    std::optional<TaxonomyLabel> label;
    WindowKey key;

    int64_t width() const { return static_cast<int64_t>(steps.size()); }
};

// Newline-delimited JSON telemetry. Raises on the first malformed line with
// its 1-based line number.
std::vector<RawRecord> parse_log(std::istream& in);
std::vector<RawRecord> parse_log_file(const std::string& path);
void write_log(const std::vector<RawRecord>& records, std::ostream& out);
void write_log_file(const std::vector<RawRecord>& records, const std::string& path);
std::string record_to_json(const RawRecord& r);

EventVocabulary build_vocabulary(const std::vector<RawRecord>& records);

std::vector<int64_t> encode_events(const std::vector<std::string>& names,
                                   const EventVocabulary& vocab);

std::vector<IntervalRecord> encode_records(const std::vector<RawRecord>& raw,
                                           const EventVocabulary& vocab);

// Per (org, user): sort by ts and emit one window for every stride-th
// interval counted backwards from the most recent one. Short histories are
// left-padded.
std::vector<WindowInstance> windowize(const std::vector<IntervalRecord>& records, int w,
                                      int stride);

}  // namespace iocseq::telemetry
