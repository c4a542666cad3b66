#include "iocseq/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::synthgen {

using nlohmann::json;
using telemetry::RawRecord;
using telemetry::TaxonomyLabel;

namespace {

// fixed origin so generated timestamps are stable across runs
constexpr int64_t kBaseTs = 1590000000;  // multiple of 300

const char* kBackgroundEvents[] = {
    "software update", "cloud storage sync", "social media activity", "search engine query",
    "video conferencing", "email attachment download", "large upload", "large download",
    "new destination contacted", "rare user agent", "self-signed certificate",
    "expired certificate", "dns over https", "p2p traffic", "remote desktop session",
    "vpn connection", "proxy avoidance", "url shortener", "free hosting service",
    "recently registered domain", "high request rate", "periodic beaconing", "long connection",
    "short burst connections", "unusual port", "tracking service contact", "cdn traffic",
    "api polling", "webmail access", "instant messaging", "online gaming traffic",
    "news site browsing", "shopping site browsing", "banking site access",
    "streaming audio", "os telemetry upload", "browser extension traffic", "ad click",
    "captcha service", "font service", "analytics beacon", "push notification service",
    "time sync service", "certificate revocation check", "speed test",
};

}  // namespace

void BehaviorProfile::validate() const {
    double expected = background_rate;
    for (const auto* events : {&signature_events, &confusion_events}) {
        for (const auto& [name2, p] : *events) {
            require(p >= 0.0 && p <= 1.0, "profile '", name, "': probability out of [0,1] for '",
                    name2, "'");
            expected += p;
        }
    }
    require(expected > 0.0, "profile '", name, "': expected events per interval must be > 0");
    require(background_rate >= 0.0, "profile '", name, "': negative background rate");
    require(byte_sigma_sent > 0.0 && byte_sigma_recv > 0.0, "profile '", name,
            "': byte sigma must be > 0");
    require(gap_p > 0.0 && gap_p <= 1.0, "profile '", name, "': gap parameter must be in (0,1]");
    require(marker_expression > 0.0 && marker_expression <= 1.0, "profile '", name,
            "': marker expression must be in (0,1]");
}

void ScenarioConfig::validate() const {
    require(duration >= 1, "scenario: duration must be >= 1");
    require(n_orgs >= 1, "scenario: n_orgs must be >= 1");
    require(benign_users >= 0, "scenario: negative benign user count");
    benign_profile.validate();
    require(benign_profile.taxonomy.empty(), "scenario: benign profile must have empty taxonomy");
    std::set<std::string> universe(event_universe.begin(), event_universe.end());
    auto check_sigs = [&](const BehaviorProfile& p) {
        p.validate();
        for (const auto* events : {&p.signature_events, &p.confusion_events}) {
            for (const auto& [ev, prob] : *events) {
                (void)prob;
                require(universe.count(ev) > 0, "scenario: profile '", p.name,
                        "' uses event '", ev, "' which is not in the declared universe");
            }
        }
    };
    for (const auto& [p, count] : profiles) {
        require(count >= 0, "scenario: negative user count for profile '", p.name, "'");
        check_sigs(p);
    }
    check_sigs(benign_profile);
}

namespace {

void generate_user(const ScenarioConfig& cfg, const BehaviorProfile& prof,
                   const std::string& org, const std::string& user,
                   std::vector<RawRecord>& out) {
    const uint64_t user_key =
        hash_combine(hash_combine(hash_combine(cfg.seed, fnv1a64(org)), fnv1a64(user)), 0x5eed);
    const int64_t n_universe = static_cast<int64_t>(cfg.event_universe.size());
    // which markers this user's version expresses: one draw per signature
    std::vector<std::pair<std::string, double>> expressed;
    {
        SplitMix64 vrng(hash_combine(user_key, 0xe49));
        for (const auto& sig : prof.signature_events)
            if (vrng.uniform() < prof.marker_expression) expressed.push_back(sig);
        if (expressed.empty() && !prof.signature_events.empty())
            expressed.push_back(prof.signature_events[static_cast<size_t>(
                vrng.below(prof.signature_events.size()))]);  // at least one marker
    }
    int64_t bucket = 0;
    while (bucket < cfg.duration) {
        SplitMix64 rng(hash_combine(user_key, static_cast<uint64_t>(bucket)));
        RawRecord rec;
        rec.org_id = org;
        rec.user_id = user;
        rec.ts = kBaseTs + bucket * telemetry::kIntervalSeconds;
        // resample until the interval is non-empty; empty intervals are never logged
        std::set<std::string> events;
        do {
            events.clear();
            for (const auto& [ev, p] : expressed)
                if (rng.uniform() < p) events.insert(ev);
            for (const auto& [ev, p] : prof.confusion_events)
                if (rng.uniform() < p) events.insert(ev);
            const int n_noise = rng.poisson(prof.background_rate);
            for (int i = 0; i < n_noise && n_universe > 0; ++i)
                events.insert(cfg.event_universe[static_cast<size_t>(rng.below(static_cast<uint64_t>(n_universe)))]);
        } while (events.empty());
        rec.events.assign(events.begin(), events.end());
        rec.bytes_sent = static_cast<int64_t>(std::floor(std::exp(prof.byte_mu_sent + prof.byte_sigma_sent * rng.normal())));
        rec.bytes_received = static_cast<int64_t>(std::floor(std::exp(prof.byte_mu_recv + prof.byte_sigma_recv * rng.normal())));
        if (!prof.taxonomy.empty()) rec.label = prof.taxonomy;
        out.push_back(std::move(rec));
        bucket += 1 + rng.geometric(prof.gap_p);
    }
}

}  // namespace

std::vector<RawRecord> generate(const ScenarioConfig& config) {
    config.validate();
    // (profile, org, user) tuples in a canonical order; generation itself is
    // order-independent because each interval has its own keyed stream
    struct Job {
        const BehaviorProfile* prof;
        std::string org, user;
    };
    std::vector<Job> jobs;
    auto add_users = [&](const BehaviorProfile& p, int count, const std::string& tag) {
        for (int i = 0; i < count; ++i) {
            const std::string org = "org" + std::to_string(i % config.n_orgs);
            jobs.push_back(Job{&p, org, tag + "-u" + std::to_string(i)});
        }
    };
    for (const auto& [p, count] : config.profiles) add_users(p, count, p.name);
    add_users(config.benign_profile, config.benign_users, config.benign_profile.name);

    std::vector<std::vector<RawRecord>> per_job(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (int64_t i = 0; i < static_cast<int64_t>(jobs.size()); ++i) {
        const Job& j = jobs[static_cast<size_t>(i)];
        generate_user(config, *j.prof, j.org, j.user, per_job[static_cast<size_t>(i)]);
    }
    std::vector<RawRecord> out;
    for (auto& v : per_job)
        for (auto& r : v) out.push_back(std::move(r));
    std::sort(out.begin(), out.end(), [](const RawRecord& a, const RawRecord& b) {
        if (a.org_id != b.org_id) return a.org_id < b.org_id;
        if (a.user_id != b.user_id) return a.user_id < b.user_id;
        return a.ts < b.ts;
    });
    return out;
}

std::vector<BehaviorProfile> default_profiles() {
    std::vector<BehaviorProfile> out;

    // cross-family contamination: each family also emits the other families'
    // markers at a low rate, which is what keeps the classes overlapping
    constexpr double kConfusionProb = 0.45;

    BehaviorProfile njrat;
    njrat.name = "njrat";
    njrat.taxonomy = TaxonomyLabel{"TID-njrat", "njRAT", "Information stealer"};
    njrat.signature_events = {{"unexpected application", 0.8},
                              {"information stealer", 0.8},
                              {"suspicious domain from dynamic DNS", 0.8},
                              {"anomalous destination", 0.8}};
    njrat.marker_expression = 0.85;
    njrat.background_rate = 0.3;
    njrat.gap_p = 0.6;
    out.push_back(njrat);

    BehaviorProfile wannacry;
    wannacry.name = "wannacry";
    wannacry.taxonomy = TaxonomyLabel{"TID-wannacry", "WannaCry", "Ransomware"};
    wannacry.signature_events = {{"dga", 0.8},
                                 {"non-user activity", 0.8},
                                 {"anomalous destination", 0.8},
                                 {"inconsistent user time activity", 0.8},
                                 {"cryptomining", 0.8},
                                 {"http to IP address", 0.8}};
    wannacry.marker_expression = 0.85;
    wannacry.background_rate = 0.3;
    wannacry.gap_p = 0.4;
    out.push_back(wannacry);

    BehaviorProfile arcade;
    arcade.name = "arcadeyum";
    arcade.taxonomy = TaxonomyLabel{"TID-arcadeyum", "ArcadeYum", "Potentially unwanted application"};
    arcade.signature_events = {{"advertisement-heavy events", 0.8},
                               {"file download", 0.8},
                               {"repetitive requests", 0.8}};
    arcade.marker_expression = 0.85;
    arcade.background_rate = 0.3;
    arcade.gap_p = 0.5;
    out.push_back(arcade);

    BehaviorProfile android;
    android.name = "android-firmware";
    android.taxonomy = TaxonomyLabel{"TID-android-fw", "Malicious Android firmware", "Information stealer"};
    android.signature_events = {{"information stealer", 0.8},
                                {"suspicious domain from dynamic DNS", 0.8},
                                {"multimedia streaming", 0.8},
                                {"repetitive requests", 0.8},
                                {"non-user activity", 0.8},
                                {"dga", 0.8}};
    android.marker_expression = 0.85;
    android.background_rate = 0.3;
    android.gap_p = 0.5;
    out.push_back(android);

    BehaviorProfile benign;
    benign.name = "benign";
    benign.signature_events = {};
    benign.background_rate = 1.6;
    benign.gap_p = 0.45;

    // other families' signature events, own ones excluded
    for (auto& prof : out) {
        std::set<std::string> own;
        for (const auto& [ev, p] : prof.signature_events) {
            (void)p;
            own.insert(ev);
        }
        std::map<std::string, int> families_with;
        for (const auto& other : out)
            for (const auto& [ev, p] : other.signature_events) {
                (void)p;
                families_with[ev]++;
            }
        std::set<std::string> others;
        for (const auto& other : out) {
            if (other.name == prof.name) continue;
            for (const auto& [ev, p] : other.signature_events) {
                (void)p;
                if (!own.count(ev) && families_with[ev] == 1) others.insert(ev);
            }
        }
        for (const auto& ev : others) prof.confusion_events.emplace_back(ev, kConfusionProb);
    }

    out.push_back(benign);
    return out;
}

ScenarioConfig default_scenario() {
    ScenarioConfig cfg;
    auto profiles = default_profiles();
    for (const auto& p : profiles) {
        if (p.taxonomy.empty())
            cfg.benign_profile = p;
        else
            cfg.profiles.emplace_back(p, 12);
    }
    cfg.benign_users = 170;
    cfg.n_orgs = 3;
    cfg.duration = 288;  // one day of 5-minute buckets
    cfg.seed = 7;

    std::set<std::string> universe;
    for (const auto& name : kBackgroundEvents) universe.insert(name);
    for (const auto& [p, count] : cfg.profiles) {
        (void)count;
        for (const auto& [ev, prob] : p.signature_events) {
            (void)prob;
            universe.insert(ev);
        }
    }
    cfg.event_universe.assign(universe.begin(), universe.end());
    return cfg;
}

// ---------------------------------------------------------------------------
// JSON round-trip
// ---------------------------------------------------------------------------

namespace {

json profile_to_json(const BehaviorProfile& p) {
    json j;
    j["name"] = p.name;
    json tax = json::object();
    if (p.taxonomy.threat_id) tax["threat_id"] = *p.taxonomy.threat_id;
    if (p.taxonomy.family) tax["family"] = *p.taxonomy.family;
    if (p.taxonomy.category) tax["category"] = *p.taxonomy.category;
    j["taxonomy"] = tax;
    json sigs = json::array();
    for (const auto& [ev, prob] : p.signature_events) sigs.push_back({{"event", ev}, {"prob", prob}});
    j["signature_events"] = sigs;
    json conf = json::array();
    for (const auto& [ev, prob] : p.confusion_events) conf.push_back({{"event", ev}, {"prob", prob}});
    j["confusion_events"] = conf;
    j["marker_expression"] = p.marker_expression;
    j["background_rate"] = p.background_rate;
    j["byte_mu_sent"] = p.byte_mu_sent;
    j["byte_sigma_sent"] = p.byte_sigma_sent;
    j["byte_mu_recv"] = p.byte_mu_recv;
    j["byte_sigma_recv"] = p.byte_sigma_recv;
    j["gap_p"] = p.gap_p;
    return j;
}

BehaviorProfile profile_from_json(const json& j) {
    BehaviorProfile p;
    p.name = j.at("name").get<std::string>();
    if (auto it = j.find("taxonomy"); it != j.end()) {
        if (it->contains("threat_id")) p.taxonomy.threat_id = it->at("threat_id").get<std::string>();
        if (it->contains("family")) p.taxonomy.family = it->at("family").get<std::string>();
        if (it->contains("category")) p.taxonomy.category = it->at("category").get<std::string>();
    }
    for (const auto& s : j.at("signature_events"))
        p.signature_events.emplace_back(s.at("event").get<std::string>(), s.at("prob").get<double>());
    if (j.contains("confusion_events"))
        for (const auto& s : j.at("confusion_events"))
            p.confusion_events.emplace_back(s.at("event").get<std::string>(), s.at("prob").get<double>());
    p.marker_expression = j.value("marker_expression", 1.0);
    p.background_rate = j.at("background_rate").get<double>();
    p.byte_mu_sent = j.value("byte_mu_sent", 8.0);
    p.byte_sigma_sent = j.value("byte_sigma_sent", 2.0);
    p.byte_mu_recv = j.value("byte_mu_recv", 8.0);
    p.byte_sigma_recv = j.value("byte_sigma_recv", 2.0);
    p.gap_p = j.value("gap_p", 0.5);
    return p;
}

}  // namespace

std::string scenario_to_json(const ScenarioConfig& config) {
    json j;
    json profs = json::array();
    for (const auto& [p, count] : config.profiles)
        profs.push_back({{"profile", profile_to_json(p)}, {"users", count}});
    j["profiles"] = profs;
    j["benign_profile"] = profile_to_json(config.benign_profile);
    j["benign_users"] = config.benign_users;
    j["n_orgs"] = config.n_orgs;
    j["duration"] = config.duration;
    j["seed"] = config.seed;
    j["event_universe"] = config.event_universe;
    return j.dump(2);
}

ScenarioConfig scenario_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail("scenario: invalid JSON: ", e.what());
    }
    ScenarioConfig cfg;
    try {
        for (const auto& entry : j.at("profiles"))
            cfg.profiles.emplace_back(profile_from_json(entry.at("profile")),
                                      entry.at("users").get<int>());
        cfg.benign_profile = profile_from_json(j.at("benign_profile"));
        cfg.benign_users = j.at("benign_users").get<int>();
        cfg.n_orgs = j.at("n_orgs").get<int>();
        cfg.duration = j.at("duration").get<int>();
        cfg.seed = j.at("seed").get<uint64_t>();
        cfg.event_universe = j.at("event_universe").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        fail("scenario: ", e.what());
    }
    cfg.validate();
    return cfg;
}

ScenarioConfig load_scenario(const std::string& path) {
    std::ifstream f(path);
    require(f.good(), "scenario: cannot open '", path, "'");
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return scenario_from_json(text);
}

void save_scenario(const ScenarioConfig& config, const std::string& path) {
    std::ofstream f(path, std::ios::trunc);
    require(f.good(), "scenario: cannot open '", path, "' for writing");
    f << scenario_to_json(config) << "\n";
    require(f.good(), "scenario: write failed for '", path, "'");
}

}  // namespace iocseq::synthgen
