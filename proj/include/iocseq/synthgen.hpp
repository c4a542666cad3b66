#pragma once

#include <string>
#include <vector>

#include "iocseq/telemetry.hpp"

namespace iocseq::synthgen {

// How one class of user behaves: which marker events it emits and how often,
// how much background noise it carries, byte volumes, and logging gaps.
struct BehaviorProfile {
    std::string name;
    telemetry::TaxonomyLabel taxonomy;  // empty for benign users
    std::vector<std::pair<std::string, double>> signature_events;  // (name, per-interval prob)
    // low-probability emissions of other classes' markers: the class-overlap
    // knob; not part of the profile's own signature
    std::vector<std::pair<std::string, double>> confusion_events;
    // probability that a given user's malware version expresses each
    // signature event at all; families ship behaviorally diverse versions
    double marker_expression = 1.0;
    double background_rate = 0.0;  // expected uniform noise events per interval
    double byte_mu_sent = 8.0, byte_sigma_sent = 2.0;  // log-normal parameters
    double byte_mu_recv = 8.0, byte_sigma_recv = 2.0;
    double gap_p = 0.5;  // geometric parameter for skipped 5-minute buckets

    // expected events per interval must be positive or generation cannot
    // satisfy the non-empty-interval invariant
    void validate() const;
};

struct ScenarioConfig {
    std::vector<std::pair<BehaviorProfile, int>> profiles;  // (profile, user count)
    BehaviorProfile benign_profile;
    int benign_users = 0;
    int n_orgs = 1;
    int duration = 288;  // number of 5-minute buckets
    uint64_t seed = 0;
    std::vector<std::string> event_universe;  // pool for uniform background draws

    void validate() const;
};

// Deterministic for a given config: each interval draws from a stream keyed
// by (seed, org, user, bucket). Output is sorted by (org, user, ts).
std::vector<telemetry::RawRecord> generate(const ScenarioConfig& config);

// The four malware families of the shipped scenario plus a benign profile.
std::vector<BehaviorProfile> default_profiles();

ScenarioConfig default_scenario();

std::string scenario_to_json(const ScenarioConfig& config);
ScenarioConfig scenario_from_json(const std::string& text);
ScenarioConfig load_scenario(const std::string& path);
void save_scenario(const ScenarioConfig& config, const std::string& path);

}  // namespace iocseq::synthgen
