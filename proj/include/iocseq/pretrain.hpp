#pragma once

#include <vector>

#include "iocseq/models.hpp"
#include "iocseq/telemetry.hpp"
#include "iocseq/trainer.hpp"

namespace iocseq::pretrain {

// Input: w consecutive logged intervals of one user; target: the event set of
// the next logged interval as ids >= 2 (reserved ids are never targets).
struct PretrainPair {
    telemetry::WindowInstance input;
    std::vector<int64_t> target_ids;
};

// Pairs are enumerated backwards from each user's latest interval at the
// given stride; users with fewer than w+1 intervals yield nothing. With
// require_adjacent only targets exactly one bucket after the window qualify.
std::vector<PretrainPair> make_pretrain_pairs(const std::vector<telemetry::IntervalRecord>& records,
                                              int w, int stride, bool require_adjacent = false);

struct PretrainConfig {
    int epochs = 5;
    int batch_size = 256;
    uint64_t seed = 0;
    nd::AdamConfig adam;
};

// Next-event-set prediction: the classification head is replaced by one
// |V|-2-unit sigmoid layer trained with binary cross entropy.
struct PretrainResult {
    models::Model model;  // task == "pretrain"
    std::vector<trainer::EpochLog> log;
};
PretrainResult pretrain(const models::ArchitectureConfig& arch, uint64_t vocab_hash,
                        const std::vector<PretrainPair>& pairs, const PretrainConfig& config);

// Copies embedding + encoder weights into a freshly built supervised model;
// the dense head starts from Glorot and the pretrain head is discarded.
// Architecture variant, encoder widths and vocabulary hash must match.
models::Model transfer_weights(const models::Model& pretrained,
                               const models::ArchitectureConfig& supervised_config,
                               uint64_t vocab_hash, uint64_t seed);

}  // namespace iocseq::pretrain
