#include "iocseq/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "iocseq/common.hpp"

namespace iocseq::pretrain {

using models::Model;
using telemetry::IntervalRecord;
using telemetry::kIntervalSeconds;
using telemetry::WindowInstance;

std::vector<PretrainPair> make_pretrain_pairs(const std::vector<IntervalRecord>& records, int w,
                                              int stride, bool require_adjacent) {
    require(w >= 1, "make_pretrain_pairs: w must be >= 1");
    require(stride >= 1, "make_pretrain_pairs: stride must be >= 1");
    std::map<std::pair<std::string, std::string>, std::vector<const IntervalRecord*>> users;
    for (const auto& r : records) users[{r.org_id, r.user_id}].push_back(&r);

    std::vector<PretrainPair> out;
    for (auto& [key, history] : users) {
        std::stable_sort(history.begin(), history.end(),
                         [](const IntervalRecord* a, const IntervalRecord* b) { return a->ts < b->ts; });
        const int n = static_cast<int>(history.size());
        // target indices counted backwards from the latest interval; each pair
        // needs w fully logged input intervals before its target
        for (int target = n - 1; target >= w; target -= stride) {
            const IntervalRecord* next = history[static_cast<size_t>(target)];
            const IntervalRecord* last_in = history[static_cast<size_t>(target - 1)];
            if (require_adjacent && next->ts - last_in->ts != kIntervalSeconds) continue;
            std::set<int64_t> target_ids;
            for (int64_t id : next->events)
                if (id >= 2) target_ids.insert(id);  // reserved ids are never targets
            if (target_ids.empty()) continue;

            PretrainPair pair;
            pair.target_ids.assign(target_ids.begin(), target_ids.end());
            WindowInstance& inst = pair.input;
            inst.pad_steps = 0;
            inst.pad_mask.assign(static_cast<size_t>(w), false);
            for (int i = target - w; i < target; ++i) {
                const int64_t prev_ts = i == target - w ? -1 : history[static_cast<size_t>(i - 1)]->ts;
                telemetry::EncodedStep step;
                const IntervalRecord* rec = history[static_cast<size_t>(i)];
                step.event_ids = rec->events;
                step.log_dt = prev_ts < 0 ? 0.0 : std::log1p(static_cast<double>(rec->ts - prev_ts));
                step.log_sent = std::log1p(static_cast<double>(rec->bytes_sent));
                step.log_recv = std::log1p(static_cast<double>(rec->bytes_received));
                inst.steps.push_back(std::move(step));
            }
            inst.key = telemetry::WindowKey{key.first, key.second, last_in->ts};
            out.push_back(std::move(pair));
        }
    }
    return out;
}

PretrainResult pretrain(const models::ArchitectureConfig& arch, uint64_t vocab_hash,
                        const std::vector<PretrainPair>& pairs, const PretrainConfig& config) {
    require(!pairs.empty(), "pretrain: no pairs");
    require(config.epochs >= 1 && config.batch_size >= 1, "pretrain: bad epochs/batch size");
    const int64_t n_targets = arch.vocab_size - 2;

    Model model;
    model.config = arch;
    model.config.n_classes = n_targets;  // width of the sigmoid output layer
    model.task = "pretrain";
    model.vocab_hash = vocab_hash;
    model.window_width = static_cast<int>(pairs[0].input.width());
    model.params = models::build_encoder_params(model.config, config.seed);
    model.params["pretrain.out.W"] = nd::glorot_init({models::encoder_width(arch), n_targets},
                                                     hash_combine(config.seed, 0x93e7));
    model.params["pretrain.out.b"] = nd::Tensor::zeros({n_targets});

    PretrainResult result;
    nd::Adam adam(config.adam);
    std::vector<int64_t> order(pairs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int64_t>(i);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        SplitMix64 rng(hash_combine(hash_combine(config.seed, 0x9e7a), static_cast<uint64_t>(epoch)));
        for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
            const int64_t j = static_cast<int64_t>(rng.below(static_cast<uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }
        double epoch_loss = 0.0;
        int64_t seen = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<const WindowInstance*> insts;
            nd::Tensor targets({static_cast<int64_t>(stop - start), n_targets});
            for (size_t i = start; i < stop; ++i) {
                const PretrainPair& pair = pairs[static_cast<size_t>(order[i])];
                insts.push_back(&pair.input);
                for (int64_t id : pair.target_ids)
                    targets.at(static_cast<int64_t>(i - start), id - 2) = 1.0f;
            }
            models::EncodedBatch batch = models::encode_batch(insts, arch.vocab_size);
            nd::Graph g;
            nd::BoundParams bound = bind_params(g, model.params);
            models::ForwardCtx ctx{true,
                                   hash_combine(hash_combine(config.seed, static_cast<uint64_t>(epoch) * 7919ull),
                                                static_cast<uint64_t>(start)),
                                   0};
            const int occ = nd::embedding_lookup(g, bound.id("embedding"), batch.event_ids);
            const int features = models::encode_input(g, model, batch, occ);
            const int rep = models::encoder_output(g, model, bound, batch, features, ctx);
            const int sig = nd::dense(g, rep, bound.id("pretrain.out.W"),
                                      bound.id("pretrain.out.b"), nd::Act::sigmoid);
            const int target_node = g.leaf(targets, false);
            const int loss = nd::binary_cross_entropy(g, sig, target_node);
            const double loss_val = g.value(loss).data[0];
            require(std::isfinite(loss_val), "pretrain: loss diverged (", loss_val, ") at epoch ",
                    epoch, "; aborting");
            g.backward(loss);
            adam.step(model.params, collect_grads(g, bound));
            epoch_loss += loss_val * static_cast<double>(stop - start);
            seen += static_cast<int64_t>(stop - start);
        }
        result.log.push_back(
            trainer::EpochLog{epoch, epoch_loss / static_cast<double>(seen), 0.0});
    }
    result.model = std::move(model);
    return result;
}

models::Model transfer_weights(const Model& pretrained,
                               const models::ArchitectureConfig& supervised_config,
                               uint64_t vocab_hash, uint64_t seed) {
    require(pretrained.task == "pretrain", "transfer: source checkpoint is not a pretrain model");
    require(pretrained.vocab_hash == vocab_hash,
            "transfer: vocabulary hash mismatch (", to_hex(pretrained.vocab_hash), " vs ",
            to_hex(vocab_hash), ")");
    require(pretrained.config.variant == supervised_config.variant,
            "transfer: architecture mismatch (", models::arch_name(pretrained.config.variant),
            " vs ", models::arch_name(supervised_config.variant), ")");

    Model model = models::build_model(supervised_config, vocab_hash, seed);
    for (auto& [name, tensor] : model.params) {
        if (name != "embedding" && name.rfind("enc.", 0) != 0) continue;
        auto it = pretrained.params.find(name);
        require(it != pretrained.params.end(), "transfer: source lacks tensor '", name, "'");
        require(it->second.shape == tensor.shape, "transfer: encoder width mismatch for '", name,
                "' (", it->second.shape_str(), " vs ", tensor.shape_str(), ")");
        tensor = it->second;
    }
    return model;
}

}  // namespace iocseq::pretrain
