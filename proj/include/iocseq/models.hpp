#pragma once

#include <string>
#include <vector>

#include "iocseq/checkpoint.hpp"
#include "iocseq/graph.hpp"
#include "iocseq/optimizer.hpp"
#include "iocseq/telemetry.hpp"

namespace iocseq::models {

enum class ArchKind { lstm, cnn, transformer };
std::string arch_name(ArchKind a);
ArchKind arch_from_name(const std::string& name);

struct ArchitectureConfig {
    ArchKind variant = ArchKind::transformer;
    std::string preset = "paper";
    int64_t vocab_size = 0;
    int64_t embedding_dim = 128;
    int lstm_layers = 1;
    int64_t lstm_units = 1024;
    int cnn_layers = 3;
    int64_t kernel = 4;
    int64_t filters = 32;
    int tf_blocks = 2;
    int heads = 8;
    int64_t ffn_units = 512;
    int64_t d_model = 128;
    int dense_layers = 2;
    int64_t dense_units = 256;
    float dropout = 0.1f;
    int64_t n_classes = 0;

    // Table-4 widths ("paper") or shrunk desk-scale widths ("desk")
    static ArchitectureConfig make(ArchKind variant, const std::string& preset,
                                   int64_t vocab_size, int64_t n_classes);
    void validate() const;
    std::string to_json() const;
    static ArchitectureConfig from_json(const std::string& text);
};

struct Model {
    ArchitectureConfig config;
    nd::ParamMap params;
    uint64_t vocab_hash = 0;
    std::vector<std::string> class_names;  // index = class id
    std::string task;                      // threat_id | family | category | pretrain
    int window_width = 21;
};

// Glorot-initialized parameters; the <PAD> embedding row is zeroed.
Model build_model(const ArchitectureConfig& config, uint64_t vocab_hash, uint64_t seed);

// embedding + encoder body only ("embedding", "enc.*"); the pretraining
// objective attaches its own output layer
nd::ParamMap build_encoder_params(const ArchitectureConfig& config, uint64_t seed);
int64_t encoder_width(const ArchitectureConfig& config);

// One batch of windows flattened for the graph ops.
struct EncodedBatch {
    std::vector<int64_t> event_ids;     // all (instance, step, event) occurrences
    std::vector<nd::Segment> segments;  // one per (instance, step)
    nd::Tensor numerics;                // (B*w, 3): log_dt, log_sent, log_recv
    std::vector<int> pad;               // left-pad count per instance
    int64_t batch = 0;
    int64_t width = 0;
};

EncodedBatch encode_batch(const std::vector<const telemetry::WindowInstance*>& instances,
                          int64_t vocab_size);
EncodedBatch encode_batch(const std::vector<telemetry::WindowInstance>& instances,
                          int64_t vocab_size);

struct ForwardCtx {
    bool training = false;
    uint64_t dropout_seed = 0;
    int counter = 0;
    uint64_t next_seed() { return hash_combine(dropout_seed, static_cast<uint64_t>(counter++)); }
};

// mean event embedding concatenated with the numeric features, (B, w, E+3);
// occ_node carries one embedding row per event occurrence — either an
// embedding_lookup result or an external leaf (used by the attribution path)
int encode_input(nd::Graph& g, const Model& model, const EncodedBatch& batch, int occ_node);

// pooled sequence representation per architecture
int encoder_output(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
                   const EncodedBatch& batch, int features, ForwardCtx& ctx);

// dense head + softmax -> (B, n_classes)
int classifier_output(nd::Graph& g, const Model& model, const nd::BoundParams& bound, int rep,
                      ForwardCtx& ctx);

// full pass from the model's own embedding table
int forward(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
            const EncodedBatch& batch, ForwardCtx& ctx);

struct Prediction {
    int class_id = 0;
    std::vector<float> probs;
};

// argmax with ties broken toward the lowest class id
Prediction predict(const Model& model, const telemetry::WindowInstance& instance);
std::vector<Prediction> predict_batch(const Model& model,
                                      const std::vector<telemetry::WindowInstance>& instances);

void save_model(const Model& model, const std::string& path,
                const std::map<std::string, std::string>& extra_metadata = {});
Model load_model(const std::string& path);
Model model_from_checkpoint(const nd::Checkpoint& ckpt);

}  // namespace iocseq::models
