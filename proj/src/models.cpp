#include "iocseq/models.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "iocseq/common.hpp"

namespace iocseq::models {

using nlohmann::json;
using telemetry::WindowInstance;

std::string arch_name(ArchKind a) {
    switch (a) {
        case ArchKind::lstm: return "lstm";
        case ArchKind::cnn: return "cnn";
        case ArchKind::transformer: return "transformer";
    }
    return "?";
}

ArchKind arch_from_name(const std::string& name) {
    if (name == "lstm") return ArchKind::lstm;
    if (name == "cnn") return ArchKind::cnn;
    if (name == "transformer") return ArchKind::transformer;
    fail("unknown architecture '", name, "' (expected lstm, cnn or transformer)");
}

ArchitectureConfig ArchitectureConfig::make(ArchKind variant, const std::string& preset,
                                            int64_t vocab_size, int64_t n_classes) {
    ArchitectureConfig c;
    c.variant = variant;
    c.preset = preset;
    c.vocab_size = vocab_size;
    c.n_classes = n_classes;
    if (preset == "paper") {
        c.embedding_dim = 128;
        c.lstm_layers = 1;
        c.lstm_units = 1024;
        c.cnn_layers = 3;
        c.kernel = 4;
        c.filters = 32;
        c.tf_blocks = 2;
        c.heads = 8;
        c.ffn_units = 512;
        c.d_model = 128;
        c.dense_layers = 2;
        c.dense_units = variant == ArchKind::transformer ? 512 : 256;
    } else if (preset == "desk") {
        c.embedding_dim = 32;
        c.lstm_layers = 1;
        c.lstm_units = 64;
        c.cnn_layers = 3;
        c.kernel = 4;
        c.filters = 32;
        c.tf_blocks = 2;
        c.heads = 4;
        c.ffn_units = 64;
        c.d_model = 32;
        c.dense_layers = 2;
        c.dense_units = 64;
    } else {
        fail("unknown preset '", preset, "' (expected paper or desk)");
    }
    c.validate();
    return c;
}

void ArchitectureConfig::validate() const {
    require(vocab_size >= 2, "config: vocab_size must include the reserved entries");
    require(embedding_dim >= 1 && n_classes >= 1, "config: extents must be positive");
    require(lstm_layers >= 1 && lstm_units >= 1, "config: bad lstm extents");
    require(cnn_layers >= 1 && kernel >= 1 && filters >= 1, "config: bad cnn extents");
    require(tf_blocks >= 1 && heads >= 1 && ffn_units >= 1 && d_model >= 1,
            "config: bad transformer extents");
    require(dense_layers >= 0 && dense_units >= 1, "config: bad head extents");
    require(d_model % heads == 0, "config: d_model ", d_model, " not divisible by heads ", heads);
    require(dropout >= 0.0f && dropout < 1.0f, "config: dropout must be in [0,1)");
}

std::string ArchitectureConfig::to_json() const {
    json j;
    j["variant"] = arch_name(variant);
    j["preset"] = preset;
    j["vocab_size"] = vocab_size;
    j["embedding_dim"] = embedding_dim;
    j["lstm_layers"] = lstm_layers;
    j["lstm_units"] = lstm_units;
    j["cnn_layers"] = cnn_layers;
    j["kernel"] = kernel;
    j["filters"] = filters;
    j["tf_blocks"] = tf_blocks;
    j["heads"] = heads;
    j["ffn_units"] = ffn_units;
    j["d_model"] = d_model;
    j["dense_layers"] = dense_layers;
    j["dense_units"] = dense_units;
    j["dropout"] = dropout;
    j["n_classes"] = n_classes;
    return j.dump();
}

ArchitectureConfig ArchitectureConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    ArchitectureConfig c;
    c.variant = arch_from_name(j.at("variant").get<std::string>());
    c.preset = j.at("preset").get<std::string>();
    c.vocab_size = j.at("vocab_size").get<int64_t>();
    c.embedding_dim = j.at("embedding_dim").get<int64_t>();
    c.lstm_layers = j.at("lstm_layers").get<int>();
    c.lstm_units = j.at("lstm_units").get<int64_t>();
    c.cnn_layers = j.at("cnn_layers").get<int>();
    c.kernel = j.at("kernel").get<int64_t>();
    c.filters = j.at("filters").get<int64_t>();
    c.tf_blocks = j.at("tf_blocks").get<int>();
    c.heads = j.at("heads").get<int>();
    c.ffn_units = j.at("ffn_units").get<int64_t>();
    c.d_model = j.at("d_model").get<int64_t>();
    c.dense_layers = j.at("dense_layers").get<int>();
    c.dense_units = j.at("dense_units").get<int64_t>();
    c.dropout = j.at("dropout").get<float>();
    c.n_classes = j.at("n_classes").get<int64_t>();
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// parameter construction
// ---------------------------------------------------------------------------

namespace {

uint64_t param_seed(uint64_t seed, const std::string& name) {
    return hash_combine(seed, fnv1a64(name));
}

void add_param(nd::ParamMap& params, uint64_t seed, const std::string& name,
               std::vector<int64_t> shape, bool zero = false) {
    params[name] = zero ? nd::Tensor::zeros(shape) : nd::glorot_init(shape, param_seed(seed, name));
}

}  // namespace

int64_t encoder_width(const ArchitectureConfig& c) {
    switch (c.variant) {
        case ArchKind::lstm: return 2 * c.lstm_units;
        case ArchKind::cnn: return c.filters;
        case ArchKind::transformer: return c.d_model;
    }
    return 0;
}

nd::ParamMap build_encoder_params(const ArchitectureConfig& config, uint64_t seed) {
    nd::ParamMap p;

    add_param(p, seed, "embedding", {config.vocab_size, config.embedding_dim});
    // <PAD> row pinned to zero; embedding_lookup never routes gradient to it
    for (int64_t e = 0; e < config.embedding_dim; ++e) p["embedding"].at(0, e) = 0.0f;

    const int64_t in_width = config.embedding_dim + 3;
    switch (config.variant) {
        case ArchKind::lstm: {
            int64_t width = in_width;
            for (int l = 0; l < config.lstm_layers; ++l) {
                const std::string base = "enc.lstm" + std::to_string(l) + ".";
                for (const char* dir : {"fwd.", "bwd."}) {
                    add_param(p, seed, base + dir + "Wx", {width, 4 * config.lstm_units});
                    add_param(p, seed, base + dir + "Wh", {config.lstm_units, 4 * config.lstm_units});
                    add_param(p, seed, base + dir + "b", {4 * config.lstm_units}, true);
                    // forget-gate bias starts at 1
                    for (int64_t u = 0; u < config.lstm_units; ++u)
                        p[base + dir + "b"].data[static_cast<size_t>(config.lstm_units + u)] = 1.0f;
                }
                width = 2 * config.lstm_units;
            }
            break;
        }
        case ArchKind::cnn: {
            int64_t channels = in_width;
            for (int l = 0; l < config.cnn_layers; ++l) {
                const std::string base = "enc.conv" + std::to_string(l) + ".";
                add_param(p, seed, base + "W", {config.kernel, channels, config.filters});
                add_param(p, seed, base + "b", {config.filters}, true);
                channels = config.filters;
            }
            break;
        }
        case ArchKind::transformer: {
            add_param(p, seed, "enc.proj.W", {in_width, config.d_model});
            add_param(p, seed, "enc.proj.b", {config.d_model}, true);
            for (int bl = 0; bl < config.tf_blocks; ++bl) {
                const std::string base = "enc.block" + std::to_string(bl) + ".";
                for (const char* w : {"attn.Wq", "attn.Wk", "attn.Wv", "attn.Wo"})
                    add_param(p, seed, base + w, {config.d_model, config.d_model});
                for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
                    add_param(p, seed, base + b, {config.d_model}, true);
                add_param(p, seed, base + "ffn.W1", {config.d_model, config.ffn_units});
                add_param(p, seed, base + "ffn.b1", {config.ffn_units}, true);
                add_param(p, seed, base + "ffn.W2", {config.ffn_units, config.d_model});
                add_param(p, seed, base + "ffn.b2", {config.d_model}, true);
                for (const char* ln : {"ln1.", "ln2."}) {
                    p[base + ln + "gamma"] = nd::Tensor::full({config.d_model}, 1.0f);
                    p[base + ln + "beta"] = nd::Tensor::zeros({config.d_model});
                }
            }
            break;
        }
    }
    return p;
}

Model build_model(const ArchitectureConfig& config, uint64_t vocab_hash, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    m.vocab_hash = vocab_hash;
    m.params = build_encoder_params(config, seed);
    nd::ParamMap& p = m.params;

    int64_t width = encoder_width(config);
    for (int l = 0; l < config.dense_layers; ++l) {
        const std::string base = "head.fc" + std::to_string(l) + ".";
        add_param(p, seed, base + "W", {width, config.dense_units});
        add_param(p, seed, base + "b", {config.dense_units}, true);
        width = config.dense_units;
    }
    add_param(p, seed, "head.out.W", {width, config.n_classes});
    add_param(p, seed, "head.out.b", {config.n_classes}, true);
    return m;
}

// ---------------------------------------------------------------------------
// batch encoding
// ---------------------------------------------------------------------------

EncodedBatch encode_batch(const std::vector<const WindowInstance*>& instances,
                          int64_t vocab_size) {
    require(!instances.empty(), "encode_batch: empty batch");
    EncodedBatch batch;
    batch.batch = static_cast<int64_t>(instances.size());
    batch.width = instances[0]->width();
    batch.numerics = nd::Tensor({batch.batch * batch.width, 3});
    int64_t row = 0;
    for (const WindowInstance* inst : instances) {
        require(inst->width() == batch.width, "encode_batch: mixed window widths ",
                inst->width(), " vs ", batch.width);
        batch.pad.push_back(inst->pad_steps);
        for (const auto& step : inst->steps) {
            require(!step.event_ids.empty(), "encode_batch: step with no events");
            const int64_t begin = static_cast<int64_t>(batch.event_ids.size());
            for (int64_t id : step.event_ids) {
                require(id >= 0 && id < vocab_size, "encode_batch: event id ", id,
                        " out of range for vocab ", vocab_size);
                batch.event_ids.push_back(id);
            }
            batch.segments.push_back({begin, static_cast<int64_t>(step.event_ids.size())});
            batch.numerics.at(row, 0) = static_cast<float>(step.log_dt);
            batch.numerics.at(row, 1) = static_cast<float>(step.log_sent);
            batch.numerics.at(row, 2) = static_cast<float>(step.log_recv);
            ++row;
        }
    }
    return batch;
}

EncodedBatch encode_batch(const std::vector<WindowInstance>& instances, int64_t vocab_size) {
    std::vector<const WindowInstance*> ptrs;
    ptrs.reserve(instances.size());
    for (const auto& inst : instances) ptrs.push_back(&inst);
    return encode_batch(ptrs, vocab_size);
}

// ---------------------------------------------------------------------------
// forward passes
// ---------------------------------------------------------------------------

int encode_input(nd::Graph& g, const Model& model, const EncodedBatch& batch, int occ_node) {
    const int step_emb = nd::set_mean(g, occ_node, batch.segments);
    const int numerics = g.leaf(batch.numerics, false);
    const int feats2d = nd::concat_cols(g, step_emb, numerics);
    return nd::reshape(g, feats2d, {batch.batch, batch.width, model.config.embedding_dim + 3});
}

namespace {

int lstm_encoder(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
                 const EncodedBatch& batch, int features) {
    int seq = features;
    for (int l = 0; l < model.config.lstm_layers; ++l) {
        const std::string base = "enc.lstm" + std::to_string(l) + ".";
        seq = nd::bidirectional_lstm(g, seq, batch.pad,
                                     bound.id(base + "fwd.Wx"), bound.id(base + "fwd.Wh"),
                                     bound.id(base + "fwd.b"), bound.id(base + "bwd.Wx"),
                                     bound.id(base + "bwd.Wh"), bound.id(base + "bwd.b"));
    }
    return nd::take_final_states(g, seq, batch.pad);
}

int cnn_encoder(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
                const EncodedBatch& batch, int features) {
    (void)batch;
    int x = features;
    for (int l = 0; l < model.config.cnn_layers; ++l) {
        const std::string base = "enc.conv" + std::to_string(l) + ".";
        const int64_t t_cur = g.value(x).shape[1];
        int w_node = bound.id(base + "W");
        // shrinking valid-padding lengths can undershoot the kernel (w=21,
        // kernel 4 reaches length 3 at the third stage); use the kernel's
        // leading taps so the layer stays applicable and trainable
        if (model.config.kernel > t_cur) w_node = nd::slice_rows(g, w_node, 0, t_cur);
        x = nd::conv1d(g, x, w_node, bound.id(base + "b"));
        x = nd::activation(g, x, nd::Act::relu);
        const int64_t t_conv = g.value(x).shape[1];
        if (t_conv >= 2) x = nd::maxpool1d(g, x, 2);
    }
    return nd::global_average_pool(g, x);
}

int transformer_encoder(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
                        const EncodedBatch& batch, int features, ForwardCtx& ctx) {
    const float p = model.config.dropout;
    int x = nd::dense(g, features, bound.id("enc.proj.W"), bound.id("enc.proj.b"),
                      nd::Act::identity);
    x = nd::positional_encoding_add(g, x, batch.pad);
    for (int bl = 0; bl < model.config.tf_blocks; ++bl) {
        const std::string base = "enc.block" + std::to_string(bl) + ".";
        int attn = nd::multi_head_attention(
            g, x, bound.id(base + "attn.Wq"), bound.id(base + "attn.bq"),
            bound.id(base + "attn.Wk"), bound.id(base + "attn.bk"), bound.id(base + "attn.Wv"),
            bound.id(base + "attn.bv"), bound.id(base + "attn.Wo"), bound.id(base + "attn.bo"),
            model.config.heads, batch.pad);
        attn = nd::dropout(g, attn, p, ctx.next_seed(), ctx.training);
        x = nd::layer_norm(g, nd::add(g, x, attn), bound.id(base + "ln1.gamma"),
                           bound.id(base + "ln1.beta"));
        int ffn = nd::dense(g, x, bound.id(base + "ffn.W1"), bound.id(base + "ffn.b1"),
                            nd::Act::relu);
        ffn = nd::dense(g, ffn, bound.id(base + "ffn.W2"), bound.id(base + "ffn.b2"),
                        nd::Act::identity);
        ffn = nd::dropout(g, ffn, p, ctx.next_seed(), ctx.training);
        x = nd::layer_norm(g, nd::add(g, x, ffn), bound.id(base + "ln2.gamma"),
                           bound.id(base + "ln2.beta"));
    }
    return nd::mean_pool_masked(g, x, batch.pad);
}

}  // namespace

int encoder_output(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
                   const EncodedBatch& batch, int features, ForwardCtx& ctx) {
    switch (model.config.variant) {
        case ArchKind::lstm: return lstm_encoder(g, model, bound, batch, features);
        case ArchKind::cnn: return cnn_encoder(g, model, bound, batch, features);
        case ArchKind::transformer:
            return transformer_encoder(g, model, bound, batch, features, ctx);
    }
    fail("encoder_output: bad variant");
}

int classifier_output(nd::Graph& g, const Model& model, const nd::BoundParams& bound, int rep,
                      ForwardCtx& ctx) {
    int h = rep;
    for (int l = 0; l < model.config.dense_layers; ++l) {
        const std::string base = "head.fc" + std::to_string(l) + ".";
        h = nd::dense(g, h, bound.id(base + "W"), bound.id(base + "b"), nd::Act::relu);
        h = nd::dropout(g, h, model.config.dropout, ctx.next_seed(), ctx.training);
    }
    return nd::dense(g, h, bound.id("head.out.W"), bound.id("head.out.b"), nd::Act::softmax);
}

int forward(nd::Graph& g, const Model& model, const nd::BoundParams& bound,
            const EncodedBatch& batch, ForwardCtx& ctx) {
    const int occ = nd::embedding_lookup(g, bound.id("embedding"), batch.event_ids);
    const int features = encode_input(g, model, batch, occ);
    const int rep = encoder_output(g, model, bound, batch, features, ctx);
    return classifier_output(g, model, bound, rep, ctx);
}

// ---------------------------------------------------------------------------
// prediction
// ---------------------------------------------------------------------------

std::vector<Prediction> predict_batch(const Model& model,
                                      const std::vector<WindowInstance>& instances) {
    if (instances.empty()) return {};
    EncodedBatch batch = encode_batch(instances, model.config.vocab_size);
    nd::Graph g;
    nd::BoundParams bound = bind_params(g, model.params);
    ForwardCtx ctx;  // inference: dropout is identity
    const int probs = forward(g, model, bound, batch, ctx);
    const nd::Tensor& pv = g.value(probs);
    std::vector<Prediction> out;
    for (int64_t b = 0; b < batch.batch; ++b) {
        Prediction pr;
        pr.probs.resize(static_cast<size_t>(model.config.n_classes));
        for (int64_t c = 0; c < model.config.n_classes; ++c)
            pr.probs[static_cast<size_t>(c)] = pv.at(b, c);
        pr.class_id = static_cast<int>(std::max_element(pr.probs.begin(), pr.probs.end()) -
                                       pr.probs.begin());  // first max wins a tie
        out.push_back(std::move(pr));
    }
    return out;
}

Prediction predict(const Model& model, const WindowInstance& instance) {
    return predict_batch(model, {instance})[0];
}

// ---------------------------------------------------------------------------
// persistence
// ---------------------------------------------------------------------------

void save_model(const Model& model, const std::string& path,
                const std::map<std::string, std::string>& extra_metadata) {
    nd::Checkpoint ckpt;
    ckpt.tensors = model.params;
    ckpt.metadata["arch"] = arch_name(model.config.variant);
    ckpt.metadata["preset"] = model.config.preset;
    ckpt.metadata["n_classes"] = std::to_string(model.config.n_classes);
    ckpt.metadata["vocab_hash"] = to_hex(model.vocab_hash);
    ckpt.metadata["task"] = model.task;
    ckpt.metadata["w"] = std::to_string(model.window_width);
    ckpt.metadata["config"] = model.config.to_json();
    ckpt.metadata["classes"] = json(model.class_names).dump();
    for (const auto& [k, v] : extra_metadata) ckpt.metadata[k] = v;
    save_checkpoint(ckpt, path);
}

Model model_from_checkpoint(const nd::Checkpoint& ckpt) {
    Model m;
    m.config = ArchitectureConfig::from_json(ckpt.meta("config"));
    m.params = ckpt.tensors;
    m.vocab_hash = std::stoull(ckpt.meta("vocab_hash"), nullptr, 16);
    m.task = ckpt.meta("task");
    m.window_width = std::stoi(ckpt.meta("w"));
    for (const auto& name : json::parse(ckpt.meta("classes")))
        m.class_names.push_back(name.get<std::string>());
    return m;
}

Model load_model(const std::string& path) {
    return model_from_checkpoint(nd::load_checkpoint(path));
}

}  // namespace iocseq::models
