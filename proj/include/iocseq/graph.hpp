#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "iocseq/tensor.hpp"

namespace iocseq::nd {

// Reverse-mode tape. Ops append nodes in execution order, which is a valid
// topological order, so backward() is a single reverse sweep. Gradients are
// allocated lazily: only nodes on a path from a needs-grad leaf to the loss
// ever own one.
class Graph {
public:
    struct Node {
        Tensor value;
        std::vector<int> inputs;
        std::function<void(Graph&, int)> back;  // accumulates into input grads
        const char* op;
        bool needs_grad;
    };

    int leaf(Tensor value, bool needs_grad = false);
    int add(Tensor value, std::vector<int> inputs, std::function<void(Graph&, int)> back,
            const char* op);

    const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
    const char* op_name(int id) const { return nodes_[static_cast<size_t>(id)].op; }
    bool needs_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }
    size_t size() const { return nodes_.size(); }

    // Scalar loss only; visits each node at most once, in reverse tape order.
    void backward(int loss_id);

    bool has_grad(int id) const { return grads_[static_cast<size_t>(id)] != nullptr; }
    const Tensor& grad(int id) const;
    void accum(int id, const Tensor& g);
    // raw accumulation target for op backward bodies (nullptr if grad not needed)
    Tensor* grad_slot(int id);

private:
    std::vector<Node> nodes_;
    std::vector<std::unique_ptr<Tensor>> grads_;
};

enum class Act { identity, relu, sigmoid, tanh, softmax };
const char* act_name(Act a);

struct Segment {
    int64_t begin;
    int64_t len;
};

// --- operator set ---------------------------------------------------------

// rows of `table` (V,E) gathered by id; row 0 (<PAD>) is excluded from
// gradient updates so its embedding stays pinned at zero
int embedding_lookup(Graph& g, int table, std::vector<int64_t> ids);

// per-segment mean over rows of x (N,E) -> (|segs|,E); the set pooling step
int set_mean(Graph& g, int x, std::vector<Segment> segs);

int concat_cols(Graph& g, int a, int b);

// y = act(x W + b) over the last dimension; b < 0 means no bias
int dense(Graph& g, int x, int W, int b, Act act);
int activation(Graph& g, int x, Act act);

// inverted dropout; exact identity when !training
int dropout(Graph& g, int x, float p, uint64_t seed, bool training);

// x (B,T,C), W (k,C,F), b (F) -> (B,T-k+1,F); stride 1, valid padding
int conv1d(Graph& g, int x, int W, int b);

int maxpool1d(Graph& g, int x, int64_t pool);

int global_average_pool(Graph& g, int x);  // (B,T,C) -> (B,C)

// single step: x (B,I), h/c (B,H), Wx (I,4H), Wh (H,4H), b (4H) -> (B,2H) [h'|c']
int lstm_cell(Graph& g, int x, int h, int c, int Wx, int Wh, int b);

// full bidirectional layer over x (B,T,I); pad[b] = number of left-padded
// steps for instance b (both directions skip them) -> (B,T,2H)
int bidirectional_lstm(Graph& g, int x, std::vector<int> pad,
                       int Wxf, int Whf, int bf, int Wxb, int Whb, int bb);

// forward hidden state at the last step + backward hidden state at the first
// real step, concatenated -> (B,2H)
int take_final_states(Graph& g, int seq, std::vector<int> pad);

// scaled dot-product self-attention over pre-projected q/k/v (B,T,D) with
// `heads` heads; key positions < pad[b] are masked out
int attention_core(Graph& g, int q, int k, int v, int heads, std::vector<int> pad);

// full block input: projections, attention core, output projection
int multi_head_attention(Graph& g, int x, int Wq, int bq, int Wk, int bk, int Wv, int bv,
                         int Wo, int bo, int heads, std::vector<int> pad);

int layer_norm(Graph& g, int x, int gamma, int beta, float eps = 1e-5f);

// absolute sinusoidal encoding added at position (t - pad[b]) of each real
// step, so a window's encoding does not depend on how much left padding it has
int positional_encoding_add(Graph& g, int x, std::vector<int> pad);

int add(Graph& g, int a, int b);

int slice_cols(Graph& g, int x, int64_t begin, int64_t len);

// leading-dimension slice with gradient routing back into the source
int slice_rows(Graph& g, int x, int64_t begin, int64_t len);

int reshape(Graph& g, int x, std::vector<int64_t> shape);

// mean over unpadded positions: (B,T,D) -> (B,D)
int mean_pool_masked(Graph& g, int x, std::vector<int> pad);

// mean over rows of -sum_c y log p; probs (B,C), onehot (B,C) -> scalar
int categorical_cross_entropy(Graph& g, int probs, int onehot);

// mean over all elements of -(y log s + (1-y) log(1-s)) -> scalar
int binary_cross_entropy(Graph& g, int sig, int targets);

// sum_i x_i * w_i against a constant weight tensor -> scalar
int dot_const(Graph& g, int x, Tensor weights);

}  // namespace iocseq::nd
