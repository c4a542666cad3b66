#include "iocseq/graph.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "iocseq/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace iocseq::nd {

const char* act_name(Act a) {
    switch (a) {
        case Act::identity: return "identity";
        case Act::relu: return "relu";
        case Act::sigmoid: return "sigmoid";
        case Act::tanh: return "tanh";
        case Act::softmax: return "softmax";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

int Graph::leaf(Tensor value, bool needs_grad) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, "leaf", needs_grad});
    grads_.emplace_back(nullptr);
    return static_cast<int>(nodes_.size()) - 1;
}

int Graph::add(Tensor value, std::vector<int> inputs, std::function<void(Graph&, int)> back,
               const char* op) {
    bool ng = false;
    for (int i : inputs) ng = ng || nodes_[static_cast<size_t>(i)].needs_grad;
    nodes_.push_back(Node{std::move(value), std::move(inputs), std::move(back), op, ng});
    grads_.emplace_back(nullptr);
    return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Graph::grad(int id) const {
    static const Tensor empty;
    const auto& p = grads_[static_cast<size_t>(id)];
    return p ? *p : empty;
}

void Graph::accum(int id, const Tensor& g) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    auto& slot = grads_[static_cast<size_t>(id)];
    if (!slot) slot = std::make_unique<Tensor>(Tensor::zeros(n.value.shape));
    require(slot->same_shape(g), "grad accumulation shape mismatch on ", n.op);
    float* d = slot->data.data();
    const float* s = g.data.data();
    for (int64_t i = 0, e = g.size(); i < e; ++i) d[i] += s[i];
}

Tensor* Graph::grad_slot(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return nullptr;
    auto& slot = grads_[static_cast<size_t>(id)];
    if (!slot) slot = std::make_unique<Tensor>(Tensor::zeros(n.value.shape));
    return slot.get();
}

void Graph::backward(int loss_id) {
    require(loss_id >= 0 && loss_id < static_cast<int>(nodes_.size()), "backward: bad node id");
    const Node& loss = nodes_[static_cast<size_t>(loss_id)];
    require(loss.value.size() == 1, "backward: loss must be scalar, got ", loss.value.shape_str());
    auto& slot = grads_[static_cast<size_t>(loss_id)];
    if (!slot) slot = std::make_unique<Tensor>(Tensor::zeros(loss.value.shape));
    slot->data[0] = 1.0f;
    for (int id = loss_id; id >= 0; --id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.back || !n.needs_grad || !grads_[static_cast<size_t>(id)]) continue;
        n.back(*this, id);
    }
}

// ---------------------------------------------------------------------------
// small helpers shared by op bodies
// ---------------------------------------------------------------------------

namespace {

int64_t row_count(const Tensor& t) {
    require(t.rank() >= 1, "op requires rank >= 1");
    return t.size() / t.shape.back();
}

void softmax_rows(float* p, int64_t rows, int64_t cols) {
    for (int64_t r = 0; r < rows; ++r) {
        float* row = p + r * cols;
        float mx = row[0];
        for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < cols; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        const float inv = static_cast<float>(1.0 / sum);
        for (int64_t c = 0; c < cols; ++c) row[c] *= inv;
    }
}

void apply_act(float* p, int64_t rows, int64_t cols, Act act) {
    const int64_t n = rows * cols;
    switch (act) {
        case Act::identity:
            break;
        case Act::relu:
            for (int64_t i = 0; i < n; ++i) p[i] = p[i] > 0.0f ? p[i] : 0.0f;
            break;
        case Act::sigmoid:
            for (int64_t i = 0; i < n; ++i) p[i] = 1.0f / (1.0f + std::exp(-p[i]));
            break;
        case Act::tanh:
            for (int64_t i = 0; i < n; ++i) p[i] = std::tanh(p[i]);
            break;
        case Act::softmax:
            softmax_rows(p, rows, cols);
            break;
    }
}

// dpre = dy .* act'(y) computed from post-activation values
void act_backward(const float* y, const float* dy, float* dpre, int64_t rows, int64_t cols,
                  Act act) {
    const int64_t n = rows * cols;
    switch (act) {
        case Act::identity:
            std::memcpy(dpre, dy, sizeof(float) * static_cast<size_t>(n));
            break;
        case Act::relu:
            for (int64_t i = 0; i < n; ++i) dpre[i] = y[i] > 0.0f ? dy[i] : 0.0f;
            break;
        case Act::sigmoid:
            for (int64_t i = 0; i < n; ++i) dpre[i] = dy[i] * y[i] * (1.0f - y[i]);
            break;
        case Act::tanh:
            for (int64_t i = 0; i < n; ++i) dpre[i] = dy[i] * (1.0f - y[i] * y[i]);
            break;
        case Act::softmax:
            for (int64_t r = 0; r < rows; ++r) {
                const float* yr = y + r * cols;
                const float* dr = dy + r * cols;
                float* o = dpre + r * cols;
                double dot = 0.0;
                for (int64_t c = 0; c < cols; ++c) dot += static_cast<double>(dr[c]) * yr[c];
                const float dotf = static_cast<float>(dot);
                for (int64_t c = 0; c < cols; ++c) o[c] = (dr[c] - dotf) * yr[c];
            }
            break;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// embedding / set pooling / concat
// ---------------------------------------------------------------------------

int embedding_lookup(Graph& g, int table, std::vector<int64_t> ids) {
    const Tensor& tab = g.value(table);
    require(tab.rank() == 2, "embedding_lookup: table must be rank 2, got ", tab.shape_str());
    const int64_t V = tab.shape[0], E = tab.shape[1];
    Tensor out({static_cast<int64_t>(ids.size()), E});
    for (size_t n = 0; n < ids.size(); ++n) {
        const int64_t id = ids[n];
        require(id >= 0 && id < V, "embedding_lookup: id ", id, " out of range for vocab ", V);
        std::memcpy(out.data.data() + n * E, tab.data.data() + id * E,
                    sizeof(float) * static_cast<size_t>(E));
    }
    auto back = [ids = std::move(ids), table, E](Graph& gr, int self) {
        Tensor* dt = gr.grad_slot(table);
        if (!dt) return;
        const Tensor& dy = gr.grad(self);
        for (size_t n = 0; n < ids.size(); ++n) {
            const int64_t id = ids[n];
            if (id == 0) continue;  // <PAD> row pinned
            float* row = dt->data.data() + id * E;
            const float* src = dy.data.data() + static_cast<int64_t>(n) * E;
            for (int64_t e = 0; e < E; ++e) row[e] += src[e];
        }
    };
    return g.add(std::move(out), {table}, std::move(back), "embedding_lookup");
}

int set_mean(Graph& g, int x, std::vector<Segment> segs) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 2, "set_mean: input must be rank 2");
    const int64_t N = xv.shape[0], E = xv.shape[1];
    Tensor out({static_cast<int64_t>(segs.size()), E});
    for (size_t m = 0; m < segs.size(); ++m) {
        const auto& s = segs[m];
        require(s.len >= 1 && s.begin >= 0 && s.begin + s.len <= N,
                "set_mean: bad segment [", s.begin, ",+", s.len, ") for ", N, " rows");
        float* o = out.data.data() + m * E;
        for (int64_t r = 0; r < s.len; ++r) {
            const float* src = xv.data.data() + (s.begin + r) * E;
            for (int64_t e = 0; e < E; ++e) o[e] += src[e];
        }
        const float inv = 1.0f / static_cast<float>(s.len);
        for (int64_t e = 0; e < E; ++e) o[e] *= inv;
    }
    auto back = [segs = std::move(segs), x, E](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (size_t m = 0; m < segs.size(); ++m) {
            const auto& s = segs[m];
            const float inv = 1.0f / static_cast<float>(s.len);
            const float* src = dy.data.data() + static_cast<int64_t>(m) * E;
            for (int64_t r = 0; r < s.len; ++r) {
                float* o = dx->data.data() + (s.begin + r) * E;
                for (int64_t e = 0; e < E; ++e) o[e] += src[e] * inv;
            }
        }
    };
    return g.add(std::move(out), {x}, std::move(back), "set_mean");
}

int concat_cols(Graph& g, int a, int b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require(av.rank() == 2 && bv.rank() == 2 && av.shape[0] == bv.shape[0],
            "concat_cols: need rank-2 with equal rows, got ", av.shape_str(), " and ",
            bv.shape_str());
    const int64_t N = av.shape[0], A = av.shape[1], B = bv.shape[1];
    Tensor out({N, A + B});
    for (int64_t n = 0; n < N; ++n) {
        std::memcpy(out.data.data() + n * (A + B), av.data.data() + n * A,
                    sizeof(float) * static_cast<size_t>(A));
        std::memcpy(out.data.data() + n * (A + B) + A, bv.data.data() + n * B,
                    sizeof(float) * static_cast<size_t>(B));
    }
    auto back = [a, b, N, A, B](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        if (Tensor* da = gr.grad_slot(a)) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < A; ++c) da->at(n, c) += dy.at(n, c);
        }
        if (Tensor* db = gr.grad_slot(b)) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < B; ++c) db->at(n, c) += dy.at(n, A + c);
        }
    };
    return g.add(std::move(out), {a, b}, std::move(back), "concat_cols");
}

// ---------------------------------------------------------------------------
// dense / activation / dropout
// ---------------------------------------------------------------------------

int dense(Graph& g, int x, int W, int b, Act act) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(W);
    require(wv.rank() == 2, "dense: W must be rank 2");
    const int64_t I = wv.shape[0], O = wv.shape[1];
    require(xv.shape.back() == I, "dense: input width ", xv.shape.back(), " != W rows ", I);
    const int64_t R = row_count(xv);
    std::vector<int64_t> oshape = xv.shape;
    oshape.back() = O;
    Tensor out(oshape);
    kernels::matmul(xv.data.data(), wv.data.data(), out.data.data(), R, I, O);
    if (b >= 0) {
        const Tensor& bv = g.value(b);
        require(bv.rank() == 1 && bv.shape[0] == O, "dense: bias must be (", O, ")");
        for (int64_t r = 0; r < R; ++r) {
            float* row = out.data.data() + r * O;
            for (int64_t c = 0; c < O; ++c) row[c] += bv.data[static_cast<size_t>(c)];
        }
    }
    apply_act(out.data.data(), R, O, act);

    auto back = [x, W, b, act, R, I, O](Graph& gr, int self) {
        const Tensor& y = gr.value(self);
        const Tensor& dy = gr.grad(self);
        Tensor dpre({R, O});
        act_backward(y.data.data(), dy.data.data(), dpre.data.data(), R, O, act);
        const Tensor& xv = gr.value(x);
        const Tensor& wv = gr.value(W);
        if (Tensor* dx = gr.grad_slot(x)) {
            Tensor tmp({R, I});
            kernels::matmul_bt(dpre.data.data(), wv.data.data(), tmp.data.data(), R, O, I);
            for (int64_t i = 0, e = tmp.size(); i < e; ++i) dx->data[static_cast<size_t>(i)] += tmp.data[static_cast<size_t>(i)];
        }
        if (Tensor* dW = gr.grad_slot(W)) {
            Tensor tmp({I, O});
            kernels::matmul_at(xv.data.data(), dpre.data.data(), tmp.data.data(), I, R, O);
            for (int64_t i = 0, e = tmp.size(); i < e; ++i) dW->data[static_cast<size_t>(i)] += tmp.data[static_cast<size_t>(i)];
        }
        if (b >= 0) {
            if (Tensor* db = gr.grad_slot(b)) {
                for (int64_t r = 0; r < R; ++r)
                    for (int64_t c = 0; c < O; ++c) db->data[static_cast<size_t>(c)] += dpre.at(r, c);
            }
        }
    };
    std::vector<int> inputs = b >= 0 ? std::vector<int>{x, W, b} : std::vector<int>{x, W};
    return g.add(std::move(out), std::move(inputs), std::move(back), "dense");
}

int activation(Graph& g, int x, Act act) {
    const Tensor& xv = g.value(x);
    const int64_t C = xv.shape.back();
    const int64_t R = row_count(xv);
    Tensor out = xv;
    apply_act(out.data.data(), R, C, act);
    auto back = [x, R, C, act](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& y = gr.value(self);
        const Tensor& dy = gr.grad(self);
        Tensor dpre(dy.shape);
        act_backward(y.data.data(), dy.data.data(), dpre.data.data(), R, C, act);
        for (int64_t i = 0, e = dpre.size(); i < e; ++i) dx->data[static_cast<size_t>(i)] += dpre.data[static_cast<size_t>(i)];
    };
    return g.add(std::move(out), {x}, std::move(back), act_name(act));
}

int dropout(Graph& g, int x, float p, uint64_t seed, bool training) {
    require(p >= 0.0f && p < 1.0f, "dropout: p must be in [0,1), got ", p);
    if (!training || p == 0.0f) return x;  // exact identity at inference
    const Tensor& xv = g.value(x);
    const int64_t n = xv.size();
    auto mask = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(n));
    SplitMix64 rng(seed);
    const float scale = 1.0f / (1.0f - p);
    Tensor out(xv.shape);
    for (int64_t i = 0; i < n; ++i) {
        const bool keep = rng.uniform() >= p;
        (*mask)[static_cast<size_t>(i)] = keep;
        out.data[static_cast<size_t>(i)] = keep ? xv.data[static_cast<size_t>(i)] * scale : 0.0f;
    }
    auto back = [x, mask, scale, n](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t i = 0; i < n; ++i)
            if ((*mask)[static_cast<size_t>(i)]) dx->data[static_cast<size_t>(i)] += dy.data[static_cast<size_t>(i)] * scale;
    };
    return g.add(std::move(out), {x}, std::move(back), "dropout");
}

// ---------------------------------------------------------------------------
// convolution / pooling
// ---------------------------------------------------------------------------

int conv1d(Graph& g, int x, int W, int b) {
    const Tensor& xv = g.value(x);
    const Tensor& wv = g.value(W);
    require(xv.rank() == 3, "conv1d: input must be (B,T,C), got ", xv.shape_str());
    require(wv.rank() == 3, "conv1d: weight must be (k,C,F), got ", wv.shape_str());
    const int64_t B = xv.shape[0], T = xv.shape[1], C = xv.shape[2];
    const int64_t k = wv.shape[0], F = wv.shape[2];
    require(wv.shape[1] == C, "conv1d: weight channels ", wv.shape[1], " != input channels ", C);
    require(k <= T, "conv1d: kernel ", k, " exceeds sequence length ", T);
    const int64_t To = T - k + 1;
    Tensor out({B, To, F});
    const float* bias = nullptr;
    if (b >= 0) {
        const Tensor& bv = g.value(b);
        require(bv.rank() == 1 && bv.shape[0] == F, "conv1d: bias must be (", F, ")");
        bias = bv.data.data();
    }
    kernels::conv1d_forward(xv.data.data(), wv.data.data(), bias, out.data.data(), B, T, C, k, F);
    auto back = [x, W, b, B, T, C, k, F](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        if (Tensor* dx = gr.grad_slot(x)) {
            Tensor tmp({B, T, C});
            kernels::conv1d_dx(dy.data.data(), gr.value(W).data.data(), tmp.data.data(), B, T, C, k, F);
            for (int64_t i = 0, e = tmp.size(); i < e; ++i) dx->data[static_cast<size_t>(i)] += tmp.data[static_cast<size_t>(i)];
        }
        Tensor* dW = gr.grad_slot(W);
        Tensor* db = b >= 0 ? gr.grad_slot(b) : nullptr;
        if (dW || db) {
            Tensor tw({k, C, F});
            Tensor tb({F});
            kernels::conv1d_dw(gr.value(x).data.data(), dy.data.data(), tw.data.data(),
                               tb.data.data(), B, T, C, k, F);
            if (dW)
                for (int64_t i = 0, e = tw.size(); i < e; ++i) dW->data[static_cast<size_t>(i)] += tw.data[static_cast<size_t>(i)];
            if (db)
                for (int64_t i = 0; i < F; ++i) db->data[static_cast<size_t>(i)] += tb.data[static_cast<size_t>(i)];
        }
    };
    std::vector<int> inputs = b >= 0 ? std::vector<int>{x, W, b} : std::vector<int>{x, W};
    return g.add(std::move(out), std::move(inputs), std::move(back), "conv1d");
}

int maxpool1d(Graph& g, int x, int64_t pool) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 3, "maxpool1d: input must be (B,T,C)");
    require(pool >= 1 && pool <= xv.shape[1], "maxpool1d: bad pool size ", pool);
    const int64_t B = xv.shape[0], T = xv.shape[1], C = xv.shape[2];
    const int64_t To = T / pool;  // tail positions beyond To*pool are dropped
    Tensor out({B, To, C});
    auto arg = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(B * To * C));
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t t = 0; t < To; ++t) {
            for (int64_t c = 0; c < C; ++c) {
                float best = xv.at(bi, t * pool, c);
                int32_t bq = 0;
                for (int64_t q = 1; q < pool; ++q) {
                    const float v = xv.at(bi, t * pool + q, c);
                    if (v > best) {
                        best = v;
                        bq = static_cast<int32_t>(q);
                    }
                }
                out.at(bi, t, c) = best;
                (*arg)[static_cast<size_t>((bi * To + t) * C + c)] = bq;
            }
        }
    }
    auto back = [x, arg, B, To, C, pool](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t t = 0; t < To; ++t)
                for (int64_t c = 0; c < C; ++c) {
                    const int32_t q = (*arg)[static_cast<size_t>((bi * To + t) * C + c)];
                    dx->at(bi, t * pool + q, c) += dy.at(bi, t, c);
                }
    };
    return g.add(std::move(out), {x}, std::move(back), "maxpool1d");
}

int global_average_pool(Graph& g, int x) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 3, "global_average_pool: input must be (B,T,C)");
    const int64_t B = xv.shape[0], T = xv.shape[1], C = xv.shape[2];
    Tensor out({B, C});
    for (int64_t bi = 0; bi < B; ++bi)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t c = 0; c < C; ++c) out.at(bi, c) += xv.at(bi, t, c);
    const float inv = 1.0f / static_cast<float>(T);
    for (auto& v : out.data) v *= inv;
    auto back = [x, B, T, C, inv](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t bi = 0; bi < B; ++bi)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t c = 0; c < C; ++c) dx->at(bi, t, c) += dy.at(bi, c) * inv;
    };
    return g.add(std::move(out), {x}, std::move(back), "global_average_pool");
}

// ---------------------------------------------------------------------------
// LSTM
// ---------------------------------------------------------------------------

namespace {

inline float sigm(float v) { return 1.0f / (1.0f + std::exp(-v)); }

// gates packed [i f g o] along the last axis of z (B,4H)
struct CellSaved {
    Tensor ig, fg, gg, og, tc;  // each (B,H); tc = tanh(c_new)
};

void cell_forward(const float* z, const float* c_prev, float* h_new, float* c_new,
                  CellSaved* saved, int64_t B, int64_t H) {
    for (int64_t b = 0; b < B; ++b) {
        const float* zb = z + b * 4 * H;
        for (int64_t u = 0; u < H; ++u) {
            const float i = sigm(zb[u]);
            const float f = sigm(zb[H + u]);
            const float gt = std::tanh(zb[2 * H + u]);
            const float o = sigm(zb[3 * H + u]);
            const float c = f * c_prev[b * H + u] + i * gt;
            const float tc = std::tanh(c);
            c_new[b * H + u] = c;
            h_new[b * H + u] = o * tc;
            if (saved) {
                saved->ig.at(b, u) = i;
                saved->fg.at(b, u) = f;
                saved->gg.at(b, u) = gt;
                saved->og.at(b, u) = o;
                saved->tc.at(b, u) = tc;
            }
        }
    }
}

// given dh/dc for the new state, produce dz and dc_prev
void cell_backward(const CellSaved& s, const float* c_prev, const float* dh, const float* dc_in,
                   float* dz, float* dc_prev, int64_t B, int64_t H) {
    for (int64_t b = 0; b < B; ++b) {
        float* zb = dz + b * 4 * H;
        for (int64_t u = 0; u < H; ++u) {
            const float i = s.ig.at(b, u), f = s.fg.at(b, u), gt = s.gg.at(b, u),
                        o = s.og.at(b, u), tc = s.tc.at(b, u);
            const float dhv = dh[b * H + u];
            const float dc = dhv * o * (1.0f - tc * tc) + dc_in[b * H + u];
            zb[u] = dc * gt * i * (1.0f - i);
            zb[H + u] = dc * c_prev[b * H + u] * f * (1.0f - f);
            zb[2 * H + u] = dc * i * (1.0f - gt * gt);
            zb[3 * H + u] = dhv * tc * o * (1.0f - o);
            dc_prev[b * H + u] = dc * f;
        }
    }
}

}  // namespace

int lstm_cell(Graph& g, int x, int h, int c, int Wx, int Wh, int b) {
    const Tensor& xv = g.value(x);
    const Tensor& hv = g.value(h);
    const Tensor& cv = g.value(c);
    const Tensor& wxv = g.value(Wx);
    const Tensor& whv = g.value(Wh);
    const Tensor& bv = g.value(b);
    require(xv.rank() == 2 && hv.rank() == 2 && cv.rank() == 2, "lstm_cell: x/h/c must be rank 2");
    const int64_t B = xv.shape[0], I = xv.shape[1], H = hv.shape[1];
    require(hv.shape[0] == B && cv.shape[0] == B && cv.shape[1] == H,
            "lstm_cell: state shape mismatch");
    require(wxv.shape == std::vector<int64_t>({I, 4 * H}), "lstm_cell: Wx must be (I,4H)");
    require(whv.shape == std::vector<int64_t>({H, 4 * H}), "lstm_cell: Wh must be (H,4H)");
    require(bv.shape == std::vector<int64_t>({4 * H}), "lstm_cell: b must be (4H)");

    Tensor z({B, 4 * H});
    kernels::matmul(xv.data.data(), wxv.data.data(), z.data.data(), B, I, 4 * H);
    Tensor zh({B, 4 * H});
    kernels::matmul(hv.data.data(), whv.data.data(), zh.data.data(), B, H, 4 * H);
    for (int64_t r = 0; r < B; ++r)
        for (int64_t u = 0; u < 4 * H; ++u) z.at(r, u) += zh.at(r, u) + bv.data[static_cast<size_t>(u)];

    auto saved = std::make_shared<CellSaved>(CellSaved{Tensor({B, H}), Tensor({B, H}),
                                                        Tensor({B, H}), Tensor({B, H}),
                                                        Tensor({B, H})});
    Tensor out({B, 2 * H});
    Tensor hn({B, H}), cn({B, H});
    cell_forward(z.data.data(), cv.data.data(), hn.data.data(), cn.data.data(), saved.get(), B, H);
    for (int64_t r = 0; r < B; ++r) {
        std::memcpy(out.data.data() + r * 2 * H, hn.data.data() + r * H, sizeof(float) * static_cast<size_t>(H));
        std::memcpy(out.data.data() + r * 2 * H + H, cn.data.data() + r * H, sizeof(float) * static_cast<size_t>(H));
    }

    auto back = [x, h, c, Wx, Wh, b, saved, B, I, H](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        Tensor dh({B, H}), dcin({B, H});
        for (int64_t r = 0; r < B; ++r)
            for (int64_t u = 0; u < H; ++u) {
                dh.at(r, u) = dy.at(r, u);
                dcin.at(r, u) = dy.at(r, H + u);
            }
        Tensor dz({B, 4 * H}), dcp({B, H});
        cell_backward(*saved, gr.value(c).data.data(), dh.data.data(), dcin.data.data(),
                      dz.data.data(), dcp.data.data(), B, H);
        if (Tensor* dx = gr.grad_slot(x)) {
            Tensor tmp({B, I});
            kernels::matmul_bt(dz.data.data(), gr.value(Wx).data.data(), tmp.data.data(), B, 4 * H, I);
            for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2) dx->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
        }
        if (Tensor* dhp = gr.grad_slot(h)) {
            Tensor tmp({B, H});
            kernels::matmul_bt(dz.data.data(), gr.value(Wh).data.data(), tmp.data.data(), B, 4 * H, H);
            for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2) dhp->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
        }
        if (Tensor* dcs = gr.grad_slot(c)) {
            for (int64_t i2 = 0, e = dcp.size(); i2 < e; ++i2) dcs->data[static_cast<size_t>(i2)] += dcp.data[static_cast<size_t>(i2)];
        }
        if (Tensor* dWx = gr.grad_slot(Wx)) {
            Tensor tmp({I, 4 * H});
            kernels::matmul_at(gr.value(x).data.data(), dz.data.data(), tmp.data.data(), I, B, 4 * H);
            for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2) dWx->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
        }
        if (Tensor* dWh = gr.grad_slot(Wh)) {
            Tensor tmp({H, 4 * H});
            kernels::matmul_at(gr.value(h).data.data(), dz.data.data(), tmp.data.data(), H, B, 4 * H);
            for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2) dWh->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
        }
        if (Tensor* db = gr.grad_slot(b)) {
            for (int64_t r = 0; r < B; ++r)
                for (int64_t u = 0; u < 4 * H; ++u) db->data[static_cast<size_t>(u)] += dz.at(r, u);
        }
    };
    return g.add(std::move(out), {x, h, c, Wx, Wh, b}, std::move(back), "lstm_cell");
}

namespace {

// saved activations for one direction of a recurrent layer, time-major
struct DirSaved {
    std::vector<CellSaved> steps;      // per t
    std::vector<Tensor> h_all, c_all;  // (B,H) after the update at t
};

}  // namespace

int bidirectional_lstm(Graph& g, int x, std::vector<int> pad,
                       int Wxf, int Whf, int bf, int Wxb, int Whb, int bb) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 3, "bidirectional_lstm: input must be (B,T,I)");
    const int64_t B = xv.shape[0], T = xv.shape[1], I = xv.shape[2];
    require(static_cast<int64_t>(pad.size()) == B, "bidirectional_lstm: pad size != batch");
    const Tensor& wxf = g.value(Wxf);
    require(wxf.rank() == 2 && wxf.shape[0] == I && wxf.shape[1] % 4 == 0,
            "bidirectional_lstm: Wx must be (I,4H)");
    const int64_t H = wxf.shape[1] / 4;
    for (int64_t b = 0; b < B; ++b)
        require(pad[static_cast<size_t>(b)] >= 0 && pad[static_cast<size_t>(b)] < T,
                "bidirectional_lstm: pad count must leave at least one real step");

    auto fw = std::make_shared<DirSaved>();
    auto bw = std::make_shared<DirSaved>();
    Tensor out({B, T, 2 * H});

    // one big input projection per direction, then one recurrent matmul per step
    auto run_dir = [&](bool forward, int Wxi, int Whi, int bi, DirSaved& sv) {
        const Tensor& wx = g.value(Wxi);
        const Tensor& wh = g.value(Whi);
        const Tensor& bias = g.value(bi);
        Tensor xz({B * T, 4 * H});
        kernels::matmul(xv.data.data(), wx.data.data(), xz.data.data(), B * T, I, 4 * H);
        sv.steps.assign(static_cast<size_t>(T),
                        CellSaved{Tensor({B, H}), Tensor({B, H}), Tensor({B, H}), Tensor({B, H}),
                                  Tensor({B, H})});
        sv.h_all.assign(static_cast<size_t>(T), Tensor({B, H}));
        sv.c_all.assign(static_cast<size_t>(T), Tensor({B, H}));
        Tensor h({B, H}), c({B, H});
        Tensor z({B, 4 * H}), zh({B, 4 * H}), hn({B, H}), cn({B, H});
        for (int64_t step = 0; step < T; ++step) {
            const int64_t t = forward ? step : T - 1 - step;
            kernels::matmul(h.data.data(), wh.data.data(), zh.data.data(), B, H, 4 * H);
            for (int64_t b2 = 0; b2 < B; ++b2) {
                const float* xrow = xz.data.data() + (b2 * T + t) * 4 * H;
                float* zrow = z.data.data() + b2 * 4 * H;
                const float* zhrow = zh.data.data() + b2 * 4 * H;
                for (int64_t u = 0; u < 4 * H; ++u)
                    zrow[u] = xrow[u] + zhrow[u] + bias.data[static_cast<size_t>(u)];
            }
            cell_forward(z.data.data(), c.data.data(), hn.data.data(), cn.data.data(),
                         &sv.steps[static_cast<size_t>(t)], B, H);
            for (int64_t b2 = 0; b2 < B; ++b2) {
                if (t < pad[static_cast<size_t>(b2)]) continue;  // padded prefix: state untouched
                std::memcpy(h.data.data() + b2 * H, hn.data.data() + b2 * H, sizeof(float) * static_cast<size_t>(H));
                std::memcpy(c.data.data() + b2 * H, cn.data.data() + b2 * H, sizeof(float) * static_cast<size_t>(H));
            }
            sv.h_all[static_cast<size_t>(t)] = h;
            sv.c_all[static_cast<size_t>(t)] = c;
        }
    };
    run_dir(true, Wxf, Whf, bf, *fw);
    run_dir(false, Wxb, Whb, bb, *bw);

    for (int64_t b2 = 0; b2 < B; ++b2) {
        for (int64_t t = pad[static_cast<size_t>(b2)]; t < T; ++t) {
            std::memcpy(&out.at(b2, t, 0), fw->h_all[static_cast<size_t>(t)].data.data() + b2 * H,
                        sizeof(float) * static_cast<size_t>(H));
            std::memcpy(&out.at(b2, t, H), bw->h_all[static_cast<size_t>(t)].data.data() + b2 * H,
                        sizeof(float) * static_cast<size_t>(H));
        }
    }

    auto back = [x, pad, Wxf, Whf, bf, Wxb, Whb, bb, fw, bw, B, T, I, H](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& xv2 = gr.value(x);

        auto run_back = [&](bool forward, int Wxi, int Whi, int bi, const DirSaved& sv,
                            int64_t col0) {
            const Tensor& wh = gr.value(Whi);
            Tensor dz_all({B * T, 4 * H});  // masked rows stay zero
            Tensor dh({B, H}), dc({B, H});
            Tensor dz({B, 4 * H}), dcp({B, H}), dhrec({B, H});
            // iterate in reverse order of the forward time loop
            for (int64_t step = T - 1; step >= 0; --step) {
                const int64_t t = forward ? step : T - 1 - step;
                // inject the output gradient at this step
                for (int64_t b2 = 0; b2 < B; ++b2) {
                    if (t < pad[static_cast<size_t>(b2)]) continue;
                    for (int64_t u = 0; u < H; ++u) dh.at(b2, u) += dy.at(b2, t, col0 + u);
                }
                // previous state in this direction's time order
                const int64_t tprev_step = step - 1;
                const Tensor* cprev = nullptr;
                const Tensor* hprev = nullptr;
                Tensor zb({B, H});
                if (tprev_step >= 0) {
                    const int64_t tp = forward ? tprev_step : T - 1 - tprev_step;
                    cprev = &sv.c_all[static_cast<size_t>(tp)];
                    hprev = &sv.h_all[static_cast<size_t>(tp)];
                } else {
                    cprev = &zb;
                    hprev = &zb;
                }
                cell_backward(sv.steps[static_cast<size_t>(t)], cprev->data.data(), dh.data.data(),
                              dc.data.data(), dz.data.data(), dcp.data.data(), B, H);
                // mask: steps in the padded prefix never updated the state
                for (int64_t b2 = 0; b2 < B; ++b2) {
                    if (t < pad[static_cast<size_t>(b2)]) {
                        // gradient neither flows through nor past an inactive step
                        for (int64_t u = 0; u < 4 * H; ++u) dz.at(b2, u) = 0.0f;
                        for (int64_t u = 0; u < H; ++u) {
                            dcp.at(b2, u) = 0.0f;
                            dh.at(b2, u) = 0.0f;
                            dc.at(b2, u) = 0.0f;
                        }
                    }
                }
                for (int64_t b2 = 0; b2 < B; ++b2)
                    std::memcpy(dz_all.data.data() + (b2 * T + t) * 4 * H, dz.data.data() + b2 * 4 * H,
                                sizeof(float) * static_cast<size_t>(4 * H));
                // recurrent gradient to the previous step
                kernels::matmul_bt(dz.data.data(), wh.data.data(), dhrec.data.data(), B, 4 * H, H);
                for (int64_t b2 = 0; b2 < B; ++b2)
                    for (int64_t u = 0; u < H; ++u) {
                        dh.at(b2, u) = dhrec.at(b2, u);
                        dc.at(b2, u) = dcp.at(b2, u);
                    }
                if (Tensor* dWh = gr.grad_slot(Whi)) {
                    Tensor tmp({H, 4 * H});
                    kernels::matmul_at(hprev->data.data(), dz.data.data(), tmp.data.data(), H, B, 4 * H);
                    for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2)
                        dWh->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
                }
                if (Tensor* db = gr.grad_slot(bi)) {
                    for (int64_t b2 = 0; b2 < B; ++b2)
                        for (int64_t u = 0; u < 4 * H; ++u) db->data[static_cast<size_t>(u)] += dz.at(b2, u);
                }
            }
            if (Tensor* dWx = gr.grad_slot(Wxi)) {
                Tensor tmp({I, 4 * H});
                kernels::matmul_at(xv2.data.data(), dz_all.data.data(), tmp.data.data(), I, B * T, 4 * H);
                for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2)
                    dWx->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
            }
            if (Tensor* dx = gr.grad_slot(x)) {
                Tensor tmp({B * T, I});
                kernels::matmul_bt(dz_all.data.data(), gr.value(Wxi).data.data(), tmp.data.data(), B * T, 4 * H, I);
                for (int64_t i2 = 0, e = tmp.size(); i2 < e; ++i2)
                    dx->data[static_cast<size_t>(i2)] += tmp.data[static_cast<size_t>(i2)];
            }
        };
        run_back(true, Wxf, Whf, bf, *fw, 0);
        run_back(false, Wxb, Whb, bb, *bw, H);
    };
    return g.add(std::move(out), {x, Wxf, Whf, bf, Wxb, Whb, bb}, std::move(back),
                 "bidirectional_lstm");
}

int take_final_states(Graph& g, int seq, std::vector<int> pad) {
    const Tensor& sv = g.value(seq);
    require(sv.rank() == 3 && sv.shape[2] % 2 == 0, "take_final_states: input must be (B,T,2H)");
    const int64_t B = sv.shape[0], T = sv.shape[1], H = sv.shape[2] / 2;
    require(static_cast<int64_t>(pad.size()) == B, "take_final_states: pad size != batch");
    Tensor out({B, 2 * H});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t u = 0; u < H; ++u) {
            out.at(b, u) = sv.at(b, T - 1, u);                              // forward end
            out.at(b, H + u) = sv.at(b, pad[static_cast<size_t>(b)], H + u);  // backward end
        }
    }
    auto back = [seq, pad, B, T, H](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(seq);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t u = 0; u < H; ++u) {
                dx->at(b, T - 1, u) += dy.at(b, u);
                dx->at(b, pad[static_cast<size_t>(b)], H + u) += dy.at(b, H + u);
            }
    };
    return g.add(std::move(out), {seq}, std::move(back), "take_final_states");
}

// ---------------------------------------------------------------------------
// attention / layer norm / positional encoding
// ---------------------------------------------------------------------------

int attention_core(Graph& g, int q, int k, int v, int heads, std::vector<int> pad) {
    const Tensor& qv = g.value(q);
    const Tensor& kv = g.value(k);
    const Tensor& vv = g.value(v);
    require(qv.rank() == 3 && qv.same_shape(kv) && qv.same_shape(vv),
            "attention_core: q/k/v must share shape (B,T,D)");
    const int64_t B = qv.shape[0], T = qv.shape[1], D = qv.shape[2];
    require(heads >= 1 && D % heads == 0, "attention_core: model dim ", D,
            " not divisible by heads ", heads);
    require(static_cast<int64_t>(pad.size()) == B, "attention_core: pad size != batch");
    const int64_t dh = D / heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));

    auto attn = std::make_shared<Tensor>(Tensor({B, static_cast<int64_t>(heads), T, T}));
    Tensor out({B, T, D});
    const bool par = kernels::parallel_enabled() && B * heads > 1;
#pragma omp parallel for schedule(static) collapse(2) if (par)
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < heads; ++h) {
            const int64_t c0 = h * dh;
            float* aw = attn->data.data() + ((b * heads + h) * T) * T;
            for (int64_t i = 0; i < T; ++i) {
                float* row = aw + i * T;
                for (int64_t j = 0; j < T; ++j) {
                    if (j < pad[static_cast<size_t>(b)]) {
                        row[j] = -1e9f;
                        continue;
                    }
                    float s = 0.0f;
                    for (int64_t d = 0; d < dh; ++d) s += qv.at(b, i, c0 + d) * kv.at(b, j, c0 + d);
                    row[j] = s * scale;
                }
            }
            softmax_rows(aw, T, T);
            for (int64_t i = 0; i < T; ++i) {
                const float* row = aw + i * T;
                for (int64_t d = 0; d < dh; ++d) {
                    float s = 0.0f;
                    for (int64_t j = 0; j < T; ++j) s += row[j] * vv.at(b, j, c0 + d);
                    out.at(b, i, c0 + d) = s;
                }
            }
        }
    }

    auto back = [q, k, v, heads, pad, attn, B, T, D, dh, scale](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& qv2 = gr.value(q);
        const Tensor& kv2 = gr.value(k);
        const Tensor& vv2 = gr.value(v);
        Tensor* dq = gr.grad_slot(q);
        Tensor* dk = gr.grad_slot(k);
        Tensor* dv = gr.grad_slot(v);
        const bool par2 = kernels::parallel_enabled() && B * heads > 1;
#pragma omp parallel for schedule(static) collapse(2) if (par2)
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t h = 0; h < heads; ++h) {
                const int64_t c0 = h * dh;
                const float* aw = attn->data.data() + ((b * heads + h) * T) * T;
                std::vector<float> ds(static_cast<size_t>(T * T));
                for (int64_t i = 0; i < T; ++i) {
                    const float* arow = aw + i * T;
                    float* dsrow = ds.data() + i * T;
                    double dot = 0.0;
                    for (int64_t j = 0; j < T; ++j) {
                        float da = 0.0f;
                        for (int64_t d = 0; d < dh; ++d) da += dy.at(b, i, c0 + d) * vv2.at(b, j, c0 + d);
                        dsrow[j] = da;
                        dot += static_cast<double>(da) * arow[j];
                    }
                    const float dotf = static_cast<float>(dot);
                    for (int64_t j = 0; j < T; ++j) dsrow[j] = (dsrow[j] - dotf) * arow[j];
                }
                // head columns are disjoint across (b,h): writes race-free
                if (dv) {
                    for (int64_t j = 0; j < T; ++j)
                        for (int64_t d = 0; d < dh; ++d) {
                            float s = 0.0f;
                            for (int64_t i = 0; i < T; ++i) s += aw[i * T + j] * dy.at(b, i, c0 + d);
                            dv->at(b, j, c0 + d) += s;
                        }
                }
                if (dq) {
                    for (int64_t i = 0; i < T; ++i)
                        for (int64_t d = 0; d < dh; ++d) {
                            float s = 0.0f;
                            for (int64_t j = 0; j < T; ++j) s += ds[static_cast<size_t>(i * T + j)] * kv2.at(b, j, c0 + d);
                            dq->at(b, i, c0 + d) += s * scale;
                        }
                }
                if (dk) {
                    for (int64_t j = 0; j < T; ++j)
                        for (int64_t d = 0; d < dh; ++d) {
                            float s = 0.0f;
                            for (int64_t i = 0; i < T; ++i) s += ds[static_cast<size_t>(i * T + j)] * qv2.at(b, i, c0 + d);
                            dk->at(b, j, c0 + d) += s * scale;
                        }
                }
            }
        }
    };
    return g.add(std::move(out), {q, k, v}, std::move(back), "attention_core");
}

int multi_head_attention(Graph& g, int x, int Wq, int bq, int Wk, int bk, int Wv, int bv,
                         int Wo, int bo, int heads, std::vector<int> pad) {
    const int q = dense(g, x, Wq, bq, Act::identity);
    const int k = dense(g, x, Wk, bk, Act::identity);
    const int v = dense(g, x, Wv, bv, Act::identity);
    const int core = attention_core(g, q, k, v, heads, std::move(pad));
    return dense(g, core, Wo, bo, Act::identity);
}

int layer_norm(Graph& g, int x, int gamma, int beta, float eps) {
    const Tensor& xv = g.value(x);
    const int64_t C = xv.shape.back();
    const int64_t R = row_count(xv);
    const Tensor& gv = g.value(gamma);
    const Tensor& bv = g.value(beta);
    require(gv.shape == std::vector<int64_t>({C}) && bv.shape == std::vector<int64_t>({C}),
            "layer_norm: gamma/beta must be (", C, ")");
    Tensor out(xv.shape);
    auto mean = std::make_shared<std::vector<float>>(static_cast<size_t>(R));
    auto istd = std::make_shared<std::vector<float>>(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        const float* row = xv.data.data() + r * C;
        double m = 0.0;
        for (int64_t c = 0; c < C; ++c) m += row[c];
        m /= static_cast<double>(C);
        double var = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = row[c] - m;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*mean)[static_cast<size_t>(r)] = static_cast<float>(m);
        (*istd)[static_cast<size_t>(r)] = is;
        float* orow = out.data.data() + r * C;
        for (int64_t c = 0; c < C; ++c)
            orow[c] = (row[c] - static_cast<float>(m)) * is * gv.data[static_cast<size_t>(c)] +
                      bv.data[static_cast<size_t>(c)];
    }
    auto back = [x, gamma, beta, mean, istd, R, C](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& xv2 = gr.value(x);
        const Tensor& gv2 = gr.value(gamma);
        Tensor* dx = gr.grad_slot(x);
        Tensor* dg = gr.grad_slot(gamma);
        Tensor* db = gr.grad_slot(beta);
        for (int64_t r = 0; r < R; ++r) {
            const float* xrow = xv2.data.data() + r * C;
            const float* drow = dy.data.data() + r * C;
            const float m = (*mean)[static_cast<size_t>(r)];
            const float is = (*istd)[static_cast<size_t>(r)];
            double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
            for (int64_t c = 0; c < C; ++c) {
                const float xhat = (xrow[c] - m) * is;
                const float dxhat = drow[c] * gv2.data[static_cast<size_t>(c)];
                sum_dxhat += dxhat;
                sum_dxhat_xhat += static_cast<double>(dxhat) * xhat;
                if (dg) dg->data[static_cast<size_t>(c)] += drow[c] * xhat;
                if (db) db->data[static_cast<size_t>(c)] += drow[c];
            }
            if (dx) {
                const float mean_dxhat = static_cast<float>(sum_dxhat / static_cast<double>(C));
                const float mean_dxx = static_cast<float>(sum_dxhat_xhat / static_cast<double>(C));
                float* dxrow = dx->data.data() + r * C;
                for (int64_t c = 0; c < C; ++c) {
                    const float xhat = (xrow[c] - m) * is;
                    const float dxhat = drow[c] * gv2.data[static_cast<size_t>(c)];
                    dxrow[c] += is * (dxhat - mean_dxhat - xhat * mean_dxx);
                }
            }
        }
    };
    return g.add(std::move(out), {x, gamma, beta}, std::move(back), "layer_norm");
}

int positional_encoding_add(Graph& g, int x, std::vector<int> pad) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 3, "positional_encoding_add: input must be (B,T,D)");
    const int64_t B = xv.shape[0], T = xv.shape[1], D = xv.shape[2];
    require(static_cast<int64_t>(pad.size()) == B, "positional_encoding_add: pad size != batch");
    Tensor out = xv;
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = pad[static_cast<size_t>(b)]; t < T; ++t) {
            const double pos = static_cast<double>(t - pad[static_cast<size_t>(b)]);
            for (int64_t d = 0; d < D; ++d) {
                const double expo = static_cast<double>(2 * (d / 2)) / static_cast<double>(D);
                const double angle = pos / std::pow(10000.0, expo);
                out.at(b, t, d) += static_cast<float>((d % 2 == 0) ? std::sin(angle) : std::cos(angle));
            }
        }
    }
    auto back = [x](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t i = 0, e = dy.size(); i < e; ++i) dx->data[static_cast<size_t>(i)] += dy.data[static_cast<size_t>(i)];
    };
    return g.add(std::move(out), {x}, std::move(back), "positional_encoding_add");
}

int add(Graph& g, int a, int b) {
    const Tensor& av = g.value(a);
    const Tensor& bv = g.value(b);
    require(av.same_shape(bv), "add: shape mismatch ", av.shape_str(), " vs ", bv.shape_str());
    Tensor out(av.shape);
    for (int64_t i = 0, e = out.size(); i < e; ++i)
        out.data[static_cast<size_t>(i)] = av.data[static_cast<size_t>(i)] + bv.data[static_cast<size_t>(i)];
    auto back = [a, b](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        if (Tensor* da = gr.grad_slot(a))
            for (int64_t i = 0, e = dy.size(); i < e; ++i) da->data[static_cast<size_t>(i)] += dy.data[static_cast<size_t>(i)];
        if (Tensor* db = gr.grad_slot(b))
            for (int64_t i = 0, e = dy.size(); i < e; ++i) db->data[static_cast<size_t>(i)] += dy.data[static_cast<size_t>(i)];
    };
    return g.add(std::move(out), {a, b}, std::move(back), "add");
}

int slice_cols(Graph& g, int x, int64_t begin, int64_t len) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 2, "slice_cols: input must be rank 2");
    const int64_t N = xv.shape[0], C = xv.shape[1];
    require(begin >= 0 && len >= 1 && begin + len <= C, "slice_cols: bad range [", begin, ",+",
            len, ") for width ", C);
    Tensor out({N, len});
    for (int64_t n = 0; n < N; ++n)
        std::memcpy(out.data.data() + n * len, xv.data.data() + n * C + begin,
                    sizeof(float) * static_cast<size_t>(len));
    auto back = [x, begin, len, N, C](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < len; ++c) dx->at(n, begin + c) += dy.at(n, c);
    };
    return g.add(std::move(out), {x}, std::move(back), "slice_cols");
}

int slice_rows(Graph& g, int x, int64_t begin, int64_t len) {
    const Tensor& xv = g.value(x);
    require(xv.rank() >= 1, "slice_rows: input must have rank >= 1");
    const int64_t N = xv.shape[0];
    require(begin >= 0 && len >= 1 && begin + len <= N, "slice_rows: bad range [", begin, ",+",
            len, ") for ", N, " rows");
    const int64_t row = xv.size() / N;
    std::vector<int64_t> oshape = xv.shape;
    oshape[0] = len;
    Tensor out(oshape);
    std::memcpy(out.data.data(), xv.data.data() + begin * row,
                sizeof(float) * static_cast<size_t>(len * row));
    auto back = [x, begin, row, len](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t i = 0; i < len * row; ++i)
            dx->data[static_cast<size_t>(begin * row + i)] += dy.data[static_cast<size_t>(i)];
    };
    return g.add(std::move(out), {x}, std::move(back), "slice_rows");
}

int reshape(Graph& g, int x, std::vector<int64_t> shape) {
    const Tensor& xv = g.value(x);
    require(Tensor::numel(shape) == xv.size(), "reshape: element count mismatch");
    Tensor out(shape, xv.data);
    auto back = [x](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t i = 0, e = dy.size(); i < e; ++i) dx->data[static_cast<size_t>(i)] += dy.data[static_cast<size_t>(i)];
    };
    return g.add(std::move(out), {x}, std::move(back), "reshape");
}

int mean_pool_masked(Graph& g, int x, std::vector<int> pad) {
    const Tensor& xv = g.value(x);
    require(xv.rank() == 3, "mean_pool_masked: input must be (B,T,D)");
    const int64_t B = xv.shape[0], T = xv.shape[1], D = xv.shape[2];
    require(static_cast<int64_t>(pad.size()) == B, "mean_pool_masked: pad size != batch");
    Tensor out({B, D});
    for (int64_t b = 0; b < B; ++b) {
        const int64_t n = T - pad[static_cast<size_t>(b)];
        require(n >= 1, "mean_pool_masked: instance ", b, " fully padded");
        for (int64_t t = pad[static_cast<size_t>(b)]; t < T; ++t)
            for (int64_t d = 0; d < D; ++d) out.at(b, d) += xv.at(b, t, d);
        const float inv = 1.0f / static_cast<float>(n);
        for (int64_t d = 0; d < D; ++d) out.at(b, d) *= inv;
    }
    auto back = [x, pad, B, T, D](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const Tensor& dy = gr.grad(self);
        for (int64_t b = 0; b < B; ++b) {
            const float inv = 1.0f / static_cast<float>(T - pad[static_cast<size_t>(b)]);
            for (int64_t t = pad[static_cast<size_t>(b)]; t < T; ++t)
                for (int64_t d = 0; d < D; ++d) dx->at(b, t, d) += dy.at(b, d) * inv;
        }
    };
    return g.add(std::move(out), {x}, std::move(back), "mean_pool_masked");
}

// ---------------------------------------------------------------------------
// losses
// ---------------------------------------------------------------------------

namespace {
constexpr float kLogEps = 1e-7f;
}

int categorical_cross_entropy(Graph& g, int probs, int onehot) {
    const Tensor& pv = g.value(probs);
    const Tensor& yv = g.value(onehot);
    require(pv.rank() == 2 && pv.same_shape(yv), "categorical_cross_entropy: need matching (B,C)");
    const int64_t B = pv.shape[0], C = pv.shape[1];
    double loss = 0.0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const float y = yv.at(b, c);
            if (y != 0.0f) loss -= static_cast<double>(y) * std::log(std::max(pv.at(b, c), kLogEps));
        }
    loss /= static_cast<double>(B);
    auto back = [probs, B, C, onehot](Graph& gr, int self) {
        Tensor* dp = gr.grad_slot(probs);
        if (!dp) return;
        const float dy = gr.grad(self).data[0];
        const Tensor& pv2 = gr.value(probs);
        const Tensor& yv2 = gr.value(onehot);
        const float invB = 1.0f / static_cast<float>(B);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t c = 0; c < C; ++c) {
                const float y = yv2.at(b, c);
                const float p = pv2.at(b, c);
                if (y != 0.0f && p > kLogEps) dp->at(b, c) -= dy * invB * y / p;
            }
    };
    return g.add(Tensor::scalar(static_cast<float>(loss)), {probs, onehot}, std::move(back),
                 "categorical_cross_entropy");
}

int binary_cross_entropy(Graph& g, int sig, int targets) {
    const Tensor& sv = g.value(sig);
    const Tensor& yv = g.value(targets);
    require(sv.same_shape(yv), "binary_cross_entropy: shape mismatch");
    const int64_t N = sv.size();
    double loss = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const double s = std::clamp(sv.data[static_cast<size_t>(i)], kLogEps, 1.0f - kLogEps);
        const double y = yv.data[static_cast<size_t>(i)];
        loss -= y * std::log(s) + (1.0 - y) * std::log(1.0 - s);
    }
    loss /= static_cast<double>(N);
    auto back = [sig, targets, N](Graph& gr, int self) {
        Tensor* ds = gr.grad_slot(sig);
        if (!ds) return;
        const float dy = gr.grad(self).data[0];
        const Tensor& sv2 = gr.value(sig);
        const Tensor& yv2 = gr.value(targets);
        const float invN = 1.0f / static_cast<float>(N);
        for (int64_t i = 0; i < N; ++i) {
            const float s = sv2.data[static_cast<size_t>(i)];
            if (s <= kLogEps || s >= 1.0f - kLogEps) continue;  // clamped region
            const float y = yv2.data[static_cast<size_t>(i)];
            ds->data[static_cast<size_t>(i)] += dy * invN * (-y / s + (1.0f - y) / (1.0f - s));
        }
    };
    return g.add(Tensor::scalar(static_cast<float>(loss)), {sig, targets}, std::move(back),
                 "binary_cross_entropy");
}

int dot_const(Graph& g, int x, Tensor weights) {
    const Tensor& xv = g.value(x);
    require(xv.size() == weights.size(), "dot_const: size mismatch");
    double acc = 0.0;
    for (int64_t i = 0, e = xv.size(); i < e; ++i)
        acc += static_cast<double>(xv.data[static_cast<size_t>(i)]) * weights.data[static_cast<size_t>(i)];
    auto w = std::make_shared<Tensor>(std::move(weights));
    auto back = [x, w](Graph& gr, int self) {
        Tensor* dx = gr.grad_slot(x);
        if (!dx) return;
        const float dy = gr.grad(self).data[0];
        for (int64_t i = 0, e = dx->size(); i < e; ++i)
            dx->data[static_cast<size_t>(i)] += dy * w->data[static_cast<size_t>(i)];
    };
    return g.add(Tensor::scalar(static_cast<float>(acc)), {x}, std::move(back), "dot_const");
}

}  // namespace iocseq::nd
