// Float64 reference implementations of the operator set, used only as the
// finite-difference oracle. Plain loops, no tape, no shared code with the
// float32 kernels under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "iocseq/common.hpp"
#include "iocseq/graph.hpp"

namespace refops {

struct RT {
    std::vector<int64_t> shape;
    std::vector<double> data;

    RT() = default;
    explicit RT(std::vector<int64_t> s) : shape(std::move(s)) {
        int64_t n = 1;
        for (int64_t e : shape) n *= e;
        data.assign(static_cast<size_t>(n), 0.0);
    }
    int64_t size() const { return static_cast<int64_t>(data.size()); }
    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double& at(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    double at(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
};

inline RT from_tensor(const iocseq::nd::Tensor& t) {
    RT r(t.shape);
    for (int64_t i = 0; i < t.size(); ++i) r.data[static_cast<size_t>(i)] = t.data[static_cast<size_t>(i)];
    return r;
}

inline void apply_act(RT& t, iocseq::nd::Act act) {
    using iocseq::nd::Act;
    const int64_t cols = t.shape.back();
    const int64_t rows = t.size() / cols;
    switch (act) {
        case Act::identity: break;
        case Act::relu:
            for (auto& v : t.data) v = v > 0 ? v : 0.0;
            break;
        case Act::sigmoid:
            for (auto& v : t.data) v = 1.0 / (1.0 + std::exp(-v));
            break;
        case Act::tanh:
            for (auto& v : t.data) v = std::tanh(v);
            break;
        case Act::softmax:
            for (int64_t r = 0; r < rows; ++r) {
                double mx = t.data[static_cast<size_t>(r * cols)];
                for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, t.data[static_cast<size_t>(r * cols + c)]);
                double sum = 0;
                for (int64_t c = 0; c < cols; ++c) {
                    double& v = t.data[static_cast<size_t>(r * cols + c)];
                    v = std::exp(v - mx);
                    sum += v;
                }
                for (int64_t c = 0; c < cols; ++c) t.data[static_cast<size_t>(r * cols + c)] /= sum;
            }
            break;
    }
}

inline RT dense(const RT& x, const RT& W, const RT* b, iocseq::nd::Act act) {
    const int64_t I = W.shape[0], O = W.shape[1];
    const int64_t R = x.size() / I;
    std::vector<int64_t> oshape = x.shape;
    oshape.back() = O;
    RT y(oshape);
    for (int64_t r = 0; r < R; ++r)
        for (int64_t o = 0; o < O; ++o) {
            double acc = b ? b->data[static_cast<size_t>(o)] : 0.0;
            for (int64_t i = 0; i < I; ++i)
                acc += x.data[static_cast<size_t>(r * I + i)] * W.data[static_cast<size_t>(i * O + o)];
            y.data[static_cast<size_t>(r * O + o)] = acc;
        }
    apply_act(y, act);
    return y;
}

inline RT embedding_lookup(const RT& table, const std::vector<int64_t>& ids) {
    const int64_t E = table.shape[1];
    RT out({static_cast<int64_t>(ids.size()), E});
    for (size_t n = 0; n < ids.size(); ++n)
        for (int64_t e = 0; e < E; ++e) out.at(static_cast<int64_t>(n), e) = table.at(ids[n], e);
    return out;
}

inline RT set_mean(const RT& x, const std::vector<iocseq::nd::Segment>& segs) {
    const int64_t E = x.shape[1];
    RT out({static_cast<int64_t>(segs.size()), E});
    for (size_t m = 0; m < segs.size(); ++m) {
        for (int64_t r = 0; r < segs[m].len; ++r)
            for (int64_t e = 0; e < E; ++e) out.at(static_cast<int64_t>(m), e) += x.at(segs[m].begin + r, e);
        for (int64_t e = 0; e < E; ++e) out.at(static_cast<int64_t>(m), e) /= static_cast<double>(segs[m].len);
    }
    return out;
}

inline RT concat_cols(const RT& a, const RT& b) {
    const int64_t N = a.shape[0], A = a.shape[1], B = b.shape[1];
    RT out({N, A + B});
    for (int64_t n = 0; n < N; ++n) {
        for (int64_t c = 0; c < A; ++c) out.at(n, c) = a.at(n, c);
        for (int64_t c = 0; c < B; ++c) out.at(n, A + c) = b.at(n, c);
    }
    return out;
}

inline RT dropout(const RT& x, float p, uint64_t seed, bool training) {
    if (!training || p == 0.0f) return x;
    RT out = x;
    iocseq::SplitMix64 rng(seed);
    const double scale = 1.0 / (1.0 - static_cast<double>(p));
    for (auto& v : out.data) {
        const bool keep = rng.uniform() >= static_cast<double>(p);
        v = keep ? v * scale : 0.0;
    }
    return out;
}

inline RT conv1d(const RT& x, const RT& w, const RT* bias) {
    const int64_t B = x.shape[0], T = x.shape[1], C = x.shape[2];
    const int64_t k = w.shape[0], F = w.shape[2];
    const int64_t To = T - k + 1;
    RT y({B, To, F});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < To; ++t)
            for (int64_t f = 0; f < F; ++f) {
                double acc = bias ? bias->data[static_cast<size_t>(f)] : 0.0;
                for (int64_t q = 0; q < k; ++q)
                    for (int64_t c = 0; c < C; ++c) acc += x.at(b, t + q, c) * w.at(q, c, f);
                y.at(b, t, f) = acc;
            }
    return y;
}

inline RT maxpool1d(const RT& x, int64_t pool) {
    const int64_t B = x.shape[0], T = x.shape[1], C = x.shape[2];
    const int64_t To = T / pool;
    RT y({B, To, C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < To; ++t)
            for (int64_t c = 0; c < C; ++c) {
                double best = x.at(b, t * pool, c);
                for (int64_t q = 1; q < pool; ++q) best = std::max(best, x.at(b, t * pool + q, c));
                y.at(b, t, c) = best;
            }
    return y;
}

inline RT global_average_pool(const RT& x) {
    const int64_t B = x.shape[0], T = x.shape[1], C = x.shape[2];
    RT y({B, C});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t)
            for (int64_t c = 0; c < C; ++c) y.at(b, c) += x.at(b, t, c) / static_cast<double>(T);
    return y;
}

// gates packed [i f g o]; output [h' | c']
inline RT lstm_cell(const RT& x, const RT& h, const RT& c, const RT& Wx, const RT& Wh,
                    const RT& b) {
    const int64_t B = x.shape[0], I = x.shape[1], H = h.shape[1];
    RT out({B, 2 * H});
    for (int64_t r = 0; r < B; ++r) {
        for (int64_t u = 0; u < H; ++u) {
            double z[4];
            for (int g = 0; g < 4; ++g) {
                double acc = b.data[static_cast<size_t>(g * H + u)];
                for (int64_t i = 0; i < I; ++i) acc += x.at(r, i) * Wx.at(i, g * H + u);
                for (int64_t j = 0; j < H; ++j) acc += h.at(r, j) * Wh.at(j, g * H + u);
                z[g] = acc;
            }
            const double ig = 1.0 / (1.0 + std::exp(-z[0]));
            const double fg = 1.0 / (1.0 + std::exp(-z[1]));
            const double gg = std::tanh(z[2]);
            const double og = 1.0 / (1.0 + std::exp(-z[3]));
            const double cn = fg * c.at(r, u) + ig * gg;
            out.at(r, u) = og * std::tanh(cn);
            out.at(r, H + u) = cn;
        }
    }
    return out;
}

inline RT bidirectional_lstm(const RT& x, const std::vector<int>& pad, const RT& Wxf,
                             const RT& Whf, const RT& bf, const RT& Wxb, const RT& Whb,
                             const RT& bb) {
    const int64_t B = x.shape[0], T = x.shape[1], I = x.shape[2];
    const int64_t H = Wxf.shape[1] / 4;
    RT out({B, T, 2 * H});
    for (int64_t b = 0; b < B; ++b) {
        const int64_t start = pad[static_cast<size_t>(b)];
        RT xr({1, I}), hh({1, H}), cc({1, H});
        for (int64_t t = start; t < T; ++t) {
            for (int64_t i = 0; i < I; ++i) xr.at(0, i) = x.at(b, t, i);
            RT step = lstm_cell(xr, hh, cc, Wxf, Whf, bf);
            for (int64_t u = 0; u < H; ++u) {
                hh.at(0, u) = step.at(0, u);
                cc.at(0, u) = step.at(0, H + u);
                out.at(b, t, u) = step.at(0, u);
            }
        }
        RT hb({1, H}), cb({1, H});
        for (int64_t t = T - 1; t >= start; --t) {
            for (int64_t i = 0; i < I; ++i) xr.at(0, i) = x.at(b, t, i);
            RT step = lstm_cell(xr, hb, cb, Wxb, Whb, bb);
            for (int64_t u = 0; u < H; ++u) {
                hb.at(0, u) = step.at(0, u);
                cb.at(0, u) = step.at(0, H + u);
                out.at(b, t, H + u) = step.at(0, u);
            }
        }
    }
    return out;
}

inline RT take_final_states(const RT& seq, const std::vector<int>& pad) {
    const int64_t B = seq.shape[0], T = seq.shape[1], H = seq.shape[2] / 2;
    RT out({B, 2 * H});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t u = 0; u < H; ++u) {
            out.at(b, u) = seq.at(b, T - 1, u);
            out.at(b, H + u) = seq.at(b, pad[static_cast<size_t>(b)], H + u);
        }
    return out;
}

inline RT attention_core(const RT& q, const RT& k, const RT& v, int heads,
                         const std::vector<int>& pad) {
    const int64_t B = q.shape[0], T = q.shape[1], D = q.shape[2];
    const int64_t dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    RT out({B, T, D});
    for (int64_t b = 0; b < B; ++b) {
        for (int h = 0; h < heads; ++h) {
            const int64_t c0 = h * dh;
            for (int64_t i = 0; i < T; ++i) {
                std::vector<double> row(static_cast<size_t>(T));
                for (int64_t j = 0; j < T; ++j) {
                    if (j < pad[static_cast<size_t>(b)]) {
                        row[static_cast<size_t>(j)] = -1e9;
                        continue;
                    }
                    double s = 0;
                    for (int64_t d = 0; d < dh; ++d) s += q.at(b, i, c0 + d) * k.at(b, j, c0 + d);
                    row[static_cast<size_t>(j)] = s * scale;
                }
                double mx = row[0];
                for (double s : row) mx = std::max(mx, s);
                double sum = 0;
                for (auto& s : row) {
                    s = std::exp(s - mx);
                    sum += s;
                }
                for (auto& s : row) s /= sum;
                for (int64_t d = 0; d < dh; ++d) {
                    double acc = 0;
                    for (int64_t j = 0; j < T; ++j) acc += row[static_cast<size_t>(j)] * v.at(b, j, c0 + d);
                    out.at(b, i, c0 + d) = acc;
                }
            }
        }
    }
    return out;
}

inline RT layer_norm(const RT& x, const RT& gamma, const RT& beta, double eps = 1e-5) {
    const int64_t C = x.shape.back();
    const int64_t R = x.size() / C;
    RT out(x.shape);
    for (int64_t r = 0; r < R; ++r) {
        double mean = 0;
        for (int64_t c = 0; c < C; ++c) mean += x.data[static_cast<size_t>(r * C + c)];
        mean /= static_cast<double>(C);
        double var = 0;
        for (int64_t c = 0; c < C; ++c) {
            const double d = x.data[static_cast<size_t>(r * C + c)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(C);
        const double istd = 1.0 / std::sqrt(var + eps);
        for (int64_t c = 0; c < C; ++c)
            out.data[static_cast<size_t>(r * C + c)] =
                (x.data[static_cast<size_t>(r * C + c)] - mean) * istd * gamma.data[static_cast<size_t>(c)] +
                beta.data[static_cast<size_t>(c)];
    }
    return out;
}

inline RT positional_encoding_add(const RT& x, const std::vector<int>& pad) {
    const int64_t B = x.shape[0], T = x.shape[1], D = x.shape[2];
    RT out = x;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = pad[static_cast<size_t>(b)]; t < T; ++t) {
            const double pos = static_cast<double>(t - pad[static_cast<size_t>(b)]);
            for (int64_t d = 0; d < D; ++d) {
                const double expo = static_cast<double>(2 * (d / 2)) / static_cast<double>(D);
                const double angle = pos / std::pow(10000.0, expo);
                out.at(b, t, d) += (d % 2 == 0) ? std::sin(angle) : std::cos(angle);
            }
        }
    return out;
}

inline RT add(const RT& a, const RT& b) {
    RT out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.data[static_cast<size_t>(i)] += b.data[static_cast<size_t>(i)];
    return out;
}

inline RT mean_pool_masked(const RT& x, const std::vector<int>& pad) {
    const int64_t B = x.shape[0], T = x.shape[1], D = x.shape[2];
    RT out({B, D});
    for (int64_t b = 0; b < B; ++b) {
        const int64_t n = T - pad[static_cast<size_t>(b)];
        for (int64_t t = pad[static_cast<size_t>(b)]; t < T; ++t)
            for (int64_t d = 0; d < D; ++d) out.at(b, d) += x.at(b, t, d) / static_cast<double>(n);
    }
    return out;
}

inline RT reshape(const RT& x, std::vector<int64_t> shape) {
    RT out = x;
    out.shape = std::move(shape);
    return out;
}

inline RT slice_rows(const RT& x, int64_t begin, int64_t len) {
    const int64_t row = x.size() / x.shape[0];
    std::vector<int64_t> oshape = x.shape;
    oshape[0] = len;
    RT out(oshape);
    for (int64_t i = 0; i < len * row; ++i)
        out.data[static_cast<size_t>(i)] = x.data[static_cast<size_t>(begin * row + i)];
    return out;
}

inline double categorical_cross_entropy(const RT& probs, const RT& onehot) {
    const int64_t B = probs.shape[0], C = probs.shape[1];
    double loss = 0;
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c) {
            const double y = onehot.at(b, c);
            if (y != 0) loss -= y * std::log(std::max(probs.at(b, c), 1e-7));
        }
    return loss / static_cast<double>(B);
}

inline double binary_cross_entropy(const RT& sig, const RT& y) {
    double loss = 0;
    for (int64_t i = 0; i < sig.size(); ++i) {
        const double s = std::clamp(sig.data[static_cast<size_t>(i)], 1e-7, 1.0 - 1e-7);
        const double t = y.data[static_cast<size_t>(i)];
        loss -= t * std::log(s) + (1.0 - t) * std::log(1.0 - s);
    }
    return loss / static_cast<double>(sig.size());
}

}  // namespace refops
