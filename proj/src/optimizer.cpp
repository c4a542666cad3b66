#include "iocseq/optimizer.hpp"

#include <cmath>

#include "iocseq/common.hpp"

namespace iocseq::nd {

int BoundParams::id(const std::string& name) const {
    auto it = ids.find(name);
    require(it != ids.end(), "unknown parameter '", name, "'");
    return it->second;
}

BoundParams bind_params(Graph& g, const ParamMap& params) {
    BoundParams out;
    for (const auto& [name, tensor] : params) out.ids[name] = g.leaf(tensor, true);
    return out;
}

GradMap collect_grads(const Graph& g, const BoundParams& bound) {
    GradMap grads;
    for (const auto& [name, id] : bound.ids) {
        if (g.has_grad(id)) grads[name] = g.grad(id);
    }
    return grads;
}

Tensor glorot_init(const std::vector<int64_t>& shape, uint64_t seed) {
    require(!shape.empty(), "glorot_init: rank must be >= 1");
    int64_t fan_in = 0, fan_out = 0;
    if (shape.size() == 1) {
        fan_in = fan_out = shape[0];
    } else if (shape.size() == 2) {
        fan_in = shape[0];
        fan_out = shape[1];
    } else {
        // conv-style (k, C, F): receptive field times channel counts
        int64_t receptive = 1;
        for (size_t i = 0; i + 2 < shape.size(); ++i) receptive *= shape[i];
        fan_in = shape[shape.size() - 2] * receptive;
        fan_out = shape[shape.size() - 1] * receptive;
    }
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(shape);
    SplitMix64 rng(seed);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-a, a));
    return t;
}

void Adam::step(ParamMap& params, const GradMap& grads) {
    ++step_count_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double corr1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double corr2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (auto& [name, p] : params) {
        auto git = grads.find(name);
        if (git == grads.end()) continue;  // parameter not touched by this loss
        const Tensor& gt = git->second;
        require(gt.same_shape(p), "adam: gradient shape mismatch for '", name, "'");
        auto& m = m_[name];
        auto& v = v_[name];
        if (m.size() == 0) m = Tensor::zeros(p.shape);
        if (v.size() == 0) v = Tensor::zeros(p.shape);
        for (int64_t i = 0, e = p.size(); i < e; ++i) {
            const float gval = gt.data[static_cast<size_t>(i)];
            require(std::isfinite(gval), "adam: non-finite gradient in '", name, "' at ", i);
            float& mi = m.data[static_cast<size_t>(i)];
            float& vi = v.data[static_cast<size_t>(i)];
            mi = static_cast<float>(b1 * mi + (1.0 - b1) * gval);
            vi = static_cast<float>(b2 * vi + (1.0 - b2) * static_cast<double>(gval) * gval);
            const double mhat = mi / corr1;
            const double vhat = vi / corr2;
            p.data[static_cast<size_t>(i)] -=
                static_cast<float>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

}  // namespace iocseq::nd
