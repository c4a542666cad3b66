#pragma once

#include <map>
#include <string>

#include "iocseq/graph.hpp"
#include "iocseq/tensor.hpp"

namespace iocseq::nd {

// Named parameter set. std::map keeps iteration order deterministic, which
// the byte-identical checkpoint contract relies on.
using ParamMap = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

// Registers every parameter as a needs-grad leaf of g.
struct BoundParams {
    std::map<std::string, int> ids;
    int id(const std::string& name) const;
};
BoundParams bind_params(Graph& g, const ParamMap& params);
GradMap collect_grads(const Graph& g, const BoundParams& bound);

// Uniform on [-a, a] with a = sqrt(6 / (fan_in + fan_out)).
Tensor glorot_init(const std::vector<int64_t>& shape, uint64_t seed);

struct AdamConfig {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
};

class Adam {
public:
    explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

    // Bias-corrected moment update. Throws on non-finite gradients so a
    // diverging run aborts instead of silently training on NaNs.
    void step(ParamMap& params, const GradMap& grads);

    int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }

private:
    AdamConfig cfg_;
    int64_t step_count_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace iocseq::nd
