#pragma once

#include "advmem/core.hpp"
#include "advmem/models.hpp"

#include <vector>

namespace advmem {

/// SGD with momentum; buffers mirror the parameter groups.
struct OptimizerState {
    double momentum = 0.9;
    double weight_decay = 5e-4;
    std::vector<Vector> buffers;

    static OptimizerState for_params(const ModelParameters& params, double momentum, double weight_decay)
    {
        OptimizerState s;
        s.momentum = momentum;
        s.weight_decay = weight_decay;
        for (const auto& g : params.groups) {
            s.buffers.push_back(Vector::Zero(g.values.size()));
        }
        return s;
    }
};

/// Weight decay applies to conv/dense weights only.
[[nodiscard]] inline bool decays(ParamRole r) { return is_weight(r); }

/// buffer <- momentum * buffer + (grad + wd * param); param <- param - lr * buffer.
inline void sgd_step(ModelParameters& params, OptimizerState& state, const Vector& grads, double lr)
{
    require(static_cast<std::size_t>(grads.size()) == params.parameter_count(), "sgd_step: gradient length mismatch");
    require(state.buffers.size() == params.groups.size(), "sgd_step: optimizer state does not match parameters");
    std::size_t at = 0;
    for (std::size_t i = 0; i < params.groups.size(); ++i) {
        auto& g = params.groups[i];
        auto& buf = state.buffers[i];
        require(buf.size() == g.values.size(), "sgd_step: buffer shape mismatch for " + g.name);
        const auto seg = grads.segment(static_cast<Eigen::Index>(at), g.values.size());
        if (decays(g.role) && state.weight_decay != 0.0) {
            buf = state.momentum * buf + seg + state.weight_decay * g.values;
        } else {
            buf = state.momentum * buf + seg;
        }
        g.values -= lr * buf;
        at += g.size();
    }
}

}  // namespace advmem
