#include "splat/adam.hpp"

#include <cmath>

namespace splat {

void adam_step(Tensor& params, const Tensor& grads, AdamState& state, const AdamHyper& hyper) {
    if (!params.same_shape(grads))
        throw ValidationError("adam_step shape mismatch: " + shape_str(params.shape) + " vs " +
                              shape_str(grads.shape));
    if (state.m.numel() == 0) {
        state.m = Tensor::zeros(params.shape);
        state.v = Tensor::zeros(params.shape);
    }
    state.t += 1;
    double bc1 = 1.0 - std::pow(hyper.beta1, double(state.t));
    double bc2 = 1.0 - std::pow(hyper.beta2, double(state.t));
    for (std::size_t i = 0; i < params.numel(); ++i) {
        double g = grads.data[i];
        state.m.data[i] = hyper.beta1 * state.m.data[i] + (1.0 - hyper.beta1) * g;
        state.v.data[i] = hyper.beta2 * state.v.data[i] + (1.0 - hyper.beta2) * g * g;
        double mhat = state.m.data[i] / bc1;
        double vhat = state.v.data[i] / bc2;
        params.data[i] -= hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps);
    }
}

void AdamOptimizer::step(nn::ParamStore& ps, const std::map<std::string, Tensor>& grads) {
    for (auto& [name, g] : grads) adam_step(ps.at(name), g, states_[name], hyper_);
}

}  // namespace splat
