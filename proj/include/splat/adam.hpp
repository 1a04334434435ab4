#pragma once

#include <map>
#include <string>

#include "splat/nn.hpp"
#include "splat/tensor.hpp"

namespace splat {

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Tensor m, v;  // first/second moment estimates, lazily sized
    long t = 0;
};

/// Bias-corrected Adam update, in place.
void adam_step(Tensor& params, const Tensor& grads, AdamState& state, const AdamHyper& hyper);

/// Optimizer over a ParamStore, one state slot per parameter name.
class AdamOptimizer {
  public:
    explicit AdamOptimizer(AdamHyper hyper) : hyper_(hyper) {}
    void step(nn::ParamStore& ps, const std::map<std::string, Tensor>& grads);
    void set_lr(double lr) { hyper_.lr = lr; }
    const AdamHyper& hyper() const { return hyper_; }

  private:
    AdamHyper hyper_;
    std::map<std::string, AdamState> states_;
};

}  // namespace splat
