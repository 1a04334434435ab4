#pragma once

#include <map>
#include <string>
#include <vector>

#include "splat/autodiff.hpp"
#include "splat/tensor.hpp"

namespace splat::nn {

/// Named parameter tensors. Values live here; graphs reference them as leaves,
/// so one ParamStore doubles as the binding set for evaluation.
struct ParamStore {
    std::map<std::string, Tensor> values;

    Tensor& at(const std::string& name) { return values.at(name); }
    const Tensor& at(const std::string& name) const { return values.at(name); }
    bool has(const std::string& name) const { return values.count(name) != 0; }
    void set(const std::string& name, Tensor t) { values[name] = std::move(t); }

    ad::Bindings bindings() const { return values; }
    std::set<std::string> names() const {
        std::set<std::string> out;
        for (auto& [k, v] : values) out.insert(k);
        return out;
    }
    /// Merge other bindings (e.g. per-frame inputs) on top of the parameters.
    ad::Bindings bindings_with(const ad::Bindings& extra) const {
        ad::Bindings b = values;
        for (auto& [k, v] : extra) b[k] = v;
        return b;
    }
};

struct MlpSpec {
    std::vector<std::size_t> dims;  // in, hidden..., out
    double leaky_slope = 0.01;
    bool zero_init_last = false;
};

void mlp_init(ParamStore& ps, const std::string& prefix, const MlpSpec& spec, Rng& rng);
ad::Expr mlp_apply(const std::string& prefix, ad::Expr x, const MlpSpec& spec);

/// One conv layer: kernel [out,in,k,k] + channel bias.
void conv_init(ParamStore& ps, const std::string& name, std::size_t out_ch, std::size_t in_ch,
               std::size_t k, Rng& rng, bool zero = false);
ad::Expr conv_apply(const std::string& name, ad::Expr x, std::size_t stride, std::size_t pad);

}  // namespace splat::nn
