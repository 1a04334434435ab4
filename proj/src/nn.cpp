#include "splat/nn.hpp"

#include <cmath>

namespace splat::nn {

void mlp_init(ParamStore& ps, const std::string& prefix, const MlpSpec& spec, Rng& rng) {
    if (spec.dims.size() < 2) throw ValidationError("mlp needs at least input and output dims");
    for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
        std::size_t in = spec.dims[l], out = spec.dims[l + 1];
        bool last = l + 2 == spec.dims.size();
        double stddev = (last && spec.zero_init_last) ? 0.0 : 1.0 / std::sqrt(double(in));
        ps.set(prefix + ".w" + std::to_string(l), randn({in, out}, rng, stddev));
        ps.set(prefix + ".b" + std::to_string(l), Tensor::zeros({out}));
    }
}

ad::Expr mlp_apply(const std::string& prefix, ad::Expr x, const MlpSpec& spec) {
    for (std::size_t l = 0; l + 1 < spec.dims.size(); ++l) {
        x = ad::add(ad::matmul(x, ad::leaf(prefix + ".w" + std::to_string(l))),
                    ad::leaf(prefix + ".b" + std::to_string(l)));
        if (l + 2 < spec.dims.size()) x = ad::leaky_relu(x, spec.leaky_slope);
    }
    return x;
}

void conv_init(ParamStore& ps, const std::string& name, std::size_t out_ch, std::size_t in_ch,
               std::size_t k, Rng& rng, bool zero) {
    double stddev = zero ? 0.0 : 1.0 / std::sqrt(double(in_ch * k * k));
    ps.set(name + ".k", randn({out_ch, in_ch, k, k}, rng, stddev));
    ps.set(name + ".b", Tensor::zeros({out_ch}));
}

ad::Expr conv_apply(const std::string& name, ad::Expr x, std::size_t stride, std::size_t pad) {
    return ad::add(ad::conv2d(x, ad::leaf(name + ".k"), stride, pad), ad::leaf(name + ".b"));
}

}  // namespace splat::nn
