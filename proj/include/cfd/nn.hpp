// Small building blocks shared by the network modules: a conv layer parameter
// pair, He-style initialization and named parameter listings for checkpoints
// and optimizers.

#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include "cfd/tensor.hpp"

namespace cfd {

template <typename T>
struct Conv2dParams {
    Tensor<T> w;  // [k,k,Cin,Cout]
    Tensor<T> b;  // [Cout]

    static Conv2dParams he_init(std::mt19937_64& rng, int k, int cin, int cout) {
        const T stddev = std::sqrt(T(2) / static_cast<T>(k * k * cin));
        Conv2dParams p;
        p.w = rand_normal<T>(rng, {k, k, cin, cout}, T(0), stddev, true);
        p.b = Tensor<T>::zeros({cout}, true);
        return p;
    }

    static Conv2dParams zero_init(int k, int cin, int cout) {
        Conv2dParams p;
        p.w = Tensor<T>::zeros({k, k, cin, cout}, true);
        p.b = Tensor<T>::zeros({cout}, true);
        return p;
    }

    Tensor<T> apply(const Tensor<T>& x, int stride = 1, int padding = -1) const {
        const int pad = padding >= 0 ? padding : static_cast<int>(w.dim(0)) / 2;
        return conv2d(x, w, b, stride, pad);
    }
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>*>>;

template <typename T>
void append_conv_params(NamedParams<T>& out, const std::string& prefix, Conv2dParams<T>& c) {
    out.emplace_back(prefix + ".w", &c.w);
    out.emplace_back(prefix + ".b", &c.b);
}

}  // namespace cfd
