// Attentive feature converter: a residual block whose branch is reweighted by
// stacked pixel-wise and channel-wise attention,
//
//   F' = F + Conv(F)
//   PA = sigmoid(Conv3x3(F'))          in R^{H x W x 1}
//   CA = sigmoid(Conv1x1(avgpool(F'))) in R^{1 x 1 x C}
//   out = F + F' * PA * CA
//
// The same block serves feature fusion in the teacher and feature adaptation
// in the student.

#pragma once

#include "cfd/nn.hpp"
#include "cfd/tensor.hpp"

namespace cfd {

template <typename T>
struct ConverterParams {
    Conv2dParams<T> pre;  // 3x3, C -> C
    Conv2dParams<T> pa;   // 3x3, C -> 1
    Conv2dParams<T> ca;   // 1x1, C -> C (applied to the pooled feature)

    static ConverterParams init(std::mt19937_64& rng, int channels) {
        ConverterParams p;
        p.pre = Conv2dParams<T>::he_init(rng, 3, channels, channels);
        p.pa = Conv2dParams<T>::he_init(rng, 3, channels, 1);
        p.ca = Conv2dParams<T>::he_init(rng, 1, channels, channels);
        return p;
    }

    static ConverterParams zeros(int channels) {
        ConverterParams p;
        p.pre = Conv2dParams<T>::zero_init(3, channels, channels);
        p.pa = Conv2dParams<T>::zero_init(3, channels, 1);
        p.ca = Conv2dParams<T>::zero_init(1, channels, channels);
        return p;
    }

    void named_params(NamedParams<T>& out, const std::string& prefix) {
        append_conv_params(out, prefix + ".pre", pre);
        append_conv_params(out, prefix + ".pa", pa);
        append_conv_params(out, prefix + ".ca", ca);
    }
};

// The attention inputs take the intermediate residual branch F + Conv(F).
template <typename T>
Tensor<T> converter_branch(const Tensor<T>& f, const ConverterParams<T>& p) {
    return add(f, p.pre.apply(f));
}

template <typename T>
Tensor<T> pixel_attention(const Tensor<T>& f_prime, const ConverterParams<T>& p) {
    return sigmoid(p.pa.apply(f_prime));
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& f_prime, const ConverterParams<T>& p) {
    return sigmoid(p.ca.apply(global_avg_pool(f_prime)));
}

template <typename T>
Tensor<T> convert(const Tensor<T>& f, const ConverterParams<T>& p) {
    const Tensor<T> branch = converter_branch(f, p);
    const Tensor<T> pa = pixel_attention(branch, p);
    const Tensor<T> ca = channel_attention(branch, p);
    return add(f, mul(mul(branch, pa), ca));
}

}  // namespace cfd
