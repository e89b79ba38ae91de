// Recurrent stereo matcher: weight-sharing convolutional feature extractor at
// 1/4 resolution, all-pairs epipolar correlation along the scanline, and a
// conv-GRU that iteratively refines disparity from local correlation samples.
// Converted or fused features can be injected in place of the raw extractor
// output, which is how the teacher/student pipelines reuse the same matcher.

#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "cfd/image.hpp"
#include "cfd/nn.hpp"
#include "cfd/tensor.hpp"

namespace cfd {

struct MatcherHyper {
    int image_channels = 3;
    int channels = 32;    // feature width C
    int downsample = 4;   // fixed by the extractor stride pattern
    int iters = 6;        // refinement iterations N
    int max_disp = 6;     // correlation range D at feature scale
    int radius = 3;       // lookup window radius r
    int hidden = 32;      // GRU state width
    int head_mid = 16;    // update head intermediate width

    int gru_input_channels() const { return channels + (2 * radius + 1) + 1; }
};

template <typename T>
struct ExtractorParams {
    // strides 2,2,1,1 -> downsample factor 4
    Conv2dParams<T> c0, c1, c2, c3;

    static ExtractorParams init(std::mt19937_64& rng, const MatcherHyper& h) {
        ExtractorParams p;
        const int mid = h.channels / 2;
        p.c0 = Conv2dParams<T>::he_init(rng, 3, h.image_channels, mid);
        p.c1 = Conv2dParams<T>::he_init(rng, 3, mid, h.channels);
        p.c2 = Conv2dParams<T>::he_init(rng, 3, h.channels, h.channels);
        p.c3 = Conv2dParams<T>::he_init(rng, 3, h.channels, h.channels);
        return p;
    }

    void named_params(NamedParams<T>& out, const std::string& prefix) {
        append_conv_params(out, prefix + ".c0", c0);
        append_conv_params(out, prefix + ".c1", c1);
        append_conv_params(out, prefix + ".c2", c2);
        append_conv_params(out, prefix + ".c3", c3);
    }
};

template <typename T>
struct GruParams {
    Conv2dParams<T> wz, wr, wh;      // 3x3 gate convs over concat(hidden, input)
    Conv2dParams<T> head1, head2;    // update head; final layer starts at zero

    static GruParams init(std::mt19937_64& rng, const MatcherHyper& h) {
        GruParams p;
        const int cin = h.hidden + h.gru_input_channels();
        p.wz = Conv2dParams<T>::he_init(rng, 3, cin, h.hidden);
        p.wr = Conv2dParams<T>::he_init(rng, 3, cin, h.hidden);
        p.wh = Conv2dParams<T>::he_init(rng, 3, cin, h.hidden);
        p.head1 = Conv2dParams<T>::he_init(rng, 3, h.hidden, h.head_mid);
        p.head2 = Conv2dParams<T>::zero_init(3, h.head_mid, 1);
        return p;
    }

    void named_params(NamedParams<T>& out, const std::string& prefix) {
        append_conv_params(out, prefix + ".wz", wz);
        append_conv_params(out, prefix + ".wr", wr);
        append_conv_params(out, prefix + ".wh", wh);
        append_conv_params(out, prefix + ".head1", head1);
        append_conv_params(out, prefix + ".head2", head2);
    }
};

template <typename T>
struct StereoNet {
    ExtractorParams<T> extractor;
    GruParams<T> gru;
    MatcherHyper hyper;
};

// Ordered refinement outputs d1..dN at full resolution plus the final GRU
// state.
template <typename T>
struct DisparitySequence {
    std::vector<Tensor<T>> preds;
    Tensor<T> hidden;

    const Tensor<T>& final_pred() const { return preds.back(); }
};

template <typename T>
Tensor<T> extract_features(const Tensor<T>& image, const ExtractorParams<T>& p) {
    if (image.rank() != 3) throw std::invalid_argument("extract_features: expected [H,W,C]");
    const int64_t h = image.dim(0), w = image.dim(1);
    if (h % 4 != 0 || w % 4 != 0)
        throw std::invalid_argument(
            "extract_features: image dims " + shape_str(image.shape()) +
            " not divisible by the downsample factor 4; pad the input to a multiple of 4");
    Tensor<T> x = relu(p.c0.apply(image, 2));
    x = relu(p.c1.apply(x, 2));
    x = relu(p.c2.apply(x, 1));
    return p.c3.apply(x, 1);  // final layer linear so features can be signed
}

template <typename T>
Tensor<T> extract_features(const Image<float>& image, const ExtractorParams<T>& p) {
    return extract_features(tensor_from_image<T>(image), p);
}

// All-pairs scanline correlation: out[y,x,d] = <L(y,x), R(y,x-d)> / sqrt(C)
// for d in [0, max_disp], zero where x-d falls outside the image.
template <typename T>
Tensor<T> build_correlation(const Tensor<T>& left, const Tensor<T>& right, int max_disp) {
    if (left.rank() != 3 || right.rank() != 3 || left.shape() != right.shape())
        throw std::invalid_argument("build_correlation: feature shapes differ: " +
                                    shape_str(left.shape()) + " vs " + shape_str(right.shape()));
    const int64_t h = left.dim(0), w = left.dim(1), c = left.dim(2);
    if (max_disp < 0 || max_disp >= w)
        throw std::invalid_argument("build_correlation: max_disp must be in [0, W)");
    const int64_t dd = max_disp + 1;
    const T inv_sqrt_c = T(1) / std::sqrt(static_cast<T>(c));
    const T* lv = left.data().data();
    const T* rv = right.data().data();
    std::vector<T> out(static_cast<size_t>(h * w * dd), T(0));
    for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
            T* orow = out.data() + (y * w + x) * dd;
            const T* lp = lv + (y * w + x) * c;
            const int64_t dmax = std::min<int64_t>(max_disp, x);
            for (int64_t d = 0; d <= dmax; ++d) {
                const T* rp = rv + (y * w + (x - d)) * c;
                T acc = T(0);
                for (int64_t ch = 0; ch < c; ++ch) acc += lp[ch] * rp[ch];
                orow[d] = acc * inv_sqrt_c;
            }
        }
    }
    auto ln = left.node();
    auto rn = right.node();
    auto bwd = [ln, rn, h, w, c, dd, inv_sqrt_c](detail::TapeNode<T>& n) {
        const bool gl = detail::wants_grad(ln);
        const bool gr = detail::wants_grad(rn);
        if (!gl && !gr) return;
        for (int64_t y = 0; y < h; ++y) {
            for (int64_t x = 0; x < w; ++x) {
                const T* grow = n.grad.data() + (y * w + x) * dd;
                const int64_t dmax = std::min<int64_t>(dd - 1, x);
                for (int64_t d = 0; d <= dmax; ++d) {
                    const T g = grow[d] * inv_sqrt_c;
                    if (g == T(0)) continue;
                    const int64_t lpos = (y * w + x) * c;
                    const int64_t rpos = (y * w + (x - d)) * c;
                    for (int64_t ch = 0; ch < c; ++ch) {
                        if (gl) ln->grad[lpos + ch] += g * rn->values[rpos + ch];
                        if (gr) rn->grad[rpos + ch] += g * ln->values[lpos + ch];
                    }
                }
            }
        }
    };
    return detail::make_op_result<T>({h, w, dd}, std::move(out), {left, right}, std::move(bwd));
}

// Samples the correlation volume in a window of radius r around the current
// disparity, linearly interpolated along the disparity axis and zero padded
// outside [0, max_disp]. Differentiable in both the volume and the disparity.
template <typename T>
Tensor<T> corr_lookup(const Tensor<T>& volume, const Tensor<T>& disp, int radius) {
    if (volume.rank() != 3) throw std::invalid_argument("corr_lookup: volume must be [H,W,D+1]");
    if (disp.rank() != 3 || disp.dim(2) != 1)
        throw std::invalid_argument("corr_lookup: disparity must be [H,W,1]");
    const int64_t h = volume.dim(0), w = volume.dim(1), dd = volume.dim(2);
    if (disp.dim(0) != h || disp.dim(1) != w)
        throw std::invalid_argument("corr_lookup: spatial shape mismatch");
    if (radius < 0) throw std::invalid_argument("corr_lookup: radius must be >= 0");
    const int64_t win = 2 * radius + 1;
    const T* vv = volume.data().data();
    const T* dv = disp.data().data();
    std::vector<T> out(static_cast<size_t>(h * w * win));
    auto sample = [&](int64_t pix, int64_t i) -> T {
        return (i >= 0 && i < dd) ? vv[pix * dd + i] : T(0);
    };
    for (int64_t pix = 0; pix < h * w; ++pix) {
        const T d0 = dv[pix];
        for (int64_t j = 0; j < win; ++j) {
            const T pos = d0 + static_cast<T>(j - radius);
            const T fl = std::floor(pos);
            const int64_t i0 = static_cast<int64_t>(fl);
            const T frac = pos - fl;
            out[pix * win + j] = (T(1) - frac) * sample(pix, i0) + frac * sample(pix, i0 + 1);
        }
    }
    auto vn = volume.node();
    auto dn = disp.node();
    auto bwd = [vn, dn, h, w, dd, win, radius](detail::TapeNode<T>& n) {
        const bool gv = detail::wants_grad(vn);
        const bool gd = detail::wants_grad(dn);
        if (!gv && !gd) return;
        auto sample = [&](int64_t pix, int64_t i) -> T {
            return (i >= 0 && i < dd) ? vn->values[pix * dd + i] : T(0);
        };
        for (int64_t pix = 0; pix < h * w; ++pix) {
            const T d0 = dn->values[pix];
            T dacc = T(0);
            for (int64_t j = 0; j < win; ++j) {
                const T g = n.grad[pix * win + j];
                if (g == T(0)) continue;
                const T pos = d0 + static_cast<T>(j - radius);
                const T fl = std::floor(pos);
                const int64_t i0 = static_cast<int64_t>(fl);
                const T frac = pos - fl;
                if (gv) {
                    if (i0 >= 0 && i0 < dd) vn->grad[pix * dd + i0] += g * (T(1) - frac);
                    if (i0 + 1 >= 0 && i0 + 1 < dd) vn->grad[pix * dd + i0 + 1] += g * frac;
                }
                if (gd) dacc += g * (sample(pix, i0 + 1) - sample(pix, i0));
            }
            if (gd) dn->grad[pix] += dacc;
        }
    };
    return detail::make_op_result<T>({h, w, win}, std::move(out), {volume, disp}, std::move(bwd));
}

// One gated recurrent update. Returns the new hidden state and an additive
// disparity delta.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> iterative_update(const Tensor<T>& hidden, const Tensor<T>& context,
                                                 const Tensor<T>& corr_slice,
                                                 const Tensor<T>& d_current,
                                                 const GruParams<T>& p) {
    const Tensor<T> x = concat_channels<T>({context, corr_slice, d_current});
    const Tensor<T> hx = concat_channels<T>({hidden, x});
    const Tensor<T> z = sigmoid(p.wz.apply(hx));
    const Tensor<T> r = sigmoid(p.wr.apply(hx));
    const Tensor<T> rhx = concat_channels<T>({mul(r, hidden), x});
    const Tensor<T> cand = cfd::tanh(p.wh.apply(rhx));
    // h' = (1-z)*h + z*cand
    const Tensor<T> h_new = add(hidden, mul(z, sub(cand, hidden)));
    const Tensor<T> delta = p.head2.apply(relu(p.head1.apply(h_new)));
    return {h_new, delta};
}

// Full recurrent inference. d0 = 0; every iterate is bilinearly upsampled to
// input resolution with disparity magnitudes rescaled by the factor.
template <typename T>
DisparitySequence<T> predict(const Tensor<T>& left, const Tensor<T>& right,
                             const StereoNet<T>& net,
                             std::optional<std::pair<Tensor<T>, Tensor<T>>> features_override =
                                 std::nullopt,
                             int iters = -1) {
    if (left.shape() != right.shape())
        throw std::invalid_argument("predict: left/right image sizes differ");
    const int n = iters > 0 ? iters : net.hyper.iters;
    if (n < 1) throw std::invalid_argument("predict: iteration count must be >= 1");
    Tensor<T> fl, fr;
    if (features_override) {
        fl = features_override->first;
        fr = features_override->second;
    } else {
        fl = extract_features(left, net.extractor);
        fr = extract_features(right, net.extractor);
    }
    const int s = net.hyper.downsample;
    const Tensor<T> corr = build_correlation(fl, fr, net.hyper.max_disp);
    const int64_t hf = fl.dim(0), wf = fl.dim(1);
    Tensor<T> hidden = Tensor<T>::zeros({hf, wf, net.hyper.hidden});
    Tensor<T> d = Tensor<T>::zeros({hf, wf, 1});
    DisparitySequence<T> seq;
    seq.preds.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const Tensor<T> slice = corr_lookup(corr, d, net.hyper.radius);
        auto [h_new, delta] = iterative_update(hidden, fl, slice, d, net.gru);
        hidden = h_new;
        d = add(d, delta);
        seq.preds.push_back(mul_scalar(upsample_bilinear(d, s), static_cast<T>(s)));
    }
    seq.hidden = hidden;
    return seq;
}

template <typename T>
DisparitySequence<T> predict(const Image<float>& left, const Image<float>& right,
                             const StereoNet<T>& net, int iters = -1) {
    return predict(tensor_from_image<T>(left), tensor_from_image<T>(right), net, std::nullopt,
                   iters);
}

}  // namespace cfd
