// Stereo and depth evaluation metrics. Accumulation is always in double, over
// valid pixels only. Outlier thresholds use strict inequalities.

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "cfd/fog.hpp"
#include "cfd/image.hpp"

namespace cfd {

struct StereoEval {
    double epe = 0.0;  // mean |pred - gt|, px
    double p1 = 0.0;   // fraction with error > 1 px
    double px3 = 0.0;  // fraction with error > 3 px
    double d1 = 0.0;   // fraction with error > 3 px and > 5% of gt
    int64_t n = 0;
};

struct DepthEval {
    double rmse = 0.0;
    double mae = 0.0;
    double srd = 0.0;    // mean (dz^2 / z)
    double ard = 0.0;    // mean (|dz| / z)
    double silog = 0.0;  // 100 * sqrt(Var(log zhat - log z))
    double delta1 = 0.0, delta2 = 0.0, delta3 = 0.0;  // fractions, ratio < 1.25^k
    int64_t n = 0;
};

template <typename T>
StereoEval stereo_eval(const Grid<T>& pred, const MaskedGrid<T>& gt) {
    if (pred.h != gt.h() || pred.w != gt.w())
        throw std::invalid_argument("stereo_eval: dimension mismatch");
    StereoEval ev;
    double sum_err = 0.0;
    int64_t n1 = 0, n3 = 0, nd1 = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        if (!gt.valid[i]) continue;
        const double err = std::abs(static_cast<double>(pred.v[i]) -
                                    static_cast<double>(gt.values.v[i]));
        sum_err += err;
        if (err > 1.0) ++n1;
        if (err > 3.0) ++n3;
        if (err > 3.0 && err > 0.05 * std::abs(static_cast<double>(gt.values.v[i]))) ++nd1;
        ++ev.n;
    }
    if (ev.n == 0) throw std::invalid_argument("stereo_eval: empty valid mask");
    ev.epe = sum_err / static_cast<double>(ev.n);
    ev.p1 = static_cast<double>(n1) / static_cast<double>(ev.n);
    ev.px3 = static_cast<double>(n3) / static_cast<double>(ev.n);
    ev.d1 = static_cast<double>(nd1) / static_cast<double>(ev.n);
    return ev;
}

template <typename T>
DepthEval depth_eval(const Grid<T>& pred_z, const MaskedGrid<T>& gt_z) {
    if (pred_z.h != gt_z.h() || pred_z.w != gt_z.w())
        throw std::invalid_argument("depth_eval: dimension mismatch");
    DepthEval ev;
    double se = 0.0, ae = 0.0, srd = 0.0, ard = 0.0, dlog = 0.0, dlog2 = 0.0;
    int64_t k1 = 0, k2 = 0, k3 = 0;
    const double t1 = 1.25, t2 = 1.25 * 1.25, t3 = 1.25 * 1.25 * 1.25;
    for (size_t i = 0; i < pred_z.v.size(); ++i) {
        if (!gt_z.valid[i]) continue;
        const double z = static_cast<double>(gt_z.values.v[i]);
        const double zh = static_cast<double>(pred_z.v[i]);
        if (!(z > 0.0) || !(zh > 0.0))
            throw std::invalid_argument("depth_eval: non-positive depth on valid mask");
        const double dz = zh - z;
        se += dz * dz;
        ae += std::abs(dz);
        srd += dz * dz / z;
        ard += std::abs(dz) / z;
        const double dl = std::log(zh) - std::log(z);
        dlog += dl;
        dlog2 += dl * dl;
        const double ratio = zh > z ? zh / z : z / zh;
        if (ratio < t1) ++k1;
        if (ratio < t2) ++k2;
        if (ratio < t3) ++k3;
        ++ev.n;
    }
    if (ev.n == 0) throw std::invalid_argument("depth_eval: empty valid mask");
    const double n = static_cast<double>(ev.n);
    ev.rmse = std::sqrt(se / n);
    ev.mae = ae / n;
    ev.srd = srd / n;
    ev.ard = ard / n;
    const double var = std::max(0.0, dlog2 / n - (dlog / n) * (dlog / n));
    ev.silog = 100.0 * std::sqrt(var);
    ev.delta1 = static_cast<double>(k1) / n;
    ev.delta2 = static_cast<double>(k2) / n;
    ev.delta3 = static_cast<double>(k3) / n;
    return ev;
}

// Converts predicted disparity through the rig and evaluates against ground
// truth depth. Pixels whose predicted disparity cannot convert (d <= d_min)
// drop out of the mask together with invalid ground truth.
template <typename T>
DepthEval disparity_depth_bridge(const Grid<T>& pred_disp, const MaskedGrid<T>& gt_depth,
                                 const CameraRig& rig, T d_min = T(0.1)) {
    MaskedGrid<T> pred(Grid<T>(pred_disp), true);
    const MaskedGrid<T> pred_z = disparity_to_depth(pred, rig, d_min);
    MaskedGrid<T> gt = gt_depth;
    for (size_t i = 0; i < gt.valid.size(); ++i)
        gt.valid[i] = gt.valid[i] && pred_z.valid[i] ? 1 : 0;
    return depth_eval(pred_z.values, gt);
}

}  // namespace cfd
