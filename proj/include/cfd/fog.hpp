// Physically based fog synthesis: pinhole disparity-to-depth, Beer-Lambert
// transmission for homogeneous fog, the scattering composition
// I = J*T + L_inf*(1-T), and its analytic inverse used as a test oracle.

#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cfd/image.hpp"

namespace cfd {

struct CameraRig {
    double focal_px = 0.0;
    double baseline_m = 0.0;

    CameraRig() = default;
    CameraRig(double f, double b) : focal_px(f), baseline_m(b) { validate(); }
    void validate() const {
        if (!(focal_px > 0.0) || !(baseline_m > 0.0))
            throw std::invalid_argument("CameraRig: focal and baseline must be positive");
    }
};

// beta in 1/m, airlight per channel in [0,1]. A single airlight entry applies
// to all channels.
template <typename T>
struct FogParams {
    T beta = T(0);
    std::vector<T> airlight;

    FogParams() = default;
    FogParams(T b, std::vector<T> air) : beta(b), airlight(std::move(air)) { validate(); }
    void validate() const {
        if (beta < T(0)) throw std::invalid_argument("FogParams: beta must be >= 0");
        if (airlight.empty()) throw std::invalid_argument("FogParams: airlight missing");
        for (T a : airlight)
            if (a < T(0) || a > T(1))
                throw std::invalid_argument("FogParams: airlight outside [0,1]");
    }
    T airlight_for(int ch) const {
        return airlight.size() == 1 ? airlight[0] : airlight.at(static_cast<size_t>(ch));
    }
};

// Z = f*B/d. Entries with d <= d_min become invalid instead of exploding.
template <typename T>
MaskedGrid<T> disparity_to_depth(const MaskedGrid<T>& disp, const CameraRig& rig,
                                 T d_min = T(0.1)) {
    rig.validate();
    const T fb = static_cast<T>(rig.focal_px * rig.baseline_m);
    MaskedGrid<T> depth(disp.h(), disp.w());
    for (size_t i = 0; i < disp.values.v.size(); ++i) {
        const T d = disp.values.v[i];
        if (disp.valid[i] && d > d_min && std::isfinite(static_cast<double>(d))) {
            depth.values.v[i] = fb / d;
            depth.valid[i] = 1;
        } else {
            depth.values.v[i] = T(0);
            depth.valid[i] = 0;
        }
    }
    return depth;
}

template <typename T>
T max_valid_depth(const MaskedGrid<T>& depth) {
    T zmax = T(0);
    bool any = false;
    for (size_t i = 0; i < depth.values.v.size(); ++i) {
        if (depth.valid[i]) {
            zmax = std::max(zmax, depth.values.v[i]);
            any = true;
        }
    }
    if (!any) throw std::invalid_argument("max_valid_depth: no valid depth pixels");
    return zmax;
}

// T(Z) = exp(-beta*Z), the constant-beta Beer-Lambert transmission. Invalid
// depth pixels take the transmission of fallback_depth (default: the frame's
// maximum valid depth).
template <typename T>
Grid<T> transmission(const MaskedGrid<T>& depth, T beta,
                     std::optional<T> fallback_depth = std::nullopt) {
    if (beta < T(0)) throw std::invalid_argument("transmission: beta must be >= 0");
    T zfall = T(0);
    const bool needs_fallback =
        std::any_of(depth.valid.begin(), depth.valid.end(), [](uint8_t m) { return m == 0; });
    if (fallback_depth) {
        if (*fallback_depth < T(0))
            throw std::invalid_argument("transmission: fallback depth must be >= 0");
        zfall = *fallback_depth;
    } else if (needs_fallback) {
        zfall = max_valid_depth(depth);
    }
    Grid<T> t(depth.h(), depth.w());
    for (size_t i = 0; i < t.v.size(); ++i) {
        const T z = depth.valid[i] ? depth.values.v[i] : zfall;
        t.v[i] = std::exp(-beta * z);
    }
    return t;
}

// I = J*T + L_inf*(1-T), per pixel and channel.
template <typename T>
Image<T> render_fog(const Image<T>& clean, const MaskedGrid<T>& depth, const FogParams<T>& fog,
                    std::optional<T> fallback_depth = std::nullopt) {
    fog.validate();
    if (clean.h != depth.h() || clean.w != depth.w())
        throw std::invalid_argument("render_fog: image and depth dimensions differ");
    if (fog.airlight.size() != 1 && static_cast<int>(fog.airlight.size()) != clean.c)
        throw std::invalid_argument("render_fog: airlight channel count mismatch");
    const Grid<T> t = transmission(depth, fog.beta, fallback_depth);
    Image<T> out(clean.h, clean.w, clean.c);
    for (int y = 0; y < clean.h; ++y) {
        for (int x = 0; x < clean.w; ++x) {
            const T tr = t.at(y, x);
            for (int ch = 0; ch < clean.c; ++ch) {
                const T a = fog.airlight_for(ch);
                out.at(y, x, ch) = clean.at(y, x, ch) * tr + a * (T(1) - tr);
            }
        }
    }
    return out;
}

template <typename T>
struct DehazeResult {
    Image<T> image;
    std::vector<uint8_t> reliable;  // 0 where transmission fell below the floor
};

// Analytic inverse of render_fog: J = (I - L_inf*(1-T)) / T. Only a renderer
// oracle; pixels with T below t_floor are flagged unreliable and passed
// through unchanged.
template <typename T>
DehazeResult<T> dehaze_oracle(const Image<T>& foggy, const MaskedGrid<T>& depth,
                              const FogParams<T>& fog, T t_floor = T(1e-6),
                              std::optional<T> fallback_depth = std::nullopt) {
    fog.validate();
    if (foggy.h != depth.h() || foggy.w != depth.w())
        throw std::invalid_argument("dehaze_oracle: image and depth dimensions differ");
    const Grid<T> t = transmission(depth, fog.beta, fallback_depth);
    DehazeResult<T> res;
    res.image = Image<T>(foggy.h, foggy.w, foggy.c);
    res.reliable.assign(static_cast<size_t>(foggy.h) * foggy.w, 1);
    for (int y = 0; y < foggy.h; ++y) {
        for (int x = 0; x < foggy.w; ++x) {
            const T tr = t.at(y, x);
            if (tr < t_floor) {
                res.reliable[static_cast<size_t>(y) * foggy.w + x] = 0;
                for (int ch = 0; ch < foggy.c; ++ch) res.image.at(y, x, ch) = foggy.at(y, x, ch);
                continue;
            }
            for (int ch = 0; ch < foggy.c; ++ch) {
                const T a = fog.airlight_for(ch);
                res.image.at(y, x, ch) = (foggy.at(y, x, ch) - a * (T(1) - tr)) / tr;
            }
        }
    }
    return res;
}

}  // namespace cfd
