// Plain dense containers for images, scalar grids and masked grids, plus
// conversions into autodiff tensors. These stay outside the tape; anything
// that needs gradients is converted to a Tensor leaf first.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "cfd/tensor.hpp"

namespace cfd {

template <typename T>
struct Image {
    int h = 0, w = 0, c = 0;
    std::vector<T> v;

    Image() = default;
    Image(int h_, int w_, int c_, T fill = T(0))
        : h(h_), w(w_), c(c_), v(static_cast<size_t>(h_) * w_ * c_, fill) {}

    T& at(int y, int x, int ch) { return v[(static_cast<size_t>(y) * w + x) * c + ch]; }
    const T& at(int y, int x, int ch) const {
        return v[(static_cast<size_t>(y) * w + x) * c + ch];
    }
    size_t size() const { return v.size(); }
    bool same_dims(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

template <typename T>
struct Grid {
    int h = 0, w = 0;
    std::vector<T> v;

    Grid() = default;
    Grid(int h_, int w_, T fill = T(0)) : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

    T& at(int y, int x) { return v[static_cast<size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return v[static_cast<size_t>(y) * w + x]; }
    size_t size() const { return v.size(); }
};

// Grid plus validity mask (disparity and depth maps).
template <typename T>
struct MaskedGrid {
    Grid<T> values;
    std::vector<uint8_t> valid;

    MaskedGrid() = default;
    explicit MaskedGrid(Grid<T> g, bool all_valid = true)
        : values(std::move(g)), valid(values.size(), all_valid ? 1 : 0) {}
    MaskedGrid(int h, int w, T fill = T(0))
        : values(h, w, fill), valid(static_cast<size_t>(h) * w, 1) {}

    int h() const { return values.h; }
    int w() const { return values.w; }
    bool is_valid(int y, int x) const { return valid[static_cast<size_t>(y) * values.w + x] != 0; }
    void set_valid(int y, int x, bool f) {
        valid[static_cast<size_t>(y) * values.w + x] = f ? 1 : 0;
    }
    int64_t valid_count() const {
        int64_t n = 0;
        for (auto m : valid) n += m ? 1 : 0;
        return n;
    }
};

template <typename T, typename S>
Image<T> image_cast(const Image<S>& src) {
    Image<T> out;
    out.h = src.h;
    out.w = src.w;
    out.c = src.c;
    out.v.assign(src.v.begin(), src.v.end());
    return out;
}

template <typename T, typename S>
Grid<T> grid_cast(const Grid<S>& src) {
    Grid<T> out;
    out.h = src.h;
    out.w = src.w;
    out.v.assign(src.v.begin(), src.v.end());
    return out;
}

// Leaf tensor [H,W,C] from an image; no gradient by default.
template <typename T, typename S>
Tensor<T> tensor_from_image(const Image<S>& img) {
    std::vector<T> v(img.v.begin(), img.v.end());
    return Tensor<T>::from_data({img.h, img.w, img.c}, std::move(v));
}

template <typename T, typename S>
Tensor<T> tensor_from_grid(const Grid<S>& g) {
    std::vector<T> v(g.v.begin(), g.v.end());
    return Tensor<T>::from_data({g.h, g.w, 1}, std::move(v));
}

template <typename S, typename T>
Grid<S> grid_from_tensor(const Tensor<T>& t) {
    if (t.rank() == 3 && t.dim(2) != 1)
        throw std::invalid_argument("grid_from_tensor: expected single channel");
    if (t.rank() != 2 && t.rank() != 3)
        throw std::invalid_argument("grid_from_tensor: expected [H,W] or [H,W,1]");
    Grid<S> g(static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1)));
    auto d = t.data();
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] = static_cast<S>(d[i]);
    return g;
}

}  // namespace cfd
