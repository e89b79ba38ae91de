// Dense tensor with reverse-mode automatic differentiation.
//
// Every tensor is a contiguous row-major buffer plus a handle into a tape of
// recorded operations. Two scalar modes are supported through the template
// parameter: double runs strict (domain errors throw), float runs in training
// mode (log/sqrt/div are epsilon-clamped). Finite differences are unreliable
// at f32, so all gradient oracles run the double instantiation.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cfd {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

// Numeric policy per scalar mode. Strict mode throws on domain errors,
// training mode clamps with eps so long runs never emit NaN from log/sqrt.
template <typename T>
struct NumericPolicy;

template <>
struct NumericPolicy<double> {
    static constexpr bool strict = true;
    static constexpr double eps = 0.0;
};

template <>
struct NumericPolicy<float> {
    static constexpr bool strict = false;
    static constexpr float eps = 1e-8f;
};

namespace detail {

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

inline uint64_t next_tape_seq() {
    thread_local uint64_t counter = 0;
    return ++counter;
}

// One tape node: saved activations (values), parent handles and the backward
// closure that scatters this node's grad into its parents. Nodes are created
// in forward order, so seq gives a valid topological order for replay.
template <typename T>
struct TapeNode {
    Shape shape;
    std::vector<T> values;
    bool requires_grad = false;
    std::vector<T> grad;
    std::vector<std::shared_ptr<TapeNode>> parents;
    std::function<void(TapeNode&)> backward_fn;
    uint64_t seq = next_tape_seq();
    bool backward_done = false;

    int64_t numel() const { return static_cast<int64_t>(values.size()); }
};

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables tape recording in scope (evaluation, frozen-teacher forwards).
struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

template <typename T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return full(std::move(shape), T(0), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        auto node = std::make_shared<detail::TapeNode<T>>();
        node->values.assign(static_cast<size_t>(shape_numel(shape)), value);
        node->shape = std::move(shape);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor from_data(Shape shape, std::vector<T> values, bool requires_grad = false) {
        if (shape_numel(shape) != static_cast<int64_t>(values.size()))
            throw std::invalid_argument("Tensor::from_data: shape " + shape_str(shape) +
                                        " does not match buffer of " + std::to_string(values.size()));
        auto node = std::make_shared<detail::TapeNode<T>>();
        node->shape = std::move(shape);
        node->values = std::move(values);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value) { return full({1}, value); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { ensure(); return node_->shape; }
    int64_t numel() const { ensure(); return node_->numel(); }
    int64_t dim(size_t i) const { ensure(); return node_->shape.at(i); }
    size_t rank() const { ensure(); return node_->shape.size(); }

    std::span<const T> data() const { ensure(); return node_->values; }
    // Mutable access for leaf initialization and optimizer updates.
    std::span<T> raw_data() { ensure(); return node_->values; }

    T item() const {
        ensure();
        if (node_->numel() != 1)
            throw std::invalid_argument("Tensor::item: tensor has " +
                                        std::to_string(node_->numel()) + " elements");
        return node_->values[0];
    }

    T at(std::initializer_list<int64_t> idx) const {
        ensure();
        if (idx.size() != node_->shape.size())
            throw std::invalid_argument("Tensor::at: rank mismatch");
        int64_t lin = 0;
        size_t d = 0;
        for (int64_t i : idx) {
            if (i < 0 || i >= node_->shape[d])
                throw std::out_of_range("Tensor::at: index out of range");
            lin = lin * node_->shape[d] + i;
            ++d;
        }
        return node_->values[static_cast<size_t>(lin)];
    }

    bool requires_grad() const { ensure(); return node_->requires_grad; }
    void set_requires_grad(bool v) { ensure(); node_->requires_grad = v; }

    bool has_grad() const { ensure(); return !node_->grad.empty(); }
    std::span<const T> grad() const {
        ensure();
        if (node_->grad.empty())
            throw std::logic_error("Tensor::grad: gradient not populated; call backward first");
        return node_->grad;
    }
    void zero_grad() { ensure(); node_->grad.clear(); }

    // Copies values into a fresh leaf that is cut off from the tape.
    Tensor detach() const {
        ensure();
        auto node = std::make_shared<detail::TapeNode<T>>();
        node->shape = node_->shape;
        node->values = node_->values;
        node->requires_grad = false;
        return Tensor(std::move(node));
    }

    // Reverse-mode sweep from a scalar loss. Replays the tape in reverse
    // creation order; grads of all reachable requires_grad tensors are
    // overwritten (zeroed, then accumulated). A second call on the same loss
    // node without rebuilding the graph is an error.
    void backward() const {
        ensure();
        if (node_->numel() != 1)
            throw std::invalid_argument("backward: loss must be scalar, got shape " +
                                        shape_str(node_->shape));
        if (node_->backward_done)
            throw std::logic_error("backward: already ran on this loss; rebuild the graph first");
        node_->backward_done = true;
        if (!node_->requires_grad) return;  // nothing reachable needs gradients

        std::vector<detail::TapeNode<T>*> order;
        std::unordered_set<const detail::TapeNode<T>*> seen;
        std::vector<detail::TapeNode<T>*> stack{node_.get()};
        seen.insert(node_.get());
        while (!stack.empty()) {
            auto* n = stack.back();
            stack.pop_back();
            order.push_back(n);
            for (auto& p : n->parents) {
                if (p->requires_grad && seen.insert(p.get()).second) stack.push_back(p.get());
            }
        }
        std::sort(order.begin(), order.end(),
                  [](const auto* a, const auto* b) { return a->seq > b->seq; });
        for (auto* n : order) n->grad.assign(n->values.size(), T(0));
        node_->grad[0] = T(1);
        for (auto* n : order) {
            if (n->backward_fn) n->backward_fn(*n);
        }
    }

    // Internal: used by op implementations.
    std::shared_ptr<detail::TapeNode<T>> node() const { return node_; }
    explicit Tensor(std::shared_ptr<detail::TapeNode<T>> node) : node_(std::move(node)) {}

  private:
    void ensure() const {
        if (!node_) throw std::logic_error("Tensor: undefined (default constructed)");
    }

    std::shared_ptr<detail::TapeNode<T>> node_;
};

namespace detail {

template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> values,
                         std::vector<Tensor<T>> inputs,
                         std::function<void(TapeNode<T>&)> backward_fn) {
    auto node = std::make_shared<TapeNode<T>>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    bool need = false;
    if (grad_mode_flag()) {
        for (const auto& t : inputs) need = need || t.requires_grad();
    }
    node->requires_grad = need;
    if (need) {
        node->parents.reserve(inputs.size());
        for (const auto& t : inputs) node->parents.push_back(t.node());
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>(std::move(node));
}

// Grad buffers exist for every requires_grad node visited by backward; the
// guard below is for parents pruned out of the sweep.
template <typename T>
inline bool wants_grad(const std::shared_ptr<TapeNode<T>>& n) {
    return n->requires_grad && !n->grad.empty();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Broadcasting
//
// Binary ops accept equal shapes, equal-rank shapes where mismatched dims are
// size 1 on either side, or a single-element operand against anything.
// Gradients of a broadcast operand are reduced by summation over the expanded
// axes (realized by the += into the mapped source index).
// ---------------------------------------------------------------------------

namespace detail {

struct BcastPlan {
    Shape out;
    std::vector<int64_t> stride_a, stride_b;  // zero stride on broadcast axes
};

inline BcastPlan broadcast_plan(const Shape& a, const Shape& b) {
    BcastPlan plan;
    Shape ea = a, eb = b;
    if (shape_numel(a) == 1 && a.size() != b.size()) ea.assign(b.size(), 1);
    if (shape_numel(b) == 1 && b.size() != a.size()) eb.assign(a.size(), 1);
    if (ea.size() != eb.size())
        throw std::invalid_argument("broadcast: rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    const size_t r = ea.size();
    plan.out.resize(r);
    for (size_t d = 0; d < r; ++d) {
        if (ea[d] == eb[d]) plan.out[d] = ea[d];
        else if (ea[d] == 1) plan.out[d] = eb[d];
        else if (eb[d] == 1) plan.out[d] = ea[d];
        else
            throw std::invalid_argument("broadcast: incompatible shapes " + shape_str(a) +
                                        " vs " + shape_str(b));
    }
    auto strides_of = [&](const Shape& s) {
        std::vector<int64_t> st(r, 0);
        int64_t acc = 1;
        for (size_t d = r; d-- > 0;) {
            st[d] = (s[d] == 1) ? 0 : acc;
            acc *= s[d];
        }
        return st;
    };
    plan.stride_a = strides_of(ea);
    plan.stride_b = strides_of(eb);
    return plan;
}

// Calls fn(out_index, a_index, b_index) over the broadcast output in row-major
// order. Odometer walk; no allocation per step.
template <typename Fn>
void for_each_broadcast(const BcastPlan& plan, Fn&& fn) {
    const size_t r = plan.out.size();
    const int64_t n = shape_numel(plan.out);
    if (n == 0) return;
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t o = 0;; ++o) {
        fn(o, ia, ib);
        size_t d = r;
        while (d-- > 0) {
            ++idx[d];
            ia += plan.stride_a[d];
            ib += plan.stride_b[d];
            if (idx[d] < plan.out[d]) break;
            ia -= plan.stride_a[d] * plan.out[d];
            ib -= plan.stride_b[d] * plan.out[d];
            idx[d] = 0;
            if (d == 0) return;
        }
        if (o + 1 >= n) return;
    }
}

template <typename T, typename FwdFn, typename BwdA, typename BwdB>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, FwdFn fwd, BwdA dfda, BwdB dfdb,
                    const char* name) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa == sb) {
        // fast path, no index mapping
        const auto av = a.data();
        const auto bv = b.data();
        std::vector<T> out(av.size());
        for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i], bv[i]);
        auto an = a.node();
        auto bn = b.node();
        return make_op_result<T>(
            sa, std::move(out), {a, b}, [an, bn, dfda, dfdb](TapeNode<T>& n) {
                const bool ga = wants_grad(an), gb = wants_grad(bn);
                for (size_t i = 0; i < n.grad.size(); ++i) {
                    const T g = n.grad[i];
                    if (ga) an->grad[i] += g * dfda(an->values[i], bn->values[i]);
                    if (gb) bn->grad[i] += g * dfdb(an->values[i], bn->values[i]);
                }
            });
    }
    BcastPlan plan = broadcast_plan(sa, sb);
    const auto av = a.data();
    const auto bv = b.data();
    std::vector<T> out(static_cast<size_t>(shape_numel(plan.out)));
    for_each_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) {
        out[static_cast<size_t>(o)] = fwd(av[static_cast<size_t>(ia)], bv[static_cast<size_t>(ib)]);
    });
    auto an = a.node();
    auto bn = b.node();
    return make_op_result<T>(
        plan.out, std::move(out), {a, b}, [an, bn, plan, dfda, dfdb](TapeNode<T>& n) {
            const bool ga = wants_grad(an), gb = wants_grad(bn);
            for_each_broadcast(plan, [&](int64_t o, int64_t ia, int64_t ib) {
                const T g = n.grad[static_cast<size_t>(o)];
                const T x = an->values[static_cast<size_t>(ia)];
                const T y = bn->values[static_cast<size_t>(ib)];
                if (ga) an->grad[static_cast<size_t>(ia)] += g * dfda(x, y);
                if (gb) bn->grad[static_cast<size_t>(ib)] += g * dfdb(x, y);
            });
        });
    (void)name;
}

template <typename T, typename FwdFn, typename BwdFn>
Tensor<T> unary_op(const Tensor<T>& a, FwdFn fwd, BwdFn dfdx) {
    const auto av = a.data();
    std::vector<T> out(av.size());
    for (size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return make_op_result<T>(a.shape(), std::move(out), {a}, [an, dfdx](TapeNode<T>& n) {
        if (!wants_grad(an)) return;
        for (size_t i = 0; i < n.grad.size(); ++i)
            an->grad[i] += n.grad[i] * dfdx(an->values[i], n.values[i]);
    });
}

}  // namespace detail

// --------------------------- elementwise ops -------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x + y; }, [](T, T) { return T(1); },
        [](T, T) { return T(1); }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x - y; }, [](T, T) { return T(1); },
        [](T, T) { return T(-1); }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, [](T x, T y) { return x * y; }, [](T, T y) { return y; },
        [](T x, T) { return x; }, "mul");
}

template <typename T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
    if constexpr (NumericPolicy<T>::strict) {
        for (T y : b.data())
            if (y <= T(0))
                throw std::domain_error("divide: non-positive divisor in strict mode");
        return detail::binary_op(
            a, b, [](T x, T y) { return x / y; }, [](T, T y) { return T(1) / y; },
            [](T x, T y) { return -x / (y * y); }, "div");
    } else {
        constexpr T eps = NumericPolicy<T>::eps;
        auto clamp = [](T y) { return y < eps ? eps : y; };
        return detail::binary_op(
            a, b, [clamp](T x, T y) { return x / clamp(y); },
            [clamp](T, T y) { return T(1) / clamp(y); },
            [clamp](T x, T y) { T c = clamp(y); return y < eps ? T(0) : -x / (c * c); }, "div");
    }
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T c) {
    return detail::unary_op(a, [c](T x) { return x + c; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c) {
    return detail::unary_op(a, [c](T x) { return x * c; }, [c](T, T) { return c; });
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) { return mul_scalar(a, T(-1)); }

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return T(1) / (T(1) + std::exp(-x)); },
        [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
    return detail::unary_op(
        a, [](T x) { return std::abs(x); },
        [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    if constexpr (NumericPolicy<T>::strict) {
        for (T x : a.data())
            if (x <= T(0)) throw std::domain_error("log: non-positive input in strict mode");
        return detail::unary_op(a, [](T x) { return std::log(x); },
                                [](T x, T) { return T(1) / x; });
    } else {
        constexpr T eps = NumericPolicy<T>::eps;
        auto clamp = [](T x) { return x < eps ? eps : x; };
        return detail::unary_op(a, [clamp](T x) { return std::log(clamp(x)); },
                                [clamp](T x, T) { return T(1) / clamp(x); });
    }
}

template <typename T>
Tensor<T> sqrt(const Tensor<T>& a) {
    if constexpr (NumericPolicy<T>::strict) {
        for (T x : a.data())
            if (x < T(0)) throw std::domain_error("sqrt: negative input in strict mode");
        return detail::unary_op(a, [](T x) { return std::sqrt(x); },
                                [](T, T y) { return T(1) / (T(2) * y); });
    } else {
        constexpr T eps = NumericPolicy<T>::eps;
        auto clamp = [](T x) { return x < eps ? eps : x; };
        return detail::unary_op(a, [clamp](T x) { return std::sqrt(clamp(x)); },
                                [clamp](T x, T) { return T(1) / (T(2) * std::sqrt(clamp(x))); });
    }
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    return detail::unary_op(a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

// ----------------------------- reductions ----------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    T acc = T(0);
    for (T x : a.data()) acc += x;
    auto an = a.node();
    return detail::make_op_result<T>({1}, {acc}, {a}, [an](detail::TapeNode<T>& n) {
        if (!detail::wants_grad(an)) return;
        const T g = n.grad[0];
        for (auto& gv : an->grad) gv += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    const int64_t cnt = a.numel();
    if (cnt == 0) throw std::invalid_argument("mean: empty tensor");
    T acc = T(0);
    for (T x : a.data()) acc += x;
    acc /= static_cast<T>(cnt);
    auto an = a.node();
    return detail::make_op_result<T>({1}, {acc}, {a}, [an, cnt](detail::TapeNode<T>& n) {
        if (!detail::wants_grad(an)) return;
        const T g = n.grad[0] / static_cast<T>(cnt);
        for (auto& gv : an->grad) gv += g;
    });
}

// Per-channel spatial mean: [H,W,C] -> [1,1,C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& a) {
    if (a.rank() != 3) throw std::invalid_argument("global_avg_pool: expected [H,W,C]");
    const int64_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
    if (h < 1 || w < 1) throw std::invalid_argument("global_avg_pool: empty spatial dims");
    const auto av = a.data();
    std::vector<T> out(static_cast<size_t>(c), T(0));
    for (int64_t i = 0; i < h * w; ++i)
        for (int64_t ch = 0; ch < c; ++ch) out[ch] += av[static_cast<size_t>(i * c + ch)];
    const T inv = T(1) / static_cast<T>(h * w);
    for (auto& v : out) v *= inv;
    auto an = a.node();
    return detail::make_op_result<T>({1, 1, c}, std::move(out), {a},
                                     [an, h, w, c, inv](detail::TapeNode<T>& n) {
                                         if (!detail::wants_grad(an)) return;
                                         for (int64_t i = 0; i < h * w; ++i)
                                             for (int64_t ch = 0; ch < c; ++ch)
                                                 an->grad[static_cast<size_t>(i * c + ch)] +=
                                                     n.grad[static_cast<size_t>(ch)] * inv;
                                     });
}

// ---------------------------- convolution ----------------------------------

// 2D cross-correlation, HWC layout. input [H,W,Cin], weight [k,k,Cin,Cout],
// bias [Cout]. Output size must divide exactly; no implicit truncation.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int stride = 1, int padding = 0) {
    if (input.rank() != 3) throw std::invalid_argument("conv2d: input must be [H,W,Cin]");
    if (weight.rank() != 4) throw std::invalid_argument("conv2d: weight must be [k,k,Cin,Cout]");
    const int64_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
    const int64_t k = weight.dim(0), cout = weight.dim(3);
    if (weight.dim(1) != k) throw std::invalid_argument("conv2d: kernel must be square");
    if (k % 2 == 0) throw std::invalid_argument("conv2d: kernel size must be odd");
    if (weight.dim(2) != cin)
        throw std::invalid_argument("conv2d: weight Cin " + std::to_string(weight.dim(2)) +
                                    " does not match input Cin " + std::to_string(cin));
    if (bias.numel() != cout)
        throw std::invalid_argument("conv2d: bias size mismatch");
    if (stride < 1 || padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
    const int64_t span_h = h + 2 * padding - k;
    const int64_t span_w = w + 2 * padding - k;
    if (span_h < 0 || span_w < 0 || span_h % stride != 0 || span_w % stride != 0)
        throw std::invalid_argument("conv2d: non-integer output size for input " +
                                    shape_str(input.shape()));
    const int64_t ho = span_h / stride + 1;
    const int64_t wo = span_w / stride + 1;

    const T* in = input.data().data();
    const T* wt = weight.data().data();
    const T* bs = bias.data().data();
    std::vector<T> out(static_cast<size_t>(ho * wo * cout));
    for (int64_t oy = 0; oy < ho; ++oy) {
        for (int64_t ox = 0; ox < wo; ++ox) {
            T* orow = out.data() + (oy * wo + ox) * cout;
            for (int64_t oc = 0; oc < cout; ++oc) orow[oc] = bs[oc];
            for (int64_t ky = 0; ky < k; ++ky) {
                const int64_t iy = oy * stride - padding + ky;
                if (iy < 0 || iy >= h) continue;
                for (int64_t kx = 0; kx < k; ++kx) {
                    const int64_t ix = ox * stride - padding + kx;
                    if (ix < 0 || ix >= w) continue;
                    const T* ipix = in + (iy * w + ix) * cin;
                    const T* wrow = wt + ((ky * k + kx) * cin) * cout;
                    for (int64_t ic = 0; ic < cin; ++ic) {
                        const T a = ipix[ic];
                        const T* wr = wrow + ic * cout;
                        for (int64_t oc = 0; oc < cout; ++oc) orow[oc] += a * wr[oc];
                    }
                }
            }
        }
    }

    auto in_n = input.node();
    auto w_n = weight.node();
    auto b_n = bias.node();
    auto bwd = [in_n, w_n, b_n, h, w, cin, k, cout, ho, wo, stride,
                padding](detail::TapeNode<T>& n) {
        const bool gi = detail::wants_grad(in_n);
        const bool gw = detail::wants_grad(w_n);
        const bool gb = detail::wants_grad(b_n);
        const T* g = n.grad.data();
        const T* in = in_n->values.data();
        const T* wt = w_n->values.data();
        if (gb) {
            for (int64_t i = 0; i < ho * wo; ++i)
                for (int64_t oc = 0; oc < cout; ++oc) b_n->grad[oc] += g[i * cout + oc];
        }
        if (!gi && !gw) return;
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                const T* grow = g + (oy * wo + ox) * cout;
                for (int64_t ky = 0; ky < k; ++ky) {
                    const int64_t iy = oy * stride - padding + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (int64_t kx = 0; kx < k; ++kx) {
                        const int64_t ix = ox * stride - padding + kx;
                        if (ix < 0 || ix >= w) continue;
                        const int64_t ipos = (iy * w + ix) * cin;
                        for (int64_t ic = 0; ic < cin; ++ic) {
                            const int64_t wpos = ((ky * k + kx) * cin + ic) * cout;
                            T acc = T(0);
                            if (gw) {
                                const T a = in[ipos + ic];
                                for (int64_t oc = 0; oc < cout; ++oc) {
                                    const T gv = grow[oc];
                                    w_n->grad[wpos + oc] += a * gv;
                                    acc += wt[wpos + oc] * gv;
                                }
                            } else {
                                for (int64_t oc = 0; oc < cout; ++oc)
                                    acc += wt[wpos + oc] * grow[oc];
                            }
                            if (gi) in_n->grad[ipos + ic] += acc;
                        }
                    }
                }
            }
        }
    };
    return detail::make_op_result<T>({ho, wo, cout}, std::move(out), {input, weight, bias},
                                     std::move(bwd));
}

// ------------------------- structural operations ---------------------------

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
    const int64_t h = parts[0].dim(0), w = parts[0].dim(1);
    int64_t ctot = 0;
    for (const auto& p : parts) {
        if (p.rank() != 3 || p.dim(0) != h || p.dim(1) != w)
            throw std::invalid_argument("concat_channels: spatial shape mismatch");
        ctot += p.dim(2);
    }
    std::vector<T> out(static_cast<size_t>(h * w * ctot));
    int64_t coff = 0;
    for (const auto& p : parts) {
        const int64_t c = p.dim(2);
        const T* src = p.data().data();
        for (int64_t i = 0; i < h * w; ++i)
            std::copy_n(src + i * c, c, out.data() + i * ctot + coff);
        coff += c;
    }
    std::vector<std::shared_ptr<detail::TapeNode<T>>> nodes;
    std::vector<int64_t> widths;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.dim(2));
    }
    auto bwd = [nodes, widths, h, w, ctot](detail::TapeNode<T>& n) {
        int64_t coff = 0;
        for (size_t pi = 0; pi < nodes.size(); ++pi) {
            const int64_t c = widths[pi];
            if (detail::wants_grad(nodes[pi])) {
                for (int64_t i = 0; i < h * w; ++i)
                    for (int64_t ch = 0; ch < c; ++ch)
                        nodes[pi]->grad[i * c + ch] += n.grad[i * ctot + coff + ch];
            }
            coff += c;
        }
    };
    return detail::make_op_result<T>({h, w, ctot}, std::move(out), parts, std::move(bwd));
}

// Bilinear upsample by an integer factor, half-pixel aligned. [H,W,C] ->
// [sH,sW,C]. Values are interpolated, not rescaled; disparity magnitudes are
// adjusted by the caller.
template <typename T>
Tensor<T> upsample_bilinear(const Tensor<T>& a, int factor) {
    if (a.rank() != 3) throw std::invalid_argument("upsample_bilinear: expected [H,W,C]");
    if (factor < 1) throw std::invalid_argument("upsample_bilinear: factor must be >= 1");
    const int64_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
    const int64_t ho = h * factor, wo = w * factor;
    const T* in = a.data().data();
    std::vector<T> out(static_cast<size_t>(ho * wo * c));
    // Per output row/col: source coordinate, floor index and weight.
    auto prep = [factor](int64_t n_out, int64_t n_in, std::vector<int64_t>& i0,
                         std::vector<T>& frac) {
        i0.resize(n_out);
        frac.resize(n_out);
        for (int64_t o = 0; o < n_out; ++o) {
            T src = (static_cast<T>(o) + T(0.5)) / static_cast<T>(factor) - T(0.5);
            if (src < T(0)) src = T(0);
            if (src > static_cast<T>(n_in - 1)) src = static_cast<T>(n_in - 1);
            int64_t f = static_cast<int64_t>(std::floor(src));
            if (f > n_in - 1) f = n_in - 1;
            i0[o] = f;
            frac[o] = src - static_cast<T>(f);
        }
    };
    std::vector<int64_t> y0, x0;
    std::vector<T> fy, fx;
    prep(ho, h, y0, fy);
    prep(wo, w, x0, fx);
    for (int64_t oy = 0; oy < ho; ++oy) {
        const int64_t ya = y0[oy], yb = std::min<int64_t>(ya + 1, h - 1);
        const T wy = fy[oy];
        for (int64_t ox = 0; ox < wo; ++ox) {
            const int64_t xa = x0[ox], xb = std::min<int64_t>(xa + 1, w - 1);
            const T wx = fx[ox];
            const T* p00 = in + (ya * w + xa) * c;
            const T* p01 = in + (ya * w + xb) * c;
            const T* p10 = in + (yb * w + xa) * c;
            const T* p11 = in + (yb * w + xb) * c;
            T* op = out.data() + (oy * wo + ox) * c;
            for (int64_t ch = 0; ch < c; ++ch)
                op[ch] = (T(1) - wy) * ((T(1) - wx) * p00[ch] + wx * p01[ch]) +
                         wy * ((T(1) - wx) * p10[ch] + wx * p11[ch]);
        }
    }
    auto an = a.node();
    auto bwd = [an, h, w, c, ho, wo, y0, x0, fy, fx](detail::TapeNode<T>& n) {
        if (!detail::wants_grad(an)) return;
        for (int64_t oy = 0; oy < ho; ++oy) {
            const int64_t ya = y0[oy], yb = std::min<int64_t>(ya + 1, h - 1);
            const T wy = fy[oy];
            for (int64_t ox = 0; ox < wo; ++ox) {
                const int64_t xa = x0[ox], xb = std::min<int64_t>(xa + 1, w - 1);
                const T wx = fx[ox];
                const T* gp = n.grad.data() + (oy * wo + ox) * c;
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T g = gp[ch];
                    an->grad[(ya * w + xa) * c + ch] += g * (T(1) - wy) * (T(1) - wx);
                    an->grad[(ya * w + xb) * c + ch] += g * (T(1) - wy) * wx;
                    an->grad[(yb * w + xa) * c + ch] += g * wy * (T(1) - wx);
                    an->grad[(yb * w + xb) * c + ch] += g * wy * wx;
                }
            }
        }
    };
    return detail::make_op_result<T>({ho, wo, c}, std::move(out), {a}, std::move(bwd));
}

// L2-normalizes each channel map over its spatial positions. Channels with
// zero norm map to the zero vector (and receive zero gradient).
template <typename T>
Tensor<T> channel_l2_normalize(const Tensor<T>& a) {
    if (a.rank() != 3) throw std::invalid_argument("channel_l2_normalize: expected [H,W,C]");
    const int64_t h = a.dim(0), w = a.dim(1), c = a.dim(2);
    const int64_t hw = h * w;
    const T* in = a.data().data();
    std::vector<T> norms(static_cast<size_t>(c), T(0));
    for (int64_t i = 0; i < hw; ++i)
        for (int64_t ch = 0; ch < c; ++ch) norms[ch] += in[i * c + ch] * in[i * c + ch];
    for (auto& v : norms) v = std::sqrt(v);
    std::vector<T> out(static_cast<size_t>(hw * c));
    for (int64_t i = 0; i < hw; ++i)
        for (int64_t ch = 0; ch < c; ++ch)
            out[i * c + ch] = norms[ch] > T(0) ? in[i * c + ch] / norms[ch] : T(0);
    auto an = a.node();
    auto bwd = [an, hw, c, norms](detail::TapeNode<T>& n) {
        if (!detail::wants_grad(an)) return;
        // d(x/|x|) pulls back as (g - <g,xhat> xhat) / |x| per channel.
        for (int64_t ch = 0; ch < c; ++ch) {
            if (norms[ch] <= T(0)) continue;
            T dot = T(0);
            for (int64_t i = 0; i < hw; ++i) dot += n.grad[i * c + ch] * n.values[i * c + ch];
            for (int64_t i = 0; i < hw; ++i)
                an->grad[i * c + ch] +=
                    (n.grad[i * c + ch] - dot * n.values[i * c + ch]) / norms[ch];
        }
    };
    return detail::make_op_result<T>({h, w, c}, std::move(out), {a}, std::move(bwd));
}

// --------------------------- gradient oracle -------------------------------

// Central-difference estimate of d f / d x, element by element. f must be a
// pure function of the tensor values; it is evaluated 2*numel times. Stays
// independent of the reverse-mode path so it can serve as its oracle.
template <typename T>
Tensor<T> finite_diff_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                           T eps = T(1e-4)) {
    if (eps <= T(0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
    std::vector<T> base(x.data().begin(), x.data().end());
    std::vector<T> grad(base.size());
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<T> vp = base, vm = base;
        vp[i] += eps;
        vm[i] -= eps;
        const T fp = f(Tensor<T>::from_data(x.shape(), std::move(vp)));
        const T fm = f(Tensor<T>::from_data(x.shape(), std::move(vm)));
        grad[i] = (fp - fm) / (T(2) * eps);
    }
    return Tensor<T>::from_data(x.shape(), std::move(grad));
}

// Same estimate restricted to a coordinate subset; used for large parameter
// tensors where the full sweep would be wasteful.
template <typename T>
std::vector<T> finite_diff_grad_at(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x,
                                   const std::vector<int64_t>& coords, T eps = T(1e-4)) {
    std::vector<T> base(x.data().begin(), x.data().end());
    std::vector<T> grad;
    grad.reserve(coords.size());
    for (int64_t ci : coords) {
        std::vector<T> vp = base, vm = base;
        vp[static_cast<size_t>(ci)] += eps;
        vm[static_cast<size_t>(ci)] -= eps;
        const T fp = f(Tensor<T>::from_data(x.shape(), std::move(vp)));
        const T fm = f(Tensor<T>::from_data(x.shape(), std::move(vm)));
        grad.push_back((fp - fm) / (T(2) * eps));
    }
    return grad;
}

// max_i |a-b| / max(1, |a|, |b|): relative error for large values, absolute
// near zero.
template <typename T>
T max_rel_err(std::span<const T> a, std::span<const T> b) {
    if (a.size() != b.size()) throw std::invalid_argument("max_rel_err: size mismatch");
    T worst = T(0);
    for (size_t i = 0; i < a.size(); ++i) {
        const T scale = std::max(T(1), std::max(std::abs(a[i]), std::abs(b[i])));
        worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
    }
    return worst;
}

// ------------------------------ random init --------------------------------

template <typename T>
Tensor<T> rand_uniform(std::mt19937_64& rng, Shape shape, T lo, T hi, bool requires_grad = false) {
    std::uniform_real_distribution<double> dist(static_cast<double>(lo), static_cast<double>(hi));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>::from_data(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> rand_normal(std::mt19937_64& rng, Shape shape, T mean, T stddev,
                      bool requires_grad = false) {
    std::normal_distribution<double> dist(static_cast<double>(mean), static_cast<double>(stddev));
    std::vector<T> v(static_cast<size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<T>(dist(rng));
    return Tensor<T>::from_data(std::move(shape), std::move(v), requires_grad);
}

}  // namespace cfd
