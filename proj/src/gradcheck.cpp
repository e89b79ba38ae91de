#include "cfd/gradcheck.hpp"

#include <cstdio>

namespace cfd {

namespace {

using gradcheck_detail::check_input_grad;
using gradcheck_detail::check_param_grad;
using TD = Tensor<double>;

// weighted sum reduction so index bugs cannot cancel out
TD weighted(const TD& t, const TD& w) { return sum(mul(t, w)); }

TD rand_away_from_zero(std::mt19937_64& rng, Shape shape, double lo = 0.2, double hi = 1.5) {
    TD mag = rand_uniform<double>(rng, shape, lo, hi);
    TD sign = rand_uniform<double>(rng, shape, 0.0, 1.0);
    std::vector<double> v(mag.data().begin(), mag.data().end());
    auto s = sign.data();
    for (size_t i = 0; i < v.size(); ++i)
        if (s[i] < 0.5) v[i] = -v[i];
    return TD::from_data(shape, std::move(v));
}

Shape random_hwc(std::mt19937_64& rng, int max_hw = 6, int max_c = 4) {
    std::uniform_int_distribution<int64_t> dh(1, max_hw), dc(1, max_c);
    return {dh(rng), dh(rng), dc(rng)};
}

struct CaseRunner {
    uint64_t seed;
    int instances;
    std::vector<GradCheckCase>& out;

    void run(const std::string& name, double tol,
             const std::function<double(std::mt19937_64&)>& one_instance) {
        GradCheckCase c;
        c.name = name;
        c.tol = tol;
        c.instances = instances;
        for (int i = 0; i < instances; ++i) {
            std::mt19937_64 rng(seed ^ (0x9e3779b97f4a7c15ull * (i + 1)) ^
                                std::hash<std::string>{}(name));
            c.max_err = std::max(c.max_err, one_instance(rng));
        }
        c.pass = c.max_err < c.tol;
        out.push_back(std::move(c));
    }
};

MatcherHyper tiny_hyper() {
    MatcherHyper h;
    h.image_channels = 3;
    h.channels = 8;
    h.iters = 2;
    h.max_disp = 3;
    h.radius = 2;
    h.hidden = 8;
    h.head_mid = 4;
    return h;
}

ExperimentConfig tiny_scene_config() {
    ExperimentConfig cfg;
    cfg.image_h = 16;
    cfg.image_w = 32;
    cfg.disp_min = 2;
    cfg.disp_max = 6;
    cfg.layers_min = 2;
    cfg.layers_max = 3;
    return cfg;
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(uint64_t seed, int instances_per_case,
                                               double tol_ops, double tol_full) {
    std::vector<GradCheckCase> cases;
    CaseRunner runner{seed, instances_per_case, cases};

    // elementwise, including broadcast against [H,W,1] and [1,1,C]
    runner.run("add_broadcast", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD b = rand_uniform<double>(rng, {1, 1, s[2]}, -1.0, 1.0);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        const TD a = rand_uniform<double>(rng, s, -1.0, 1.0);
        const double e1 = check_input_grad([&](const TD& x) { return weighted(add(x, b), w); },
                                           rand_uniform<double>(rng, s, -1.0, 1.0), rng);
        const double e2 =
            check_input_grad([&](const TD& x) { return weighted(add(a, x), w); }, b, rng);
        return std::max(e1, e2);
    });
    runner.run("sub", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD a = rand_uniform<double>(rng, s, -1.0, 1.0);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(sub(a, x), w); },
                                rand_uniform<double>(rng, s, -1.0, 1.0), rng);
    });
    runner.run("mul_broadcast", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD pa = rand_uniform<double>(rng, {s[0], s[1], 1}, 0.1, 0.9);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        const double e1 = check_input_grad([&](const TD& x) { return weighted(mul(x, pa), w); },
                                           rand_uniform<double>(rng, s, -1.0, 1.0), rng);
        const TD f = rand_uniform<double>(rng, s, -1.0, 1.0);
        const double e2 = check_input_grad([&](const TD& x) { return weighted(mul(f, x), w); },
                                           pa, rng);
        return std::max(e1, e2);
    });
    runner.run("div", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD num = rand_uniform<double>(rng, s, -1.0, 1.0);
        const TD den = rand_uniform<double>(rng, s, 0.5, 2.0);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        const double e1 = check_input_grad([&](const TD& x) { return weighted(divide(x, den), w); },
                                           num, rng);
        const double e2 = check_input_grad([&](const TD& x) { return weighted(divide(num, x), w); },
                                           den, rng);
        return std::max(e1, e2);
    });

    const std::vector<std::pair<std::string, TD (*)(const TD&)>> unary = {
        {"sigmoid", [](const TD& x) { return sigmoid(x); }},
        {"tanh", [](const TD& x) { return cfd::tanh(x); }},
        {"exp", [](const TD& x) { return cfd::exp(x); }},
        {"square", [](const TD& x) { return square(x); }},
    };
    for (const auto& [name, fn] : unary) {
        auto f = fn;
        runner.run(name, tol_ops, [f](std::mt19937_64& rng) {
            const Shape s = random_hwc(rng);
            const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
            return check_input_grad([&](const TD& x) { return weighted(f(x), w); },
                                    rand_uniform<double>(rng, s, -1.5, 1.5), rng);
        });
    }
    // kinked ops probed away from the kink
    runner.run("relu", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(relu(x), w); },
                                rand_away_from_zero(rng, s), rng);
    });
    runner.run("abs", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(cfd::abs(x), w); },
                                rand_away_from_zero(rng, s), rng);
    });
    // positive-domain ops
    runner.run("log", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(cfd::log(x), w); },
                                rand_uniform<double>(rng, s, 0.3, 3.0), rng);
    });
    runner.run("sqrt", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(cfd::sqrt(x), w); },
                                rand_uniform<double>(rng, s, 0.3, 3.0), rng);
    });

    runner.run("sum", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        return check_input_grad([&](const TD& x) { return sum(square(x)); },
                                rand_uniform<double>(rng, s, -1.0, 1.0), rng);
    });
    runner.run("mean", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        return check_input_grad([&](const TD& x) { return mean(square(x)); },
                                rand_uniform<double>(rng, s, -1.0, 1.0), rng);
    });
    runner.run("global_avg_pool", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD w = rand_uniform<double>(rng, {1, 1, s[2]}, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(global_avg_pool(x), w); },
                                rand_uniform<double>(rng, s, -1.0, 1.0), rng);
    });

    runner.run("conv2d", tol_ops, [](std::mt19937_64& rng) {
        std::uniform_int_distribution<int> dc(1, 3), dstride(1, 2), dm(2, 4);
        const int cin = dc(rng), cout = dc(rng), stride = dstride(rng);
        // sized so (dim + 2*pad - k) divides the stride exactly
        const int64_t ho = dm(rng), wo = dm(rng);
        const int64_t h = (ho - 1) * stride + 1, w = (wo - 1) * stride + 1;
        const TD input = rand_uniform<double>(rng, {h, w, cin}, -1.0, 1.0);
        const TD weight = rand_uniform<double>(rng, {3, 3, cin, cout}, -0.7, 0.7);
        const TD bias = rand_uniform<double>(rng, {cout}, -0.3, 0.3);
        const TD rw = rand_uniform<double>(rng, {ho, wo, cout}, -1.0, 1.0);
        const double ei = check_input_grad(
            [&](const TD& x) { return weighted(conv2d(x, weight, bias, stride, 1), rw); }, input,
            rng);
        const double ew = check_input_grad(
            [&](const TD& x) { return weighted(conv2d(input, x, bias, stride, 1), rw); }, weight,
            rng);
        const double eb = check_input_grad(
            [&](const TD& x) { return weighted(conv2d(input, weight, x, stride, 1), rw); }, bias,
            rng);
        return std::max({ei, ew, eb});
    });

    runner.run("upsample_bilinear", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng, 4, 3);
        std::uniform_int_distribution<int> df(2, 4);
        const int f = df(rng);
        const TD w = rand_uniform<double>(rng, {s[0] * f, s[1] * f, s[2]}, -1.0, 1.0);
        return check_input_grad([&](const TD& x) { return weighted(upsample_bilinear(x, f), w); },
                                rand_uniform<double>(rng, s, -1.0, 1.0), rng);
    });

    runner.run("concat_channels", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const Shape s2 = {s[0], s[1], s[2] + 1};
        const TD b = rand_uniform<double>(rng, s2, -1.0, 1.0);
        const TD w = rand_uniform<double>(rng, {s[0], s[1], s[2] + s2[2]}, -1.0, 1.0);
        return check_input_grad(
            [&](const TD& x) { return weighted(concat_channels<double>({x, b}), w); },
            rand_uniform<double>(rng, s, -1.0, 1.0), rng);
    });

    runner.run("channel_l2_normalize", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng);
        const TD w = rand_uniform<double>(rng, s, -1.0, 1.0);
        return check_input_grad(
            [&](const TD& x) { return weighted(channel_l2_normalize(x), w); },
            rand_away_from_zero(rng, s, 0.3, 1.5), rng);
    });

    runner.run("build_correlation", tol_ops, [](std::mt19937_64& rng) {
        std::uniform_int_distribution<int64_t> dh(2, 4), dw(5, 8), dc(1, 3);
        const Shape s = {dh(rng), dw(rng), dc(rng)};
        const TD left = rand_uniform<double>(rng, s, -1.0, 1.0);
        const TD right = rand_uniform<double>(rng, s, -1.0, 1.0);
        const int max_disp = 3;
        const TD w = rand_uniform<double>(rng, {s[0], s[1], max_disp + 1}, -1.0, 1.0);
        const double el = check_input_grad(
            [&](const TD& x) { return weighted(build_correlation(x, right, max_disp), w); }, left,
            rng);
        const double er = check_input_grad(
            [&](const TD& x) { return weighted(build_correlation(left, x, max_disp), w); }, right,
            rng);
        return std::max(el, er);
    });

    runner.run("corr_lookup", tol_ops, [](std::mt19937_64& rng) {
        std::uniform_int_distribution<int64_t> dh(2, 4), dw(4, 6);
        const int64_t h = dh(rng), w = dw(rng), dd = 5;
        const int radius = 2;
        const TD vol = rand_uniform<double>(rng, {h, w, dd}, -1.0, 1.0);
        // fractional part held in [0.1, 0.9] so probes stay on one linear piece
        TD disp = rand_uniform<double>(rng, {h, w, 1}, 0.1, 0.9);
        {
            auto d = disp.raw_data();
            std::uniform_int_distribution<int> base(0, 3);
            for (auto& v : d) v += base(rng);
        }
        const TD rw = rand_uniform<double>(rng, {h, w, 2 * radius + 1}, -1.0, 1.0);
        const double ev = check_input_grad(
            [&](const TD& x) { return weighted(corr_lookup(x, disp, radius), rw); }, vol, rng);
        const double ed = check_input_grad(
            [&](const TD& x) { return weighted(corr_lookup(vol, x, radius), rw); }, disp, rng);
        return std::max(ev, ed);
    });

    // GRU update head: ||delta_d||^2 w.r.t. every weight group
    runner.run("iterative_update_params", tol_full, [](std::mt19937_64& rng) {
        const MatcherHyper h = tiny_hyper();
        GruParams<double> gru = GruParams<double>::init(rng, h);
        gru.head2 = Conv2dParams<double>::he_init(rng, 3, h.head_mid, 1);
        const int64_t hh = 3, ww = 5;
        const TD hidden = rand_uniform<double>(rng, {hh, ww, h.hidden}, -1.0, 1.0);
        const TD context = rand_uniform<double>(rng, {hh, ww, h.channels}, -1.0, 1.0);
        const TD slice = rand_uniform<double>(rng, {hh, ww, 2 * h.radius + 1}, -1.0, 1.0);
        const TD d = rand_uniform<double>(rng, {hh, ww, 1}, 0.1, 2.0);
        auto loss_fn = [&]() {
            auto [h_new, delta] = iterative_update(hidden, context, slice, d, gru);
            return add(sum(square(delta)), mean(square(h_new)));
        };
        double worst = 0.0;
        NamedParams<double> params;
        gru.named_params(params, "gru");
        for (auto& [name, p] : params)
            worst = std::max(worst, check_param_grad(loss_fn, *p, rng, 4));
        return worst;
    });

    runner.run("converter_params", tol_full, [](std::mt19937_64& rng) {
        const int c = 6;
        ConverterParams<double> conv = ConverterParams<double>::init(rng, c);
        const TD f = rand_uniform<double>(rng, {4, 5, c}, -1.0, 1.0);
        auto loss_fn = [&]() { return sum(square(convert(f, conv))); };
        double worst = 0.0;
        NamedParams<double> params;
        conv.named_params(params, "converter");
        for (auto& [name, p] : params)
            worst = std::max(worst, check_param_grad(loss_fn, *p, rng, 4));
        // and the input path
        worst = std::max(worst, check_input_grad(
                                    [&](const TD& x) { return sum(square(convert(x, conv))); }, f,
                                    rng));
        return worst;
    });

    runner.run("channel_norm_distance", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng, 4, 3);
        const TD f2 = rand_away_from_zero(rng, s, 0.3, 1.5);
        return check_input_grad([&](const TD& x) { return channel_norm_distance(x, f2); },
                                rand_away_from_zero(rng, s, 0.3, 1.5), rng);
    });

    runner.run("triplet_contrastive_loss", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng, 4, 3);
        const TD pos = rand_away_from_zero(rng, s, 0.3, 1.5);
        const TD neg = rand_away_from_zero(rng, s, 0.3, 1.5);
        return check_input_grad(
            [&](const TD& x) { return triplet_contrastive_loss(x, pos, neg, 1.0); },
            rand_away_from_zero(rng, s, 0.3, 1.5), rng);
    });

    runner.run("distillation_loss", tol_ops, [](std::mt19937_64& rng) {
        const Shape s = random_hwc(rng, 4, 3);
        const TD teacher = rand_uniform<double>(rng, s, -1.0, 1.0);
        const TD fog = rand_uniform<double>(rng, s, 2.0, 3.0);  // offset keeps |x-t| off zero
        return check_input_grad(
            [&](const TD& x) { return distillation_loss(teacher, x, fog); },
            rand_uniform<double>(rng, s, 2.0, 3.0), rng);
    });

    // Full student loss w.r.t. every student parameter, sampled coordinates.
    runner.run("student_total_loss", tol_full, [](std::mt19937_64& rng) {
        const ExperimentConfig scfg = tiny_scene_config();
        const SceneData scene = generate_scene(rng(), scfg);
        const TrainSample<double> batch = TrainSample<double>::from_scene(scene);
        const MatcherHyper h = tiny_hyper();
        CfdModel<double> student = CfdModel<double>::init(rng, h);
        student.gru.head2 = Conv2dParams<double>::he_init(rng, 3, h.head_mid, 1);
        CfdModel<double> teacher = CfdModel<double>::init(rng, h);
        teacher.set_requires_grad(false);
        LossWeights<double> w;
        LossSwitches sw;
        sw.use_dist = true;
        sw.use_cont = true;
        sw.domains = TrainDomain::kMix;
        auto loss_fn = [&]() {
            return student_total_loss(batch, student, &teacher, w, sw).loss;
        };
        double worst = 0.0;
        for (auto& [name, p] : student.named_params())
            worst = std::max(worst, check_param_grad(loss_fn, *p, rng, 2));
        return worst;
    });

    return cases;
}

}  // namespace cfd
