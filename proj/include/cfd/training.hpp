// Teacher-student training. The teacher consumes paired clean and foggy
// stereo images and fuses both domains' converted features; the student has
// the same architecture, runs one domain at a time, and is trained with the
// gamma-decayed disparity loss plus feature distillation against the frozen
// teacher and a triplet contrastive term balancing the two domains.

#pragma once

#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cfd/checkpoint.hpp"
#include "cfd/config.hpp"
#include "cfd/converter.hpp"
#include "cfd/dataset.hpp"
#include "cfd/losses.hpp"
#include "cfd/matcher.hpp"
#include "cfd/metrics.hpp"

namespace cfd {

// Raised when training hits a non-finite loss or a gradient check fails;
// mapped to exit code 2 by the CLI.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename T>
struct LossWeights {
    T lambda1 = T(0.1);  // distillation
    T lambda2 = T(0.1);  // contrastive
    T gamma = T(0.95);
    T margin = T(1.0);
};

enum class TrainDomain { kClean, kFog, kMix };

inline TrainDomain parse_domain(const std::string& s) {
    if (s == "clean") return TrainDomain::kClean;
    if (s == "fog") return TrainDomain::kFog;
    if (s == "mix") return TrainDomain::kMix;
    throw ConfigError("train_domains must be clean, fog or mix, got '" + s + "'");
}

struct LossSwitches {
    bool use_dist = false;
    bool use_cont = false;
    TrainDomain domains = TrainDomain::kMix;
};

// Extractor + converter + recurrent matcher. One converter instance per
// model, applied identically to both domains.
template <typename T>
struct CfdModel {
    ExtractorParams<T> extractor;
    ConverterParams<T> converter;
    GruParams<T> gru;
    MatcherHyper hyper;

    static CfdModel init(std::mt19937_64& rng, const MatcherHyper& hyper) {
        CfdModel m;
        m.hyper = hyper;
        m.extractor = ExtractorParams<T>::init(rng, hyper);
        m.converter = ConverterParams<T>::init(rng, hyper.channels);
        m.gru = GruParams<T>::init(rng, hyper);
        return m;
    }

    NamedParams<T> named_params() {
        NamedParams<T> out;
        extractor.named_params(out, "extractor");
        converter.named_params(out, "converter");
        gru.named_params(out, "gru");
        return out;
    }

    void set_requires_grad(bool v) {
        for (auto& [name, t] : named_params()) t->set_requires_grad(v);
    }

    StereoNet<T> net() const { return StereoNet<T>{extractor, gru, hyper}; }
};

template <typename T>
using TeacherModel = CfdModel<T>;
template <typename T>
using StudentModel = CfdModel<T>;

inline MatcherHyper hyper_from_config(const ExperimentConfig& cfg) {
    MatcherHyper h;
    h.channels = cfg.channels;
    h.iters = cfg.iters;
    h.max_disp = cfg.max_disp;
    h.radius = cfg.radius;
    h.hidden = cfg.hidden;
    h.head_mid = cfg.head_mid;
    return h;
}

// ------------------------------ checkpoints --------------------------------

template <typename T>
void save_model(const std::string& path, CfdModel<T>& model) {
    auto entries = entries_from_params(model.named_params());
    CheckpointEntry meta;
    meta.name = "meta.hyper";
    meta.shape = {8};
    const MatcherHyper& h = model.hyper;
    meta.data = {static_cast<float>(h.image_channels), static_cast<float>(h.channels),
                 static_cast<float>(h.downsample),     static_cast<float>(h.iters),
                 static_cast<float>(h.max_disp),       static_cast<float>(h.radius),
                 static_cast<float>(h.hidden),         static_cast<float>(h.head_mid)};
    entries.push_back(std::move(meta));
    write_checkpoint(path, entries);
}

template <typename T>
CfdModel<T> load_model(const std::string& path) {
    const auto entries = read_checkpoint(path);
    const CheckpointEntry* meta = nullptr;
    for (const auto& e : entries)
        if (e.name == "meta.hyper") meta = &e;
    if (!meta || meta->data.size() != 8)
        throw std::runtime_error(path + ": checkpoint lacks meta.hyper");
    MatcherHyper h;
    h.image_channels = static_cast<int>(meta->data[0]);
    h.channels = static_cast<int>(meta->data[1]);
    h.downsample = static_cast<int>(meta->data[2]);
    h.iters = static_cast<int>(meta->data[3]);
    h.max_disp = static_cast<int>(meta->data[4]);
    h.radius = static_cast<int>(meta->data[5]);
    h.hidden = static_cast<int>(meta->data[6]);
    h.head_mid = static_cast<int>(meta->data[7]);
    std::mt19937_64 rng(0);
    CfdModel<T> model = CfdModel<T>::init(rng, h);
    auto params = model.named_params();
    load_params_from_entries(entries, params);
    return model;
}

// ------------------------------- optimizer ---------------------------------

template <typename T>
class Adam {
  public:
    Adam(std::vector<Tensor<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
         T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<size_t>(params_[i].numel()), T(0));
            v_[i].assign(static_cast<size_t>(params_[i].numel()), T(0));
        }
    }

    static Adam from_named(const NamedParams<T>& named, T lr, T beta1 = T(0.9),
                           T beta2 = T(0.999), T eps = T(1e-8)) {
        std::vector<Tensor<T>> params;
        params.reserve(named.size());
        for (const auto& [name, t] : named) params.push_back(*t);
        return Adam(std::move(params), lr, beta1, beta2, eps);
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }

    // Applies one update from the populated grads, then clears them.
    // Parameters that did not participate in the last graph are skipped.
    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(beta2_, static_cast<T>(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            if (!params_[i].has_grad()) continue;
            auto g = params_[i].grad();
            auto w = params_[i].raw_data();
            auto& m = m_[i];
            auto& v = v_[i];
            for (size_t j = 0; j < w.size(); ++j) {
                m[j] = beta1_ * m[j] + (T(1) - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (T(1) - beta2_) * g[j] * g[j];
                const T mhat = m[j] / bc1;
                const T vhat = v[j] / bc2;
                w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
            params_[i].zero_grad();
        }
    }

  private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
    T lr_, beta1_, beta2_, eps_;
};

// Step decay: the base rate is halved at each third of the run.
inline double lr_at_step(double lr0, int step, int total_steps) {
    const int third = step * 3 / std::max(1, total_steps);
    return lr0 * std::pow(0.5, std::min(third, 2));
}

// ------------------------------- forwards ----------------------------------

template <typename T>
struct TrainSample {
    Tensor<T> clean_l, clean_r, fog_l, fog_r;
    const MaskedGrid<float>* gt = nullptr;
    int scene_id = 0;

    static TrainSample from_scene(const SceneData& s, int id = 0) {
        TrainSample b;
        b.clean_l = tensor_from_image<T>(s.clean_l);
        b.clean_r = tensor_from_image<T>(s.clean_r);
        b.fog_l = tensor_from_image<T>(s.fog_l);
        b.fog_r = tensor_from_image<T>(s.fog_r);
        b.gt = &s.disp_l;
        b.scene_id = id;
        return b;
    }
};

template <typename T>
struct TeacherForward {
    DisparitySequence<T> seq;
    Tensor<T> fused_l, fused_r;
};

// fused = FC(F_clean) + FC(F_fog) per view; disparities are predicted from
// the fused features.
template <typename T>
TeacherForward<T> teacher_forward(const Tensor<T>& clean_l, const Tensor<T>& clean_r,
                                  const Tensor<T>& fog_l, const Tensor<T>& fog_r,
                                  const CfdModel<T>& model, int iters = -1) {
    if (clean_l.shape() != fog_l.shape() || clean_r.shape() != fog_r.shape() ||
        clean_l.shape() != clean_r.shape())
        throw std::invalid_argument("teacher_forward: all four images must share one size");
    TeacherForward<T> out;
    const Tensor<T> fc_l = extract_features(clean_l, model.extractor);
    const Tensor<T> ff_l = extract_features(fog_l, model.extractor);
    const Tensor<T> fc_r = extract_features(clean_r, model.extractor);
    const Tensor<T> ff_r = extract_features(fog_r, model.extractor);
    out.fused_l = add(convert(fc_l, model.converter), convert(ff_l, model.converter));
    out.fused_r = add(convert(fc_r, model.converter), convert(ff_r, model.converter));
    out.seq = predict(clean_l, clean_r, model.net(),
                      std::make_pair(out.fused_l, out.fused_r), iters);
    return out;
}

template <typename T>
struct StudentForward {
    Tensor<T> raw_l, raw_r;    // extractor output
    Tensor<T> conv_l, conv_r;  // converter output, fed to the matcher
    DisparitySequence<T> seq;
};

// The student always runs extractor -> converter -> matcher on one domain.
template <typename T>
StudentForward<T> student_forward(const Tensor<T>& left, const Tensor<T>& right,
                                  const CfdModel<T>& model, int iters = -1) {
    StudentForward<T> out;
    out.raw_l = extract_features(left, model.extractor);
    out.raw_r = extract_features(right, model.extractor);
    out.conv_l = convert(out.raw_l, model.converter);
    out.conv_r = convert(out.raw_r, model.converter);
    out.seq = predict(left, right, model.net(), std::make_pair(out.conv_l, out.conv_r), iters);
    return out;
}

// --------------------------- student total loss ----------------------------

struct LossBreakdown {
    double disp_clean = 0.0;
    double disp_fog = 0.0;
    double dist = 0.0;
    double cont = 0.0;
    double total = 0.0;
};

template <typename T>
struct StudentStep {
    Tensor<T> loss;
    LossBreakdown breakdown;
    std::optional<DisparitySequence<T>> clean_seq, fog_seq;
};

// total = L_disp(clean) + L_disp(fog) + lambda1 * L_dist + lambda2 * L_cont,
// with terms present according to the switches. The teacher is never touched
// by gradients; its forward runs without recording.
template <typename T>
StudentStep<T> student_total_loss(const TrainSample<T>& batch, const CfdModel<T>& student,
                                  const CfdModel<T>* teacher, const LossWeights<T>& w,
                                  const LossSwitches& sw) {
    if ((sw.use_dist || sw.use_cont) && sw.domains != TrainDomain::kMix)
        throw std::invalid_argument("student_total_loss: feature losses require mixed domains");
    if (sw.use_dist && teacher == nullptr)
        throw std::invalid_argument("student_total_loss: distillation requires a teacher");

    StudentStep<T> out;
    const bool need_clean = sw.domains != TrainDomain::kFog;
    const bool need_fog = sw.domains != TrainDomain::kClean;

    std::optional<StudentForward<T>> clean_fw, fog_fw;
    if (need_clean) clean_fw = student_forward(batch.clean_l, batch.clean_r, student);
    if (need_fog) fog_fw = student_forward(batch.fog_l, batch.fog_r, student);

    Tensor<T> total = Tensor<T>::scalar(T(0));
    if (clean_fw) {
        const Tensor<T> l = disparity_seq_loss(clean_fw->seq.preds, *batch.gt, w.gamma);
        out.breakdown.disp_clean = static_cast<double>(l.item());
        total = add(total, l);
        out.clean_seq = clean_fw->seq;
    }
    if (fog_fw) {
        const Tensor<T> l = disparity_seq_loss(fog_fw->seq.preds, *batch.gt, w.gamma);
        out.breakdown.disp_fog = static_cast<double>(l.item());
        total = add(total, l);
        out.fog_seq = fog_fw->seq;
    }
    if (sw.use_dist) {
        Tensor<T> fused_l, fused_r;
        {
            NoGradGuard ng;
            TeacherForward<T> tf = teacher_forward(batch.clean_l, batch.clean_r, batch.fog_l,
                                                   batch.fog_r, *teacher);
            fused_l = tf.fused_l;
            fused_r = tf.fused_r;
        }
        const Tensor<T> dist = mul_scalar(
            add(distillation_loss(fused_l, clean_fw->conv_l, fog_fw->conv_l),
                distillation_loss(fused_r, clean_fw->conv_r, fog_fw->conv_r)),
            T(0.5));
        out.breakdown.dist = static_cast<double>(dist.item());
        total = add(total, mul_scalar(dist, w.lambda1));
    }
    if (sw.use_cont) {
        const Tensor<T> cont = mul_scalar(
            add(triplet_contrastive_loss(fog_fw->conv_l, clean_fw->conv_l, fog_fw->raw_l,
                                         w.margin),
                triplet_contrastive_loss(fog_fw->conv_r, clean_fw->conv_r, fog_fw->raw_r,
                                         w.margin)),
            T(0.5));
        out.breakdown.cont = static_cast<double>(cont.item());
        total = add(total, mul_scalar(cont, w.lambda2));
    }
    out.breakdown.total = static_cast<double>(total.item());
    out.loss = total;
    return out;
}

// ------------------------------ training loops -----------------------------

template <typename T>
LossWeights<T> weights_from_config(const ExperimentConfig& cfg) {
    LossWeights<T> w;
    w.lambda1 = static_cast<T>(cfg.lambda1);
    w.lambda2 = static_cast<T>(cfg.lambda2);
    w.gamma = static_cast<T>(cfg.gamma);
    w.margin = static_cast<T>(cfg.margin);
    return w;
}

inline LossSwitches switches_from_config(const ExperimentConfig& cfg) {
    LossSwitches sw;
    sw.use_dist = cfg.use_dist;
    sw.use_cont = cfg.use_cont;
    sw.domains = parse_domain(cfg.train_domains);
    return sw;
}

namespace detail_train {

inline void append_csv(std::string& csv, const char* fmt, ...) {
    char buf[512];
    va_list args;
    va_start(args, fmt);
    std::vsnprintf(buf, sizeof(buf), fmt, args);
    va_end(args);
    csv += buf;
}

template <typename T>
double epe_of(const Tensor<T>& pred, const MaskedGrid<float>& gt) {
    const Grid<float> g = grid_from_tensor<float>(pred);
    return stereo_eval(g, gt).epe;
}

}  // namespace detail_train

template <typename T>
struct TrainResult {
    CfdModel<T> model;
    std::string csv;
};

// Trains the dual-input teacher with the gamma-decayed disparity loss.
template <typename T>
TrainResult<T> train_teacher(const ExperimentConfig& cfg,
                             const std::vector<SceneData>& train_scenes, uint64_t seed) {
    if (train_scenes.empty()) throw std::invalid_argument("train_teacher: no scenes");
    std::mt19937_64 rng(seed);
    TrainResult<T> res;
    res.model = CfdModel<T>::init(rng, hyper_from_config(cfg));
    const LossWeights<T> w = weights_from_config<T>(cfg);
    Adam<T> opt = Adam<T>::from_named(res.model.named_params(), static_cast<T>(cfg.lr),
                                      static_cast<T>(cfg.adam_beta1),
                                      static_cast<T>(cfg.adam_beta2),
                                      static_cast<T>(cfg.adam_eps));
    std::vector<TrainSample<T>> samples;
    samples.reserve(train_scenes.size());
    for (size_t i = 0; i < train_scenes.size(); ++i)
        samples.push_back(TrainSample<T>::from_scene(train_scenes[i], static_cast<int>(i)));
    std::uniform_int_distribution<size_t> pick(0, samples.size() - 1);

    res.csv = "step,lr,loss,epe\n";
    for (int step = 0; step < cfg.steps; ++step) {
        const TrainSample<T>& b = samples[pick(rng)];
        const double lr = lr_at_step(cfg.lr, step, cfg.steps);
        opt.set_lr(static_cast<T>(lr));
        TeacherForward<T> fw =
            teacher_forward(b.clean_l, b.clean_r, b.fog_l, b.fog_r, res.model);
        const Tensor<T> loss = disparity_seq_loss(fw.seq.preds, *b.gt, w.gamma);
        const double lval = static_cast<double>(loss.item());
        if (!std::isfinite(lval))
            throw NumericError("train_teacher: non-finite loss at step " + std::to_string(step) +
                               " on scene " + std::to_string(b.scene_id));
        loss.backward();
        opt.step();
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps)
            detail_train::append_csv(res.csv, "%d,%.9g,%.9g,%.9g\n", step, lr, lval,
                                     detail_train::epe_of(fw.seq.final_pred(), *b.gt));
    }
    return res;
}

// Trains the student against a frozen teacher (required only when the
// distillation switch is on).
template <typename T>
TrainResult<T> train_student(const ExperimentConfig& cfg,
                             const std::vector<SceneData>& train_scenes, uint64_t seed,
                             const CfdModel<T>* teacher) {
    if (train_scenes.empty()) throw std::invalid_argument("train_student: no scenes");
    const LossSwitches sw = switches_from_config(cfg);
    if (sw.use_dist && teacher == nullptr)
        throw std::invalid_argument("train_student: distillation enabled but no teacher given");
    std::mt19937_64 rng(seed);
    TrainResult<T> res;
    res.model = CfdModel<T>::init(rng, hyper_from_config(cfg));
    const LossWeights<T> w = weights_from_config<T>(cfg);
    Adam<T> opt = Adam<T>::from_named(res.model.named_params(), static_cast<T>(cfg.lr),
                                      static_cast<T>(cfg.adam_beta1),
                                      static_cast<T>(cfg.adam_beta2),
                                      static_cast<T>(cfg.adam_eps));
    std::vector<TrainSample<T>> samples;
    samples.reserve(train_scenes.size());
    for (size_t i = 0; i < train_scenes.size(); ++i)
        samples.push_back(TrainSample<T>::from_scene(train_scenes[i], static_cast<int>(i)));
    std::uniform_int_distribution<size_t> pick(0, samples.size() - 1);

    res.csv = "step,lr,total,disp_clean,disp_fog,dist,cont,epe\n";
    for (int step = 0; step < cfg.steps; ++step) {
        const TrainSample<T>& b = samples[pick(rng)];
        const double lr = lr_at_step(cfg.lr, step, cfg.steps);
        opt.set_lr(static_cast<T>(lr));
        StudentStep<T> st = student_total_loss(b, res.model, teacher, w, sw);
        if (!std::isfinite(st.breakdown.total)) {
            char msg[256];
            std::snprintf(msg, sizeof(msg),
                          "train_student: non-finite loss at step %d on scene %d "
                          "(disp_clean=%g disp_fog=%g dist=%g cont=%g)",
                          step, b.scene_id, st.breakdown.disp_clean, st.breakdown.disp_fog,
                          st.breakdown.dist, st.breakdown.cont);
            throw NumericError(msg);
        }
        st.loss.backward();
        opt.step();
        if (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            const auto& seq = st.fog_seq ? *st.fog_seq : *st.clean_seq;
            detail_train::append_csv(res.csv, "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", step, lr,
                                     st.breakdown.total, st.breakdown.disp_clean,
                                     st.breakdown.disp_fog, st.breakdown.dist, st.breakdown.cont,
                                     detail_train::epe_of(seq.final_pred(), *b.gt));
        }
    }
    return res;
}

// -------------------------------- evaluation --------------------------------

struct DomainEval {
    StereoEval clean, fog;
};

inline StereoEval average_evals(const std::vector<StereoEval>& evals) {
    StereoEval agg;
    for (const auto& e : evals) {
        agg.epe += e.epe;
        agg.p1 += e.p1;
        agg.px3 += e.px3;
        agg.d1 += e.d1;
        agg.n += e.n;
    }
    const double k = static_cast<double>(evals.size());
    if (k > 0) {
        agg.epe /= k;
        agg.p1 /= k;
        agg.px3 /= k;
        agg.d1 /= k;
    }
    return agg;
}

// Per-scene final-iterate evaluation; metrics averaged per image.
template <typename T>
DomainEval evaluate_student(const CfdModel<T>& model, const std::vector<SceneData>& scenes) {
    NoGradGuard ng;
    std::vector<StereoEval> clean, fog;
    for (const auto& s : scenes) {
        TrainSample<T> b = TrainSample<T>::from_scene(s);
        const StudentForward<T> fc = student_forward(b.clean_l, b.clean_r, model);
        clean.push_back(stereo_eval(grid_from_tensor<float>(fc.seq.final_pred()), s.disp_l));
        const StudentForward<T> ff = student_forward(b.fog_l, b.fog_r, model);
        fog.push_back(stereo_eval(grid_from_tensor<float>(ff.seq.final_pred()), s.disp_l));
    }
    return DomainEval{average_evals(clean), average_evals(fog)};
}

// The teacher needs both domains at once; one number per scene.
template <typename T>
StereoEval evaluate_teacher(const CfdModel<T>& model, const std::vector<SceneData>& scenes) {
    NoGradGuard ng;
    std::vector<StereoEval> evals;
    for (const auto& s : scenes) {
        TrainSample<T> b = TrainSample<T>::from_scene(s);
        const TeacherForward<T> fw =
            teacher_forward(b.clean_l, b.clean_r, b.fog_l, b.fog_r, model);
        evals.push_back(stereo_eval(grid_from_tensor<float>(fw.seq.final_pred()), s.disp_l));
    }
    return average_evals(evals);
}

}  // namespace cfd
