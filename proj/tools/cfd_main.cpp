// Command-line surface for the fog-robust stereo pipeline: synthetic data
// generation, fog rendering, teacher/student training, evaluation, the
// finite-difference gradient check and the full ablation lattice.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 numeric failure.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "cfd/ablate.hpp"
#include "cfd/gradcheck.hpp"
#include "cfd/io.hpp"
#include "cfd/training.hpp"

namespace {

using namespace cfd;

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
};

ExperimentConfig resolve_config(const CommonArgs& args) {
    ExperimentConfig cfg;
    if (!args.config_path.empty()) cfg = load_config_file(args.config_path);
    for (const auto& kv : args.overrides) apply_override(cfg, kv);
    cfg.validate();
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "key=value config file");
    cmd->add_option("--set", args.overrides, "override a config key (key=value)")
        ->take_all();
}

void write_manifest_file(const ExperimentConfig& cfg, const std::vector<std::string>& inputs) {
    make_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/manifest.cfg", render_manifest(cfg, inputs));
}

std::vector<SceneData> load_or_generate(const ExperimentConfig& cfg) {
    if (!cfg.data_dir.empty()) {
        std::vector<SceneData> scenes;
        for (const auto& rec : read_dataset_index(cfg.data_dir)) scenes.push_back(load_scene(rec));
        if (static_cast<int>(scenes.size()) != cfg.n_scenes)
            throw ConfigError("dataset has " + std::to_string(scenes.size()) +
                              " scenes but config expects " + std::to_string(cfg.n_scenes));
        return scenes;
    }
    return generate_synthetic_dataset(cfg);
}

std::vector<std::string> dataset_inputs(const ExperimentConfig& cfg) {
    if (cfg.data_dir.empty()) return {};
    return {cfg.data_dir + "/dataset.csv"};
}

int cmd_synth_data(const ExperimentConfig& cfg) {
    if (cfg.data_dir.empty()) throw ConfigError("synth-data: set data_dir");
    const std::string index = write_dataset(cfg.data_dir, cfg);
    write_text_file(cfg.data_dir + "/manifest.cfg", render_manifest(cfg, {index}));
    std::printf("wrote %d scenes under %s\n", cfg.n_scenes, cfg.data_dir.c_str());
    return 0;
}

int cmd_render_fog(const ExperimentConfig& cfg, const std::string& image_path,
                   const std::string& disp_path, const std::string& out_path, double beta,
                   double airlight) {
    const Image<float> clean = read_ppm(image_path);
    const MaskedGrid<float> disp(read_pfm(disp_path), true);
    if (disp.h() != clean.h || disp.w() != clean.w)
        throw ConfigError("render-fog: image and disparity dimensions differ");
    const CameraRig rig(cfg.focal_px, cfg.baseline_m);
    const FogParams<float> fog(static_cast<float>(beta), {static_cast<float>(airlight)});
    const MaskedGrid<float> depth = disparity_to_depth(disp, rig);
    write_ppm(out_path, render_fog(clean, depth, fog));
    write_manifest_file(cfg, {image_path, disp_path});
    std::printf("rendered %s (beta=%g, airlight=%g)\n", out_path.c_str(), beta, airlight);
    return 0;
}

int cmd_train_teacher(const ExperimentConfig& cfg) {
    const std::vector<SceneData> scenes = load_or_generate(cfg);
    const std::vector<SceneData> train(scenes.begin(), scenes.end() - cfg.n_eval);
    const std::vector<SceneData> eval_scenes(scenes.end() - cfg.n_eval, scenes.end());
    TrainResult<float> res = train_teacher<float>(cfg, train, cfg.seed);
    make_directories(cfg.out_dir);
    save_model(cfg.out_dir + "/teacher.cfdw", res.model);
    write_text_file(cfg.out_dir + "/teacher_train.csv", res.csv);
    write_manifest_file(cfg, dataset_inputs(cfg));
    const StereoEval ev = evaluate_teacher(res.model, eval_scenes);
    std::printf("teacher trained: eval epe=%.4f p1=%.4f (%s/teacher.cfdw)\n", ev.epe, ev.p1,
                cfg.out_dir.c_str());
    return 0;
}

int cmd_train_student(const ExperimentConfig& cfg) {
    const std::vector<SceneData> scenes = load_or_generate(cfg);
    const std::vector<SceneData> train(scenes.begin(), scenes.end() - cfg.n_eval);
    const std::vector<SceneData> eval_scenes(scenes.end() - cfg.n_eval, scenes.end());
    CfdModel<float> teacher;
    const CfdModel<float>* teacher_ptr = nullptr;
    std::vector<std::string> inputs = dataset_inputs(cfg);
    if (cfg.use_dist) {
        if (cfg.teacher_ckpt.empty())
            throw ConfigError("train-student: use_dist requires teacher_ckpt");
        teacher = load_model<float>(cfg.teacher_ckpt);
        teacher.set_requires_grad(false);
        teacher_ptr = &teacher;
        inputs.push_back(cfg.teacher_ckpt);
    }
    TrainResult<float> res = train_student<float>(cfg, train, cfg.seed, teacher_ptr);
    make_directories(cfg.out_dir);
    save_model(cfg.out_dir + "/student.cfdw", res.model);
    write_text_file(cfg.out_dir + "/student_train.csv", res.csv);
    write_manifest_file(cfg, inputs);
    const DomainEval ev = evaluate_student(res.model, eval_scenes);
    std::printf("student trained: eval clean_epe=%.4f fog_epe=%.4f (%s/student.cfdw)\n",
                ev.clean.epe, ev.fog.epe, cfg.out_dir.c_str());
    return 0;
}

void append_eval_row(std::string& csv, const std::string& scene, const std::string& domain,
                     const StereoEval& se, const DepthEval& de) {
    char buf[320];
    std::snprintf(buf, sizeof(buf),
                  "%s,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                  scene.c_str(), domain.c_str(), se.epe, se.p1, se.px3, se.d1, de.rmse, de.mae,
                  de.srd, de.ard, de.silog, de.delta1, de.delta2, 100.0 * de.delta3);
    csv += buf;
}

constexpr const char* kEvalHeader =
    "scene,domain,epe,p1,px3,d1,rmse,mae,srd,ard,silog,delta1,delta2,delta3_pct\n";

// File mode: evaluate one predicted disparity map against ground truth.
int cmd_evaluate_files(const ExperimentConfig& cfg, const std::string& pred_path,
                       const std::string& gt_path) {
    const Grid<float> pred = read_pfm(pred_path);
    const MaskedGrid<float> gt(read_pfm(gt_path), true);
    const CameraRig rig(cfg.focal_px, cfg.baseline_m);
    const StereoEval se = stereo_eval(pred, gt);
    const DepthEval de = disparity_depth_bridge(pred, disparity_to_depth(gt, rig), rig);
    std::string csv = kEvalHeader;
    append_eval_row(csv, pred_path, "file", se, de);
    std::fputs(csv.c_str(), stdout);
    make_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/eval.csv", csv);
    write_manifest_file(cfg, {pred_path, gt_path});
    return 0;
}

int cmd_evaluate(const ExperimentConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("evaluate: set checkpoint=<path>");
    CfdModel<float> model = load_model<float>(cfg.checkpoint);
    const std::vector<SceneData> scenes = load_or_generate(cfg);
    const std::vector<SceneData> eval_scenes(scenes.end() - cfg.n_eval, scenes.end());
    const CameraRig rig(cfg.focal_px, cfg.baseline_m);
    std::string csv = kEvalHeader;
    NoGradGuard ng;
    std::vector<StereoEval> clean_se, fog_se;
    for (size_t i = 0; i < eval_scenes.size(); ++i) {
        const SceneData& s = eval_scenes[i];
        const TrainSample<float> b = TrainSample<float>::from_scene(s, static_cast<int>(i));
        const MaskedGrid<float> gt_depth = disparity_to_depth(s.disp_l, rig);
        const std::string name = "eval_" + std::to_string(i);
        if (cfg.eval_model == "teacher") {
            const auto fw = teacher_forward(b.clean_l, b.clean_r, b.fog_l, b.fog_r, model);
            const Grid<float> pred = grid_from_tensor<float>(fw.seq.final_pred());
            const StereoEval se = stereo_eval(pred, s.disp_l);
            append_eval_row(csv, name, "dual", se, disparity_depth_bridge(pred, gt_depth, rig));
            clean_se.push_back(se);
        } else {
            const auto fc = student_forward(b.clean_l, b.clean_r, model);
            const Grid<float> pc = grid_from_tensor<float>(fc.seq.final_pred());
            const StereoEval sec = stereo_eval(pc, s.disp_l);
            append_eval_row(csv, name, "clean", sec, disparity_depth_bridge(pc, gt_depth, rig));
            clean_se.push_back(sec);
            const auto ff = student_forward(b.fog_l, b.fog_r, model);
            const Grid<float> pf = grid_from_tensor<float>(ff.seq.final_pred());
            const StereoEval sef = stereo_eval(pf, s.disp_l);
            append_eval_row(csv, name, "fog", sef, disparity_depth_bridge(pf, gt_depth, rig));
            fog_se.push_back(sef);
        }
    }
    const StereoEval agg_clean = average_evals(clean_se);
    char buf[160];
    if (cfg.eval_model == "teacher") {
        std::snprintf(buf, sizeof(buf), "aggregate,dual,%.9g,%.9g,%.9g,%.9g,,,,,,,,\n",
                      agg_clean.epe, agg_clean.p1, agg_clean.px3, agg_clean.d1);
        csv += buf;
        std::printf("teacher (dual input): epe=%.4f p1=%.4f\n", agg_clean.epe, agg_clean.p1);
    } else {
        const StereoEval agg_fog = average_evals(fog_se);
        std::snprintf(buf, sizeof(buf), "aggregate,clean,%.9g,%.9g,%.9g,%.9g,,,,,,,,\n",
                      agg_clean.epe, agg_clean.p1, agg_clean.px3, agg_clean.d1);
        csv += buf;
        std::snprintf(buf, sizeof(buf), "aggregate,fog,%.9g,%.9g,%.9g,%.9g,,,,,,,,\n",
                      agg_fog.epe, agg_fog.p1, agg_fog.px3, agg_fog.d1);
        csv += buf;
        std::printf("student: clean epe=%.4f  fog epe=%.4f\n", agg_clean.epe, agg_fog.epe);
    }
    make_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/eval.csv", csv);
    std::vector<std::string> inputs = dataset_inputs(cfg);
    inputs.push_back(cfg.checkpoint);
    write_manifest_file(cfg, inputs);
    return 0;
}

int cmd_gradcheck(uint64_t seed, int instances) {
    const auto cases = run_gradcheck_suite(seed, instances);
    for (const auto& c : cases)
        std::printf("[%s] %-26s instances=%d max_err=%.3e tol=%.0e\n", c.pass ? "PASS" : "FAIL",
                    c.name.c_str(), c.instances, c.max_err, c.tol);
    if (!all_passed(cases)) {
        std::fprintf(stderr, "gradcheck: FAILED\n");
        return 2;
    }
    std::printf("gradcheck: all %zu cases passed\n", cases.size());
    return 0;
}

int cmd_ablate(const ExperimentConfig& cfg) {
    const AblationResult res = run_ablation(cfg, &std::cout, true);
    make_directories(cfg.out_dir);
    write_text_file(cfg.out_dir + "/summary.csv", res.summary_csv);
    write_text_file(cfg.out_dir + "/per_seed.csv", res.per_seed_csv);
    write_text_file(cfg.out_dir + "/summary.txt", res.summary_text);
    write_manifest_file(cfg, dataset_inputs(cfg));
    std::fputs(res.summary_text.c_str(), stdout);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"contrastive feature distillation for stereo matching in fog"};
    app.require_subcommand(1);

    CommonArgs synth_args, fog_args, teacher_args, student_args, eval_args, ablate_args;
    std::string fog_image, fog_disp, fog_out;
    double fog_beta = 0.1, fog_airlight = 0.8;
    std::string eval_pred, eval_gt;
    uint64_t gc_seed = 7;
    int gc_instances = 20;

    auto* synth = app.add_subcommand("synth-data", "generate the synthetic stereo dataset");
    add_common(synth, synth_args);

    auto* fogc = app.add_subcommand("render-fog", "render fog onto a clean image");
    add_common(fogc, fog_args);
    fogc->add_option("--image", fog_image, "clean PPM image")->required();
    fogc->add_option("--disp", fog_disp, "disparity PFM")->required();
    fogc->add_option("--out", fog_out, "output PPM")->required();
    fogc->add_option("--beta", fog_beta, "attenuation coefficient (1/m)");
    fogc->add_option("--airlight", fog_airlight, "atmospheric light in [0,1]");

    auto* teach = app.add_subcommand("train-teacher", "train the dual-input teacher");
    add_common(teach, teacher_args);

    auto* stud = app.add_subcommand("train-student", "train the student model");
    add_common(stud, student_args);

    auto* ev = app.add_subcommand("evaluate", "evaluate a checkpoint or a disparity file");
    add_common(ev, eval_args);
    ev->add_option("--pred", eval_pred, "predicted disparity PFM (file mode)");
    ev->add_option("--gt", eval_gt, "ground-truth disparity PFM (file mode)");

    auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gc->add_option("--seed", gc_seed, "suite seed");
    gc->add_option("--instances", gc_instances, "instances per case");

    auto* abl = app.add_subcommand("ablate", "run the seven-configuration ablation lattice");
    add_common(abl, ablate_args);

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth_data(resolve_config(synth_args));
        if (fogc->parsed())
            return cmd_render_fog(resolve_config(fog_args), fog_image, fog_disp, fog_out,
                                  fog_beta, fog_airlight);
        if (teach->parsed()) return cmd_train_teacher(resolve_config(teacher_args));
        if (stud->parsed()) return cmd_train_student(resolve_config(student_args));
        if (ev->parsed()) {
            const ExperimentConfig cfg = resolve_config(eval_args);
            if (!eval_pred.empty() || !eval_gt.empty()) {
                if (eval_pred.empty() || eval_gt.empty())
                    throw ConfigError("evaluate: file mode needs both --pred and --gt");
                return cmd_evaluate_files(cfg, eval_pred, eval_gt);
            }
            return cmd_evaluate(cfg);
        }
        if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_instances);
        if (abl->parsed()) return cmd_ablate(resolve_config(ablate_args));
    } catch (const cfd::NumericError& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
