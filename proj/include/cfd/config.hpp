// Declarative experiment configuration: one flat key=value file describes a
// run (dataset generation parameters, model hyperparameters, loss weights,
// optimizer schedule and ablation switches). Serialization uses a fixed field
// order and exact float formatting, so parse/serialize round-trips are
// idempotent and manifests can replay runs bit-identically.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace cfd {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    // run
    uint64_t seed = 1;
    std::string out_dir = "runs/out";
    std::string data_dir;
    std::string seeds = "1,2,3";  // ablation training seeds
    int workers = 0;              // 0 = hardware concurrency

    // synthetic dataset
    int image_h = 32;
    int image_w = 64;
    int n_scenes = 40;
    int n_eval = 8;
    int disp_min = 2;
    int disp_max = 12;
    int layers_min = 2;
    int layers_max = 4;
    double focal_px = 200.0;
    double baseline_m = 0.3;
    double beta_min = 0.03;
    double beta_max = 0.3;
    double airlight_min = 0.7;
    double airlight_max = 1.0;

    // model
    int channels = 32;
    int iters = 6;
    int max_disp = 6;
    int radius = 3;
    int hidden = 32;
    int head_mid = 16;

    // loss weights
    double lambda1 = 0.1;
    double lambda2 = 0.1;
    double gamma = 0.95;
    double margin = 1.0;

    // optimizer
    double lr = 4e-4;
    int steps = 600;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int log_every = 10;

    // ablation switches
    bool use_dist = false;
    bool use_cont = false;
    std::string train_domains = "mix";  // clean | fog | mix

    // file inputs for train-student / evaluate / render-fog
    std::string teacher_ckpt;
    std::string checkpoint;
    std::string eval_model = "student";  // student | teacher

    void validate() const;
    std::vector<uint64_t> seed_list() const;
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& key_value);
std::string serialize_config(const ExperimentConfig& cfg);

// Config snapshot plus input-file checksums, written next to every run's
// outputs. The manifest is itself a loadable config (checksums live in
// comments), so any run can be replayed from it.
std::string render_manifest(const ExperimentConfig& cfg, const std::vector<std::string>& inputs);

}  // namespace cfd
