// Ablation lattice: trains and evaluates the seven standard configurations
// (students trained on clean / fog / mixed data, the dual-input teacher, and
// the mixed student with distillation, contrastive and combined losses) over
// a list of seeds, in parallel across runs.

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "cfd/config.hpp"
#include "cfd/dataset.hpp"

namespace cfd {

struct AblationRowSpec {
    std::string name;
    bool is_teacher = false;
    bool use_dist = false;
    bool use_cont = false;
    std::string train_domains = "mix";
};

// Fixed row order; the two distillation rows depend on the per-seed teacher.
const std::vector<AblationRowSpec>& ablation_rows();

struct AblationCell {
    double clean_epe = 0.0, fog_epe = 0.0;
    double clean_p1 = 0.0, fog_p1 = 0.0;
};

struct AblationResult {
    std::vector<std::string> row_names;
    std::vector<AblationCell> mean;                 // [row]
    std::vector<std::vector<AblationCell>> per_seed;  // [row][seed]
    std::vector<uint64_t> seeds;
    std::string summary_csv;
    std::string per_seed_csv;
    std::string summary_text;

    const AblationCell& row(const std::string& name) const;
};

// write_artifacts stores per-run checkpoints and training logs under
// cfg.out_dir. progress may be null.
AblationResult run_ablation(const ExperimentConfig& cfg, std::ostream* progress,
                            bool write_artifacts);

// Deterministic per-run training seed.
uint64_t run_seed(uint64_t base, const std::string& row_name, uint64_t seed);

}  // namespace cfd
