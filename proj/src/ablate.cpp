#include "cfd/ablate.hpp"

#include <atomic>
#include <cstdio>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include "cfd/io.hpp"
#include "cfd/training.hpp"

namespace cfd {

const std::vector<AblationRowSpec>& ablation_rows() {
    static const std::vector<AblationRowSpec> rows = {
        {"student_c", false, false, false, "clean"},
        {"student_f", false, false, false, "fog"},
        {"student_mix", false, false, false, "mix"},
        {"teacher", true, false, false, "mix"},
        {"student_dist", false, true, false, "mix"},
        {"student_cont", false, false, true, "mix"},
        {"student_dist_cont", false, true, true, "mix"},
    };
    return rows;
}

const AblationCell& AblationResult::row(const std::string& name) const {
    for (size_t i = 0; i < row_names.size(); ++i)
        if (row_names[i] == name) return mean[i];
    throw std::out_of_range("ablation: no row named " + name);
}

uint64_t run_seed(uint64_t base, const std::string& row_name, uint64_t seed) {
    uint64_t h = 1469598103934665603ull ^ base;
    for (char c : row_name) {
        h ^= static_cast<uint8_t>(c);
        h *= 1099511628211ull;
    }
    // keep the raw training seed mixed in so seed lists stay meaningful
    return h ^ (seed * 0x9e3779b97f4a7c15ull);
}

namespace {

struct RunTask {
    size_t row_idx;
    size_t seed_idx;
};

// Executes tasks from a shared queue on n worker threads. Each training run
// is single-threaded; parallelism is across independent runs only.
void run_tasks(const std::vector<RunTask>& tasks, int workers,
               const std::function<void(const RunTask&)>& fn) {
    std::atomic<size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= tasks.size()) return;
            fn(tasks[i]);
        }
    };
    const int n = std::max(1, std::min<int>(workers, static_cast<int>(tasks.size())));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

ExperimentConfig config_for_row(const ExperimentConfig& base, const AblationRowSpec& row) {
    ExperimentConfig cfg = base;
    cfg.use_dist = row.use_dist;
    cfg.use_cont = row.use_cont;
    cfg.train_domains = row.train_domains;
    return cfg;
}

}  // namespace

AblationResult run_ablation(const ExperimentConfig& cfg, std::ostream* progress,
                            bool write_artifacts) {
    cfg.validate();
    const auto& rows = ablation_rows();
    const std::vector<uint64_t> seeds = cfg.seed_list();

    // One dataset for the whole lattice, derived from cfg.seed; the training
    // seeds vary model init and sampling only.
    std::vector<SceneData> scenes;
    if (!cfg.data_dir.empty()) {
        for (const auto& rec : read_dataset_index(cfg.data_dir)) scenes.push_back(load_scene(rec));
        if (static_cast<int>(scenes.size()) != cfg.n_scenes)
            throw ConfigError("ablate: dataset has " + std::to_string(scenes.size()) +
                              " scenes but config expects " + std::to_string(cfg.n_scenes));
    } else {
        scenes = generate_synthetic_dataset(cfg);
    }
    const std::vector<SceneData> train_scenes(scenes.begin(),
                                              scenes.end() - cfg.n_eval);
    const std::vector<SceneData> eval_scenes(scenes.end() - cfg.n_eval, scenes.end());

    AblationResult res;
    res.seeds = seeds;
    res.per_seed.assign(rows.size(), std::vector<AblationCell>(seeds.size()));
    for (const auto& r : rows) res.row_names.push_back(r.name);

    std::map<size_t, CfdModel<float>> teachers;  // seed_idx -> trained teacher
    std::mutex mtx;  // guards teachers + progress stream

    auto artifacts_dir = [&](const AblationRowSpec& row, uint64_t seed) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "/%s/seed_%llu", row.name.c_str(),
                      static_cast<unsigned long long>(seed));
        return cfg.out_dir + buf;
    };

    auto execute = [&](const RunTask& task) {
        const AblationRowSpec& row = rows[task.row_idx];
        const uint64_t seed = seeds[task.seed_idx];
        const ExperimentConfig run_cfg = config_for_row(cfg, row);
        const uint64_t tseed = run_seed(cfg.seed, row.name, seed);

        TrainResult<float> tr;
        AblationCell cell;
        if (row.is_teacher) {
            tr = train_teacher<float>(run_cfg, train_scenes, tseed);
            const StereoEval ev = evaluate_teacher(tr.model, eval_scenes);
            cell = {ev.epe, ev.epe, ev.p1, ev.p1};
            std::lock_guard<std::mutex> lock(mtx);
            teachers.emplace(task.seed_idx, tr.model);
        } else {
            const CfdModel<float>* teacher = nullptr;
            if (row.use_dist) {
                std::lock_guard<std::mutex> lock(mtx);
                teacher = &teachers.at(task.seed_idx);
            }
            tr = train_student<float>(run_cfg, train_scenes, tseed, teacher);
            const DomainEval ev = evaluate_student(tr.model, eval_scenes);
            cell = {ev.clean.epe, ev.fog.epe, ev.clean.p1, ev.fog.p1};
        }
        res.per_seed[task.row_idx][task.seed_idx] = cell;

        if (write_artifacts) {
            const std::string dir = artifacts_dir(row, seed);
            make_directories(dir);
            save_model(dir + "/checkpoint.cfdw", tr.model);
            write_text_file(dir + "/train_log.csv", tr.csv);
        }
        if (progress) {
            std::lock_guard<std::mutex> lock(mtx);
            char line[160];
            std::snprintf(line, sizeof(line),
                          "[ablate] %-18s seed=%llu  clean_epe=%.3f fog_epe=%.3f\n",
                          row.name.c_str(), static_cast<unsigned long long>(seed), cell.clean_epe,
                          cell.fog_epe);
            (*progress) << line << std::flush;
        }
    };

    const int workers = cfg.workers > 0 ? cfg.workers
                                        : std::max(1u, std::thread::hardware_concurrency());
    // Phase 1: teacher plus all rows that do not read teacher features.
    std::vector<RunTask> phase1, phase2;
    for (size_t ri = 0; ri < rows.size(); ++ri)
        for (size_t si = 0; si < seeds.size(); ++si)
            (rows[ri].use_dist ? phase2 : phase1).push_back(RunTask{ri, si});
    run_tasks(phase1, workers, execute);
    run_tasks(phase2, workers, execute);

    // Means over seeds.
    res.mean.assign(rows.size(), AblationCell{});
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        for (const auto& c : res.per_seed[ri]) {
            res.mean[ri].clean_epe += c.clean_epe;
            res.mean[ri].fog_epe += c.fog_epe;
            res.mean[ri].clean_p1 += c.clean_p1;
            res.mean[ri].fog_p1 += c.fog_p1;
        }
        const double k = static_cast<double>(seeds.size());
        res.mean[ri].clean_epe /= k;
        res.mean[ri].fog_epe /= k;
        res.mean[ri].clean_p1 /= k;
        res.mean[ri].fog_p1 /= k;
    }

    // Summary CSV + aligned text table. The teacher consumes both domains at
    // once, so its single score fills both columns (marked in the text).
    res.summary_csv = "row,clean_epe,fog_epe,clean_p1,fog_p1\n";
    res.per_seed_csv = "row,seed,clean_epe,fog_epe,clean_p1,fog_p1\n";
    res.summary_text =
        "configuration        clean_epe   fog_epe   clean_p1   fog_p1\n"
        "-----------------------------------------------------------\n";
    for (size_t ri = 0; ri < rows.size(); ++ri) {
        char buf[200];
        std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g\n", rows[ri].name.c_str(),
                      res.mean[ri].clean_epe, res.mean[ri].fog_epe, res.mean[ri].clean_p1,
                      res.mean[ri].fog_p1);
        res.summary_csv += buf;
        for (size_t si = 0; si < seeds.size(); ++si) {
            const auto& c = res.per_seed[ri][si];
            std::snprintf(buf, sizeof(buf), "%s,%llu,%.9g,%.9g,%.9g,%.9g\n", rows[ri].name.c_str(),
                          static_cast<unsigned long long>(seeds[si]), c.clean_epe, c.fog_epe,
                          c.clean_p1, c.fog_p1);
            res.per_seed_csv += buf;
        }
        const char* mark = rows[ri].is_teacher ? "*" : " ";
        std::snprintf(buf, sizeof(buf), "%-18s %9.3f%s %9.3f%s %9.3f  %8.3f\n",
                      rows[ri].name.c_str(), res.mean[ri].clean_epe, mark, res.mean[ri].fog_epe,
                      mark, res.mean[ri].clean_p1, res.mean[ri].fog_p1);
        res.summary_text += buf;
    }
    res.summary_text += "* teacher consumes clean and foggy pairs together\n";
    return res;
}

}  // namespace cfd
