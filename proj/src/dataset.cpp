#include "cfd/dataset.hpp"

#include <algorithm>
#include <cstdio>
#include <random>
#include <sstream>

#include "cfd/io.hpp"

namespace cfd {

uint64_t scene_seed(uint64_t base_seed, uint64_t index) {
    // splitmix64 finalizer over the pair
    uint64_t z = base_seed + 0x9e3779b97f4a7c15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace {

Image<float> random_texture(std::mt19937_64& rng, int h, int w) {
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    Image<float> img(h, w, 3);
    for (auto& v : img.v) v = static_cast<float>(dist(rng));
    return img;
}

// Piecewise-constant layered disparity: full-frame background plus nearer
// rectangles painted in increasing disparity order.
Grid<float> layered_disparity(std::mt19937_64& rng, const ExperimentConfig& cfg) {
    const int h = cfg.image_h, w = cfg.image_w;
    std::uniform_int_distribution<int> layer_count(cfg.layers_min, cfg.layers_max);
    const int n_layers = layer_count(rng);
    std::uniform_int_distribution<int> disp_pick(cfg.disp_min, cfg.disp_max);
    std::vector<int> disps(static_cast<size_t>(n_layers));
    for (auto& d : disps) d = disp_pick(rng);
    std::sort(disps.begin(), disps.end());
    Grid<float> disp(h, w, static_cast<float>(disps[0]));
    std::uniform_int_distribution<int> xd(0, w - 1), yd(0, h - 1);
    for (size_t li = 1; li < disps.size(); ++li) {
        // random rectangle, at least a quarter of each dimension
        const int rw = std::max(w / 4, xd(rng) / 2 + w / 8);
        const int rh = std::max(h / 4, yd(rng) / 2 + h / 8);
        const int x0 = std::min(xd(rng), w - rw);
        const int y0 = std::min(yd(rng), h - rh);
        for (int y = y0; y < std::min(h, y0 + rh); ++y)
            for (int x = x0; x < std::min(w, x0 + rw); ++x)
                disp.at(y, x) = static_cast<float>(disps[li]);
    }
    return disp;
}

}  // namespace

std::vector<uint8_t> occlusion_mask(const Grid<float>& disp_l) {
    const int h = disp_l.h, w = disp_l.w;
    std::vector<uint8_t> occluded(static_cast<size_t>(h) * w, 0);
    std::vector<int> winner(static_cast<size_t>(w));
    for (int y = 0; y < h; ++y) {
        std::fill(winner.begin(), winner.end(), -1);
        for (int x = 0; x < w; ++x) {
            const int tx = x - static_cast<int>(std::lround(disp_l.at(y, x)));
            if (tx < 0 || tx >= w) continue;
            if (winner[tx] < 0 || disp_l.at(y, winner[tx]) < disp_l.at(y, x)) winner[tx] = x;
        }
        for (int x = 0; x < w; ++x) {
            const int tx = x - static_cast<int>(std::lround(disp_l.at(y, x)));
            const bool visible = tx >= 0 && tx < w && winner[tx] == x;
            occluded[static_cast<size_t>(y) * w + x] = visible ? 0 : 1;
        }
    }
    return occluded;
}

SceneData generate_scene(uint64_t seed, const ExperimentConfig& cfg) {
    if (cfg.disp_max >= cfg.image_w / 4)
        throw ConfigError("generate_scene: disparity range exceeds image_w/4");
    std::mt19937_64 rng(seed);
    const int h = cfg.image_h, w = cfg.image_w;

    SceneData scene;
    scene.clean_l = random_texture(rng, h, w);
    Grid<float> disp = layered_disparity(rng, cfg);
    scene.disp_l = MaskedGrid<float>(disp, true);

    // Forward-warp the left texture; nearer pixels (larger disparity) win.
    // Target holes are regions seen only by the right camera: fresh texture,
    // background disparity.
    float bg_disp = disp.v[0];
    for (float d : disp.v) bg_disp = std::min(bg_disp, d);
    scene.clean_r = Image<float>(h, w, 3);
    scene.disp_r = Grid<float>(h, w, bg_disp);
    Grid<float> zbuf(h, w, -1.0f);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float d = disp.at(y, x);
            const int tx = x - static_cast<int>(std::lround(d));
            if (tx < 0 || tx >= w) continue;
            if (d > zbuf.at(y, tx)) {
                zbuf.at(y, tx) = d;
                for (int c = 0; c < 3; ++c) scene.clean_r.at(y, tx, c) = scene.clean_l.at(y, x, c);
                scene.disp_r.at(y, tx) = d;
            }
        }
        for (int x = 0; x < w; ++x) {
            if (zbuf.at(y, x) < 0.0f)
                for (int c = 0; c < 3; ++c)
                    scene.clean_r.at(y, x, c) = static_cast<float>(unif(rng));
        }
    }

    // Per-scene fog: homogeneous beta, gray airlight.
    scene.beta = static_cast<float>(cfg.beta_min + (cfg.beta_max - cfg.beta_min) * unif(rng));
    scene.airlight =
        static_cast<float>(cfg.airlight_min + (cfg.airlight_max - cfg.airlight_min) * unif(rng));
    const CameraRig rig(cfg.focal_px, cfg.baseline_m);
    const FogParams<float> fog(scene.beta, {scene.airlight});
    const MaskedGrid<float> depth_l = disparity_to_depth(scene.disp_l, rig);
    const MaskedGrid<float> depth_r =
        disparity_to_depth(MaskedGrid<float>(scene.disp_r, true), rig);
    scene.fog_l = render_fog(scene.clean_l, depth_l, fog);
    scene.fog_r = render_fog(scene.clean_r, depth_r, fog);
    return scene;
}

std::vector<SceneData> generate_synthetic_dataset(const ExperimentConfig& cfg) {
    std::vector<SceneData> scenes;
    scenes.reserve(static_cast<size_t>(cfg.n_scenes));
    for (int i = 0; i < cfg.n_scenes; ++i)
        scenes.push_back(generate_scene(scene_seed(cfg.seed, static_cast<uint64_t>(i)), cfg));
    return scenes;
}

std::string write_dataset(const std::string& dir, const ExperimentConfig& cfg) {
    make_directories(dir);
    std::ostringstream index;
    index << "scene_id,clean_l,clean_r,fog_l,fog_r,disp_l,disp_r,beta,airlight,focal_px,baseline_m\n";
    for (int i = 0; i < cfg.n_scenes; ++i) {
        const SceneData scene = generate_scene(scene_seed(cfg.seed, static_cast<uint64_t>(i)), cfg);
        char name[32];
        std::snprintf(name, sizeof(name), "scene_%04d", i);
        const std::string sdir = dir + "/" + name;
        make_directories(sdir);
        write_ppm(sdir + "/clean_l.ppm", scene.clean_l);
        write_ppm(sdir + "/clean_r.ppm", scene.clean_r);
        write_ppm(sdir + "/fog_l.ppm", scene.fog_l);
        write_ppm(sdir + "/fog_r.ppm", scene.fog_r);
        write_pfm(sdir + "/disp_l.pfm", scene.disp_l.values);
        write_pfm(sdir + "/disp_r.pfm", scene.disp_r);
        char row[256];
        std::snprintf(row, sizeof(row), "%d,%s/clean_l.ppm,%s/clean_r.ppm,%s/fog_l.ppm,%s/fog_r.ppm,%s/disp_l.pfm,%s/disp_r.pfm,%.9g,%.9g,%.9g,%.9g\n",
                      i, name, name, name, name, name, name, static_cast<double>(scene.beta),
                      static_cast<double>(scene.airlight), cfg.focal_px, cfg.baseline_m);
        index << row;
    }
    const std::string index_path = dir + "/dataset.csv";
    write_text_file(index_path, index.str());
    return index_path;
}

std::vector<SampleRecord> read_dataset_index(const std::string& dir) {
    const std::string index_path = dir + "/dataset.csv";
    if (!path_exists(index_path))
        throw std::runtime_error(index_path + ": dataset index not found");
    std::istringstream in(read_text_file(index_path));
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(index_path + ": empty index");
    std::vector<SampleRecord> records;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::string cur;
        for (char ch : line + ",") {
            if (ch == ',') {
                cols.push_back(cur);
                cur.clear();
            } else cur += ch;
        }
        if (cols.size() != 11)
            throw std::runtime_error(index_path + ": malformed index row: " + line);
        SampleRecord r;
        r.scene_id = std::stoi(cols[0]);
        r.clean_l = dir + "/" + cols[1];
        r.clean_r = dir + "/" + cols[2];
        r.fog_l = dir + "/" + cols[3];
        r.fog_r = dir + "/" + cols[4];
        r.disp_l = dir + "/" + cols[5];
        r.disp_r = dir + "/" + cols[6];
        r.beta = std::stod(cols[7]);
        r.airlight = std::stod(cols[8]);
        r.rig = CameraRig(std::stod(cols[9]), std::stod(cols[10]));
        records.push_back(std::move(r));
    }
    return records;
}

SceneData load_scene(const SampleRecord& rec) {
    SceneData s;
    s.clean_l = read_ppm(rec.clean_l);
    s.clean_r = read_ppm(rec.clean_r);
    s.fog_l = read_ppm(rec.fog_l);
    s.fog_r = read_ppm(rec.fog_r);
    s.disp_l = MaskedGrid<float>(read_pfm(rec.disp_l), true);
    s.disp_r = read_pfm(rec.disp_r);
    s.beta = static_cast<float>(rec.beta);
    s.airlight = static_cast<float>(rec.airlight);
    return s;
}

}  // namespace cfd
