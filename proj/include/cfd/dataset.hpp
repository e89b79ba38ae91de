// Synthetic random-dot stereogram dataset. Each scene is a random texture
// warped by a piecewise-constant disparity field of 2..4 fronto-parallel
// layers, so ground truth is exact by construction. Foggy counterparts are
// rendered per view from depth derived through the camera rig.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfd/config.hpp"
#include "cfd/fog.hpp"
#include "cfd/image.hpp"

namespace cfd {

struct SceneData {
    Image<float> clean_l, clean_r, fog_l, fog_r;
    MaskedGrid<float> disp_l;  // ground truth, left view
    Grid<float> disp_r;        // right view, used only for right-view fog
    float beta = 0.0f;
    float airlight = 1.0f;
};

struct SampleRecord {
    int scene_id = 0;
    std::string clean_l, clean_r, fog_l, fog_r, disp_l, disp_r;
    double beta = 0.0, airlight = 1.0;
    CameraRig rig;
};

// Mixes a base seed with a scene index; generation order is irrelevant.
uint64_t scene_seed(uint64_t base_seed, uint64_t index);

SceneData generate_scene(uint64_t seed, const ExperimentConfig& cfg);
std::vector<SceneData> generate_synthetic_dataset(const ExperimentConfig& cfg);

// On-disk layout: <dir>/scene_0000/{clean_l.ppm,...,disp_l.pfm,disp_r.pfm}
// plus an index file <dir>/dataset.csv. Returns the index path.
std::string write_dataset(const std::string& dir, const ExperimentConfig& cfg);
std::vector<SampleRecord> read_dataset_index(const std::string& dir);
SceneData load_scene(const SampleRecord& rec);

// Left pixels invisible to the right camera under the given disparity field
// (either pushed out of frame or beaten by a nearer pixel warping to the same
// target column).
std::vector<uint8_t> occlusion_mask(const Grid<float>& disp_l);

}  // namespace cfd
