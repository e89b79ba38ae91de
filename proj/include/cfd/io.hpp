// File formats: grayscale PFM for float grids (disparity, depth) and binary
// P6 PPM for images. Both are bit-exact and dependency free. PFM rows are
// stored bottom-up; a negative scale marks little-endian payloads.

#pragma once

#include <cstdint>
#include <string>

#include "cfd/image.hpp"

namespace cfd {

Grid<float> read_pfm(const std::string& path);
void write_pfm(const std::string& path, const Grid<float>& grid);

// P6, maxval 255. Values are scaled to [0,1] on read and quantized with
// round-to-nearest on write. Single-channel images are written as gray RGB.
Image<float> read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Image<float>& image);

// FNV-1a 64 over a file's bytes; used for run manifests.
uint64_t file_checksum(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool path_exists(const std::string& path);
void make_directories(const std::string& path);

}  // namespace cfd
