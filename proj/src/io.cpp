#include "cfd/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace cfd {

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& what, std::streamoff offset) {
    throw std::runtime_error(path + ": " + what + " (byte offset " + std::to_string(offset) + ")");
}

// Reads one whitespace-delimited token, skipping leading whitespace.
std::string next_token(std::istream& in) {
    std::string tok;
    in >> tok;
    return tok;
}

float byteswap_f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u = __builtin_bswap32(u);
    std::memcpy(&v, &u, 4);
    return v;
}

constexpr bool host_little_endian() { return std::endian::native == std::endian::little; }

}  // namespace

Grid<float> read_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    const std::string magic = next_token(in);
    if (magic == "PF")
        throw std::runtime_error(path + ": 3-channel PF files are not supported, expected Pf");
    if (magic != "Pf") fail(path, "bad PFM magic '" + magic + "'", in.tellg());
    int w = 0, h = 0;
    double scale = 0.0;
    if (!(in >> w >> h)) fail(path, "malformed dimensions", in.tellg());
    if (w <= 0 || h <= 0) fail(path, "non-positive dimensions", in.tellg());
    if (!(in >> scale) || scale == 0.0) fail(path, "malformed scale", in.tellg());
    in.get();  // single whitespace byte before the payload
    const bool file_little = scale < 0.0;
    Grid<float> g(h, w);
    std::vector<float> row(static_cast<size_t>(w));
    for (int y = h - 1; y >= 0; --y) {  // bottom-up storage
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(w * 4));
        if (in.gcount() != static_cast<std::streamsize>(w * 4))
            fail(path, "truncated payload", static_cast<std::streamoff>(in.tellg()));
        for (int x = 0; x < w; ++x)
            g.at(y, x) = (file_little == host_little_endian()) ? row[static_cast<size_t>(x)]
                                                               : byteswap_f32(row[static_cast<size_t>(x)]);
    }
    return g;
}

void write_pfm(const std::string& path, const Grid<float>& grid) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "Pf\n" << grid.w << " " << grid.h << "\n" << (host_little_endian() ? "-1.0" : "1.0")
        << "\n";
    for (int y = grid.h - 1; y >= 0; --y)
        out.write(reinterpret_cast<const char*>(&grid.at(y, 0)),
                  static_cast<std::streamsize>(grid.w * 4));
    if (!out) throw std::runtime_error(path + ": write failed");
}

Image<float> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    const std::string magic = next_token(in);
    if (magic != "P6") fail(path, "bad PPM magic '" + magic + "'", in.tellg());
    int w = 0, h = 0, maxval = 0;
    if (!(in >> w >> h >> maxval)) fail(path, "malformed header", in.tellg());
    if (w <= 0 || h <= 0) fail(path, "non-positive dimensions", in.tellg());
    if (maxval != 255) throw std::runtime_error(path + ": only maxval 255 is supported");
    in.get();
    Image<float> img(h, w, 3);
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
        if (in.gcount() != static_cast<std::streamsize>(row.size()))
            fail(path, "payload shorter than header dimensions",
                 static_cast<std::streamoff>(in.tellg()));
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<float>(row[static_cast<size_t>(x) * 3 + c]) / 255.0f;
    }
    return img;
}

void write_ppm(const std::string& path, const Image<float>& image) {
    if (image.c != 3 && image.c != 1)
        throw std::invalid_argument(path + ": PPM writer expects 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << "P6\n" << image.w << " " << image.h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(image.w) * 3);
    for (int y = 0; y < image.h; ++y) {
        for (int x = 0; x < image.w; ++x) {
            for (int c = 0; c < 3; ++c) {
                const float v = image.at(y, x, image.c == 1 ? 0 : c);
                const float clamped = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
                row[static_cast<size_t>(x) * 3 + c] =
                    static_cast<uint8_t>(std::lround(clamped * 255.0f));
            }
        }
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

uint64_t file_checksum(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for checksum");
    uint64_t hash = 1469598103934665603ull;
    char buf[4096];
    while (in) {
        in.read(buf, sizeof(buf));
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            hash ^= static_cast<uint8_t>(buf[i]);
            hash *= 1099511628211ull;
        }
    }
    return hash;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out << content;
    if (!out) throw std::runtime_error(path + ": write failed");
}

bool path_exists(const std::string& path) { return std::filesystem::exists(path); }

void make_directories(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw std::runtime_error(path + ": cannot create directory: " + ec.message());
}

}  // namespace cfd
