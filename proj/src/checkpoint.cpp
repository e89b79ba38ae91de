#include "cfd/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace cfd {

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    out.write(b, 4);
}

uint32_t get_u32(std::ifstream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (in.gcount() != 4) throw std::runtime_error(path + ": truncated checkpoint");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void write_checkpoint(const std::string& path, const std::vector<CheckpointEntry>& entries) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write("CFDW", 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put_u32(out, static_cast<uint32_t>(e.name.size()));
        out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
        put_u32(out, static_cast<uint32_t>(e.shape.size()));
        for (int64_t d : e.shape) put_u32(out, static_cast<uint32_t>(d));
        static_assert(sizeof(float) == 4);
        out.write(reinterpret_cast<const char*>(e.data.data()),
                  static_cast<std::streamsize>(e.data.size() * 4));
    }
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open");
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "CFDW", 4) != 0)
        throw std::runtime_error(path + ": not a CFDW checkpoint");
    const uint32_t version = get_u32(in, path);
    if (version != kCheckpointVersion)
        throw std::runtime_error(path + ": unsupported checkpoint version " +
                                 std::to_string(version));
    const uint32_t count = get_u32(in, path);
    std::vector<CheckpointEntry> entries;
    entries.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        const uint32_t name_len = get_u32(in, path);
        e.name.resize(name_len);
        in.read(e.name.data(), name_len);
        if (in.gcount() != static_cast<std::streamsize>(name_len))
            throw std::runtime_error(path + ": truncated checkpoint");
        const uint32_t ndim = get_u32(in, path);
        int64_t numel = 1;
        for (uint32_t d = 0; d < ndim; ++d) {
            const uint32_t dim = get_u32(in, path);
            e.shape.push_back(static_cast<int64_t>(dim));
            numel *= dim;
        }
        e.data.resize(static_cast<size_t>(numel));
        in.read(reinterpret_cast<char*>(e.data.data()),
                static_cast<std::streamsize>(e.data.size() * 4));
        if (in.gcount() != static_cast<std::streamsize>(e.data.size() * 4))
            throw std::runtime_error(path + ": truncated checkpoint payload in '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    return entries;
}

}  // namespace cfd
