#include "pembed/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace pembed {

namespace {

constexpr char kMagic[4] = {'P', 'E', 'M', 'B'};

void write_bytes(std::ofstream& out, const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw checkpoint_error(checkpoint_error::code::io, "checkpoint: short write");
}

template <typename T>
void write_le(std::ofstream& out, T v) {
    write_bytes(out, &v, sizeof(T));
}

void read_bytes(std::ifstream& in, void* p, std::size_t n, const char* what) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) {
        throw checkpoint_error(checkpoint_error::code::truncated,
                               std::string("checkpoint: truncated while reading ") + what);
    }
}

template <typename T>
T read_le(std::ifstream& in, const char* what) {
    T v;
    read_bytes(in, &v, sizeof(T), what);
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw checkpoint_error(checkpoint_error::code::io, "checkpoint: cannot write '" + tmp + "'");
        write_bytes(out, kMagic, 4);
        write_le<std::uint32_t>(out, ckpt.version);
        write_le<std::uint64_t>(out, ckpt.config_hash);
        write_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
        for (const auto& [name, t] : ckpt.tensors) {
            if (name.size() > 0xffff) {
                throw checkpoint_error(checkpoint_error::code::io, "checkpoint: tensor name too long");
            }
            write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
            write_bytes(out, name.data(), name.size());
            write_le<std::uint8_t>(out, 2);
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rows));
            write_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.cols));
            write_bytes(out, t.data->data(), t.numel() * sizeof(float));
        }
    }
    if (std::rename(tmp.c_str(), path.c_str()) != 0) {
        std::remove(tmp.c_str());
        throw checkpoint_error(checkpoint_error::code::io, "checkpoint: cannot rename into '" + path + "'");
    }
}

Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw checkpoint_error(checkpoint_error::code::io, "checkpoint: cannot open '" + path + "'");
    char magic[4];
    read_bytes(in, magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) {
        throw checkpoint_error(checkpoint_error::code::bad_magic,
                               "checkpoint: bad magic in '" + path + "' (corrupt header)");
    }
    Checkpoint ckpt;
    ckpt.version = read_le<std::uint32_t>(in, "version");
    if (ckpt.version != kCheckpointVersion) {
        throw checkpoint_error(checkpoint_error::code::bad_version,
                               "checkpoint: unsupported format version " + std::to_string(ckpt.version));
    }
    ckpt.config_hash = read_le<std::uint64_t>(in, "config hash");
    if (expected_hash != 0 && ckpt.config_hash != expected_hash) {
        throw checkpoint_error(checkpoint_error::code::hash_mismatch,
                               "checkpoint: config hash mismatch (file was written under a different "
                               "structural configuration)");
    }
    const std::uint32_t count = read_le<std::uint32_t>(in, "tensor count");
    ckpt.tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = read_le<std::uint16_t>(in, "name length");
        std::string name(name_len, '\0');
        read_bytes(in, name.data(), name_len, "name");
        const std::uint8_t rank = read_le<std::uint8_t>(in, "rank");
        if (rank != 2) {
            throw checkpoint_error(checkpoint_error::code::dim_mismatch,
                                   "checkpoint: tensor '" + name + "' has unsupported rank " +
                                       std::to_string(rank));
        }
        const auto rows = read_le<std::uint32_t>(in, "dims");
        const auto cols = read_le<std::uint32_t>(in, "dims");
        Tensor t(static_cast<int>(rows), static_cast<int>(cols));
        read_bytes(in, t.data->data(), t.numel() * sizeof(float), name.c_str());
        ckpt.tensors.emplace_back(std::move(name), std::move(t));
    }
    return ckpt;
}

}  // namespace pembed
