#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "refgame/error.hpp"
#include "refgame/nn.hpp"

namespace refgame::nn {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'C', 'K'};

template <typename T>
void put_le(std::ostream& out, T v) {
    unsigned char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::filesystem::path& path) {
    unsigned char buf[sizeof(T)];
    in.read(reinterpret_cast<char*>(buf), sizeof(T));
    if (!in) fail(ErrorCode::io, "truncated checkpoint " + path.string());
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
}

void put_string(std::ostream& out, const std::string& s) {
    put_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
    const auto n = get_le<uint32_t>(in, path);
    if (n > (1u << 20)) fail(ErrorCode::io, "corrupt string length in " + path.string());
    std::string s(n, '\0');
    in.read(s.data(), n);
    if (!in) fail(ErrorCode::io, "truncated checkpoint " + path.string());
    return s;
}

std::ifstream open_checked(const std::filesystem::path& path, CheckpointHeader& header) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::not_found, "checkpoint not found: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        fail(ErrorCode::io, "not a checkpoint file: " + path.string());
    header.schema_version = get_le<uint32_t>(in, path);
    if (header.schema_version != kCheckpointSchemaVersion)
        fail(ErrorCode::version_mismatch,
             "checkpoint schema_version " + std::to_string(header.schema_version) +
                 " unsupported (expected " + std::to_string(kCheckpointSchemaVersion) + ")");
    header.fingerprint = get_le<uint64_t>(in, path);
    header.seed = get_le<uint64_t>(in, path);
    return in;
}

}  // namespace

void save_checkpoint(const ParamStore& store, const CheckpointHeader& header,
                     const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ostringstream out(std::ios::binary);
    out.write(kMagic, 4);
    put_le<uint32_t>(out, header.schema_version);
    put_le<uint64_t>(out, header.fingerprint);
    put_le<uint64_t>(out, header.seed);
    put_le<uint32_t>(out, static_cast<uint32_t>(store.params().size()));
    for (const auto& [name, p] : store.params()) {
        put_string(out, name);
        put_string(out, p.group);
        out.put(store.group_frozen(p.group) ? 1 : 0);
        put_le<uint32_t>(out, static_cast<uint32_t>(p.value.rows()));
        put_le<uint32_t>(out, static_cast<uint32_t>(p.value.cols()));
        for (long i = 0; i < p.value.rows(); ++i)
            for (long j = 0; j < p.value.cols(); ++j)
                put_le<float>(out, static_cast<float>(p.value(i, j)));
    }
    // Write-then-rename so readers never observe a partial file.
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) fail(ErrorCode::io, "cannot write checkpoint " + path.string());
        const std::string bytes = out.str();
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) fail(ErrorCode::io, "write failed for " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointHeader read_checkpoint_header(const std::filesystem::path& path) {
    CheckpointHeader header;
    open_checked(path, header);
    return header;
}

ParamStore load_checkpoint(const std::filesystem::path& path, uint64_t expected_fingerprint,
                           CheckpointHeader* header_out) {
    CheckpointHeader header;
    std::ifstream in = open_checked(path, header);
    if (header.fingerprint != expected_fingerprint) {
        std::ostringstream msg;
        msg << "checkpoint " << path.string() << " has config fingerprint " << std::hex
            << header.fingerprint << ", expected " << expected_fingerprint;
        fail(ErrorCode::version_mismatch, msg.str());
    }
    ParamStore store;
    const auto count = get_le<uint32_t>(in, path);
    for (uint32_t k = 0; k < count; ++k) {
        const std::string name = get_string(in, path);
        const std::string group = get_string(in, path);
        const bool frozen = in.get() == 1;
        const auto rows = get_le<uint32_t>(in, path);
        const auto cols = get_le<uint32_t>(in, path);
        Tensor& t = store.add(name, group, static_cast<int>(rows), static_cast<int>(cols));
        for (uint32_t i = 0; i < rows; ++i)
            for (uint32_t j = 0; j < cols; ++j) t(i, j) = get_le<float>(in, path);
        if (frozen) store.freeze(group);
    }
    if (header_out) *header_out = header;
    return store;
}

uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::not_found, "file not found: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const std::string bytes = ss.str();
    return fnv1a(bytes.data(), bytes.size());
}

}  // namespace refgame::nn
