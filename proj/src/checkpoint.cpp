#include "mobcast/checkpoint.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace mobcast {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_record(std::ostream& os, const std::string& name, const Matrix& m) {
    write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u64(os, static_cast<std::uint64_t>(m.rows()));
    write_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (Index r = 0; r < m.rows(); ++r) {
        for (Index c = 0; c < m.cols(); ++c) {
            std::uint64_t bits;
            const double d = m(r, c);
            std::memcpy(&bits, &d, 8);
            write_u64(os, bits);
        }
    }
}

std::pair<std::string, Matrix> read_record(std::istream& is) {
    const std::uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rows = static_cast<Index>(read_u64(is));
    const auto cols = static_cast<Index>(read_u64(is));
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) {
            const std::uint64_t bits = read_u64(is);
            double d;
            std::memcpy(&d, &bits, 8);
            m(r, c) = d;
        }
    }
    if (!is)
        throw IoError("checkpoint: truncated record " + name);
    return {std::move(name), std::move(m)};
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string fnv1a64_hex(const std::string& s) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(s)));
    return buf;
}

const Matrix* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, m] : records)
        if (n == name)
            return &m;
    return nullptr;
}

const Matrix& Checkpoint::require(const std::string& name) const {
    const Matrix* m = find(name);
    if (!m)
        throw IoError("checkpoint: missing record " + name);
    return *m;
}

void save_checkpoint(const std::string& path, const CheckpointHeader& header,
                     const ParamStore& store,
                     const std::vector<std::pair<std::string, Matrix>>& extras) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw IoError("cannot open checkpoint for writing: " + path);

    nlohmann::json j;
    j["seed"] = header.seed;
    j["config_hash"] = header.config_hash;
    j["epoch"] = header.epoch;
    j["adam_t"] = header.adam_t;
    const std::string header_str = j.dump();

    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, header_str.size());
    os.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));

    write_u32(os, static_cast<std::uint32_t>(store.size() * 3 + extras.size()));
    for (const Param& p : store.params()) {
        write_record(os, p.name, p.value);
        write_record(os, p.name + "#m", p.m);
        write_record(os, p.name + "#v", p.v);
    }
    for (const auto& [name, m] : extras)
        write_record(os, name, m);
    if (!os)
        throw IoError("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0)
        throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion)
        throw IoError("unsupported checkpoint version " + std::to_string(version));

    const std::uint64_t header_len = read_u64(is);
    std::string header_str(header_len, '\0');
    is.read(header_str.data(), static_cast<std::streamsize>(header_len));
    nlohmann::json j = nlohmann::json::parse(header_str, nullptr, false);
    if (j.is_discarded())
        throw IoError("checkpoint header is not valid JSON: " + path);

    Checkpoint ckpt;
    ckpt.header.seed = j.value("seed", std::uint64_t{0});
    ckpt.header.config_hash = j.value("config_hash", std::string{});
    ckpt.header.epoch = j.value("epoch", std::int64_t{0});
    ckpt.header.adam_t = j.value("adam_t", std::int64_t{0});

    const std::uint32_t count = read_u32(is);
    ckpt.records.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i)
        ckpt.records.push_back(read_record(is));
    return ckpt;
}

void restore_params(const Checkpoint& ckpt, ParamStore& store) {
    for (Param& p : store.params()) {
        const Matrix& value = ckpt.require(p.name);
        const Matrix& m = ckpt.require(p.name + "#m");
        const Matrix& v = ckpt.require(p.name + "#v");
        if (value.rows() != p.value.rows() || value.cols() != p.value.cols())
            throw IoError("checkpoint: shape mismatch for " + p.name);
        p.value = value;
        p.m = m;
        p.v = v;
    }
    store.set_adam_t(ckpt.header.adam_t);
}

}  // namespace mobcast
