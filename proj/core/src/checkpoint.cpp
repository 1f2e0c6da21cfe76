#include "ursct/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "ursct/errors.hpp"

namespace ursct {

namespace {

constexpr char kMagic[6] = {'U', 'R', 'S', 'C', 'T', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u16(std::ostream& out, std::uint16_t v) {
    const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                                static_cast<unsigned char>(v >> 8)};
    out.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

void read_bytes(std::istream& in, void* dst, std::size_t n) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in.gcount()) != n) throw FormatError("truncated checkpoint");
}

std::uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    read_bytes(in, b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    read_bytes(in, b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    read_bytes(in, b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

float get_f32(std::istream& in) {
    const std::uint32_t bits = get_u32(in);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void write_tensors(std::ostream& out,
                   const std::vector<std::pair<std::string, Tensor<float>>>& tensors) {
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
            throw FormatError("tensor name too long: " + name);
        }
        put_u16(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        out.put(0);  // dtype f32
        out.put(static_cast<char>(t.ndim()));
        for (std::int64_t i = 0; i < t.ndim(); ++i) {
            put_u32(out, static_cast<std::uint32_t>(t.dim(i)));
        }
        for (float v : t.data()) put_f32(out, v);
    }
}

std::vector<std::pair<std::string, Tensor<float>>> read_tensors(std::istream& in) {
    const std::uint32_t count = get_u32(in);
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    tensors.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = get_u16(in);
        std::string name(name_len, '\0');
        read_bytes(in, name.data(), name_len);
        unsigned char dtype, ndim;
        read_bytes(in, &dtype, 1);
        if (dtype != 0) throw FormatError("unsupported dtype tag in checkpoint");
        read_bytes(in, &ndim, 1);
        Shape shape(ndim);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::int64_t>(get_u32(in));
            numel *= d;
        }
        std::vector<float> values(static_cast<std::size_t>(numel));
        for (auto& v : values) v = get_f32(in);
        tensors.emplace_back(std::move(name), Tensor<float>::from(std::move(shape), std::move(values)));
    }
    return tensors;
}

}  // namespace

void save_checkpoint(const CheckpointState& state, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    write_tensors(out, state.tensors);
    write_tensors(out, state.moments);
    put_u64(out, state.step);
    put_u64(out, state.epoch);
    put_u32(out, static_cast<std::uint32_t>(state.rng_state.size()));
    out.write(state.rng_state.data(), static_cast<std::streamsize>(state.rng_state.size()));
    std::string snapshot;
    for (const auto& [k, v] : state.config_snapshot) snapshot += k + " = " + v + "\n";
    put_u32(out, static_cast<std::uint32_t>(snapshot.size()));
    out.write(snapshot.data(), static_cast<std::streamsize>(snapshot.size()));
    if (!out) throw IoError("error writing checkpoint '" + path + "'");
}

CheckpointState load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    char magic[6];
    read_bytes(in, magic, 6);
    if (std::memcmp(magic, kMagic, 6) != 0) throw FormatError("bad checkpoint magic");
    const std::uint32_t version = get_u32(in);
    if (version != kVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " (expected " + std::to_string(kVersion) + ")");
    }
    CheckpointState state;
    state.tensors = read_tensors(in);
    state.moments = read_tensors(in);
    state.step = get_u64(in);
    state.epoch = get_u64(in);
    const std::uint32_t rng_len = get_u32(in);
    state.rng_state.resize(rng_len);
    read_bytes(in, state.rng_state.data(), rng_len);
    const std::uint32_t snap_len = get_u32(in);
    std::string snapshot(snap_len, '\0');
    read_bytes(in, snapshot.data(), snap_len);
    std::istringstream lines(snapshot);
    std::string line;
    while (std::getline(lines, line)) {
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw FormatError("malformed checkpoint config snapshot");
        state.config_snapshot[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return state;
}

}  // namespace ursct
