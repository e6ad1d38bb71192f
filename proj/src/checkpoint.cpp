#include "fedfa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fedfa {

static_assert(std::endian::native == std::endian::little, "checkpoint encoding assumes a little-endian host");

void append_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f64(Bytes& out, std::span<const double> values) {
    const std::size_t at = out.size();
    out.resize(at + values.size() * sizeof(double));
    if (!values.empty()) std::memcpy(out.data() + at, values.data(), values.size() * sizeof(double));
}

std::size_t encoded_size(const ModelParams& params) {
    std::size_t n = 8;
    for (const auto& e : params) n += 4 + e.name.size() + 4 + 8 * e.tensor.rank() + 8 * e.tensor.size();
    return n;
}

Bytes encode_params(const ModelParams& params) {
    Bytes out;
    out.reserve(encoded_size(params));
    out.insert(out.end(), std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    append_u32(out, kCheckpointVersion);
    for (const auto& e : params) {
        append_u32(out, static_cast<std::uint32_t>(e.name.size()));
        out.insert(out.end(), e.name.begin(), e.name.end());
        append_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
        for (auto d : e.tensor.shape()) append_u64(out, d);
        append_f64(out, e.tensor.data());
    }
    return out;
}

namespace {

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    bool done() const { return pos_ == bytes_.size(); }
    std::size_t position() const { return pos_; }
    std::span<const std::uint8_t> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw std::runtime_error("checkpoint: truncated input");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::uint32_t u32() {
        auto s = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(s[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        auto s = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(s[i]) << (8 * i);
        return v;
    }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

ModelParams decode_params(std::span<const std::uint8_t> bytes) {
    std::size_t consumed = 0;
    return decode_params_prefix(bytes, static_cast<std::size_t>(-1), consumed);
}

ModelParams decode_params_prefix(std::span<const std::uint8_t> bytes, std::size_t max_tensors, std::size_t& consumed) {
    Reader r(bytes);
    auto magic = r.take(4);
    if (std::memcmp(magic.data(), kCheckpointMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
    }
    ModelParams params;
    while (!r.done() && params.size() < max_tensors) {
        const std::uint32_t name_len = r.u32();
        auto name_bytes = r.take(name_len);
        std::string name(name_bytes.begin(), name_bytes.end());
        const std::uint32_t rank = r.u32();
        if (rank == 0 || rank > 8) throw std::runtime_error("checkpoint: bad rank for '" + name + "'");
        Shape shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(r.u64()));
        const std::size_t n = shape_numel(shape);
        auto payload = r.take(n * sizeof(double));
        std::vector<double> data(n);
        std::memcpy(data.data(), payload.data(), payload.size());
        params.add(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    consumed = r.position();
    return params;
}

void save_params(const std::filesystem::path& path, const ModelParams& params) {
    const Bytes bytes = encode_params(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

ModelParams load_params(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_params(bytes);
}

}  // namespace fedfa
