#include "pcsa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace pcsa {

namespace {

constexpr char kMagic[4] = {'P', 'C', 'S', 'A'};
const std::string kConfigName = "meta.config";
const std::string kStepName = "adam.step";

template <typename U>
void put(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
public:
    explicit Reader(const std::string& bytes) : bytes_(bytes) {}

    template <typename U>
    U get(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) {
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        }
        pos_ += sizeof(U);
        return v;
    }

    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(CheckpointErrorKind::truncated,
                                  std::string("checkpoint truncated while reading ") + what);
        }
    }

    const std::string& bytes_;
    std::size_t pos_ = 0;
};

// Config fields in a fixed order, stored as a float vector.
TensorF config_tensor(const NetworkConfig& c) {
    const std::vector<float> v{static_cast<float>(c.base_channels),
                               static_cast<float>(c.io_channels),
                               c.mixer == BlockMixer::pcsam ? 0.0f : 1.0f,
                               static_cast<float>(c.group1.k1),
                               static_cast<float>(c.group1.k2),
                               static_cast<float>(c.group1.dw_kernel),
                               static_cast<float>(c.group2.k1),
                               static_cast<float>(c.group2.k2),
                               static_cast<float>(c.group2.dw_kernel),
                               static_cast<float>(c.fusion_reduction),
                               static_cast<float>(c.ffn_expansion)};
    return TensorF({static_cast<std::int64_t>(v.size())}, v);
}

NetworkConfig config_from_tensor(const TensorF& t) {
    if (t.rank() != 1 || t.numel() != 11) {
        throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: malformed " + kConfigName);
    }
    const auto v = t.data();
    auto i = [&](std::size_t k) { return static_cast<int>(v[k]); };
    NetworkConfig c;
    c.base_channels = i(0);
    c.io_channels = i(1);
    c.mixer = i(2) == 0 ? BlockMixer::pcsam : BlockMixer::depthwise;
    c.group1 = {i(3), i(4), i(5)};
    c.group2 = {i(6), i(7), i(8)};
    c.fusion_reduction = i(9);
    c.ffn_expansion = i(10);
    return c;
}

}  // namespace

std::string encode_tensor_table(const TensorTable& table) {
    std::string out(kMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, table.digest);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(table.tensors.size()));
    for (const auto& [name, t] : table.tensors) {
        if (name.size() > 0xFFFF) throw std::invalid_argument("checkpoint: tensor name too long");
        if (t.rank() > 0xFF) throw std::invalid_argument("checkpoint: tensor rank too large");
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (std::int64_t d : t.shape()) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
        for (float f : t.data()) put<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
    return out;
}

TensorTable decode_tensor_table(const std::string& bytes) {
    Reader r(bytes);
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw CheckpointError(CheckpointErrorKind::bad_magic, "checkpoint: bad magic (not a PCSA checkpoint)");
    }
    r.bytes(4, "magic");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError(CheckpointErrorKind::version_mismatch,
                              "checkpoint: unsupported format version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
    }
    TensorTable table;
    table.digest = r.get<std::uint64_t>("config digest");
    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto len = r.get<std::uint16_t>("name length");
        std::string name = r.bytes(len, "tensor name");
        const auto rank = r.get<std::uint8_t>("rank");
        Shape shape;
        std::size_t n = 1;
        for (std::uint8_t d = 0; d < rank; ++d) {
            const auto dim = r.get<std::uint32_t>("dims");
            if (dim == 0) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: zero dimension in " + name);
            shape.push_back(dim);
            n *= dim;
            if (n > bytes.size()) throw CheckpointError(CheckpointErrorKind::truncated, "checkpoint truncated in " + name);
        }
        std::vector<float> values(n);
        for (auto& v : values) v = std::bit_cast<float>(r.get<std::uint32_t>("payload"));
        table.tensors.emplace_back(std::move(name), TensorF(shape, std::move(values)));
    }
    if (!r.done()) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: trailing bytes after tensor table");
    return table;
}

std::string encode_checkpoint(const NetworkConfig& net, const ParamStore<float>& params,
                              const AdamState<float>& adam) {
    TensorTable table;
    table.digest = net.digest();
    table.tensors.emplace_back(kConfigName, config_tensor(net));
    for (const auto& [name, t] : params) table.tensors.emplace_back(name, t);
    // Split the step into two exact 32-bit halves so any u64 survives.
    const float lo = static_cast<float>(adam.step & 0xFFFF);
    const float hi = static_cast<float>(adam.step >> 16);
    table.tensors.emplace_back(kStepName, TensorF({2}, std::vector<float>{lo, hi}));
    if (adam.step >> 40) throw std::invalid_argument("checkpoint: Adam step too large");
    for (const auto& [name, t] : adam.m) table.tensors.emplace_back("adam.m." + name, t);
    for (const auto& [name, t] : adam.v) table.tensors.emplace_back("adam.v." + name, t);
    return encode_tensor_table(table);
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    TensorTable table = decode_tensor_table(bytes);
    if (table.tensors.empty() || table.tensors.front().first != kConfigName) {
        throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: missing " + kConfigName);
    }
    Checkpoint ck;
    ck.net = config_from_tensor(table.tensors.front().second);
    if (ck.net.digest() != table.digest) {
        throw CheckpointError(CheckpointErrorKind::digest_mismatch,
                              "checkpoint: config digest mismatch (header does not match stored config)");
    }
    bool have_step = false;
    for (std::size_t i = 1; i < table.tensors.size(); ++i) {
        auto& [name, t] = table.tensors[i];
        if (name == kStepName) {
            if (t.numel() != 2) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: malformed adam.step");
            ck.adam.step = static_cast<std::uint64_t>(t.data()[0]) | (static_cast<std::uint64_t>(t.data()[1]) << 16);
            have_step = true;
        } else if (name.rfind("adam.m.", 0) == 0) {
            ck.adam.m.add(name.substr(7), t);
        } else if (name.rfind("adam.v.", 0) == 0) {
            ck.adam.v.add(name.substr(7), t);
        } else {
            ck.params.add(name, t);
        }
    }
    if (!have_step) throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: missing adam.step");

    // The parameter set must be exactly what this config initializes.
    const auto expected = init_params<float>(ck.net, 0);
    if (expected.names() != ck.params.names()) {
        throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: parameter set does not match its config");
    }
    for (const auto& [name, t] : expected) {
        if (ck.params.get(name).shape() != t.shape()) {
            throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: wrong shape for " + name);
        }
        if (!ck.adam.m.contains(name) || !ck.adam.v.contains(name) || ck.adam.m.get(name).shape() != t.shape() ||
            ck.adam.v.get(name).shape() != t.shape()) {
            throw CheckpointError(CheckpointErrorKind::malformed, "checkpoint: missing or malformed moments for " + name);
        }
    }
    return ck;
}

void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& net, const ParamStore<float>& params,
                     const AdamState<float>& adam) {
    const std::string bytes = encode_checkpoint(net, params, adam);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw CheckpointError(CheckpointErrorKind::io, "cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw CheckpointError(CheckpointErrorKind::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointErrorKind::io, "cannot open checkpoint " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace pcsa
