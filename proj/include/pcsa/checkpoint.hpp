#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "pcsa/network.hpp"
#include "pcsa/params.hpp"
#include "pcsa/train.hpp"

namespace pcsa {

enum class CheckpointErrorKind { io, bad_magic, version_mismatch, digest_mismatch, truncated, malformed };

class CheckpointError : public std::runtime_error {
public:
    CheckpointError(CheckpointErrorKind kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
    CheckpointErrorKind kind() const { return kind_; }

private:
    CheckpointErrorKind kind_;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Raw file contents: the digest from the header and the tensor table in
/// file order.
struct TensorTable {
    std::uint64_t digest = 0;
    std::vector<std::pair<std::string, TensorF>> tensors;
};

/// magic "PCSA" | u32 version | u64 digest | u32 count | per tensor:
/// u16 name_len, name, u8 rank, u32 dims[rank], f32 payload. Little-endian.
std::string encode_tensor_table(const TensorTable& table);
TensorTable decode_tensor_table(const std::string& bytes);

struct Checkpoint {
    NetworkConfig net;
    ParamStore<float> params;
    AdamState<float> adam;
};

/// Besides the parameters, the table holds the network config ("meta.config"),
/// the Adam step ("adam.step") and moments ("adam.m.*", "adam.v.*").
std::string encode_checkpoint(const NetworkConfig& net, const ParamStore<float>& params,
                              const AdamState<float>& adam);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const NetworkConfig& net, const ParamStore<float>& params,
                     const AdamState<float>& adam);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pcsa
