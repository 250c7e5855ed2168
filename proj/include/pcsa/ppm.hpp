#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "pcsa/tensor.hpp"

namespace pcsa {

enum class PpmErrorKind { io, malformed_header, truncated_payload, unsupported_maxval };

class PpmError : public std::runtime_error {
public:
    PpmError(PpmErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    PpmErrorKind kind() const noexcept { return kind_; }

private:
    PpmErrorKind kind_;
};

/// Binary P6, maxval 255. Values are clamped to [0,1] and rounded half away
/// from zero.
std::string encode_ppm(const TensorF& image);
/// Returns a [3,H,W] tensor with values k/255.
TensorF decode_ppm(const std::string& bytes);

void write_ppm(const TensorF& image, const std::filesystem::path& path);
TensorF read_ppm(const std::filesystem::path& path);

}  // namespace pcsa
