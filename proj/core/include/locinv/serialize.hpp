#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "locinv/tensor.hpp"

namespace locinv {

// Named-tensor container. Header: magic "LITB", u32 version, u32 dtype
// (0 = float32, 1 = float64), u32 count; then per tensor: u32 name length,
// name bytes, u32 ndim, u32 dims, raw little-endian data.
enum class TensorDType : uint32_t { f32 = 0, f64 = 1 };

void write_tensor_file(const std::string& path, const std::map<std::string, Tensor>& tensors,
                       TensorDType dtype);
std::map<std::string, Tensor> read_tensor_file(const std::string& path);

// Convenience for a flat list stored under zero-padded numeric keys.
void write_tensor_list(const std::string& path, const std::vector<Tensor>& tensors, TensorDType dtype);
std::vector<Tensor> read_tensor_list(const std::string& path);

uint64_t fnv1a64(const void* bytes, size_t n);
uint64_t file_checksum(const std::string& path);
std::string checksum_hex(uint64_t checksum);

}  // namespace locinv
