#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "sppe/tensor.hpp"
#include "sppe/transformer.hpp"

namespace sppe {

// Named-tensor snapshot. On-disk layout (all integers little-endian):
//   magic "SPPE", u32 version=1, u32 tensor count;
//   per tensor: u16 name length, UTF-8 name, u8 rank, u64 dims[rank],
//               raw little-endian 32-bit floats, row-major;
//   u64 step.
struct CheckpointTensor {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<float> data;
};

struct Checkpoint {
  std::vector<CheckpointTensor> tensors;
  std::uint64_t step = 0;

  const CheckpointTensor& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Elementwise arithmetic mean per named tensor over the given snapshots;
// step of the result is the max step. Name sets and shapes must agree.
Checkpoint swa_average(const std::vector<Checkpoint>& checkpoints);

template <typename T>
Checkpoint to_checkpoint(const ModelParams<T>& params, std::uint64_t step) {
  Checkpoint ckpt;
  ckpt.step = step;
  for (const auto& [name, tensor] : params.named) {
    CheckpointTensor ct;
    ct.name = name;
    for (const std::size_t e : tensor.shape) ct.dims.push_back(e);
    ct.data.reserve(tensor.numel());
    for (const T v : *tensor.data) ct.data.push_back(static_cast<float>(v));
    ckpt.tensors.push_back(std::move(ct));
  }
  return ckpt;
}

template <typename T>
void load_into_params(const Checkpoint& ckpt, ModelParams<T>& params) {
  for (auto& [name, tensor] : params.named) {
    const CheckpointTensor& ct = ckpt.get(name);
    if (ct.dims.size() != tensor.shape.size()) {
      throw DataError("checkpoint: rank mismatch for " + name);
    }
    for (std::size_t i = 0; i < ct.dims.size(); ++i) {
      if (ct.dims[i] != tensor.shape[i]) {
        throw DataError("checkpoint: shape mismatch for " + name);
      }
    }
    for (std::size_t i = 0; i < ct.data.size(); ++i) {
      (*tensor.data)[i] = static_cast<T>(ct.data[i]);
    }
  }
}

}  // namespace sppe
