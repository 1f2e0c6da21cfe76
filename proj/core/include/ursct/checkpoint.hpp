#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ursct/tensor.hpp"

namespace ursct {

// Serialized training state. File layout: magic "URSCT1", u32 LE version (1),
// u32 tensor count then per tensor u16 name length + name + u8 dtype (0=f32)
// + u8 ndim + u32 dims + raw LE data; the same encoding again for optimizer
// moments; u64 step; u64 epoch; u32 RNG blob length + blob; and a trailing
// u32-length-prefixed "key = value" snapshot of the effective run settings so
// inference can rebuild the model without the original config file.
struct CheckpointState {
    std::vector<std::pair<std::string, Tensor<float>>> tensors;
    std::vector<std::pair<std::string, Tensor<float>>> moments;
    std::uint64_t step = 0;
    std::uint64_t epoch = 0;
    std::string rng_state;
    std::map<std::string, std::string> config_snapshot;
};

void save_checkpoint(const CheckpointState& state, const std::string& path);

// Throws FormatError on a bad magic, unsupported version, or truncation;
// IoError when the file cannot be opened.
CheckpointState load_checkpoint(const std::string& path);

}  // namespace ursct
