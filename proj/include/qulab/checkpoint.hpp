#ifndef QULAB_CHECKPOINT_HPP_
#define QULAB_CHECKPOINT_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "qulab/model.hpp"

namespace qulab {

// Checkpoint container, format version 1:
//   magic "QULB" | u32 version | config block | u32 tensor count |
//   per tensor: u32 name_len, name, u32 rank, u64 dims[rank], f32 payload |
//   u32 CRC-32 of all prior bytes.
// All integers and floats little-endian. Tensor order is the ParamTree
// enumeration order.
inline constexpr uint32_t kCheckpointVersion = 1;

uint32_t crc32(const uint8_t* data, size_t len);
uint32_t crc32_file(const std::string& path);

std::vector<uint8_t> serialize_checkpoint(const LanguageModel& model);
LanguageModel deserialize_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint(const std::string& path, const LanguageModel& model);
LanguageModel load_checkpoint(const std::string& path);

}  // namespace qulab

#endif  // QULAB_CHECKPOINT_HPP_
