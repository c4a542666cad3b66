#pragma once

#include <map>
#include <string>

#include "iocseq/optimizer.hpp"

namespace iocseq::nd {

// Named-tensor archive.
// Layout: magic "IOCS", u32 format version, u32 tensor count; per tensor
// u16 name length + UTF-8 name, u8 rank, u64 per dimension, float32
// little-endian row-major payload; everything after the last tensor is a
// UTF-8 metadata block of key=value lines. Round-trips are bit-exact.
struct Checkpoint {
    ParamMap tensors;
    std::map<std::string, std::string> metadata;

    std::string meta(const std::string& key) const;           // throws if absent
    std::string meta_or(const std::string& key, const std::string& fallback) const;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace iocseq::nd
