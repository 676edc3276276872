#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "evlg/nn.hpp"
#include "evlg/tensor.hpp"

namespace evlg {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct SavedTensor {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

// A named group of tensors, or a text blob when `text` is set (the config).
struct CheckpointSection {
    std::string name;
    std::vector<SavedTensor> tensors;
    bool is_text = false;
    std::string text;
};

// File layout: "EVLG", u32 version, u32 section count, then per section
//   u32 name length, name, u8 kind (0 tensors, 1 text), u64 payload bytes,
//   payload, u64 FNV-1a checksum of the payload bytes.
// A tensor payload is u32 count, then per tensor u32 name length, name,
// u32 rank, u64 extents, little-endian f64 values.
struct Checkpoint {
    std::vector<CheckpointSection> sections;

    bool has(const std::string& name) const;
    const CheckpointSection& section(const std::string& name) const;  // CheckpointError if absent
    void set(CheckpointSection section);                               // replaces a section of the same name
};

std::uint64_t fnv1a64(const void* bytes, std::size_t size);

CheckpointSection tensor_section(const std::string& name, const ParameterList& params);
CheckpointSection text_section(const std::string& name, const std::string& text);

// Copies saved values into `params`; names and shapes must match one to one.
void restore_section(const CheckpointSection& section, const ParameterList& params);
ParameterList section_tensors(const CheckpointSection& section);

// Throws CheckpointError on I/O failure, bad magic, unsupported version,
// truncation or checksum mismatch.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace evlg
