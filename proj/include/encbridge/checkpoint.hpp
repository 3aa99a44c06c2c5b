#pragma once

// Binary checkpoint.
//
// Layout, every integer little-endian:
//   magic      8 bytes "ENCBRCK1"
//   step       u64
//   config     u32 length + UTF-8 key=value text
//   vocab      u32 length + one token per line (ids from 4)
//   records    u32 count, then per record:
//                u32 name length, name bytes, u32 rank, u64 dims[rank],
//                u64 offset (in scalars from the payload start)
//   payload    u64 scalar count, then float32 little-endian scalars
//
// Records hold model parameters under their own names, Adam moments under
// "adam.m/<name>" and "adam.v/<name>", and the loss history under
// "train/loss_history".

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "encbridge/model.hpp"

namespace encbridge {

class CheckpointError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    ModelConfig model_config;
    /// Training settings snapshot as key=value lines.
    std::string train_config;
    std::string vocab_text;
    std::map<std::string, Tensor<float>> params;
    std::map<std::string, Tensor<float>> adam_m;
    std::map<std::string, Tensor<float>> adam_v;
    std::uint64_t step = 0;
    std::vector<float> loss_history;

    static Checkpoint from_model(const Model<float>& model);
    /// Rebuilds the model; throws CheckpointError naming the first missing or
    /// misshapen parameter record.
    Model<float> to_model() const;

    std::vector<std::uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

    void save(const std::filesystem::path& path) const;
    static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace encbridge
