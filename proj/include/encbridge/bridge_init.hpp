#pragma once

// Bridge weight initializations.
//
// OriginalConnection reproduces the stock wiring: each decoder layer sees only
// the last encoder layer. Gca routes decoder layer i to encoder layer
// L_enc-1-i (clamped at 0), so decoding moves from the top encoder layer down.
// ConstantOne and RandomXavier are control conditions.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include "encbridge/model.hpp"

namespace encbridge {

enum class InitVariant { OriginalConnection, Gca, ConstantOne, RandomXavier };

struct InitScheme {
    InitVariant variant = InitVariant::OriginalConnection;
    std::uint64_t seed = 0;  // RandomXavier only
};

/// CLI spelling: original | gca | ones | xavier.
std::string_view init_variant_name(InitVariant v);
std::optional<InitVariant> parse_init_variant(std::string_view name);

/// Encoder layer whose identity block decoder layer dec_layer gets under Gca.
std::size_t gca_source_layer(std::size_t n_enc_layers, std::size_t dec_layer);

template <typename T>
BridgeWeights<T> init_original_connection(std::size_t n_enc_layers, std::size_t n_dec_layers,
                                          std::size_t d_model);

template <typename T>
BridgeWeights<T> init_gca(std::size_t n_enc_layers, std::size_t n_dec_layers, std::size_t d_model);

template <typename T>
Tensor<T> init_constant_one(const Shape& shape);

/// Uniform in +-sqrt(6 / (fan_in + fan_out)) with fan_in = shape[0] and
/// fan_out = the product of the remaining dimensions.
template <typename T>
Tensor<T> init_random_xavier(const Shape& shape, std::uint64_t seed);

/// Dispatches on the scheme. RandomXavier seeds each decoder layer's matrix
/// from (scheme.seed, layer index).
template <typename T>
BridgeWeights<T> make_bridge(const InitScheme& scheme, std::size_t n_enc_layers,
                             std::size_t n_dec_layers, std::size_t d_model);

}  // namespace encbridge
