#pragma once

// Block summaries of bridge weights and their image/table export.
//
// Entry (i, j) of a block-norm grid is the Frobenius norm of the
// d_model x d_model block of decoder layer i's bridge matrix that reads
// encoder layer j (0 = lowest).

#include <filesystem>
#include <string>
#include <vector>

#include "encbridge/model.hpp"

namespace encbridge {

struct BlockNormMatrix {
    std::size_t rows = 0;  // decoder layers
    std::size_t cols = 0;  // encoder layers
    std::vector<double> values;
    std::size_t step = 0;
    std::string init_scheme;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    double min() const;
    double max() const;
};

template <typename T>
BlockNormMatrix block_norms(const BridgeWeights<T>& bridge, const ModelConfig& config);

/// Block norms of (after - before). Throws DimensionError on shape mismatch.
template <typename T>
BlockNormMatrix weight_drift(const BridgeWeights<T>& before, const BridgeWeights<T>& after);

enum class HeatmapFormat { Csv, Pgm };

/// csv: header enc0..encN, one row per decoder layer, 9 significant digits.
/// pgm: binary P5, each cell scaled linearly so min -> 0 and max -> 255
/// (all cells 255 when min == max), drawn as an upscale x upscale square;
/// min and max go to minmax.txt beside the image.
void export_heatmap(const BlockNormMatrix& m, const std::filesystem::path& path, HeatmapFormat format,
                    std::size_t upscale = 1);

/// Raw matrix as a P5 image with the same scaling rules and sidecar.
template <typename T>
void export_matrix_pgm(const Tensor<T>& matrix, const std::filesystem::path& path);

/// Parses a CSV written by export_heatmap.
BlockNormMatrix read_heatmap_csv(const std::filesystem::path& path);

}  // namespace encbridge
