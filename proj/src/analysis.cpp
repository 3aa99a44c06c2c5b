#include "encbridge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace encbridge {

double BlockNormMatrix::min() const {
    return values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
}

double BlockNormMatrix::max() const {
    return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

namespace {

template <typename T>
void check_layout(const BridgeWeights<T>& b) {
    const Shape want{b.n_enc_layers * b.d_model, b.d_model};
    for (const auto& m : b.per_decoder_layer)
        if (m.shape() != want)
            throw DimensionError("bridge matrix " + shape_str(m.shape()) + ", expected " + shape_str(want));
}

// Frobenius norm of each encoder-layer row slice; diff (optional) is subtracted.
template <typename T>
std::vector<double> slice_norms(std::span<const T> m, std::span<const T> diff, std::size_t n_enc,
                                std::size_t d) {
    std::vector<double> out(n_enc);
    for (std::size_t j = 0; j < n_enc; ++j) {
        double ss = 0;
        for (std::size_t i = j * d * d; i < (j + 1) * d * d; ++i) {
            const double v = static_cast<double>(m[i]) - (diff.empty() ? 0.0 : static_cast<double>(diff[i]));
            ss += v * v;
        }
        out[j] = std::sqrt(ss);
    }
    return out;
}

std::string format9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_pgm(const std::vector<double>& values, std::size_t rows, std::size_t cols,
               const std::filesystem::path& path, std::size_t upscale) {
    if (upscale == 0) throw std::invalid_argument("upscale must be at least 1");
    const double lo = values.empty() ? 0.0 : *std::min_element(values.begin(), values.end());
    const double hi = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << "P5\n" << cols * upscale << ' ' << rows * upscale << "\n255\n";
    std::vector<unsigned char> line(cols * upscale);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            const double v = values[r * cols + c];
            const double level = hi > lo ? std::round((v - lo) / (hi - lo) * 255.0) : 255.0;
            std::fill_n(line.begin() + c * upscale, upscale, static_cast<unsigned char>(level));
        }
        for (std::size_t k = 0; k < upscale; ++k)
            os.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(line.size()));
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
    std::ofstream mm(path.parent_path() / "minmax.txt", std::ios::binary);
    if (!mm) throw std::runtime_error("cannot write minmax.txt beside " + path.string());
    mm << format9(lo) << '\n' << format9(hi) << '\n';
}

}  // namespace

template <typename T>
BlockNormMatrix block_norms(const BridgeWeights<T>& bridge, const ModelConfig& config) {
    if (bridge.n_enc_layers != config.n_enc_layers || bridge.d_model != config.d_model ||
        bridge.per_decoder_layer.size() != config.n_dec_layers)
        throw DimensionError("bridge does not match model config (" + std::to_string(config.n_dec_layers) +
                             " decoder x " + std::to_string(config.n_enc_layers) + " encoder layers, width " +
                             std::to_string(config.d_model) + ")");
    check_layout(bridge);
    BlockNormMatrix out{config.n_dec_layers, config.n_enc_layers, {}, 0, {}};
    for (const auto& m : bridge.per_decoder_layer) {
        const auto row = slice_norms<T>(m.data(), {}, bridge.n_enc_layers, bridge.d_model);
        out.values.insert(out.values.end(), row.begin(), row.end());
    }
    return out;
}

template <typename T>
BlockNormMatrix weight_drift(const BridgeWeights<T>& before, const BridgeWeights<T>& after) {
    if (before.n_enc_layers != after.n_enc_layers || before.d_model != after.d_model ||
        before.per_decoder_layer.size() != after.per_decoder_layer.size())
        throw DimensionError("weight_drift: bridges differ in shape");
    check_layout(before);
    check_layout(after);
    BlockNormMatrix out{before.per_decoder_layer.size(), before.n_enc_layers, {}, 0, {}};
    for (std::size_t i = 0; i < before.per_decoder_layer.size(); ++i) {
        const auto row = slice_norms<T>(after.per_decoder_layer[i].data(), before.per_decoder_layer[i].data(),
                                        before.n_enc_layers, before.d_model);
        out.values.insert(out.values.end(), row.begin(), row.end());
    }
    return out;
}

void export_heatmap(const BlockNormMatrix& m, const std::filesystem::path& path, HeatmapFormat format,
                    std::size_t upscale) {
    if (m.values.size() != m.rows * m.cols) throw DimensionError("block-norm grid size mismatch");
    if (format == HeatmapFormat::Pgm) {
        write_pgm(m.values, m.rows, m.cols, path, upscale);
        return;
    }
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    for (std::size_t c = 0; c < m.cols; ++c) os << (c ? "," : "") << "enc" << c;
    os << '\n';
    for (std::size_t r = 0; r < m.rows; ++r) {
        for (std::size_t c = 0; c < m.cols; ++c) os << (c ? "," : "") << format9(m.at(r, c));
        os << '\n';
    }
    if (!os) throw std::runtime_error("failed writing " + path.string());
}

template <typename T>
void export_matrix_pgm(const Tensor<T>& matrix, const std::filesystem::path& path) {
    if (matrix.rank() != 2) throw DimensionError("export_matrix_pgm needs a matrix, got " + shape_str(matrix.shape()));
    std::vector<double> values(matrix.data().begin(), matrix.data().end());
    write_pgm(values, matrix.dim(0), matrix.dim(1), path, 1);
}

BlockNormMatrix read_heatmap_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    BlockNormMatrix m;
    if (!std::getline(is, line)) throw std::runtime_error(path.string() + ": missing header");
    m.cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::size_t n = 0;
        while (std::getline(row, cell, ',')) {
            m.values.push_back(std::stod(cell));
            ++n;
        }
        if (n != m.cols) throw std::runtime_error(path.string() + ": ragged row");
        ++m.rows;
    }
    return m;
}

template BlockNormMatrix block_norms<float>(const BridgeWeights<float>&, const ModelConfig&);
template BlockNormMatrix block_norms<double>(const BridgeWeights<double>&, const ModelConfig&);
template BlockNormMatrix weight_drift<float>(const BridgeWeights<float>&, const BridgeWeights<float>&);
template BlockNormMatrix weight_drift<double>(const BridgeWeights<double>&, const BridgeWeights<double>&);
template void export_matrix_pgm<float>(const Tensor<float>&, const std::filesystem::path&);
template void export_matrix_pgm<double>(const Tensor<double>&, const std::filesystem::path&);

}  // namespace encbridge
