#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luq/calib.hpp"
#include "luq/container.hpp"
#include "luq/mat.hpp"
#include "luq/net.hpp"

namespace luq {

enum class QFormat { Rtn4, Gptq4, Bin };

const char* qformat_name(QFormat f);
QFormat qformat_from_name(const std::string& s);

struct QuantConfig {
    std::string q_high = "gptq4";
    std::string q_low = "bin";
    int bits = 4;
    int block_size = 128;
    int group_size = 128;
    double damping = 0.01;          // fraction of mean Hessian diagonal
    double salient_frac = 0.05;     // per-column, bin format
    bool sequential = true;         // propagate calibration through quantized prefix
};

// Running H = sum x x^T over the rows fed to one linear, accumulated in f64.
struct HessianAccumulator {
    Matd h;
    int64_t samples = 0;

    explicit HessianAccumulator(int64_t width = 0) {
        if (width > 0) h = Matd::Zero(width, width);
    }
    void add(const Mat& rows);
    int64_t width() const { return h.rows(); }
};

struct QuantizedTensor {
    QFormat fmt = QFormat::Rtn4;
    int64_t rows = 0, cols = 0;
    int bits = 4;       // rtn/gptq code width
    int group_size = 128;

    // rtn4/gptq4: signed codes, two per byte (low nibble first), row-major;
    // bin: first-pass sign plane over all weights, row-major, byte-padded.
    std::vector<uint8_t> codes;
    // rtn4/gptq4: per (row, column-group) symmetric scales.
    std::vector<float> scales;

    // bin extras
    std::vector<uint32_t> salient_cols;      // ascending
    std::vector<uint8_t> salient_res_codes;  // residual sign plane [rows x n_salient]
    float sal_scale1 = 0.0f, sal_scale2 = 0.0f;
    float ns_scale_lo = 0.0f, ns_scale_hi = 0.0f;
    float split_threshold = 0.0f;            // on column mean |w|
    std::vector<uint8_t> col_group_bits;     // per non-salient column: 1 = high group

    uint64_t payload_bytes() const;
    double realized_bits() const {
        return static_cast<double>(payload_bytes()) * 8.0 /
               static_cast<double>(rows * cols);
    }
};

// Nominal bits per weight reported in plans and bit-width tables.
inline constexpr double kNominalBitsLow = 1.08;
inline constexpr double kNominalBitsHigh = 4.0;

void accumulate_hessian(HessianAccumulator& acc, const Mat& rows);

QuantizedTensor rtn_quantize(const Mat& w, int bits, int group_size);
QuantizedTensor gptq_quantize(const Mat& w, const HessianAccumulator& h,
                              const QuantConfig& cfg);
QuantizedTensor billm_binarize(const Mat& w, const HessianAccumulator& h,
                               const QuantConfig& cfg);

Mat dequantize(const QuantizedTensor& q);

// tr(dW H dW^T) with dW = w - dequantize(q); the GPTQ objective.
double proxy_loss(const Mat& w, const QuantizedTensor& q, const HessianAccumulator& h);

// Serialization of one quantized tensor into container records named
// "<base>.<part>", with metadata under config["quant"][base].
void append_quantized(Container& c, const std::string& base, const QuantizedTensor& q);
QuantizedTensor read_quantized(const Container& c, const std::string& base);

struct QuantPlan;  // select.hpp

// Quantizes every backbone layer per the plan's tags, accumulating each
// linear's Hessian from calibration activations. In sequential mode the
// inputs to layer i come from the already-quantized prefix.
Container quantize_stack(const LayerStack& stack, const std::vector<std::string>& tags,
                         const CalibrationSet& calib, const QuantConfig& cfg);

// Realized bits/weight of each backbone layer of a quantized container.
std::vector<double> per_layer_bits(const Container& quantized);

// Unweighted mean over backbone layers.
double avg_bitwidth(const std::vector<double>& layer_bits);
// Parameter-weighted variant (non-default).
double avg_bitwidth_weighted(const std::vector<double>& layer_bits,
                             const std::vector<int64_t>& layer_params);

}  // namespace luq
