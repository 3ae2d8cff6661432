#pragma once

#include <functional>
#include <vector>

#include "luq/calib.hpp"
#include "luq/container.hpp"
#include "luq/mat.hpp"

namespace luq {

// The six linears of a block, in execution order.
enum class LinearId { WQ = 0, WK, WV, WO, W1, W2 };
inline constexpr int kLinearsPerLayer = 6;

struct LayerWeights {
    Mat wq, wk, wv, wo;  // [d, d]
    Mat w1;              // [ff, d]
    Mat w2;              // [d, ff]
};

// A resident layer stack. Quantized payloads are dequantized on load, so
// execution always runs on f32 weights regardless of storage format.
struct LayerStack {
    ModelManifest manifest;
    std::vector<LayerWeights> layers;
    Mat embed;  // [vocab, d]
    Mat head;   // [vocab, d]

    static LayerStack from_container(const Container& c);
};

// Residual-stream output of every layer, for every calibration sequence.
struct ActivationSet {
    // acts[layer][seq] is [N, d]
    std::vector<std::vector<Mat>> acts;

    int64_t num_layers() const { return static_cast<int64_t>(acts.size()); }
};

// observer(layer, linear, rows): `rows` are the input rows fed to that
// linear during this forward pass. Used for Hessian accumulation.
using LinearObserver = std::function<void(int64_t, LinearId, const Mat&)>;

struct ForwardOptions {
    bool capture = false;           // keep per-layer residual outputs
    bool want_logits = true;
    int64_t stop_after = -1;        // stop once this layer's output is computed
    LinearObserver observer;        // may be empty
};

struct ForwardResult {
    Mat hidden;               // [N, d] final residual stream
    Mat logits;               // [N, vocab] when requested
    std::vector<Mat> captured;  // per layer, when requested
};

// Sinusoidal position encoding, added to the input embeddings when the
// manifest enables it.
Mat position_encoding(int64_t n, int64_t d);

// Embeds one sequence: text tokens through the stack's own table,
// multimodal sequences pass their rows through unchanged.
Mat embed_sequence(const LayerStack& stack, const Sequence& seq);

// h_i = f(h_{i-1}) over the block stack; throws on non-finite intermediates.
ForwardResult forward(const LayerStack& stack, const Mat& input,
                      const ForwardOptions& opts = {});

ActivationSet capture_activations(const LayerStack& stack, const CalibrationSet& calib);

}  // namespace luq
