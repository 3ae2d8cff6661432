#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "luq/common.hpp"

namespace luq {

// On-disk layout (all little-endian):
//   magic "LUQC" (4) | version u32 | header_len u64 | JSON header | blob
// Header keys: "version", "kind" in {"model","calib","quantized"},
// "tensors" (array of records), "config" (kind-specific).
inline constexpr uint32_t kContainerVersion = 1;
inline constexpr char kContainerExt[] = ".luqc";

struct TensorRecord {
    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<int64_t> shape;  // row-major
    uint64_t offset = 0;         // into blob; assigned at write time
    uint64_t nbytes = 0;
};

struct NamedTensor {
    std::string name;
    Dtype dtype = Dtype::F32;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;

    static NamedTensor f32(std::string name, std::vector<int64_t> shape,
                           const std::vector<float>& data);
    static NamedTensor u32(std::string name, std::vector<int64_t> shape,
                           const std::vector<uint32_t>& data);
    std::vector<float> as_f32() const;
    std::vector<uint32_t> as_u32() const;
};

struct Container {
    std::string kind;       // "model" | "calib" | "quantized"
    nlohmann::json config;  // kind-specific
    std::vector<NamedTensor> tensors;

    const NamedTensor& tensor(const std::string& name) const;
    bool has_tensor(const std::string& name) const;
};

std::vector<uint8_t> write_container(const Container& c);
Container read_container(const std::vector<uint8_t>& bytes);

void save_container(const Container& c, const std::string& path);
Container load_container(const std::string& path);

// ---- model manifest -------------------------------------------------------

struct LayerTensorNames {
    std::string wq, wk, wv, wo, w1, w2;
};

struct ModelManifest {
    int64_t num_layers = 0;
    int64_t hidden_dim = 0;
    int64_t heads = 0;
    int64_t ff_dim = 0;
    int64_t vocab_size = 0;
    bool pos_encoding = true;
    std::vector<LayerTensorNames> layers;
    std::vector<std::string> quant_tags;  // per layer: fp32|rtn4|gptq4|bin
    std::string embed_name;
    std::string head_name;

    std::vector<std::string> layer_tensor_list(int64_t i) const;
    nlohmann::json to_json() const;
    static ModelManifest from_json(const nlohmann::json& j);
    // checks name references and shape consistency against the records
    void validate(const Container& c) const;
};

ModelManifest manifest_of(const Container& c);

// ---- synthetic stacks ------------------------------------------------------

struct SynthParams {
    int64_t heads = 4;
    int64_t ff_dim = 0;  // 0 -> 2*d
    int64_t vocab_size = 32;
    bool pos_encoding = true;
    // relative strength of the MLP contribution; large values make the
    // residual stream track the (rank-limited, saturated) MLP output
    float mlp_gain = 4.0f;
    // pre-tanh amplification; drives saturation
    float act_gain = 3.0f;
    float attn_scale = 0.5f;
    // geometric per-layer growth of mlp_gain (1 = flat schedule)
    float depth_growth = 1.0f;
    // number of leading hidden dimensions token embeddings occupy (0 -> all).
    // A proper subspace leaves the remaining dimensions reachable only by
    // non-token inputs, so text-only calibration cannot observe them
    int64_t embed_dims = 0;
};

// Generates an L-layer stack whose layer-i MLP up-projection is a rank-r_i
// product of seeded gaussian factors feeding a tanh. Low ranks collapse the
// residual stream onto a low-diversity set of saturated patterns.
Container synth_stack(int64_t L, int64_t d, const std::vector<int64_t>& ranks,
                      uint64_t seed, const SynthParams& p = {});

}  // namespace luq
