#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "luq/container.hpp"
#include "luq/mat.hpp"

namespace luq {

enum class Modality { Text, Multimodal };

// Target sentinel: position contributes no scored prediction.
inline constexpr uint32_t kNoTarget = 0xFFFFFFFFu;

// One calibration/eval sequence. Text sequences carry token ids and are
// embedded through the model's own table at capture time; multimodal
// sequences arrive pre-embedded (upstream connector output) and may carry
// next-token targets on their text continuation region only.
struct Sequence {
    Modality mod = Modality::Text;
    std::vector<uint32_t> tokens;   // text: [N]
    Mat embed;                      // multimodal: [N, d]
    std::vector<uint32_t> targets;  // [N]; targets[t] = token expected after position t

    int64_t length() const {
        return mod == Modality::Text ? static_cast<int64_t>(tokens.size()) : embed.rows();
    }
};

struct MmExample {
    Mat embed;
    std::vector<uint32_t> targets;
};

struct CalibrationSet {
    std::vector<Sequence> seqs;
    int64_t seq_len = 0;
    double alpha = 0.0;
    uint64_t seed = 0;

    int64_t count() const { return static_cast<int64_t>(seqs.size()); }
    int64_t multimodal_count() const;
};

// floor(alpha * n_seqs) sequences from the multimodal pool, the rest from the
// text pool; sampled without replacement when the pool allows, order shuffled
// per seed. Pool sequences longer than seq_len are cropped.
CalibrationSet build_mixed_calibration(const std::vector<std::vector<uint32_t>>& text_pool,
                                       const std::vector<MmExample>& mm_pool,
                                       int64_t n_seqs, int64_t seq_len, double alpha,
                                       uint64_t seed);

// Seeded stratified split; per-modality proportions preserved within one
// sequence. Errors if either part would be empty.
std::pair<CalibrationSet, CalibrationSet> split_holdout(const CalibrationSet& set,
                                                        double holdout_frac,
                                                        uint64_t seed);

Container calib_to_container(const CalibrationSet& set, int64_t hidden_dim);
CalibrationSet calib_from_container(const Container& c);

}  // namespace luq
