#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "luq/calib.hpp"
#include "luq/entropy.hpp"
#include "luq/net.hpp"
#include "luq/quant.hpp"
#include "luq/select.hpp"

namespace luq {

struct EvalReport {
    std::string metric;             // "accuracy" | "perplexity"
    double scalar = 0.0;            // accuracy, or exp(mean NLL) for perplexity
    double per_seq_mean = 0.0;      // mean of per_seq (== scalar for accuracy)
    std::vector<double> per_seq;    // accuracy: fraction; perplexity: mean NLL
    double wall_time_s = 0.0;
    nlohmann::json descriptor = nlohmann::json::object();

    nlohmann::json to_json() const;
};

// Mean top-1 next-token accuracy over teacher-forced target positions.
// Multimodal sequences contribute only their text continuation targets.
EvalReport token_accuracy(const LayerStack& stack, const CalibrationSet& eval_split);

// exp(mean token negative log-likelihood) over the same target positions.
EvalReport perplexity(const LayerStack& stack, const CalibrationSet& eval_split);

EvalReport run_metric(const std::string& metric, const LayerStack& stack,
                      const CalibrationSet& eval_split);

// Higher-is-better view of a metric (perplexity enters negated).
double metric_score(const std::string& metric, const LayerStack& stack,
                    const CalibrationSet& eval_split);

// Quantizes `stack` under (pi, k) and scores the result; the step metric used
// by threshold selection and the ablation drivers.
StepMetric make_step_metric(const LayerStack& stack, const std::vector<int64_t>& pi,
                            const CalibrationSet& calib, const CalibrationSet& eval_split,
                            const QuantConfig& cfg, const std::string& metric);

struct OrderingComparison {
    std::vector<int64_t> ks;
    std::vector<double> low_first;   // score per k, ascending-entropy order
    std::vector<double> high_first;  // score per k, descending-entropy order
    double auc_low = 0.0;            // mean score over the k grid
    double auc_high = 0.0;

    nlohmann::json to_json() const;
};

OrderingComparison compare_orderings(const LayerStack& stack, const std::vector<int64_t>& pi,
                                     const CalibrationSet& calib,
                                     const CalibrationSet& eval_split,
                                     const std::vector<int64_t>& ks, const QuantConfig& cfg,
                                     const std::string& metric = "accuracy");

// Rebuilds the calibration set per alpha (same pools, same seed), quantizes
// under the identical plan, and scores on the fixed eval split.
std::vector<double> compare_calibration(const LayerStack& stack,
                                        const std::vector<std::vector<uint32_t>>& text_pool,
                                        const std::vector<MmExample>& mm_pool,
                                        const std::vector<double>& alphas,
                                        const QuantPlan& plan, int64_t n_seqs,
                                        int64_t seq_len, uint64_t seed,
                                        const CalibrationSet& eval_split,
                                        const QuantConfig& cfg,
                                        const std::string& metric = "accuracy");

struct TradeoffRow {
    int64_t k = 0;
    double avg_bits = 0.0;
    double score = 0.0;
};

std::vector<TradeoffRow> tradeoff_curve(const LayerStack& stack,
                                        const std::vector<int64_t>& pi,
                                        const CalibrationSet& calib,
                                        const CalibrationSet& eval_split,
                                        const std::vector<int64_t>& ks,
                                        const QuantConfig& cfg,
                                        const std::string& metric = "accuracy");

// ---- synthetic pools for desk-scale experiments -----------------------------

struct PoolParams {
    int64_t pool_len = 0;       // 0 -> 2 * seq_len
    int64_t prefix_len = 4;     // random tokens before greedy continuation
    int64_t mm_context = 8;     // gaussian embedding rows before continuation
    float mm_embed_scale = 1.5f;
    // optional common component added to every multimodal embedding row
    // (alternating +-mm_bias across dimensions). A nonzero bias puts
    // multimodal context in a region of input space text sequences never
    // visit, which is what makes the calibration mixing ratio matter; keep
    // scale^2 + bias^2 near the unit variance of token embeddings so the
    // multimodal rows inform the calibration Hessians without drowning the
    // text statistics
    float mm_bias = 0.0f;
};

// Text pool: a random prefix followed by the stack's own greedy rollout, so
// the fp32 model reproduces the continuation region exactly.
std::vector<std::vector<uint32_t>> make_text_pool(const LayerStack& stack, int64_t count,
                                                  int64_t seq_len, uint64_t seed,
                                                  const PoolParams& p = {});

// Multimodal pool: gaussian embedding context followed by an embedded greedy
// text continuation; targets cover only the continuation region.
std::vector<MmExample> make_mm_pool(const LayerStack& stack, int64_t count,
                                    int64_t seq_len, uint64_t seed,
                                    const PoolParams& p = {});

}  // namespace luq
