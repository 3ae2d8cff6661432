#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "luq/common.hpp"

namespace luq {

// Per-layer assignment derived from an entropy ordering: layer pi[j] gets the
// ultra-low tag iff j < k.
struct QuantPlan {
    std::vector<int64_t> pi;
    int64_t k = 0;
    std::vector<std::string> tags;  // per layer: q_low or q_high tag name
    double avg_bits_nominal = 0.0;
    std::string mode;  // "threshold" | "budget" | "fixed-k"
    nlohmann::json provenance = nlohmann::json::object();

    nlohmann::json to_json() const;
    static QuantPlan from_json(const nlohmann::json& j);
};

QuantPlan make_plan(const std::vector<int64_t>& pi, int64_t k,
                    const std::string& q_low = "bin",
                    const std::string& q_high = "gptq4");

// Stable ascending sort by entropy; ties go to the lower layer index.
std::vector<int64_t> entropy_order(const std::vector<double>& h);

// Higher-is-better scalar metric for a candidate step k.
using StepMetric = std::function<double(int64_t)>;

struct SelectionResult {
    int64_t k_star = 0;
    std::vector<std::pair<int64_t, double>> evaluated;  // (k, performance)
    int64_t eval_count = 0;
    bool non_monotone_suspected = false;
};

// Walks k = 1..L in entropy order, stopping at the first step whose
// performance drops below tau.
SelectionResult greedy_select(const StepMetric& metric, int64_t num_layers, double tau);

// Predicate bisection on performance(k) >= tau, plus one confirming
// evaluation of the answer; <= ceil(log2(L+1)) + 1 metric calls.
SelectionResult binary_search_select(const StepMetric& metric, int64_t num_layers,
                                     double tau);

// Smallest k whose total byte footprint fits the budget.
QuantPlan budget_select(const std::vector<int64_t>& pi,
                        const std::vector<int64_t>& layer_params, double budget_bytes,
                        double bits_low, double bits_high, double non_backbone_bytes);

}  // namespace luq
