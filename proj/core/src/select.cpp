#include "luq/select.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "luq/quant.hpp"

namespace luq {

nlohmann::json QuantPlan::to_json() const {
    nlohmann::json j = {{"pi", pi},
                        {"k", k},
                        {"tags", tags},
                        {"mode", mode},
                        {"avg_bits_nominal", avg_bits_nominal}};
    for (auto& [key, val] : provenance.items()) j[key] = val;
    return j;
}

QuantPlan QuantPlan::from_json(const nlohmann::json& j) {
    QuantPlan p;
    try {
        p.pi = j.at("pi").get<std::vector<int64_t>>();
        p.k = j.at("k").get<int64_t>();
        p.tags = j.at("tags").get<std::vector<std::string>>();
        p.mode = j.value("mode", "fixed-k");
        p.avg_bits_nominal = j.value("avg_bits_nominal", 0.0);
        // to_json flattens provenance into the top level; gather it back
        for (auto& [key, val] : j.items())
            if (key != "pi" && key != "k" && key != "tags" && key != "mode" &&
                key != "avg_bits_nominal")
                p.provenance[key] = val;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad plan: ") + e.what());
    }
    if (p.k < 0 || p.k > static_cast<int64_t>(p.pi.size()))
        throw ValidationError("bad plan: k out of range");
    return p;
}

QuantPlan make_plan(const std::vector<int64_t>& pi, int64_t k, const std::string& q_low,
                    const std::string& q_high) {
    int64_t L = static_cast<int64_t>(pi.size());
    if (k < 0 || k > L) throw ValidationError("make_plan: k out of range");
    std::vector<uint8_t> seen(static_cast<size_t>(L), 0);
    for (int64_t layer : pi) {
        if (layer < 0 || layer >= L || seen[static_cast<size_t>(layer)])
            throw ValidationError("make_plan: pi is not a permutation");
        seen[static_cast<size_t>(layer)] = 1;
    }
    QuantPlan p;
    p.pi = pi;
    p.k = k;
    p.tags.assign(static_cast<size_t>(L), q_high);
    for (int64_t j = 0; j < k; ++j)
        p.tags[static_cast<size_t>(pi[static_cast<size_t>(j)])] = q_low;
    p.avg_bits_nominal =
        (static_cast<double>(k) * kNominalBitsLow +
         static_cast<double>(L - k) * kNominalBitsHigh) / static_cast<double>(L);
    p.mode = "fixed-k";
    return p;
}

std::vector<int64_t> entropy_order(const std::vector<double>& h) {
    std::vector<int64_t> idx(h.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        return h[static_cast<size_t>(a)] < h[static_cast<size_t>(b)];
    });
    return idx;
}

SelectionResult greedy_select(const StepMetric& metric, int64_t num_layers, double tau) {
    if (num_layers < 1) throw ValidationError("greedy_select: need >= 1 layer");
    SelectionResult res;
    for (int64_t k = 1; k <= num_layers; ++k) {
        double perf = metric(k);
        res.evaluated.emplace_back(k, perf);
        ++res.eval_count;
        if (perf < tau) {
            res.k_star = k - 1;
            return res;
        }
        res.k_star = k;
    }
    return res;
}

SelectionResult binary_search_select(const StepMetric& metric, int64_t num_layers,
                                     double tau) {
    if (num_layers < 1) throw ValidationError("binary_search_select: need >= 1 layer");
    SelectionResult res;
    auto probe = [&](int64_t k) {
        double perf = metric(k);
        res.evaluated.emplace_back(k, perf);
        ++res.eval_count;
        return perf >= tau;
    };

    // k = 0 (nothing quantized) always satisfies the threshold by definition
    int64_t lo = 0, hi = num_layers;
    while (lo < hi) {
        int64_t mid = lo + (hi - lo + 1) / 2;
        if (probe(mid))
            lo = mid;
        else
            hi = mid - 1;
    }
    res.k_star = lo;
    if (res.k_star > 0 && !probe(res.k_star)) res.non_monotone_suspected = true;
    return res;
}

QuantPlan budget_select(const std::vector<int64_t>& pi,
                        const std::vector<int64_t>& layer_params, double budget_bytes,
                        double bits_low, double bits_high, double non_backbone_bytes) {
    if (budget_bytes <= 0.0) throw ValidationError("budget_select: budget must be > 0");
    int64_t L = static_cast<int64_t>(pi.size());
    if (static_cast<int64_t>(layer_params.size()) != L)
        throw ValidationError("budget_select: need one parameter count per layer");

    auto bytes_at = [&](int64_t k) {
        double total = non_backbone_bytes;
        for (int64_t j = 0; j < L; ++j) {
            double bits = j < k ? bits_low : bits_high;
            total += static_cast<double>(layer_params[static_cast<size_t>(pi[static_cast<size_t>(j)])]) *
                     bits / 8.0;
        }
        return total;
    };

    for (int64_t k = 0; k <= L; ++k) {
        if (bytes_at(k) <= budget_bytes) {
            QuantPlan p = make_plan(pi, k);
            p.mode = "budget";
            p.provenance = {{"budget", budget_bytes}, {"bytes", bytes_at(k)}};
            return p;
        }
    }
    throw ValidationError("budget infeasible");
}

}  // namespace luq
