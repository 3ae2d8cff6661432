#include "luq/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "luq/rng.hpp"

namespace luq {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// log-softmax NLL of `target` in one logits row
double row_nll(const Mat& logits, int64_t row, uint32_t target) {
    float mx = logits.row(row).maxCoeff();
    double lse = 0.0;
    for (int64_t j = 0; j < logits.cols(); ++j)
        lse += std::exp(static_cast<double>(logits(row, j) - mx));
    return -(static_cast<double>(logits(row, target)) - static_cast<double>(mx) -
             std::log(lse));
}

int64_t argmax_row(const Mat& logits, int64_t row) {
    int64_t best = 0;
    float bv = logits(row, 0);
    for (int64_t j = 1; j < logits.cols(); ++j)
        if (logits(row, j) > bv) {
            bv = logits(row, j);
            best = j;
        }
    return best;
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
    return {{"metric", metric},     {"scalar", scalar},
            {"per_seq_mean", per_seq_mean}, {"per_seq", per_seq},
            {"wall_time_s", wall_time_s},   {"descriptor", descriptor}};
}

EvalReport token_accuracy(const LayerStack& stack, const CalibrationSet& eval_split) {
    if (eval_split.seqs.empty()) throw ValidationError("token_accuracy: empty eval split");
    auto t0 = Clock::now();
    EvalReport rep;
    rep.metric = "accuracy";
    for (const auto& seq : eval_split.seqs) {
        ForwardResult r = forward(stack, embed_sequence(stack, seq));
        int64_t correct = 0, total = 0;
        for (size_t t = 0; t < seq.targets.size(); ++t) {
            if (seq.targets[t] == kNoTarget) continue;
            ++total;
            if (argmax_row(r.logits, static_cast<int64_t>(t)) ==
                static_cast<int64_t>(seq.targets[t]))
                ++correct;
        }
        if (total > 0)
            rep.per_seq.push_back(static_cast<double>(correct) / static_cast<double>(total));
    }
    if (rep.per_seq.empty()) throw ValidationError("token_accuracy: no scored positions");
    double s = 0.0;
    for (double v : rep.per_seq) s += v;
    rep.per_seq_mean = s / static_cast<double>(rep.per_seq.size());
    rep.scalar = rep.per_seq_mean;
    rep.wall_time_s = seconds_since(t0);
    return rep;
}

EvalReport perplexity(const LayerStack& stack, const CalibrationSet& eval_split) {
    if (eval_split.seqs.empty()) throw ValidationError("perplexity: empty eval split");
    auto t0 = Clock::now();
    EvalReport rep;
    rep.metric = "perplexity";
    double total_nll = 0.0;
    int64_t total = 0;
    for (const auto& seq : eval_split.seqs) {
        ForwardResult r = forward(stack, embed_sequence(stack, seq));
        double nll = 0.0;
        int64_t count = 0;
        for (size_t t = 0; t < seq.targets.size(); ++t) {
            if (seq.targets[t] == kNoTarget) continue;
            double v = row_nll(r.logits, static_cast<int64_t>(t), seq.targets[t]);
            if (!std::isfinite(v)) throw std::runtime_error("perplexity: non-finite NLL");
            nll += v;
            ++count;
        }
        if (count > 0) {
            rep.per_seq.push_back(nll / static_cast<double>(count));
            total_nll += nll;
            total += count;
        }
    }
    if (total == 0) throw ValidationError("perplexity: no scored positions");
    double s = 0.0;
    for (double v : rep.per_seq) s += v;
    rep.per_seq_mean = s / static_cast<double>(rep.per_seq.size());
    rep.scalar = std::exp(total_nll / static_cast<double>(total));
    rep.wall_time_s = seconds_since(t0);
    return rep;
}

EvalReport run_metric(const std::string& metric, const LayerStack& stack,
                      const CalibrationSet& eval_split) {
    if (metric == "accuracy") return token_accuracy(stack, eval_split);
    if (metric == "perplexity") return perplexity(stack, eval_split);
    throw ValidationError("unknown metric: " + metric);
}

double metric_score(const std::string& metric, const LayerStack& stack,
                    const CalibrationSet& eval_split) {
    EvalReport rep = run_metric(metric, stack, eval_split);
    return metric == "perplexity" ? -rep.scalar : rep.scalar;
}

StepMetric make_step_metric(const LayerStack& stack, const std::vector<int64_t>& pi,
                            const CalibrationSet& calib, const CalibrationSet& eval_split,
                            const QuantConfig& cfg, const std::string& metric) {
    return [=, &stack](int64_t k) {
        QuantPlan plan = make_plan(pi, k, cfg.q_low, cfg.q_high);
        Container qc = quantize_stack(stack, plan.tags, calib, cfg);
        LayerStack qs = LayerStack::from_container(qc);
        return metric_score(metric, qs, eval_split);
    };
}

nlohmann::json OrderingComparison::to_json() const {
    nlohmann::json gaps = nlohmann::json::array();
    for (size_t i = 0; i < ks.size(); ++i) gaps.push_back(low_first[i] - high_first[i]);
    return {{"k", ks},           {"low_first", low_first}, {"high_first", high_first},
            {"gap", gaps},       {"auc_low", auc_low},     {"auc_high", auc_high},
            {"auc_gap", auc_low - auc_high}};
}

OrderingComparison compare_orderings(const LayerStack& stack, const std::vector<int64_t>& pi,
                                     const CalibrationSet& calib,
                                     const CalibrationSet& eval_split,
                                     const std::vector<int64_t>& ks, const QuantConfig& cfg,
                                     const std::string& metric) {
    int64_t L = stack.manifest.num_layers;
    for (int64_t k : ks)
        if (k < 0 || k > L) throw ValidationError("compare_orderings: k out of range");
    std::vector<int64_t> rev(pi.rbegin(), pi.rend());

    OrderingComparison cmp;
    cmp.ks = ks;
    StepMetric low = make_step_metric(stack, pi, calib, eval_split, cfg, metric);
    StepMetric high = make_step_metric(stack, rev, calib, eval_split, cfg, metric);
    for (int64_t k : ks) {
        cmp.low_first.push_back(low(k));
        cmp.high_first.push_back(high(k));
    }
    for (size_t i = 0; i < ks.size(); ++i) {
        cmp.auc_low += cmp.low_first[i];
        cmp.auc_high += cmp.high_first[i];
    }
    cmp.auc_low /= static_cast<double>(ks.size());
    cmp.auc_high /= static_cast<double>(ks.size());
    return cmp;
}

std::vector<double> compare_calibration(const LayerStack& stack,
                                        const std::vector<std::vector<uint32_t>>& text_pool,
                                        const std::vector<MmExample>& mm_pool,
                                        const std::vector<double>& alphas,
                                        const QuantPlan& plan, int64_t n_seqs,
                                        int64_t seq_len, uint64_t seed,
                                        const CalibrationSet& eval_split,
                                        const QuantConfig& cfg, const std::string& metric) {
    std::vector<double> scores;
    for (double alpha : alphas) {
        CalibrationSet calib =
            build_mixed_calibration(text_pool, mm_pool, n_seqs, seq_len, alpha, seed);
        Container qc = quantize_stack(stack, plan.tags, calib, cfg);
        LayerStack qs = LayerStack::from_container(qc);
        scores.push_back(metric_score(metric, qs, eval_split));
    }
    return scores;
}

std::vector<TradeoffRow> tradeoff_curve(const LayerStack& stack,
                                        const std::vector<int64_t>& pi,
                                        const CalibrationSet& calib,
                                        const CalibrationSet& eval_split,
                                        const std::vector<int64_t>& ks,
                                        const QuantConfig& cfg, const std::string& metric) {
    int64_t L = stack.manifest.num_layers;
    StepMetric step = make_step_metric(stack, pi, calib, eval_split, cfg, metric);
    std::vector<TradeoffRow> rows;
    for (int64_t k : ks) {
        if (k < 0 || k > L) throw ValidationError("tradeoff_curve: k out of range");
        TradeoffRow row;
        row.k = k;
        row.avg_bits = (static_cast<double>(k) * kNominalBitsLow +
                        static_cast<double>(L - k) * kNominalBitsHigh) /
                       static_cast<double>(L);
        row.score = step(k);
        rows.push_back(row);
    }
    return rows;
}

// ---- synthetic pools ----------------------------------------------------------

namespace {

uint32_t greedy_next(const LayerStack& stack, const Sequence& seq) {
    ForwardResult r = forward(stack, embed_sequence(stack, seq));
    return static_cast<uint32_t>(argmax_row(r.logits, r.logits.rows() - 1));
}

}  // namespace

std::vector<std::vector<uint32_t>> make_text_pool(const LayerStack& stack, int64_t count,
                                                  int64_t seq_len, uint64_t seed,
                                                  const PoolParams& p) {
    int64_t len = p.pool_len > 0 ? p.pool_len : seq_len;
    if (len < seq_len) throw ValidationError("make_text_pool: pool_len < seq_len");
    uint64_t vocab = static_cast<uint64_t>(stack.manifest.vocab_size);
    std::vector<std::vector<uint32_t>> pool;
    for (int64_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, 0x7000 + static_cast<uint64_t>(i)));
        Sequence s;
        s.mod = Modality::Text;
        for (int64_t t = 0; t < std::min(p.prefix_len, len); ++t)
            s.tokens.push_back(static_cast<uint32_t>(rng.bounded(vocab)));
        while (static_cast<int64_t>(s.tokens.size()) < len)
            s.tokens.push_back(greedy_next(stack, s));
        pool.push_back(std::move(s.tokens));
    }
    return pool;
}

std::vector<MmExample> make_mm_pool(const LayerStack& stack, int64_t count,
                                    int64_t seq_len, uint64_t seed, const PoolParams& p) {
    int64_t len = p.pool_len > 0 ? p.pool_len : seq_len;
    if (len < seq_len) throw ValidationError("make_mm_pool: pool_len < seq_len");
    int64_t d = stack.manifest.hidden_dim;
    int64_t ctx = std::min(p.mm_context, len - 1);
    uint64_t vocab = static_cast<uint64_t>(stack.manifest.vocab_size);

    std::vector<MmExample> pool;
    for (int64_t i = 0; i < count; ++i) {
        Rng rng(derive_seed(seed, 0x8000 + static_cast<uint64_t>(i)));
        Sequence s;
        s.mod = Modality::Multimodal;
        s.embed.resize(ctx, d);
        for (int64_t r = 0; r < ctx; ++r)
            for (int64_t c = 0; c < d; ++c)
                s.embed(r, c) = static_cast<float>(rng.gaussian()) * p.mm_embed_scale +
                                ((c & 1) ? -p.mm_bias : p.mm_bias);

        std::vector<uint32_t> continuation;
        continuation.push_back(static_cast<uint32_t>(rng.bounded(vocab)));
        while (ctx + static_cast<int64_t>(continuation.size()) < len) {
            Mat rows(ctx + static_cast<int64_t>(continuation.size()), d);
            rows.topRows(ctx) = s.embed.topRows(ctx);
            for (size_t t = 0; t < continuation.size(); ++t)
                rows.row(ctx + static_cast<int64_t>(t)) = stack.embed.row(continuation[t]);
            Sequence probe;
            probe.mod = Modality::Multimodal;
            probe.embed = rows;
            continuation.push_back(greedy_next(stack, probe));
        }

        MmExample ex;
        ex.embed.resize(len, d);
        ex.embed.topRows(ctx) = s.embed.topRows(ctx);
        for (size_t t = 0; t < continuation.size(); ++t)
            ex.embed.row(ctx + static_cast<int64_t>(t)) = stack.embed.row(continuation[t]);
        ex.targets.assign(static_cast<size_t>(len), kNoTarget);
        // each greedily generated token is predicted from the position
        // before it; the randomly drawn start token is not scored
        for (size_t t = 1; t < continuation.size(); ++t)
            ex.targets[static_cast<size_t>(ctx - 1 + static_cast<int64_t>(t))] = continuation[t];
        pool.push_back(std::move(ex));
    }
    return pool;
}

}  // namespace luq
