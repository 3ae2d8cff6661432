#include "luq/calib.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "luq/rng.hpp"

namespace luq {

int64_t CalibrationSet::multimodal_count() const {
    int64_t n = 0;
    for (const auto& s : seqs)
        if (s.mod == Modality::Multimodal) ++n;
    return n;
}

namespace {

std::vector<uint32_t> text_targets(const std::vector<uint32_t>& tokens) {
    std::vector<uint32_t> t(tokens.size(), kNoTarget);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) t[i] = tokens[i + 1];
    return t;
}

}  // namespace

CalibrationSet build_mixed_calibration(const std::vector<std::vector<uint32_t>>& text_pool,
                                       const std::vector<MmExample>& mm_pool,
                                       int64_t n_seqs, int64_t seq_len, double alpha,
                                       uint64_t seed) {
    if (seq_len <= 0) throw ValidationError("build_mixed_calibration: seq_len must be > 0");
    if (n_seqs <= 0) throw ValidationError("build_mixed_calibration: n_seqs must be > 0");
    if (alpha < 0.0 || alpha > 1.0)
        throw ValidationError("build_mixed_calibration: alpha must lie in [0, 1]");

    int64_t n_mm = static_cast<int64_t>(std::floor(alpha * static_cast<double>(n_seqs)));
    int64_t n_text = n_seqs - n_mm;
    if (n_text > 0 && text_pool.empty())
        throw ValidationError("build_mixed_calibration: text pool empty but text share > 0");
    if (n_mm > 0 && mm_pool.empty())
        throw ValidationError("build_mixed_calibration: multimodal pool empty but alpha share > 0");

    CalibrationSet out;
    out.seq_len = seq_len;
    out.alpha = alpha;
    out.seed = seed;

    Rng trng(derive_seed(seed, 1));
    for (size_t idx : trng.sample_indices(text_pool.size(), static_cast<size_t>(n_text))) {
        const auto& src = text_pool[idx];
        if (static_cast<int64_t>(src.size()) < seq_len)
            throw ValidationError("build_mixed_calibration: text pool sequence shorter than seq_len");
        Sequence s;
        s.mod = Modality::Text;
        s.tokens.assign(src.begin(), src.begin() + seq_len);
        s.targets = text_targets(s.tokens);
        out.seqs.push_back(std::move(s));
    }

    Rng mrng(derive_seed(seed, 2));
    for (size_t idx : mrng.sample_indices(mm_pool.size(), static_cast<size_t>(n_mm))) {
        const auto& src = mm_pool[idx];
        if (src.embed.rows() < seq_len)
            throw ValidationError("build_mixed_calibration: multimodal pool sequence shorter than seq_len");
        Sequence s;
        s.mod = Modality::Multimodal;
        s.embed = src.embed.topRows(seq_len);
        s.targets.assign(src.targets.begin(), src.targets.begin() + seq_len);
        if (seq_len > 0) s.targets[static_cast<size_t>(seq_len) - 1] = kNoTarget;
        out.seqs.push_back(std::move(s));
    }

    Rng orng(derive_seed(seed, 3));
    orng.shuffle(out.seqs);
    return out;
}

std::pair<CalibrationSet, CalibrationSet> split_holdout(const CalibrationSet& set,
                                                        double holdout_frac,
                                                        uint64_t seed) {
    if (!(holdout_frac > 0.0 && holdout_frac < 1.0))
        throw ValidationError("split_holdout: frac must lie in (0, 1)");
    int64_t n = set.count();
    std::vector<size_t> text_idx, mm_idx;
    for (size_t i = 0; i < set.seqs.size(); ++i)
        (set.seqs[i].mod == Modality::Text ? text_idx : mm_idx).push_back(i);

    Rng rng(derive_seed(seed, 7));
    rng.shuffle(text_idx);
    rng.shuffle(mm_idx);

    auto take = [&](const std::vector<size_t>& idx) {
        return static_cast<size_t>(std::llround(holdout_frac * static_cast<double>(idx.size())));
    };
    size_t hold_text = take(text_idx), hold_mm = take(mm_idx);
    if (hold_text + hold_mm == 0 ||
        static_cast<int64_t>(hold_text + hold_mm) >= n)
        throw ValidationError("split_holdout: split would empty one part");

    std::vector<bool> held(set.seqs.size(), false);
    for (size_t i = 0; i < hold_text; ++i) held[text_idx[i]] = true;
    for (size_t i = 0; i < hold_mm; ++i) held[mm_idx[i]] = true;

    CalibrationSet calib = set, eval = set;
    calib.seqs.clear();
    eval.seqs.clear();
    for (size_t i = 0; i < set.seqs.size(); ++i)
        (held[i] ? eval : calib).seqs.push_back(set.seqs[i]);
    return {calib, eval};
}

Container calib_to_container(const CalibrationSet& set, int64_t hidden_dim) {
    int64_t n = set.count(), N = set.seq_len;
    std::vector<uint32_t> text_tokens;
    std::vector<float> mm_embed;
    std::vector<uint32_t> mm_targets;
    nlohmann::json order = nlohmann::json::array();
    int64_t nt = 0, nm = 0;
    for (const auto& s : set.seqs) {
        if (s.length() != N)
            throw ValidationError("calib_to_container: sequence length mismatch");
        if (s.mod == Modality::Text) {
            order.push_back(nlohmann::json::array({"t", nt++}));
            text_tokens.insert(text_tokens.end(), s.tokens.begin(), s.tokens.end());
        } else {
            if (s.embed.cols() != hidden_dim)
                throw ValidationError("calib_to_container: embedding width != hidden_dim");
            order.push_back(nlohmann::json::array({"m", nm++}));
            mm_embed.insert(mm_embed.end(), s.embed.data(), s.embed.data() + s.embed.size());
            mm_targets.insert(mm_targets.end(), s.targets.begin(), s.targets.end());
        }
    }
    Container c;
    c.kind = "calib";
    c.config = {{"seq_len", N},       {"alpha", set.alpha}, {"seed", set.seed},
                {"hidden_dim", hidden_dim}, {"count", n},   {"order", order}};
    c.tensors.push_back(NamedTensor::u32("text.tokens", {nt, N}, text_tokens));
    c.tensors.push_back(NamedTensor::f32("mm.embed", {nm, N, hidden_dim}, mm_embed));
    c.tensors.push_back(NamedTensor::u32("mm.targets", {nm, N}, mm_targets));
    return c;
}

CalibrationSet calib_from_container(const Container& c) {
    if (c.kind != "calib") throw ValidationError("not a calib container");
    CalibrationSet set;
    int64_t N, d;
    try {
        N = c.config.at("seq_len").get<int64_t>();
        d = c.config.at("hidden_dim").get<int64_t>();
        set.seq_len = N;
        set.alpha = c.config.at("alpha").get<double>();
        set.seed = c.config.at("seed").get<uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad calib config: ") + e.what());
    }

    auto tokens = c.tensor("text.tokens").as_u32();
    auto embed = c.tensor("mm.embed").as_f32();
    auto targets = c.tensor("mm.targets").as_u32();
    int64_t nt = c.tensor("text.tokens").shape.at(0);
    int64_t nm = c.tensor("mm.embed").shape.at(0);
    if (c.tensor("mm.embed").shape != std::vector<int64_t>{nm, N, d} ||
        c.tensor("mm.targets").shape != std::vector<int64_t>{nm, N})
        throw ValidationError("calib container: inconsistent sequence shapes");

    for (const auto& o : c.config.at("order")) {
        std::string kind = o.at(0).get<std::string>();
        int64_t i = o.at(1).get<int64_t>();
        Sequence s;
        if (kind == "t") {
            if (i < 0 || i >= nt) throw ValidationError("calib container: bad order index");
            s.mod = Modality::Text;
            s.tokens.assign(tokens.begin() + i * N, tokens.begin() + (i + 1) * N);
            std::vector<uint32_t> t(static_cast<size_t>(N), kNoTarget);
            for (int64_t j = 0; j + 1 < N; ++j) t[static_cast<size_t>(j)] = s.tokens[static_cast<size_t>(j + 1)];
            s.targets = std::move(t);
        } else if (kind == "m") {
            if (i < 0 || i >= nm) throw ValidationError("calib container: bad order index");
            s.mod = Modality::Multimodal;
            s.embed.resize(N, d);
            std::memcpy(s.embed.data(), embed.data() + i * N * d,
                        static_cast<size_t>(N * d) * sizeof(float));
            s.targets.assign(targets.begin() + i * N, targets.begin() + (i + 1) * N);
        } else {
            throw ValidationError("calib container: bad order tag");
        }
        set.seqs.push_back(std::move(s));
    }
    return set;
}

}  // namespace luq
