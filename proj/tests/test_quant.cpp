#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "luq/quant.hpp"
#include "luq/rng.hpp"
#include "luq/select.hpp"

using namespace luq;

namespace {

Mat random_mat(int64_t r, int64_t c, uint64_t seed, float scale = 1.0f) {
    Rng rng(seed);
    Mat m(r, c);
    for (int64_t i = 0; i < r; ++i)
        for (int64_t j = 0; j < c; ++j)
            m(i, j) = scale * static_cast<float>(rng.gaussian());
    return m;
}

// correlated calibration rows: x = A z with a fixed mixing matrix
HessianAccumulator correlated_hessian(int64_t width, int64_t samples, uint64_t seed) {
    Mat mix = random_mat(width, width, derive_seed(seed, 1), 0.4f);
    mix += Mat::Identity(width, width);
    Mat z = random_mat(samples, width, derive_seed(seed, 2));
    Mat x = z * mix.transpose();
    HessianAccumulator acc(width);
    acc.add(x);
    return acc;
}

HessianAccumulator identity_hessian(int64_t width) {
    HessianAccumulator acc(width);
    Mat eye = Mat::Identity(width, width);
    acc.add(eye);
    return acc;
}

}  // namespace

TEST_CASE("hessian accumulation matches the naive outer-product sum") {
    Mat rows = random_mat(37, 6, 10);
    HessianAccumulator acc(6);
    acc.add(rows);
    Matd naive = Matd::Zero(6, 6);
    for (int64_t i = 0; i < rows.rows(); ++i) {
        Eigen::VectorXd x = rows.row(i).transpose().cast<double>();
        naive += x * x.transpose();
    }
    CHECK((acc.h - naive).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(acc.samples == 37);
    // symmetry
    CHECK((acc.h - acc.h.transpose()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("hessian single basis vector gives e1 e1^T") {
    HessianAccumulator acc(3);
    Mat e1 = Mat::Zero(1, 3);
    e1(0, 0) = 1.0f;
    acc.add(e1);
    CHECK(acc.h(0, 0) == 1.0);
    CHECK(acc.h.cwiseAbs().sum() == 1.0);
    Mat e2 = Mat::Zero(1, 3);
    e2(0, 1) = 1.0f;
    acc.add(e2);
    CHECK(acc.h(1, 1) == 1.0);
    CHECK(acc.h(2, 2) == 0.0);
    CHECK_THROWS_AS(acc.add(random_mat(1, 4, 0)), ValidationError);
}

TEST_CASE("rtn all-zero weights reconstruct to zero") {
    Mat w = Mat::Zero(4, 8);
    QuantizedTensor q = rtn_quantize(w, 4, 8);
    CHECK(dequantize(q).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("rtn reconstructs grid values exactly") {
    Mat w(1, 4);
    w << 7.0f, -7.0f, 7.0f, -7.0f;
    QuantizedTensor q = rtn_quantize(w, 4, 4);
    CHECK((dequantize(q) - w).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("rtn error is bounded by half a step per group") {
    for (uint64_t seed : {1u, 2u, 3u}) {
        Mat w = random_mat(8, 32, seed);
        QuantizedTensor q = rtn_quantize(w, 4, 16);
        Mat rec = dequantize(q);
        for (int64_t i = 0; i < w.rows(); ++i)
            for (int64_t g = 0; g < 2; ++g) {
                float scale = q.scales[static_cast<size_t>(i * 2 + g)];
                for (int64_t j = g * 16; j < (g + 1) * 16; ++j)
                    CHECK(std::abs(w(i, j) - rec(i, j)) <= scale / 2 + 1e-6f);
            }
    }
}

TEST_CASE("packed4 round-trips codes exactly") {
    for (uint64_t seed : {5u, 6u}) {
        Mat w = random_mat(7, 19, seed);  // odd sizes exercise padding
        QuantizedTensor q = rtn_quantize(w, 4, 8);
        Mat rec = dequantize(q);
        QuantizedTensor q2 = rtn_quantize(rec, 4, 8);
        CHECK(q2.codes == q.codes);
        CHECK((dequantize(q2) - rec).cwiseAbs().maxCoeff() == 0.0f);
    }
}

TEST_CASE("gptq with identity hessian equals rtn") {
    Mat w = random_mat(6, 16, 21);
    QuantConfig cfg;
    cfg.group_size = 8;
    cfg.block_size = 4;
    QuantizedTensor g = gptq_quantize(w, identity_hessian(16), cfg);
    QuantizedTensor r = rtn_quantize(w, 4, 8);
    CHECK((dequantize(g) - dequantize(r)).cwiseAbs().maxCoeff() <= 1e-9f);
}

TEST_CASE("gptq with any diagonal hessian equals rtn") {
    Mat w = random_mat(4, 8, 22);
    HessianAccumulator acc(8);
    Rng rng(40);
    Mat rows = Mat::Zero(8, 8);
    for (int64_t i = 0; i < 8; ++i)
        rows(i, i) = static_cast<float>(0.5 + rng.uniform() * 3.0);
    acc.add(rows);
    QuantConfig cfg;
    cfg.group_size = 4;
    cfg.block_size = 4;
    QuantizedTensor g = gptq_quantize(w, acc, cfg);
    QuantizedTensor r = rtn_quantize(w, 4, 4);
    CHECK((dequantize(g) - dequantize(r)).cwiseAbs().maxCoeff() <= 1e-9f);
}

TEST_CASE("gptq single column equals rtn") {
    Mat w = random_mat(5, 1, 23);
    QuantConfig cfg;
    cfg.group_size = 1;
    cfg.block_size = 1;
    QuantizedTensor g = gptq_quantize(w, identity_hessian(1), cfg);
    QuantizedTensor r = rtn_quantize(w, 4, 1);
    CHECK((dequantize(g) - dequantize(r)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("gptq [0.6, 0.6] with correlated H matches the exhaustive grid oracle") {
    // 2-bit grid so the code space is exhaustively searchable
    Mat w(1, 2);
    w << 0.6f, 0.6f;
    HessianAccumulator acc(2);
    acc.h.resize(2, 2);
    acc.h << 1.0, 0.9, 0.9, 1.0;
    acc.samples = 1;

    QuantConfig cfg;
    cfg.bits = 2;
    cfg.group_size = 2;
    cfg.block_size = 2;
    cfg.damping = 0.0;
    QuantizedTensor g = gptq_quantize(w, acc, cfg);
    Mat rec = dequantize(g);

    // oracle: argmin of tr(dW H dW^T) over the full code grid at the same scale
    float scale = g.scales[0];
    double best = 1e30;
    Mat best_rec(1, 2);
    for (int c0 = -1; c0 <= 1; ++c0)
        for (int c1 = -1; c1 <= 1; ++c1) {
            Mat cand(1, 2);
            cand << scale * static_cast<float>(c0), scale * static_cast<float>(c1);
            Eigen::RowVector2d dw = (w - cand).row(0).cast<double>();
            double loss = dw * acc.h * dw.transpose();
            if (loss < best) {
                best = loss;
                best_rec = cand;
            }
        }
    Eigen::RowVector2d dg = (w - rec).row(0).cast<double>();
    double gptq_loss = dg * acc.h * dg.transpose();
    CHECK(gptq_loss == doctest::Approx(best).epsilon(1e-9));
    CHECK((rec - best_rec).cwiseAbs().maxCoeff() <= 1e-7f);
}

TEST_CASE("gptq proxy loss beats rtn on correlated instances (>= 9/10 seeds)") {
    int wins = 0;
    QuantConfig cfg;
    cfg.group_size = 64;
    cfg.block_size = 16;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Mat w = random_mat(64, 64, seed);
        HessianAccumulator acc = correlated_hessian(64, 256, seed + 100);
        QuantizedTensor g = gptq_quantize(w, acc, cfg);
        QuantizedTensor r = rtn_quantize(w, 4, 64);
        if (proxy_loss(w, g, acc) <= proxy_loss(w, r, acc)) ++wins;
    }
    CHECK(wins >= 9);
}

TEST_CASE("binarizer beta = mean|w| closed form") {
    // single column forces a single group; scale is the closed-form mean|w|
    Mat w(3, 1);
    w << 1.0f, -1.0f, 3.0f;
    QuantConfig cfg;
    cfg.salient_frac = 0.0;
    HessianAccumulator acc = identity_hessian(1);
    QuantizedTensor q = billm_binarize(w, acc, cfg);
    Mat rec = dequantize(q);
    double beta = 5.0 / 3.0;
    CHECK(rec(0, 0) == doctest::Approx(beta).epsilon(1e-6));
    CHECK(rec(1, 0) == doctest::Approx(-beta).epsilon(1e-6));
    CHECK(rec(2, 0) == doctest::Approx(beta).epsilon(1e-6));

    // oracle: 1-D grid search over beta confirms the closed form
    double best_beta = 0, best_loss = 1e30;
    for (double b = 0.0; b <= 3.0; b += 1e-3) {
        double loss = 0;
        for (int i = 0; i < 3; ++i) {
            double err = std::abs(static_cast<double>(w(i, 0))) - b;
            loss += err * err;
        }
        if (loss < best_loss) {
            best_loss = loss;
            best_beta = b;
        }
    }
    CHECK(best_beta == doctest::Approx(beta).epsilon(1e-2));
}

TEST_CASE("equal-magnitude weights binarize exactly in one pass") {
    Mat w(2, 4);
    w << 2.0f, -2.0f, 2.0f, -2.0f, -2.0f, 2.0f, -2.0f, 2.0f;
    QuantConfig cfg;
    cfg.salient_frac = 0.0;
    QuantizedTensor q = billm_binarize(w, identity_hessian(4), cfg);
    CHECK((dequantize(q) - w).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("binarizer scale optimality: +/-1% perturbation increases group L2") {
    Mat w = random_mat(16, 32, 55);
    QuantConfig cfg;
    QuantizedTensor q = billm_binarize(w, identity_hessian(32), cfg);
    // check the non-salient scales: collect group members by reconstruction
    for (float beta : {q.ns_scale_lo, q.ns_scale_hi}) {
        if (beta == 0.0f) continue;
        double base = 0, up = 0, down = 0;
        int count = 0;
        Mat rec = dequantize(q);
        for (int64_t i = 0; i < w.rows(); ++i)
            for (int64_t j = 0; j < w.cols(); ++j) {
                if (std::abs(std::abs(rec(i, j)) - beta) > 1e-6f) continue;
                double aw = std::abs(static_cast<double>(w(i, j)));
                base += (aw - beta) * (aw - beta);
                up += (aw - 1.01 * beta) * (aw - 1.01 * beta);
                down += (aw - 0.99 * beta) * (aw - 0.99 * beta);
                ++count;
            }
        if (count == 0) continue;
        CHECK(base < up);
        CHECK(base < down);
    }
}

TEST_CASE("billm realized bits on 64x64 gaussians sit in [1.05, 1.15]") {
    QuantConfig cfg;
    for (uint64_t seed = 1; seed <= 10; ++seed) {
        Mat w = random_mat(64, 64, seed * 7);
        QuantizedTensor q = billm_binarize(w, correlated_hessian(64, 256, seed), cfg);
        double bits = q.realized_bits();
        CHECK(bits >= 1.05);
        CHECK(bits <= 1.15);
    }
}

TEST_CASE("salient columns are chosen by hessian-weighted sensitivity") {
    // make one column dramatically more sensitive via the calibration stream
    int64_t width = 16;
    Mat rows = random_mat(64, width, 60, 0.05f);
    rows.col(3) *= 100.0f;
    HessianAccumulator acc(width);
    acc.add(rows);
    Mat w = random_mat(8, width, 61);
    QuantConfig cfg;
    cfg.salient_frac = 0.07;  // floor(0.07*16) = 1 salient column
    QuantizedTensor q = billm_binarize(w, acc, cfg);
    REQUIRE(q.salient_cols.size() == 1);
    CHECK(q.salient_cols[0] == 3);
}

TEST_CASE("bin payload round-trips through a container") {
    Mat w = random_mat(24, 40, 70);
    QuantConfig cfg;
    QuantizedTensor q = billm_binarize(w, correlated_hessian(40, 128, 7), cfg);
    Container c;
    c.kind = "quantized";
    append_quantized(c, "layers.0.mlp.w1", q);
    QuantizedTensor r = read_quantized(c, "layers.0.mlp.w1");
    CHECK(r.fmt == q.fmt);
    CHECK(r.codes == q.codes);
    CHECK(r.scales == q.scales);
    CHECK(r.salient_cols == q.salient_cols);
    CHECK(r.salient_res_codes == q.salient_res_codes);
    CHECK(r.col_group_bits == q.col_group_bits);
    CHECK(r.sal_scale1 == q.sal_scale1);
    CHECK(r.ns_scale_lo == q.ns_scale_lo);
    CHECK(r.split_threshold == q.split_threshold);
    CHECK((dequantize(r) - dequantize(q)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("gptq payload round-trips through a container") {
    Mat w = random_mat(16, 32, 71);
    QuantConfig cfg;
    cfg.group_size = 16;
    cfg.block_size = 8;
    QuantizedTensor q = gptq_quantize(w, correlated_hessian(32, 128, 8), cfg);
    Container c;
    c.kind = "quantized";
    append_quantized(c, "t", q);
    QuantizedTensor r = read_quantized(c, "t");
    CHECK(r.codes == q.codes);
    CHECK(r.scales == q.scales);
    CHECK((dequantize(r) - dequantize(q)).cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("avg_bitwidth reproduces the published bit-width table") {
    std::vector<double> a(32, 4.0);
    for (int i = 0; i < 16; ++i) a[static_cast<size_t>(i)] = 1.08;
    CHECK(avg_bitwidth(a) == doctest::Approx(2.54).epsilon(1e-9));

    std::vector<double> b(28, 4.0);
    for (int i = 0; i < 12; ++i) b[static_cast<size_t>(i)] = 1.08;
    CHECK(avg_bitwidth(b) == doctest::Approx(2.7486).epsilon(1e-3));

    std::vector<double> c(8, 4.0);
    CHECK(avg_bitwidth(c) == 4.0);
}

TEST_CASE("weighted bitwidth variant reduces to the mean for equal params") {
    std::vector<double> bits = {1.08, 4.0, 4.0, 1.08};
    std::vector<int64_t> params = {100, 100, 100, 100};
    CHECK(avg_bitwidth_weighted(bits, params) == doctest::Approx(avg_bitwidth(bits)));
    std::vector<int64_t> skew = {1000, 1, 1, 1};
    CHECK(avg_bitwidth_weighted(bits, skew) < 1.2);
}

TEST_CASE("quantize_stack: all-high plan matches standalone gptq pipeline") {
    std::vector<int64_t> ranks = {8, 8};
    SynthParams p;
    p.vocab_size = 8;
    LayerStack s = LayerStack::from_container(synth_stack(2, 8, ranks, 90, p));
    CalibrationSet set;
    set.seq_len = 8;
    for (int i = 0; i < 4; ++i) {
        Sequence q;
        q.mod = Modality::Text;
        for (int t = 0; t < 8; ++t)
            q.tokens.push_back(static_cast<uint32_t>((i + t) % 8));
        set.seqs.push_back(q);
    }
    QuantConfig cfg;
    cfg.group_size = 8;
    cfg.block_size = 8;
    Container qc = quantize_stack(s, {"gptq4", "gptq4"}, set, cfg);
    CHECK(qc.kind == "quantized");
    auto bits = per_layer_bits(qc);
    REQUIRE(bits.size() == 2);
    // 4-bit codes plus one f32 scale per 8-weight group: 4 + 32/8 bits/weight
    for (double b : bits) CHECK(b == doctest::Approx(8.0).epsilon(0.02));
}

TEST_CASE("quantize_stack: all-low plan has realized avg bits in [1.05, 1.15]") {
    std::vector<int64_t> ranks(4, 32);
    SynthParams p;
    p.vocab_size = 16;
    LayerStack s = LayerStack::from_container(synth_stack(4, 32, ranks, 91, p));
    CalibrationSet set;
    set.seq_len = 16;
    Rng rng(4);
    for (int i = 0; i < 6; ++i) {
        Sequence q;
        q.mod = Modality::Text;
        for (int t = 0; t < 16; ++t)
            q.tokens.push_back(static_cast<uint32_t>(rng.bounded(16)));
        set.seqs.push_back(q);
    }
    QuantConfig cfg;
    Container qc = quantize_stack(s, {"bin", "bin", "bin", "bin"}, set, cfg);
    double avg = avg_bitwidth(per_layer_bits(qc));
    // wider band than the 64x64 unit check: the per-column metadata amortizes
    // worse over these small desk-scale linears
    CHECK(avg >= 1.0);
    CHECK(avg <= 1.35);
}

TEST_CASE("quantize_stack is deterministic and leaves embeddings untouched") {
    std::vector<int64_t> ranks = {8, 8};
    SynthParams p;
    p.vocab_size = 8;
    Container model = synth_stack(2, 8, ranks, 92, p);
    LayerStack s = LayerStack::from_container(model);
    CalibrationSet set;
    set.seq_len = 8;
    Sequence q;
    q.mod = Modality::Text;
    q.tokens = {0, 1, 2, 3, 4, 5, 6, 7};
    set.seqs.push_back(q);
    QuantConfig cfg;
    cfg.group_size = 8;
    cfg.block_size = 8;
    Container a = quantize_stack(s, {"gptq4", "bin"}, set, cfg);
    Container b = quantize_stack(s, {"gptq4", "bin"}, set, cfg);
    CHECK(write_container(a) == write_container(b));

    ModelManifest m = manifest_of(model);
    CHECK(a.tensor(m.embed_name).bytes == model.tensor(m.embed_name).bytes);
    CHECK(a.tensor(m.head_name).bytes == model.tensor(m.head_name).bytes);
}

TEST_CASE("proxy loss with empty hessian falls back to identity") {
    Mat w = random_mat(4, 8, 93);
    QuantizedTensor q = rtn_quantize(w, 4, 8);
    Mat rec = dequantize(q);
    HessianAccumulator empty;
    double loss = proxy_loss(w, q, empty);
    CHECK(loss == doctest::Approx((w - rec).squaredNorm()).epsilon(1e-6));
}
