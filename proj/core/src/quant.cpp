#include "luq/quant.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

namespace luq {

const char* qformat_name(QFormat f) {
    switch (f) {
        case QFormat::Rtn4: return "rtn4";
        case QFormat::Gptq4: return "gptq4";
        case QFormat::Bin: return "bin";
    }
    return "?";
}

QFormat qformat_from_name(const std::string& s) {
    if (s == "rtn4") return QFormat::Rtn4;
    if (s == "gptq4") return QFormat::Gptq4;
    if (s == "bin") return QFormat::Bin;
    throw ValidationError("unknown quant format: " + s);
}

void HessianAccumulator::add(const Mat& rows) {
    if (h.rows() == 0) h = Matd::Zero(rows.cols(), rows.cols());
    if (rows.cols() != h.rows())
        throw ValidationError("hessian accumulator: input width mismatch");
    Matd x = rows.cast<double>();
    h += x.transpose() * x;
    samples += rows.rows();
}

void accumulate_hessian(HessianAccumulator& acc, const Mat& rows) { acc.add(rows); }

namespace {

// ---- bit packing ------------------------------------------------------------

std::vector<uint8_t> pack_nibbles(const std::vector<int8_t>& codes) {
    std::vector<uint8_t> out((codes.size() + 1) / 2, 0);
    for (size_t i = 0; i < codes.size(); ++i) {
        uint8_t nib = static_cast<uint8_t>(codes[i]) & 0xF;
        out[i / 2] |= (i % 2 == 0) ? nib : static_cast<uint8_t>(nib << 4);
    }
    return out;
}

std::vector<int8_t> unpack_nibbles(const std::vector<uint8_t>& bytes, size_t n) {
    if (bytes.size() != (n + 1) / 2)
        throw ValidationError("packed4 payload length mismatch");
    std::vector<int8_t> out(n);
    for (size_t i = 0; i < n; ++i) {
        uint8_t nib = (i % 2 == 0) ? (bytes[i / 2] & 0xF) : (bytes[i / 2] >> 4);
        out[i] = static_cast<int8_t>(nib >= 8 ? static_cast<int>(nib) - 16
                                              : static_cast<int>(nib));
    }
    return out;
}

std::vector<uint8_t> pack_bits(const std::vector<uint8_t>& bits) {
    std::vector<uint8_t> out((bits.size() + 7) / 8, 0);
    for (size_t i = 0; i < bits.size(); ++i)
        if (bits[i]) out[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
    return out;
}

std::vector<uint8_t> unpack_bits(const std::vector<uint8_t>& bytes, size_t n) {
    if (bytes.size() != (n + 7) / 8)
        throw ValidationError("packedbin payload length mismatch");
    std::vector<uint8_t> out(n);
    for (size_t i = 0; i < n; ++i) out[i] = (bytes[i / 8] >> (i % 8)) & 1;
    return out;
}

inline float sgn(double x) { return x >= 0.0 ? 1.0f : -1.0f; }

int64_t num_groups(int64_t cols, int group_size) {
    return (cols + group_size - 1) / group_size;
}

// symmetric per (row, column-group) scales from the original weights
std::vector<float> group_scales(const Mat& w, int bits, int group_size) {
    int64_t rows = w.rows(), cols = w.cols();
    int64_t ng = num_groups(cols, group_size);
    float maxq = static_cast<float>((1 << (bits - 1)) - 1);
    std::vector<float> scales(static_cast<size_t>(rows * ng), 0.0f);
    for (int64_t r = 0; r < rows; ++r)
        for (int64_t g = 0; g < ng; ++g) {
            int64_t c0 = g * group_size, c1 = std::min(cols, c0 + group_size);
            float mx = 0.0f;
            for (int64_t c = c0; c < c1; ++c) mx = std::max(mx, std::abs(w(r, c)));
            scales[static_cast<size_t>(r * ng + g)] = mx > 0.0f ? mx / maxq : 0.0f;
        }
    return scales;
}

int8_t quantize_code(double v, float scale, int bits) {
    if (scale == 0.0f) return 0;
    int maxq = (1 << (bits - 1)) - 1;
    long q = std::lround(v / static_cast<double>(scale));
    q = std::clamp(q, static_cast<long>(-maxq), static_cast<long>(maxq));
    return static_cast<int8_t>(q);
}

// Upper Cholesky factor U of (H + damp*I)^-1, so that Hinv = U^T U.
Matd damped_inverse_cholesky(const HessianAccumulator& acc, int64_t width, double damping,
                             Matd* hinv_out = nullptr) {
    Matd h;
    if (acc.width() == 0) {
        h = Matd::Identity(width, width);
    } else {
        if (acc.width() != width)
            throw ValidationError("hessian width does not match weight in-dim");
        h = acc.h;
    }
    double mean_diag = h.diagonal().mean();
    if (mean_diag <= 0.0) mean_diag = 1.0;
    double damp = damping * mean_diag;
    h.diagonal().array() += damp;
    // dead inputs: keep the factor well conditioned
    for (int64_t i = 0; i < width; ++i)
        if (h(i, i) <= 0.0) h(i, i) = mean_diag;

    Eigen::LLT<Eigen::MatrixXd> llt(h);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("singular damped Hessian");
    Matd hinv = llt.solve(Eigen::MatrixXd::Identity(width, width));
    if (hinv_out) *hinv_out = hinv;
    Eigen::MatrixXd hinv_dense = hinv;
    Eigen::LLT<Eigen::MatrixXd> llt2(hinv_dense);
    if (llt2.info() != Eigen::Success)
        throw std::runtime_error("singular damped Hessian (inverse factorization)");
    return Matd(Eigen::MatrixXd(llt2.matrixU()));
}

}  // namespace

uint64_t QuantizedTensor::payload_bytes() const {
    uint64_t n = codes.size() + scales.size() * 4 + salient_cols.size() * 4 +
                 salient_res_codes.size() + col_group_bits.size();
    if (fmt == QFormat::Bin) n += 5 * 4;  // two salient scales, two group scales, threshold
    return n;
}

QuantizedTensor rtn_quantize(const Mat& w, int bits, int group_size) {
    if (bits < 2 || bits > 4) throw ValidationError("rtn_quantize: bits must be in {2,3,4}");
    if (group_size < 1) throw ValidationError("rtn_quantize: group_size must be >= 1");
    QuantizedTensor q;
    q.fmt = QFormat::Rtn4;
    q.rows = w.rows();
    q.cols = w.cols();
    q.bits = bits;
    q.group_size = group_size;
    q.scales = group_scales(w, bits, group_size);

    int64_t ng = num_groups(q.cols, group_size);
    std::vector<int8_t> codes(static_cast<size_t>(q.rows * q.cols));
    for (int64_t r = 0; r < q.rows; ++r)
        for (int64_t c = 0; c < q.cols; ++c)
            codes[static_cast<size_t>(r * q.cols + c)] =
                quantize_code(w(r, c), q.scales[static_cast<size_t>(r * ng + c / group_size)], bits);
    q.codes = pack_nibbles(codes);
    return q;
}

QuantizedTensor gptq_quantize(const Mat& w, const HessianAccumulator& h,
                              const QuantConfig& cfg) {
    int64_t rows = w.rows(), cols = w.cols();
    Matd u = damped_inverse_cholesky(h, cols, cfg.damping);

    QuantizedTensor q;
    q.fmt = QFormat::Gptq4;
    q.rows = rows;
    q.cols = cols;
    q.bits = cfg.bits;
    q.group_size = cfg.group_size;
    q.scales = group_scales(w, cfg.bits, cfg.group_size);
    int64_t ng = num_groups(cols, cfg.group_size);

    Matd work = w.cast<double>();
    std::vector<int8_t> codes(static_cast<size_t>(rows * cols));
    int64_t bs = cfg.block_size;
    for (int64_t b0 = 0; b0 < cols; b0 += bs) {
        int64_t b1 = std::min(cols, b0 + bs);
        Matd err = Matd::Zero(rows, b1 - b0);
        for (int64_t j = b0; j < b1; ++j) {
            double ujj = u(j, j);
            for (int64_t r = 0; r < rows; ++r) {
                float scale = q.scales[static_cast<size_t>(r * ng + j / cfg.group_size)];
                int8_t code = quantize_code(work(r, j), scale, cfg.bits);
                codes[static_cast<size_t>(r * cols + j)] = code;
                double recon = static_cast<double>(code) * scale;
                double e = (work(r, j) - recon) / ujj;
                err(r, j - b0) = e;
                for (int64_t j2 = j + 1; j2 < b1; ++j2) work(r, j2) -= e * u(j, j2);
            }
        }
        if (b1 < cols)
            work.rightCols(cols - b1) -= err * u.block(b0, b1, b1 - b0, cols - b1);
    }
    q.codes = pack_nibbles(codes);
    return q;
}

QuantizedTensor billm_binarize(const Mat& w, const HessianAccumulator& h,
                               const QuantConfig& cfg) {
    int64_t rows = w.rows(), cols = w.cols();
    Matd hinv;
    Matd u = damped_inverse_cholesky(h, cols, cfg.damping, &hinv);

    QuantizedTensor q;
    q.fmt = QFormat::Bin;
    q.rows = rows;
    q.cols = cols;
    q.bits = 1;
    q.group_size = cfg.group_size;

    // (a) salient columns by Hessian-weighted sensitivity
    int64_t n_sal = static_cast<int64_t>(std::floor(cfg.salient_frac * static_cast<double>(cols)));
    n_sal = std::clamp<int64_t>(n_sal, 0, cols - 1);
    std::vector<double> sensitivity(static_cast<size_t>(cols), 0.0);
    for (int64_t c = 0; c < cols; ++c) {
        double s2 = static_cast<double>(w.col(c).squaredNorm());
        sensitivity[static_cast<size_t>(c)] = s2 / hinv(c, c);
    }
    std::vector<int64_t> by_sens(static_cast<size_t>(cols));
    std::iota(by_sens.begin(), by_sens.end(), 0);
    std::stable_sort(by_sens.begin(), by_sens.end(), [&](int64_t a, int64_t b) {
        return sensitivity[static_cast<size_t>(a)] > sensitivity[static_cast<size_t>(b)];
    });
    std::vector<uint8_t> is_salient(static_cast<size_t>(cols), 0);
    for (int64_t i = 0; i < n_sal; ++i)
        is_salient[static_cast<size_t>(by_sens[static_cast<size_t>(i)])] = 1;
    for (int64_t c = 0; c < cols; ++c)
        if (is_salient[static_cast<size_t>(c)])
            q.salient_cols.push_back(static_cast<uint32_t>(c));

    // (b) two-pass scales over the salient block, from the original weights
    if (n_sal > 0) {
        double s1 = 0.0;
        for (uint32_t c : q.salient_cols)
            s1 += static_cast<double>(w.col(c).cwiseAbs().sum());
        s1 /= static_cast<double>(rows * n_sal);
        double s2 = 0.0;
        for (uint32_t c : q.salient_cols)
            for (int64_t r = 0; r < rows; ++r)
                s2 += std::abs(static_cast<double>(w(r, c)) -
                               s1 * sgn(w(r, c)));
        s2 /= static_cast<double>(rows * n_sal);
        q.sal_scale1 = static_cast<float>(s1);
        q.sal_scale2 = static_cast<float>(s2);
    }

    // (c) non-salient columns: magnitude split minimizing binarization L2.
    // The split is column-granular (threshold on column mean |w|) so group
    // membership packs into one bit per column.
    std::vector<int64_t> ns_cols;
    for (int64_t c = 0; c < cols; ++c)
        if (!is_salient[static_cast<size_t>(c)]) ns_cols.push_back(c);
    int64_t m = static_cast<int64_t>(ns_cols.size());

    std::vector<double> mu(static_cast<size_t>(m)), sum_abs(static_cast<size_t>(m)),
        sum_sq(static_cast<size_t>(m));
    for (int64_t i = 0; i < m; ++i) {
        int64_t c = ns_cols[static_cast<size_t>(i)];
        sum_abs[static_cast<size_t>(i)] = static_cast<double>(w.col(c).cwiseAbs().sum());
        sum_sq[static_cast<size_t>(i)] = static_cast<double>(w.col(c).squaredNorm());
        mu[static_cast<size_t>(i)] = sum_abs[static_cast<size_t>(i)] / static_cast<double>(rows);
    }
    std::vector<int64_t> by_mu(static_cast<size_t>(m));
    std::iota(by_mu.begin(), by_mu.end(), 0);
    std::stable_sort(by_mu.begin(), by_mu.end(), [&](int64_t a, int64_t b) {
        return mu[static_cast<size_t>(a)] < mu[static_cast<size_t>(b)];
    });

    double beta_lo = 0.0, beta_hi = 0.0, thresh = 0.0;
    std::vector<uint8_t> hi_bit(static_cast<size_t>(m), 0);
    if (m > 0) {
        // prefix sums in mu order; group L2 = sum w^2 - (sum |w|)^2 / n
        std::vector<double> pa(static_cast<size_t>(m) + 1, 0.0), ps(static_cast<size_t>(m) + 1, 0.0);
        for (int64_t i = 0; i < m; ++i) {
            int64_t k = by_mu[static_cast<size_t>(i)];
            pa[static_cast<size_t>(i) + 1] = pa[static_cast<size_t>(i)] + sum_abs[static_cast<size_t>(k)];
            ps[static_cast<size_t>(i) + 1] = ps[static_cast<size_t>(i)] + sum_sq[static_cast<size_t>(k)];
        }
        auto group_l2 = [&](int64_t lo, int64_t hi) {  // columns [lo, hi) in mu order
            if (hi <= lo) return 0.0;
            double sa = pa[static_cast<size_t>(hi)] - pa[static_cast<size_t>(lo)];
            double sq = ps[static_cast<size_t>(hi)] - ps[static_cast<size_t>(lo)];
            double n = static_cast<double>((hi - lo) * rows);
            return sq - sa * sa / n;
        };
        int64_t best_t = m;
        double best_l2 = std::numeric_limits<double>::max();
        for (int64_t t = 1; t <= m; ++t) {
            double l2 = group_l2(0, t) + group_l2(t, m);
            if (l2 < best_l2 - 1e-15) {
                best_l2 = l2;
                best_t = t;
            }
        }
        double na = static_cast<double>(best_t * rows);
        beta_lo = (pa[static_cast<size_t>(best_t)] - pa[0]) / na;
        if (best_t < m)
            beta_hi = (pa[static_cast<size_t>(m)] - pa[static_cast<size_t>(best_t)]) /
                      static_cast<double>((m - best_t) * rows);
        thresh = best_t < m
                     ? 0.5 * (mu[static_cast<size_t>(by_mu[static_cast<size_t>(best_t - 1)])] +
                              mu[static_cast<size_t>(by_mu[static_cast<size_t>(best_t)])])
                     : mu[static_cast<size_t>(by_mu[static_cast<size_t>(m - 1)])] + 1.0;
        for (int64_t i = best_t; i < m; ++i)
            hi_bit[static_cast<size_t>(by_mu[static_cast<size_t>(i)])] = 1;
    }
    q.ns_scale_lo = static_cast<float>(beta_lo);
    q.ns_scale_hi = static_cast<float>(beta_hi);
    q.split_threshold = static_cast<float>(thresh);
    q.col_group_bits = pack_bits(hi_bit);

    // column scale lookup for the sweep
    std::vector<double> col_scale(static_cast<size_t>(cols), 0.0);
    for (int64_t i = 0; i < m; ++i)
        col_scale[static_cast<size_t>(ns_cols[static_cast<size_t>(i)])] =
            hi_bit[static_cast<size_t>(i)] ? beta_hi : beta_lo;

    // (d) GPTQ-style column sweep with error propagation; signs are taken
    // from the compensated weights, scales stay fixed.
    Matd work = w.cast<double>();
    std::vector<uint8_t> main_bits(static_cast<size_t>(rows * cols), 0);
    std::vector<uint8_t> res_bits(static_cast<size_t>(rows * n_sal), 0);
    std::vector<int64_t> sal_pos(static_cast<size_t>(cols), -1);
    for (size_t i = 0; i < q.salient_cols.size(); ++i)
        sal_pos[q.salient_cols[i]] = static_cast<int64_t>(i);

    int64_t bs = cfg.block_size;
    for (int64_t b0 = 0; b0 < cols; b0 += bs) {
        int64_t b1 = std::min(cols, b0 + bs);
        Matd err = Matd::Zero(rows, b1 - b0);
        for (int64_t j = b0; j < b1; ++j) {
            double ujj = u(j, j);
            bool sal = is_salient[static_cast<size_t>(j)] != 0;
            for (int64_t r = 0; r < rows; ++r) {
                double v = work(r, j);
                float sign1 = sgn(v);
                double recon;
                if (sal) {
                    double res = v - static_cast<double>(q.sal_scale1) * sign1;
                    float sign2 = sgn(res);
                    recon = static_cast<double>(q.sal_scale1) * sign1 +
                            static_cast<double>(q.sal_scale2) * sign2;
                    if (sign2 > 0)
                        res_bits[static_cast<size_t>(r * n_sal + sal_pos[static_cast<size_t>(j)])] = 1;
                } else {
                    recon = col_scale[static_cast<size_t>(j)] * sign1;
                }
                if (sign1 > 0) main_bits[static_cast<size_t>(r * cols + j)] = 1;
                double e = (v - recon) / ujj;
                err(r, j - b0) = e;
                for (int64_t j2 = j + 1; j2 < b1; ++j2) work(r, j2) -= e * u(j, j2);
            }
        }
        if (b1 < cols)
            work.rightCols(cols - b1) -= err * u.block(b0, b1, b1 - b0, cols - b1);
    }
    q.codes = pack_bits(main_bits);
    q.salient_res_codes = pack_bits(res_bits);
    return q;
}

Mat dequantize(const QuantizedTensor& q) {
    Mat w(q.rows, q.cols);
    if (q.fmt == QFormat::Rtn4 || q.fmt == QFormat::Gptq4) {
        auto codes = unpack_nibbles(q.codes, static_cast<size_t>(q.rows * q.cols));
        int64_t ng = num_groups(q.cols, q.group_size);
        if (q.scales.size() != static_cast<size_t>(q.rows * ng))
            throw ValidationError("quantized tensor: scale count mismatch");
        for (int64_t r = 0; r < q.rows; ++r)
            for (int64_t c = 0; c < q.cols; ++c)
                w(r, c) = static_cast<float>(codes[static_cast<size_t>(r * q.cols + c)]) *
                          q.scales[static_cast<size_t>(r * ng + c / q.group_size)];
        return w;
    }

    auto main_bits = unpack_bits(q.codes, static_cast<size_t>(q.rows * q.cols));
    int64_t n_sal = static_cast<int64_t>(q.salient_cols.size());
    auto res_bits = unpack_bits(q.salient_res_codes, static_cast<size_t>(q.rows * n_sal));
    std::vector<int64_t> sal_pos(static_cast<size_t>(q.cols), -1);
    for (size_t i = 0; i < q.salient_cols.size(); ++i) {
        if (q.salient_cols[i] >= static_cast<uint32_t>(q.cols))
            throw ValidationError("quantized tensor: salient index out of range");
        sal_pos[q.salient_cols[i]] = static_cast<int64_t>(i);
    }
    int64_t m = q.cols - n_sal;
    auto hi_bits = unpack_bits(q.col_group_bits, static_cast<size_t>(m));
    std::vector<float> col_scale(static_cast<size_t>(q.cols), 0.0f);
    int64_t nsi = 0;
    for (int64_t c = 0; c < q.cols; ++c)
        if (sal_pos[static_cast<size_t>(c)] < 0)
            col_scale[static_cast<size_t>(c)] =
                hi_bits[static_cast<size_t>(nsi++)] ? q.ns_scale_hi : q.ns_scale_lo;

    for (int64_t r = 0; r < q.rows; ++r)
        for (int64_t c = 0; c < q.cols; ++c) {
            float sign1 = main_bits[static_cast<size_t>(r * q.cols + c)] ? 1.0f : -1.0f;
            int64_t sp = sal_pos[static_cast<size_t>(c)];
            if (sp >= 0) {
                float sign2 = res_bits[static_cast<size_t>(r * n_sal + sp)] ? 1.0f : -1.0f;
                w(r, c) = q.sal_scale1 * sign1 + q.sal_scale2 * sign2;
            } else {
                w(r, c) = col_scale[static_cast<size_t>(c)] * sign1;
            }
        }
    return w;
}

double proxy_loss(const Mat& w, const QuantizedTensor& q, const HessianAccumulator& h) {
    Matd dw = (w - dequantize(q)).cast<double>();
    Matd hh = h.width() > 0 ? h.h : Matd::Identity(w.cols(), w.cols());
    return (dw * hh).cwiseProduct(dw).sum();
}

// ---- container serialization -------------------------------------------------

void append_quantized(Container& c, const std::string& base, const QuantizedTensor& q) {
    NamedTensor codes;
    codes.name = base + ".codes";
    codes.dtype = q.fmt == QFormat::Bin ? Dtype::PackedBin : Dtype::Packed4;
    codes.shape = {q.rows, q.cols};
    codes.bytes = q.codes;
    c.tensors.push_back(std::move(codes));

    if (q.fmt == QFormat::Bin) {
        c.tensors.push_back(NamedTensor::u32(
            base + ".salient_idx", {static_cast<int64_t>(q.salient_cols.size())},
            q.salient_cols));
        NamedTensor res;
        res.name = base + ".salient_res";
        res.dtype = Dtype::PackedBin;
        res.shape = {q.rows, static_cast<int64_t>(q.salient_cols.size())};
        res.bytes = q.salient_res_codes;
        c.tensors.push_back(std::move(res));
        NamedTensor cg;
        cg.name = base + ".colgroups";
        cg.dtype = Dtype::PackedBin;
        cg.shape = {q.cols - static_cast<int64_t>(q.salient_cols.size())};
        cg.bytes = q.col_group_bits;
        c.tensors.push_back(std::move(cg));
        c.tensors.push_back(NamedTensor::f32(
            base + ".binscales", {5},
            {q.sal_scale1, q.sal_scale2, q.ns_scale_lo, q.ns_scale_hi, q.split_threshold}));
    } else {
        c.tensors.push_back(NamedTensor::f32(
            base + ".scales", {q.rows, static_cast<int64_t>(q.scales.size()) / q.rows},
            q.scales));
    }
    c.config["quant"][base] = {{"format", qformat_name(q.fmt)},
                               {"rows", q.rows},
                               {"cols", q.cols},
                               {"bits", q.bits},
                               {"group_size", q.group_size}};
}

QuantizedTensor read_quantized(const Container& c, const std::string& base) {
    if (!c.config.contains("quant") || !c.config["quant"].contains(base))
        throw ValidationError("no quant metadata for tensor '" + base + "'");
    const auto& meta = c.config["quant"][base];
    QuantizedTensor q;
    q.fmt = qformat_from_name(meta.at("format").get<std::string>());
    q.rows = meta.at("rows").get<int64_t>();
    q.cols = meta.at("cols").get<int64_t>();
    q.bits = meta.at("bits").get<int>();
    q.group_size = meta.at("group_size").get<int>();

    const auto& codes = c.tensor(base + ".codes");
    q.codes = codes.bytes;
    size_t n = static_cast<size_t>(q.rows * q.cols);
    if (q.fmt == QFormat::Bin) {
        if (q.codes.size() != (n + 7) / 8)
            throw ValidationError("tensor '" + base + "': packedbin nbytes mismatch");
        q.salient_cols = c.tensor(base + ".salient_idx").as_u32();
        q.salient_res_codes = c.tensor(base + ".salient_res").bytes;
        q.col_group_bits = c.tensor(base + ".colgroups").bytes;
        auto s = c.tensor(base + ".binscales").as_f32();
        if (s.size() != 5) throw ValidationError("tensor '" + base + "': bad binscales");
        q.sal_scale1 = s[0];
        q.sal_scale2 = s[1];
        q.ns_scale_lo = s[2];
        q.ns_scale_hi = s[3];
        q.split_threshold = s[4];
    } else {
        if (q.codes.size() != (n + 1) / 2)
            throw ValidationError("tensor '" + base + "': packed4 nbytes mismatch");
        q.scales = c.tensor(base + ".scales").as_f32();
    }
    return q;
}

// ---- stack quantization --------------------------------------------------------

Container quantize_stack(const LayerStack& stack, const std::vector<std::string>& tags,
                         const CalibrationSet& calib, const QuantConfig& cfg) {
    const auto& m = stack.manifest;
    if (static_cast<int64_t>(tags.size()) != m.num_layers)
        throw ValidationError("quantize_stack: need one tag per layer");
    if (calib.seqs.empty()) throw ValidationError("quantize_stack: empty calibration set");

    LayerStack work = stack;
    Container out;
    out.kind = "quantized";

    std::vector<Mat> inputs;
    for (const auto& seq : calib.seqs) inputs.push_back(embed_sequence(stack, seq));

    int64_t d = m.hidden_dim, ff = m.ff_dim;
    std::vector<int64_t> widths = {d, d, d, d, d, ff};

    // In independent mode all Hessians come from one fp32 pass.
    std::vector<std::array<HessianAccumulator, kLinearsPerLayer>> all_accs;
    if (!cfg.sequential) {
        all_accs.resize(static_cast<size_t>(m.num_layers));
        ForwardOptions opts;
        opts.want_logits = false;
        opts.observer = [&](int64_t li, LinearId lin, const Mat& rows) {
            all_accs[static_cast<size_t>(li)][static_cast<size_t>(lin)].add(rows);
        };
        for (const auto& x : inputs) forward(stack, x, opts);
    }

    for (int64_t li = 0; li < m.num_layers; ++li) {
        std::array<HessianAccumulator, kLinearsPerLayer> accs;
        if (cfg.sequential) {
            ForwardOptions opts;
            opts.want_logits = false;
            opts.stop_after = li;
            opts.observer = [&](int64_t l, LinearId lin, const Mat& rows) {
                if (l == li) accs[static_cast<size_t>(lin)].add(rows);
            };
            for (const auto& x : inputs) forward(work, x, opts);
        } else {
            accs = std::move(all_accs[static_cast<size_t>(li)]);
        }

        const auto& tag = tags[static_cast<size_t>(li)];
        auto names = m.layer_tensor_list(li);
        std::array<const Mat*, kLinearsPerLayer> mats = {
            &stack.layers[static_cast<size_t>(li)].wq, &stack.layers[static_cast<size_t>(li)].wk,
            &stack.layers[static_cast<size_t>(li)].wv, &stack.layers[static_cast<size_t>(li)].wo,
            &stack.layers[static_cast<size_t>(li)].w1, &stack.layers[static_cast<size_t>(li)].w2};
        std::array<Mat*, kLinearsPerLayer> slots = {
            &work.layers[static_cast<size_t>(li)].wq, &work.layers[static_cast<size_t>(li)].wk,
            &work.layers[static_cast<size_t>(li)].wv, &work.layers[static_cast<size_t>(li)].wo,
            &work.layers[static_cast<size_t>(li)].w1, &work.layers[static_cast<size_t>(li)].w2};

        for (int lin = 0; lin < kLinearsPerLayer; ++lin) {
            const Mat& wmat = *mats[static_cast<size_t>(lin)];
            if (tag == "fp32") {
                std::vector<float> v(wmat.data(), wmat.data() + wmat.size());
                out.tensors.push_back(
                    NamedTensor::f32(names[static_cast<size_t>(lin)], {wmat.rows(), wmat.cols()}, v));
                continue;
            }
            QuantizedTensor q;
            if (tag == "bin")
                q = billm_binarize(wmat, accs[static_cast<size_t>(lin)], cfg);
            else if (tag == "gptq4")
                q = gptq_quantize(wmat, accs[static_cast<size_t>(lin)], cfg);
            else if (tag == "rtn4")
                q = rtn_quantize(wmat, cfg.bits, cfg.group_size);
            else
                throw ValidationError("quantize_stack: unknown tag '" + tag + "'");
            append_quantized(out, names[static_cast<size_t>(lin)], q);
            *slots[static_cast<size_t>(lin)] = dequantize(q);
        }
    }

    // embeddings and head stay full precision
    std::vector<float> ev(stack.embed.data(), stack.embed.data() + stack.embed.size());
    out.tensors.push_back(NamedTensor::f32(m.embed_name, {m.vocab_size, d}, ev));
    std::vector<float> hv(stack.head.data(), stack.head.data() + stack.head.size());
    out.tensors.push_back(NamedTensor::f32(m.head_name, {m.vocab_size, d}, hv));

    ModelManifest qm = m;
    qm.quant_tags = tags;
    out.config["model"] = qm.to_json();
    out.config["quant_config"] = {{"q_high", cfg.q_high},       {"q_low", cfg.q_low},
                                  {"bits", cfg.bits},           {"block_size", cfg.block_size},
                                  {"group_size", cfg.group_size}, {"damping", cfg.damping},
                                  {"salient_frac", cfg.salient_frac},
                                  {"sequential", cfg.sequential}};
    return out;
}

std::vector<double> per_layer_bits(const Container& quantized) {
    ModelManifest m = manifest_of(quantized);
    std::vector<double> bits;
    for (int64_t li = 0; li < m.num_layers; ++li) {
        const auto& tag = m.quant_tags[static_cast<size_t>(li)];
        uint64_t bytes = 0;
        int64_t params = 0;
        for (const auto& name : m.layer_tensor_list(li)) {
            if (tag == "fp32") {
                const auto& t = quantized.tensor(name);
                bytes += t.bytes.size();
                params += static_cast<int64_t>(numel(t.shape));
            } else {
                QuantizedTensor q = read_quantized(quantized, name);
                bytes += q.payload_bytes();
                params += q.rows * q.cols;
            }
        }
        bits.push_back(static_cast<double>(bytes) * 8.0 / static_cast<double>(params));
    }
    return bits;
}

double avg_bitwidth(const std::vector<double>& layer_bits) {
    if (layer_bits.empty()) throw ValidationError("avg_bitwidth: no layers");
    double s = 0.0;
    for (double b : layer_bits) s += b;
    return s / static_cast<double>(layer_bits.size());
}

double avg_bitwidth_weighted(const std::vector<double>& layer_bits,
                             const std::vector<int64_t>& layer_params) {
    if (layer_bits.empty() || layer_bits.size() != layer_params.size())
        throw ValidationError("avg_bitwidth_weighted: bad inputs");
    double s = 0.0, n = 0.0;
    for (size_t i = 0; i < layer_bits.size(); ++i) {
        s += layer_bits[i] * static_cast<double>(layer_params[i]);
        n += static_cast<double>(layer_params[i]);
    }
    return s / n;
}

}  // namespace luq
