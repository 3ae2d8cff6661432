#include "luq/net.hpp"

#include <cmath>
#include <cstring>

#include "luq/quant.hpp"

namespace luq {

namespace {

constexpr float kNormEps = 1e-6f;
constexpr float kPosAmplitude = 0.5f;

Mat load_f32(const Container& c, const std::string& name, int64_t rows, int64_t cols) {
    const auto& t = c.tensor(name);
    auto v = t.as_f32();
    Mat m(rows, cols);
    std::memcpy(m.data(), v.data(), v.size() * sizeof(float));
    return m;
}

Mat load_weight(const Container& c, const std::string& name, const std::string& tag,
                int64_t rows, int64_t cols) {
    if (tag == "fp32") return load_f32(c, name, rows, cols);
    QuantizedTensor q = read_quantized(c, name);
    if (q.rows != rows || q.cols != cols)
        throw ValidationError("quantized tensor '" + name + "': shape mismatch");
    return dequantize(q);
}

Mat rms_norm(const Mat& x) {
    Mat out = x;
    for (int64_t i = 0; i < x.rows(); ++i) {
        float ms = x.row(i).squaredNorm() / static_cast<float>(x.cols());
        out.row(i) /= std::sqrt(ms + kNormEps);
    }
    return out;
}

void softmax_rows(Mat& m) {
    for (int64_t i = 0; i < m.rows(); ++i) {
        float mx = m.row(i).maxCoeff();
        m.row(i) = (m.row(i).array() - mx).exp();
        m.row(i) /= m.row(i).sum();
    }
}

}  // namespace

LayerStack LayerStack::from_container(const Container& c) {
    LayerStack s;
    s.manifest = manifest_of(c);
    const auto& m = s.manifest;
    for (int64_t i = 0; i < m.num_layers; ++i) {
        const auto& n = m.layers[static_cast<size_t>(i)];
        const auto& tag = m.quant_tags[static_cast<size_t>(i)];
        LayerWeights w;
        w.wq = load_weight(c, n.wq, tag, m.hidden_dim, m.hidden_dim);
        w.wk = load_weight(c, n.wk, tag, m.hidden_dim, m.hidden_dim);
        w.wv = load_weight(c, n.wv, tag, m.hidden_dim, m.hidden_dim);
        w.wo = load_weight(c, n.wo, tag, m.hidden_dim, m.hidden_dim);
        w.w1 = load_weight(c, n.w1, tag, m.ff_dim, m.hidden_dim);
        w.w2 = load_weight(c, n.w2, tag, m.hidden_dim, m.ff_dim);
        s.layers.push_back(std::move(w));
    }
    s.embed = load_f32(c, m.embed_name, m.vocab_size, m.hidden_dim);
    s.head = load_f32(c, m.head_name, m.vocab_size, m.hidden_dim);
    return s;
}

Mat position_encoding(int64_t n, int64_t d) {
    Mat p(n, d);
    for (int64_t t = 0; t < n; ++t)
        for (int64_t i = 0; i < d; ++i) {
            double freq = std::pow(10000.0, -static_cast<double>(i - (i % 2)) /
                                                static_cast<double>(d));
            double v = static_cast<double>(t) * freq;
            p(t, i) = kPosAmplitude * static_cast<float>((i % 2 == 0) ? std::sin(v)
                                                                      : std::cos(v));
        }
    return p;
}

Mat embed_sequence(const LayerStack& stack, const Sequence& seq) {
    const auto& m = stack.manifest;
    Mat x;
    if (seq.mod == Modality::Text) {
        x.resize(static_cast<int64_t>(seq.tokens.size()), m.hidden_dim);
        for (size_t t = 0; t < seq.tokens.size(); ++t) {
            if (seq.tokens[t] >= static_cast<uint32_t>(m.vocab_size))
                throw ValidationError("token id out of vocab range");
            x.row(static_cast<int64_t>(t)) = stack.embed.row(seq.tokens[t]);
        }
    } else {
        if (seq.embed.cols() != m.hidden_dim)
            throw ValidationError("multimodal embedding width != hidden_dim");
        x = seq.embed;
    }
    if (m.pos_encoding) x += position_encoding(x.rows(), m.hidden_dim);
    return x;
}

ForwardResult forward(const LayerStack& stack, const Mat& input, const ForwardOptions& opts) {
    const auto& m = stack.manifest;
    if (input.cols() != m.hidden_dim)
        throw ValidationError("forward: input width != hidden_dim");
    if (!input.allFinite()) throw ValidationError("forward: non-finite input");

    int64_t n = input.rows(), d = m.hidden_dim;
    int64_t nh = m.heads, dh = d / nh;
    float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

    ForwardResult res;
    Mat h = input;
    for (int64_t li = 0; li < m.num_layers; ++li) {
        const auto& w = stack.layers[static_cast<size_t>(li)];

        Mat hn = rms_norm(h);
        if (opts.observer) {
            opts.observer(li, LinearId::WQ, hn);
            opts.observer(li, LinearId::WK, hn);
            opts.observer(li, LinearId::WV, hn);
        }
        Mat q = hn * w.wq.transpose();
        Mat k = hn * w.wk.transpose();
        Mat v = hn * w.wv.transpose();

        Mat att(n, d);
        for (int64_t hd = 0; hd < nh; ++hd) {
            auto qh = q.middleCols(hd * dh, dh);
            auto kh = k.middleCols(hd * dh, dh);
            auto vh = v.middleCols(hd * dh, dh);
            Mat scores = qh * kh.transpose() * att_scale;
            // causal mask
            for (int64_t i = 0; i < n; ++i)
                for (int64_t j = i + 1; j < n; ++j)
                    scores(i, j) = -1e30f;
            softmax_rows(scores);
            att.middleCols(hd * dh, dh) = scores * vh;
        }
        if (opts.observer) opts.observer(li, LinearId::WO, att);
        h += att * w.wo.transpose();

        Mat hn2 = rms_norm(h);
        if (opts.observer) opts.observer(li, LinearId::W1, hn2);
        Mat act = (hn2 * w.w1.transpose()).array().tanh().matrix();
        if (opts.observer) opts.observer(li, LinearId::W2, act);
        h += act * w.w2.transpose();

        if (!h.allFinite())
            throw std::runtime_error("numeric overflow in layer " + std::to_string(li));
        if (opts.capture) res.captured.push_back(h);
        if (opts.stop_after >= 0 && li >= opts.stop_after) break;
    }

    res.hidden = h;
    if (opts.want_logits) res.logits = rms_norm(h) * stack.head.transpose();
    return res;
}

ActivationSet capture_activations(const LayerStack& stack, const CalibrationSet& calib) {
    ActivationSet out;
    out.acts.resize(static_cast<size_t>(stack.manifest.num_layers));
    ForwardOptions opts;
    opts.capture = true;
    opts.want_logits = false;
    for (const auto& seq : calib.seqs) {
        ForwardResult r = forward(stack, embed_sequence(stack, seq), opts);
        for (size_t li = 0; li < r.captured.size(); ++li)
            out.acts[li].push_back(std::move(r.captured[li]));
    }
    return out;
}

}  // namespace luq
