#include "qstar/stfi.hpp"

#include <cmath>

namespace qstar {

StiParams StiParams::init(int64_t d, int64_t heads, Rng& rng) {
    StiParams p;
    p.sa_p = AttentionParams::init(d, heads, rng);
    p.ca_sp = AttentionParams::init(d, heads, rng);
    p.ffn_fuse = FFNParams::init(2 * d, d, 4 * d, rng);
    return p;
}

void StiParams::collect(std::vector<Tensor>& out) const {
    sa_p.collect(out);
    ca_sp.collect(out);
    ffn_fuse.collect(out);
}

TfiParams TfiParams::init(int64_t d, int64_t hidden, Rng& rng) {
    if (hidden < 1) throw ConfigError("tfi: hidden width must be >= 1");
    TfiParams p;
    double bound = 1.0 / std::sqrt(static_cast<double>(d));
    p.w1 = Tensor::uniform({d, 1}, rng, -bound, bound, true);
    p.w3 = Tensor::uniform({d, hidden}, rng, -bound, bound, true);
    double hbound = 1.0 / std::sqrt(static_cast<double>(hidden));
    p.w2 = Tensor::uniform({hidden, 1}, rng, -hbound, hbound, true);
    p.conv = ConvBlockParams::init(d, rng);
    return p;
}

void TfiParams::collect(std::vector<Tensor>& out) const {
    out.push_back(w1);
    out.push_back(w2);
    out.push_back(w3);
    conv.collect(out);
}

Tensor sti_forward(const Tensor& f_p, const Tensor& f_aq, const Tensor& f_vq, const StiParams& p) {
    if (f_p.rank() != 3) {
        throw ShapeError("sti: expected patch features [T, M', D], got " + shape_str(f_p.shape()));
    }
    int64_t t = f_p.dim(0);
    if (f_aq.dim(0) != t || f_vq.dim(0) != t) {
        throw ShapeError("sti: T mismatch between " + shape_str(f_p.shape()) + ", " +
                         shape_str(f_aq.shape()) + ", " + shape_str(f_vq.shape()));
    }
    // spatial path: each segment's patches attend to the audio stream,
    // then mean-pool over patches
    std::vector<Tensor> pooled;
    pooled.reserve(t);
    for (int64_t i = 0; i < t; ++i) {
        Tensor patches = take(f_p, 0, i);  // [M', D]
        Tensor si = cross_attention(self_attention(patches, p.sa_p), f_aq, p.ca_sp);
        pooled.push_back(reduce_mean(si, 0));
    }
    Tensor f_si = stack0(pooled);  // [T, D]
    // temporal path: D x D correlation between the two streams
    Tensor scores = softmax(matmul(transpose2d(f_aq), f_vq), 1);
    Tensor f_ti = matmul(f_vq, scores);  // [T, D]
    return ffn(concat({f_si, f_ti}, 1), p.ffn_fuse);
}

FrequencyAttention frequency_attention(const Tensor& f_ast, const Tensor& f_w, const TfiParams& p,
                                       bool include_question_term) {
    if (f_ast.rank() != 3) {
        throw ShapeError("tfi: expected [T, F, D] time-frequency features, got " +
                         shape_str(f_ast.shape()));
    }
    int64_t f = f_ast.dim(1);
    Tensor f_mean = reduce_mean(f_ast, 0);  // [F, D]
    // additive attention: one scalar score per band; the question enters
    // as a band-constant shift through w1
    Tensor band_scores = matmul(relu(matmul(f_mean, p.w3)), p.w2);  // [F, 1]
    if (include_question_term) {
        Tensor q = reshape(reduce_mean(f_w, 0), {1, f_w.dim(1)});
        Tensor q_term = matmul(q, p.w1);  // [1, 1]
        // softmax is shift invariant, so this band-constant term moves
        // neither the probabilities nor (analytically) any gradient; adding
        // it inside the softmax would only leak rounding noise into the
        // weights through the optimizer. Attach it with its exact
        // coefficient instead, keeping the term in the graph.
        band_scores = add(band_scores, scale(q_term, 0.0));
    }
    FrequencyAttention out;
    out.a_f = softmax(reshape(band_scores, {f}), 0);
    out.f_ast_att = mul(f_ast, reshape(out.a_f, {1, f, 1}));
    return out;
}

Tensor tfi_forward(const Tensor& f_ast, const Tensor& f_aq, const Tensor& f_w, const TfiParams& p,
                   const RunContext& ctx, bool include_question_term) {
    if (f_ast.dim(0) != f_aq.dim(0)) {
        throw ShapeError("tfi: T mismatch between " + shape_str(f_ast.shape()) + " and " +
                         shape_str(f_aq.shape()));
    }
    FrequencyAttention att = frequency_attention(f_ast, f_w, p, include_question_term);
    Tensor collapsed = reduce_sum(att.f_ast_att, 1);  // [T, D]
    return conv_block(concat({collapsed, f_aq}, 1), p.conv, ctx);
}

}  // namespace qstar
