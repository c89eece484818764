#include "qstar/nn.hpp"

#include <cmath>

namespace qstar {

namespace {

// projections start uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)]
Tensor proj_init(int64_t rows, int64_t cols, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    return Tensor::uniform({rows, cols}, rng, -bound, bound, true);
}

}  // namespace

LayerNormParams LayerNormParams::init(int64_t d) {
    LayerNormParams p;
    p.gamma = Tensor::full({d}, 1.0, true);
    p.beta = Tensor::zeros({d}, true);
    return p;
}

void LayerNormParams::collect(std::vector<Tensor>& out) const {
    out.push_back(gamma);
    out.push_back(beta);
}

AttentionParams AttentionParams::init(int64_t d, int64_t heads, Rng& rng) {
    if (heads < 1 || d % heads != 0) {
        throw ConfigError("attention: head count " + std::to_string(heads) +
                          " must divide model dimension " + std::to_string(d));
    }
    AttentionParams p;
    p.w_q = proj_init(d, d, rng);
    p.w_k = proj_init(d, d, rng);
    p.w_v = proj_init(d, d, rng);
    p.w_o = proj_init(d, d, rng);
    p.heads = heads;
    p.norm = LayerNormParams::init(d);
    return p;
}

void AttentionParams::collect(std::vector<Tensor>& out) const {
    out.push_back(w_q);
    out.push_back(w_k);
    out.push_back(w_v);
    out.push_back(w_o);
    norm.collect(out);
}

FFNParams FFNParams::init(int64_t d_in, int64_t d_out, int64_t d_ff, Rng& rng) {
    FFNParams p;
    p.w1 = proj_init(d_in, d_ff, rng);
    p.b1 = Tensor::zeros({d_ff}, true);
    p.w2 = proj_init(d_ff, d_out, rng);
    p.b2 = Tensor::zeros({d_out}, true);
    p.norm = LayerNormParams::init(d_out);
    return p;
}

void FFNParams::collect(std::vector<Tensor>& out) const {
    out.push_back(w1);
    out.push_back(b1);
    out.push_back(w2);
    out.push_back(b2);
    norm.collect(out);
}

Conv1dParams Conv1dParams::init(int64_t c_in, int64_t c_out, int64_t kernel, Rng& rng) {
    Conv1dParams p;
    double bound = 1.0 / std::sqrt(static_cast<double>(c_in * kernel));
    p.w = Tensor::uniform({c_out, c_in, kernel}, rng, -bound, bound, true);
    p.b = Tensor::zeros({c_out}, true);
    return p;
}

void Conv1dParams::collect(std::vector<Tensor>& out) const {
    out.push_back(w);
    out.push_back(b);
}

ConvBlockParams ConvBlockParams::init(int64_t d, Rng& rng) {
    ConvBlockParams p;
    p.conv1 = Conv1dParams::init(2 * d, d, 3, rng);
    p.conv2 = Conv1dParams::init(d, d, 3, rng);
    p.bn1_gamma = Tensor::full({d}, 1.0, true);
    p.bn1_beta = Tensor::zeros({d}, true);
    p.bn2_gamma = Tensor::full({d}, 1.0, true);
    p.bn2_beta = Tensor::zeros({d}, true);
    p.bn1_state = std::make_shared<BatchNormState>();
    p.bn1_state->running_mean.assign(d, 0.0);
    p.bn1_state->running_var.assign(d, 1.0);
    p.bn2_state = std::make_shared<BatchNormState>();
    p.bn2_state->running_mean.assign(d, 0.0);
    p.bn2_state->running_var.assign(d, 1.0);
    return p;
}

void ConvBlockParams::collect(std::vector<Tensor>& out) const {
    conv1.collect(out);
    out.push_back(bn1_gamma);
    out.push_back(bn1_beta);
    conv2.collect(out);
    out.push_back(bn2_gamma);
    out.push_back(bn2_beta);
}

AttentionResult attention_with_weights(const Tensor& q_in, const Tensor& kv_in,
                                       const AttentionParams& p) {
    if (q_in.rank() != 2 || kv_in.rank() != 2) {
        throw ShapeError("attention: expected rank-2 inputs, got " + shape_str(q_in.shape()) +
                         " and " + shape_str(kv_in.shape()));
    }
    int64_t d = p.w_q.dim(0);
    if (q_in.dim(1) != d || kv_in.dim(1) != d) {
        throw ShapeError("attention: feature dims of " + shape_str(q_in.shape()) + " and " +
                         shape_str(kv_in.shape()) + " must both equal " + std::to_string(d));
    }
    int64_t lq = q_in.dim(0), lk = kv_in.dim(0);
    int64_t h = p.heads, dh = d / h;

    auto split_heads = [&](const Tensor& x, int64_t l) {
        return transpose(reshape(x, {l, h, dh}), {1, 0, 2});  // [h, L, dh]
    };
    Tensor q = split_heads(matmul(q_in, p.w_q), lq);
    Tensor k = split_heads(matmul(kv_in, p.w_k), lk);
    Tensor v = split_heads(matmul(kv_in, p.w_v), lk);

    Tensor scores = scale(matmul(q, transpose(k, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
    Tensor weights = softmax(scores, 2);  // [h, Lq, Lk]
    Tensor ctx = matmul(weights, v);      // [h, Lq, dh]
    Tensor merged = reshape(transpose(ctx, {1, 0, 2}), {lq, d});
    Tensor out = matmul(merged, p.w_o);
    out = layernorm(add(q_in, out), p.norm.gamma, p.norm.beta);
    return {out, weights};
}

Tensor self_attention(const Tensor& x, const AttentionParams& p) {
    return attention_with_weights(x, x, p).output;
}

Tensor cross_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p) {
    return attention_with_weights(q_in, kv_in, p).output;
}

Tensor ffn(const Tensor& x, const FFNParams& p) {
    Tensor h = linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
    if (p.w1.dim(0) == p.w2.dim(1)) h = add(x, h);
    return layernorm(h, p.norm.gamma, p.norm.beta);
}

Tensor conv_block(const Tensor& x, const ConvBlockParams& p, const RunContext& ctx) {
    int64_t d2 = p.conv1.w.dim(1);
    if (x.rank() != 2 || x.dim(1) != d2) {
        throw ShapeError("conv_block: expected [T, " + std::to_string(d2) + "], got " +
                         shape_str(x.shape()));
    }
    // every computation graph holds a single sample, so the batch seen by
    // BN is that sample's temporal extent; eval keeps the same instance
    // statistics because running averages estimated from single-sample
    // batches are badly mismatched with what the network trains against
    bool update = ctx.training && ctx.update_running_stats;
    Tensor y = transpose2d(x);  // [2D, T]
    y = conv1d(y, p.conv1.w, p.conv1.b, 1);
    y = relu(batchnorm(y, p.bn1_gamma, p.bn1_beta, *p.bn1_state, /*training=*/true, update));
    y = conv1d(y, p.conv2.w, p.conv2.b, 1);
    y = relu(batchnorm(y, p.bn2_gamma, p.bn2_beta, *p.bn2_state, /*training=*/true, update));
    return transpose2d(y);  // [T, D]
}

}  // namespace qstar
