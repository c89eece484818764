#pragma once

#include <vector>

#include "qstar/tensor.hpp"

namespace qstar {

struct LayerNormParams {
    Tensor gamma;  // [D]
    Tensor beta;   // [D]

    static LayerNormParams init(int64_t d);
    void collect(std::vector<Tensor>& out) const;
};

// W_q/W_k/W_v/W_o are D x D; heads must divide D
struct AttentionParams {
    Tensor w_q, w_k, w_v, w_o;
    int64_t heads = 1;
    LayerNormParams norm;

    static AttentionParams init(int64_t d, int64_t heads, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

struct FFNParams {
    Tensor w1, b1;  // [d_in, d_ff], [d_ff]
    Tensor w2, b2;  // [d_ff, d_out], [d_out]
    LayerNormParams norm;

    // default d_ff = 4 * d_in; the residual path is used only when
    // d_in == d_out
    static FFNParams init(int64_t d_in, int64_t d_out, int64_t d_ff, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

struct Conv1dParams {
    Tensor w;  // [C_out, C_in, k]
    Tensor b;  // [C_out]

    static Conv1dParams init(int64_t c_in, int64_t c_out, int64_t kernel, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

// two conv1d layers (2D -> D -> D, kernel 3, padding 1), each followed by
// batchnorm and ReLU
struct ConvBlockParams {
    Conv1dParams conv1, conv2;
    Tensor bn1_gamma, bn1_beta, bn2_gamma, bn2_beta;
    // running statistics are mutable state, not learnable
    std::shared_ptr<BatchNormState> bn1_state, bn2_state;

    static ConvBlockParams init(int64_t d, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

// forward-mode switches threaded through every block
struct RunContext {
    bool training = false;
    bool update_running_stats = false;
};

struct AttentionResult {
    Tensor output;   // [Lq, D]
    Tensor weights;  // [heads, Lq, Lk], rows sum to 1
};

// scaled dot-product attention with residual (adds the query input) and
// post-layer-normalization
AttentionResult attention_with_weights(const Tensor& q_in, const Tensor& kv_in,
                                       const AttentionParams& p);

Tensor self_attention(const Tensor& x, const AttentionParams& p);
Tensor cross_attention(const Tensor& q_in, const Tensor& kv_in, const AttentionParams& p);

// LayerNorm(x + W2 relu(W1 x + b1) + b2); residual skipped when widths differ
Tensor ffn(const Tensor& x, const FFNParams& p);

// x [T, 2D] -> [T, D]; T is the sequence axis, features are channels
Tensor conv_block(const Tensor& x, const ConvBlockParams& p, const RunContext& ctx);

}  // namespace qstar
