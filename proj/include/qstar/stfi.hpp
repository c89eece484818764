#pragma once

#include "qstar/nn.hpp"

namespace qstar {

// spatial-temporal interaction over patch features
struct StiParams {
    AttentionParams sa_p;    // within each segment's patches
    AttentionParams ca_sp;   // patches query the query-guided audio stream
    FFNParams ffn_fuse;      // 2D -> D fusion

    static StiParams init(int64_t d, int64_t heads, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

// temporal-frequency interaction over time-frequency audio features
struct TfiParams {
    Tensor w1;  // [D, 1] question projection
    Tensor w2;  // [H, 1] hidden-to-score
    Tensor w3;  // [D, H] band projection
    ConvBlockParams conv;

    static TfiParams init(int64_t d, int64_t hidden, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

// f_p [T, M', D], f_aq [T, D], f_vq [T, D] -> [T, D]
Tensor sti_forward(const Tensor& f_p, const Tensor& f_aq, const Tensor& f_vq, const StiParams& p);

struct FrequencyAttention {
    Tensor a_f;        // [F], probability simplex
    Tensor f_ast_att;  // [T, F, D], bands reweighted by a_f
};

// include_question_term=false drops the band-constant question score
// (query-guidance removal in the middle stage)
FrequencyAttention frequency_attention(const Tensor& f_ast, const Tensor& f_w, const TfiParams& p,
                                       bool include_question_term = true);

// f_ast [T, F, D], f_aq [T, D], f_w [N, D] -> [T, D]
Tensor tfi_forward(const Tensor& f_ast, const Tensor& f_aq, const Tensor& f_w, const TfiParams& p,
                   const RunContext& ctx, bool include_question_term = true);

}  // namespace qstar
