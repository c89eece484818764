#pragma once

#include "qstar/nn.hpp"

namespace qstar {

// query-guided multimodal correlation: self-enhance each modality, capture
// shared semantics into a question-indexed context, propagate it back
struct QgmcParams {
    AttentionParams sa_v, sa_a, sa_w;
    AttentionParams ca_capture_v, ca_capture_a;
    AttentionParams ca_prop_v, ca_prop_a;
    FFNParams ffn_v, ffn_a;

    static QgmcParams init(int64_t d, int64_t heads, Rng& rng);
    void collect(std::vector<Tensor>& out) const;
};

enum class QgmcVariant {
    AvstEarlyFusion,  // audio-visual cross-attention only, question unused
    SeparateCa,       // per-modality cross-attention against the question
    SequentialCa,     // other modality first, then the question, per branch
    Qgmc,             // full three-stage module
};

QgmcVariant qgmc_variant_from_name(const std::string& name);
std::string qgmc_variant_name(QgmcVariant v);

struct QgmcIntermediates {
    Tensor sa_w_out;  // [N, D]
    Tensor f_qg;      // [N, D]
};

struct QgmcOutput {
    Tensor f_vq;  // [T, D] refined visual stream
    Tensor f_aq;  // [T, D] refined audio stream
};

QgmcOutput qgmc_forward(const Tensor& f_v, const Tensor& f_a, const Tensor& f_w,
                        const QgmcParams& p, QgmcIntermediates* debug = nullptr);

QgmcOutput qgmc_variant_forward(const Tensor& f_v, const Tensor& f_a, const Tensor& f_w,
                                const QgmcParams& p, QgmcVariant variant);

}  // namespace qstar
