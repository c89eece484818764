#pragma once

#include <string>
#include <vector>

#include "qstar/nn.hpp"

namespace qstar {

enum class PromptMode {
    None,                    // query context built from the sentence alone
    Keywords,                // five aspect keywords + sentence
    DeclarativeTranslation,  // named but unimplemented
    Caption,                 // named but unimplemented
};

PromptMode prompt_mode_from_name(const std::string& name);
std::string prompt_mode_name(PromptMode m);

// the five aspect keywords, embedded as learnable context tokens
struct PromptBank {
    std::vector<std::string> keywords;
    Tensor embeddings;  // [5, D]
    bool empty = false;

    static PromptBank init(int64_t d, Rng& rng);
    static PromptBank none();
    void collect(std::vector<Tensor>& out) const;
};

// keywords/none return a usable bank; the two external-resource modes are
// registered ablation slots and raise UnimplementedError
PromptBank make_prompt_bank(PromptMode mode, int64_t d, Rng& rng);

struct QcrParams {
    AttentionParams sa_qc;
    AttentionParams ca_v, ca_a;
    Tensor w_fc, b_fc;    // [2D, D], [D]
    Tensor w_cls, b_cls;  // [D, V], [V]

    static QcrParams init(int64_t d, int64_t heads, int64_t vocab, Rng& rng);
    // only the fusion classifier; used when the reasoning block is ablated
    static QcrParams init_fusion_only(int64_t d, int64_t vocab, Rng& rng);
    bool has_attention() const { return sa_qc.w_q.defined(); }
    void collect(std::vector<Tensor>& out) const;
};

struct AnswerDistribution {
    Tensor logits;                      // [V]
    std::vector<double> probabilities;  // softmax of logits
    int64_t argmax = 0;
};

AnswerDistribution answer_distribution(const Tensor& logits);

// f_vi [T, D], f_ai [T, D], f_sentence [D] -> logits over the vocabulary
AnswerDistribution qcr_forward(const Tensor& f_vi, const Tensor& f_ai, const Tensor& f_sentence,
                               const PromptBank& bank, const QcrParams& p);

// fallback head used when the reasoning block is ablated: temporal mean
// pooling straight into the fusion classifier
AnswerDistribution fusion_head(const Tensor& f_vi, const Tensor& f_ai, const Tensor& f_sentence,
                               const QcrParams& p);

Tensor cross_entropy_loss(const AnswerDistribution& dist, int64_t label);

}  // namespace qstar
