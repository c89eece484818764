#include "qstar/qcr.hpp"

#include <algorithm>
#include <cmath>

namespace qstar {

PromptMode prompt_mode_from_name(const std::string& name) {
    if (name == "none") return PromptMode::None;
    if (name == "keywords") return PromptMode::Keywords;
    if (name == "declarative_translation") return PromptMode::DeclarativeTranslation;
    if (name == "caption") return PromptMode::Caption;
    throw ConfigError("unknown prompt mode '" + name + "'");
}

std::string prompt_mode_name(PromptMode m) {
    switch (m) {
        case PromptMode::None: return "none";
        case PromptMode::Keywords: return "keywords";
        case PromptMode::DeclarativeTranslation: return "declarative_translation";
        case PromptMode::Caption: return "caption";
    }
    return "?";
}

PromptBank PromptBank::init(int64_t d, Rng& rng) {
    PromptBank b;
    b.keywords = {"type", "performance duration", "location", "temporal sequence", "loudness"};
    b.embeddings = Tensor::gaussian({5, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)), true);
    return b;
}

PromptBank PromptBank::none() {
    PromptBank b;
    b.empty = true;
    return b;
}

void PromptBank::collect(std::vector<Tensor>& out) const {
    if (!empty) out.push_back(embeddings);
}

PromptBank make_prompt_bank(PromptMode mode, int64_t d, Rng& rng) {
    switch (mode) {
        case PromptMode::Keywords: return PromptBank::init(d, rng);
        case PromptMode::None: return PromptBank::none();
        case PromptMode::DeclarativeTranslation:
        case PromptMode::Caption:
            throw UnimplementedError("prompt mode '" + prompt_mode_name(mode) +
                                     "' is a registered ablation slot but not implemented");
    }
    throw ConfigError("unknown prompt mode");
}

QcrParams QcrParams::init(int64_t d, int64_t heads, int64_t vocab, Rng& rng) {
    QcrParams p;
    p.sa_qc = AttentionParams::init(d, heads, rng);
    p.ca_v = AttentionParams::init(d, heads, rng);
    p.ca_a = AttentionParams::init(d, heads, rng);
    double bound = 1.0 / std::sqrt(static_cast<double>(2 * d));
    p.w_fc = Tensor::uniform({2 * d, d}, rng, -bound, bound, true);
    p.b_fc = Tensor::zeros({d}, true);
    double cbound = 1.0 / std::sqrt(static_cast<double>(d));
    p.w_cls = Tensor::uniform({d, vocab}, rng, -cbound, cbound, true);
    p.b_cls = Tensor::zeros({vocab}, true);
    return p;
}

QcrParams QcrParams::init_fusion_only(int64_t d, int64_t vocab, Rng& rng) {
    QcrParams p;
    double bound = 1.0 / std::sqrt(static_cast<double>(2 * d));
    p.w_fc = Tensor::uniform({2 * d, d}, rng, -bound, bound, true);
    p.b_fc = Tensor::zeros({d}, true);
    double cbound = 1.0 / std::sqrt(static_cast<double>(d));
    p.w_cls = Tensor::uniform({d, vocab}, rng, -cbound, cbound, true);
    p.b_cls = Tensor::zeros({vocab}, true);
    return p;
}

void QcrParams::collect(std::vector<Tensor>& out) const {
    if (has_attention()) {
        sa_qc.collect(out);
        ca_v.collect(out);
        ca_a.collect(out);
    }
    out.push_back(w_fc);
    out.push_back(b_fc);
    out.push_back(w_cls);
    out.push_back(b_cls);
}

AnswerDistribution answer_distribution(const Tensor& logits) {
    AnswerDistribution dist;
    dist.logits = logits;
    const auto& d = logits.data();
    double mx = *std::max_element(d.begin(), d.end());
    double sum = 0.0;
    dist.probabilities.resize(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
        dist.probabilities[i] = std::exp(d[i] - mx);
        sum += dist.probabilities[i];
    }
    for (auto& p : dist.probabilities) p /= sum;
    dist.argmax = static_cast<int64_t>(
        std::max_element(dist.probabilities.begin(), dist.probabilities.end()) -
        dist.probabilities.begin());
    return dist;
}

namespace {

AnswerDistribution classify(const Tensor& pooled_v, const Tensor& pooled_a,
                            const Tensor& f_sentence, const QcrParams& p) {
    int64_t d = f_sentence.size();
    Tensor cat = reshape(concat({pooled_v, pooled_a}, 0), {1, 2 * d});
    Tensor f_av = tanh_op(linear(cat, p.w_fc, p.b_fc));  // [1, D]
    Tensor e = mul(reshape(f_sentence, {1, d}), f_av);
    Tensor logits = reshape(linear(e, p.w_cls, p.b_cls), {p.w_cls.dim(1)});
    return answer_distribution(logits);
}

}  // namespace

AnswerDistribution qcr_forward(const Tensor& f_vi, const Tensor& f_ai, const Tensor& f_sentence,
                               const PromptBank& bank, const QcrParams& p) {
    int64_t d = f_sentence.size();
    Tensor sentence_token = reshape(f_sentence, {1, d});
    Tensor tokens =
        bank.empty ? sentence_token : concat({bank.embeddings, sentence_token}, 0);
    Tensor f_qc = self_attention(tokens, p.sa_qc);
    Tensor f_fv = cross_attention(f_qc, f_vi, p.ca_v);
    Tensor f_fa = cross_attention(f_qc, f_ai, p.ca_a);
    // context tokens are an unordered aspect set; pool them
    return classify(reduce_mean(f_fv, 0), reduce_mean(f_fa, 0), f_sentence, p);
}

AnswerDistribution fusion_head(const Tensor& f_vi, const Tensor& f_ai, const Tensor& f_sentence,
                               const QcrParams& p) {
    return classify(reduce_mean(f_vi, 0), reduce_mean(f_ai, 0), f_sentence, p);
}

Tensor cross_entropy_loss(const AnswerDistribution& dist, int64_t label) {
    return cross_entropy_with_logits(dist.logits, label);
}

}  // namespace qstar
