// Loop-based reference implementations used as independent oracles in the
// unit tests. Everything here is written against the documented numeric
// conventions (row-major layouts, biased variances, eps values) using plain
// nested loops, deliberately avoiding the autodiff engine's code paths.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "qstar/nn.hpp"
#include "qstar/qcr.hpp"
#include "qstar/qgmc.hpp"
#include "qstar/stfi.hpp"
#include "qstar/synth.hpp"

namespace ref {

// row-major matrix of doubles
struct Mat {
    int64_t rows = 0, cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int64_t r, int64_t c) : rows(r), cols(c), d(r * c, 0.0) {}
    double& at(int64_t r, int64_t c) { return d[r * cols + c]; }
    double at(int64_t r, int64_t c) const { return d[r * cols + c]; }
};

inline Mat from_tensor2d(const qstar::Tensor& t) {
    Mat m(t.dim(0), t.dim(1));
    m.d = t.data();
    return m;
}

inline Mat from_vector(const std::vector<double>& v) {
    Mat m(1, static_cast<int64_t>(v.size()));
    m.d = v;
    return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.rows, b.cols);
    for (int64_t i = 0; i < a.rows; ++i)
        for (int64_t k = 0; k < a.cols; ++k)
            for (int64_t j = 0; j < b.cols; ++j) c.at(i, j) += a.at(i, k) * b.at(k, j);
    return c;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat c = a;
    for (size_t i = 0; i < c.d.size(); ++i) c.d[i] += b.d[i];
    return c;
}

inline Mat add_row(const Mat& a, const std::vector<double>& row) {
    Mat c = a;
    for (int64_t i = 0; i < c.rows; ++i)
        for (int64_t j = 0; j < c.cols; ++j) c.at(i, j) += row[j];
    return c;
}

inline Mat relu(const Mat& a) {
    Mat c = a;
    for (auto& v : c.d) v = std::max(v, 0.0);
    return c;
}

inline Mat tanh_m(const Mat& a) {
    Mat c = a;
    for (auto& v : c.d) v = std::tanh(v);
    return c;
}

inline Mat transpose(const Mat& a) {
    Mat c(a.cols, a.rows);
    for (int64_t i = 0; i < a.rows; ++i)
        for (int64_t j = 0; j < a.cols; ++j) c.at(j, i) = a.at(i, j);
    return c;
}

inline Mat concat_cols(const Mat& a, const Mat& b) {
    Mat c(a.rows, a.cols + b.cols);
    for (int64_t i = 0; i < a.rows; ++i) {
        for (int64_t j = 0; j < a.cols; ++j) c.at(i, j) = a.at(i, j);
        for (int64_t j = 0; j < b.cols; ++j) c.at(i, a.cols + j) = b.at(i, j);
    }
    return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
    double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (auto& v : out) v /= sum;
    return out;
}

inline void softmax_rows(Mat& m) {
    for (int64_t i = 0; i < m.rows; ++i) {
        std::vector<double> row(m.d.begin() + i * m.cols, m.d.begin() + (i + 1) * m.cols);
        row = softmax(row);
        std::copy(row.begin(), row.end(), m.d.begin() + i * m.cols);
    }
}

// LayerNorm over the last axis: biased variance, out = gamma*(x-m)/sqrt(v+eps)+beta
inline Mat layernorm(const Mat& x, const std::vector<double>& gamma,
                     const std::vector<double>& beta, double eps = 1e-5) {
    Mat out(x.rows, x.cols);
    for (int64_t i = 0; i < x.rows; ++i) {
        double m = 0.0;
        for (int64_t j = 0; j < x.cols; ++j) m += x.at(i, j);
        m /= static_cast<double>(x.cols);
        double v = 0.0;
        for (int64_t j = 0; j < x.cols; ++j) {
            double dd = x.at(i, j) - m;
            v += dd * dd;
        }
        v /= static_cast<double>(x.cols);
        double inv = 1.0 / std::sqrt(v + eps);
        for (int64_t j = 0; j < x.cols; ++j)
            out.at(i, j) = gamma[j] * (x.at(i, j) - m) * inv + beta[j];
    }
    return out;
}

// multi-head scaled dot-product attention with residual and post-layernorm,
// heads taken as contiguous column slices of the projected matrices
inline Mat attention(const Mat& q_in, const Mat& kv_in, const qstar::AttentionParams& p) {
    int64_t d = p.w_q.dim(0);
    int64_t h = p.heads, dh = d / h;
    Mat q = matmul(q_in, from_tensor2d(p.w_q));
    Mat k = matmul(kv_in, from_tensor2d(p.w_k));
    Mat v = matmul(kv_in, from_tensor2d(p.w_v));
    Mat merged(q_in.rows, d);
    for (int64_t hi = 0; hi < h; ++hi) {
        Mat scores(q_in.rows, kv_in.rows);
        for (int64_t i = 0; i < q_in.rows; ++i)
            for (int64_t j = 0; j < kv_in.rows; ++j) {
                double s = 0.0;
                for (int64_t e = 0; e < dh; ++e)
                    s += q.at(i, hi * dh + e) * k.at(j, hi * dh + e);
                scores.at(i, j) = s / std::sqrt(static_cast<double>(dh));
            }
        softmax_rows(scores);
        for (int64_t i = 0; i < q_in.rows; ++i)
            for (int64_t e = 0; e < dh; ++e) {
                double s = 0.0;
                for (int64_t j = 0; j < kv_in.rows; ++j)
                    s += scores.at(i, j) * v.at(j, hi * dh + e);
                merged.at(i, hi * dh + e) = s;
            }
    }
    Mat out = matmul(merged, from_tensor2d(p.w_o));
    return layernorm(add(q_in, out), p.norm.gamma.data(), p.norm.beta.data());
}

// LayerNorm(x + W2 relu(W1 x + b1) + b2); residual only when widths match
inline Mat ffn(const Mat& x, const qstar::FFNParams& p) {
    Mat h = relu(add_row(matmul(x, from_tensor2d(p.w1)), p.b1.data()));
    Mat out = add_row(matmul(h, from_tensor2d(p.w2)), p.b2.data());
    if (p.w1.dim(0) == p.w2.dim(1)) out = add(out, x);
    return layernorm(out, p.norm.gamma.data(), p.norm.beta.data());
}

// cross-correlation, x [C_in, L], w [C_out, C_in, k], same padding
inline Mat conv1d(const Mat& x, const qstar::Tensor& w, const qstar::Tensor& b, int64_t padding) {
    int64_t cout = w.dim(0), cin = w.dim(1), k = w.dim(2), len = x.cols;
    Mat out(cout, len);
    const auto& dw = w.data();
    for (int64_t co = 0; co < cout; ++co)
        for (int64_t l = 0; l < len; ++l) {
            double s = b.defined() ? b.data()[co] : 0.0;
            for (int64_t ci = 0; ci < cin; ++ci)
                for (int64_t j = 0; j < k; ++j) {
                    int64_t src = l + j - padding;
                    if (src < 0 || src >= len) continue;
                    s += dw[(co * cin + ci) * k + j] * x.at(ci, src);
                }
            out.at(co, l) = s;
        }
    return out;
}

// per-channel normalization using the given mean/var (biased), eps 1e-5
inline Mat batchnorm_with(const Mat& x, const std::vector<double>& gamma,
                          const std::vector<double>& beta, const std::vector<double>& mean,
                          const std::vector<double>& var, double eps = 1e-5) {
    Mat out(x.rows, x.cols);
    for (int64_t c = 0; c < x.rows; ++c) {
        double inv = 1.0 / std::sqrt(var[c] + eps);
        for (int64_t l = 0; l < x.cols; ++l)
            out.at(c, l) = gamma[c] * (x.at(c, l) - mean[c]) * inv + beta[c];
    }
    return out;
}

inline void instance_stats(const Mat& x, std::vector<double>& mean, std::vector<double>& var) {
    mean.assign(x.rows, 0.0);
    var.assign(x.rows, 0.0);
    for (int64_t c = 0; c < x.rows; ++c) {
        for (int64_t l = 0; l < x.cols; ++l) mean[c] += x.at(c, l);
        mean[c] /= static_cast<double>(x.cols);
        for (int64_t l = 0; l < x.cols; ++l) {
            double dd = x.at(c, l) - mean[c];
            var[c] += dd * dd;
        }
        var[c] /= static_cast<double>(x.cols);
    }
}

// conv block: [T, 2D] -> [T, D]; normalization always uses the sample's own
// per-channel statistics
inline Mat conv_block(const Mat& x, const qstar::ConvBlockParams& p) {
    Mat y = transpose(x);
    y = conv1d(y, p.conv1.w, p.conv1.b, 1);
    std::vector<double> mean, var;
    instance_stats(y, mean, var);
    y = relu(batchnorm_with(y, p.bn1_gamma.data(), p.bn1_beta.data(), mean, var));
    y = conv1d(y, p.conv2.w, p.conv2.b, 1);
    instance_stats(y, mean, var);
    y = relu(batchnorm_with(y, p.bn2_gamma.data(), p.bn2_beta.data(), mean, var));
    return transpose(y);
}

inline Mat mean_rows(const Mat& x) {
    Mat out(1, x.cols);
    for (int64_t j = 0; j < x.cols; ++j) {
        double s = 0.0;
        for (int64_t i = 0; i < x.rows; ++i) s += x.at(i, j);
        out.at(0, j) = s / static_cast<double>(x.rows);
    }
    return out;
}

struct QgmcOut {
    Mat f_vq, f_aq;
};

// full three-stage module, straight-line
inline QgmcOut qgmc(const Mat& f_v, const Mat& f_a, const Mat& f_w, const qstar::QgmcParams& p) {
    Mat sw = attention(f_w, f_w, p.sa_w);
    Mat sv = attention(f_v, f_v, p.sa_v);
    Mat sa = attention(f_a, f_a, p.sa_a);
    Mat f_qv = attention(sw, sv, p.ca_capture_v);
    Mat f_qa = attention(sw, sa, p.ca_capture_a);
    Mat f_qg = add(add(f_qv, f_qa), sw);
    QgmcOut out;
    out.f_vq = ffn(add(attention(f_v, f_qg, p.ca_prop_v), f_v), p.ffn_v);
    out.f_aq = ffn(add(attention(f_a, f_qg, p.ca_prop_a), f_a), p.ffn_a);
    return out;
}

// spatial path (per-segment patch attention, mean pooled) fused with the
// temporal D x D correlation path
inline Mat sti(const std::vector<Mat>& patches, const Mat& f_aq, const Mat& f_vq,
               const qstar::StiParams& p) {
    int64_t t = f_aq.rows, d = f_aq.cols;
    Mat f_si(t, d);
    for (int64_t i = 0; i < t; ++i) {
        Mat si = attention(attention(patches[i], patches[i], p.sa_p), f_aq, p.ca_sp);
        Mat pooled = mean_rows(si);
        for (int64_t j = 0; j < d; ++j) f_si.at(i, j) = pooled.at(0, j);
    }
    Mat scores = matmul(transpose(f_aq), f_vq);  // [D, D]
    softmax_rows(scores);
    Mat f_ti = matmul(f_vq, scores);
    return ffn(concat_cols(f_si, f_ti), p.ffn_fuse);
}

// band attention weights of the frequency path
inline std::vector<double> tfi_band_attention(const std::vector<Mat>& f_ast_slices,
                                              const Mat& f_w, const qstar::TfiParams& p,
                                              bool include_question_term) {
    int64_t t = static_cast<int64_t>(f_ast_slices.size());
    int64_t f = f_ast_slices[0].rows, d = f_ast_slices[0].cols;
    Mat f_mean(f, d);
    for (const auto& sl : f_ast_slices)
        for (int64_t i = 0; i < f; ++i)
            for (int64_t j = 0; j < d; ++j) f_mean.at(i, j) += sl.at(i, j) / double(t);
    Mat scores = matmul(relu(matmul(f_mean, from_tensor2d(p.w3))), from_tensor2d(p.w2));
    std::vector<double> raw(f);
    for (int64_t i = 0; i < f; ++i) raw[i] = scores.at(i, 0);
    if (include_question_term) {
        Mat q = mean_rows(f_w);
        double shift = matmul(q, from_tensor2d(p.w1)).at(0, 0);
        for (auto& v : raw) v += shift;
    }
    return softmax(raw);
}

// full frequency path: weight bands, collapse, fuse with the audio stream
inline Mat tfi(const std::vector<Mat>& f_ast_slices, const Mat& f_aq, const Mat& f_w,
               const qstar::TfiParams& p, bool include_question_term) {
    std::vector<double> a_f = tfi_band_attention(f_ast_slices, f_w, p, include_question_term);
    int64_t t = static_cast<int64_t>(f_ast_slices.size());
    int64_t f = f_ast_slices[0].rows, d = f_ast_slices[0].cols;
    Mat collapsed(t, d);
    for (int64_t ti = 0; ti < t; ++ti)
        for (int64_t fi = 0; fi < f; ++fi)
            for (int64_t j = 0; j < d; ++j)
                collapsed.at(ti, j) += a_f[fi] * f_ast_slices[ti].at(fi, j);
    return conv_block(concat_cols(collapsed, f_aq), p.conv);
}

// classifier tail shared by the reasoning head and the plain fusion head
inline std::vector<double> classify_logits(const Mat& pooled_v, const Mat& pooled_a,
                                           const std::vector<double>& f_sentence,
                                           const qstar::QcrParams& p) {
    Mat cat = concat_cols(pooled_v, pooled_a);  // [1, 2D]
    Mat f_av = tanh_m(add_row(matmul(cat, from_tensor2d(p.w_fc)), p.b_fc.data()));
    Mat e = f_av;
    for (int64_t j = 0; j < e.cols; ++j) e.at(0, j) *= f_sentence[j];
    Mat logits = add_row(matmul(e, from_tensor2d(p.w_cls)), p.b_cls.data());
    return logits.d;
}

inline std::vector<double> qcr_logits(const Mat& f_vi, const Mat& f_ai,
                                      const std::vector<double>& f_sentence,
                                      const qstar::PromptBank& bank, const qstar::QcrParams& p) {
    Mat tokens;
    if (bank.empty) {
        tokens = from_vector(f_sentence);
    } else {
        Mat emb = from_tensor2d(bank.embeddings);
        tokens = Mat(emb.rows + 1, emb.cols);
        std::copy(emb.d.begin(), emb.d.end(), tokens.d.begin());
        std::copy(f_sentence.begin(), f_sentence.end(), tokens.d.begin() + emb.d.size());
    }
    Mat f_qc = attention(tokens, tokens, p.sa_qc);
    Mat f_fv = attention(f_qc, f_vi, p.ca_v);
    Mat f_fa = attention(f_qc, f_ai, p.ca_a);
    return classify_logits(mean_rows(f_fv), mean_rows(f_fa), f_sentence, p);
}

// independent answer checker: enumerates the scene directly rather than
// reusing the generator's oracle code
inline int64_t brute_force_answer(const qstar::SceneSpec& scene, const qstar::QuestionSpec& q) {
    using namespace qstar;
    auto active_any = [](const Instrument& ins) {
        for (bool b : ins.schedule)
            if (b) return true;
        return false;
    };
    switch (q.template_id) {
        case QuestionTemplate::CountSounding: {
            int64_t n = 0;
            for (const auto& ins : scene.instruments) n += active_any(ins) ? 1 : 0;
            return n;
        }
        case QuestionTemplate::CountTypes: {
            bool seen[kNumClasses] = {};
            int64_t n = 0;
            for (const auto& ins : scene.instruments) {
                if (!seen[ins.class_id]) {
                    seen[ins.class_id] = true;
                    ++n;
                }
            }
            return n;
        }
        case QuestionTemplate::Existential: {
            for (const auto& ins : scene.instruments)
                if (ins.class_id == q.arg_a && active_any(ins)) return kAnswerYes;
            return kAnswerNo;
        }
        case QuestionTemplate::LouderThan: {
            double la = -1.0, lb = -1.0;
            for (const auto& ins : scene.instruments) {
                if (ins.class_id == q.arg_a) la = ins.loudness;
                if (ins.class_id == q.arg_b) lb = ins.loudness;
            }
            return la > lb ? kAnswerYes : kAnswerNo;
        }
        case QuestionTemplate::FirstSoundingSide: {
            int best_t = -1, best_pos = -1;
            for (const auto& ins : scene.instruments) {
                for (size_t ti = 0; ti < ins.schedule.size(); ++ti) {
                    if (!ins.schedule[ti]) continue;
                    if (best_t < 0 || static_cast<int>(ti) < best_t) {
                        best_t = static_cast<int>(ti);
                        best_pos = ins.position;
                    }
                    break;
                }
            }
            return best_pos * 2 < scene.patch_extent ? kAnswerLeft : kAnswerRight;
        }
        case QuestionTemplate::AlwaysPlaying: {
            for (const auto& ins : scene.instruments) {
                if (ins.class_id != q.arg_a) continue;
                for (bool b : ins.schedule)
                    if (!b) return kAnswerNo;
                return kAnswerYes;
            }
            return kAnswerNo;
        }
    }
    return -1;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline std::vector<Mat> slices3d(const qstar::Tensor& t) {
    // [A, B, C] -> A matrices of [B, C]
    std::vector<Mat> out;
    int64_t a = t.dim(0), b = t.dim(1), c = t.dim(2);
    const auto& d = t.data();
    for (int64_t i = 0; i < a; ++i) {
        Mat m(b, c);
        std::copy(d.begin() + i * b * c, d.begin() + (i + 1) * b * c, m.d.begin());
        out.push_back(std::move(m));
    }
    return out;
}

}  // namespace ref
