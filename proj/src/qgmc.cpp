#include "qstar/qgmc.hpp"

namespace qstar {

QgmcParams QgmcParams::init(int64_t d, int64_t heads, Rng& rng) {
    QgmcParams p;
    p.sa_v = AttentionParams::init(d, heads, rng);
    p.sa_a = AttentionParams::init(d, heads, rng);
    p.sa_w = AttentionParams::init(d, heads, rng);
    p.ca_capture_v = AttentionParams::init(d, heads, rng);
    p.ca_capture_a = AttentionParams::init(d, heads, rng);
    p.ca_prop_v = AttentionParams::init(d, heads, rng);
    p.ca_prop_a = AttentionParams::init(d, heads, rng);
    p.ffn_v = FFNParams::init(d, d, 4 * d, rng);
    p.ffn_a = FFNParams::init(d, d, 4 * d, rng);
    return p;
}

void QgmcParams::collect(std::vector<Tensor>& out) const {
    sa_v.collect(out);
    sa_a.collect(out);
    sa_w.collect(out);
    ca_capture_v.collect(out);
    ca_capture_a.collect(out);
    ca_prop_v.collect(out);
    ca_prop_a.collect(out);
    ffn_v.collect(out);
    ffn_a.collect(out);
}

QgmcVariant qgmc_variant_from_name(const std::string& name) {
    if (name == "a" || name == "avst_early_fusion") return QgmcVariant::AvstEarlyFusion;
    if (name == "b" || name == "separate_ca") return QgmcVariant::SeparateCa;
    if (name == "c" || name == "sequential_ca") return QgmcVariant::SequentialCa;
    if (name == "d" || name == "qgmc") return QgmcVariant::Qgmc;
    throw ConfigError("unknown qgmc variant '" + name + "'");
}

std::string qgmc_variant_name(QgmcVariant v) {
    switch (v) {
        case QgmcVariant::AvstEarlyFusion: return "avst_early_fusion";
        case QgmcVariant::SeparateCa: return "separate_ca";
        case QgmcVariant::SequentialCa: return "sequential_ca";
        case QgmcVariant::Qgmc: return "qgmc";
    }
    return "?";
}

QgmcOutput qgmc_forward(const Tensor& f_v, const Tensor& f_a, const Tensor& f_w,
                        const QgmcParams& p, QgmcIntermediates* debug) {
    if (f_v.dim(1) != f_a.dim(1) || f_v.dim(1) != f_w.dim(1)) {
        throw ShapeError("qgmc: feature dims disagree across modalities: " +
                         shape_str(f_v.shape()) + ", " + shape_str(f_a.shape()) + ", " +
                         shape_str(f_w.shape()));
    }
    if (f_v.dim(0) != f_a.dim(0)) {
        throw ShapeError("qgmc: visual and audio streams must share T, got " +
                         shape_str(f_v.shape()) + " and " + shape_str(f_a.shape()));
    }
    // self-enhancing; SA(F_w) is computed once and reused below
    Tensor sa_w_out = self_attention(f_w, p.sa_w);
    Tensor sa_v_out = self_attention(f_v, p.sa_v);
    Tensor sa_a_out = self_attention(f_a, p.sa_a);
    // capturing: question tokens query each modality
    Tensor f_qv = cross_attention(sa_w_out, sa_v_out, p.ca_capture_v);
    Tensor f_qa = cross_attention(sa_w_out, sa_a_out, p.ca_capture_a);
    Tensor f_qg = add(add(f_qv, f_qa), sa_w_out);  // [N, D]
    // propagating: guidance flows back to both streams
    Tensor f_vq = cross_attention(f_v, f_qg, p.ca_prop_v);
    Tensor f_aq = cross_attention(f_a, f_qg, p.ca_prop_a);
    QgmcOutput out;
    out.f_vq = ffn(add(f_vq, f_v), p.ffn_v);
    out.f_aq = ffn(add(f_aq, f_a), p.ffn_a);
    if (debug) {
        debug->sa_w_out = sa_w_out;
        debug->f_qg = f_qg;
    }
    return out;
}

QgmcOutput qgmc_variant_forward(const Tensor& f_v, const Tensor& f_a, const Tensor& f_w,
                                const QgmcParams& p, QgmcVariant variant) {
    QgmcOutput out;
    switch (variant) {
        case QgmcVariant::Qgmc:
            return qgmc_forward(f_v, f_a, f_w, p);
        case QgmcVariant::AvstEarlyFusion: {
            Tensor sa_v_out = self_attention(f_v, p.sa_v);
            Tensor sa_a_out = self_attention(f_a, p.sa_a);
            Tensor f_vq = cross_attention(sa_v_out, sa_a_out, p.ca_prop_v);
            Tensor f_aq = cross_attention(sa_a_out, sa_v_out, p.ca_prop_a);
            out.f_vq = ffn(add(f_vq, f_v), p.ffn_v);
            out.f_aq = ffn(add(f_aq, f_a), p.ffn_a);
            return out;
        }
        case QgmcVariant::SeparateCa: {
            Tensor sa_w_out = self_attention(f_w, p.sa_w);
            Tensor f_vq = cross_attention(f_v, sa_w_out, p.ca_prop_v);
            Tensor f_aq = cross_attention(f_a, sa_w_out, p.ca_prop_a);
            out.f_vq = ffn(add(f_vq, f_v), p.ffn_v);
            out.f_aq = ffn(add(f_aq, f_a), p.ffn_a);
            return out;
        }
        case QgmcVariant::SequentialCa: {
            Tensor sa_w_out = self_attention(f_w, p.sa_w);
            Tensor sa_v_out = self_attention(f_v, p.sa_v);
            Tensor sa_a_out = self_attention(f_a, p.sa_a);
            Tensor v1 = cross_attention(sa_v_out, sa_a_out, p.ca_capture_v);
            Tensor a1 = cross_attention(sa_a_out, sa_v_out, p.ca_capture_a);
            Tensor f_vq = cross_attention(v1, sa_w_out, p.ca_prop_v);
            Tensor f_aq = cross_attention(a1, sa_w_out, p.ca_prop_a);
            out.f_vq = ffn(add(f_vq, f_v), p.ffn_v);
            out.f_aq = ffn(add(f_aq, f_a), p.ffn_a);
            return out;
        }
    }
    throw ConfigError("unknown qgmc variant");
}

}  // namespace qstar
