#include "qstar/gradcheck_suite.hpp"

#include "qstar/model.hpp"

namespace qstar {

namespace {

// the small-dims grid used for finite-difference verification
RunConfig check_config(uint64_t seed) {
    RunConfig c;
    c.t = 4;
    c.m_prime = 2;
    c.n = 3;
    c.f = 4;
    c.d = 8;
    c.heads = 2;
    c.vocab = 4;
    c.seed = seed;
    return c;
}

// fixed random readout: a plain sum is (near-)constant after a final
// layernorm with unit gamma, which would reduce the check to comparing
// floating-point noise
Tensor probe_sum(const Tensor& out, const Tensor& r) { return reduce_sum_all(mul(out, r)); }

}  // namespace

std::vector<GradCheckReport> run_gradcheck_suite(uint64_t seed, double tolerance,
                                                 int64_t max_coords_per_leaf) {
    RunConfig config = check_config(seed);
    config.validate();
    const int64_t d = config.d;

    Rng rng(mix_seed(seed, 0x6c4d));
    GradCheckOptions opts;
    opts.max_coords_per_leaf = max_coords_per_leaf;
    opts.sample_seed = mix_seed(seed, 0x5a11);

    std::vector<GradCheckReport> reports;

    // self attention
    {
        AttentionParams p = AttentionParams::init(d, config.heads, rng);
        Tensor x = Tensor::gaussian({config.t, d}, rng, 1.0, true);
        Tensor r = Tensor::gaussian({config.t, d}, rng);
        std::vector<Tensor> leafs{x};
        p.collect(leafs);
        reports.push_back(grad_check(
            "self_attention", [&] { return probe_sum(self_attention(x, p), r); }, leafs,
            tolerance, opts));
    }

    // cross attention (distinct query/key lengths)
    {
        AttentionParams p = AttentionParams::init(d, config.heads, rng);
        Tensor q = Tensor::gaussian({config.t, d}, rng, 1.0, true);
        Tensor kv = Tensor::gaussian({config.n, d}, rng, 1.0, true);
        Tensor r = Tensor::gaussian({config.t, d}, rng);
        std::vector<Tensor> leafs{q, kv};
        p.collect(leafs);
        reports.push_back(grad_check(
            "cross_attention", [&] { return probe_sum(cross_attention(q, kv, p), r); }, leafs,
            tolerance, opts));
    }

    // feed-forward (including the width-changing fusion shape)
    {
        FFNParams p = FFNParams::init(2 * d, d, 4 * d, rng);
        Tensor x = Tensor::gaussian({config.t, 2 * d}, rng, 1.0, true);
        Tensor r = Tensor::gaussian({config.t, d}, rng);
        std::vector<Tensor> leafs{x};
        p.collect(leafs);
        reports.push_back(grad_check(
            "ffn", [&] { return probe_sum(ffn(x, p), r); }, leafs, tolerance, opts));
    }

    // conv block; running statistics must stay frozen so the closure is
    // evaluable twice per coordinate
    {
        ConvBlockParams p = ConvBlockParams::init(d, rng);
        Tensor x = Tensor::gaussian({config.t, 2 * d}, rng, 1.0, true);
        Tensor r = Tensor::gaussian({config.t, d}, rng);
        RunContext ctx{/*training=*/true, /*update_running_stats=*/false};
        std::vector<Tensor> leafs{x};
        p.collect(leafs);
        reports.push_back(grad_check(
            "conv_block", [&] { return probe_sum(conv_block(x, p, ctx), r); }, leafs, tolerance,
            opts));
    }

    // frequency attention
    {
        TfiParams p = TfiParams::init(d, d, rng);
        Tensor f_ast = Tensor::gaussian({config.t, config.f, d}, rng, 1.0, true);
        Tensor f_w = Tensor::gaussian({config.n, d}, rng, 1.0, true);
        Tensor r = Tensor::gaussian({config.t, config.f, d}, rng);
        std::vector<Tensor> leafs{f_ast, f_w, p.w1, p.w2, p.w3};
        reports.push_back(grad_check(
            "frequency_attention",
            [&] { return probe_sum(frequency_attention(f_ast, f_w, p).f_ast_att, r); }, leafs,
            tolerance, opts));
    }

    // full model, forward through the loss; random inputs are enough (and
    // better conditioned than near-duplicate codebook rows)
    {
        ModelParams params = build_model(config);
        Rng brng(mix_seed(seed, 0xb0d1));
        FeatureBundle bundle;
        bundle.f_v = Tensor::gaussian({config.t, d}, brng);
        bundle.f_p = Tensor::gaussian({config.t, config.m_prime, d}, brng);
        bundle.f_a = Tensor::gaussian({config.t, d}, brng);
        bundle.f_ast = Tensor::gaussian({config.t, config.f, d}, brng);
        bundle.f_w = Tensor::gaussian({config.n, d}, brng);
        bundle.f_sentence = Tensor::gaussian({d}, brng);
        bundle.label = static_cast<int64_t>(brng.next_below(static_cast<uint64_t>(config.vocab)));
        RunContext ctx{/*training=*/true, /*update_running_stats=*/false};
        std::vector<Tensor> leafs = params.all();
        reports.push_back(grad_check(
            "qstar_forward_loss",
            [&] {
                AnswerDistribution dist = model_forward(params, config, bundle, ctx);
                return cross_entropy_loss(dist, bundle.label);
            },
            leafs, tolerance, opts));
    }

    return reports;
}

}  // namespace qstar
