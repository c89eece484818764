#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>

#include "doctest.h"
#include "qstar/model.hpp"
#include "qstar/train.hpp"

using namespace qstar;

namespace {

// training config small enough to finish in well under a second
RunConfig tiny_config() {
    RunConfig c;
    c.t = 4;
    c.d = 16;
    c.m_prime = 2;
    c.n = 3;
    c.f = 4;
    c.heads = 2;
    c.vocab = 8;
    c.train_samples = 24;
    c.val_samples = 16;
    c.epochs = 2;
    c.batch_size = 8;
    c.seed = 7;
    return c;
}

bool same_data(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i)
        if (a[i].data() != b[i].data()) return false;
    return true;
}

uint64_t forward_ops(const RunConfig& config) {
    DataDims dims = config.data_dims();
    Codebooks books = Codebooks::init(config.seed, dims);
    auto data = make_dataset(1, 1, dims, books);
    ModelParams params = build_model(config);
    ForwardStats stats;
    RunContext ctx{false, false};
    model_forward(params, config, data[0], ctx, &stats);
    return stats.ops;
}

}  // namespace

TEST_CASE("config text round trips through parse and serialize") {
    RunConfig c = tiny_config();
    c.learning_rate = 3e-4;
    c.qgmc_variant = QgmcVariant::SeparateCa;
    c.prompt_mode = PromptMode::None;
    c.query_guidance_removed = {GuidanceStage::Beginning, GuidanceStage::Final};
    std::string text = config_to_text(c);
    RunConfig back = parse_config_text(text);
    CHECK(config_to_text(back) == text);
    CHECK(back.learning_rate == c.learning_rate);
    CHECK(back.qgmc_variant == c.qgmc_variant);
    CHECK(back.prompt_mode == c.prompt_mode);
    CHECK(back.query_guidance_removed == c.query_guidance_removed);
    CHECK(back.seed == c.seed);
}

TEST_CASE("config parsing tolerates comments and blank lines") {
    RunConfig c = parse_config_text("# a comment\n\nd = 16\nheads = 2\n  epochs=3  \n");
    CHECK(c.d == 16);
    CHECK(c.heads == 2);
    CHECK(c.epochs == 3);
}

TEST_CASE("malformed configs raise ConfigError") {
    CHECK_THROWS_AS(parse_config_text("unknown_key = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("epochs = soon\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("d 32\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("qgmc_variant = e\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text("query_guidance_removed = start\n"), ConfigError);

    RunConfig bad = tiny_config();
    bad.heads = 3;  // does not divide d = 16
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config();
    bad.decay_factor = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = tiny_config();
    bad.prompt_mode = PromptMode::Caption;
    CHECK_THROWS_AS(bad.validate(), UnimplementedError);
}

TEST_CASE("the learning rate decays stepwise by the configured factor") {
    CHECK(scheduled_learning_rate(1e-4, 0.1, 10, 0) == doctest::Approx(1e-4));
    CHECK(scheduled_learning_rate(1e-4, 0.1, 10, 9) == doctest::Approx(1e-4));
    CHECK(scheduled_learning_rate(1e-4, 0.1, 10, 10) == doctest::Approx(1e-5));
    CHECK(scheduled_learning_rate(1e-4, 0.1, 10, 19) == doctest::Approx(1e-5));
    CHECK(scheduled_learning_rate(1e-4, 0.1, 10, 20) == doctest::Approx(1e-6));
    CHECK(scheduled_learning_rate(2e-3, 0.5, 3, 7) == doctest::Approx(2e-3 * 0.25));
}

TEST_CASE("a single optimizer step matches the closed-form update") {
    Tensor p = Tensor::from_data({2}, {1.5, -0.75}, true);
    std::vector<double> grad = {0.4, -0.2};
    // plant the gradient by hand
    Tensor loss = reduce_sum_all(mul(p, Tensor::from_data({2}, grad)));
    backward(loss);

    AdamWConfig cfg;
    AdamW opt({p});
    double lr = 1e-2;
    std::vector<double> before = p.data();
    opt.step(lr);
    CHECK(opt.steps_taken() == 1);
    for (int64_t i = 0; i < 2; ++i) {
        double m_hat = (1.0 - cfg.beta1) * grad[i] / (1.0 - cfg.beta1);
        double v_hat = (1.0 - cfg.beta2) * grad[i] * grad[i] / (1.0 - cfg.beta2);
        double expect =
            before[i] - lr * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) +
                              cfg.weight_decay * before[i]);
        CHECK(p.data()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("zero_grad clears accumulated gradients") {
    Tensor p = Tensor::from_data({2}, {1.0, 2.0}, true);
    backward(reduce_sum_all(mul(p, p)));
    CHECK(p.grad()[0] != 0.0);
    AdamW opt({p});
    opt.zero_grad();
    for (double g : p.grad()) CHECK(g == 0.0);
}

TEST_CASE("model construction is bitwise deterministic in the seed") {
    RunConfig c = tiny_config();
    ModelParams a = build_model(c);
    ModelParams b = build_model(c);
    CHECK(same_data(a.all(), b.all()));

    RunConfig other = c;
    other.seed = 8;
    ModelParams d = build_model(other);
    CHECK_FALSE(same_data(a.all(), d.all()));
}

TEST_CASE("every module ablation removes parameters from the full model") {
    RunConfig base = tiny_config();
    int64_t full = build_model(base).parameter_count();
    for (auto flag : {&RunConfig::disable_qgmc, &RunConfig::disable_sti, &RunConfig::disable_tfi,
                      &RunConfig::disable_qcr}) {
        RunConfig c = base;
        c.*flag = true;
        CHECK(build_model(c).parameter_count() < full);
    }
    RunConfig none = base;
    none.prompt_mode = PromptMode::None;
    CHECK(build_model(none).parameter_count() < full);
}

TEST_CASE("disabling the frequency path stops all reads of the time-frequency input") {
    RunConfig c = tiny_config();
    DataDims dims = c.data_dims();
    Codebooks books = Codebooks::init(c.seed, dims);
    auto data = make_dataset(1, 1, dims, books);
    RunContext ctx{false, false};

    ForwardStats with_tfi;
    model_forward(build_model(c), c, data[0], ctx, &with_tfi);
    CHECK(with_tfi.f_ast_reads == 1);

    c.disable_tfi = true;
    ForwardStats without_tfi;
    model_forward(build_model(c), c, data[0], ctx, &without_tfi);
    CHECK(without_tfi.f_ast_reads == 0);
    CHECK(without_tfi.ops < with_tfi.ops);
}

TEST_CASE("stage-removal rows change the forward graph") {
    RunConfig base = tiny_config();
    uint64_t full_ops = forward_ops(base);

    RunConfig rm_b = base;
    rm_b.query_guidance_removed = {GuidanceStage::Beginning};
    CHECK(forward_ops(rm_b) < full_ops);

    RunConfig rm_m = base;
    rm_m.query_guidance_removed = {GuidanceStage::Middle};
    CHECK(forward_ops(rm_m) < full_ops);

    RunConfig rm_f = base;
    rm_f.query_guidance_removed = {GuidanceStage::Final};
    CHECK(forward_ops(rm_f) < full_ops);
}

TEST_CASE("evaluation aggregates per-type counts that explain the overall accuracy") {
    RunConfig c = tiny_config();
    DataDims dims = c.data_dims();
    Codebooks books = Codebooks::init(c.seed, dims);
    auto data = make_dataset(123, 60, dims, books);
    ModelParams params = build_model(c);
    EvalResult res = evaluate(params, c, data);
    CHECK(res.total == 60);
    int64_t correct = 0, total = 0;
    for (const auto& [tag, counts] : res.by_type) {
        correct += counts.first;
        total += counts.second;
    }
    CHECK(total == res.total);
    CHECK(correct == res.correct);
    CHECK(res.accuracy == doctest::Approx(double(res.correct) / double(res.total)));
    CHECK(res.mean_loss > 0.0);

    CHECK_THROWS_AS(evaluate(params, c, {}), ConfigError);
}

TEST_CASE("training runs are reproducible down to the report text") {
    RunConfig c = tiny_config();
    RunReport a = run_training(c);
    RunReport b = run_training(c);
    CHECK(report_to_text(a) == report_to_text(b));
    REQUIRE(a.epochs.size() == 2);
    CHECK(a.epochs[0].learning_rate == doctest::Approx(c.learning_rate));
    for (const auto& e : a.epochs) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("checkpoints restore parameters and running statistics bitwise") {
    RunConfig c = tiny_config();
    ModelParams params = build_model(c);
    // move the model off its initialization first
    DataDims dims = c.data_dims();
    Codebooks books = Codebooks::init(c.seed, dims);
    auto data = make_dataset(c.seed, 8, dims, books);
    train(c, data, data, params);

    std::string path = "harness_test_ckpt.tmp";
    save_params(params, path);
    std::vector<double> saved_first = params.all()[0].data();
    auto* bn = params.batchnorm_states().empty() ? nullptr : params.batchnorm_states()[0];
    std::vector<double> saved_mean = bn ? bn->running_mean : std::vector<double>{};

    ModelParams fresh = build_model(c);
    CHECK(fresh.all()[0].data() != saved_first);  // training moved the weights
    load_params(fresh, path);
    CHECK(same_data(fresh.all(), params.all()));
    if (bn) CHECK(fresh.batchnorm_states()[0]->running_mean == saved_mean);

    // a checkpoint from a differently-shaped model is rejected
    RunConfig other = c;
    other.d = 32;
    ModelParams wrong = build_model(other);
    CHECK_THROWS_AS(load_params(wrong, path), FormatError);
    CHECK_THROWS_AS(load_params(fresh, "no_such_checkpoint.tmp"), FormatError);
    std::remove(path.c_str());
}

TEST_CASE("the ablation suite produces the fixed fourteen-row table") {
    RunConfig base = tiny_config();
    base.train_samples = 12;
    base.val_samples = 8;
    base.epochs = 1;
    base.batch_size = 4;
    std::vector<AblationRow> rows = run_ablation_suite(base);
    REQUIRE(rows.size() == 14);
    const std::vector<std::string> expected = {
        "full",    "w/o QGMC", "w/o STI",  "w/o TFI",  "w/o STFI", "w/o QCR",  "w/o all",
        "r/m B",   "r/m M",    "r/m F",    "variant a", "variant b", "variant c", "variant d"};
    for (size_t i = 0; i < rows.size(); ++i) CHECK(rows[i].name == expected[i]);

    std::string tsv = ablation_table_tsv(rows);
    CHECK(tsv.rfind("variant\taudio_acc\tvisual_acc\tav_acc\toverall_acc\n", 0) == 0);
    size_t lines = 0;
    for (char ch : tsv)
        if (ch == '\n') ++lines;
    CHECK(lines == 15);  // header + 14 rows

    // variant d is the full architecture: identical pipeline, identical numbers
    CHECK(rows[13].eval.accuracy == rows[0].eval.accuracy);
    CHECK(rows[13].eval.mean_loss == rows[0].eval.mean_loss);
    CHECK(rows[13].parameter_count == rows[0].parameter_count);

    // the all-off row is the smallest model
    for (size_t i = 0; i + 1 < rows.size(); ++i)
        CHECK(rows[6].parameter_count <= rows[i].parameter_count);
}

TEST_CASE("non-finite losses surface as NumericalError") {
    RunConfig c = tiny_config();
    c.learning_rate = 1e18;  // drives the weights to overflow within an epoch
    c.epochs = 3;
    CHECK_THROWS_AS(run_training(c), NumericalError);
}
