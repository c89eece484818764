#include "qstar/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace qstar {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

std::string fmt_acc(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return std::string(buf);
}

}  // namespace

AdamW::AdamW(std::vector<Tensor> params, AdamWConfig config)
    : params_(std::move(params)), config_(config) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

void AdamW::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

void AdamW::step(double learning_rate) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& data = params_[i].mutable_data();
        const auto& grad = params_[i].grad();
        if (grad.empty()) continue;  // parameter untouched by this graph
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < data.size(); ++j) {
            double g = grad[j];
            m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g;
            v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g * g;
            double m_hat = m[j] / bc1;
            double v_hat = v[j] / bc2;
            // decoupled weight decay, applied alongside the adaptive step
            data[j] -= learning_rate * (m_hat / (std::sqrt(v_hat) + config_.epsilon) +
                                        config_.weight_decay * data[j]);
        }
    }
}

double scheduled_learning_rate(double base, double factor, int64_t period, int64_t epoch) {
    return base * std::pow(factor, static_cast<double>(epoch / period));
}

EvalResult evaluate(const ModelParams& params, const RunConfig& config,
                    const std::vector<FeatureBundle>& dataset) {
    if (dataset.empty()) throw ConfigError("evaluate: empty dataset");
    RunContext ctx;  // inference: frozen batchnorm statistics
    EvalResult r;
    double loss_sum = 0.0;
    int64_t critical_correct = 0;
    for (const auto& bundle : dataset) {
        AnswerDistribution dist = model_forward(params, config, bundle, ctx);
        loss_sum += cross_entropy_loss(dist, bundle.label).item();
        bool correct = dist.argmax == bundle.label;
        ++r.total;
        if (correct) ++r.correct;
        auto& bucket = r.by_type[modality_tag_name(bundle.question_type)];
        ++bucket.second;
        if (correct) ++bucket.first;
        if (bundle.frequency_critical) {
            ++r.critical_total;
            if (correct) ++critical_correct;
        }
    }
    r.accuracy = static_cast<double>(r.correct) / static_cast<double>(r.total);
    r.mean_loss = loss_sum / static_cast<double>(r.total);
    if (r.critical_total > 0) {
        r.critical_accuracy =
            static_cast<double>(critical_correct) / static_cast<double>(r.critical_total);
    }
    return r;
}

RunReport train(const RunConfig& config, const std::vector<FeatureBundle>& train_set,
                const std::vector<FeatureBundle>& val_set, ModelParams& params, bool verbose) {
    if (train_set.empty() || val_set.empty()) throw ConfigError("train: empty dataset");
    auto t0 = std::chrono::steady_clock::now();

    AdamW opt(params.all());
    RunContext train_ctx{/*training=*/true, /*update_running_stats=*/true};

    RunReport report;
    report.config = config;
    report.parameter_count = params.parameter_count();

    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int64_t epoch = 0; epoch < config.epochs; ++epoch) {
        double lr = scheduled_learning_rate(config.learning_rate, config.decay_factor,
                                            config.decay_period, epoch);
        // fixed shuffle per (seed, epoch)
        Rng shuffle_rng(mix_seed(mix_seed(config.seed, 0x5f0f),
                                 static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(shuffle_rng.next_below(static_cast<uint64_t>(i)));
            std::swap(order[i - 1], order[j]);
        }

        double epoch_loss = 0.0;
        size_t cursor = 0;
        while (cursor < order.size()) {
            size_t batch_n = std::min<size_t>(config.batch_size, order.size() - cursor);
            opt.zero_grad();
            double batch_loss = 0.0;
            for (size_t b = 0; b < batch_n; ++b) {
                const FeatureBundle& bundle = train_set[order[cursor + b]];
                AnswerDistribution dist = model_forward(params, config, bundle, train_ctx);
                // mean over the batch, using a fixed per-sample order
                Tensor loss = scale(cross_entropy_loss(dist, bundle.label),
                                    1.0 / static_cast<double>(batch_n));
                double loss_value = loss.item() * static_cast<double>(batch_n);
                if (!std::isfinite(loss_value)) {
                    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) +
                                         ", sample index " +
                                         std::to_string(order[cursor + b]));
                }
                batch_loss += loss_value;
                backward(loss);
            }
            opt.step(lr);
            epoch_loss += batch_loss;
            cursor += batch_n;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.learning_rate = lr;
        rec.train_loss = epoch_loss / static_cast<double>(train_set.size());
        EvalResult val = evaluate(params, config, val_set);
        rec.val_accuracy = val.accuracy;
        report.epochs.push_back(rec);
        if (verbose) {
            std::printf("epoch %2lld  lr %.3g  loss %.4f  val %.4f\n",
                        static_cast<long long>(epoch), lr, rec.train_loss, rec.val_accuracy);
        }
    }

    report.final_eval = evaluate(params, config, val_set);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

RunReport run_training(const RunConfig& config, bool verbose) {
    config.validate();
    DataDims dims = config.data_dims();
    Codebooks books = Codebooks::init(config.seed, dims);
    auto train_set = make_dataset(mix_seed(config.seed, 0x7141a), config.train_samples, dims, books);
    auto val_set = make_dataset(mix_seed(config.seed, 0x7a11d), config.val_samples, dims, books);
    ModelParams params = build_model(config);
    return train(config, train_set, val_set, params, verbose);
}

std::string report_to_text(const RunReport& report) {
    std::ostringstream out;
    out << "qstar run report\n";
    out << "seed\t" << report.config.seed << "\n";
    out << "parameters\t" << report.parameter_count << "\n";
    out << "config\n";
    std::istringstream cfg(config_to_text(report.config));
    std::string line;
    while (std::getline(cfg, line)) out << "\t" << line << "\n";
    out << "epochs\n";
    for (const auto& e : report.epochs) {
        out << "\t" << e.epoch << "\tlr\t" << fmt_double(e.learning_rate) << "\ttrain_loss\t"
            << fmt_double(e.train_loss) << "\tval_acc\t" << fmt_double(e.val_accuracy) << "\n";
    }
    out << "final\n";
    out << "\toverall_acc\t" << fmt_double(report.final_eval.accuracy) << "\n";
    out << "\tmean_loss\t" << fmt_double(report.final_eval.mean_loss) << "\n";
    for (const auto& [tag, counts] : report.final_eval.by_type) {
        double acc = counts.second > 0
                         ? static_cast<double>(counts.first) / static_cast<double>(counts.second)
                         : 0.0;
        out << "\t" << tag << "_acc\t" << fmt_double(acc) << "\t(" << counts.first << "/"
            << counts.second << ")\n";
    }
    if (report.final_eval.critical_total > 0) {
        out << "\tcritical_acc\t" << fmt_double(report.final_eval.critical_accuracy) << "\t("
            << report.final_eval.critical_total << " samples)\n";
    }
    return out.str();
}

std::vector<AblationRow> run_ablation_suite(const RunConfig& base, bool verbose) {
    struct Variant {
        std::string name;
        std::function<void(RunConfig&)> apply;
    };
    const std::vector<Variant> grid = {
        {"full", [](RunConfig&) {}},
        {"w/o QGMC", [](RunConfig& c) { c.disable_qgmc = true; }},
        {"w/o STI", [](RunConfig& c) { c.disable_sti = true; }},
        {"w/o TFI", [](RunConfig& c) { c.disable_tfi = true; }},
        {"w/o STFI",
         [](RunConfig& c) {
             c.disable_sti = true;
             c.disable_tfi = true;
         }},
        {"w/o QCR", [](RunConfig& c) { c.disable_qcr = true; }},
        {"w/o all",
         [](RunConfig& c) {
             c.disable_qgmc = true;
             c.disable_sti = true;
             c.disable_tfi = true;
             c.disable_qcr = true;
         }},
        {"r/m B", [](RunConfig& c) { c.query_guidance_removed.insert(GuidanceStage::Beginning); }},
        {"r/m M", [](RunConfig& c) { c.query_guidance_removed.insert(GuidanceStage::Middle); }},
        {"r/m F", [](RunConfig& c) { c.query_guidance_removed.insert(GuidanceStage::Final); }},
        {"variant a", [](RunConfig& c) { c.qgmc_variant = QgmcVariant::AvstEarlyFusion; }},
        {"variant b", [](RunConfig& c) { c.qgmc_variant = QgmcVariant::SeparateCa; }},
        {"variant c", [](RunConfig& c) { c.qgmc_variant = QgmcVariant::SequentialCa; }},
        {"variant d", [](RunConfig& c) { c.qgmc_variant = QgmcVariant::Qgmc; }},
    };

    std::vector<AblationRow> rows;
    rows.reserve(grid.size());
    for (const auto& variant : grid) {
        RunConfig config = base;
        variant.apply(config);
        config.validate();
        if (verbose) std::printf("[ablate] %s\n", variant.name.c_str());
        DataDims dims = config.data_dims();
        Codebooks books = Codebooks::init(config.seed, dims);
        auto train_set =
            make_dataset(mix_seed(config.seed, 0x7141a), config.train_samples, dims, books);
        auto val_set =
            make_dataset(mix_seed(config.seed, 0x7a11d), config.val_samples, dims, books);
        ModelParams params = build_model(config);
        RunReport report = train(config, train_set, val_set, params, verbose);
        rows.push_back({variant.name, config, report.final_eval, report.parameter_count});
    }
    return rows;
}

std::string ablation_table_tsv(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "variant\taudio_acc\tvisual_acc\tav_acc\toverall_acc\n";
    for (const auto& row : rows) {
        auto acc_of = [&row](const char* tag) {
            auto it = row.eval.by_type.find(tag);
            if (it == row.eval.by_type.end() || it->second.second == 0) return 0.0;
            return static_cast<double>(it->second.first) /
                   static_cast<double>(it->second.second);
        };
        out << row.name << "\t" << fmt_acc(acc_of("audio")) << "\t" << fmt_acc(acc_of("visual"))
            << "\t" << fmt_acc(acc_of("audio-visual")) << "\t" << fmt_acc(row.eval.accuracy)
            << "\n";
    }
    return out.str();
}

}  // namespace qstar
