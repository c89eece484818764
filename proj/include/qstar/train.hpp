#pragma once

#include <map>
#include <string>
#include <vector>

#include "qstar/model.hpp"

namespace qstar {

// decoupled weight decay Adam
struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 1e-2;
};

class AdamW {
public:
    AdamW(std::vector<Tensor> params, AdamWConfig config = {});

    void step(double learning_rate);
    void zero_grad();
    int64_t steps_taken() const { return steps_; }

private:
    std::vector<Tensor> params_;
    AdamWConfig config_;
    std::vector<std::vector<double>> m_, v_;
    int64_t steps_ = 0;
};

// lr0 * factor^floor(epoch / period)
double scheduled_learning_rate(double base, double factor, int64_t period, int64_t epoch);

struct EvalResult {
    double accuracy = 0.0;
    double mean_loss = 0.0;
    int64_t total = 0;
    int64_t correct = 0;
    // per question modality: {correct, total}
    std::map<std::string, std::pair<int64_t, int64_t>> by_type;
    // accuracy restricted to the frequency-critical subset (-1 if empty)
    double critical_accuracy = -1.0;
    int64_t critical_total = 0;
};

struct EpochRecord {
    int64_t epoch = 0;
    double learning_rate = 0.0;
    double train_loss = 0.0;
    double val_accuracy = 0.0;
};

struct RunReport {
    RunConfig config;
    std::vector<EpochRecord> epochs;
    EvalResult final_eval;
    int64_t parameter_count = 0;
    double wall_seconds = 0.0;  // printed to the console, left out of the document
};

EvalResult evaluate(const ModelParams& params, const RunConfig& config,
                    const std::vector<FeatureBundle>& dataset);

RunReport train(const RunConfig& config, const std::vector<FeatureBundle>& train_set,
                const std::vector<FeatureBundle>& val_set, ModelParams& params,
                bool verbose = false);

// builds datasets from config.seed, trains, evaluates
RunReport run_training(const RunConfig& config, bool verbose = false);

// deterministic structured-text result document (no timing fields)
std::string report_to_text(const RunReport& report);

struct AblationRow {
    std::string name;
    RunConfig config;
    EvalResult eval;
    int64_t parameter_count = 0;
};

// the fixed 14-row suite; every row reuses base.seed and the base dims
std::vector<AblationRow> run_ablation_suite(const RunConfig& base, bool verbose = false);

std::string ablation_table_tsv(const std::vector<AblationRow>& rows);

}  // namespace qstar
