#pragma once

#include <optional>
#include <set>
#include <string>

#include "qstar/qcr.hpp"
#include "qstar/qgmc.hpp"
#include "qstar/stfi.hpp"
#include "qstar/synth.hpp"

namespace qstar {

enum class GuidanceStage { Beginning, Middle, Final };

struct RunConfig {
    // dims
    int64_t t = 8, d = 32, m_prime = 4, n = 6, f = 8;
    int64_t heads = 4;
    int64_t hidden = 0;  // H of the frequency attention; 0 -> D
    int64_t vocab = 8;
    // optimizer
    double learning_rate = 1e-3;
    double decay_factor = 0.1;
    int64_t decay_period = 10;  // epochs
    int64_t batch_size = 32;
    int64_t epochs = 20;
    // ablations
    bool disable_qgmc = false;
    bool disable_sti = false;
    bool disable_tfi = false;
    bool disable_qcr = false;
    QgmcVariant qgmc_variant = QgmcVariant::Qgmc;
    PromptMode prompt_mode = PromptMode::Keywords;
    std::set<GuidanceStage> query_guidance_removed;
    // run
    uint64_t seed = 0;
    int64_t train_samples = 2000;
    int64_t val_samples = 500;
    std::string output_path;

    void validate() const;
    DataDims data_dims() const;
    int64_t hidden_width() const { return hidden > 0 ? hidden : d; }
    // stage-removal flags folded into the module switches
    bool qgmc_enabled() const;
    bool tfi_question_term() const;
    PromptMode effective_prompt_mode() const;
};

// flat key=value config file, keys matching the field names above;
// query_guidance_removed is a comma-separated subset of
// {beginning, middle, final}
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_text(const RunConfig& config);

struct ModelParams {
    std::optional<QgmcParams> qgmc;
    std::optional<StiParams> sti;
    std::optional<TfiParams> tfi;
    QcrParams qcr;
    PromptBank bank;

    std::vector<Tensor> all() const;
    int64_t parameter_count() const;
    std::vector<BatchNormState*> batchnorm_states() const;
};

ModelParams build_model(const RunConfig& config);

// per-forward instrumentation
struct ForwardStats {
    uint64_t ops = 0;          // graph nodes created
    uint64_t f_ast_reads = 0;  // times the time-frequency input was consumed
};

AnswerDistribution model_forward(const ModelParams& params, const RunConfig& config,
                                 const FeatureBundle& bundle, const RunContext& ctx,
                                 ForwardStats* stats = nullptr);

// parameter checkpoint (ordered tensors + batchnorm running statistics)
void save_params(const ModelParams& params, const std::string& path);
void load_params(ModelParams& params, const std::string& path);

}  // namespace qstar
