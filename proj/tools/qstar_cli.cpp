// command-line front end: train / eval / ablate / gradcheck / gen-data
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "qstar/gradcheck_suite.hpp"
#include "qstar/train.hpp"

namespace {

using namespace qstar;

RunConfig resolve_config(const std::string& config_path, std::optional<uint64_t> seed,
                         const std::string& out_path, const std::string& ablate,
                         const std::string& prompt_mode, const std::string& qgmc_variant) {
    RunConfig config = config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed) config.seed = *seed;
    if (!out_path.empty()) config.output_path = out_path;
    if (!prompt_mode.empty()) config.prompt_mode = prompt_mode_from_name(prompt_mode);
    if (!qgmc_variant.empty()) config.qgmc_variant = qgmc_variant_from_name(qgmc_variant);
    if (!ablate.empty()) {
        if (ablate == "qgmc") config.disable_qgmc = true;
        else if (ablate == "sti") config.disable_sti = true;
        else if (ablate == "tfi") config.disable_tfi = true;
        else if (ablate == "stfi") { config.disable_sti = true; config.disable_tfi = true; }
        else if (ablate == "qcr") config.disable_qcr = true;
        else if (ablate == "all") {
            config.disable_qgmc = config.disable_sti = config.disable_tfi = config.disable_qcr =
                true;
        }
        else if (ablate == "rm_b") config.query_guidance_removed.insert(GuidanceStage::Beginning);
        else if (ablate == "rm_m") config.query_guidance_removed.insert(GuidanceStage::Middle);
        else if (ablate == "rm_f") config.query_guidance_removed.insert(GuidanceStage::Final);
        else throw ConfigError("unknown --ablate name: " + ablate +
                               " (expected qgmc|sti|tfi|stfi|qcr|all|rm_b|rm_m|rm_f)");
    }
    config.validate();
    return config;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot open output path: " + path);
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qstar: desk-scale audio-visual question answering harness"};
    app.require_subcommand(1);

    std::string config_path, out_path, ablate, prompt_mode, qgmc_variant;
    std::optional<uint64_t> seed;
    app.add_option("--config", config_path, "flat key=value configuration file")
        ->check(CLI::ExistingFile);
    app.add_option("--seed", seed, "override the run seed");
    app.add_option("--out", out_path, "override the output path");
    app.add_option("--ablate", ablate, "named ablation (qgmc|sti|tfi|stfi|qcr|all|rm_b|rm_m|rm_f)");
    app.add_option("--prompt-mode", prompt_mode, "prompt bank mode (none|keywords)");
    app.add_option("--qgmc-variant", qgmc_variant, "early-fusion variant (a|b|c|d)");

    auto* cmd_train = app.add_subcommand("train", "train a model and write a run report");
    auto* cmd_eval = app.add_subcommand("eval", "evaluate saved parameters on a fresh val split");
    std::string params_path;
    cmd_eval->add_option("--params", params_path, "checkpoint written by train")
        ->required()
        ->check(CLI::ExistingFile);
    auto* cmd_ablate = app.add_subcommand("ablate", "run the 14-row ablation suite");
    auto* cmd_gradcheck =
        app.add_subcommand("gradcheck", "finite-difference checks of every block");
    int64_t gradcheck_seeds = 5;
    cmd_gradcheck->add_option("--seeds", gradcheck_seeds, "number of seeds to sweep");
    auto* cmd_gen = app.add_subcommand("gen-data", "write feature bundles as fixture files");
    int64_t gen_count = 16;
    cmd_gen->add_option("--count", gen_count, "number of bundles to write");

    // let the global flags appear after the subcommand name too
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;  // bad flags and missing files are config errors
    }

    try {
        RunConfig config =
            resolve_config(config_path, seed, out_path, ablate, prompt_mode, qgmc_variant);

        if (cmd_train->parsed()) {
            DataDims dims = config.data_dims();
            Codebooks books = Codebooks::init(config.seed, dims);
            auto train_set =
                make_dataset(mix_seed(config.seed, 0x7141a), config.train_samples, dims, books);
            auto val_set =
                make_dataset(mix_seed(config.seed, 0x7a11d), config.val_samples, dims, books);
            ModelParams params = build_model(config);
            RunReport report = train(config, train_set, val_set, params, /*verbose=*/true);
            std::string text = report_to_text(report);
            std::printf("%s", text.c_str());
            std::printf("wall_seconds\t%.3f\n", report.wall_seconds);
            if (!config.output_path.empty()) {
                write_text(config.output_path, text);
                save_params(params, config.output_path + ".params");
            }
        } else if (cmd_eval->parsed()) {
            ModelParams params = build_model(config);
            load_params(params, params_path);
            DataDims dims = config.data_dims();
            Codebooks books = Codebooks::init(config.seed, dims);
            auto val_set =
                make_dataset(mix_seed(config.seed, 0x7a11d), config.val_samples, dims, books);
            EvalResult eval = evaluate(params, config, val_set);
            std::printf("overall_acc\t%.6f\n", eval.accuracy);
            for (const auto& [tag, counts] : eval.by_type) {
                std::printf("%s_acc\t%.6f\t(%lld/%lld)\n", tag.c_str(),
                            static_cast<double>(counts.first) / counts.second,
                            static_cast<long long>(counts.first),
                            static_cast<long long>(counts.second));
            }
        } else if (cmd_ablate->parsed()) {
            auto rows = run_ablation_suite(config, /*verbose=*/true);
            std::string table = ablation_table_tsv(rows);
            std::printf("%s", table.c_str());
            if (!config.output_path.empty()) write_text(config.output_path, table);
        } else if (cmd_gradcheck->parsed()) {
            bool all_passed = true;
            for (int64_t s = 0; s < gradcheck_seeds; ++s) {
                uint64_t check_seed = mix_seed(config.seed, static_cast<uint64_t>(s) + 1);
                for (const auto& rep : run_gradcheck_suite(check_seed)) {
                    std::printf("seed %lld  %-22s max_rel_err %.3e  %s\n",
                                static_cast<long long>(s), rep.op_name.c_str(), rep.max_rel_error,
                                rep.passed ? "ok" : "FAIL");
                    all_passed = all_passed && rep.passed;
                }
            }
            if (!all_passed) {
                std::fprintf(stderr, "gradcheck: at least one block failed\n");
                return 3;
            }
        } else if (cmd_gen->parsed()) {
            if (config.output_path.empty()) throw ConfigError("gen-data requires --out");
            DataDims dims = config.data_dims();
            Codebooks books = Codebooks::init(config.seed, dims);
            auto bundles = make_dataset(mix_seed(config.seed, 0x9e4d), gen_count, dims, books);
            for (size_t i = 0; i < bundles.size(); ++i) {
                write_fixture(bundles[i], config.output_path + "." + std::to_string(i) + ".qstf");
            }
            std::printf("wrote %zu fixtures to %s.*.qstf\n", bundles.size(),
                        config.output_path.c_str());
        }
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const UnimplementedError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const FormatError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    }
    return 0;
}
