#include "mfa/errors.hpp"
#include "mfa/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

enum ExitCode { kOk = 0, kOtherError = 1, kConfigError = 2, kMissingInput = 3, kCheckFailed = 4 };

void print(const mfa::CommandResult& result) {
    for (const auto& line : result.log) std::cout << line << '\n';
}

void print_gradcheck(const mfa::GradcheckOutcome& outcome) {
    for (const auto& l : outcome.losses) {
        std::printf("%-18s max_rel_err %.3e over %ld params (worst index %ld: analytic %.6e, numeric %.6e) %s\n",
                    l.loss.c_str(), l.report.max_relative_error, static_cast<long>(l.report.checked),
                    static_cast<long>(l.report.worst_index), l.report.worst_analytic, l.report.worst_numeric,
                    l.report.max_relative_error < outcome.tolerance ? "ok" : "FAIL");
    }
    std::printf("gradcheck %s (tolerance %.0e)\n", outcome.passed() ? "passed" : "FAILED", outcome.tolerance);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-training pipeline for unsupervised domain adaptation on a toy segmentation task"};
    app.require_subcommand(1);

    std::string config_path;
    std::string ablation = "mfa";
    std::string select = "meanA";
    std::string split = "target_val";
    mfa::GradcheckOptions check;

    auto* gen = app.add_subcommand("gen", "Render the source and target datasets");
    auto* warmup = app.add_subcommand("warmup", "Train warm-up nets A and B on the source domain");
    auto* pseudo = app.add_subcommand("pseudo", "Generate offline pseudo labels for the target set");
    auto* train = app.add_subcommand("train", "Self-train on the target set");
    auto* eval = app.add_subcommand("eval", "Evaluate one checkpoint");
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every loss through the net");

    for (auto* cmd : {gen, warmup, pseudo, train, eval})
        cmd->add_option("--config", config_path, "Run configuration file")->required();
    train->add_option("--ablation", ablation, "st | tf | tf_cmf | tf_oof | mfa")->capture_default_str();
    eval->add_option("--ablation", ablation, "Which run to evaluate: warmup | st | tf | tf_cmf | tf_oof | mfa")
        ->capture_default_str();
    eval->add_option("--select", select, "A | B | meanA | meanB")->capture_default_str();
    gradcheck->add_option("--epsilon", check.epsilon, "Finite-difference step")->capture_default_str();
    gradcheck->add_option("--seed", check.seed, "Seed for the probe net and inputs")->capture_default_str();
    eval->add_option("--split", split, "source | source_val | target | target_val")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    try {
        if (gradcheck->parsed()) {
            const auto outcome = mfa::run_gradcheck(check);
            print_gradcheck(outcome);
            return outcome.passed() ? kOk : kCheckFailed;
        }

        const auto config = mfa::RunConfig::load(config_path);
        mfa::CommandResult result;
        std::string name;
        if (gen->parsed()) {
            name = "gen";
            result = mfa::cmd_gen(config);
        } else if (warmup->parsed()) {
            name = "warmup";
            result = mfa::cmd_warmup(config);
        } else if (pseudo->parsed()) {
            name = "pseudo";
            result = mfa::cmd_pseudo(config);
        } else if (train->parsed()) {
            const auto flags = mfa::AblationFlags::from_name(ablation);
            name = "train_" + flags.name();
            result = mfa::cmd_train(config, flags);
        } else {
            mfa::EvalRequest request{ablation, mfa::parse_role(select), split};
            name = "eval_" + ablation + "_" + select + "_" + split;
            result = mfa::cmd_eval(config, request).result;
        }
        mfa::write_run_manifest(config, name, result);
        print(result);
        return kOk;
    } catch (const mfa::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const mfa::MissingInputError& e) {
        std::cerr << "missing input: " << e.what() << '\n';
        return kMissingInput;
    } catch (const mfa::CheckFailure& e) {
        std::cerr << "check failed: " << e.what() << '\n';
        return kCheckFailed;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kOtherError;
    }
}
