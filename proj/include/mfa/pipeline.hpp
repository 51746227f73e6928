#pragma once

#include "mfa/trainer.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace mfa {

inline constexpr const char* kToolVersion = "0.1.0";

// Flat `key = value` run configuration. Blank lines and '#' comments are skipped.
struct RunConfig {
    std::filesystem::path out_dir;
    std::size_t n_source = 0;
    std::size_t n_target = 0;
    std::size_t n_val = 0;
    int height = 64;
    int width = 64;
    int eval_every = 1;  // epochs between target_val evaluations during training
    TrainConfig train;

    // Relative out_dir values are resolved against `base_dir`.
    static RunConfig parse(std::istream& in, const std::filesystem::path& base_dir = {});
    static RunConfig load(const std::filesystem::path& path);

    // Every key with its effective value, in a stable order.
    std::map<std::string, std::string> snapshot() const;
};

const std::vector<std::string>& required_config_keys();

// Directory layout under out_dir.
struct RunPaths {
    std::filesystem::path root;

    std::filesystem::path data(const std::string& split) const { return root / "data" / split; }
    std::filesystem::path warmup() const { return root / "warmup"; }
    std::filesystem::path pseudo(const std::string& which) const { return root / "pseudo" / which; }
    std::filesystem::path train(const AblationFlags& flags) const { return root / ("train_" + flags.name()); }
    std::filesystem::path eval() const { return root / "eval"; }
    std::filesystem::path manifests() const { return root / "manifests"; }
};

// Splits written by cmd_gen.
inline const std::vector<std::string>& dataset_splits() {
    static const std::vector<std::string> splits{"source", "source_val", "target", "target_val"};
    return splits;
}

// The dataset a split name stands for; a pure function of (data_seed, split).
Dataset generate_split(const RunConfig& config, const std::string& split);

// What each command reports back besides its files.
struct CommandResult {
    std::vector<std::filesystem::path> artifacts;
    std::map<std::string, double> timings;  // seconds
    std::vector<std::string> log;
};

CommandResult cmd_gen(const RunConfig& config);
CommandResult cmd_warmup(const RunConfig& config);
CommandResult cmd_pseudo(const RunConfig& config);
// `observe` sees the run state after every epoch.
CommandResult cmd_train(const RunConfig& config, const AblationFlags& ablation,
                        const std::function<void(int epoch, const RunState&)>& observe = {});

// `source` is "warmup" or an ablation name; split defaults to target_val.
struct EvalRequest {
    std::string source = "mfa";
    NetRole role = NetRole::MeanA;
    std::string split = "target_val";
};

struct EvalOutcome {
    CommandResult result;
    IoUReport report;
};

EvalOutcome cmd_eval(const RunConfig& config, const EvalRequest& request);

struct LossGradCheck {
    std::string loss;
    GradCheckReport report;
};

struct GradcheckOptions {
    double epsilon = 1e-3;  // largest finite-difference step; refined per parameter
    double tolerance = 1e-5;
    std::uint64_t seed = 0;
    // Applied to every analytic gradient before comparison; used to confirm that a broken
    // backward pass is caught.
    std::function<void(ParamVector<double>&)> corrupt_gradient;
};

struct GradcheckOutcome {
    std::vector<LossGradCheck> losses;
    double tolerance = 0;

    bool passed() const;
};

// Central differences over every SegNet parameter for each loss composed with the net, in
// double precision.
GradcheckOutcome run_gradcheck(const GradcheckOptions& options = {});

// Writes <out_dir>/manifests/<name>.json via a temporary file and rename.
void write_run_manifest(const RunConfig& config, const std::string& name, const CommandResult& result);

} // namespace mfa
