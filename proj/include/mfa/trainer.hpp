#pragma once

#include "mfa/ema.hpp"
#include "mfa/losses.hpp"
#include "mfa/metrics.hpp"
#include "mfa/numerics.hpp"
#include "mfa/offline_cbst.hpp"
#include "mfa/segnet.hpp"
#include "mfa/toy_domains.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mfa {

// Which fusions are active during self-training.
//   tf:  temporal fusion (consistency with the learner's own mean net)
//   cmf: cross-model fusion (offline labels from the two-model ensemble)
//   oof: online-offline fusion (cross supervision from the opposite mean net)
struct AblationFlags {
    bool tf = true;
    bool cmf = true;
    bool oof = true;

    // st | tf | tf_cmf | tf_oof | mfa
    static AblationFlags from_name(const std::string& name);
    std::string name() const;
};

struct TrainConfig {
    // self-training
    double base_lr = 2e-4;
    double momentum = 0.9;
    double poly_power = 0.9;
    double alpha = 0.99;
    double rho_min = 0.2;
    double rho_max = 0.7;
    double lambda_cst = 1.0;
    double lambda_cross = 0.5;
    double phi_off = 0.5;
    int mfa_epochs = 65;

    // source warm-up
    double warmup_lr = 0.05;
    int warmup_epochs = 30;

    int batch_size = 8;
    std::uint64_t seed_a = 1;
    std::uint64_t seed_b = 2;
    std::uint64_t data_seed = 0;
    AblationFlags ablation;

    void validate() const;
};

struct WarmupEpoch {
    int epoch = 0;
    double lr = 0;
    double mean_loss = 0;
    double pixel_accuracy = 0;
};

// Supervised source training with full-label cross entropy, SGD with momentum and a poly
// schedule. `seed` picks both the initialization and the shuffling order.
SegNet<float> warmup_train(const Dataset& source, std::uint64_t seed, const TrainConfig& config,
                           const std::function<void(const WarmupEpoch&)>& on_epoch = {});

// Throws CheckFailure when the two warm-up nets ended with identical parameters.
void check_divergence(const SegNet<float>& a, const SegNet<float>& b);

struct EvalResult {
    ConfusionMatrix confusion{kNumClasses};
    IoUReport report;
};

// Per-class IoU and mIoU of `net`'s argmax predictions against full ground truth.
EvalResult evaluate(const SegNet<float>& net, const Dataset& labeled);

enum class NetRole { A, B, MeanA, MeanB };
inline constexpr std::array<NetRole, 4> kAllRoles{NetRole::A, NetRole::B, NetRole::MeanA, NetRole::MeanB};
const char* role_name(NetRole role);
NetRole parse_role(const std::string& name);  // A | B | meanA | meanB

struct RunState {
    SegNet<float> net_a, net_b;
    MeanNet<float> mean_a, mean_b;
    OptimizerState<float> opt_a, opt_b;
    long step = 0;
    long total_steps = 0;
    double phi = 0;

    const SegNet<float>& net(NetRole role) const;
};

struct StepRecord {
    long step = 0;
    double lr = 0;
    double phi = 0;
    LossReport losses;
};

// Everything one training step computes before any parameter changes.
struct StepOutcome {
    StepRecord record;
    ParamVector<float> grad_a, grad_b;
    OnlineSelection online;
};

// Co-learning self-training on unlabeled target images with fixed offline labels.
class MfaTrainer {
public:
    // offline_a/offline_b supervise net A/B; with CMF both are the ensemble labels.
    MfaTrainer(SegNet<float> net_a, SegNet<float> net_b, ImageSet target, PseudoLabels offline_a,
               PseudoLabels offline_b, TrainConfig config);

    const RunState& state() const { return state_; }
    const TrainConfig& config() const { return config_; }
    long steps_per_epoch() const;

    // Losses, gradients and online selection for the given target images at the current
    // parameters. Pure with respect to the run state.
    StepOutcome compute_step(const std::vector<std::size_t>& batch) const;

    // compute_step, then SGD on both learners, then EMA on both mean nets.
    StepRecord step(const std::vector<std::size_t>& batch);

    // Image order for one epoch; a pure function of (data_seed, epoch).
    std::vector<std::size_t> epoch_order(int epoch) const;

    std::function<void(const StepRecord&)> on_step;
    std::function<void(int epoch, const RunState&)> on_epoch;

    // Runs all configured epochs.
    const RunState& run();

private:
    DenseArray<float> gather(const std::vector<std::size_t>& batch) const;
    void gather_labels(const PseudoLabels& source, const std::vector<std::size_t>& batch, std::vector<LabelMap>& labels,
                       std::vector<Mask>& masks) const;

    TrainConfig config_;
    ImageSet target_;
    PseudoLabels offline_a_, offline_b_;
    RunState state_;
};

} // namespace mfa
