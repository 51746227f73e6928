#include "mfa/trainer.hpp"
#include "mfa/errors.hpp"
#include "mfa/rng.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace mfa {

AblationFlags AblationFlags::from_name(const std::string& name) {
    if (name == "st") return {false, false, false};
    if (name == "tf") return {true, false, false};
    if (name == "tf_cmf") return {true, true, false};
    if (name == "tf_oof") return {true, false, true};
    if (name == "mfa") return {true, true, true};
    throw ConfigError("unknown ablation '" + name + "' (expected st|tf|tf_cmf|tf_oof|mfa)");
}

std::string AblationFlags::name() const {
    if (!tf && !cmf && !oof) return "st";
    if (tf && !cmf && !oof) return "tf";
    if (tf && cmf && !oof) return "tf_cmf";
    if (tf && !cmf && oof) return "tf_oof";
    if (tf && cmf && oof) return "mfa";
    return std::string("custom_") + (tf ? "1" : "0") + (cmf ? "1" : "0") + (oof ? "1" : "0");
}

void TrainConfig::validate() const {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw ConfigError("invalid configuration: " + what);
    };
    require(base_lr > 0, "base_lr must be positive");
    require(warmup_lr > 0, "warmup_lr must be positive");
    require(momentum >= 0 && momentum < 1, "momentum must lie in [0,1)");
    require(poly_power >= 0, "poly_power must be non-negative");
    require(alpha >= 0 && alpha <= 1, "alpha must lie in [0,1]");
    require(rho_min > 0 && rho_min <= rho_max && rho_max <= 1, "need 0 < rho_min <= rho_max <= 1");
    require(phi_off > 0 && phi_off <= 1, "phi_off must lie in (0,1]");
    require(lambda_cst >= 0 && lambda_cross >= 0, "loss weights must be non-negative");
    require(mfa_epochs >= 1 && warmup_epochs >= 1, "epoch counts must be at least 1");
    require(batch_size >= 1, "batch_size must be at least 1");
    require(seed_a != seed_b, "seed_a and seed_b must differ");
}

namespace {

std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t start = 0; start < order.size(); start += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
    return out;
}

long steps_for(std::size_t n, int batch_size, int epochs) {
    const auto per_epoch = static_cast<long>((n + static_cast<std::size_t>(batch_size) - 1) / batch_size);
    return per_epoch * epochs;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, const char* stream, int epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = make_rng(seed, stream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

} // namespace

SegNet<float> warmup_train(const Dataset& source, std::uint64_t seed, const TrainConfig& config,
                           const std::function<void(const WarmupEpoch&)>& on_epoch) {
    config.validate();
    if (source.size() == 0) throw std::invalid_argument("warmup_train: empty source dataset");
    auto net = SegNet<float>::init(seed, kNumClasses);
    const long total = steps_for(source.size(), config.batch_size, config.warmup_epochs);
    auto opt = make_optimizer(net.params(), config.warmup_lr, config.momentum, total, config.poly_power);

    for (int epoch = 0; epoch < config.warmup_epochs; ++epoch) {
        const auto order = shuffled(source.size(), seed, "warmup.shuffle", epoch);
        double loss_sum = 0;
        long batches = 0, correct = 0, pixels = 0;
        double last_lr = 0;
        for (const auto& batch : make_batches(order, static_cast<std::size_t>(config.batch_size))) {
            std::vector<const DenseArray<float>*> images;
            std::vector<LabelMap> labels;
            std::vector<Mask> masks;
            for (auto i : batch) {
                images.push_back(&source.items[i].image);
                labels.push_back(source.items[i].labels);
                masks.push_back(Mask::Ones(labels.back().rows(), labels.back().cols()));
            }
            const auto x = stack_images<float>(images);
            const auto cache = forward_cached(net, x);
            const auto ce = masked_ce<float>(cache.logits, labels, masks);
            const auto pred = argmax_onehot(cache.logits);
            for (std::size_t k = 0; k < labels.size(); ++k) {
                correct += (pred.labels[k] == labels[k]).count();
                pixels += labels[k].size();
            }
            last_lr = opt.current_lr();
            sgd_step(net.params(), backward(net, cache, ce.grad_logits), opt);
            loss_sum += static_cast<double>(ce.loss);
            ++batches;
        }
        if (on_epoch)
            on_epoch({epoch, last_lr, loss_sum / static_cast<double>(batches),
                      static_cast<double>(correct) / static_cast<double>(pixels)});
    }
    return net;
}

void check_divergence(const SegNet<float>& a, const SegNet<float>& b) {
    if (a.params() == b.params())
        throw CheckFailure("warm-up divergence check failed: nets A and B have identical parameters");
}

EvalResult evaluate(const SegNet<float>& net, const Dataset& labeled) {
    if (labeled.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    EvalResult out;
    constexpr std::size_t chunk = 16;
    for (std::size_t start = 0; start < labeled.size(); start += chunk) {
        const std::size_t stop = std::min(labeled.size(), start + chunk);
        std::vector<const DenseArray<float>*> images;
        for (std::size_t i = start; i < stop; ++i) images.push_back(&labeled.items[i].image);
        const auto pred = argmax_onehot(forward(net, stack_images<float>(images)));
        for (std::size_t i = start; i < stop; ++i) out.confusion.accumulate(pred.labels[i - start], labeled.items[i].labels);
    }
    out.report = iou(out.confusion);
    return out;
}

const char* role_name(NetRole role) {
    switch (role) {
        case NetRole::A: return "A";
        case NetRole::B: return "B";
        case NetRole::MeanA: return "meanA";
        case NetRole::MeanB: return "meanB";
    }
    return "?";
}

NetRole parse_role(const std::string& name) {
    for (auto role : kAllRoles)
        if (name == role_name(role)) return role;
    throw ConfigError("unknown network selector '" + name + "' (expected A|B|meanA|meanB)");
}

const SegNet<float>& RunState::net(NetRole role) const {
    switch (role) {
        case NetRole::A: return net_a;
        case NetRole::B: return net_b;
        case NetRole::MeanA: return mean_a.net;
        case NetRole::MeanB: return mean_b.net;
    }
    throw std::logic_error("RunState::net: bad role");
}

MfaTrainer::MfaTrainer(SegNet<float> net_a, SegNet<float> net_b, ImageSet target, PseudoLabels offline_a,
                       PseudoLabels offline_b, TrainConfig config)
    : config_(std::move(config)),
      target_(std::move(target)),
      offline_a_(std::move(offline_a)),
      offline_b_(std::move(offline_b)) {
    config_.validate();
    if (target_.size() == 0) throw std::invalid_argument("MfaTrainer: empty target set");
    state_.total_steps = steps_for(target_.size(), config_.batch_size, config_.mfa_epochs);
    state_.mean_a = ema_init(net_a, config_.alpha);
    state_.mean_b = ema_init(net_b, config_.alpha);
    state_.opt_a = make_optimizer(net_a.params(), config_.base_lr, config_.momentum, state_.total_steps,
                                  config_.poly_power);
    state_.opt_b = make_optimizer(net_b.params(), config_.base_lr, config_.momentum, state_.total_steps,
                                  config_.poly_power);
    state_.net_a = std::move(net_a);
    state_.net_b = std::move(net_b);
    state_.phi = config_.rho_min;
}

long MfaTrainer::steps_per_epoch() const { return steps_for(target_.size(), config_.batch_size, 1); }

std::vector<std::size_t> MfaTrainer::epoch_order(int epoch) const {
    return shuffled(target_.size(), config_.data_seed, "mfa.shuffle", epoch);
}

DenseArray<float> MfaTrainer::gather(const std::vector<std::size_t>& batch) const {
    std::vector<const DenseArray<float>*> images;
    for (auto i : batch) {
        if (i >= target_.size()) throw std::out_of_range("MfaTrainer: batch index outside the target set");
        images.push_back(&target_.images[i]);
    }
    return stack_images<float>(images);
}

void MfaTrainer::gather_labels(const PseudoLabels& source, const std::vector<std::size_t>& batch,
                               std::vector<LabelMap>& labels, std::vector<Mask>& masks) const {
    for (auto i : batch) {
        if (i >= source.labels.size() || i >= source.masks.size())
            throw MissingInputError("no offline pseudo labels for target image " + std::to_string(i));
        labels.push_back(source.labels[i]);
        masks.push_back(source.masks[i]);
    }
}

StepOutcome MfaTrainer::compute_step(const std::vector<std::size_t>& batch) const {
    const auto& flags = config_.ablation;
    const double lambda_cst = flags.tf ? config_.lambda_cst : 0.0;
    const double lambda_cross = flags.oof ? config_.lambda_cross : 0.0;

    StepOutcome out;
    out.record.step = state_.step;
    out.record.lr = state_.opt_a.current_lr();
    // phi runs from rho_min at the first step to rho_max at the last one.
    out.record.phi = phi_schedule(std::min(state_.step, std::max(state_.total_steps - 1, 1L)),
                                  std::max(state_.total_steps - 1, 1L), config_.rho_min, config_.rho_max);

    const auto x = gather(batch);
    std::vector<LabelMap> labels_a, labels_b;
    std::vector<Mask> masks_a, masks_b;
    gather_labels(offline_a_, batch, labels_a, masks_a);
    gather_labels(offline_b_, batch, labels_b, masks_b);

    const auto cache_a = forward_cached(state_.net_a, x);
    const auto cache_b = forward_cached(state_.net_b, x);

    LearnerTerms<float> terms_a, terms_b;
    terms_a.self = masked_ce<float>(cache_a.logits, labels_a, masks_a);
    terms_b.self = masked_ce<float>(cache_b.logits, labels_b, masks_b);

    if (flags.tf || flags.oof) {
        const auto mean_probs_a = softmax(forward(state_.mean_a.net, x));
        const auto mean_probs_b = softmax(forward(state_.mean_b.net, x));
        if (flags.oof) {
            out.online = online_cbst(mean_probs_a, mean_probs_b, out.record.phi);
            // Mean net B's labels supervise A and vice versa.
            terms_a.cross = cross_loss<float>(cache_a.logits, out.online.b.labels, out.online.b.masks);
            terms_b.cross = cross_loss<float>(cache_b.logits, out.online.a.labels, out.online.a.masks);
        }
        if (flags.tf) {
            terms_a.cst = consistency_loss(softmax(cache_a.logits), mean_probs_a);
            terms_b.cst = consistency_loss(softmax(cache_b.logits), mean_probs_b);
        }
    }

    out.record.losses = total_loss(terms_a, terms_b, lambda_cst, lambda_cross);
    out.grad_a = backward(state_.net_a, cache_a,
                          learner_grad(terms_a, cache_a.logits.shape(), lambda_cst, lambda_cross));
    out.grad_b = backward(state_.net_b, cache_b,
                          learner_grad(terms_b, cache_b.logits.shape(), lambda_cst, lambda_cross));
    return out;
}

StepRecord MfaTrainer::step(const std::vector<std::size_t>& batch) {
    auto outcome = compute_step(batch);
    sgd_step(state_.net_a.params(), outcome.grad_a, state_.opt_a);
    sgd_step(state_.net_b.params(), outcome.grad_b, state_.opt_b);
    ema_update(state_.mean_a, state_.net_a.params());
    ema_update(state_.mean_b, state_.net_b.params());
    state_.phi = outcome.record.phi;
    ++state_.step;
    if (on_step) on_step(outcome.record);
    return outcome.record;
}

const RunState& MfaTrainer::run() {
    for (int epoch = 0; epoch < config_.mfa_epochs; ++epoch) {
        for (const auto& batch : make_batches(epoch_order(epoch), static_cast<std::size_t>(config_.batch_size)))
            step(batch);
        if (on_epoch) on_epoch(epoch, state_);
    }
    return state_;
}

} // namespace mfa
