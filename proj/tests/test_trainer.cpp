#include <doctest.h>

#include "mfa/errors.hpp"
#include "mfa/trainer.hpp"

#include <algorithm>
#include <numeric>

using namespace mfa;

namespace {

TrainConfig tiny_config(const std::string& ablation = "mfa") {
    TrainConfig c;
    c.warmup_epochs = 2;
    c.mfa_epochs = 2;
    c.batch_size = 2;
    c.base_lr = 0.01;
    c.seed_a = 11;
    c.seed_b = 12;
    c.data_seed = 3;
    c.ablation = AblationFlags::from_name(ablation);
    return c;
}

struct Fixture {
    Dataset source = make_dataset(6, 1, DomainConfig::source(), 16, 16);
    Dataset target = make_dataset(6, 2, DomainConfig::target(), 16, 16);
    SegNet<float> a = SegNet<float>::init(21, kNumClasses);
    SegNet<float> b = SegNet<float>::init(22, kNumClasses);
    OfflineLabels ensemble, only_a, only_b;

    Fixture() {
        const auto images = target.images();
        ensemble = offline_cbst(a, b, images, 0.5);
        only_a = offline_cbst(a, images, 0.5);
        only_b = offline_cbst(b, images, 0.5);
    }

    MfaTrainer trainer(const TrainConfig& c) const {
        const bool cmf = c.ablation.cmf;
        return MfaTrainer(a, b, target.images(), cmf ? ensemble.labels : only_a.labels,
                          cmf ? ensemble.labels : only_b.labels, c);
    }
};

} // namespace

TEST_SUITE("trainer") {

TEST_CASE("ablation names round-trip") {
    for (const auto* name : {"st", "tf", "tf_cmf", "tf_oof", "mfa"})
        CHECK(AblationFlags::from_name(name).name() == name);
    const auto st = AblationFlags::from_name("st");
    CHECK_FALSE(st.tf);
    CHECK_FALSE(st.cmf);
    CHECK_FALSE(st.oof);
    const auto mfa = AblationFlags::from_name("mfa");
    CHECK((mfa.tf && mfa.cmf && mfa.oof));
    CHECK_THROWS_AS(AblationFlags::from_name("cmf"), ConfigError);
}

TEST_CASE("default hyper-parameters") {
    const TrainConfig c;
    CHECK(c.base_lr == 2e-4);
    CHECK(c.momentum == 0.9);
    CHECK(c.poly_power == 0.9);
    CHECK(c.alpha == 0.99);
    CHECK(c.rho_min == 0.2);
    CHECK(c.rho_max == 0.7);
    CHECK(c.lambda_cst == 1.0);
    CHECK(c.lambda_cross == 0.5);
    CHECK(c.phi_off == 0.5);
    CHECK(c.mfa_epochs == 65);
    CHECK(c.warmup_epochs == 30);
    CHECK(c.batch_size == 8);
    CHECK_NOTHROW(c.validate());
}

TEST_CASE("config validation") {
    auto c = tiny_config();
    c.seed_b = c.seed_a;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.alpha = 1.2;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.rho_min = 0.8;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.batch_size = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("warm-up is reproducible and seeds diverge") {
    const auto source = make_dataset(4, 5, DomainConfig::source(), 16, 16);
    const auto c = tiny_config();
    std::vector<WarmupEpoch> epochs;
    const auto a1 = warmup_train(source, 1, c, [&](const WarmupEpoch& e) { epochs.push_back(e); });
    const auto a2 = warmup_train(source, 1, c);
    const auto b = warmup_train(source, 2, c);
    CHECK(a1.params() == a2.params());
    REQUIRE(epochs.size() == 2);
    CHECK(epochs[0].epoch == 0);
    const long per_epoch = (4 + c.batch_size - 1) / c.batch_size;
    CHECK(epochs[0].lr == poly_lr(per_epoch - 1, 2 * per_epoch, c.warmup_lr, c.poly_power));
    CHECK(std::isfinite(epochs[1].mean_loss));
    CHECK_NOTHROW(check_divergence(a1, b));
    CHECK_THROWS_AS(check_divergence(a1, a2), CheckFailure);
}

TEST_CASE("evaluation is deterministic") {
    const Fixture f;
    const auto r1 = evaluate(f.a, f.target), r2 = evaluate(f.a, f.target);
    CHECK(r1.confusion == r2.confusion);
    CHECK(r1.report.miou == r2.report.miou);
    CHECK(r1.confusion.counted() == 6 * 16 * 16);
}

TEST_CASE("roles") {
    for (auto role : kAllRoles) CHECK(parse_role(role_name(role)) == role);
    CHECK_THROWS_AS(parse_role("meanC"), ConfigError);
}

TEST_CASE("ST is full MFA with zero weights and single-model labels") {
    const Fixture f;
    auto mfa = tiny_config("tf_oof");
    mfa.lambda_cst = 0.0;
    mfa.lambda_cross = 0.0;
    const auto st_trainer = f.trainer(tiny_config("st"));
    const auto mfa_trainer = f.trainer(mfa);
    const std::vector<std::size_t> batch{4, 1};
    const auto st = st_trainer.compute_step(batch), full = mfa_trainer.compute_step(batch);
    CHECK(st.record.losses.total == full.record.losses.total);
    CHECK(st.record.losses.total == st.record.losses.self_a + st.record.losses.self_b);
    CHECK(st.grad_a == full.grad_a);
    CHECK(st.grad_b == full.grad_b);
    CHECK(st.record.losses.cross_a == 0.0);
    CHECK(st.record.losses.cst_a == 0.0);
    CHECK(st.record.losses.cross_b_pixels == 0);
}

TEST_CASE("OOF adds cross terms when online masks are non-empty") {
    const Fixture f;
    const auto out = f.trainer(tiny_config("mfa")).compute_step({0, 1});
    long kept = 0;
    for (const auto& m : out.online.b.masks) kept += m.cast<long>().sum();
    REQUIRE(kept > 0);
    CHECK(out.record.losses.cross_a > 0.0);
    CHECK(out.record.losses.cross_a_pixels == kept);
    const auto& l = out.record.losses;
    CHECK(l.total == doctest::Approx(l.self_a + l.self_b + (l.cst_a + l.cst_b) + 0.5 * (l.cross_a + l.cross_b))
                         .epsilon(1e-6));
}

TEST_CASE("fresh mean nets give zero consistency") {
    const Fixture f;
    const auto out = f.trainer(tiny_config("tf")).compute_step({2, 3});
    CHECK(out.record.losses.cst_a == 0.0);
    CHECK(out.record.losses.cst_b == 0.0);
}

TEST_CASE("compute_step is pure") {
    const Fixture f;
    const auto t = f.trainer(tiny_config());
    const auto before = t.state().net_a.params();
    const auto x = t.compute_step({0, 5}), y = t.compute_step({0, 5});
    CHECK(x.record.losses.total == y.record.losses.total);
    CHECK(x.grad_a == y.grad_a);
    CHECK(t.state().net_a.params() == before);
    CHECK(t.state().step == 0);
}

TEST_CASE("mean nets change only through the temporal average") {
    const Fixture f;
    auto t = f.trainer(tiny_config());
    const auto a = static_cast<float>(0.99), b = static_cast<float>(1.0 - 0.99);
    for (int i = 0; i < 4; ++i) {
        const auto mean_before = t.state().mean_a.params();
        t.step({static_cast<std::size_t>(i), static_cast<std::size_t>(i + 1)});
        const VectorX<float> expected =
            a * mean_before.values() + b * t.state().net_a.params().values();
        CHECK(t.state().mean_a.params().values() == expected);
        CHECK(t.state().mean_a.steps_applied == i + 1);
    }
}

TEST_CASE("schedules over a full run") {
    const Fixture f;
    auto t = f.trainer(tiny_config());
    std::vector<StepRecord> records;
    t.on_step = [&](const StepRecord& r) { records.push_back(r); };
    int epochs = 0;
    t.on_epoch = [&](int, const RunState&) { ++epochs; };
    const auto& state = t.run();
    REQUIRE(records.size() == 6);
    CHECK(epochs == 2);
    CHECK(state.step == 6);
    CHECK(records.front().phi == 0.2);
    CHECK(records.back().phi == doctest::Approx(0.7).epsilon(1e-15));
    for (const auto& r : records) CHECK(r.lr == doctest::Approx(poly_lr(r.step, 6, 0.01, 0.9)).epsilon(1e-6));
    CHECK(state.opt_a.current_lr() == 0.0);
}

TEST_CASE("epoch order is a deterministic permutation") {
    const Fixture f;
    const auto t = f.trainer(tiny_config());
    auto order = t.epoch_order(3);
    CHECK(order == t.epoch_order(3));
    std::sort(order.begin(), order.end());
    std::vector<std::size_t> all(6);
    std::iota(all.begin(), all.end(), 0);
    CHECK(order == all);
    CHECK(t.steps_per_epoch() == 3);
}

TEST_CASE("missing offline labels are reported") {
    const Fixture f;
    auto partial = f.ensemble.labels;
    partial.labels.pop_back();
    partial.masks.pop_back();
    const MfaTrainer t(f.a, f.b, f.target.images(), partial, partial, tiny_config());
    CHECK_NOTHROW(t.compute_step({0, 1}));
    CHECK_THROWS_AS(t.compute_step({0, 5}), MissingInputError);
}

TEST_CASE("training runs are reproducible") {
    const Fixture f;
    auto t1 = f.trainer(tiny_config()), t2 = f.trainer(tiny_config());
    t1.run();
    t2.run();
    for (auto role : kAllRoles) CHECK(t1.state().net(role).params() == t2.state().net(role).params());
}

}
