// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--only 1,3,8] [--work-dir DIR] [--config FILE]
//
// Criteria 6 and 9 share one three-seed pipeline run driven by --config.

#include "mfa/ema.hpp"
#include "mfa/metrics.hpp"
#include "mfa/offline_cbst.hpp"
#include "mfa/pipeline.hpp"
#include "mfa/pseudo_label.hpp"
#include "oracles.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace mfa;
namespace fs = std::filesystem;

namespace {

struct Verdict {
    bool pass = false;
    std::string detail;
};

class Clock {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* format, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, format, args...);
    return buf;
}

DenseArray<double> random_probs(Index n, Index h, Index w, Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> z(0, 3);
    DenseArray<double> logits({n, h, w, c});
    for (Index i = 0; i < logits.size(); ++i) logits.values()[i] = z(rng);
    return softmax(logits);
}

std::vector<std::uint8_t> flatten(const PseudoLabels& sel) {
    std::vector<std::uint8_t> out;
    for (const auto& l : sel.labels) out.insert(out.end(), l.data(), l.data() + l.size());
    return out;
}

Verdict online_matches_sorter() {
    Clock clock;
    std::mt19937_64 rng(101);
    const oracle::Fraction phis[] = {{20, 100}, {45, 100}, {70, 100}};
    int matched = 0, total = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const auto phi = phis[trial % 3];
        const auto a = random_probs(2, 8, 8, 6, rng), b = random_probs(2, 8, 8, 6, rng);
        const auto sel = online_cbst(a, b, phi.value());
        ++total;
        if (flatten(sel.a) == oracle::select_top(a, phi) && flatten(sel.b) == oracle::select_top(b, phi)) ++matched;
    }
    const double t = clock.seconds();
    return {matched == total && t < 60.0, fmt("%d/%d batches identical to the brute-force sorter in %.2f s", matched, total, t)};
}

Verdict class_balance_counts() {
    std::mt19937_64 rng(202);
    std::uniform_int_distribution<long> hundredths(1, 100);
    std::uniform_int_distribution<Index> side(2, 12), batch(1, 3);
    int violations = 0, trials = 0, skipped = 0;
    while (trials < 1000) {
        const oracle::Fraction phi{hundredths(rng), 100};
        const auto probs = random_probs(batch(rng), side(rng), side(rng), 6, rng);
        if (!oracle::tie_free(probs)) {
            ++skipped;
            continue;
        }
        ++trials;
        const auto argmax = argmax_onehot(probs);
        const auto sel = select_class_balanced(probs, phi.value());
        const auto stats = selection_stats(argmax.labels, sel, 6);
        for (int c = 0; c < 6; ++c) {
            const long n = stats.predicted[static_cast<std::size_t>(c)];
            const long expected = n == 0 ? 0 : oracle::top_count(phi, n);
            if (stats.selected[static_cast<std::size_t>(c)] != expected) {
                ++violations;
                break;
            }
        }
    }
    return {violations == 0, fmt("%d violations over %d tie-free trials (%d tied inputs redrawn)", violations, trials, skipped)};
}

Verdict gradients_match() {
    Clock clock;
    const auto outcome = run_gradcheck();
    const double t = clock.seconds();
    std::string detail;
    for (const auto& l : outcome.losses)
        detail += fmt("%s %.2e, ", l.loss.c_str(), l.report.max_relative_error);
    detail += fmt("tolerance %.0e, %.1f s", outcome.tolerance, t);
    return {outcome.passed() && outcome.tolerance <= 1e-5 && t < 60.0, detail};
}

Verdict ema_closed_form() {
    const auto start = SegNet<double>::init(7, kNumClasses);
    const auto target = SegNet<double>::init(8, kNumClasses);
    auto mean = ema_init(start, 0.99);
    double worst = 0;
    for (int k = 1; k <= 50; ++k) {
        ema_update(mean, target.params());
        const VectorX<double> expected =
            target.params().values() + std::pow(0.99, k) * (start.params().values() - target.params().values());
        worst = std::max(worst, (mean.params().values() - expected).cwiseAbs().maxCoeff());
    }
    return {worst <= 1e-6 && mean.steps_applied == 50, fmt("max deviation %.2e after 50 updates", worst)};
}

Verdict schedules() {
    TrainConfig config;
    config.mfa_epochs = 5;
    config.batch_size = 2;
    const auto target = make_dataset(8, 303, DomainConfig::target(), 16, 16).images();
    const auto a = SegNet<float>::init(1, kNumClasses), b = SegNet<float>::init(2, kNumClasses);
    const auto offline = offline_cbst(a, b, target, config.phi_off);
    MfaTrainer trainer(a, b, target, offline.labels, offline.labels, config);
    std::vector<StepRecord> records;
    trainer.on_step = [&](const StepRecord& r) { records.push_back(r); };
    const auto& state = trainer.run();
    const long total = state.total_steps;

    bool ok = total == 20 && static_cast<long>(records.size()) == total;
    ok = ok && records.front().phi == 0.2 && std::abs(records.back().phi - 0.7) <= 1e-12;
    ok = ok && records.front().lr == 2e-4 && state.opt_a.current_lr() == 0.0;
    double lr_err = 0, phi_err = 0;
    for (long s = 0; s < total; s += 2) {
        const double t = static_cast<double>(s) / static_cast<double>(total);
        lr_err = std::max(lr_err, std::abs(records[static_cast<std::size_t>(s)].lr - 2e-4 * std::pow(1.0 - t, 0.9)));
        const double u = static_cast<double>(s) / static_cast<double>(total - 1);
        phi_err = std::max(phi_err, std::abs(records[static_cast<std::size_t>(s)].phi - (0.2 + 0.5 * u)));
    }
    ok = ok && lr_err <= 1e-9 && phi_err <= 1e-9;
    return {ok, fmt("phi %.3f -> %.3f, lr %.1e -> %.1e, poly error %.1e and phi error %.1e at 10 steps",
                    records.front().phi, records.back().phi, records.front().lr, state.opt_a.current_lr(), lr_err,
                    phi_err)};
}

Verdict metric_cases() {
    auto map = [](std::vector<int> v) {
        LabelMap m(1, static_cast<Index>(v.size()));
        for (Index i = 0; i < m.size(); ++i) m(i) = static_cast<std::uint8_t>(v[static_cast<std::size_t>(i)]);
        return m;
    };
    ConfusionMatrix hand(2);
    hand.accumulate(map({0, 0, 1, 1}), map({0, 1, 1, 1}));
    const double hand_miou = iou(hand).miou;
    ConfusionMatrix perfect(kNumClasses);
    perfect.accumulate(map({0, 1, 2, 3, 4, 5, 5}), map({0, 1, 2, 3, 4, 5, 5}));
    const double perfect_miou = iou(perfect).miou;
    return {hand_miou == 7.0 / 12.0 && perfect_miou == 1.0,
            fmt("hand case mIoU %.17g (7/12), perfect case %.17g", hand_miou, perfect_miou)};
}

// ---------------------------------------------------------------------------------------
// Pipeline runs

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

void run_pipeline(const RunConfig& config, const std::vector<std::string>& ablations,
                  const std::function<void(int, const RunState&)>& observe_mfa = {}) {
    cmd_gen(config);
    cmd_warmup(config);
    cmd_pseudo(config);
    for (const auto& name : ablations) {
        const auto flags = AblationFlags::from_name(name);
        cmd_train(config, flags, flags.name() == "mfa" ? observe_mfa : nullptr);
    }
}

Verdict reproducible(const fs::path& work) {
    const char* text = R"(
data_seed = 11
seed_a = 3
seed_b = 4
n_source = 8
n_target = 8
n_val = 4
height = 16
width = 16
warmup_epochs = 2
mfa_epochs = 2
batch_size = 4
base_lr = 0.003
)";
    std::vector<fs::path> roots{work / "repro_1", work / "repro_2"};
    for (const auto& root : roots) {
        fs::remove_all(root);
        std::istringstream in(text + std::string("out_dir = ") + root.string() + "\n");
        const auto config = RunConfig::parse(in);
        run_pipeline(config, {"mfa"});
        cmd_eval(config, {"mfa", NetRole::MeanA, "target_val"});
    }
    std::set<fs::path> files;
    for (const auto& root : roots)
        for (const auto& e : fs::recursive_directory_iterator(root)) {
            const auto ext = e.path().extension();
            if (e.is_regular_file() && (ext == ".bin" || ext == ".csv")) files.insert(fs::relative(e.path(), root));
        }
    int differing = 0, checkpoints = 0, csvs = 0;
    for (const auto& rel : files) {
        const bool exists = fs::exists(roots[0] / rel) && fs::exists(roots[1] / rel);
        if (!exists || read_bytes(roots[0] / rel) != read_bytes(roots[1] / rel)) ++differing;
        (rel.extension() == ".bin" ? checkpoints : csvs)++;
    }
    return {differing == 0 && checkpoints >= 6 && csvs >= 4,
            fmt("%d checkpoints and %d CSVs compared, %d differ", checkpoints, csvs, differing)};
}

struct SeedResult {
    double source = 0, warmup = 0, seconds = 0;
    std::map<std::string, double> trained;  // ablation -> meanA target_val mIoU
    double online_recall = 0, offline_recall = 0;
};

// Recall of `cls`: ground-truth pixels of the class that a selection keeps with that label.
struct RecallCount {
    long hit = 0, total = 0;

    void add(const LabelMap& gt, const LabelMap& kept, int cls) {
        for (Index p = 0; p < gt.size(); ++p) {
            if (gt(p) != cls) continue;
            ++total;
            hit += kept(p) == cls;
        }
    }
    double value() const { return total ? static_cast<double>(hit) / static_cast<double>(total) : 0.0; }
};

constexpr int kRareClass = 5;

const std::vector<std::string> kAblations{"st", "tf", "tf_cmf", "tf_oof", "mfa"};

SeedResult run_seed(RunConfig config) {
    Clock clock;
    SeedResult out;
    const RunPaths paths{config.out_dir};
    cmd_gen(config);
    cmd_warmup(config);
    cmd_pseudo(config);

    const auto target = import_dataset(paths.data("target"));
    const auto images = target.images();
    const auto offline = load_offline_labels(paths.pseudo("ensemble"));
    RecallCount offline_count;
    for (std::size_t i = 0; i < target.size(); ++i)
        offline_count.add(target.items[i].labels, offline.labels.labels[i], kRareClass);
    out.offline_recall = offline_count.value();

    const int mid = config.train.mfa_epochs / 2 - 1;
    RecallCount online_count;
    auto observe = [&](int epoch, const RunState& state) {
        if (epoch != std::max(mid, 0)) return;
        const auto batch = static_cast<std::size_t>(config.train.batch_size);
        for (std::size_t first = 0; first < images.size(); first += batch) {
            ImageSet chunk;
            for (std::size_t i = first; i < std::min(first + batch, images.size()); ++i)
                chunk.images.push_back(images.images[i]);
            const auto sel = online_cbst(predict_probs(state.mean_a.net, chunk), predict_probs(state.mean_b.net, chunk),
                                         state.phi);
            for (std::size_t k = 0; k < chunk.size(); ++k) {
                online_count.add(target.items[first + k].labels, sel.a.labels[k], kRareClass);
                online_count.add(target.items[first + k].labels, sel.b.labels[k], kRareClass);
            }
        }
    };
    for (const auto& name : kAblations) {
        const auto flags = AblationFlags::from_name(name);
        cmd_train(config, flags, name == "mfa" ? std::function<void(int, const RunState&)>(observe) : nullptr);
    }
    out.online_recall = online_count.value();

    out.source = cmd_eval(config, {"warmup", NetRole::A, "source_val"}).report.miou;
    out.warmup = cmd_eval(config, {"warmup", NetRole::A, "target_val"}).report.miou;
    for (const auto& name : kAblations) out.trained[name] = cmd_eval(config, {name, NetRole::MeanA, "target_val"}).report.miou;
    out.seconds = clock.seconds();
    return out;
}

struct TrendResults {
    std::vector<SeedResult> seeds;
    double seconds = 0;
};

TrendResults run_trend(const fs::path& config_path, const fs::path& work) {
    const auto base = RunConfig::load(config_path);
    TrendResults results;
    Clock clock;
    for (std::uint64_t k = 0; k < 3; ++k) {
        auto config = base;
        config.out_dir = work / ("seed_" + std::to_string(k));
        config.train.data_seed += k;
        config.train.seed_a += k;
        config.train.seed_b += k;
        fs::remove_all(config.out_dir);
        const auto r = run_seed(config);
        std::printf("  seed %llu: source %.4f warm-up %.4f", static_cast<unsigned long long>(k), r.source, r.warmup);
        for (const auto& name : kAblations) std::printf(" %s %.4f", name.c_str(), r.trained.at(name));
        std::printf(" | dot recall online %.4f offline %.4f | %.0f s\n", r.online_recall, r.offline_recall, r.seconds);
        std::fflush(stdout);
        results.seeds.push_back(r);
    }
    results.seconds = clock.seconds();
    return results;
}

double average(const TrendResults& r, const std::function<double(const SeedResult&)>& get) {
    double sum = 0;
    for (const auto& s : r.seeds) sum += get(s);
    return sum / static_cast<double>(r.seeds.size());
}

Verdict ablation_trend(const TrendResults& r) {
    const double source = average(r, [](const SeedResult& s) { return s.source; });
    const double warmup = average(r, [](const SeedResult& s) { return s.warmup; });
    std::map<std::string, double> mean;
    for (const auto& name : kAblations)
        mean[name] = average(r, [&](const SeedResult& s) { return s.trained.at(name); });
    const double st = mean["st"], mfa = mean["mfa"];
    const bool gap = source - warmup >= 0.10;
    const bool st_gain = st > warmup;
    const bool mfa_gain = mfa >= st + 0.02 && mfa >= warmup + 0.05;
    double worst_drop = -1;
    for (const char* fusion : {"tf", "tf_cmf", "tf_oof"}) worst_drop = std::max(worst_drop, st - mean[fusion]);
    const bool no_drop = worst_drop <= 0.01;
    const bool fast = r.seconds < 1800;
    return {gap && st_gain && mfa_gain && no_drop && fast,
            fmt("(a) gap %.1f pts %s; (b) ST - warm-up %+.1f pts %s; (c) MFA - ST %+.1f, MFA - warm-up %+.1f pts %s; "
                "(d) worst fusion drop vs ST %.1f pts %s; TF %.4f TF&CMF %.4f TF&OOF %.4f; %.0f s %s",
                100 * (source - warmup), gap ? "ok" : "FAIL", 100 * (st - warmup), st_gain ? "ok" : "FAIL",
                100 * (mfa - st), 100 * (mfa - warmup), mfa_gain ? "ok" : "FAIL", 100 * worst_drop,
                no_drop ? "ok" : "FAIL", mean["tf"], mean["tf_cmf"], mean["tf_oof"], r.seconds,
                fast ? "ok" : "FAIL")};
}

Verdict rare_class_recall(const TrendResults& r) {
    const double online = average(r, [](const SeedResult& s) { return s.online_recall; });
    const double offline = average(r, [](const SeedResult& s) { return s.offline_recall; });
    return {online > offline, fmt("class %d recall online %.4f vs offline %.4f, ratio %.3f (3-seed average)",
                                  kRareClass, online, offline, offline > 0 ? online / offline : 0.0)};
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::vector<int> only;
    fs::path work = "acceptance_work";
    fs::path config = MFA_ACCEPTANCE_CONFIG;
    app.add_option("--only", only, "Criteria to run (default: all)")->delimiter(',');
    app.add_option("--work-dir", work, "Scratch directory for pipeline runs")->capture_default_str();
    app.add_option("--config", config, "Run configuration for the three-seed ablation run")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };
    int failures = 0;
    auto report = [&](int id, const char* name, const std::function<Verdict()>& check) {
        if (!wanted(id)) return;
        Verdict v;
        try {
            v = check();
        } catch (const std::exception& e) {
            v = {false, std::string("exception: ") + e.what()};
        }
        failures += !v.pass;
        std::printf("criterion %d %s: %s: %s\n", id, v.pass ? "PASS" : "FAIL", name, v.detail.c_str());
        std::fflush(stdout);
    };

    fs::create_directories(work);
    report(1, "online selection equals brute-force sorting", online_matches_sorter);
    report(2, "class-balanced counts", class_balance_counts);
    report(3, "gradient check through the net", gradients_match);
    report(4, "temporal average closed form", ema_closed_form);
    report(5, "selection and learning-rate schedules", schedules);

    if (wanted(6) || wanted(9)) {
        std::printf("three-seed pipeline run with %s\n", config.string().c_str());
        std::fflush(stdout);
        std::optional<TrendResults> trend;
        std::string error;
        try {
            trend = run_trend(config, work / "trend");
        } catch (const std::exception& e) {
            error = e.what();
        }
        auto from_trend = [&](const std::function<Verdict(const TrendResults&)>& f) {
            return [&, f]() -> Verdict {
                if (!trend) return {false, "pipeline failed: " + error};
                return f(*trend);
            };
        };
        report(6, "ablation trend over three seeds", from_trend(ablation_trend));
        report(7, "byte-identical reruns", [&] { return reproducible(work); });
        report(8, "metric hand cases", metric_cases);
        report(9, "rare-class recall online vs offline", from_trend(rare_class_recall));
    } else {
        report(7, "byte-identical reruns", [&] { return reproducible(work); });
        report(8, "metric hand cases", metric_cases);
    }

    std::printf("%s: %d failing criteria\n", failures ? "FAILED" : "PASSED", failures);
    return failures ? 1 : 0;
}
