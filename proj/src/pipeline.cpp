#include "mfa/pipeline.hpp"
#include "mfa/checkpoint.hpp"
#include "mfa/errors.hpp"
#include "mfa/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <istream>
#include <set>
#include <sstream>

namespace mfa {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc{} || ptr != end)
        throw ConfigError("config key '" + key + "': cannot parse '" + value + "'");
    return out;
}

// Keys in the order they are snapshotted; the flag marks required ones.
const std::vector<std::pair<std::string, bool>>& config_keys() {
    static const std::vector<std::pair<std::string, bool>> keys{
        {"out_dir", true},        {"data_seed", true},    {"seed_a", true},        {"seed_b", true},
        {"n_source", true},       {"n_target", true},     {"n_val", true},         {"warmup_epochs", true},
        {"mfa_epochs", true},     {"batch_size", true},   {"height", false},       {"width", false},
        {"base_lr", false},       {"momentum", false},    {"poly_power", false},   {"alpha", false},
        {"rho_min", false},       {"rho_max", false},     {"lambda_cst", false},   {"lambda_cross", false},
        {"phi_off", false},       {"warmup_lr", false},   {"eval_every", false},
    };
    return keys;
}

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::ofstream open_output(const fs::path& path) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

Dataset load_split(const RunPaths& paths, const std::string& split) { return import_dataset(paths.data(split)); }

Checkpoint load_warmup(const RunPaths& paths, const std::string& which) {
    return load_checkpoint(paths.warmup() / which);
}

std::vector<std::string> iou_cells(const IoUReport& report) {
    std::ostringstream row;
    write_iou_csv_row(row, report);
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(row.str());
    while (std::getline(in, cell, ',')) cells.push_back(trim(cell));
    return cells;
}

} // namespace

const std::vector<std::string>& required_config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [key, required] : config_keys())
            if (required) out.push_back(key);
        return out;
    }();
    return keys;
}

RunConfig RunConfig::parse(std::istream& in, const fs::path& base_dir) {
    std::map<std::string, std::string> values;
    std::set<std::string> known;
    for (const auto& [key, required] : config_keys()) known.insert(key);

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        if (!known.count(key)) throw ConfigError("unknown config key '" + key + "'");
        if (value.empty()) throw ConfigError("config key '" + key + "' has no value");
        if (!values.emplace(key, value).second) throw ConfigError("config key '" + key + "' given twice");
    }
    for (const auto& key : required_config_keys())
        if (!values.count(key)) throw ConfigError("missing required config key '" + key + "'");

    RunConfig c;
    auto& t = c.train;
    auto get = [&](const std::string& key, auto& field) {
        auto it = values.find(key);
        if (it == values.end()) return;
        field = parse_number<std::remove_reference_t<decltype(field)>>(key, it->second);
    };
    c.out_dir = values.at("out_dir");
    if (c.out_dir.is_relative() && !base_dir.empty()) c.out_dir = base_dir / c.out_dir;
    get("data_seed", t.data_seed);
    get("seed_a", t.seed_a);
    get("seed_b", t.seed_b);
    get("n_source", c.n_source);
    get("n_target", c.n_target);
    get("n_val", c.n_val);
    get("warmup_epochs", t.warmup_epochs);
    get("mfa_epochs", t.mfa_epochs);
    get("batch_size", t.batch_size);
    get("height", c.height);
    get("width", c.width);
    get("base_lr", t.base_lr);
    get("momentum", t.momentum);
    get("poly_power", t.poly_power);
    get("alpha", t.alpha);
    get("rho_min", t.rho_min);
    get("rho_max", t.rho_max);
    get("lambda_cst", t.lambda_cst);
    get("lambda_cross", t.lambda_cross);
    get("phi_off", t.phi_off);
    get("warmup_lr", t.warmup_lr);
    get("eval_every", c.eval_every);

    if (c.n_source == 0 || c.n_target == 0 || c.n_val == 0)
        throw ConfigError("n_source, n_target and n_val must be positive");
    if (c.height < 16 || c.width < 16 || c.height > 1024 || c.width > 1024)
        throw ConfigError("height and width must lie in [16, 1024]");
    if (c.eval_every < 1) throw ConfigError("eval_every must be at least 1");
    t.validate();
    return c;
}

RunConfig RunConfig::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingInputError("config file not found: " + path.string());
    return parse(in, path.parent_path());
}

std::map<std::string, std::string> RunConfig::snapshot() const {
    const auto& t = train;
    return {
        {"out_dir", out_dir.string()},
        {"data_seed", std::to_string(t.data_seed)},
        {"seed_a", std::to_string(t.seed_a)},
        {"seed_b", std::to_string(t.seed_b)},
        {"n_source", std::to_string(n_source)},
        {"n_target", std::to_string(n_target)},
        {"n_val", std::to_string(n_val)},
        {"warmup_epochs", std::to_string(t.warmup_epochs)},
        {"mfa_epochs", std::to_string(t.mfa_epochs)},
        {"batch_size", std::to_string(t.batch_size)},
        {"height", std::to_string(height)},
        {"width", std::to_string(width)},
        {"base_lr", format_double(t.base_lr)},
        {"momentum", format_double(t.momentum)},
        {"poly_power", format_double(t.poly_power)},
        {"alpha", format_double(t.alpha)},
        {"rho_min", format_double(t.rho_min)},
        {"rho_max", format_double(t.rho_max)},
        {"lambda_cst", format_double(t.lambda_cst)},
        {"lambda_cross", format_double(t.lambda_cross)},
        {"phi_off", format_double(t.phi_off)},
        {"warmup_lr", format_double(t.warmup_lr)},
        {"eval_every", std::to_string(eval_every)},
    };
}

Dataset generate_split(const RunConfig& config, const std::string& split) {
    std::size_t n = config.n_val;
    if (split == "source") n = config.n_source;
    else if (split == "target") n = config.n_target;
    else if (split != "source_val" && split != "target_val") throw ConfigError("unknown dataset split '" + split + "'");
    const bool is_source = split.rfind("source", 0) == 0;
    return make_dataset(n, substream_seed(config.train.data_seed, "data." + split),
                        is_source ? DomainConfig::source() : DomainConfig::target(), config.height, config.width);
}

CommandResult cmd_gen(const RunConfig& config) {
    const RunPaths paths{config.out_dir};
    CommandResult result;
    Stopwatch total;
    nlohmann::ordered_json manifest;
    manifest["data_seed"] = config.train.data_seed;
    auto& splits = manifest["splits"] = nlohmann::ordered_json::array();
    for (const auto& split : dataset_splits()) {
        const auto dataset = generate_split(config, split);
        const auto dir = paths.data(split);
        fs::remove_all(dir);
        export_dataset(dataset, dir);
        splits.push_back({{"split", split},
                          {"domain", dataset.domain.name},
                          {"count", dataset.size()},
                          {"seed", dataset.seed},
                          {"path", split}});
        result.artifacts.push_back(dir);
        result.log.push_back(split + ": " + std::to_string(dataset.size()) + " " + dataset.domain.name + " images");
    }
    auto out = open_output(paths.root / "data" / "manifest.json");
    out << manifest.dump(2) << '\n';
    result.artifacts.push_back(paths.root / "data" / "manifest.json");
    result.timings["total"] = total.seconds();
    return result;
}

CommandResult cmd_warmup(const RunConfig& config) {
    const RunPaths paths{config.out_dir};
    CommandResult result;
    Stopwatch total;
    const auto source = load_split(paths, "source");
    const auto source_val = load_split(paths, "source_val");
    const auto target_val = load_split(paths, "target_val");

    auto csv = open_output(paths.warmup() / "metrics.csv");
    csv << "net,epoch,lr,loss,pixel_accuracy\n";
    std::map<std::string, SegNet<float>> nets;
    for (const auto& [name, seed] : {std::pair{"A", config.train.seed_a}, std::pair{"B", config.train.seed_b}}) {
        Stopwatch watch;
        nets[name] = warmup_train(source, seed, config.train, [&, n = std::string(name)](const WarmupEpoch& e) {
            csv << n << ',' << e.epoch << ',' << format_double(e.lr) << ',' << format_double(e.mean_loss) << ','
                << format_double(e.pixel_accuracy) << '\n';
        });
        result.timings[std::string("train_") + name] = watch.seconds();
    }
    csv.close();
    check_divergence(nets.at("A"), nets.at("B"));

    auto eval_csv = open_output(paths.warmup() / "eval.csv");
    write_iou_csv_header(eval_csv, {class_names().begin(), class_names().end()}, {"net", "split"});
    for (const auto& [name, net] : nets) {
        save_checkpoint(paths.warmup() / name, net, "net");
        result.artifacts.push_back(paths.warmup() / (name + ".bin"));
        result.artifacts.push_back(paths.warmup() / (name + ".json"));
        for (const auto* split : {"source_val", "target_val"}) {
            const auto report = evaluate(net, std::string(split) == "source_val" ? source_val : target_val).report;
            write_iou_csv_row(eval_csv, report, {name, split});
            result.log.push_back("warm-up " + name + " " + split + " mIoU " + format_double(report.miou));
        }
    }
    result.artifacts.push_back(paths.warmup() / "metrics.csv");
    result.artifacts.push_back(paths.warmup() / "eval.csv");
    result.timings["total"] = total.seconds();
    return result;
}

CommandResult cmd_pseudo(const RunConfig& config) {
    const RunPaths paths{config.out_dir};
    CommandResult result;
    Stopwatch total;
    const auto a = load_warmup(paths, "A");
    const auto b = load_warmup(paths, "B");
    const auto target = import_images(paths.data("target"));
    const std::string stem_a = (paths.warmup() / "A").string(), stem_b = (paths.warmup() / "B").string();

    auto emit = [&](const std::string& which, OfflineLabels labels, std::vector<std::string> sources) {
        labels.sources = std::move(sources);
        save_offline_labels(paths.pseudo(which), labels);
        result.artifacts.push_back(paths.pseudo(which));
        double kept = 0, predicted = 0;
        for (std::size_t c = 0; c < labels.stats.predicted.size(); ++c) {
            kept += static_cast<double>(labels.stats.selected[c]);
            predicted += static_cast<double>(labels.stats.predicted[c]);
        }
        result.log.push_back("pseudo " + which + ": kept " + format_double(kept / predicted) + " of pixels");
    };
    emit("ensemble", offline_cbst(a.net, b.net, target, config.train.phi_off), {stem_a, stem_b});
    emit("A", offline_cbst(a.net, target, config.train.phi_off), {stem_a});
    emit("B", offline_cbst(b.net, target, config.train.phi_off), {stem_b});
    result.timings["total"] = total.seconds();
    return result;
}

CommandResult cmd_train(const RunConfig& config, const AblationFlags& ablation,
                        const std::function<void(int epoch, const RunState&)>& observe) {
    const RunPaths paths{config.out_dir};
    CommandResult result;
    Stopwatch total;
    auto train_config = config.train;
    train_config.ablation = ablation;
    train_config.validate();

    const auto a = load_warmup(paths, "A");
    const auto b = load_warmup(paths, "B");
    auto offline_a = load_offline_labels(paths.pseudo(ablation.cmf ? "ensemble" : "A"));
    auto offline_b = load_offline_labels(paths.pseudo(ablation.cmf ? "ensemble" : "B"));
    const auto target = import_images(paths.data("target"));
    const auto target_val = load_split(paths, "target_val");

    const auto dir = paths.train(ablation);
    auto steps = open_output(dir / "steps.csv");
    steps << "step,lr,phi,self_a,self_b,cross_a,cross_b,cst_a,cst_b,total,"
             "self_a_pixels,self_b_pixels,cross_a_pixels,cross_b_pixels\n";
    auto epochs = open_output(dir / "epochs.csv");
    write_iou_csv_header(epochs, {class_names().begin(), class_names().end()}, {"epoch", "net"});

    MfaTrainer trainer(a.net, b.net, target, std::move(offline_a.labels), std::move(offline_b.labels), train_config);
    trainer.on_step = [&](const StepRecord& r) {
        const auto& l = r.losses;
        steps << r.step << ',' << format_double(r.lr) << ',' << format_double(r.phi);
        for (double v : {l.self_a, l.self_b, l.cross_a, l.cross_b, l.cst_a, l.cst_b, l.total})
            steps << ',' << format_double(v);
        for (long n : {l.self_a_pixels, l.self_b_pixels, l.cross_a_pixels, l.cross_b_pixels}) steps << ',' << n;
        steps << '\n';
    };
    trainer.on_epoch = [&](int epoch, const RunState& state) {
        if (observe) observe(epoch, state);
        const bool last = epoch + 1 == train_config.mfa_epochs;
        if (!last && (epoch + 1) % config.eval_every != 0) return;
        for (auto role : kAllRoles) {
            const auto report = evaluate(state.net(role), target_val).report;
            write_iou_csv_row(epochs, report, {std::to_string(epoch), role_name(role)});
            if (last) result.log.push_back(ablation.name() + " " + role_name(role) + " mIoU " + format_double(report.miou));
        }
    };
    const auto& state = trainer.run();
    steps.close();
    epochs.close();

    for (auto role : kAllRoles) {
        const bool mean = role == NetRole::MeanA || role == NetRole::MeanB;
        save_checkpoint(dir / role_name(role), state.net(role), mean ? "mean" : "net");
        result.artifacts.push_back(dir / (std::string(role_name(role)) + ".bin"));
        result.artifacts.push_back(dir / (std::string(role_name(role)) + ".json"));
    }
    result.artifacts.push_back(dir / "steps.csv");
    result.artifacts.push_back(dir / "epochs.csv");
    result.timings["total"] = total.seconds();
    return result;
}

EvalOutcome cmd_eval(const RunConfig& config, const EvalRequest& request) {
    const RunPaths paths{config.out_dir};
    EvalOutcome outcome;
    Stopwatch total;
    fs::path stem;
    if (request.source == "warmup") {
        if (request.role != NetRole::A && request.role != NetRole::B)
            throw ConfigError("warm-up checkpoints are only A and B");
        stem = paths.warmup() / role_name(request.role);
    } else {
        stem = paths.train(AblationFlags::from_name(request.source)) / role_name(request.role);
    }
    if (std::find(dataset_splits().begin(), dataset_splits().end(), request.split) == dataset_splits().end())
        throw ConfigError("unknown dataset split '" + request.split + "'");

    const auto checkpoint = load_checkpoint(stem);
    const auto dataset = load_split(paths, request.split);
    outcome.report = evaluate(checkpoint.net, dataset).report;

    const auto file = paths.eval() / (request.source + "_" + role_name(request.role) + "_" + request.split + ".csv");
    auto out = open_output(file);
    write_iou_csv_header(out, {class_names().begin(), class_names().end()}, {"source", "net", "split"});
    write_iou_csv_row(out, outcome.report, {request.source, role_name(request.role), request.split});
    outcome.result.artifacts.push_back(file);

    std::string line = request.source + " " + role_name(request.role) + " on " + request.split + ":";
    const auto cells = iou_cells(outcome.report);
    for (std::size_t c = 0; c < class_names().size(); ++c) line += " " + class_names()[c] + "=" + cells[c];
    line += " mIoU=" + cells.back();
    outcome.result.log.push_back(line);
    outcome.result.timings["total"] = total.seconds();
    return outcome;
}

bool GradcheckOutcome::passed() const {
    for (const auto& l : losses)
        if (!(l.report.max_relative_error < tolerance)) return false;
    return !losses.empty();
}

GradcheckOutcome run_gradcheck(const GradcheckOptions& options) {
    using Net = SegNet<double>;
    constexpr int kClasses = kNumClasses;
    const Net student = Net::init(substream_seed(options.seed, "gradcheck.student"), kClasses);
    const Net teacher = Net::init(substream_seed(options.seed, "gradcheck.teacher"), kClasses);

    auto rng = make_rng(options.seed, "gradcheck.input");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    DenseArray<double> x({2, 8, 8, 3});
    for (Index i = 0; i < x.size(); ++i) x.values()[i] = unit(rng);

    // Random labels with roughly a third of the pixels ignored.
    std::vector<LabelMap> labels;
    std::vector<Mask> masks;
    std::uniform_int_distribution<int> cls(0, kClasses - 1);
    for (int n = 0; n < 2; ++n) {
        LabelMap l(8, 8);
        Mask m(8, 8);
        for (Index i = 0; i < l.size(); ++i) {
            const bool keep = unit(rng) < 0.66;
            m(i) = keep ? 1 : 0;
            l(i) = keep ? static_cast<std::uint8_t>(cls(rng)) : kIgnoreLabel;
        }
        labels.push_back(std::move(l));
        masks.push_back(std::move(m));
    }
    const auto teacher_probs = softmax(forward(teacher, x));
    const auto online = select_class_balanced(teacher_probs, 0.5);

    using LossFn = std::function<LossResult<double>(const DenseArray<double>&)>;
    const std::vector<std::pair<std::string, LossFn>> checks{
        {"masked_ce", [&](const DenseArray<double>& z) { return masked_ce<double>(z, labels, masks); }},
        {"cross_loss", [&](const DenseArray<double>& z) { return cross_loss<double>(z, online.labels, online.masks); }},
        {"consistency_loss", [&](const DenseArray<double>& z) { return consistency_loss(softmax(z), teacher_probs); }},
    };

    GradcheckOutcome outcome;
    outcome.tolerance = options.tolerance;
    for (const auto& [name, loss_of_logits] : checks) {
        const auto cache = forward_cached(student, x);
        auto analytic = backward(student, cache, loss_of_logits(cache.logits).grad_logits);
        if (options.corrupt_gradient) options.corrupt_gradient(analytic);
        const std::function<double(const ParamVector<double>&)> loss = [&](const ParamVector<double>& p) {
            return loss_of_logits(forward(Net(p, kClasses), x)).loss;
        };
        outcome.losses.push_back({name, finite_diff_check(loss, analytic, student.params(), options.epsilon,
                                                          student.params().size(), options.seed)});
    }
    return outcome;
}

void write_run_manifest(const RunConfig& config, const std::string& name, const CommandResult& result) {
    const RunPaths paths{config.out_dir};
    nlohmann::ordered_json manifest;
    manifest["tool"] = "mfa";
    manifest["version"] = kToolVersion;
    manifest["command"] = name;
    manifest["seeds"] = {{"data_seed", config.train.data_seed},
                         {"seed_a", config.train.seed_a},
                         {"seed_b", config.train.seed_b}};
    manifest["config"] = config.snapshot();
    auto& artifacts = manifest["artifacts"] = nlohmann::ordered_json::array();
    for (const auto& path : result.artifacts) artifacts.push_back(fs::relative(path, paths.root).generic_string());
    manifest["timings_seconds"] = result.timings;
    manifest["log"] = result.log;

    const auto file = paths.manifests() / (name + ".json");
    const auto tmp = paths.manifests() / (name + ".json.tmp");
    {
        auto out = open_output(tmp);
        out << manifest.dump(2) << '\n';
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
    }
    fs::rename(tmp, file);
}

} // namespace mfa
