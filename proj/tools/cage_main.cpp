// cage: train / predict / eval / synth / ablate for the LF-aggregation model.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"

#include "cage/data.hpp"
#include "cage/metrics.hpp"
#include "cage/training.hpp"

namespace fs = std::filesystem;
using cage::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitDiverged = 2;

int env_threads() {
    if (const char* v = std::getenv("CAGE_THREADS")) {
        int t = std::atoi(v);
        if (t >= 1) return t;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc > 0 ? static_cast<int>(hc) : 1;
}

std::string iso_now() {
    auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[64];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp + " for writing");
        out << content;
        if (!out) throw std::runtime_error("write failed for " + tmp);
    }
    fs::rename(tmp, path);
}

struct ManifestInfo {
    std::string command_line;
    ordered_json config;
    std::uint64_t seed = 0;
    std::string data_path;  // empty when no input dataset
    std::vector<std::string> artifacts;
};

void write_manifest(const std::string& path, const ManifestInfo& info) {
    ordered_json j;
    j["command_line"] = info.command_line;
    j["config"] = info.config;
    j["seed"] = info.seed;
    if (!info.data_path.empty()) {
        j["dataset"] = info.data_path;
        j["dataset_digest"] = cage::file_digest(info.data_path);
    }
    j["artifacts"] = info.artifacts;
    j["timestamp"] = iso_now();
    atomic_write(path, j.dump(2) + "\n");
}

std::string join_args(int argc, char** argv) {
    std::string s;
    for (int i = 0; i < argc; ++i) {
        if (i) s += ' ';
        s += argv[i];
    }
    return s;
}

ordered_json config_json(const cage::TrainConfig& cfg) {
    ordered_json j;
    j["variant"] = cage::to_string(cfg.variant);
    j["guide_mode"] = cage::to_string(cfg.guide_mode);
    j["init_scheme"] = cage::to_string(cfg.init_scheme);
    j["optimizer"] = cage::to_string(cfg.optimizer);
    j["learning_rate"] = cfg.learning_rate;
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["guide_weight"] = cfg.guide_weight;
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    return j;
}

// Shared flag bundle for commands that train models.
struct TrainArgs {
    std::string data_path;
    std::string out_dir;
    std::string variant = "cage";
    std::string guide_mode = "kl_guide";
    std::string init_scheme = "all_ones";
    std::string optimizer = "adam";
    double lr = 0.01;
    int epochs = 100;
    int batch_size = 0;
    double guide_weight = 1.0;
    std::uint64_t seed = 0;
};

cage::TrainConfig to_config(const TrainArgs& a) {
    cage::TrainConfig cfg;
    cfg.variant = cage::variant_from_string(a.variant);
    cfg.guide_mode = cage::guide_mode_from_string(a.guide_mode);
    cfg.init_scheme = cage::init_scheme_from_string(a.init_scheme);
    cfg.optimizer = cage::optimizer_from_string(a.optimizer);
    cfg.learning_rate = a.lr;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch_size;
    cfg.guide_weight = a.guide_weight;
    cfg.seed = a.seed;
    cfg.threads = env_threads();
    cfg.validate();
    return cfg;
}

void add_train_flags(CLI::App* cmd, TrainArgs& a) {
    cmd->add_option("--data", a.data_path, "dataset JSON file")->required();
    cmd->add_option("--model", a.variant, "model variant");
    cmd->add_option("--guide-mode", a.guide_mode, "quality-guide mode");
    cmd->add_option("--init", a.init_scheme, "initialization scheme");
    cmd->add_option("--optimizer", a.optimizer, "sgd or adam");
    cmd->add_option("--lr", a.lr, "learning rate");
    cmd->add_option("--epochs", a.epochs, "training epochs");
    cmd->add_option("--batch-size", a.batch_size, "mini-batch size, 0 for full batch");
    cmd->add_option("--guide-weight", a.guide_weight, "regularizer weight");
    cmd->add_option("--seed", a.seed, "random seed");
}

int cmd_train(const TrainArgs& a, const std::string& cmdline) {
    auto cfg = to_config(a);
    auto ds = cage::load_dataset(a.data_path);
    auto [vp, report] = cage::fit(ds.obs, ds.lfs, cfg);

    fs::create_directories(a.out_dir);
    std::string params_path = (fs::path(a.out_dir) / "params.json").string();
    std::string report_path = (fs::path(a.out_dir) / "report.json").string();
    std::string manifest_path = (fs::path(a.out_dir) / "manifest.json").string();
    atomic_write(params_path, cage::params_to_json(vp, ds.lfs).dump(2) + "\n");
    atomic_write(report_path,
                 cage::report_to_json(report, cfg.variant, cfg.guide_mode).dump(2) + "\n");
    write_manifest(manifest_path, {cmdline, config_json(cfg), cfg.seed, a.data_path,
                                   {params_path, report_path}});
    if (report.diverged) {
        std::cerr << "training diverged; last finite parameters were saved\n";
        return kExitDiverged;
    }
    return kExitOk;
}

void check_model_matches(const cage::VariantParams& vp, const std::vector<cage::LFSpec>& model_lfs,
                         const cage::Dataset& ds) {
    if (static_cast<int>(model_lfs.size()) != ds.obs.num_lfs)
        throw std::invalid_argument("model has " + std::to_string(model_lfs.size()) +
                                    " LFs but dataset has " + std::to_string(ds.obs.num_lfs));
    if (vp.num_classes != ds.obs.num_classes)
        throw std::invalid_argument("model has " + std::to_string(vp.num_classes) +
                                    " classes but dataset has " +
                                    std::to_string(ds.obs.num_classes));
    for (size_t j = 0; j < model_lfs.size(); ++j) {
        if (model_lfs[j].target_class != ds.lfs[j].target_class)
            throw std::invalid_argument("LF " + ds.lfs[j].lf_id + ": target class mismatch");
        if (model_lfs[j].is_continuous != ds.lfs[j].is_continuous)
            throw std::invalid_argument("LF " + ds.lfs[j].lf_id + ": continuity flag mismatch");
    }
}

std::vector<cage::LabelPosterior> model_posteriors(const cage::VariantParams& vp,
                                                   const std::vector<cage::LFSpec>& lfs,
                                                   const cage::ObservationSet& obs) {
    std::vector<cage::LabelPosterior> out;
    out.reserve(obs.num_instances);
    for (int i = 0; i < obs.num_instances; ++i)
        out.push_back(cage::variant_posterior(vp, lfs, obs.tau[i], obs.score[i]));
    return out;
}

int cmd_predict(const std::string& data_path, const std::string& model_path,
                const std::string& out_path, const std::string& cmdline) {
    std::ifstream in(model_path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open model file " + model_path);
    ordered_json mj;
    in >> mj;
    auto [vp, model_lfs] = cage::params_from_json(mj);
    auto ds = cage::load_dataset(data_path);
    check_model_matches(vp, model_lfs, ds);

    auto posteriors = model_posteriors(vp, model_lfs, ds.obs);
    atomic_write(out_path, cage::predictions_csv(posteriors));
    ordered_json cfg;
    cfg["model_file"] = model_path;
    cfg["variant"] = cage::to_string(vp.variant);
    write_manifest(out_path + ".manifest.json", {cmdline, cfg, 0, data_path, {out_path}});
    return kExitOk;
}

std::vector<cage::LabelPosterior> read_predictions_csv(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open predictions file " + path);
    std::string line;
    if (!std::getline(in, line) || line.rfind("instance_id,prediction", 0) != 0)
        throw std::invalid_argument("predictions file: bad header");
    std::vector<cage::LabelPosterior> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(row, cell, ',')) cells.push_back(cell);
        if (static_cast<int>(cells.size()) != 2 + num_classes)
            throw std::invalid_argument("predictions file: row with " +
                                        std::to_string(cells.size()) + " fields, expected " +
                                        std::to_string(2 + num_classes));
        cage::LabelPosterior p;
        p.prediction = std::stoi(cells[1]);
        for (int c = 0; c < num_classes; ++c) p.probs.push_back(std::stod(cells[2 + c]));
        out.push_back(std::move(p));
    }
    return out;
}

int cmd_eval(const std::string& data_path, const std::string& pred_path) {
    auto ds = cage::load_dataset(data_path);
    if (!ds.obs.has_gold()) throw std::invalid_argument("dataset has no gold labels");
    auto posteriors = read_predictions_csv(pred_path, ds.obs.num_classes);
    if (static_cast<int>(posteriors.size()) != ds.obs.num_instances)
        throw std::invalid_argument("predictions cover " + std::to_string(posteriors.size()) +
                                    " instances, dataset has " +
                                    std::to_string(ds.obs.num_instances));
    auto rep = cage::evaluate(posteriors, ds.obs.gold, ds.obs.num_classes, &ds.obs.tau);
    std::cout << cage::metric_report_to_json(rep).dump(2) << "\n";
    return kExitOk;
}

struct SynthArgs {
    std::string kind;
    std::string out_path;
    int m = 1000;
    int n = 6;
    int k = 2;
    int r = 3;
    double skew = 0.9;
    double epsilon = 0.1;
    double guide_t = 0.9;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a, const std::string& cmdline) {
    cage::Dataset ds;
    if (a.kind == "oracle") {
        std::vector<double> balance(a.k, 1.0 / a.k);
        ds = cage::gen_oracle(a.m, a.n, a.k, balance, a.seed, a.guide_t);
    } else if (a.kind == "twoset") {
        ds = cage::gen_twoset(a.m, a.r, a.n, a.skew, a.seed, a.guide_t);
    } else if (a.kind == "near-random") {
        ds = cage::gen_near_random(a.m, a.n, a.epsilon, a.seed, a.guide_t);
    } else {
        throw std::invalid_argument("unknown generator kind: " + a.kind);
    }
    atomic_write(a.out_path, cage::dataset_to_json(ds).dump(2) + "\n");
    ordered_json cfg;
    cfg["kind"] = a.kind;
    cfg["m"] = a.m;
    cfg["n"] = a.n;
    if (a.kind == "oracle") cfg["k"] = a.k;
    if (a.kind == "twoset") {
        cfg["r"] = a.r;
        cfg["skew"] = a.skew;
    }
    if (a.kind == "near-random") cfg["epsilon"] = a.epsilon;
    cfg["guide_t"] = a.guide_t;
    write_manifest(a.out_path + ".manifest.json", {cmdline, cfg, a.seed, "", {a.out_path}});
    return kExitOk;
}

int cmd_ablate(const TrainArgs& base, const std::string& suite, const std::string& cmdline) {
    auto ds = cage::load_dataset(base.data_path);
    struct Row {
        std::string variant;
        std::string guide_mode;
    };
    std::vector<Row> rows;
    if (suite == "guides") {
        for (const char* g : {"none", "sign_penalty", "data_guide", "kl_guide"})
            rows.push_back({"cage", g});
    } else if (suite == "potentials") {
        for (const char* v : {"alt_weight", "alt_threshold", "alt_sigmoid", "alt_logit",
                              "alt_half_gaussian", "cage"})
            rows.push_back({v, base.guide_mode});
    } else {
        throw std::invalid_argument("unknown suite: " + suite + " (expected guides|potentials)");
    }

    ordered_json out = ordered_json::array();
    int succeeded = 0;
    std::printf("%-18s %-13s %9s %9s %9s\n", "variant", "guide", "accuracy", "binaryF1",
                "microF1");
    for (const auto& row : rows) {
        TrainArgs a = base;
        a.variant = row.variant;
        a.guide_mode = row.guide_mode;
        ordered_json rec;
        rec["variant"] = row.variant;
        rec["guide_mode"] = row.guide_mode;
        try {
            auto cfg = to_config(a);
            auto [vp, report] = cage::fit(ds.obs, ds.lfs, cfg);
            if (report.diverged) throw std::runtime_error("training diverged");
            auto posteriors = model_posteriors(vp, ds.lfs, ds.obs);
            ordered_json f1_curve = ordered_json::array();
            for (const auto& e : report.epochs) f1_curve.push_back(e.train_f1);
            rec["train_f1_per_epoch"] = std::move(f1_curve);
            if (ds.obs.has_gold()) {
                auto m = cage::evaluate(posteriors, ds.obs.gold, ds.obs.num_classes, &ds.obs.tau);
                rec["metrics"] = cage::metric_report_to_json(m);
                std::printf("%-18s %-13s %9.4f %9.4f %9.4f\n", row.variant.c_str(),
                            row.guide_mode.c_str(), m.accuracy, m.binary_f1, m.micro_f1);
            } else {
                std::printf("%-18s %-13s %9s %9s %9s\n", row.variant.c_str(),
                            row.guide_mode.c_str(), "-", "-", "-");
            }
            rec["status"] = "ok";
            ++succeeded;
        } catch (const std::exception& e) {
            rec["status"] = "failed";
            rec["error"] = e.what();
            std::printf("%-18s %-13s    failed: %s\n", row.variant.c_str(),
                        row.guide_mode.c_str(), e.what());
        }
        out.push_back(std::move(rec));
    }

    fs::create_directories(base.out_dir);
    std::string table_path = (fs::path(base.out_dir) / "ablate.json").string();
    ordered_json doc;
    doc["suite"] = suite;
    doc["rows"] = std::move(out);
    atomic_write(table_path, doc.dump(2) + "\n");
    TrainArgs cfg_echo = base;
    write_manifest((fs::path(base.out_dir) / "manifest.json").string(),
                   {cmdline, config_json(to_config(cfg_echo)), base.seed, base.data_path,
                    {table_path}});
    return succeeded > 0 ? kExitOk : kExitInvalid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cage: probabilistic aggregation of labeling-function outputs"};
    app.require_subcommand(1);
    std::string cmdline = join_args(argc, argv);

    TrainArgs train_args;
    auto* train = app.add_subcommand("train", "train a model on a dataset");
    add_train_flags(train, train_args);
    train->add_option("--out", train_args.out_dir, "output directory")->required();

    std::string pr_data, pr_model, pr_out;
    auto* predict = app.add_subcommand("predict", "write posterior predictions as CSV");
    predict->add_option("--data", pr_data, "dataset JSON file")->required();
    predict->add_option("--model-file", pr_model, "trained params.json")->required();
    predict->add_option("--out", pr_out, "output CSV path")->required();

    std::string ev_data, ev_pred;
    auto* eval = app.add_subcommand("eval", "score predictions against gold labels");
    eval->add_option("--data", ev_data, "gold-bearing dataset JSON file")->required();
    eval->add_option("--predictions", ev_pred, "predictions CSV")->required();

    SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--kind", synth_args.kind, "oracle|twoset|near-random")->required();
    synth->add_option("--out", synth_args.out_path, "output dataset path")->required();
    synth->add_option("--m", synth_args.m, "number of instances");
    synth->add_option("--n", synth_args.n, "number of LFs");
    synth->add_option("--k", synth_args.k, "number of classes (oracle)");
    synth->add_option("--r", synth_args.r, "size of the class-1 LF set (twoset)");
    synth->add_option("--skew", synth_args.skew, "class-1 fraction (twoset)");
    synth->add_option("--epsilon", synth_args.epsilon, "accuracy margin (near-random)");
    synth->add_option("--guide-t", synth_args.guide_t, "quality guide written to the LFs");
    synth->add_option("--seed", synth_args.seed, "random seed");

    TrainArgs ablate_args;
    std::string suite;
    auto* ablate = app.add_subcommand("ablate", "run a built-in comparison suite");
    add_train_flags(ablate, ablate_args);
    ablate->add_option("--suite", suite, "guides|potentials")->required();
    ablate->add_option("--out", ablate_args.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (*train) return cmd_train(train_args, cmdline);
        if (*predict) return cmd_predict(pr_data, pr_model, pr_out, cmdline);
        if (*eval) return cmd_eval(ev_data, ev_pred);
        if (*synth) return cmd_synth(synth_args, cmdline);
        if (*ablate) return cmd_ablate(ablate_args, suite, cmdline);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalid;
    }
    return kExitInvalid;
}
