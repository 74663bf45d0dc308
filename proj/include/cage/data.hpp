#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "cage/math.hpp"
#include "cage/training.hpp"
#include "cage/types.hpp"
#include "cage/variants.hpp"

namespace cage {

using ordered_json = nlohmann::ordered_json;

struct Dataset {
    ObservationSet obs;
    std::vector<LFSpec> lfs;
};

namespace io_detail {

inline void reject_unknown_fields(const ordered_json& obj, std::initializer_list<const char*> allowed,
                                  const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed)
            if (it.key() == a) ok = true;
        if (!ok) throw std::invalid_argument("unknown field '" + it.key() + "' in " + where);
    }
}

inline ordered_json lf_to_json(const LFSpec& lf) {
    ordered_json j;
    j["lf_id"] = lf.lf_id;
    j["target_class"] = lf.target_class;
    j["is_continuous"] = lf.is_continuous;
    j["quality_guide_t"] = lf.quality_guide_t;
    if (lf.is_continuous) j["quality_guide_c"] = *lf.quality_guide_c;
    return j;
}

inline LFSpec lf_from_json(const ordered_json& j, int num_classes) {
    reject_unknown_fields(j, {"lf_id", "target_class", "is_continuous", "quality_guide_t",
                              "quality_guide_c"},
                          "lf record");
    LFSpec lf;
    lf.lf_id = j.at("lf_id").get<std::string>();
    lf.target_class = j.at("target_class").get<int>();
    lf.is_continuous = j.at("is_continuous").get<bool>();
    lf.quality_guide_t = j.at("quality_guide_t").get<double>();
    if (j.contains("quality_guide_c")) lf.quality_guide_c = j.at("quality_guide_c").get<double>();
    lf.validate(num_classes);
    return lf;
}

}  // namespace io_detail

inline ordered_json dataset_to_json(const Dataset& ds) {
    ordered_json j;
    j["schema_version"] = 1;
    j["task"] = ordered_json{{"num_classes", ds.obs.num_classes}};
    j["lfs"] = ordered_json::array();
    for (const auto& lf : ds.lfs) j["lfs"].push_back(io_detail::lf_to_json(lf));
    j["instances"] = ordered_json::array();
    for (int i = 0; i < ds.obs.num_instances; ++i) {
        ordered_json inst;
        inst["tau"] = ds.obs.tau[i];
        // scores are stored post-clamp, 0 where unused
        std::vector<double> scores(ds.obs.num_lfs, 0.0);
        for (int jf = 0; jf < ds.obs.num_lfs; ++jf)
            if (ds.lfs[jf].is_continuous && ds.obs.tau[i][jf] != 0)
                scores[jf] = ds.obs.score[i][jf];
        inst["score"] = scores;
        if (ds.obs.has_gold() && ds.obs.gold[i] != 0)
            inst["gold"] = ds.obs.gold[i];
        else
            inst["gold"] = nullptr;
        j["instances"].push_back(std::move(inst));
    }
    return j;
}

inline Dataset dataset_from_json(const ordered_json& j) {
    io_detail::reject_unknown_fields(j, {"schema_version", "task", "lfs", "instances"}, "dataset");
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
        throw std::invalid_argument("dataset: unsupported schema_version");
    io_detail::reject_unknown_fields(j.at("task"), {"num_classes"}, "task");
    Dataset ds;
    ds.obs.num_classes = j.at("task").at("num_classes").get<int>();
    if (ds.obs.num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
    for (const auto& lj : j.at("lfs"))
        ds.lfs.push_back(io_detail::lf_from_json(lj, ds.obs.num_classes));
    ds.obs.num_lfs = static_cast<int>(ds.lfs.size());

    bool any_gold = false;
    int i = 0;
    for (const auto& inst : j.at("instances")) {
        io_detail::reject_unknown_fields(inst, {"tau", "score", "gold"}, "instance");
        auto tau = inst.at("tau").get<std::vector<int>>();
        auto score = inst.at("score").get<std::vector<double>>();
        if (static_cast<int>(tau.size()) != ds.obs.num_lfs ||
            static_cast<int>(score.size()) != ds.obs.num_lfs)
            throw std::invalid_argument("dataset: instance " + std::to_string(i) +
                                        " row length does not match the number of LFs");
        for (int jf = 0; jf < ds.obs.num_lfs; ++jf) {
            if (tau[jf] != 0 && tau[jf] != ds.lfs[jf].target_class)
                throw std::invalid_argument(
                    "dataset: instance " + std::to_string(i) + ", LF " + ds.lfs[jf].lf_id +
                    ": tau " + std::to_string(tau[jf]) + " is neither 0 nor the target class");
            if (ds.lfs[jf].is_continuous && tau[jf] != 0) {
                if (!std::isfinite(score[jf]))
                    throw std::invalid_argument("dataset: instance " + std::to_string(i) +
                                                ", LF " + ds.lfs[jf].lf_id +
                                                ": score is not finite");
                score[jf] = clamp_unit_open(score[jf], kScoreClampEps);
            }
        }
        int gold = 0;
        if (inst.contains("gold") && !inst.at("gold").is_null()) {
            gold = inst.at("gold").get<int>();
            if (gold < 1 || gold > ds.obs.num_classes)
                throw std::invalid_argument("dataset: instance " + std::to_string(i) +
                                            ": gold label out of range");
            any_gold = true;
        }
        ds.obs.tau.push_back(std::move(tau));
        ds.obs.score.push_back(std::move(score));
        ds.obs.gold.push_back(gold);
        ++i;
    }
    ds.obs.num_instances = i;
    if (!any_gold) ds.obs.gold.clear();
    return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << dataset_to_json(ds).dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open dataset file " + path);
    ordered_json j;
    in >> j;
    return dataset_from_json(j);
}

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

namespace gen_detail {

inline int draw_class(const std::vector<double>& balance, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    double u = unif(rng);
    double acc = 0.0;
    for (size_t c = 0; c < balance.size(); ++c) {
        acc += balance[c];
        if (u < acc) return static_cast<int>(c) + 1;
    }
    return static_cast<int>(balance.size());
}

// uniform over nonempty subsets, as a trigger mask
inline std::vector<bool> nonempty_subset(int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<bool> mask(size);
    while (true) {
        bool any = false;
        for (int j = 0; j < size; ++j) {
            mask[j] = unif(rng) < 0.5;
            any = any || mask[j];
        }
        if (any) return mask;
    }
}

}  // namespace gen_detail

// Perfect-oracle construction: every LF whose target class equals the true
// label triggers, all others abstain. Classes assigned round-robin.
inline Dataset gen_oracle(int m, int n, int num_classes, const std::vector<double>& class_balance,
                          std::uint64_t seed, double guide_t = 0.9) {
    if (n < 1 || m < 1 || num_classes < 1) throw std::invalid_argument("gen_oracle: bad sizes");
    if (static_cast<int>(class_balance.size()) != num_classes)
        throw std::invalid_argument("gen_oracle: class_balance length mismatch");
    std::mt19937_64 rng(seed);
    Dataset ds;
    ds.obs.num_classes = num_classes;
    ds.obs.num_lfs = n;
    for (int j = 0; j < n; ++j)
        ds.lfs.push_back(LFSpec{"lf" + std::to_string(j), j % num_classes + 1, false, guide_t, {}});
    for (int i = 0; i < m; ++i) {
        int y = gen_detail::draw_class(class_balance, rng);
        std::vector<int> tau(n, 0);
        for (int j = 0; j < n; ++j)
            if (ds.lfs[j].target_class == y) tau[j] = y;
        ds.obs.tau.push_back(std::move(tau));
        ds.obs.score.emplace_back(n, 0.0);
        ds.obs.gold.push_back(y);
    }
    ds.obs.num_instances = m;
    return ds;
}

// Two-set construction: LFs 1..r label class 1, the rest label class 2.
// Class-1 instances trigger a nonempty subset of the first set only;
// class-2 instances trigger nonempty subsets of both sets.
inline Dataset gen_twoset(int m, int r, int n, double skew, std::uint64_t seed,
                          double guide_t = 0.9) {
    if (!(r >= 1 && r < n)) throw std::invalid_argument("gen_twoset: need 1 <= r < n");
    if (!(skew > 0.0 && skew < 1.0)) throw std::invalid_argument("gen_twoset: skew outside (0,1)");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Dataset ds;
    ds.obs.num_classes = 2;
    ds.obs.num_lfs = n;
    for (int j = 0; j < n; ++j)
        ds.lfs.push_back(LFSpec{"lf" + std::to_string(j), j < r ? 1 : 2, false, guide_t, {}});
    for (int i = 0; i < m; ++i) {
        int y = unif(rng) < skew ? 1 : 2;
        std::vector<int> tau(n, 0);
        auto s1 = gen_detail::nonempty_subset(r, rng);
        for (int j = 0; j < r; ++j)
            if (s1[j]) tau[j] = 1;
        if (y == 2) {
            auto s2 = gen_detail::nonempty_subset(n - r, rng);
            for (int j = r; j < n; ++j)
                if (s2[j - r]) tau[j] = 2;
        }
        ds.obs.tau.push_back(std::move(tau));
        ds.obs.score.emplace_back(n, 0.0);
        ds.obs.gold.push_back(y);
    }
    ds.obs.num_instances = m;
    return ds;
}

// Near-random labelers: each LF votes for the true class with probability
// 0.5 + epsilon and triggers exactly when its vote matches its own target
// class, so conditioned on triggering it agrees with gold at rate
// 0.5 + epsilon.
inline Dataset gen_near_random(int m, int n, double epsilon, std::uint64_t seed,
                               double guide_t = 0.9) {
    if (!(epsilon > 0.0 && epsilon <= 0.5))
        throw std::invalid_argument("gen_near_random: epsilon outside (0, 0.5]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Dataset ds;
    ds.obs.num_classes = 2;
    ds.obs.num_lfs = n;
    for (int j = 0; j < n; ++j)
        ds.lfs.push_back(LFSpec{"lf" + std::to_string(j), j % 2 + 1, false, guide_t, {}});
    for (int i = 0; i < m; ++i) {
        int y = unif(rng) < 0.5 ? 1 : 2;
        std::vector<int> tau(n, 0);
        for (int j = 0; j < n; ++j) {
            int vote = unif(rng) < 0.5 + epsilon ? y : 3 - y;
            if (vote == ds.lfs[j].target_class) tau[j] = vote;
        }
        ds.obs.tau.push_back(std::move(tau));
        ds.obs.score.emplace_back(n, 0.0);
        ds.obs.gold.push_back(y);
    }
    ds.obs.num_instances = m;
    return ds;
}

// Gaussian-distorted quality guides, clamped to [0.01, 0.99].
inline std::vector<LFSpec> distort_guides(std::vector<LFSpec> lfs,
                                          const std::vector<double>& true_accuracies, double sigma,
                                          std::uint64_t seed) {
    if (lfs.size() != true_accuracies.size())
        throw std::invalid_argument("distort_guides: accuracy list length mismatch");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (size_t j = 0; j < lfs.size(); ++j) {
        if (!(true_accuracies[j] > 0.0 && true_accuracies[j] < 1.0))
            throw std::invalid_argument("distort_guides: true accuracy outside (0,1)");
        double q = true_accuracies[j] + (sigma > 0.0 ? noise(rng) : 0.0);
        lfs[j].quality_guide_t = std::clamp(q, 0.01, 0.99);
    }
    return lfs;
}

// Empirical per-LF trigger accuracy against gold labels; LFs that never
// trigger get 0.5.
inline std::vector<double> lf_trigger_accuracies(const Dataset& ds) {
    if (!ds.obs.has_gold())
        throw std::invalid_argument("lf_trigger_accuracies: dataset has no gold labels");
    std::vector<double> acc(ds.lfs.size(), 0.5);
    for (size_t j = 0; j < ds.lfs.size(); ++j) {
        long trig = 0, agree = 0;
        for (int i = 0; i < ds.obs.num_instances; ++i) {
            if (ds.obs.tau[i][j] == 0 || ds.obs.gold[i] == 0) continue;
            ++trig;
            if (ds.obs.gold[i] == ds.lfs[j].target_class) ++agree;
        }
        if (trig > 0) acc[j] = static_cast<double>(agree) / trig;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Model / report serialization
// ---------------------------------------------------------------------------

inline ordered_json params_to_json(const VariantParams& vp, const std::vector<LFSpec>& lfs) {
    ordered_json j;
    j["schema_version"] = 1;
    j["variant"] = to_string(vp.variant);
    j["num_classes"] = vp.num_classes;
    j["lfs"] = ordered_json::array();
    for (const auto& lf : lfs) j["lfs"].push_back(io_detail::lf_to_json(lf));
    auto matrix_rows = [](const Matrix& m) {
        ordered_json rows = ordered_json::array();
        for (int r = 0; r < m.rows(); ++r) {
            ordered_json row = ordered_json::array();
            for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(std::move(row));
        }
        return rows;
    };
    if (vp.variant == Variant::snorkel) {
        j["theta_shared"] = vp.theta_shared;
    } else {
        j["theta"] = matrix_rows(vp.core.theta);
        j["rho"] = matrix_rows(vp.core.rho);
        if (vp.variant == Variant::directed) j["prior_logits"] = vp.prior_logits;
    }
    return j;
}

inline std::pair<VariantParams, std::vector<LFSpec>> params_from_json(const ordered_json& j) {
    if (!j.contains("schema_version") || j.at("schema_version").get<int>() != 1)
        throw std::invalid_argument("model file: unsupported schema_version");
    VariantParams vp;
    vp.variant = variant_from_string(j.at("variant").get<std::string>());
    vp.num_classes = j.at("num_classes").get<int>();
    std::vector<LFSpec> lfs;
    for (const auto& lj : j.at("lfs")) lfs.push_back(io_detail::lf_from_json(lj, vp.num_classes));
    const int n = static_cast<int>(lfs.size());
    auto matrix_from = [&](const ordered_json& rows) {
        Matrix m(static_cast<int>(rows.size()), vp.num_classes);
        for (int r = 0; r < m.rows(); ++r)
            for (int c = 0; c < m.cols(); ++c) m(r, c) = rows.at(r).at(c).get<double>();
        return m;
    };
    if (vp.variant == Variant::snorkel) {
        vp.theta_shared = j.at("theta_shared").get<std::vector<double>>();
        if (static_cast<int>(vp.theta_shared.size()) != n)
            throw std::invalid_argument("model file: theta_shared length mismatch");
    } else {
        vp.core.theta = matrix_from(j.at("theta"));
        vp.core.rho = matrix_from(j.at("rho"));
        if (vp.core.theta.rows() != n || vp.core.rho.rows() != n)
            throw std::invalid_argument("model file: parameter row count mismatch");
        if (vp.variant == Variant::directed)
            vp.prior_logits = j.at("prior_logits").get<std::vector<double>>();
    }
    return {std::move(vp), std::move(lfs)};
}

inline ordered_json report_to_json(const TrainReport& report, Variant variant, GuideMode mode) {
    ordered_json j;
    j["schema_version"] = 1;
    j["variant"] = to_string(variant);
    j["guide_mode"] = to_string(mode);
    j["num_epochs"] = report.epochs.size();
    j["diverged"] = report.diverged;
    ordered_json obj = ordered_json::array(), reg = ordered_json::array(),
                 acc = ordered_json::array(), f1 = ordered_json::array();
    for (const auto& e : report.epochs) {
        obj.push_back(e.objective);
        reg.push_back(e.regularizer);
        acc.push_back(e.train_accuracy);
        f1.push_back(e.train_f1);
    }
    j["objective"] = std::move(obj);
    j["regularizer"] = std::move(reg);
    j["train_accuracy"] = std::move(acc);
    j["train_f1"] = std::move(f1);
    return j;
}

inline ordered_json metric_report_to_json(const MetricReport& rep) {
    ordered_json j;
    j["precision"] = rep.precision;
    j["recall"] = rep.recall;
    j["f1"] = rep.f1;
    j["binary_f1"] = rep.binary_f1;
    j["micro_f1"] = rep.micro_f1;
    j["accuracy"] = rep.accuracy;
    j["coverage"] = rep.coverage;
    j["confusion"] = rep.confusion;
    return j;
}

inline std::string predictions_csv(const std::vector<LabelPosterior>& posteriors) {
    std::ostringstream out;
    int K = posteriors.empty() ? 0 : static_cast<int>(posteriors[0].probs.size());
    out << "instance_id,prediction";
    for (int c = 1; c <= K; ++c) out << ",p_" << c;
    out << "\n";
    out.setf(std::ios::fmtflags(0), std::ios::floatfield);
    out.precision(17);
    for (size_t i = 0; i < posteriors.size(); ++i) {
        out << i << "," << posteriors[i].prediction;
        for (double p : posteriors[i].probs) out << "," << p;
        out << "\n";
    }
    return out.str();
}

// FNV-1a 64-bit content digest for run manifests.
inline std::string file_digest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open " + path + " for hashing");
    std::uint64_t h = 1469598103934665603ULL;
    char buf[1 << 14];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        for (std::streamsize k = 0; k < in.gcount(); ++k) {
            h ^= static_cast<unsigned char>(buf[k]);
            h *= 1099511628211ULL;
        }
        if (!in) break;
    }
    std::ostringstream hex;
    hex << std::hex << h;
    return "fnv1a64:" + hex.str();
}

}  // namespace cage
