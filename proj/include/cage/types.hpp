#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace cage {

// Dense row-major matrix, rows = LFs, cols = classes (0-based internally).
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {}

    double& operator()(int r, int c) { return data_[static_cast<size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<size_t>(r) * cols_ + c]; }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// One labeling function's metadata. target_class is 1-based.
struct LFSpec {
    std::string lf_id;
    int target_class = 1;
    bool is_continuous = false;
    double quality_guide_t = 0.9;          // q_j^t, fraction of correct triggers
    std::optional<double> quality_guide_c; // q_j^c, mean score on correct triggers

    void validate(int num_classes) const {
        if (target_class < 1 || target_class > num_classes)
            throw std::invalid_argument("LFSpec " + lf_id + ": target_class out of range");
        if (!(quality_guide_t > 0.0 && quality_guide_t < 1.0))
            throw std::invalid_argument("LFSpec " + lf_id + ": quality_guide_t outside (0,1)");
        if (is_continuous) {
            if (!quality_guide_c || !(*quality_guide_c > 0.0 && *quality_guide_c < 1.0))
                throw std::invalid_argument("LFSpec " + lf_id + ": quality_guide_c missing or outside (0,1)");
        }
    }
};

// Per-instance triggers and scores for m instances x n LFs.
// tau[i][j] is 0 (abstain) or the LF's target class; score[i][j] is
// meaningful only where the LF is continuous and triggered.
struct ObservationSet {
    int num_instances = 0;
    int num_lfs = 0;
    int num_classes = 0;
    std::vector<std::vector<int>> tau;
    std::vector<std::vector<double>> score;
    std::vector<int> gold;  // empty, or one 1-based label per instance

    bool has_gold() const { return !gold.empty(); }
};

// theta: discrete potentials, rho: log of the Beta scale pi = exp(rho).
struct ModelParams {
    Matrix theta;  // n x K
    Matrix rho;    // n x K
};

struct LabelPosterior {
    std::vector<double> probs;  // length K, sums to 1
    int prediction = 1;         // 1-based argmax, ties to lowest index
};

enum class GuideMode { none, kl_guide, data_guide, sign_penalty };
enum class InitScheme { agreeing, all_ones, random_gaussian, disagreeing };
enum class Optimizer { sgd, adam };

enum class Variant {
    cage,
    snorkel,
    directed,
    alt_weight,
    alt_threshold,
    alt_sigmoid,
    alt_logit,
    alt_half_gaussian,
    majority,
};

struct TrainConfig {
    Variant variant = Variant::cage;
    GuideMode guide_mode = GuideMode::kl_guide;
    InitScheme init_scheme = InitScheme::all_ones;
    Optimizer optimizer = Optimizer::adam;
    double learning_rate = 0.01;
    int epochs = 100;
    int batch_size = 0;  // 0 = full batch
    double guide_weight = 1.0;
    std::uint64_t seed = 0;
    int threads = 1;

    void validate() const {
        if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 0) throw std::invalid_argument("batch_size must be >= 1 or 0 for full");
        if (!(guide_weight >= 0.0)) throw std::invalid_argument("guide_weight must be >= 0");
    }
};

struct EpochRecord {
    double objective = 0.0;
    double regularizer = 0.0;
    double train_accuracy = -1.0;  // -1 when no gold labels were supplied
    double train_f1 = -1.0;
    double seconds = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    ModelParams final_params;
    std::vector<double> final_prior_logits;  // directed variant only
    std::vector<double> final_theta_shared;  // snorkel variant only
    bool diverged = false;
};

struct MetricReport {
    std::vector<double> precision;  // per class
    std::vector<double> recall;
    std::vector<double> f1;
    double micro_f1 = 0.0;
    double accuracy = 0.0;
    double binary_f1 = 0.0;  // class 1 positive; equals f1[0]
    std::vector<std::vector<int>> confusion;  // K x K, rows = gold
    double coverage = 0.0;
};

inline std::string to_string(Variant v) {
    switch (v) {
        case Variant::cage: return "cage";
        case Variant::snorkel: return "snorkel";
        case Variant::directed: return "directed";
        case Variant::alt_weight: return "alt_weight";
        case Variant::alt_threshold: return "alt_threshold";
        case Variant::alt_sigmoid: return "alt_sigmoid";
        case Variant::alt_logit: return "alt_logit";
        case Variant::alt_half_gaussian: return "alt_half_gaussian";
        case Variant::majority: return "majority";
    }
    throw std::logic_error("unknown variant");
}

inline Variant variant_from_string(const std::string& s) {
    if (s == "cage") return Variant::cage;
    if (s == "snorkel") return Variant::snorkel;
    if (s == "directed") return Variant::directed;
    if (s == "alt_weight") return Variant::alt_weight;
    if (s == "alt_threshold") return Variant::alt_threshold;
    if (s == "alt_sigmoid") return Variant::alt_sigmoid;
    if (s == "alt_logit") return Variant::alt_logit;
    if (s == "alt_half_gaussian") return Variant::alt_half_gaussian;
    if (s == "majority") return Variant::majority;
    throw std::invalid_argument("unknown variant: " + s);
}

inline std::string to_string(GuideMode m) {
    switch (m) {
        case GuideMode::none: return "none";
        case GuideMode::kl_guide: return "kl_guide";
        case GuideMode::data_guide: return "data_guide";
        case GuideMode::sign_penalty: return "sign_penalty";
    }
    throw std::logic_error("unknown guide mode");
}

inline GuideMode guide_mode_from_string(const std::string& s) {
    if (s == "none") return GuideMode::none;
    if (s == "kl_guide") return GuideMode::kl_guide;
    if (s == "data_guide") return GuideMode::data_guide;
    if (s == "sign_penalty") return GuideMode::sign_penalty;
    throw std::invalid_argument("unknown guide mode: " + s);
}

inline std::string to_string(InitScheme s) {
    switch (s) {
        case InitScheme::agreeing: return "agreeing";
        case InitScheme::all_ones: return "all_ones";
        case InitScheme::random_gaussian: return "random_gaussian";
        case InitScheme::disagreeing: return "disagreeing";
    }
    throw std::logic_error("unknown init scheme");
}

inline InitScheme init_scheme_from_string(const std::string& s) {
    if (s == "agreeing") return InitScheme::agreeing;
    if (s == "all_ones") return InitScheme::all_ones;
    if (s == "random_gaussian") return InitScheme::random_gaussian;
    if (s == "disagreeing") return InitScheme::disagreeing;
    throw std::invalid_argument("unknown init scheme: " + s);
}

inline std::string to_string(Optimizer o) {
    return o == Optimizer::sgd ? "sgd" : "adam";
}

inline Optimizer optimizer_from_string(const std::string& s) {
    if (s == "sgd") return Optimizer::sgd;
    if (s == "adam") return Optimizer::adam;
    throw std::invalid_argument("unknown optimizer: " + s);
}

}  // namespace cage
